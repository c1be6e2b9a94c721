#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use ydg_core::dataset::Normalizer;
use ydg_core::diffusion::{q_sample, NoiseSchedule};
use ydg_core::nn::Mlp;
use ydg_core::sampler::{derive_stream, Stream};

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Stream) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Scalar loss `sum(proj * net(x))` used to probe gradients.
fn projected_loss(net: &Mlp, x: &Array2<f64>, proj: &Array2<f64>) -> f64 {
    (net.predict(x.view()).unwrap() * proj).sum()
}

/// Worst relative disagreement between backprop and central differences
/// over every parameter and input of a random network.
pub fn gradcheck_max_rel_err(seed: u64) -> f64 {
    let mut rng = derive_stream(seed, 0);
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(2..=8)];
    for _ in 0..depth {
        sizes.push(rng.random_range(3..=12));
    }
    sizes.push(rng.random_range(1..=4));
    let mut net = Mlp::new(&sizes, &mut rng).unwrap();
    // larger weights so SiLU curvature matters
    for l in &mut net.layers {
        l.weight.mapv_inplace(|w| 2.0 * w);
        l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let batch = 3;
    let x = gaussian_matrix(batch, sizes[0], &mut rng);
    let proj = gaussian_matrix(batch, *sizes.last().unwrap(), &mut rng);

    let (_, cache) = net.forward(x.view()).unwrap();
    let grads = net.backward(&cache, proj.view()).unwrap();

    let h = 1e-6;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    for li in 0..net.layers.len() {
        let (rows, cols) = net.layers[li].weight.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = net.layers[li].weight[(r, c)];
                net.layers[li].weight[(r, c)] = orig + h;
                let up = projected_loss(&net, &x, &proj);
                net.layers[li].weight[(r, c)] = orig - h;
                let down = projected_loss(&net, &x, &proj);
                net.layers[li].weight[(r, c)] = orig;
                worst = worst.max(rel(grads.layers[li].weight[(r, c)], (up - down) / (2.0 * h)));
            }
            let orig = net.layers[li].bias[r];
            net.layers[li].bias[r] = orig + h;
            let up = projected_loss(&net, &x, &proj);
            net.layers[li].bias[r] = orig - h;
            let down = projected_loss(&net, &x, &proj);
            net.layers[li].bias[r] = orig;
            worst = worst.max(rel(grads.layers[li].bias[r], (up - down) / (2.0 * h)));
        }
    }
    let mut xp = x.clone();
    for b in 0..batch {
        for i in 0..sizes[0] {
            let orig = xp[(b, i)];
            xp[(b, i)] = orig + h;
            let up = projected_loss(&net, &xp, &proj);
            xp[(b, i)] = orig - h;
            let down = projected_loss(&net, &xp, &proj);
            xp[(b, i)] = orig;
            worst = worst.max(rel(grads.input[(b, i)], (up - down) / (2.0 * h)));
        }
    }
    worst
}

/// Largest standardized error of the Monte-Carlo mean and variance of
/// `q_sample` at step `t`, per coordinate, against the closed form.
/// Returns `(max |z_mean|, max |z_var|)`.
pub fn forward_moment_z(sched: &NoiseSchedule, t: usize, n: usize, seed: u64) -> (f64, f64) {
    let x0 = [1.5, -0.7, 0.0, 1.0, 2.5, -2.0];
    let mut rng = derive_stream(seed, t as u64);
    let mut sum = [0.0; 6];
    let mut sum_sq = [0.0; 6];
    let mut noise = [0.0; 6];
    for _ in 0..n {
        for e in noise.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let xt = q_sample(&x0, t, &noise, sched);
        for d in 0..6 {
            sum[d] += xt[d];
            sum_sq[d] += xt[d] * xt[d];
        }
    }
    let ab = sched.alpha_bar_at(t);
    let var = 1.0 - ab;
    let nf = n as f64;
    let (mut zm, mut zv) = (0.0_f64, 0.0_f64);
    for d in 0..6 {
        let mean = sum[d] / nf;
        let sample_var = (sum_sq[d] - nf * mean * mean) / (nf - 1.0);
        zm = zm.max((mean - ab.sqrt() * x0[d]).abs() / (var / nf).sqrt());
        // Gaussian: Var(sample variance) = 2 sigma^4 / (n - 1)
        zv = zv.max((sample_var - var).abs() / (var * (2.0 / (nf - 1.0)).sqrt()));
    }
    (zm, zv)
}

/// Worst `|invert(apply(v)) - v| / max(1, |v|)` over `n` random vectors
/// spread around the fitted range of each feature (frozen ones included).
pub fn normalizer_roundtrip_err(norm: &Normalizer, n: usize, seed: u64) -> f64 {
    let mut rng = derive_stream(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let v: Vec<f64> = norm
            .features
            .iter()
            .map(|f| {
                let z: f64 = rng.sample(StandardNormal);
                let raw = if f.frozen { f.mean + z } else { f.mean + 3.0 * f.std * z };
                if f.apply_log { raw.exp_m1().abs() } else { raw }
            })
            .collect();
        let back = norm.invert(&norm.apply(&v).unwrap()).unwrap();
        for (a, b) in v.iter().zip(&back) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    worst
}
