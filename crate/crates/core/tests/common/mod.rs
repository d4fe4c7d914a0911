//! Reference implementations shared by the integration tests. Each one is
//! written from the textbook definition and avoids the library's code paths.
#![allow(dead_code, clippy::needless_range_loop, clippy::too_many_arguments)]

use rand::Rng;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use trafficlens::config::ExtractionConfig;
use trafficlens::dataset::LabeledData;
use trafficlens::evalkit::{generate_windows, SynthProfile};
use trafficlens::pipeline::featurize;

/// Polynomial product of two FIR filters.
fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `taps` with `step - 1` zeros inserted between neighbours.
fn upsample(taps: &[f64], step: usize) -> Vec<f64> {
    let mut out = vec![0.0; (taps.len() - 1) * step + 1];
    for (i, t) in taps.iter().enumerate() {
        out[i * step] = *t;
    }
    out
}

/// Equivalent filter of detail band `k`: h↑1 * h↑2 * … * h↑2^(k-1) * g↑2^k.
pub fn atrous_detail_filter(k: usize) -> Vec<f64> {
    let h = [FRAC_1_SQRT_2, FRAC_1_SQRT_2];
    let g = [FRAC_1_SQRT_2, -FRAC_1_SQRT_2];
    let mut f = vec![1.0];
    for level in 0..k {
        f = convolve(&f, &upsample(&h, 1 << level));
    }
    convolve(&f, &upsample(&g, 1 << k))
}

/// Direct circular convolution of the signal with every band filter.
pub fn atrous_oracle(signal: &[f64], num_bands: usize) -> Vec<Vec<f64>> {
    let n = signal.len();
    (0..num_bands)
        .map(|k| {
            let f = atrous_detail_filter(k);
            (0..n)
                .map(|t| {
                    f.iter()
                        .enumerate()
                        .map(|(j, c)| c * signal[(t + n * f.len() - j) % n])
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let factor = m[row][col];
                if factor != 0.0 {
                    for j in 0..2 * n {
                        m[row][j] -= factor * m[col][j];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// `(x-μ)ᵀ A⁻¹ (x-μ)` with the inverse given explicitly.
pub fn quadratic_form(inv: &[Vec<f64>], x: &[f64], mean: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let mut s = 0.0;
    for i in 0..d.len() {
        for j in 0..d.len() {
            s += d[i] * inv[i][j] * d[j];
        }
    }
    s
}

/// Random symmetric positive-definite matrix `B Bᵀ + δ I`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    let b: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let delta = rng.random_range(0.05..1.0);
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let dot: f64 = (0..n).map(|k| b[i][k] * b[j][k]).sum();
                    dot + if i == j { delta } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `∫_r^∞` of the Gaussian KDE density, by quadrature. Beyond 40 bandwidths
/// past the largest point the density is below f64 resolution.
pub fn kde_tail_quadrature(points: &[f64], h: f64, r: f64) -> f64 {
    let n = points.len() as f64;
    let density = |x: f64| {
        points
            .iter()
            .map(|p| (-0.5 * ((x - p) / h).powi(2)).exp())
            .sum::<f64>()
            / (n * h * (2.0 * PI).sqrt())
    };
    let hi = points.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 40.0 * h;
    if r >= hi {
        return 0.0;
    }
    // Split at the kernel centres so no subinterval straddles a narrow peak.
    let mut knots: Vec<f64> = points
        .iter()
        .copied()
        .filter(|&p| p > r && p < hi)
        .collect();
    knots.push(r);
    knots.push(hi);
    knots.sort_by(f64::total_cmp);
    knots
        .windows(2)
        .map(|w| integrate(&density, w[0], w[1], 1e-14))
        .sum()
}

/// Element-wise covariance by direct summation: element (i, j) is
/// `Σ (x_i − m_i)(x_j − m_j) / n`.
pub fn scatter_oracle(rows: &[&Vec<f64>], mean: &[f64], n: f64) -> Vec<Vec<f64>> {
    let d = mean.len();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for r in rows {
                s += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
            out[i][j] = s / n;
        }
    }
    out
}

pub fn mean_oracle(rows: &[&Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    (0..d)
        .map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / rows.len() as f64)
        .collect()
}

/// Windows of every profile, featurized and labeled.
pub fn synthetic_dataset(
    profiles: &[SynthProfile],
    per_class: usize,
    extraction: &ExtractionConfig,
    seed: u64,
) -> LabeledData {
    let windows = profiles
        .iter()
        .flat_map(|p| generate_windows(p, per_class, &extraction.window, seed))
        .collect();
    featurize(windows, extraction).unwrap().labeled().unwrap()
}

/// Largest relative error between the analytic episode-loss gradient and
/// central differences (h = 1e-5) over every parameter of a tiny
/// 8→4→4→4→4 network, with dropout off. Errors are relative to
/// `max(|analytic|, |numeric|, 1e-6)`.
pub fn gradient_check(seed: u64) -> f64 {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use trafficlens::protonet::{episode_gradient, episode_loss, Episode, Network};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(&[8, 4, 4, 4, 4], 0.0, &mut rng);
    for layer in net.layers_mut() {
        layer
            .bias
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.2..0.2));
    }
    let classes = 3;
    let per = 6;
    let features: Vec<Vec<f64>> = (0..classes * per)
        .map(|i| {
            (0..8)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    x + (i / per) as f64
                })
                .collect()
        })
        .collect();
    let labels: Vec<usize> = (0..classes * per).map(|i| i / per).collect();
    let episode = Episode {
        support: (0..classes).map(|k| vec![k * per, k * per + 1]).collect(),
        query: (0..classes)
            .flat_map(|k| k * per + 2..(k + 1) * per)
            .collect(),
    };
    let (_, grads) = episode_gradient::<ChaCha8Rng>(&net, &features, &labels, &episode, None);

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut check = |analytic: f64, perturb: &dyn Fn(&mut Network, f64)| {
        let mut plus = net.clone();
        perturb(&mut plus, h);
        let mut minus = net.clone();
        perturb(&mut minus, -h);
        let numeric = (episode_loss(&plus, &features, &labels, &episode)
            - episode_loss(&minus, &features, &labels, &episode))
            / (2.0 * h);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    };
    for (l, g) in grads.iter().enumerate() {
        for i in 0..g.weights.nrows() {
            for j in 0..g.weights.ncols() {
                check(g.weights[(i, j)], &|n, d| {
                    n.layers_mut()[l].weights[(i, j)] += d
                });
            }
        }
        for i in 0..g.bias.len() {
            check(g.bias[i], &|n, d| n.layers_mut()[l].bias[i] += d);
        }
    }
    worst
}
