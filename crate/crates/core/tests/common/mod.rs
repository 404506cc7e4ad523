//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use icrf::IntervalObservation;
use rand::Rng;

/// Maximal intersections `(p, q]` computed directly from the definition: `p`
/// is a left endpoint, `q` a right endpoint, and no endpoint of either kind
/// lies strictly between them.
pub fn turnbull_oracle(obs: &[IntervalObservation]) -> Vec<(f64, f64)> {
    let lefts: Vec<f64> = obs.iter().map(|o| o.left).collect();
    let rights: Vec<f64> = obs.iter().map(|o| o.right).collect();
    let mut out = Vec::new();
    for &p in &lefts {
        for &q in &rights {
            if p < q
                && !lefts.iter().any(|&l| p < l && l < q)
                && !rights.iter().any(|&r| p < r && r < q)
                && !out.contains(&(p, q))
            {
                out.push((p, q));
            }
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// `Σ w_i log Σ_{(p,q] ⊂ (L_i,R_i]} m`, with containment checked from the
/// endpoints.
pub fn loglik_oracle(obs: &[IntervalObservation], weights: &[f64], support: &[(f64, f64)], masses: &[f64]) -> f64 {
    obs.iter()
        .zip(weights)
        .map(|(o, &w)| {
            let s: f64 = support
                .iter()
                .zip(masses)
                .filter(|((p, q), _)| o.left <= *p && *q <= o.right)
                .map(|(_, m)| m)
                .sum();
            w * s.ln()
        })
        .sum()
}

fn compositions(units: usize, parts: usize, prefix: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
    if parts == 1 {
        prefix.push(units);
        visit(prefix);
        prefix.pop();
        return;
    }
    for k in 0..=units {
        prefix.push(k);
        compositions(units - k, parts - 1, prefix, visit);
        prefix.pop();
    }
}

/// Grid units per Turnbull-count; step 0.01 up to four intervals, coarser
/// above so a single instance stays under a second.
fn grid_units(m: usize) -> usize {
    match m {
        0..=4 => 100,
        5 => 50,
        _ => 40,
    }
}

/// Maximizes `f` along `m ← m + t(e_a − e_b)` by golden-section search.
fn line_max(f: &dyn Fn(&[f64]) -> f64, m: &mut [f64], a: usize, b: usize) -> f64 {
    let (lo, hi) = (-m[a], m[b]);
    let eval = |t: f64, m: &[f64]| {
        let mut x = m.to_vec();
        x[a] += t;
        x[b] -= t;
        f(&x)
    };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x0, mut x1) = (lo, hi);
    for _ in 0..80 {
        let c = x1 - g * (x1 - x0);
        let d = x0 + g * (x1 - x0);
        if eval(c, m) >= eval(d, m) {
            x1 = d;
        } else {
            x0 = c;
        }
    }
    let t = 0.5 * (x0 + x1);
    let base = f(m);
    let cand = eval(t, m);
    if cand > base {
        m[a] += t;
        m[b] -= t;
        cand
    } else {
        base
    }
}

/// Brute-force maximum of the log-likelihood over the mass simplex on the
/// oracle's Turnbull intervals: exhaustive grid search, then pairwise
/// exact line searches from the best grid point.
pub fn brute_force_npmle(obs: &[IntervalObservation], weights: &[f64]) -> f64 {
    let support = turnbull_oracle(obs);
    let m = support.len();
    let f = |x: &[f64]| loglik_oracle(obs, weights, &support, x);
    let units = grid_units(m);
    let mut best = f64::NEG_INFINITY;
    let mut best_x = vec![1.0 / m as f64; m];
    compositions(units, m, &mut Vec::with_capacity(m), &mut |c| {
        let x: Vec<f64> = c.iter().map(|&k| k as f64 / units as f64).collect();
        let v = f(&x);
        if v > best {
            best = v;
            best_x = x;
        }
    });
    let mut x = best_x;
    let mut value = best;
    for _ in 0..500 {
        let before = value;
        for a in 0..m {
            for b in 0..m {
                if a != b {
                    value = line_max(&f, &mut x, a, b);
                }
            }
        }
        if value - before < 1e-13 {
            break;
        }
    }
    value
}

/// `#{T_i > t} / n`.
pub fn ecdf_survival(times: &[f64], t: f64) -> f64 {
    times.iter().filter(|&&x| x > t).count() as f64 / times.len() as f64
}

/// Mann-Whitney `θ̂ = P(X < Y) + ½P(X = Y)` over all pairs.
pub fn wilcoxon_theta(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for &a in x {
        for &b in y {
            s += if a < b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (x.len() * y.len()) as f64
}

/// Risk-table log-rank statistic `Σ(d₁ − Y₁D/Y) / √Σ Y₁Y₂D(Y−D)/Y³` for
/// uncensored samples.
pub fn logrank_y3(x: &[f64], y: &[f64]) -> f64 {
    let mut times: Vec<f64> = x.iter().chain(y).copied().collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let (mut u, mut v) = (0.0, 0.0);
    for &t in &times {
        let y1 = x.iter().filter(|&&a| a >= t).count() as f64;
        let y2 = y.iter().filter(|&&b| b >= t).count() as f64;
        let d1 = x.iter().filter(|&&a| a == t).count() as f64;
        let d2 = y.iter().filter(|&&b| b == t).count() as f64;
        let (yy, d) = (y1 + y2, d1 + d2);
        u += d1 - y1 * d / yy;
        v += y1 * y2 * d * (yy - d) / (yy * yy * yy);
    }
    u / v.sqrt()
}

/// A small random interval-censored sample: integer-valued endpoints (many
/// ties) or continuous ones, with occasional right censoring.
pub fn random_intervals<R: Rng>(rng: &mut R, n: usize, integer: bool) -> Vec<IntervalObservation> {
    (0..n)
        .map(|_| {
            let (l, r) = if integer {
                let l = rng.random_range(0..5) as f64;
                let r = if rng.random_bool(0.2) { f64::INFINITY } else { l + rng.random_range(1..4) as f64 };
                (l, r)
            } else {
                let l = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..4.0) };
                let r = if rng.random_bool(0.2) { f64::INFINITY } else { l + rng.random_range(0.05..2.5) };
                (l, r)
            };
            IntervalObservation::new(l, r, vec![]).unwrap()
        })
        .collect()
}

/// Exact-time sample on `(0, τ)`; integer-grid draws create ties.
pub fn random_exact_times<R: Rng>(rng: &mut R, n: usize, tau: f64, ties: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if ties {
                rng.random_range(1..10) as f64 * tau / 10.0
            } else {
                rng.random_range(0.01..tau * 0.99)
            }
        })
        .collect()
}
