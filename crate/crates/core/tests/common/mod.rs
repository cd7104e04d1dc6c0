//! Random instance generators shared by the property and acceptance suites.
#![allow(dead_code)]

use nalgebra::DMatrix;
use qsr::lanczos::DenseSymmetric;
use qsr::rules::{HornRule, Literal, RuleSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Polynomial product of coefficient vectors (ascending powers).
pub fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

/// `Q(s) = Π (1 − s/s_k)` with `n` roots of modulus in `[r_lo, r_hi]`, complex
/// ones in conjugate pairs. Returns the coefficients `1, q_1..q_n`.
pub fn random_denominator(rng: &mut ChaCha8Rng, n: usize, r_lo: f64, r_hi: f64) -> Vec<f64> {
    let mut q = vec![1.0];
    let mut left = n;
    while left > 0 {
        let r = rng.random_range(r_lo..r_hi);
        if left >= 2 && rng.random_bool(0.5) {
            let th = rng.random_range(0.2..std::f64::consts::PI - 0.2);
            // (1 − s/z)(1 − s/z̄) = 1 − 2 cos θ / r · s + s² / r²
            q = poly_mul(&q, &[1.0, -2.0 * th.cos() / r, 1.0 / (r * r)]);
            left -= 2;
        } else {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            q = poly_mul(&q, &[1.0, -1.0 / (sign * r)]);
            left -= 1;
        }
    }
    q
}

/// Taylor coefficients of `P/Q` by long division (`Q[0] = 1`).
pub fn series_of(p: &[f64], q: &[f64], len: usize) -> Vec<f64> {
    let mut c: Vec<f64> = Vec::with_capacity(len);
    for k in 0..len {
        let mut v = p.get(k).copied().unwrap_or(0.0);
        for j in 1..q.len().min(k + 1) {
            v -= q[j] * c[k - j];
        }
        c.push(v);
    }
    c
}

/// Smallest-to-largest singular value ratio of the Padé Toeplitz block.
pub fn toeplitz_condition(c: &[f64], m: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let at = |i: isize| if i < 0 { 0.0 } else { c[i as usize] };
    let t = faer::Mat::from_fn(n, n, |i, j| at(m as isize + i as isize - j as isize));
    let sv = t.singular_values().expect("svd");
    sv[0] / sv[n - 1]
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| normal(rng));
    (&g + g.transpose()) * 0.5
}

pub fn dense(a: &DMatrix<f64>) -> DenseSymmetric {
    DenseSymmetric::from_rows((0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()).unwrap()
}

pub fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Random program over `p0..p{preds-1}` that is stratified by construction:
/// predicates are split into levels, positive body literals stay at or below
/// the head's level and negated ones strictly below.
pub fn random_program(rng: &mut ChaCha8Rng, preds: usize, rules: usize, allow_negation: bool) -> RuleSet {
    let levels = 3;
    let level = |p: usize| p * levels / preds;
    let mut out = Vec::new();
    for r in 0..rules {
        let head = rng.random_range(0..preds);
        let body_len = rng.random_range(1..=3usize);
        let mut body: Vec<Literal> = Vec::new();
        for _ in 0..body_len * 4 {
            if body.len() == body_len {
                break;
            }
            let p = rng.random_range(0..preds);
            let negate = allow_negation && level(p) < level(head) && rng.random_bool(0.4);
            if level(p) > level(head) || body.iter().any(|l| l.name == format!("p{p}")) {
                continue;
            }
            let name = format!("p{p}");
            body.push(if negate { Literal::neg(&name) } else { Literal::pos(&name) });
        }
        if body.is_empty() {
            body.push(Literal::pos(&format!("p{}", rng.random_range(0..preds).min(head))));
        }
        out.push(HornRule::new(&format!("r{r}"), body, &format!("p{head}")).unwrap());
    }
    RuleSet::new(out).unwrap()
}

pub fn random_facts(rng: &mut ChaCha8Rng, preds: usize) -> Vec<String> {
    (0..preds).filter(|_| rng.random_bool(0.3)).map(|p| format!("p{p}")).collect()
}

/// `Σ A_k e^{−γ_k t} cos(ω_k t)` sampled at `t = i·dt`.
pub fn damped_modes(modes: &[(f64, f64, f64)], n: usize, dt: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            modes.iter().map(|&(w, g, a)| a * (-g * t).exp() * (w * t).cos()).sum()
        })
        .collect()
}
