//! Padé `[m/n]` approximants `P_m(s) / (1 + b_1 s + … + b_n s^n)` built from
//! power-series coefficients, with pole/residue extraction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};

/// A moment system whose least-squares residual exceeds this fraction of
/// `‖c‖` is rejected.
pub const ILL_CONDITIONED_RTOL: f64 = 1e-6;
/// Relative cut-off for singular values in the least-squares denominator solve.
const MOMENT_RCOND: f64 = 1e-13;
/// Evaluation closer than this to a denominator root is refused.
pub const POLE_PROXIMITY: f64 = 1e-12;
/// Roots closer than this (relative to `max(1, |s|)`) are reported as a
/// multiple pole. A double root computed in floating point splits by about
/// `sqrt(ε)`, so the cluster radius sits above that.
pub const MULTIPLE_POLE_TOL: f64 = 1e-6;

/// Power-series coefficients `c_0, c_1, …`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesCoeffs(Vec<f64>);

impl SeriesCoeffs {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("coefficient {i} is not finite")));
        }
        Ok(SeriesCoeffs(c))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn at(&self, k: isize) -> f64 {
        if k < 0 {
            0.0
        } else {
            self.0[k as usize]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalApprox {
    pub m: usize,
    pub n: usize,
    /// Numerator `a_0..a_m`.
    pub a: Vec<f64>,
    /// Denominator `b_1..b_n`; `b_0 = 1` is implicit.
    pub b: Vec<f64>,
}

impl RationalApprox {
    /// Denominator coefficients including the leading `1`.
    pub fn denominator(&self) -> Vec<f64> {
        std::iter::once(1.0).chain(self.b.iter().copied()).collect()
    }

    /// First `len` Taylor coefficients of `P/Q`.
    pub fn taylor(&self, len: usize) -> Vec<f64> {
        let mut d = Vec::with_capacity(len);
        for k in 0..len {
            let mut v = self.a.get(k).copied().unwrap_or(0.0);
            for j in 1..=self.n.min(k) {
                v -= self.b[j - 1] * d[k - j];
            }
            d.push(v);
        }
        d
    }

    /// `‖taylor(len c) − c‖` over every supplied coefficient.
    pub fn moment_residual(&self, c: &SeriesCoeffs) -> f64 {
        self.taylor(c.len())
            .iter()
            .zip(c.as_slice())
            .map(|(t, c)| (t - c) * (t - c))
            .sum::<f64>()
            .sqrt()
    }
}

/// Solves the Toeplitz moment system for `b`, then forms `a` by convolution.
pub fn fit_pade(c: &SeriesCoeffs, m: usize, n: usize) -> Result<RationalApprox> {
    if c.len() < m + n + 1 {
        return Err(Error::Argument(format!(
            "[{m}/{n}] needs {} coefficients, got {}",
            m + n + 1,
            c.len()
        )));
    }
    let b = if n == 0 {
        Vec::new()
    } else {
        let mi = m as isize;
        let sys = DMatrix::from_fn(n, n, |i, j| c.at(mi + i as isize - j as isize));
        let rhs = DVector::from_fn(n, |i, _| -c.at(mi + i as isize + 1));
        let sol = linalg::lstsq(sys.clone(), &rhs, MOMENT_RCOND)?;
        let residual = (&sys * &sol - &rhs).norm();
        if residual > ILL_CONDITIONED_RTOL * c.norm() {
            return Err(Error::IllConditioned { residual });
        }
        sol.iter().copied().collect()
    };
    let a = (0..=m)
        .map(|k| {
            c.0[k] + (1..=k.min(n)).map(|j| b[j - 1] * c.0[k - j]).sum::<f64>()
        })
        .collect();
    Ok(RationalApprox { m, n, a, b })
}

/// `P_m(s)/Q_n(s)` by Horner evaluation.
pub fn eval_rational(r: &RationalApprox, s: C64) -> Result<C64> {
    if r.n > 0 {
        for root in linalg::poly_roots(&r.denominator())? {
            let distance = (s - root).norm();
            if distance < POLE_PROXIMITY {
                return Err(Error::PoleProximity { root, distance });
            }
        }
    }
    Ok(linalg::horner(&r.a, s) / linalg::horner(&r.denominator(), s))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoleSet {
    pub poles: Vec<C64>,
    pub residues: Vec<C64>,
    /// Two poles closer than [`MULTIPLE_POLE_TOL`]; residues are then unreliable.
    #[serde(default)]
    pub multiple_pole: bool,
}

impl PoleSet {
    pub fn len(&self) -> usize {
        self.poles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poles.is_empty()
    }
}

/// Roots of `Q_n` with residues `P(s_k)/Q'(s_k)`, sorted by real then imaginary part.
pub fn extract_poles(r: &RationalApprox) -> Result<PoleSet> {
    if r.n == 0 {
        return Ok(PoleSet::default());
    }
    let q = r.denominator();
    let mut poles = linalg::poly_roots(&q)?;
    poles.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    let multiple_pole = poles
        .iter()
        .enumerate()
        .any(|(i, p)| poles[i + 1..].iter().any(|o| (p - o).norm() < MULTIPLE_POLE_TOL * p.norm().max(1.0)));
    let residues = poles
        .iter()
        .map(|&s| linalg::horner(&r.a, s) / linalg::horner_derivative(&q, s))
        .collect();
    Ok(PoleSet {
        poles,
        residues,
        multiple_pole,
    })
}
