//! Lanczos tridiagonalization of symmetric operators, Ritz spectra and
//! Lorentzian-broadened spectral densities.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold on `β_j` (against `‖H q_1‖`) that ends the recurrence.
pub const BREAKDOWN_RTOL: f64 = 1e-12;
/// Relative asymmetry tolerated when loading a dense operator.
pub const SYMMETRY_RTOL: f64 = 1e-12;
/// Total implicit-shift iterations before [`tridiag_eigen`] gives up.
pub const MAX_QL_ITERATIONS: usize = 100_000;

/// A real symmetric operator known through its action `v ↦ Hv`.
pub trait HermitianOp {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64], out: &mut [f64]);
}

/// Row-major dense symmetric matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DenseSymmetric {
    dim: usize,
    data: Vec<f64>,
}

impl DenseSymmetric {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidInput("operator must have dimension ≥ 1".into()));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::InvalidInput(format!(
                "row {i} has {} entries, expected {dim} for a square matrix",
                rows[i].len()
            )));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix contains non-finite entries".into()));
        }
        let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..dim {
            for j in i + 1..dim {
                let asym = (data[i * dim + j] - data[j * dim + i]).abs();
                if asym > SYMMETRY_RTOL * scale {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric: |H[{i}][{j}] - H[{j}][{i}]| = {asym:e}"
                    )));
                }
            }
        }
        Ok(DenseSymmetric { dim, data })
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        let n = d.len();
        Self::from_rows(
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { d[i] } else { 0.0 }).collect())
                .collect(),
        )
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn from_json_reader(r: impl Read) -> Result<Self> {
        let rows: Vec<Vec<f64>> = serde_json::from_reader(r)?;
        Self::from_rows(rows)
    }

    /// Headerless CSV, one matrix row per line.
    pub fn from_csv_reader(r: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(r);
        let rows = rdr
            .deserialize::<Vec<f64>>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_rows(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_reader(file),
            _ => Self::from_csv_reader(file),
        }
    }
}

impl HermitianOp for DenseSymmetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.rows()) {
            *o = dot(row, v);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TridiagResult {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Steps achieved; equals `alpha.len()`.
    pub k: usize,
    /// The Krylov space became invariant: the residual after step `k` vanished.
    pub breakdown: bool,
    /// Orthonormal Lanczos vectors `q_1..q_k`, kept when reorthogonalizing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<Vec<f64>>>,
}

impl TridiagResult {
    /// A tridiagonal matrix given directly by its diagonal and off-diagonal.
    pub fn from_coefficients(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || beta.len() + 1 != alpha.len() {
            return Err(Error::Argument(format!(
                "need k ≥ 1 diagonal and k-1 off-diagonal entries, got {} and {}",
                alpha.len(),
                beta.len()
            )));
        }
        Ok(TridiagResult {
            k: alpha.len(),
            alpha,
            beta,
            breakdown: false,
            basis: None,
        })
    }

    /// The leading `k × k` block.
    pub fn leading(&self, k: usize) -> TridiagResult {
        let k = k.clamp(1, self.k);
        TridiagResult {
            alpha: self.alpha[..k].to_vec(),
            beta: self.beta[..k - 1].to_vec(),
            k,
            breakdown: false,
            basis: None,
        }
    }
}

/// `k` steps of the symmetric Lanczos recurrence from `q1`.
///
/// With `reorthogonalize`, every new residual is orthogonalized (twice)
/// against all stored basis vectors.
pub fn lanczos_tridiag(
    op: &dyn HermitianOp,
    q1: &[f64],
    k: usize,
    reorthogonalize: bool,
) -> Result<TridiagResult> {
    let dim = op.dim();
    if q1.len() != dim {
        return Err(Error::Argument(format!(
            "start vector has length {}, operator dimension is {dim}",
            q1.len()
        )));
    }
    if k == 0 || k > dim {
        return Err(Error::Argument(format!("steps must lie in 1..={dim}, got {k}")));
    }
    let norm = dot(q1, q1).sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Argument("start vector must be non-zero and finite".into()));
    }

    let mut q: Vec<f64> = q1.iter().map(|v| v / norm).collect();
    let mut q_prev = vec![0.0; dim];
    let mut w = vec![0.0; dim];
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha = Vec::with_capacity(k);
    let mut beta: Vec<f64> = Vec::with_capacity(k);
    let mut tol = 0.0;
    let mut breakdown = false;

    for j in 0..k {
        op.apply(&q, &mut w);
        if j == 0 {
            tol = BREAKDOWN_RTOL * dot(&w, &w).sqrt();
        }
        let a = dot(&q, &w);
        alpha.push(a);
        axpy(-a, &q, &mut w);
        if let Some(&b) = beta.last() {
            axpy(-b, &q_prev, &mut w);
        }
        if reorthogonalize {
            basis.push(q.clone());
            for _ in 0..2 {
                for v in &basis {
                    let h = dot(v, &w);
                    axpy(-h, v, &mut w);
                }
            }
        }
        let b = dot(&w, &w).sqrt();
        if b <= tol {
            breakdown = true;
            break;
        }
        if j + 1 == k {
            break;
        }
        beta.push(b);
        std::mem::swap(&mut q_prev, &mut q);
        for (qi, wi) in q.iter_mut().zip(&w) {
            *qi = wi / b;
        }
    }

    Ok(TridiagResult {
        k: alpha.len(),
        alpha,
        beta,
        breakdown,
        basis: reorthogonalize.then_some(basis),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RitzSpectrum {
    /// Ritz values, ascending.
    pub lambdas: Vec<f64>,
    /// Squared first components of the tridiagonal eigenvectors.
    pub weights: Vec<f64>,
}

/// Eigenvalues and first-row eigenvector components of a symmetric
/// tridiagonal matrix by implicit-shift QL. Only the first row of the
/// eigenvector matrix is accumulated.
pub fn tridiag_eigen(t: &TridiagResult) -> Result<RitzSpectrum> {
    let n = t.alpha.len();
    let mut d = t.alpha.clone();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(&t.beta[..n - 1]);
    let mut z = vec![0.0; n];
    z[0] = 1.0;
    let mut iterations = 0usize;

    for l in 0..n {
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > MAX_QL_ITERATIONS {
                return Err(Error::Convergence { iterations });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let zf = z[i + 1];
                z[i + 1] = s * z[i] + c * zf;
                z[i] = c * z[i] - s * zf;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    Ok(RitzSpectrum {
        lambdas: order.iter().map(|&i| d[i]).collect(),
        weights: order.iter().map(|&i| z[i] * z[i]).collect(),
    })
}

/// `S(ω) = Σ_j w_j (η/π) / ((ω − λ_j)² + η²)` on `omega_grid`.
pub fn spectral_density(spec: &RitzSpectrum, omega_grid: &[f64], eta: f64) -> Result<Vec<f64>> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Argument(format!("broadening must be positive, got {eta}")));
    }
    Ok(omega_grid
        .iter()
        .map(|&w| {
            spec.lambdas
                .iter()
                .zip(&spec.weights)
                .map(|(&l, &wt)| wt * (eta / PI) / ((w - l).powi(2) + eta * eta))
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_three() {
        let h = DenseSymmetric::diagonal(&[1.0, 2.0, 3.0]).unwrap();
        let q1 = vec![1.0 / 3f64.sqrt(); 3];
        let t = lanczos_tridiag(&h, &q1, 3, true).unwrap();
        let spec = tridiag_eigen(&t).unwrap();
        for (l, e) in spec.lambdas.iter().zip([1.0, 2.0, 3.0]) {
            assert!((l - e).abs() < 1e-10);
        }
        for w in &spec.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_breaks_down_after_one_step() {
        let h = DenseSymmetric::diagonal(&[1.0; 4]).unwrap();
        let t = lanczos_tridiag(&h, &[0.5, 0.5, 0.5, 0.5], 4, false).unwrap();
        assert_eq!(t.k, 1);
        assert!(t.breakdown);
        assert!((t.alpha[0] - 1.0).abs() < 1e-15);
        assert!(t.beta.is_empty());
    }

    #[test]
    fn eigenvector_start_is_invariant() {
        let h = DenseSymmetric::diagonal(&[4.0, -1.0, 2.0]).unwrap();
        let t = lanczos_tridiag(&h, &[0.0, 3.0, 0.0], 3, true).unwrap();
        assert_eq!(t.k, 1);
        assert!(t.breakdown);
        assert_eq!(t.alpha, vec![-1.0]);
    }

    #[test]
    fn argument_errors() {
        let h = DenseSymmetric::diagonal(&[1.0, 2.0]).unwrap();
        assert!(matches!(lanczos_tridiag(&h, &[0.0, 0.0], 1, true), Err(Error::Argument(_))));
        assert!(matches!(lanczos_tridiag(&h, &[1.0, 0.0], 3, true), Err(Error::Argument(_))));
        assert!(matches!(lanczos_tridiag(&h, &[1.0, 0.0], 0, true), Err(Error::Argument(_))));
    }

    #[test]
    fn two_by_two_eigen() {
        let t = TridiagResult::from_coefficients(vec![2.0, 2.0], vec![1.0]).unwrap();
        let s = tridiag_eigen(&t).unwrap();
        assert!((s.lambdas[0] - 1.0).abs() < 1e-14 && (s.lambdas[1] - 3.0).abs() < 1e-14);
        assert!(s.weights.iter().all(|w| (w - 0.5).abs() < 1e-14));
    }

    #[test]
    fn decoupled_diagonal() {
        let t = TridiagResult::from_coefficients(vec![3.0, -1.0, 7.0], vec![0.0, 0.0]).unwrap();
        let s = tridiag_eigen(&t).unwrap();
        assert_eq!(s.lambdas, vec![-1.0, 3.0, 7.0]);
        assert_eq!(s.weights, vec![0.0, 1.0, 0.0]);

        let one = TridiagResult::from_coefficients(vec![0.0], vec![]).unwrap();
        let s = tridiag_eigen(&one).unwrap();
        assert_eq!((s.lambdas, s.weights), (vec![0.0], vec![1.0]));
    }

    #[test]
    fn density_peak_and_empty_grid() {
        let spec = RitzSpectrum {
            lambdas: vec![0.0],
            weights: vec![1.0],
        };
        let s = spectral_density(&spec, &[0.0], 0.1).unwrap();
        assert!((s[0] - 1.0 / (0.1 * PI)).abs() < 1e-12);
        assert!((s[0] - 3.1831).abs() < 1e-4);
        assert!(spectral_density(&spec, &[], 0.1).unwrap().is_empty());
        assert!(spectral_density(&spec, &[0.0], 0.0).is_err());
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let err = DenseSymmetric::from_rows(vec![vec![1.0, 2.0], vec![2.5, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        assert!(DenseSymmetric::from_rows(vec![vec![1.0, 2.0]]).is_err());
        let csv = "1,2\n2,5\n";
        let h = DenseSymmetric::from_csv_reader(csv.as_bytes()).unwrap();
        assert_eq!(h.get(1, 1), 5.0);
        let json = "[[1,0],[0,1]]";
        assert_eq!(DenseSymmetric::from_json_reader(json.as_bytes()).unwrap().dim(), 2);
    }
}
