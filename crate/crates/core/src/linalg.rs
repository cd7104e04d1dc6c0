//! Small dense helpers shared by the fitters.

use nalgebra::{Complex, ComplexField, DMatrix, DVector, Scalar};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Thin SVD `a = U diag(σ) Vᴴ`, with `σ` nonincreasing.
pub struct Svd<T: Scalar> {
    pub u: DMatrix<T>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<T>,
}

pub fn svd<T>(a: &DMatrix<T>) -> Result<Svd<T>>
where
    T: ComplexField<RealField = f64> + faer::traits::ComplexField<Real = f64>,
{
    if a.is_empty() {
        return Ok(Svd {
            u: DMatrix::zeros(a.nrows(), 0),
            sigma: Vec::new(),
            v: DMatrix::zeros(a.ncols(), 0),
        });
    }
    let m = faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].clone());
    let f = m.thin_svd().map_err(|_| Error::Convergence { iterations: 0 })?;
    let to_na = |x: faer::MatRef<'_, T>| DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)].clone());
    Ok(Svd {
        u: to_na(f.U()),
        sigma: f.S().column_vector().iter().map(|s| ComplexField::real(s.clone())).collect(),
        v: to_na(f.V()),
    })
}

impl<T: ComplexField<RealField = f64>> Svd<T> {
    /// Pseudo-inverse applied to `b`, dropping singular values `≤ cutoff`.
    pub fn solve(&self, b: &DMatrix<T>, cutoff: f64) -> DMatrix<T> {
        let mut c = self.u.adjoint() * b;
        for (i, &s) in self.sigma.iter().enumerate() {
            let scale = if s > cutoff { 1.0 / s } else { 0.0 };
            c.row_mut(i).iter_mut().for_each(|x| *x = x.clone().scale(scale));
        }
        &self.v * c
    }

    pub fn max_singular_value(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: DMatrix<f64>) -> Result<Vec<C64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let f = faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    f.eigenvalues().map_err(|_| Error::Convergence { iterations: 0 })
}

/// Roots of `Σ coeffs[k] s^k` via the companion matrix. Trailing coefficients
/// that vanish relative to the largest one lower the degree.
pub fn poly_roots(coeffs: &[f64]) -> Result<Vec<C64>> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Ok(Vec::new());
    }
    let degree = match coeffs.iter().rposition(|c| c.abs() > 1e-14 * scale) {
        Some(d) => d,
        None => return Ok(Vec::new()),
    };
    if degree == 0 {
        return Ok(Vec::new());
    }
    let lead = coeffs[degree];
    let mut comp = DMatrix::<f64>::zeros(degree, degree);
    for i in 1..degree {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        comp[(i, degree - 1)] = -coeffs[i] / lead;
    }
    eigenvalues(comp)
}

pub fn horner(coeffs: &[f64], s: C64) -> C64 {
    coeffs
        .iter()
        .rev()
        .fold(C64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

pub fn horner_derivative(coeffs: &[f64], s: C64) -> C64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(C64::new(0.0, 0.0), |acc, (k, &c)| acc * s + c * k as f64)
}

/// Minimum-norm least-squares solution of `a x = b`, singular values below
/// `rcond·σ_max` treated as zero.
pub fn lstsq(a: DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Result<DVector<f64>> {
    lstsq_generic(&a, b, rcond)
}

pub fn lstsq_complex(a: DMatrix<C64>, b: &DVector<C64>, rcond: f64) -> Result<DVector<C64>> {
    lstsq_generic(&a, b, rcond)
}

fn lstsq_generic<T>(a: &DMatrix<T>, b: &DVector<T>, rcond: f64) -> Result<DVector<T>>
where
    T: ComplexField<RealField = f64> + faer::traits::ComplexField<Real = f64>,
{
    if a.nrows() != b.len() {
        return Err(Error::Argument(format!(
            "least squares: {} rows but right-hand side of length {}",
            a.nrows(),
            b.len()
        )));
    }
    let f = svd(a)?;
    let cutoff = rcond * f.max_singular_value();
    let b = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    Ok(DVector::from_column_slice(f.solve(&b, cutoff).as_slice()))
}

/// Nonnegative least squares `min ‖a x − b‖, x ≥ 0` (Lawson–Hanson active set).
///
/// Works on the normal equations, so each passive-set solve costs only the
/// cube of the number of active columns.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.ncols();
    let gram = a.transpose() * a;
    let atb = a.transpose() * b;
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())) * b.amax().max(1.0);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let max_outer = 3 * n + 10;

    let solve_passive = |passive: &[bool]| -> Result<DVector<f64>> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = gram.select_rows(&idx).select_columns(&idx);
        let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&j| atb[j]));
        let zs = lstsq(sub, &rhs, 1e-15)?;
        let mut z = DVector::<f64>::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            z[j] = zs[k];
        }
        Ok(z)
    };

    for _ in 0..max_outer {
        let w = &atb - &gram * &x;
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate.filter(|&j| w[j] > tol) else {
            return Ok(x);
        };
        passive[j] = true;
        loop {
            let z = solve_passive(&passive)?;
            if (0..n).filter(|&k| passive[k]).all(|k| z[k] > 0.0) {
                x = z;
                break;
            }
            let step = (0..n)
                .filter(|&k| passive[k] && z[k] <= 0.0)
                .map(|k| x[k] / (x[k] - z[k]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * step;
            for k in 0..n {
                if passive[k] && x[k] <= tol {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Ok(x)
}
