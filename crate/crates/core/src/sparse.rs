//! Sparse spectra as sums of Lorentzian atoms `A γ² / ((ω − ω₀)² + γ²)`, and
//! the fitters that produce them: pole mapping, matrix pencil, greedy pursuit
//! and Gauss–Newton refinement.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::pade::PoleSet;
use crate::signal::TimeSeries;

/// Atoms closer than this in both ω and γ are merged.
pub const MERGE_TOL: f64 = 1e-9;
/// Default singular-value ratio that decides the matrix-pencil model order.
pub const DEFAULT_SV_TOL: f64 = 1e-8;
/// `|Im z| ≤ REAL_POLE_TOL·|z|` marks a real pole.
const REAL_POLE_TOL: f64 = 1e-10;
const NLS_GRADIENT_TOL: f64 = 1e-10;
const NLS_MAX_HALVINGS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzianAtom {
    /// Resonance frequency (rad/s).
    pub omega: f64,
    /// Half width at half maximum (1/s).
    pub gamma: f64,
    /// Peak height.
    pub amp: f64,
}

impl LorentzianAtom {
    pub fn new(omega: f64, gamma: f64, amp: f64) -> Result<Self> {
        let atom = LorentzianAtom { omega, gamma, amp };
        atom.validate()?;
        Ok(atom)
    }

    fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite()
            && self.gamma > 0.0
            && self.gamma.is_finite()
            && self.amp > 0.0
            && self.amp.is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "atom needs finite omega and positive gamma/amp, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn eval(&self, omega: f64) -> f64 {
        let g2 = self.gamma * self.gamma;
        self.amp * g2 / ((omega - self.omega).powi(2) + g2)
    }

    /// `∫ S dω = π A γ`.
    pub fn area(&self) -> f64 {
        PI * self.amp * self.gamma
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseSpectrum {
    /// Sorted by `omega`.
    pub atoms: Vec<LorentzianAtom>,
    pub residual_norm: f64,
    /// Candidates dropped as unstable or with non-positive amplitude.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub discarded: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl SparseSpectrum {
    /// Validates, sorts by frequency and merges coincident atoms.
    pub fn new(mut atoms: Vec<LorentzianAtom>, residual_norm: f64) -> Result<Self> {
        for a in &atoms {
            a.validate()?;
        }
        atoms.sort_by(|a, b| a.omega.total_cmp(&b.omega).then(a.gamma.total_cmp(&b.gamma)));
        let mut merged: Vec<LorentzianAtom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.iter_mut().find(|m| {
                (m.omega - a.omega).abs() < MERGE_TOL && (m.gamma - a.gamma).abs() < MERGE_TOL
            }) {
                Some(m) => m.amp += a.amp,
                None => merged.push(a),
            }
        }
        Ok(SparseSpectrum {
            atoms: merged,
            residual_norm,
            discarded: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Keeps the `k` atoms of largest amplitude.
    pub fn truncate_strongest(&mut self, k: usize) {
        if self.atoms.len() <= k {
            return;
        }
        let mut by_amp = self.atoms.clone();
        by_amp.sort_by(|a, b| b.amp.total_cmp(&a.amp));
        let cut = by_amp[k - 1].amp;
        let mut kept = 0;
        self.atoms.retain(|a| {
            let keep = a.amp >= cut && kept < k;
            kept += keep as usize;
            keep
        });
    }

    pub fn sample(&self, omega: &[f64]) -> SampledSpectrum {
        SampledSpectrum {
            omega: omega.to_vec(),
            values: omega.iter().map(|&w| eval_spectrum(self, w)).collect(),
        }
    }
}

/// `S(ω) = Σ_k A_k γ_k² / ((ω − ω_k)² + γ_k²)`.
pub fn eval_spectrum(sp: &SparseSpectrum, omega: f64) -> f64 {
    sp.atoms.iter().map(|a| a.eval(omega)).sum()
}

/// A spectrum sampled on a frequency grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampledSpectrum {
    pub omega: Vec<f64>,
    pub values: Vec<f64>,
}

impl SampledSpectrum {
    pub fn new(omega: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if omega.len() != values.len() {
            return Err(Error::Argument(format!(
                "grid has {} points but {} values",
                omega.len(),
                values.len()
            )));
        }
        Ok(SampledSpectrum { omega, values })
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// `omega,S` CSV for plotting.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["omega", "S"])?;
        for (o, v) in self.omega.iter().zip(&self.values) {
            wtr.write_record([o.to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Evenly spaced grid of `n` points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| lo + step * i as f64).collect()
        }
    }
}

/// Maps discrete-time modes `x[n] = Σ h_k z_k^n` to atoms.
///
/// `p.poles` holds the signal poles `z_k` and `p.residues` the mode
/// amplitudes `h_k`. A stable pole gives `ω = arg z / dt`, `γ = −ln|z| / dt`
/// and `A = |r| / γ`, where `r` is the envelope magnitude of the mode: `2|h|`
/// for a conjugate pair (only the `Im z > 0` member is visited), `Re h` for a
/// real pole. Unstable poles and non-positive amplitudes are counted in
/// `discarded`.
pub fn atoms_from_poles(p: &PoleSet, dt: f64) -> Result<SparseSpectrum> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Argument(format!("sampling step must be positive, got {dt}")));
    }
    let mut atoms = Vec::new();
    let mut discarded = 0;
    for (&z, &h) in p.poles.iter().zip(&p.residues) {
        let real = z.im.abs() <= REAL_POLE_TOL * z.norm();
        if !real && z.im < 0.0 {
            continue;
        }
        let gamma = -z.norm().ln() / dt;
        let envelope = if real { h.re } else { 2.0 * h.norm() };
        let omega = if real {
            if z.re >= 0.0 { 0.0 } else { PI / dt }
        } else {
            z.arg() / dt
        };
        let atom = LorentzianAtom {
            omega,
            gamma,
            amp: envelope / gamma,
        };
        if atom.validate().is_ok() {
            atoms.push(atom);
        } else {
            discarded += 1;
        }
    }
    let mut sp = SparseSpectrum::new(atoms, 0.0)?;
    sp.discarded = discarded;
    Ok(sp)
}

/// Signal poles and least-squares mode amplitudes from a Hankel matrix pencil.
///
/// Pencil parameter `L = N/2`; the order is the number of singular values with
/// `σ_i/σ_1 > sv_tol`, capped at `max_modes`. Returns the poles together with
/// the time-domain reconstruction residual.
pub fn matrix_pencil_poles(x: &TimeSeries, max_modes: usize, sv_tol: f64) -> Result<(PoleSet, f64)> {
    pencil(x, max_modes, sv_tol, 0.0)
}

/// Like [`matrix_pencil_poles`], but singular values must also exceed
/// `floor_factor` times the median singular value, which sits at the noise
/// level when the signal rank is small. Pure noise then yields no poles.
pub fn matrix_pencil_poles_above_floor(
    x: &TimeSeries,
    max_modes: usize,
    sv_tol: f64,
    floor_factor: f64,
) -> Result<(PoleSet, f64)> {
    if !(floor_factor >= 0.0 && floor_factor.is_finite()) {
        return Err(Error::Argument(format!("noise floor factor must be ≥ 0, got {floor_factor}")));
    }
    pencil(x, max_modes, sv_tol, floor_factor)
}

fn pencil(x: &TimeSeries, max_modes: usize, sv_tol: f64, floor_factor: f64) -> Result<(PoleSet, f64)> {
    let s = x.samples();
    let n = s.len();
    if max_modes == 0 || n < 2 * max_modes + 2 {
        return Err(Error::Argument(format!(
            "matrix pencil with {max_modes} modes needs at least {} samples, got {n}",
            2 * max_modes + 2
        )));
    }
    let l = n / 2;
    let rows = n - l;
    let hankel = DMatrix::from_fn(rows, l + 1, |i, j| s[i + j]);
    let svd = linalg::svd(&hankel)?;
    let sigma = &svd.sigma;
    let s1 = sigma[0];
    let signal_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if s1 == 0.0 {
        return Ok((PoleSet::default(), signal_norm));
    }
    let floor = floor_factor * sigma[sigma.len() / 2];
    let order = sigma
        .iter()
        .take_while(|&&v| v / s1 > sv_tol && v > floor)
        .count()
        .min(max_modes);
    if order == 0 {
        return Ok((PoleSet::default(), signal_norm));
    }

    // Dominant right singular vectors, shifted by one sample.
    let v = svd.v.columns(0, order);
    let v1 = v.rows(0, l).into_owned();
    let v2 = v.rows(1, l).into_owned();
    let svd1 = linalg::svd(&v1)?;
    let z = svd1.solve(&v2, 1e-14 * svd1.max_singular_value());
    let poles = linalg::eigenvalues(z)?;

    let vander = DMatrix::from_fn(n, poles.len(), |i, k| poles[k].powu(i as u32));
    let rhs = DVector::from_iterator(n, s.iter().map(|&v| C64::new(v, 0.0)));
    let amps = linalg::lstsq_complex(vander.clone(), &rhs, 1e-14)?;
    let residual = (&vander * &amps - &rhs).norm();
    Ok((
        PoleSet {
            poles,
            residues: amps.iter().copied().collect(),
            multiple_pole: false,
        },
        residual,
    ))
}

/// Matrix-pencil fit with the default singular-value threshold.
pub fn fit_matrix_pencil(x: &TimeSeries, max_modes: usize) -> Result<SparseSpectrum> {
    fit_matrix_pencil_with(x, max_modes, DEFAULT_SV_TOL)
}

pub fn fit_matrix_pencil_with(x: &TimeSeries, max_modes: usize, sv_tol: f64) -> Result<SparseSpectrum> {
    let (poles, residual) = matrix_pencil_poles(x, max_modes, sv_tol)?;
    let mut sp = atoms_from_poles(&poles, x.dt())?;
    sp.residual_norm = residual;
    Ok(sp)
}

pub fn fit_matrix_pencil_above_floor(
    x: &TimeSeries,
    max_modes: usize,
    sv_tol: f64,
    floor_factor: f64,
) -> Result<SparseSpectrum> {
    let (poles, residual) = matrix_pencil_poles_above_floor(x, max_modes, sv_tol, floor_factor)?;
    let mut sp = atoms_from_poles(&poles, x.dt())?;
    sp.residual_norm = residual;
    Ok(sp)
}

/// Candidate atoms for greedy pursuit: a linear ω grid times a log-spaced γ grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    pub omegas: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Dictionary {
    pub fn grid(
        omega_range: (f64, f64),
        n_omega: usize,
        gamma_range: (f64, f64),
        n_gamma: usize,
    ) -> Result<Self> {
        let (g0, g1) = gamma_range;
        if !(g0 > 0.0 && g1 >= g0) || n_omega == 0 || n_gamma == 0 {
            return Err(Error::Argument(format!(
                "invalid dictionary grid: {n_omega} ω over {omega_range:?}, {n_gamma} γ over {gamma_range:?}"
            )));
        }
        let gammas = linspace(g0.ln(), g1.ln(), n_gamma)
            .into_iter()
            .map(f64::exp)
            .collect();
        Ok(Dictionary {
            omegas: linspace(omega_range.0, omega_range.1, n_omega),
            gammas,
        })
    }

    pub fn len(&self) -> usize {
        self.omegas.len() * self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn atom(&self, i: usize) -> (f64, f64) {
        (self.omegas[i / self.gammas.len()], self.gammas[i % self.gammas.len()])
    }
}

fn unit_profile(omega0: f64, gamma: f64, grid: &[f64]) -> Vec<f64> {
    let g2 = gamma * gamma;
    grid.iter().map(|&w| g2 / ((w - omega0).powi(2) + g2)).collect()
}

/// Greedy pursuit with nonnegative amplitude re-fits.
///
/// Each round adds the dictionary atom most correlated (in absolute value,
/// normalized) with the residual and re-solves all amplitudes by NNLS. Stops
/// after `k_max` atoms or once `‖r‖ ≤ tol·‖target‖`.
pub fn fit_omp(target: &SampledSpectrum, dict: &Dictionary, k_max: usize, tol: f64) -> Result<SparseSpectrum> {
    if target.is_empty() || dict.is_empty() || k_max == 0 {
        return Err(Error::Argument(
            "pursuit needs a non-empty grid, a non-empty dictionary and k_max ≥ 1".into(),
        ));
    }
    let grid = &target.omega;
    let y = DVector::from_column_slice(&target.values);
    let target_norm = y.norm();
    if target_norm == 0.0 {
        return Ok(SparseSpectrum::default());
    }
    let inv_norms: Vec<f64> = (0..dict.len())
        .map(|i| {
            let (w, g) = dict.atom(i);
            let n = unit_profile(w, g, grid).iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 { 1.0 / n } else { 0.0 }
        })
        .collect();

    let mut selected: Vec<usize> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut coef = DVector::<f64>::zeros(0);
    let mut residual = y.clone();

    while selected.len() < k_max && residual.norm() > tol * target_norm {
        let best = (0..dict.len())
            .filter(|i| !selected.contains(i))
            .map(|i| {
                let (w0, g) = dict.atom(i);
                let g2 = g * g;
                let c: f64 = grid
                    .iter()
                    .zip(residual.iter())
                    .map(|(&w, r)| r * g2 / ((w - w0).powi(2) + g2))
                    .sum();
                (i, c.abs() * inv_norms[i])
            })
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((i, corr)) = best else { break };
        if corr == 0.0 {
            break;
        }
        let (w, g) = dict.atom(i);
        selected.push(i);
        columns.push(unit_profile(w, g, grid));
        let a = DMatrix::from_fn(grid.len(), columns.len(), |r, c| columns[c][r]);
        coef = linalg::nnls(&a, &y)?;
        residual = &y - a * &coef;
    }

    let atoms = selected
        .iter()
        .zip(coef.iter())
        .filter(|(_, &amp)| amp > 0.0)
        .map(|(&i, &amp)| {
            let (omega, gamma) = dict.atom(i);
            LorentzianAtom { omega, gamma, amp }
        })
        .collect();
    SparseSpectrum::new(atoms, residual.norm())
}

/// Parameter vector `(ω, ln γ, ln A)` per atom, the coordinates refined by
/// [`refine_nls`].
pub fn nls_parameters(atoms: &[LorentzianAtom]) -> Vec<f64> {
    atoms
        .iter()
        .flat_map(|a| [a.omega, a.gamma.ln(), a.amp.ln()])
        .collect()
}

pub fn atoms_from_nls_parameters(theta: &[f64]) -> Vec<LorentzianAtom> {
    theta
        .chunks_exact(3)
        .map(|p| LorentzianAtom {
            omega: p[0],
            gamma: p[1].exp(),
            amp: p[2].exp(),
        })
        .collect()
}

/// Analytic Jacobian of the Lorentzian sum on `grid` with respect to
/// [`nls_parameters`] (one row per grid point).
pub fn lorentzian_jacobian(atoms: &[LorentzianAtom], grid: &[f64]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(grid.len(), 3 * atoms.len());
    for (k, a) in atoms.iter().enumerate() {
        let g2 = a.gamma * a.gamma;
        for (i, &w) in grid.iter().enumerate() {
            let x = w - a.omega;
            let d = x * x + g2;
            let value = a.amp * g2 / d;
            j[(i, 3 * k)] = 2.0 * value * x / d;
            j[(i, 3 * k + 1)] = 2.0 * value * x * x / d;
            j[(i, 3 * k + 2)] = value;
        }
    }
    j
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub spectrum: SparseSpectrum,
    /// Gradient norm fell below tolerance.
    pub converged: bool,
    pub iterations: usize,
    /// Residual norm before the first step and after each accepted step.
    pub history: Vec<f64>,
}

fn residual_vector(atoms: &[LorentzianAtom], target: &SampledSpectrum) -> DVector<f64> {
    DVector::from_iterator(
        target.len(),
        target
            .omega
            .iter()
            .zip(&target.values)
            .map(|(&w, &t)| t - atoms.iter().map(|a| a.eval(w)).sum::<f64>()),
    )
}

/// Damped Gauss–Newton over all `(ω, ln γ, ln A)` jointly.
///
/// A step is halved up to 20 times until the residual does not grow; if no
/// halving helps, the current iterate is returned.
pub fn refine_nls(sp: &SparseSpectrum, target: &SampledSpectrum, max_iter: usize) -> Result<Refinement> {
    if sp.is_empty() {
        return Err(Error::Argument("refinement needs at least one atom".into()));
    }
    let mut theta = nls_parameters(&sp.atoms);
    let mut atoms = sp.atoms.clone();
    let mut r = residual_vector(&atoms, target);
    let mut cost = r.norm();
    let mut history = vec![cost];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        let jac = lorentzian_jacobian(&atoms, &target.omega);
        let grad = jac.transpose() * &r;
        if grad.amax() <= NLS_GRADIENT_TOL {
            converged = true;
            break;
        }
        // Linearized model: r(θ + δ) ≈ r − J δ.
        let delta = linalg::lstsq(jac, &r, 1e-12)?;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=NLS_MAX_HALVINGS {
            let trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + step * d).collect();
            let trial_atoms = atoms_from_nls_parameters(&trial);
            if trial_atoms.iter().all(|a| a.validate().is_ok()) {
                let tr = residual_vector(&trial_atoms, target);
                if tr.norm() <= cost {
                    accepted = Some((trial, trial_atoms, tr));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((t, a, tr)) = accepted else { break };
        iterations += 1;
        let improved = tr.norm() < cost;
        theta = t;
        atoms = a;
        r = tr;
        cost = r.norm();
        history.push(cost);
        if !improved {
            break;
        }
    }
    if !converged {
        let grad = lorentzian_jacobian(&atoms, &target.omega).transpose() * &r;
        converged = grad.amax() <= NLS_GRADIENT_TOL;
    }

    let mut spectrum = SparseSpectrum::new(atoms, cost)?;
    spectrum.discarded = sp.discarded;
    Ok(Refinement {
        spectrum,
        converged,
        iterations,
        history,
    })
}
