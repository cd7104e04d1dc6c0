//! End-to-end composition: preprocess → spectral estimate → sparse atoms →
//! predicates → inference.

mod detect;
pub mod synth;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lanczos::{self, HermitianOp};
use crate::linalg::C64;
use crate::pade::{self, PoleSet, SeriesCoeffs};
use crate::rules::{self, ProofTrace, RuleSet};
use crate::signal::{self, PreprocessConfig, TimeSeries};
use crate::sparse::{self, Dictionary, LorentzianAtom, SampledSpectrum, SparseSpectrum};
use crate::symbolic::{self, BinningConfig, SymbolSet};

pub use detect::{detect_anomalies, window_starts, WindowHit};

/// Fitted peaks below this fraction of the total spectral weight, centered
/// outside the density grid or wider than it are dropped after refinement.
pub const MIN_PEAK_MASS: f64 = 1e-8;

/// Relative mode amplitude below which a Padé pole is treated as spurious.
pub const DOUBLET_RTOL: f64 = 1e-8;

/// Upper bound on either Padé order.
pub const MAX_PADE_ORDER: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    PadeZ,
    Lanczos,
    MatrixPencil,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PadeOrder {
    Fixed { m: usize, n: usize },
    Auto { n_max: usize, residual_tol: f64 },
}

impl Default for PadeOrder {
    fn default() -> Self {
        PadeOrder::Auto {
            n_max: 8,
            residual_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanczosSettings {
    /// Krylov steps; `None` means the full operator dimension.
    pub k: Option<usize>,
    /// Lorentzian broadening of the Ritz deltas.
    pub eta: f64,
    pub reorthogonalize: bool,
    /// Density grid spacing in units of `eta`.
    pub grid_step: f64,
}

impl Default for LanczosSettings {
    fn default() -> Self {
        LanczosSettings {
            k: None,
            eta: 0.05,
            reorthogonalize: true,
            grid_step: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparseSettings {
    /// Maximum number of atoms kept.
    pub k_max: usize,
    /// Singular-value ratio for the pencil order.
    pub sv_tol: f64,
    pub nls_iters: usize,
    /// Relative residual at which greedy pursuit stops.
    pub omp_tol: f64,
    /// Pencil singular values must exceed this multiple of their median.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_floor: Option<f64>,
}

impl Default for SparseSettings {
    fn default() -> Self {
        SparseSettings {
            k_max: 4,
            sv_tol: sparse::DEFAULT_SV_TOL,
            nls_iters: 50,
            omp_tol: 1e-3,
            noise_floor: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    /// Feed the unbiased autocorrelation up to this lag to the estimator
    /// instead of the raw samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub autocorr_max_lag: Option<usize>,
    pub backend: Backend,
    #[serde(default)]
    pub pade: PadeOrder,
    #[serde(default)]
    pub lanczos: LanczosSettings,
    #[serde(default)]
    pub sparse: SparseSettings,
    pub binning: BinningConfig,
    /// Rule file, relative paths resolved against the config file.
    pub rules_path: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if let PadeOrder::Fixed { m, n } = self.pade {
            if m > MAX_PADE_ORDER || n > MAX_PADE_ORDER {
                return Err(Error::Config(format!("Padé orders must be ≤ {MAX_PADE_ORDER}, got [{m}/{n}]")));
            }
        }
        if let PadeOrder::Auto { n_max, residual_tol } = self.pade {
            if n_max == 0 || n_max > MAX_PADE_ORDER || residual_tol.is_nan() || residual_tol < 0.0 {
                return Err(Error::Config(format!(
                    "auto Padé sweep needs 1 ≤ n_max ≤ {MAX_PADE_ORDER} and residual_tol ≥ 0"
                )));
            }
        }
        if !(self.lanczos.eta > 0.0 && self.lanczos.grid_step > 0.0) {
            return Err(Error::Config("lanczos eta and grid_step must be positive".into()));
        }
        if self.lanczos.k == Some(0) {
            return Err(Error::Config("lanczos k must be ≥ 1".into()));
        }
        if self.sparse.k_max == 0 {
            return Err(Error::Config("sparse k_max must be ≥ 1".into()));
        }
        self.binning.validate()
    }

    /// Reads a JSON config; `rules_path` becomes relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = serde_json::from_reader(std::fs::File::open(path)?)?;
        if cfg.rules_path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.rules_path = dir.join(&cfg.rules_path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A validated configuration together with its parsed rules.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub rules: RuleSet,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pade_order: Option<OrderChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lanczos_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lanczos_breakdown: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nls_converged: Option<bool>,
    /// Residual of the spectral estimate (moment residual for Padé,
    /// reconstruction residual for the pencil, density misfit for Lanczos).
    pub estimate_residual: f64,
    pub discarded_candidates: usize,
    /// Wall-clock seconds per stage; not serialized so that runs stay
    /// byte-reproducible.
    #[serde(skip)]
    pub timings: Vec<(&'static str, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub atoms: SparseSpectrum,
    pub predicates: SymbolSet,
    pub derived: SymbolSet,
    pub trace: ProofTrace,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderChoice {
    pub m: usize,
    pub n: usize,
    pub residual: f64,
    /// The residual met the tolerance; false means the best order was used.
    pub converged: bool,
}

/// Tries `[n−1/n]` for `n = 1..=n_max` and keeps the first whose moment
/// residual over every coefficient is ≤ `residual_tol·‖c‖`, else the order
/// with the smallest residual.
pub fn auto_order_sweep(c: &SeriesCoeffs, n_max: usize, residual_tol: f64) -> Result<OrderChoice> {
    if n_max == 0 {
        return Err(Error::Argument("n_max must be ≥ 1".into()));
    }
    let bound = residual_tol * c.norm();
    let mut best: Option<OrderChoice> = None;
    for n in 1..=n_max {
        let m = n - 1;
        if c.len() < m + n + 1 {
            break;
        }
        let Ok(r) = pade::fit_pade(c, m, n) else {
            continue;
        };
        let residual = r.moment_residual(c);
        if residual <= bound {
            return Ok(OrderChoice {
                m,
                n,
                residual,
                converged: true,
            });
        }
        if best.is_none_or(|b| residual < b.residual) {
            best = Some(OrderChoice {
                m,
                n,
                residual,
                converged: false,
            });
        }
    }
    best.ok_or_else(|| Error::Argument(format!("no Padé order up to n = {n_max} fits {} coefficients", c.len())))
}

/// Signal poles `z_k = 1/s_k` and mode amplitudes `h_k = −r_k/s_k` from the
/// poles `s_k` and residues `r_k` of `F(s) = Σ x[n] sⁿ`.
pub fn signal_poles_from_pade(p: &PoleSet) -> PoleSet {
    let one = C64::new(1.0, 0.0);
    PoleSet {
        poles: p.poles.iter().map(|s| one / s).collect(),
        residues: p.residues.iter().zip(&p.poles).map(|(r, s)| -r / s).collect(),
        multiple_pole: p.multiple_pole,
    }
}

/// Removes poles whose mode amplitude is below [`DOUBLET_RTOL`] of the
/// largest; these are pole–zero pairs that carry no signal. Returns the count.
pub fn drop_froissart_doublets(p: PoleSet) -> (PoleSet, usize) {
    let largest = p.residues.iter().map(|h| h.norm()).fold(0.0, f64::max);
    let (poles, residues): (Vec<C64>, Vec<C64>) = p
        .poles
        .iter()
        .zip(&p.residues)
        .filter(|(_, h)| h.norm() >= DOUBLET_RTOL * largest)
        .map(|(z, h)| (*z, *h))
        .unzip();
    let dropped = p.poles.len() - poles.len();
    (
        PoleSet {
            poles,
            residues,
            multiple_pole: p.multiple_pole,
        },
        dropped,
    )
}

fn timed<T>(timings: &mut Vec<(&'static str, f64)>, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage));
    timings.push((stage, t0.elapsed().as_secs_f64()));
    out
}

impl Pipeline {
    pub fn new(config: PipelineConfig, rules: RuleSet) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline { config, rules })
    }

    /// Loads the config and the rule file it references.
    pub fn load(config_path: &Path) -> Result<Self> {
        let config = PipelineConfig::load(config_path)?;
        let rules = RuleSet::load(&config.rules_path).map_err(|e| e.in_stage("rules"))?;
        Self::new(config, rules)
    }

    /// The time-domain composition for the `pade_z` and `matrix_pencil` back-ends.
    pub fn run(&self, x: &TimeSeries) -> Result<RunResult> {
        let cfg = &self.config;
        let mut diag = Diagnostics::default();
        let prepared = timed(&mut diag.timings, "preprocess", || {
            let p = signal::preprocess(x, &cfg.preprocess)?;
            match cfg.autocorr_max_lag {
                Some(lag) => signal::autocorrelation(&p, lag),
                None => Ok(p),
            }
        })?;

        let mut atoms = match cfg.backend {
            Backend::PadeZ => timed(&mut diag.timings, "spectral estimation", || {
                let c = SeriesCoeffs::new(prepared.samples().to_vec())?;
                let choice = match cfg.pade {
                    PadeOrder::Fixed { m, n } => {
                        let r = pade::fit_pade(&c, m, n)?;
                        OrderChoice {
                            m,
                            n,
                            residual: r.moment_residual(&c),
                            converged: true,
                        }
                    }
                    PadeOrder::Auto { n_max, residual_tol } => auto_order_sweep(&c, n_max, residual_tol)?,
                };
                let r = pade::fit_pade(&c, choice.m, choice.n)?;
                let poles = pade::extract_poles(&r)?;
                diag.pade_order = Some(choice);
                let (signal_poles, doublets) = drop_froissart_doublets(signal_poles_from_pade(&poles));
                let mut sp = sparse::atoms_from_poles(&signal_poles, prepared.dt())?;
                sp.discarded += doublets;
                sp.residual_norm = choice.residual;
                Ok(sp)
            })?,
            Backend::MatrixPencil => timed(&mut diag.timings, "sparse decomposition", || {
                let modes = (2 * cfg.sparse.k_max).min((prepared.len() - 2) / 2);
                sparse::fit_matrix_pencil_above_floor(
                    &prepared,
                    modes.max(1),
                    cfg.sparse.sv_tol,
                    cfg.sparse.noise_floor.unwrap_or(0.0),
                )
            })?,
            Backend::Lanczos => {
                return Err(Error::Config(
                    "the lanczos back-end takes an operator; use run_hermitian".into(),
                ))
            }
        };
        diag.estimate_residual = atoms.residual_norm;
        diag.discarded_candidates = atoms.discarded;
        atoms.truncate_strongest(cfg.sparse.k_max);
        self.reason(atoms, diag)
    }

    /// Lanczos on `op` from `q1`, then peak extraction on the broadened
    /// density. Reported atoms carry the deconvolved width
    /// `max(γ_fit − η, η/10)` and the spectral weight `π A γ_fit` as amplitude.
    pub fn run_hermitian(&self, op: &dyn HermitianOp, q1: &[f64]) -> Result<RunResult> {
        let cfg = &self.config;
        if cfg.backend != Backend::Lanczos {
            return Err(Error::Config(format!(
                "run_hermitian needs the lanczos back-end, configured {:?}",
                cfg.backend
            )));
        }
        let mut diag = Diagnostics::default();
        let lz = &cfg.lanczos;
        let eta = lz.eta;
        let ritz = timed(&mut diag.timings, "spectral estimation", || {
            let k = lz.k.unwrap_or(op.dim());
            if k > op.dim() {
                return Err(Error::Config(format!("lanczos k = {k} exceeds dimension {}", op.dim())));
            }
            let t = lanczos::lanczos_tridiag(op, q1, k, lz.reorthogonalize)?;
            diag.lanczos_steps = Some(t.k);
            diag.lanczos_breakdown = Some(t.breakdown);
            lanczos::tridiag_eigen(&t)
        })?;

        let atoms = timed(&mut diag.timings, "sparse decomposition", || {
            let lo = ritz.lambdas[0] - 20.0 * eta;
            let hi = ritz.lambdas[ritz.lambdas.len() - 1] + 20.0 * eta;
            let step = lz.grid_step * eta;
            let points = ((hi - lo) / step).ceil() as usize + 1;
            let grid = sparse::linspace(lo, hi, points);
            let density = SampledSpectrum::new(grid.clone(), lanczos::spectral_density(&ritz, &grid, eta)?)?;
            let dict = Dictionary::grid((lo, hi), points, (eta / 2.0, 2.0 * eta), 3)?;
            let greedy = sparse::fit_omp(&density, &dict, cfg.sparse.k_max, cfg.sparse.omp_tol)?;
            if greedy.is_empty() {
                return Ok(greedy);
            }
            let (peaks, converged) = refine_peaks(&greedy.atoms, &density, eta, cfg.sparse.nls_iters)?;
            diag.nls_converged = Some(converged);
            let total: f64 = peaks.iter().map(LorentzianAtom::area).sum();
            let kept: Vec<LorentzianAtom> = peaks
                .into_iter()
                .filter(|a| (lo..=hi).contains(&a.omega) && a.area() > MIN_PEAK_MASS * total)
                .collect();
            let fitted = SparseSpectrum::new(kept.clone(), 0.0)?.sample(&grid);
            let residual = density
                .values
                .iter()
                .zip(&fitted.values)
                .map(|(d, f)| (d - f).powi(2))
                .sum::<f64>()
                .sqrt();
            let atoms = merge_peaks(&kept, eta / 2.0)
                .iter()
                .map(|a| LorentzianAtom {
                    omega: a.omega,
                    gamma: (a.gamma - eta).max(eta / 10.0),
                    amp: a.area(),
                })
                .collect();
            SparseSpectrum::new(atoms, residual)
        })?;
        diag.estimate_residual = atoms.residual_norm;
        self.reason(atoms, diag)
    }

    fn reason(&self, atoms: SparseSpectrum, mut diag: Diagnostics) -> Result<RunResult> {
        let predicates = timed(&mut diag.timings, "projection", || symbolic::project(&atoms, &self.config.binning))?;
        let inference = timed(&mut diag.timings, "inference", || rules::infer(&self.rules, &predicates))?;
        Ok(RunResult {
            atoms,
            predicates,
            derived: inference.derived,
            trace: inference.trace,
            diagnostics: diag,
        })
    }
}

/// Collapses each cluster of atoms (neighbors closer than `2η`) into one peak
/// and refines it against a window of the density reaching `6η` past the
/// cluster, with every other atom's contribution subtracted. Returns the peaks
/// and whether every local fit met the gradient tolerance.
fn refine_peaks(
    atoms: &[LorentzianAtom],
    density: &SampledSpectrum,
    eta: f64,
    iters: usize,
) -> Result<(Vec<LorentzianAtom>, bool)> {
    let mut current = atoms.to_vec();
    let mut converged = true;
    let mut start = 0;
    while start < current.len() {
        let mut end = start + 1;
        while end < current.len() && current[end].omega - current[end - 1].omega < 2.0 * eta {
            end += 1;
        }
        let (lo, hi) = (current[start].omega - 6.0 * eta, current[end - 1].omega + 6.0 * eta);
        let (omega, values): (Vec<f64>, Vec<f64>) = density
            .omega
            .iter()
            .zip(&density.values)
            .filter(|(w, _)| (lo..=hi).contains(*w))
            .map(|(&w, &d)| {
                let others: f64 = current
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| !(start..end).contains(j))
                    .map(|(_, a)| a.eval(w))
                    .sum();
                (w, d - others)
            })
            .unzip();
        let cluster = SparseSpectrum::new(merge_peaks(&current[start..end], f64::INFINITY), 0.0)?;
        let refined = if omega.len() > 3 * cluster.len() {
            sparse::refine_nls(&cluster, &SampledSpectrum::new(omega, values)?, iters).ok()
        } else {
            None
        };
        let replacement = match refined {
            Some(r) => {
                converged &= r.converged;
                r.spectrum.atoms
            }
            None => {
                converged = false;
                cluster.atoms
            }
        };
        let len = replacement.len();
        current.splice(start..end, replacement);
        start += len;
    }
    Ok((current, converged))
}

/// Combines atoms whose centers lie within `radius`, keeping total area and
/// the area-weighted center.
fn merge_peaks(atoms: &[LorentzianAtom], radius: f64) -> Vec<LorentzianAtom> {
    let mut out: Vec<LorentzianAtom> = Vec::new();
    for a in atoms {
        match out.last_mut() {
            Some(last) if (a.omega - last.omega).abs() < radius => {
                let (wa, wl) = (a.area(), last.area());
                let omega = (a.omega * wa + last.omega * wl) / (wa + wl);
                let gamma = (a.gamma * wa + last.gamma * wl) / (wa + wl);
                *last = LorentzianAtom {
                    omega,
                    gamma,
                    amp: (wa + wl) / (std::f64::consts::PI * gamma),
                };
            }
            _ => out.push(*a),
        }
    }
    out
}
