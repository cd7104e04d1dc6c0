//! Seeded oscillator generators, the reference benchmark and the changepoint
//! harness signals.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Backend, PadeOrder, Pipeline, PipelineConfig, SparseSettings};
use crate::error::{Error, Result};
use crate::rules::{self, RuleSet};
use crate::signal::TimeSeries;
use crate::symbolic::{AxisBins, BinningConfig, SymbolSet};

/// Generator for sample `index` of an experiment seeded with `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A 64-bit seed for sample `index`, drawn from its own stream.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    stream_rng(seed, index).next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    UnderdampedLow,
    UnderdampedHigh,
    Overdamped,
    NearCritical,
    TwoModeClose,
    TwoModeFar,
    HighQ,
    NoisyNegligible,
}

impl Regime {
    pub const ALL: [Regime; 8] = [
        Regime::UnderdampedLow,
        Regime::UnderdampedHigh,
        Regime::Overdamped,
        Regime::NearCritical,
        Regime::TwoModeClose,
        Regime::TwoModeFar,
        Regime::HighQ,
        Regime::NoisyNegligible,
    ];

    /// Predicate name the benchmark rules derive for this regime.
    pub fn label(self) -> &'static str {
        match self {
            Regime::UnderdampedLow => "underdamped_low",
            Regime::UnderdampedHigh => "underdamped_high",
            Regime::Overdamped => "overdamped",
            Regime::NearCritical => "near_critical",
            Regime::TwoModeClose => "two_mode_close",
            Regime::TwoModeFar => "two_mode_far",
            Regime::HighQ => "high_q",
            Regime::NoisyNegligible => "noisy_negligible",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.label() == s)
            .ok_or_else(|| Error::Argument(format!("unknown regime `{s}`")))
    }
}

/// Closed interval sampled uniformly.
pub type Interval = [f64; 2];

fn draw(rng: &mut impl Rng, [lo, hi]: Interval) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Ranges for one damped mode `a e^{−γt}(cos ωt + (γ/ω) sin ωt)`, which
/// starts at `x(0) = a` with zero velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeBox {
    pub omega: Interval,
    pub gamma: Interval,
    pub amp: Interval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegimeShape {
    /// Sum of one or two underdamped modes.
    Damped { modes: Vec<ModeBox> },
    /// `a (f e^{−st} − s e^{−ft})/(f − s)`: released from `a` at rest with
    /// real decay rates `s < f`.
    Overdamped { slow: Interval, fast: Interval, amp: Interval },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub dt: f64,
    pub regimes: BTreeMap<Regime, RegimeShape>,
}

impl Default for SynthParams {
    fn default() -> Self {
        let mode = |omega, gamma, amp| ModeBox { omega, gamma, amp };
        let drive = [0.8, 1.2];
        let regimes = BTreeMap::from([
            (
                Regime::UnderdampedLow,
                RegimeShape::Damped {
                    modes: vec![mode([1.0, 2.0], [0.1, 0.3], drive)],
                },
            ),
            (
                Regime::UnderdampedHigh,
                RegimeShape::Damped {
                    modes: vec![mode([8.0, 12.0], [0.1, 0.3], drive)],
                },
            ),
            (
                Regime::Overdamped,
                RegimeShape::Overdamped {
                    slow: [0.2, 0.5],
                    fast: [2.0, 4.0],
                    amp: drive,
                },
            ),
            (
                Regime::NearCritical,
                RegimeShape::Damped {
                    modes: vec![mode([0.5, 1.0], [1.0, 1.5], drive)],
                },
            ),
            (
                Regime::TwoModeClose,
                RegimeShape::Damped {
                    modes: vec![
                        mode([3.5, 4.2], [0.05, 0.1], drive),
                        mode([4.8, 5.5], [0.05, 0.1], drive),
                    ],
                },
            ),
            (
                Regime::TwoModeFar,
                RegimeShape::Damped {
                    modes: vec![
                        mode([1.0, 2.0], [0.1, 0.3], drive),
                        mode([8.0, 12.0], [0.1, 0.3], drive),
                    ],
                },
            ),
            (
                Regime::HighQ,
                RegimeShape::Damped {
                    modes: vec![mode([8.0, 12.0], [0.005, 0.02], drive)],
                },
            ),
            (
                Regime::NoisyNegligible,
                RegimeShape::Damped {
                    modes: vec![mode([1.0, 12.0], [0.1, 0.3], [0.002, 0.01])],
                },
            ),
        ]);
        SynthParams { dt: 0.05, regimes }
    }
}

/// Minimum series length accepted by [`synth_oscillator`].
pub const MIN_SYNTH_LEN: usize = 64;

/// Draws one signal of `regime` with additive white Gaussian noise.
pub fn synth_oscillator(
    regime: Regime,
    params: &SynthParams,
    n: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<(TimeSeries, Regime)> {
    if n < MIN_SYNTH_LEN {
        return Err(Error::Argument(format!("synthetic series need n ≥ {MIN_SYNTH_LEN}, got {n}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Argument(format!("noise_sigma must be ≥ 0, got {noise_sigma}")));
    }
    let shape = params
        .regimes
        .get(&regime)
        .ok_or_else(|| Error::Config(format!("no parameter box for regime {regime}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = params.dt;
    let mut x = vec![0.0; n];
    match shape {
        RegimeShape::Damped { modes } => {
            for m in modes {
                let (w, g, a) = (draw(&mut rng, m.omega), draw(&mut rng, m.gamma), draw(&mut rng, m.amp));
                for (i, v) in x.iter_mut().enumerate() {
                    let t = i as f64 * dt;
                    *v += a * (-g * t).exp() * ((w * t).cos() + g / w * (w * t).sin());
                }
            }
        }
        RegimeShape::Overdamped { slow, fast, amp } => {
            let (s, f, a) = (draw(&mut rng, *slow), draw(&mut rng, *fast), draw(&mut rng, *amp));
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 * dt;
                *v = a * (f * (-s * t).exp() - s * (-f * t).exp()) / (f - s);
            }
        }
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite nonnegative sigma");
        x.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    let ts = TimeSeries::with_label(x, dt, Some(regime.label().to_owned()))?;
    Ok((ts, regime))
}

/// Reference rules: each regime's label is derived from its own predicate
/// combination, and at most one label fires on a clean sample.
pub const BENCHMARK_RULES: &str = "\
resonance_low & resonance_high => multi_mode @multi_far
resonance_mid_a & resonance_mid_b => multi_mode @multi_close
resonance_low & resonance_high => two_mode_far @far
resonance_mid_a & resonance_mid_b => two_mode_close @close
amplitude_weak => significant @weak
amplitude_strong => significant @strong
!significant => noisy_negligible @negligible
resonance_high & width_narrow & !multi_mode => high_q @high_q
resonance_high & width_moderate & !multi_mode & !width_narrow => underdamped_high @ud_high
resonance_low & width_moderate & !multi_mode & !width_broad => underdamped_low @ud_low
width_broad & !multi_mode & !resonance_high => near_critical @near_critical
resonance_zero & width_moderate & !multi_mode & !width_broad & !resonance_low & !resonance_high => overdamped @overdamped
";

pub fn benchmark_rules() -> RuleSet {
    rules::parse_rules(BENCHMARK_RULES).expect("reference rules parse")
}

pub fn benchmark_binning() -> BinningConfig {
    BinningConfig {
        omega_bins: AxisBins::new(
            vec![0.0, 0.25, 3.0, 4.5, 6.5],
            vec!["zero", "low", "mid_a", "mid_b", "high"],
        )
        .expect("static bins"),
        gamma_bins: AxisBins::new(vec![0.0, 0.04, 0.7], vec!["narrow", "moderate", "broad"]).expect("static bins"),
        amp_bins: AxisBins::new(vec![0.0, 2.0], vec!["weak", "strong"]).expect("static bins"),
        negligible_eps: 0.25,
    }
}

const FLOOR: f64 = 4.0;

/// Matrix-pencil pipeline with the reference bins; `rules_path` is nominal.
pub fn benchmark_config() -> PipelineConfig {
    PipelineConfig {
        preprocess: Default::default(),
        autocorr_max_lag: None,
        backend: Backend::MatrixPencil,
        pade: PadeOrder::default(),
        lanczos: Default::default(),
        sparse: SparseSettings {
            k_max: 2,
            sv_tol: 0.05,
            noise_floor: Some(FLOOR),
            ..Default::default()
        },
        binning: benchmark_binning(),
        rules_path: PathBuf::from("benchmark.rules"),
        seed: 0,
    }
}

pub fn benchmark_pipeline() -> Pipeline {
    Pipeline::new(benchmark_config(), benchmark_rules()).expect("reference config is valid")
}

/// The regime whose label is the only regime label in `derived`.
pub fn classify(derived: &SymbolSet) -> Option<Regime> {
    let mut hits = Regime::ALL.into_iter().filter(|r| derived.contains_name(r.label()));
    match (hits.next(), hits.next()) {
        (Some(r), None) => Some(r),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub samples: usize,
    pub n: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            samples: 500,
            n: 256,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Label used in the confusion matrix when no single class is derived.
pub const UNCLASSIFIED: &str = "unclassified";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub correct: usize,
    pub accuracy: f64,
    /// Samples assigned a class other than their own.
    pub misclassified: usize,
    pub unclassified: usize,
    /// Samples whose proof trace replays against their predicates.
    pub traces_valid: usize,
    /// Samples whose run failed; counted as unclassified.
    pub failures: usize,
    /// `confusion[truth][predicted]`.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

/// Sample `i` uses regime `ALL[i mod 8]` and seed `substream_seed(seed, i)`.
pub fn run_benchmark(pipeline: &Pipeline, params: &SynthParams, cfg: &BenchConfig) -> Result<BenchReport> {
    let outcomes: Vec<(Regime, Option<Regime>, bool, bool)> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let regime = Regime::ALL[i % Regime::ALL.len()];
            let (x, truth) = synth_oscillator(regime, params, cfg.n, cfg.noise_sigma, substream_seed(cfg.seed, i as u64))?;
            Ok(match pipeline.run(&x) {
                Ok(r) => {
                    let valid = rules::replay(&r.trace, &r.predicates, &pipeline.rules);
                    (truth, classify(&r.derived), valid, false)
                }
                Err(e) if e.is_numeric() => (truth, None, false, true),
                Err(e) => return Err(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let (mut correct, mut misclassified, mut unclassified, mut traces_valid, mut failures) = (0, 0, 0, 0, 0);
    for (truth, predicted, valid, failed) in outcomes {
        match predicted {
            Some(p) if p == truth => correct += 1,
            Some(_) => misclassified += 1,
            None => unclassified += 1,
        }
        traces_valid += valid as usize;
        failures += failed as usize;
        let col = predicted.map_or(UNCLASSIFIED, Regime::label);
        *confusion
            .entry(truth.label().to_owned())
            .or_default()
            .entry(col.to_owned())
            .or_default() += 1;
    }
    Ok(BenchReport {
        config: cfg.clone(),
        correct,
        accuracy: if cfg.samples == 0 { 0.0 } else { correct as f64 / cfg.samples as f64 },
        misclassified,
        unclassified,
        traces_valid,
        failures,
        confusion,
    })
}

/// Stationary stochastic oscillator: an AR(2) process with poles
/// `e^{(−γ ± iω)Δt}` driven by unit white noise. From `change_at` on, the
/// frequency becomes `omega·shift`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangepointSpec {
    pub n: usize,
    pub dt: f64,
    pub omega: f64,
    pub gamma: f64,
    pub shift: f64,
    pub change_at: Option<usize>,
}

impl Default for ChangepointSpec {
    fn default() -> Self {
        ChangepointSpec {
            n: 16384,
            dt: 0.05,
            omega: 6.0,
            gamma: 0.1,
            shift: 1.2,
            change_at: None,
        }
    }
}

const AR_BURN_IN: usize = 500;

pub fn changepoint_signal(spec: &ChangepointSpec, seed: u64) -> Result<TimeSeries> {
    if spec.n < 2 || !(spec.dt > 0.0 && spec.gamma > 0.0 && spec.omega > 0.0 && spec.shift > 0.0) {
        return Err(Error::Argument("changepoint signal needs n ≥ 2 and positive dt, ω, γ, shift".into()));
    }
    let r = (-spec.gamma * spec.dt).exp();
    let coeffs = |omega: f64| (2.0 * r * (omega * spec.dt).cos(), -r * r);
    let before = coeffs(spec.omega);
    let after = coeffs(spec.omega * spec.shift);
    let change = spec.change_at.unwrap_or(usize::MAX);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (mut x1, mut x2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(spec.n);
    for i in 0..AR_BURN_IN + spec.n {
        let (a1, a2) = if i >= AR_BURN_IN + change.min(usize::MAX - AR_BURN_IN) { after } else { before };
        let x = a1 * x1 + a2 * x2 + normal.sample(&mut rng);
        x2 = x1;
        x1 = x;
        if i >= AR_BURN_IN {
            out.push(x);
        }
    }
    TimeSeries::new(out, spec.dt)
}

/// Pencil-on-autocorrelation pipeline that derives `anomaly` when the
/// dominant frequency reaches `threshold`.
pub fn changepoint_pipeline(threshold: f64, max_lag: usize) -> Result<Pipeline> {
    let any = || AxisBins::new(vec![0.0], vec!["any"]);
    let config = PipelineConfig {
        preprocess: crate::signal::PreprocessConfig {
            detrend: true,
            ..Default::default()
        },
        autocorr_max_lag: Some(max_lag),
        backend: Backend::MatrixPencil,
        pade: PadeOrder::default(),
        lanczos: Default::default(),
        sparse: SparseSettings {
            k_max: 1,
            ..Default::default()
        },
        binning: BinningConfig {
            omega_bins: AxisBins::new(vec![0.0, threshold], vec!["nominal", "shifted"])?,
            gamma_bins: any()?,
            amp_bins: any()?,
            negligible_eps: 1e-12,
        },
        rules_path: PathBuf::from("changepoint.rules"),
        seed: 0,
    };
    Pipeline::new(config, rules::parse_rules("resonance_shifted => anomaly")?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn underdamped_starts_at_drive_amplitude() {
        let params = SynthParams::default();
        let (x, label) = synth_oscillator(Regime::UnderdampedLow, &params, 128, 0.0, 3).unwrap();
        assert_eq!(label, Regime::UnderdampedLow);
        let s = x.samples();
        assert!((0.8..=1.2).contains(&s[0]));
        // zero initial velocity: the first difference is second order in dt
        assert!((s[1] - s[0]).abs() < 0.01 * s[0]);
    }

    #[test]
    fn deterministic_given_seed() {
        let params = SynthParams::default();
        for r in Regime::ALL {
            let a = synth_oscillator(r, &params, 64, 0.05, 11).unwrap().0;
            let b = synth_oscillator(r, &params, 64, 0.05, 11).unwrap().0;
            assert_eq!(a, b);
        }
        let c = synth_oscillator(Regime::HighQ, &params, 64, 0.05, 12).unwrap().0;
        assert_ne!(c, synth_oscillator(Regime::HighQ, &params, 64, 0.05, 11).unwrap().0);
    }

    #[test]
    fn rejects_short_series() {
        assert!(synth_oscillator(Regime::HighQ, &SynthParams::default(), 63, 0.0, 0).is_err());
    }

    #[test]
    fn regime_labels_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.label().parse::<Regime>().unwrap(), r);
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{}\"", r.label()));
        }
    }

    #[test]
    fn noiseless_samples_classify() {
        let pipeline = benchmark_pipeline();
        let params = SynthParams::default();
        for (i, r) in Regime::ALL.into_iter().enumerate() {
            for s in 0..4 {
                let (x, truth) = synth_oscillator(r, &params, 256, 0.0, (10 * i + s) as u64).unwrap();
                let out = pipeline.run(&x).unwrap();
                assert_eq!(classify(&out.derived), Some(truth), "{r}: {:?} {:?}", out.atoms, out.predicates);
            }
        }
    }

    #[test]
    fn changepoint_signal_switches_frequency() {
        let spec = ChangepointSpec {
            change_at: Some(100),
            ..Default::default()
        };
        let a = changepoint_signal(&spec, 5).unwrap();
        let b = changepoint_signal(&ChangepointSpec { change_at: None, ..spec.clone() }, 5).unwrap();
        assert_eq!(a.samples()[..100], b.samples()[..100]);
        assert_ne!(a.samples()[100], b.samples()[100]);
    }
}
