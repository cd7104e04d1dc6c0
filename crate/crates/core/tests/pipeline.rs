use std::path::PathBuf;

use nalgebra::{DMatrix, SymmetricEigen};
use qsr::lanczos::DenseSymmetric;
use qsr::pade::SeriesCoeffs;
use qsr::pipeline::synth::{changepoint_pipeline, changepoint_signal, ChangepointSpec};
use qsr::pipeline::{
    auto_order_sweep, detect_anomalies, window_starts, Backend, PadeOrder, Pipeline, PipelineConfig, SparseSettings,
};
use qsr::rules::{parse_rules, replay};
use qsr::signal::TimeSeries;
use qsr::symbolic::{AxisBins, BinningConfig};
use qsr::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn binning() -> BinningConfig {
    BinningConfig {
        omega_bins: AxisBins::new(vec![0.0, 2.5], vec!["low", "high"]).unwrap(),
        gamma_bins: AxisBins::new(vec![0.0, 0.5], vec!["narrow", "broad"]).unwrap(),
        amp_bins: AxisBins::new(vec![0.0, 1.0], vec!["weak", "strong"]).unwrap(),
        negligible_eps: 1e-6,
    }
}

fn config(backend: Backend) -> PipelineConfig {
    PipelineConfig {
        preprocess: Default::default(),
        autocorr_max_lag: None,
        backend,
        pade: PadeOrder::Auto {
            n_max: 6,
            residual_tol: 1e-8,
        },
        lanczos: Default::default(),
        sparse: Default::default(),
        binning: binning(),
        rules_path: PathBuf::from("unused.rules"),
        seed: 7,
    }
}

fn pipeline(backend: Backend, rules: &str) -> Pipeline {
    Pipeline::new(config(backend), parse_rules(rules).unwrap()).unwrap()
}

fn damped_cosine(gamma: f64, omega: f64, n: usize) -> TimeSeries {
    TimeSeries::from_fn(n, 0.05, |t| (-gamma * t).exp() * (omega * t).cos()).unwrap()
}

#[test]
fn unstable_resonance_is_derived() {
    let p = pipeline(Backend::MatrixPencil, "resonance_high & width_narrow => unstable_resonance");
    let out = p.run(&damped_cosine(0.2, 3.0, 200)).unwrap();
    assert!(out.derived.contains_name("unstable_resonance"), "{:?}", out.predicates);
    assert!(out.derived.names().is_superset(&out.predicates.names()));
    assert!(replay(&out.trace, &out.predicates, &p.rules));
}

#[test]
fn zero_signal_yields_nothing() {
    for backend in [Backend::MatrixPencil, Backend::PadeZ] {
        let p = pipeline(backend, "resonance_high => alarm");
        let out = p.run(&TimeSeries::new(vec![0.0; 64], 0.1).unwrap()).unwrap();
        assert!(out.atoms.is_empty());
        assert!(out.predicates.is_empty());
        assert!(out.derived.is_empty());
        assert!(out.trace.is_empty());
    }
}

#[test]
fn backends_agree_on_one_mode() {
    let x = damped_cosine(0.3, 2.0, 128);
    let a = pipeline(Backend::PadeZ, "").run(&x).unwrap();
    let b = pipeline(Backend::MatrixPencil, "").run(&x).unwrap();
    assert_eq!(a.predicates, b.predicates);
    assert_eq!(a.atoms.len(), 1);
    let (pa, pb) = (a.atoms.atoms[0], b.atoms.atoms[0]);
    assert!((pa.omega - pb.omega).abs() < 1e-3 * pb.omega);
    assert!((pa.gamma - pb.gamma).abs() < 1e-3 * pb.gamma);
    let order = a.diagnostics.pade_order.unwrap();
    assert_eq!((order.m, order.n), (1, 2));
    assert!(order.converged);
}

#[test]
fn runs_are_byte_identical() {
    let x = damped_cosine(0.3, 2.0, 128);
    for backend in [Backend::PadeZ, Backend::MatrixPencil] {
        let p = pipeline(backend, "resonance_low & !width_broad => slow_ring");
        let a = serde_json::to_string(&p.run(&x).unwrap()).unwrap();
        let b = serde_json::to_string(&p.run(&x).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn lanczos_backend_rejects_time_series_and_vice_versa() {
    let lz = pipeline(Backend::Lanczos, "");
    assert!(matches!(lz.run(&damped_cosine(0.3, 2.0, 64)), Err(Error::Config(_))));
    let mp = pipeline(Backend::MatrixPencil, "");
    let h = DenseSymmetric::diagonal(&[1.0, 5.0]).unwrap();
    assert!(matches!(mp.run_hermitian(&h, &[1.0, 0.0]), Err(Error::Config(_))));
}

#[test]
fn stage_errors_carry_the_stage_name() {
    let mut cfg = config(Backend::MatrixPencil);
    cfg.preprocess.zero_pad_to = Some(10);
    let p = Pipeline::new(cfg, parse_rules("").unwrap()).unwrap();
    let err = p.run(&damped_cosine(0.3, 2.0, 64)).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "preprocess", .. }), "{err:?}");
    assert!(!err.is_numeric());
}

#[test]
fn invalid_orders_are_rejected() {
    let mut cfg = config(Backend::PadeZ);
    cfg.pade = PadeOrder::Fixed { m: 65, n: 2 };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = config(Backend::Lanczos);
    cfg.lanczos.k = Some(3);
    let p = Pipeline::new(cfg, parse_rules("").unwrap()).unwrap();
    let h = DenseSymmetric::diagonal(&[1.0, 5.0]).unwrap();
    assert!(matches!(p.run_hermitian(&h, &[1.0, 1.0]), Err(Error::Stage { .. })));
}

#[test]
fn config_file_resolves_rules_next_to_it() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("alarm.rules"), "resonance_high & width_narrow => unstable_resonance\n").unwrap();
    let mut cfg = config(Backend::MatrixPencil);
    cfg.rules_path = PathBuf::from("alarm.rules");
    let path = dir.path().join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let p = Pipeline::load(&path).unwrap();
    assert_eq!(p.rules.len(), 1);
    assert!(p.run(&damped_cosine(0.2, 3.0, 200)).unwrap().derived.contains_name("unstable_resonance"));

    std::fs::write(dir.path().join("alarm.rules"), "!a => b\n!b => a\n").unwrap();
    assert!(Pipeline::load(&path).is_err());
}

#[test]
fn config_json_defaults() {
    let text = r#"{
        "backend": "pade_z",
        "pade": {"m": 1, "n": 2},
        "binning": {
            "omega_bins": {"edges": [0.0], "labels": ["any"]},
            "gamma_bins": {"edges": [0.0], "labels": ["any"]},
            "amp_bins": {"edges": [0.0], "labels": ["any"]},
            "negligible_eps": 0.01
        },
        "rules_path": "r.rules"
    }"#;
    let cfg: PipelineConfig = serde_json::from_str(text).unwrap();
    assert_eq!(cfg.pade, PadeOrder::Fixed { m: 1, n: 2 });
    assert_eq!(cfg.sparse, SparseSettings::default());
    assert!(serde_json::from_str::<PipelineConfig>(&text.replace("\"pade_z\"", "\"fft\"")).is_err());
}

#[test]
fn auto_sweep_picks_one_pole() {
    let c = SeriesCoeffs::new((0..20).map(|k| 0.8f64.powi(k)).collect()).unwrap();
    let choice = auto_order_sweep(&c, 6, 1e-10).unwrap();
    assert_eq!((choice.m, choice.n), (0, 1));
    assert!(choice.converged);
}

#[test]
fn auto_sweep_infinite_tolerance_takes_first() {
    let c = SeriesCoeffs::new(vec![1.0, -2.0, 0.3, 5.0, 1.1, -0.7]).unwrap();
    let choice = auto_order_sweep(&c, 3, f64::INFINITY).unwrap();
    assert_eq!((choice.m, choice.n), (0, 1));
}

#[test]
fn auto_sweep_on_noise_falls_back() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = SeriesCoeffs::new((0..64).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let choice = auto_order_sweep(&c, 8, 1e-8).unwrap();
    assert!(!choice.converged);
    assert!(choice.residual > 1e-8 * c.norm());
}

fn lanczos_pipeline(eta: f64, k_max: usize) -> Pipeline {
    let mut cfg = config(Backend::Lanczos);
    cfg.lanczos.eta = eta;
    cfg.sparse.k_max = k_max;
    cfg.sparse.omp_tol = 1e-6;
    Pipeline::new(cfg, parse_rules("").unwrap()).unwrap()
}

#[test]
fn hermitian_two_level() {
    let p = lanczos_pipeline(0.05, 4);
    let h = DenseSymmetric::diagonal(&[1.0, 5.0]).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let out = p.run_hermitian(&h, &[s, s]).unwrap();
    assert_eq!(out.atoms.len(), 2, "{:?}", out.atoms);
    for (a, w0) in out.atoms.atoms.iter().zip([1.0, 5.0]) {
        assert!((a.omega - w0).abs() < 0.005, "{a:?}");
        assert!((a.amp - 0.5).abs() < 0.01, "{a:?}");
        assert!(a.gamma <= 0.01);
    }
}

#[test]
fn hermitian_eigenvector_start() {
    let p = lanczos_pipeline(0.05, 4);
    let h = DenseSymmetric::from_rows(vec![vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let out = p.run_hermitian(&h, &[s, s]).unwrap();
    assert_eq!(out.atoms.len(), 1);
    assert!((out.atoms.atoms[0].omega - 3.0).abs() < 1e-6);
    assert!((out.atoms.atoms[0].amp - 1.0).abs() < 1e-6);
    assert_eq!(out.diagnostics.lanczos_breakdown, Some(true));
}

#[test]
fn hermitian_random_fifty() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let n = 50;
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    let lambdas: Vec<f64> = (0..n).map(|i| 0.5 * i as f64 + rng.random_range(0.0..0.2)).collect();
    let a = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lambdas)) * q.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).iter().copied().collect()).collect();
    let h = DenseSymmetric::from_rows(rows).unwrap();
    let dense = SymmetricEigen::new(a).eigenvalues;

    let eta = 0.05;
    let p = lanczos_pipeline(eta, 2 * n);
    let q1 = vec![1.0 / (n as f64).sqrt(); n];
    let out = p.run_hermitian(&h, &q1).unwrap();
    assert!(!out.atoms.is_empty());
    for atom in &out.atoms.atoms {
        let nearest = dense.iter().map(|l| (l - atom.omega).abs()).fold(f64::INFINITY, f64::min);
        assert!(nearest < eta / 10.0, "atom {atom:?} is {nearest} from the spectrum");
    }
    let mass: f64 = out.atoms.atoms.iter().map(|a| a.amp).sum();
    assert!((mass - 1.0).abs() < 0.02, "total weight {mass}");
}

#[test]
fn windows_cover_every_stride() {
    assert_eq!(window_starts(1000, 100, 30).len(), (1000 - 100) / 30 + 1);
    let p = pipeline(Backend::MatrixPencil, "");
    let x = damped_cosine(0.1, 2.0, 100);
    assert!(matches!(detect_anomalies(&x, &p, 101, 1, "a"), Err(Error::Argument(_))));
    assert!(matches!(detect_anomalies(&x, &p, 50, 0, "a"), Err(Error::Argument(_))));
}

#[test]
fn changepoint_first_flag_is_first_window_with_jump() {
    let window = 2048;
    let spec = ChangepointSpec {
        change_at: Some(4 * window),
        ..Default::default()
    };
    let p = changepoint_pipeline(1.05 * spec.omega, 60).unwrap();
    let x = changepoint_signal(&spec, 21).unwrap();
    let hits = detect_anomalies(&x, &p, window, window, "anomaly").unwrap();
    assert_eq!(hits.first().map(|h| h.start), Some(4 * window));
    assert!(hits.iter().all(|h| h.start % window == 0));

    let clean = changepoint_signal(&ChangepointSpec::default(), 21).unwrap();
    assert!(detect_anomalies(&clean, &p, window, window / 4, "anomaly").unwrap().is_empty());
}
