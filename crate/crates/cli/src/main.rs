use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qsr::lanczos::DenseSymmetric;
use qsr::pipeline::synth::{
    benchmark_binning, benchmark_pipeline, run_benchmark, substream_seed, synth_oscillator, BenchConfig, Regime,
    SynthParams,
};
use qsr::pipeline::{detect_anomalies, Backend, PadeOrder, Pipeline, PipelineConfig};
use qsr::rules::{infer, RuleSet};
use qsr::signal::TimeSeries;
use qsr::sparse::{linspace, SparseSpectrum};
use qsr::symbolic::{project, SymbolSet};
use qsr::{Error, Result};
use serde_json::Value;

/// Spectral estimation, symbolic projection and rule-based reasoning over
/// time-domain signals.
#[derive(Parser)]
#[command(name = "qsr", version)]
struct Cli {
    /// Seed recorded in the pipeline config and used by `synth` and `bench`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate Lorentzian atoms from a signal (or a matrix with the lanczos back-end).
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
        /// Also write the fitted spectrum as `omega,S` CSV.
        #[arg(long)]
        spectrum: Option<PathBuf>,
        /// Frequency range of the CSV grid as `lo:hi`; defaults to the atoms' span.
        #[arg(long, value_parser = parse_range)]
        omega_range: Option<(f64, f64)>,
        #[arg(long, default_value_t = 512)]
        points: usize,
    },
    /// Map atoms (JSON) to predicates using the configured bins.
    Project {
        #[arg(long)]
        atoms: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Forward-chain a rule file from a JSON array of facts.
    Reason {
        #[arg(long)]
        facts: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Full pipeline: estimate, project, reason.
    Run {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Sliding-window scan reporting windows that derive the alert predicate.
    Detect {
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        window: usize,
        #[arg(long)]
        stride: usize,
        #[arg(long, default_value = "anomaly")]
        alert: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Generate labelled oscillator signals; sample `i` matches benchmark sample `i`.
    Synth {
        #[command(flatten)]
        gen: GenArgs,
        /// Only this regime instead of cycling through all eight.
        #[arg(long)]
        regime: Option<Regime>,
        /// Write one JSON file per sample here instead of a JSON array.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Classify generated signals and report accuracy and the confusion matrix.
    Bench {
        #[command(flatten)]
        gen: GenArgs,
        /// Pipeline config to evaluate instead of the built-in benchmark pipeline.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InputArgs {
    /// Signal as CSV (`t,value`) or JSON (`{dt, samples, label}`).
    #[arg(long)]
    signal: Option<PathBuf>,
    /// Symmetric matrix (JSON rows or CSV) for the lanczos back-end.
    #[arg(long)]
    matrix: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline JSON config. Without it: matrix pencil, benchmark bins, no rules.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rule file, overriding `rules_path`.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// pade_z, lanczos or matrix_pencil.
    #[arg(long, value_parser = parse_backend)]
    backend: Option<Backend>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Fixed Padé order `m/n`.
    #[arg(long, value_parser = parse_order)]
    pade_order: Option<(usize, usize)>,
    #[arg(long)]
    sv_tol: Option<f64>,
    #[arg(long)]
    noise_floor: Option<f64>,
    #[arg(long)]
    autocorr_lag: Option<usize>,
    /// Lanczos steps (defaults to the matrix dimension).
    #[arg(long)]
    lanczos_k: Option<usize>,
    /// Lanczos broadening.
    #[arg(long)]
    eta: Option<f64>,
    /// Lanczos start vector as a JSON array (default: uniform).
    #[arg(long)]
    start: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 500)]
    samples: usize,
    /// Samples per signal.
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Regime parameter boxes (JSON); defaults to the shipped boxes.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct OutArg {
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn parse_backend(s: &str) -> std::result::Result<Backend, String> {
    serde_json::from_value(Value::String(s.to_owned())).map_err(|_| format!("unknown back-end `{s}`"))
}

fn parse_order(s: &str) -> std::result::Result<(usize, usize), String> {
    let (m, n) = s.split_once('/').ok_or("expected m/n")?;
    Ok((m.trim().parse().map_err(|e| format!("{e}"))?, n.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    let (lo, hi): (f64, f64) = (lo.parse().map_err(|e| format!("{e}"))?, hi.parse().map_err(|e| format!("{e}"))?);
    if lo < hi {
        Ok((lo, hi))
    } else {
        Err(format!("empty range {lo}:{hi}"))
    }
}

fn default_config() -> PipelineConfig {
    PipelineConfig {
        preprocess: Default::default(),
        autocorr_max_lag: None,
        backend: Backend::MatrixPencil,
        pade: PadeOrder::default(),
        lanczos: Default::default(),
        sparse: Default::default(),
        binning: benchmark_binning(),
        rules_path: PathBuf::new(),
        seed: 0,
    }
}

impl ConfigArgs {
    fn pipeline(&self, seed: Option<u64>) -> Result<Pipeline> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p).map_err(at(p))?,
            None => default_config(),
        };
        if let Some(b) = self.backend {
            cfg.backend = b;
        }
        if let Some(k) = self.k_max {
            cfg.sparse.k_max = k;
        }
        if let Some((m, n)) = self.pade_order {
            cfg.pade = PadeOrder::Fixed { m, n };
        }
        if let Some(t) = self.sv_tol {
            cfg.sparse.sv_tol = t;
        }
        if self.noise_floor.is_some() {
            cfg.sparse.noise_floor = self.noise_floor;
        }
        if self.autocorr_lag.is_some() {
            cfg.autocorr_max_lag = self.autocorr_lag;
        }
        if self.lanczos_k.is_some() {
            cfg.lanczos.k = self.lanczos_k;
        }
        if let Some(eta) = self.eta {
            cfg.lanczos.eta = eta;
        }
        if let Some(r) = &self.rules {
            cfg.rules_path = r.clone();
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let rules = if cfg.rules_path.as_os_str().is_empty() {
            RuleSet::empty()
        } else {
            RuleSet::load(&cfg.rules_path).map_err(at(&cfg.rules_path))?
        };
        Pipeline::new(cfg, rules)
    }

    fn start_vector(&self, dim: usize) -> Result<Vec<f64>> {
        match &self.start {
            Some(p) => Ok(serde_json::from_reader(open(p)?)?),
            None => Ok(vec![1.0 / (dim as f64).sqrt(); dim]),
        }
    }
}

impl InputArgs {
    fn run(&self, pipeline: &Pipeline, config: &ConfigArgs) -> Result<qsr::pipeline::RunResult> {
        match (&self.signal, &self.matrix) {
            (Some(s), _) => pipeline.run(&TimeSeries::load(s).map_err(at(s))?),
            (None, Some(m)) => {
                let op = DenseSymmetric::load(m).map_err(at(m))?;
                let dim = op.rows().count();
                pipeline.run_hermitian(&op, &config.start_vector(dim)?)
            }
            (None, None) => Err(Error::Argument("give --signal or --matrix".into())),
        }
    }
}

impl GenArgs {
    fn params(&self) -> Result<SynthParams> {
        match &self.params {
            Some(p) => Ok(serde_json::from_reader(open(p)?)?),
            None => Ok(SynthParams::default()),
        }
    }

    fn bench_config(&self, seed: Option<u64>) -> BenchConfig {
        BenchConfig {
            samples: self.samples,
            n: self.n,
            noise_sigma: self.noise,
            seed: seed.unwrap_or(0),
        }
    }
}

impl OutArg {
    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(create(p)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    fn json<T: serde::Serialize>(&self, value: &T) -> Result<()> {
        write_json(self.writer()?, value)
    }
}

/// Names the file in I/O errors, which otherwise only carry the OS message.
fn at(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| at(path)(e.into()))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| at(path)(e.into()))
}

fn write_json<T: serde::Serialize>(mut w: impl Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(io::BufReader::new(open(path)?))?)
}

/// Default CSV grid: every atom's center ± 10 widths, clipped below at 0
/// unless an atom sits at negative frequency.
fn spectrum_range(sp: &SparseSpectrum) -> (f64, f64) {
    let lo = sp.atoms.iter().map(|a| a.omega - 10.0 * a.gamma).fold(f64::INFINITY, f64::min);
    let hi = sp.atoms.iter().map(|a| a.omega + 10.0 * a.gamma).fold(f64::NEG_INFINITY, f64::max);
    if sp.is_empty() {
        (0.0, 1.0)
    } else {
        (if sp.atoms.iter().all(|a| a.omega >= 0.0) { lo.max(0.0) } else { lo }, hi)
    }
}

fn execute(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Estimate { input, config, out, spectrum, omega_range, points } => {
            let pipeline = config.pipeline(seed)?;
            let atoms = input.run(&pipeline, &config)?.atoms;
            if let Some(path) = spectrum {
                let (lo, hi) = omega_range.unwrap_or_else(|| spectrum_range(&atoms));
                atoms.sample(&linspace(lo, hi, points.max(2))).write_csv(BufWriter::new(create(&path)?))?;
            }
            out.json(&atoms)
        }
        Command::Project { atoms, config, out } => {
            let pipeline = config.pipeline(seed)?;
            let sp: SparseSpectrum = read_json(&atoms)?;
            let sp = SparseSpectrum::new(sp.atoms, sp.residual_norm)?;
            out.json(&project(&sp, &pipeline.config.binning)?)
        }
        Command::Reason { facts, config, out } => {
            let pipeline = config.pipeline(seed)?;
            let facts: SymbolSet = read_json(&facts)?;
            out.json(&infer(&pipeline.rules, &facts)?)
        }
        Command::Run { input, config, out } => {
            let pipeline = config.pipeline(seed)?;
            out.json(&input.run(&pipeline, &config)?)
        }
        Command::Detect { signal, window, stride, alert, config, out } => {
            let pipeline = config.pipeline(seed)?;
            let x = TimeSeries::load(&signal).map_err(at(&signal))?;
            out.json(&detect_anomalies(&x, &pipeline, window, stride, &alert)?)
        }
        Command::Synth { gen, regime, out_dir, out } => {
            let params = gen.params()?;
            let cfg = gen.bench_config(seed);
            let series = (0..cfg.samples)
                .map(|i| {
                    let r = regime.unwrap_or(Regime::ALL[i % Regime::ALL.len()]);
                    synth_oscillator(r, &params, cfg.n, cfg.noise_sigma, substream_seed(cfg.seed, i as u64)).map(|(x, _)| x)
                })
                .collect::<Result<Vec<_>>>()?;
            match out_dir {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    for (i, x) in series.iter().enumerate() {
                        let name = format!("{i:05}_{}.json", x.label().unwrap_or("signal"));
                        write_json(BufWriter::new(create(&dir.join(name))?), x)?;
                    }
                    Ok(())
                }
                None => out.json(&series),
            }
        }
        Command::Bench { gen, config, out } => {
            let pipeline = match config {
                Some(p) => Pipeline::load(&p).map_err(at(&p))?,
                None => benchmark_pipeline(),
            };
            out.json(&run_benchmark(&pipeline, &gen.params()?, &gen.bench_config(seed))?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
