//! `dsk`: command-line access to the dyadic structure toolkit.
//!
//! Results go to `--output` (or stdout). File outputs get a sidecar
//! `<output>.manifest.json` holding the configuration, input hashes and crate
//! versions. Exit codes: 0 success, 1 input error, 2 failed check.

mod io;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dsk_core::analysis::{self, FupKernel, Theorem1Witness};
use dsk_core::generators::{self, CorpusSpec, WeightRule};
use dsk_core::sumsets::{self, EnergyPath};
use dsk_core::uniformize::{self, CountBandValue, DimensionValue, ParityValue, ValueFunction};
use dsk_core::{GridMeasure, GridSet, Rational, StructureReport};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use io::{emit, sha256_hex, to_pretty, write_file, Failure, Inputs, Outcome};

#[derive(Parser, Debug, Serialize)]
#[command(name = "dsk", version, about = "Additive structure of dyadic lattice sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Input JSON file.
    #[arg(long, global = true)]
    input: Option<PathBuf>,

    /// Output file (or directory for `generate --corpus`); stdout when absent.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Block length `L`.
    #[arg(short = 'L', long = "block", global = true, default_value_t = 3)]
    block: u32,

    #[arg(long, global = true, default_value_t = 0.25)]
    delta: f64,

    /// Energy exponent threshold; also enables the FUP exponent formula.
    #[arg(long, global = true)]
    sigma: Option<f64>,

    /// Porosity constant for the flattening check.
    #[arg(long, global = true)]
    rho: Option<f64>,

    /// Sumset order for `doubling`, flat dimension for the flattening check.
    #[arg(short = 'k', global = true)]
    k: Option<u32>,

    /// Overrides the exponent `q` of a theorem 1 witness.
    #[arg(short = 'q', global = true)]
    q: Option<f64>,

    /// Expected lattice exponent `m` of FUP inputs (`h = 2^{-m}`).
    #[arg(long, global = true)]
    h_exp: Option<u32>,

    /// Grassmannian net resolution.
    #[arg(long, global = true, default_value_t = 16)]
    net_res: usize,

    #[arg(long, global = true, value_enum, env = "DSK_DEFAULT_BACKEND", default_value_t = Backend::Rational)]
    backend: Backend,

    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Build a set (or measure) from a corpus spec, or the whole standard corpus.
    Generate {
        /// Write every standard corpus entry and a manifest into `--output`.
        #[arg(long)]
        corpus: bool,
        /// Emit a probability measure instead of a set.
        #[arg(long, value_enum)]
        measure: Option<MeasureRule>,
    },
    /// Additive energy `E(X, X)`.
    Energy {
        #[arg(long, value_enum, default_value_t = PathArg::Auto)]
        path: PathArg,
    },
    /// `A + B` (or `A + A`).
    Sumset {
        #[arg(long)]
        second: Option<PathBuf>,
    },
    /// Exact `|jA| <= K^j |A|` for `j = 2..=k`.
    Doubling,
    /// Uniform, centred or collapsed subsets.
    Uniformize {
        #[arg(long, value_enum, default_value_t = Mode::Plain)]
        mode: Mode,
        /// Value function for `--mode general`.
        #[arg(long, value_enum)]
        value: Option<ValueArg>,
        /// Scales to collapse for `--mode collapse`.
        #[arg(long, value_delimiter = ',')]
        scales: Vec<u32>,
    },
    /// Per-scale structure report of a uniform set.
    Analyze {
        /// Pass the input through the subspace-uniformizing pigeonhole first.
        #[arg(long)]
        uniformize: bool,
    },
    /// Operator norm of the discretized Fourier transform from `X` to `Y`.
    Fup {
        #[arg(long)]
        second: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = KernelArg::Midpoint)]
        kernel: KernelArg,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Energy threshold, uniformization and structure on one set.
    EnergyExperiment {
        /// Size exponent slack for the flattening check (requires `--rho`).
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
    },
    /// Check a ledger of conclusions.
    Verify {
        #[arg(long, value_parser = ["1", "2"])]
        theorem: String,
        /// Theorem 2: the set the subset came from.
        #[arg(long)]
        original: Option<PathBuf>,
        /// Theorem 2: a structure report to check instead of recomputing one.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Backend {
    Rational,
    Float,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MeasureRule {
    Uniform,
    Dyadic,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PathArg {
    Auto,
    Sparse,
    Dense,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Mode {
    Plain,
    General,
    Subspace,
    Center,
    Collapse,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ValueArg {
    Parity,
    CountBand,
    Dimension,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum KernelArg {
    Midpoint,
    Sinc,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Format {
    Json,
    Csv,
}

/// Input of `verify --theorem 1`.
#[derive(Deserialize)]
#[serde(bound = "")]
struct Theorem1Bundle<W: dsk_core::measures::Weight> {
    mu: GridMeasure<W>,
    nu: GridMeasure<W>,
    #[serde(rename = "A")]
    a: GridSet,
    #[serde(rename = "B")]
    b: GridSet,
    witness: Theorem1Witness,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("dsk: {f}");
            match f {
                Failure::Input(_) => ExitCode::from(1),
                Failure::Predicate { .. } => ExitCode::from(2),
            }
        }
    }
}

fn validate(cli: &Cli) -> Outcome<()> {
    let bad = |msg: &str| Err(Failure::Input(msg.to_string()));
    if cli.block == 0 {
        return bad("-L must be at least 1");
    }
    if !(cli.delta.is_finite() && cli.delta >= 0.0) {
        return bad("--delta must be a nonnegative number");
    }
    if cli.sigma.is_some_and(|s| !(s.is_finite() && s >= 0.0)) {
        return bad("--sigma must be a nonnegative number");
    }
    if cli.rho.is_some_and(|r| !(r > 0.0 && r < 1.0)) {
        return bad("--rho must lie in (0, 1)");
    }
    if cli.q.is_some_and(|q| !(q > 1.0 && q.is_finite())) {
        return bad("-q must be finite and greater than 1");
    }
    if cli.net_res == 0 {
        return bad("--net-res must be positive");
    }
    if cli.threads == 0 {
        return bad("--threads must be positive");
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome<()> {
    validate(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Failure::Input(e.to_string()))?;
    pool.install(|| dispatch(cli))
}

fn input_path(cli: &Cli) -> Outcome<&Path> {
    cli.input
        .as_deref()
        .ok_or_else(|| Failure::Input("--input is required".into()))
}

/// Emits `result` and then turns a failed clause into exit code 2.
struct Run<'a> {
    cli: &'a Cli,
    config: Value,
    inputs: Inputs,
}

impl<'a> Run<'a> {
    fn new(cli: &'a Cli) -> Outcome<Self> {
        let config = serde_json::to_value(cli).map_err(|e| Failure::Input(e.to_string()))?;
        Ok(Run {
            cli,
            config,
            inputs: Inputs::default(),
        })
    }

    fn set(&mut self, path: &Path) -> Outcome<GridSet> {
        self.inputs.read_set(path)
    }

    fn input_set(&mut self) -> Outcome<GridSet> {
        let path = input_path(self.cli)?;
        self.set(path)
    }

    fn finish<T: Serialize>(&self, result: &T, extra: Value) -> Outcome<()> {
        emit(self.cli.output.as_deref(), &to_pretty(result)?, &self.config, &self.inputs, extra)
    }

    fn finish_text(&self, text: &str) -> Outcome<()> {
        emit(self.cli.output.as_deref(), text, &self.config, &self.inputs, Value::Null)
    }
}

fn predicate(clause: &str, detail: impl Into<String>) -> Failure {
    Failure::Predicate {
        clause: clause.to_string(),
        detail: detail.into(),
    }
}

fn dispatch(cli: &Cli) -> Outcome<()> {
    let mut run = Run::new(cli)?;
    match &cli.command {
        Command::Generate { corpus: true, .. } => generate_corpus(cli, &run),
        Command::Generate { corpus: false, measure } => {
            let spec: CorpusSpec = run.inputs.read(input_path(cli)?)?;
            let spec_hash = sha256_hex(&serde_json::to_vec(&spec).map_err(|e| Failure::Input(e.to_string()))?);
            let extra = json!({"family": spec.family(), "spec_sha256": spec_hash});
            match measure {
                None => run.finish(&generators::generate(&spec)?, extra),
                Some(rule) => {
                    let rule = match rule {
                        MeasureRule::Uniform => WeightRule::Uniform,
                        MeasureRule::Dyadic => WeightRule::DyadicWeights {
                            seed: cli.seed,
                            max_exp: 4,
                        },
                    };
                    let mu = generators::generate_measure(&spec, &rule)?;
                    match cli.backend {
                        Backend::Rational => run.finish(&mu, extra),
                        Backend::Float => run.finish(&mu.to_float(), extra),
                    }
                }
            }
        }
        Command::Energy { path } => {
            let x = run.input_set()?;
            let path = match path {
                PathArg::Auto => EnergyPath::Auto,
                PathArg::Sparse => EnergyPath::Sparse,
                PathArg::Dense => EnergyPath::Dense,
            };
            run.finish(&sumsets::additive_energy_with(&x, path)?, Value::Null)
        }
        Command::Sumset { second } => {
            let a = run.input_set()?;
            let b = match second {
                Some(p) => run.set(p)?,
                None => a.clone(),
            };
            run.finish(&sumsets::sumset(&a, &b)?, Value::Null)
        }
        Command::Doubling => {
            let a = run.input_set()?;
            let k = cli.k.unwrap_or(4);
            match sumsets::pr_check(&a, k) {
                Ok(report) => run.finish(&report, Value::Null),
                Err(dsk_core::Error::PlunneckeViolation { k, .. }) => {
                    Err(predicate(&format!("PR.{k}"), "iterated sumset exceeds K^j |A|"))
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Uniformize { mode, value, scales } => uniformize_cmd(cli, &mut run, *mode, *value, scales),
        Command::Analyze { uniformize } => {
            let mut a = run.input_set()?;
            if *uniformize {
                a = uniformize::uniform_subset_subspace(&a, cli.block)?.subset;
            }
            run.finish(&analysis::analyze_structure(&a, cli.block, cli.delta, cli.net_res)?, Value::Null)
        }
        Command::Fup { second, kernel, format } => {
            let x = run.input_set()?;
            let y = match second {
                Some(p) => run.set(p)?,
                None => x.clone(),
            };
            if let Some(h) = cli.h_exp {
                if x.scale_exp() != h || y.scale_exp() != h {
                    return Err(Failure::Input(format!(
                        "--h-exp {h} does not match the input lattices (m = {}, {})",
                        x.scale_exp(),
                        y.scale_exp()
                    )));
                }
            }
            let kernel = match kernel {
                KernelArg::Midpoint => FupKernel::Midpoint,
                KernelArg::Sinc => FupKernel::Sinc,
            };
            let result = analysis::fup_norm(&x, &y, kernel, cli.sigma, cli.seed)?;
            match format {
                Format::Json => run.finish(&result, Value::Null),
                Format::Csv => run.finish_text(&format!(
                    "{}\n{}\n",
                    analysis::FupResult::CSV_HEADER,
                    result.csv_row()
                )),
            }
        }
        Command::EnergyExperiment { lambda } => {
            let x = run.input_set()?;
            let sigma = cli
                .sigma
                .ok_or_else(|| Failure::Input("--sigma is required".into()))?;
            let experiment = analysis::energy_structure_experiment(&x, cli.block, cli.delta, sigma, cli.net_res)?;
            let flattening = match cli.rho {
                Some(rho) => {
                    let k = cli.k.unwrap_or(1) as usize;
                    Some(analysis::flattening_check(&x, k, rho, *lambda, cli.net_res)?)
                }
                None => None,
            };
            run.finish(&json!({"experiment": experiment, "flattening": flattening}), Value::Null)
        }
        Command::Verify { theorem, original, report } => {
            let ledger = if theorem == "1" {
                match cli.backend {
                    Backend::Rational => verify_theorem1::<Rational>(cli, &mut run)?,
                    Backend::Float => verify_theorem1::<f64>(cli, &mut run)?,
                }
            } else {
                let a_prime = run.input_set()?;
                let original_len = match original {
                    Some(p) => run.set(p)?.len(),
                    None => a_prime.len(),
                };
                let report: StructureReport = match report {
                    Some(p) => run.inputs.read(p)?,
                    None => analysis::analyze_structure(&a_prime, cli.block, cli.delta, cli.net_res)?,
                };
                analysis::check_theorem2(&a_prime, original_len, cli.delta, &report)?
            };
            run.finish(&ledger, Value::Null)?;
            match ledger.first_failure() {
                Some(c) => Err(predicate(&c.id, c.detail.clone())),
                None => Ok(()),
            }
        }
    }
}

fn verify_theorem1<W: dsk_core::measures::Weight>(cli: &Cli, run: &mut Run) -> Outcome<dsk_core::Ledger> {
    let mut bundle: Theorem1Bundle<W> = run.inputs.read(input_path(cli)?)?;
    if let Some(q) = cli.q {
        bundle.witness.q = q;
    }
    Ok(analysis::check_theorem1_conclusions(
        &bundle.mu,
        &bundle.nu,
        &bundle.a,
        &bundle.b,
        &bundle.witness,
    )?)
}

fn uniformize_cmd(cli: &Cli, run: &mut Run, mode: Mode, value: Option<ValueArg>, scales: &[u32]) -> Outcome<()> {
    let a = run.input_set()?;
    let block = cli.block;
    let result = match mode {
        Mode::Plain => uniformize::uniform_subset(&a, block)?,
        Mode::Subspace => uniformize::uniform_subset_subspace(&a, block)?,
        Mode::General => {
            let value = value.ok_or_else(|| Failure::Input("--mode general needs --value".into()))?;
            let s = a.scale_exp() / block;
            let f: Box<dyn ValueFunction> = match value {
                ValueArg::Parity => Box::new(ParityValue),
                ValueArg::CountBand => Box::new(CountBandValue { dim: a.dim(), block }),
                ValueArg::Dimension => Box::new(DimensionValue { dim: a.dim() }),
            };
            let fns: Vec<&dyn ValueFunction> = (0..s).map(|_| f.as_ref()).collect();
            uniformize::uniform_subset_general(&a, block, &fns)?
        }
        Mode::Center => {
            let centred = match uniformize::center_by_translation(&a, block) {
                Ok(c) => c,
                Err(e @ dsk_core::Error::CenteringInfeasible { .. }) => {
                    return Err(predicate("center.feasible", e.to_string()))
                }
                Err(e) => return Err(e.into()),
            };
            run.finish(&centred, Value::Null)?;
            if !uniformize::verify_centering(&centred.subset, &centred.shift_units, block)? {
                return Err(predicate("center.middle-third", "a translated point leaves a middle third"));
            }
            if !centred.meets_guarantee() {
                return Err(predicate("center.size", "kept fraction is below 9^{-dS}"));
            }
            return Ok(());
        }
        Mode::Collapse => {
            let collapse: BTreeSet<u32> = scales.iter().copied().collect();
            let result = uniformize::collapse_branching(&a, block, &collapse)?;
            run.finish(&result, Value::Null)?;
            let clauses = uniformize::verify_collapse(&a, &result, &collapse)?;
            for (id, ok) in [
                ("collapse.uniform", clauses.uniform),
                ("collapse.size", clauses.size),
                ("collapse.local-sets", clauses.local_sets_preserved),
            ] {
                if !ok {
                    return Err(predicate(id, "collapse clause failed"));
                }
            }
            return Ok(());
        }
    };
    run.finish(&result, Value::Null)?;
    if !result.meets_guarantee() {
        return Err(predicate("uniform.size", "kept fraction is below the pigeonhole guarantee"));
    }
    Ok(())
}

/// Writes each standard corpus set plus `manifest.json` into `--output`.
fn generate_corpus(cli: &Cli, run: &Run) -> Outcome<()> {
    let dir = cli
        .output
        .as_deref()
        .ok_or_else(|| Failure::Input("--corpus needs --output <dir>".into()))?;
    let mut entries = Vec::new();
    for entry in generators::corpus() {
        let set = generators::generate(&entry.spec)?;
        let text = to_pretty(&set)?;
        let file = format!("{}.json", entry.name);
        write_file(&dir.join(&file), text.as_bytes())?;
        let spec_bytes = serde_json::to_vec(&entry.spec).map_err(|e| Failure::Input(e.to_string()))?;
        entries.push(json!({
            "name": entry.name,
            "file": file,
            "sha256": sha256_hex(text.as_bytes()),
            "spec": entry.spec,
            "spec_sha256": sha256_hex(&spec_bytes),
            "truth": entry.truth,
        }));
    }
    let manifest = json!({
        "tool": "dsk",
        "versions": io::versions(),
        "config": run.config,
        "entries": entries,
    });
    write_file(&dir.join("manifest.json"), to_pretty(&manifest)?.as_bytes())
}
