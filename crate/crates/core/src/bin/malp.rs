use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use malp::exec::Execution;
use malp::intervals::{ci_all, pi, CiMethod, PiBasis};
use malp::io::{columns_to_csv, dataset_to_csv, document, emit, ingest_csv, read_columns, to_json};
use malp::metrics::{best_subsets, evaluate, split_evaluate};
use malp::moments::BivariateParams;
use malp::predictor::{fit, PredictorKind};
use malp::resample::{ResamplePlan, DEFAULT_INNER_REPLICATES, DEFAULT_INTERVAL_REPLICATES};
use malp::simulate::{mvn_sample, run, Experiment, SimulationConfig};
use malp::{Dataset, MalpError, Result};

/// Maximum agreement and least-squares linear prediction.
#[derive(Parser)]
#[command(name = "malp", version)]
struct Cli {
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a predictor and print its coefficients.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "malp")]
        kind: PredictorKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict at one point or at every row of a file.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "malp")]
        kind: PredictorKind,
        #[command(flatten)]
        points: PointArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Confidence intervals for the true MALP value at a point.
    Interval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        x0: Vec<f64>,
        /// One of asymptotic, jackknife, bootstrap-se, bootstrap-t, percentile, bca, or `all`.
        #[arg(long, value_delimiter = ',', default_value = "all")]
        method: Vec<String>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[command(flatten)]
        resample: ResampleArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prediction interval for a new response at a point.
    Pi {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        x0: Vec<f64>,
        #[arg(long, default_value = "both")]
        basis: BasisArg,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against observed responses, or run repeated
    /// train/test splits when no predictions are given.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// CSV with a `prediction` column, or a `predict` JSON document.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive best-subset search by coefficient of determination.
    Subsets {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment.
    Simulate {
        #[arg(long)]
        experiment: Option<Experiment>,
        /// JSON simulation config; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long)]
        b_outer: Option<usize>,
        #[arg(long)]
        b_inner: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        method: Option<Vec<String>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic bivariate normal data set for a reference parameter set.
    Generate {
        /// Reference parameter set, 1 to 3.
        #[arg(long)]
        set: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    input: PathBuf,
    /// Response column name (or zero-based index).
    #[arg(long)]
    response: String,
    /// Predictor columns; every other column when omitted.
    #[arg(long, value_delimiter = ',')]
    predictors: Vec<String>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        ingest_csv(&self.input, &self.response, &self.predictors)
    }
}

#[derive(Args)]
struct PointArgs {
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    x0: Vec<f64>,
    /// CSV whose header names the predictor columns; one point per row.
    #[arg(long, conflicts_with = "x0")]
    x0_file: Option<PathBuf>,
}

#[derive(Args)]
struct ResampleArgs {
    #[arg(long, default_value_t = DEFAULT_INTERVAL_REPLICATES)]
    b_outer: usize,
    #[arg(long, default_value_t = DEFAULT_INNER_REPLICATES)]
    b_inner: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Malp,
    Lslp,
    Both,
}

fn require_seed(seed: Option<u64>, command: &str) -> Result<u64> {
    seed.ok_or_else(|| MalpError::invalid("seed", format!("`{command}` is stochastic and needs --seed")))
}

fn parse_methods(raw: &[String]) -> Result<Vec<CiMethod>> {
    if raw.iter().any(|m| m == "all") {
        return Ok(CiMethod::ALL.to_vec());
    }
    raw.iter().map(|m| m.parse()).collect()
}

fn output(command: &str, body: Value, out: Option<&Path>) -> Result<()> {
    emit(&to_json(&document(command, body))?, out)
}

fn names_of(data: &Dataset) -> Vec<String> {
    data.column_names()
        .map(|n| n[..data.p()].to_vec())
        .unwrap_or_else(|| (1..=data.p()).map(|j| format!("x{j}")).collect())
}

fn load_points(points: &PointArgs, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    match &points.x0_file {
        Some(path) => read_columns(path, &names_of(data)),
        None if points.x0.is_empty() => Err(MalpError::invalid("x0", "give --x0 or --x0-file")),
        None => Ok(vec![points.x0.clone()]),
    }
}

fn load_predictions(path: &Path) -> Result<Vec<f64>> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(|_| MalpError::FileNotFound {
            path: path.display().to_string(),
        })?;
        let v: Value = serde_json::from_str(&text).map_err(|e| MalpError::Io(e.to_string()))?;
        let arr = v["predictions"]
            .as_array()
            .ok_or_else(|| MalpError::invalid("predictions", "document has no `predictions` array"))?;
        arr.iter()
            .map(|p| p.as_f64().ok_or_else(|| MalpError::invalid("predictions", "non-numeric prediction")))
            .collect()
    } else {
        Ok(read_columns(path, &["prediction".to_string()])?.into_iter().map(|r| r[0]).collect())
    }
}

fn execute(cli: Cli) -> Result<()> {
    let execution = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Fit { data, kind, out } => {
            let d = data.load()?;
            let model = fit(&d, kind)?;
            output(
                "fit",
                json!({
                    "n": d.n(),
                    "predictor_names": names_of(&d),
                    "response": data.response,
                    "gamma": model.gamma,
                    "model": model.predictor,
                    "companion": model.companion,
                }),
                out.as_deref(),
            )
        }
        Command::Predict { data, kind, points, out } => {
            let d = data.load()?;
            let model = fit(&d, kind)?;
            let pts = load_points(&points, &d)?;
            let preds: Vec<f64> = pts.iter().map(|x| model.predict(x)).collect::<Result<_>>()?;
            if out.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "csv")) {
                return emit(&columns_to_csv(&[("prediction", &preds)])?, out.as_deref());
            }
            output(
                "predict",
                json!({ "kind": kind, "model": model.predictor, "points": pts, "predictions": preds }),
                out.as_deref(),
            )
        }
        Command::Interval {
            data,
            x0,
            method,
            level,
            resample,
            out,
        } => {
            let d = data.load()?;
            let methods = parse_methods(&method)?;
            let stochastic = methods.iter().any(|m| !matches!(m, CiMethod::AsympNormal | CiMethod::Jackknife));
            let seed = if stochastic {
                require_seed(resample.seed, "interval")?
            } else {
                resample.seed.unwrap_or(0)
            };
            let plan = ResamplePlan::new(resample.b_outer, resample.b_inner, seed)?.with_execution(execution);
            let intervals = ci_all(&d, &x0, level, &methods, &plan)
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            output(
                "interval",
                json!({
                    "x0": x0, "level": level, "b_outer": plan.b_outer, "b_inner": plan.b_inner,
                    "seed": seed, "intervals": intervals,
                }),
                out.as_deref(),
            )
        }
        Command::Pi {
            data,
            x0,
            basis,
            level,
            out,
        } => {
            let d = data.load()?;
            let bases = match basis {
                BasisArg::Malp => vec![PiBasis::Malp],
                BasisArg::Lslp => vec![PiBasis::Lslp],
                BasisArg::Both => vec![PiBasis::Malp, PiBasis::Lslp],
            };
            let intervals = bases
                .into_iter()
                .map(|b| pi(&d, &x0, level, b))
                .collect::<Result<Vec<_>>>()?;
            output("pi", json!({ "x0": x0, "level": level, "intervals": intervals }), out.as_deref())
        }
        Command::Evaluate {
            data,
            predictions,
            reps,
            train_fraction,
            seed,
            out,
        } => {
            let d = data.load()?;
            match predictions {
                Some(path) => {
                    let preds = load_predictions(&path)?;
                    if preds.len() != d.n() {
                        return Err(MalpError::DimensionMismatch {
                            expected: d.n(),
                            actual: preds.len(),
                        });
                    }
                    let triple = evaluate(d.y(), &preds)?;
                    output("evaluate", json!({ "n": d.n(), "performance": triple }), out.as_deref())
                }
                None => {
                    let seed = require_seed(seed, "evaluate")?;
                    let split = split_evaluate(&d, reps, seed, train_fraction, execution)?;
                    output("evaluate", json!({ "seed": seed, "split": split }), out.as_deref())
                }
            }
        }
        Command::Subsets { data, sizes, out } => {
            let d = data.load()?;
            let subsets = best_subsets(&d, &sizes, execution)?;
            output("subsets", json!({ "subsets": subsets }), out.as_deref())
        }
        Command::Simulate {
            experiment,
            config,
            reps,
            n,
            b_outer,
            b_inner,
            method,
            seed,
            out,
        } => {
            let mut cfg = match (&config, experiment) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(path).map_err(|_| MalpError::FileNotFound {
                        path: path.display().to_string(),
                    })?;
                    serde_json::from_str::<SimulationConfig>(&text)
                        .map_err(|e| MalpError::invalid("config", e.to_string()))?
                }
                (None, Some(e)) => SimulationConfig::default_for(e, require_seed(seed, "simulate")?),
                (None, None) => return Err(MalpError::invalid("experiment", "give --experiment or --config")),
            };
            if let Some(e) = experiment {
                if config.is_some() && e != cfg.experiment {
                    return Err(MalpError::invalid("experiment", "differs from the config file"));
                }
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = reps {
                cfg.mreps = r;
            }
            if let Some(n) = n {
                cfg.n_grid = n;
            }
            if let Some(b) = b_outer {
                cfg.b_outer = b;
            }
            if let Some(b) = b_inner {
                cfg.b_inner = b;
            }
            if let Some(m) = method {
                cfg.methods = parse_methods(&m)?;
            }
            let report = run(&cfg, execution)?;
            emit(&to_json(&document("simulate", report))?, out.as_deref())
        }
        Command::Generate { set, n, seed, out } => {
            let seed = require_seed(seed, "generate")?;
            let params = set
                .checked_sub(1)
                .and_then(|i| BivariateParams::REFERENCE_SETS.get(i))
                .ok_or_else(|| MalpError::invalid("set", "must be 1, 2 or 3"))?;
            let s = params.summary()?;
            let d = mvn_sample(&s.joint_mean(), &s.joint_cov(), n, seed)?
                .with_column_names(vec!["x".into(), "y".into()])?;
            emit(&dataset_to_csv(&d)?, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let doc = json!({
                "schema": malp::io::SCHEMA,
                "error": { "kind": e.kind(), "message": e.to_string() },
            });
            eprint!("{}", to_json(&doc).unwrap_or_else(|_| format!("{e}\n")));
            ExitCode::FAILURE
        }
    }
}
