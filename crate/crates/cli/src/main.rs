// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kvsmooth_core::harness::{
    self, cmd_bench, cmd_eval, cmd_generate, cmd_sweep, cmd_verify, CaptionSource, EvalInputs,
    RunConfig, SweepAxis, ToyCorpus, EXIT_VERIFY,
};
use kvsmooth_core::metrics::{Aggregation, DEFAULT_BETA};
use kvsmooth_core::{Error, ModelConfig, Result, SmoothMode};

#[derive(Parser)]
#[command(name = "kvsmooth", version, about = "Entropy-guided KV-cache smoothing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct SmoothFlags {
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// Adaptive mode with this reference coefficient.
    #[arg(long, conflicts_with = "fixed_lambda")]
    lambda_ref: Option<f64>,
    /// Fixed-coefficient mode.
    #[arg(long)]
    fixed_lambda: Option<f64>,
    /// Disable smoothing.
    #[arg(long, conflicts_with_all = ["lambda_ref", "fixed_lambda"])]
    no_smoothing: bool,
    /// Add wall-clock timing to records.
    #[arg(long)]
    record_timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one JSON record per prompt.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        smooth: SmoothFlags,
    },
    /// Score captions or generation records with CHAIR and OPOPE.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Generation records (JSONL).
        #[arg(long, conflicts_with = "captions")]
        records: Option<PathBuf>,
        /// Captions `{image_id, caption}` (JSONL).
        #[arg(long)]
        captions: Option<PathBuf>,
        /// Vocabulary for records without text.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        probes: Option<PathBuf>,
        #[arg(long, value_enum)]
        aggregation: Option<AggregationArg>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Re-run generation and evaluation over one parameter axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        smooth: SmoothFlags,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Baseline vs smoothed latency.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        smooth: SmoothFlags,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
    },
    /// Run the property suites.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Write a toy corpus, random model and config into `--out`.
    Toy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        images: usize,
        #[arg(long, default_value_t = 64)]
        max_new_tokens: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Micro,
    Macro,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    LambdaRef,
    LayerStart,
    LayerEnd,
}

fn run_config(common: &Common, smooth: Option<&SmoothFlags>) -> Result<RunConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if let Some(s) = smooth {
        if let Some(n) = s.max_new_tokens {
            cfg.max_new_tokens = n;
        }
        if s.no_smoothing {
            cfg.smoother = None;
        }
        if let Some(l) = s.lambda_ref {
            let sm = cfg.smoother.get_or_insert_with(Default::default);
            sm.mode = SmoothMode::Adaptive;
            sm.lambda_ref = l;
        }
        if let Some(l) = s.fixed_lambda {
            cfg.smoother.get_or_insert_with(Default::default).mode = SmoothMode::Fixed(l);
        }
        cfg.record_timing |= s.record_timing;
    }
    Ok(cfg)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Writes `bytes` to `out` or stdout.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(io_err(p)),
        None => io::stdout()
            .write_all(bytes)
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Generate { common, smooth } => {
            let cfg = run_config(&common, Some(&smooth))?;
            let records = cmd_generate(&cfg)?;
            let mut buf = Vec::new();
            harness::write_jsonl(&mut buf, &records)?;
            emit(common.out.as_deref().or(cfg.out.as_deref()), &buf)?;
        }
        Command::Eval {
            common,
            records,
            captions,
            vocab,
            annotations,
            lexicon,
            probes,
            aggregation,
            beta,
        } => {
            let cfg = common.config.as_ref().map(RunConfig::load).transpose()?;
            let mut inputs = cfg
                .as_ref()
                .and_then(|c| c.eval.clone())
                .unwrap_or_default();
            if let Some(a) = annotations {
                inputs.annotations = a;
            }
            if let Some(l) = lexicon {
                inputs.lexicon = l;
            }
            if probes.is_some() {
                inputs.probes = probes;
            }
            if let Some(a) = aggregation {
                inputs.aggregation = match a {
                    AggregationArg::Micro => Aggregation::Micro,
                    AggregationArg::Macro => Aggregation::Macro,
                };
            }
            if cfg.is_none() || beta.is_some() {
                inputs.beta = beta.unwrap_or(DEFAULT_BETA);
            }
            check_eval_inputs(&inputs)?;
            let vocab = vocab.or_else(|| cfg.as_ref().and_then(|c| c.prompts.vocab.clone()));
            let source = match (&records, &captions) {
                (Some(r), None) => CaptionSource::Records {
                    path: r,
                    vocab: vocab.as_deref(),
                },
                (None, Some(c)) => CaptionSource::Captions(c),
                _ => return Err(Error::Config("one of --records or --captions is required".into())),
            };
            let report = cmd_eval(&source, &inputs)?;
            eprint!("{}", report.to_text_table());
            emit(common.out.as_deref(), &json_bytes(&report)?)?;
        }
        Command::Sweep {
            common,
            smooth,
            axis,
            values,
        } => {
            let cfg = run_config(&common, Some(&smooth))?;
            let axis = match axis {
                AxisArg::LambdaRef => SweepAxis::LambdaRef(values),
                AxisArg::LayerStart => SweepAxis::LayerStart(as_layers(&values)?),
                AxisArg::LayerEnd => SweepAxis::LayerEnd(as_layers(&values)?),
            };
            match common.out.as_deref() {
                Some(p) => {
                    let f = File::create(p).map_err(io_err(p))?;
                    cmd_sweep(&cfg, &axis, BufWriter::new(f))?;
                }
                None => {
                    cmd_sweep(&cfg, &axis, io::stdout().lock())?;
                }
            }
        }
        Command::Bench {
            common,
            smooth,
            repetitions,
        } => {
            let cfg = run_config(&common, Some(&smooth))?;
            let report = cmd_bench(&cfg, repetitions)?;
            eprint!("{}", report.to_text());
            emit(common.out.as_deref(), &json_bytes(&report)?)?;
        }
        Command::Verify { common } => {
            let report = cmd_verify(common.seed.unwrap_or(0));
            eprint!("{}", report.to_text());
            emit(common.out.as_deref(), &json_bytes(&report)?)?;
            if !report.passed() {
                return Ok(EXIT_VERIFY);
            }
        }
        Command::Toy {
            common,
            images,
            max_new_tokens,
        } => {
            let dir = common
                .out
                .ok_or_else(|| Error::Config("toy needs --out DIR".into()))?;
            let seed = common.seed.unwrap_or(0);
            let corpus = ToyCorpus::generate(seed, images, 256)?;
            corpus.write(&dir, &ModelConfig::toy(seed), max_new_tokens)?;
            eprintln!("wrote {}", dir.join("config.json").display());
        }
    }
    Ok(0)
}

fn check_eval_inputs(inputs: &EvalInputs) -> Result<()> {
    if inputs.annotations.as_os_str().is_empty() || inputs.lexicon.as_os_str().is_empty() {
        return Err(Error::Config(
            "annotations and lexicon are required (flags or the config's eval section)".into(),
        ));
    }
    Ok(())
}

fn as_layers(values: &[f64]) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("layer index {v} is not a non-negative integer")))
            }
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
