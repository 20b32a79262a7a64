use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hlgt::checks::{self, Scope};
use hlgt::config::{load_config, Config};
use hlgt::data::{
    load_manifest, read_features, split_train_val, synth_generate, write_dataset, SampleRecord,
    SynthConfig,
};
use hlgt::engine::{
    bench, evaluate, infer, load_checkpoint, save_checkpoint, train, BenchConfig, CheckpointHeader,
};
use hlgt::model::Model;
use hlgt::tensor::Fault;
use hlgt::{HlgtError, Result};

/// Temporal sentence grounding with a hierarchical local-global transformer.
#[derive(Parser)]
#[command(name = "hlgt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (feature files plus manifest).
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory or manifest file.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output directory.
        #[arg(long)]
        out: PathBuf,
        /// Start from the parameters of an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Suppress per-epoch progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Recall table of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated top-n values.
        #[arg(long, value_delimiter = ',', default_value = "1,5")]
        n: Vec<usize>,
        /// Comma-separated IoU thresholds.
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.7")]
        m: Vec<f64>,
        /// Which samples to score: the validation split of the checkpoint's
        /// training run, or everything.
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
        /// Print one JSON line instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value = "full")]
        scope: String,
        /// Corrupt the backward rule of one op kind, e.g. `softmax_rows:1.5`.
        #[arg(long)]
        inject: Option<Fault>,
        #[arg(long, default_value_t = checks::DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = checks::DEFAULT_TOL)]
        tol: f64,
    },
    /// Ground one query in one video.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Video feature file.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        query_features: PathBuf,
        /// Video duration in seconds.
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        json: bool,
    },
    /// Measure throughput on synthetic samples.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long, default_value_t = BenchConfig::default().repeats)]
        repeats: usize,
        #[arg(long, default_value_t = BenchConfig::default().decoder_calls)]
        decoder_calls: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used when the config file names none, or on its own.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides both the data and the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        let mut cfg = load_config(self.config.as_deref(), self.preset.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.synth.seed = seed;
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Split {
    All,
    Train,
    Val,
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.jsonl")
    } else {
        data.to_path_buf()
    }
}

fn load_data(data: &Path) -> Result<Vec<SampleRecord>> {
    let path = manifest_path(data);
    if !path.is_file() {
        return Err(HlgtError::Config(format!(
            "manifest not found: {}",
            path.display()
        )));
    }
    load_manifest(&path)
}

fn select(data: &[SampleRecord], idx: &[usize]) -> Vec<SampleRecord> {
    idx.iter().map(|&i| data[i].clone()).collect()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HlgtError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_synth(config: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = config.load()?;
    let records = synth_generate(&cfg.synth)?;
    let manifest = write_dataset(out, &records)?;
    write_file(&out.join("synth.toml"), &toml_of(&cfg.synth))?;
    println!("wrote {} samples to {}", records.len(), manifest.display());
    Ok(())
}

fn toml_of(s: &SynthConfig) -> String {
    toml::to_string(s).expect("synth config serializes")
}

fn check_resume(header: &CheckpointHeader, cfg: &Config) -> Result<()> {
    let (a, b) = (&header.model, &cfg.model);
    let dims = |m: &hlgt::model::ModelConfig| {
        (
            m.video_dim,
            m.query_dim,
            m.dim,
            m.heads,
            m.slots,
            m.fusion_hidden,
            m.phrases,
            m.variant,
        )
    };
    if dims(a) != dims(b) {
        return Err(HlgtError::Config(format!(
            "resume checkpoint dims {:?} do not match config dims {:?}",
            dims(a),
            dims(b)
        )));
    }
    Ok(())
}

fn cmd_train(
    config: &ConfigArgs,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    quiet: bool,
) -> Result<()> {
    let cfg = config.load()?;
    let samples = load_data(data)?;
    let mut model = match resume {
        Some(dir) => {
            let (mut model, header) = load_checkpoint(dir)?;
            check_resume(&header, &cfg)?;
            model.config = cfg.model.clone();
            model
        }
        None => Model::new(cfg.model.clone(), cfg.train.seed)?,
    };
    let (tr, va) = split_train_val(samples.len(), cfg.train.train_fraction, cfg.train.seed);
    let (tr, va) = (select(&samples, &tr), select(&samples, &va));
    let mut history = String::new();
    let outcome = train(&mut model, &cfg.train, &tr, &va, |r| {
        history.push_str(&serde_json::to_string(r).expect("record serializes"));
        history.push('\n');
        if !quiet {
            eprintln!(
                "epoch {:>3}  lr {:.2e}  loss {:.4}  grad {:.3}  val R@1,0.5 {:.3}  {:.1}s",
                r.epoch, r.lr, r.train_loss, r.grad_norm, r.val_r1_iou05, r.seconds
            );
        }
    })?;
    save_checkpoint(
        out,
        &model,
        Some(&cfg.train),
        Some(outcome.best_epoch),
        Some(outcome.best_metric),
    )?;
    write_file(&out.join("history.jsonl"), &history)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    write_file(
        &out.join("val_metrics.json"),
        &(serde_json::to_string(&outcome.val_report)? + "\n"),
    )?;
    println!(
        "best epoch {} val R@1,IoU=0.5 {:.4}{}",
        outcome.best_epoch,
        outcome.best_metric,
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        }
    );
    println!("{}", outcome.val_report.table());
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    n: &[usize],
    m: &[f64],
    split: Split,
    json: bool,
) -> Result<()> {
    let (model, header) = load_checkpoint(checkpoint)?;
    let samples = load_data(data)?;
    let samples = match split {
        Split::All => samples,
        Split::Train | Split::Val => {
            let t = header.train.as_ref().ok_or_else(|| {
                HlgtError::Config("checkpoint has no training config to split by".into())
            })?;
            let (tr, va) = split_train_val(samples.len(), t.train_fraction, t.seed);
            select(
                &samples,
                if matches!(split, Split::Val) {
                    &va
                } else {
                    &tr
                },
            )
        }
    };
    let report = evaluate(&model, &samples, n, m)?;
    if json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        print!("{}", report.table());
    }
    Ok(())
}

fn cmd_gradcheck(scope: &str, inject: Option<Fault>, step: f64, tol: f64) -> Result<bool> {
    let scopes: Vec<Scope> = if scope == "all" {
        Scope::ALL.to_vec()
    } else {
        vec![scope.parse()?]
    };
    let mut ok = true;
    let mut out = std::io::stdout().lock();
    for s in scopes {
        for r in checks::run_scope(s, step, tol, inject)? {
            ok &= r.passed();
            writeln!(out, "{}", r.line()).ok();
        }
    }
    writeln!(
        out,
        "{}",
        if ok {
            "gradcheck passed"
        } else {
            "gradcheck FAILED"
        }
    )
    .ok();
    Ok(ok)
}

fn cmd_predict(
    checkpoint: &Path,
    features: &Path,
    query: &Path,
    duration: f64,
    json: bool,
) -> Result<()> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let video = read_features(features)?;
    let query = read_features(query)?;
    let r = infer(&model, &video, &query, duration)?;
    if json {
        println!("{}", serde_json::to_string(&r)?);
    } else {
        println!(
            "{:.3} {:.3} confidence {:.4} slot {}",
            r.start_sec, r.end_sec, r.confidence, r.slot
        );
    }
    Ok(())
}

fn cmd_bench(
    config: &ConfigArgs,
    samples: usize,
    repeats: usize,
    decoder_calls: usize,
    json: bool,
) -> Result<()> {
    let mut cfg = config.load()?;
    cfg.synth.samples = samples;
    cfg.synth.validate()?;
    let data = synth_generate(&cfg.synth)?;
    let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let report = bench(
        &model,
        &cfg.train,
        &data,
        &BenchConfig {
            repeats,
            decoder_calls,
        },
    )?;
    if json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        print!("{}", report.table());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { config, out } => cmd_synth(&config, &out)?,
        Command::Train {
            config,
            data,
            out,
            resume,
            quiet,
        } => cmd_train(&config, &data, &out, resume.as_deref(), quiet)?,
        Command::Eval {
            checkpoint,
            data,
            n,
            m,
            split,
            json,
        } => cmd_eval(&checkpoint, &data, &n, &m, split, json)?,
        Command::Gradcheck {
            scope,
            inject,
            step,
            tol,
        } => return cmd_gradcheck(&scope, inject, step, tol),
        Command::Predict {
            checkpoint,
            features,
            query_features,
            duration,
            json,
        } => cmd_predict(&checkpoint, &features, &query_features, duration, json)?,
        Command::Bench {
            config,
            samples,
            repeats,
            decoder_calls,
            json,
        } => cmd_bench(&config, samples, repeats, decoder_calls, json)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
