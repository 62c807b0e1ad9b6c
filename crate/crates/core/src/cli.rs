//! Batch command-line front end.
//!
//! Every verb takes `--config`; `--seed`, `--out` and `--steps` override the
//! matching config keys. Logs go to stderr, the final summary table to stdout,
//! and every artifact lands under `--out`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::corpus::{
    load_dataset, split_dataset, synthetic_corpus, write_dataset, DatasetSplit, LabelIndex, TokenSeq, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{classify_metrics, export_embeddings, predict, robustness_eval, write_csv, Projector};
use crate::trainer::{checkpoint, run, AttackChoice, RunOptions, TrainConfig, TrainData, TrainState, MODEL_FILE};

pub const VOCAB_FILE: &str = "vocab.json";
pub const LABEL_FILE: &str = "label_index.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const ROBUSTNESS_FILE: &str = "robustness.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const SPLIT_FILES: [&str; 4] = ["train.jsonl", "test.jsonl", "uda.jsonl", "contrastive.jsonl"];

/// Caps internal parallelism; 0 or unset means one thread per core.
pub const THREADS_ENV: &str = "SSLC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "sslc", version, about = "Semi-supervised text classification toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON training config; relative data paths resolve against its directory.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for every artifact.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `total_steps`.
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Directory written by `prepare`; without it the split is rebuilt from the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to evaluate (default: `<out>/model.json`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split the corpus, build the vocabulary and write both to `--out`.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Generate the synthetic keyword corpus instead of reading files.
        #[arg(long)]
        synthetic: bool,
    },
    /// Train, writing history, checkpoints and the final model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Accuracy, micro-F1, per-class and per-level metrics on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Standard and robust accuracy under the counterpart attacks.
    AttackEval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Overrides `robustness.epsilon`.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Overrides `robustness.steps`.
        #[arg(long)]
        attack_steps: Option<usize>,
        /// Overrides `robustness.defense` (pgd, fgm or none).
        #[arg(long, value_parser = parse_name::<AttackChoice>)]
        defense: Option<AttackChoice>,
    },
    /// Per-example logits as CSV, optionally with PCA coordinates.
    EmbedExport {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// none or pca2.
        #[arg(long, value_parser = parse_name::<Projector>, default_value = "none")]
        projector: Projector,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Prepare { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::AttackEval { common, .. }
            | Command::EmbedExport { common, .. } => common,
        }
    }
}

/// Parses a lowercase enum name the same way the config file does.
fn parse_name<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

pub fn parse_args<I, T>(argv: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

/// 2 for usage and config errors, 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 2,
        _ => 1,
    }
}

/// Parses, runs and prints; returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse_args(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = threads_from_env().and_then(|n| {
        crate::par::init_threads(n);
        run_command(&cli.command)
    });
    match outcome {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| Error::config(THREADS_ENV, format!("expected a thread count, got `{v}`"))),
        _ => Ok(0),
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads, overrides and validates a config. Any failure is a config error.
pub fn load_config(common: &Common) -> Result<TrainConfig> {
    let path = &common.config;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = TrainConfig::from_json(&text).map_err(as_config_error)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.data.labeled, &mut cfg.data.unlabeled, &mut cfg.augment.lexicon]
        .into_iter()
        .flatten()
    {
        *p = resolve(base, p);
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(s) = common.steps {
        cfg.total_steps = s;
    }
    cfg.validate().map_err(as_config_error)?;
    Ok(cfg)
}

/// Validation failures raised by nested specs still count as config errors.
fn as_config_error(e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        Error::Json(_) => Error::config("<root>", e.to_string()),
        other => Error::config("data.synthetic", other.to_string()),
    }
}

fn build_split(cfg: &TrainConfig, synthetic: bool) -> Result<DatasetSplit> {
    let d = &cfg.data;
    let (labeled, unlabeled) = if synthetic || (d.labeled.is_none() && d.synthetic.is_some()) {
        synthetic_corpus(&d.synthetic.clone().unwrap_or_default())?
    } else {
        let lab = d
            .labeled
            .as_ref()
            .ok_or_else(|| Error::config("data.labeled", "required unless data.synthetic is set"))?;
        let unl = d
            .unlabeled
            .as_ref()
            .ok_or_else(|| Error::config("data.unlabeled", "required unless data.synthetic is set"))?;
        (load_dataset(lab, true)?.examples, load_dataset(unl, false)?.examples)
    };
    split_dataset(&labeled, &unlabeled, d.ratios, d.split_seed)
}

fn load_prepared(cfg: &TrainConfig, dir: &Path) -> Result<TrainData> {
    let [train, test, uda, contrastive] = SPLIT_FILES.map(|f| dir.join(f));
    let split = DatasetSplit {
        train: load_dataset(&train, true)?.examples,
        test: load_dataset(&test, true)?.examples,
        uda: load_dataset(&uda, false)?.examples,
        contrastive: load_dataset(&contrastive, false)?.examples,
        seed: cfg.data.split_seed,
    };
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let label_path = dir.join(LABEL_FILE);
    let labels = std::fs::read_to_string(&label_path).map_err(|e| Error::io(&label_path, e))?;
    TrainData::from_split(&split, cfg, Some(vocab), Some(LabelIndex::from_json(&labels)?))
}

fn load_data(cfg: &TrainConfig, prepared: Option<&Path>) -> Result<TrainData> {
    match prepared {
        Some(dir) => load_prepared(cfg, dir),
        None => TrainData::from_split(&build_split(cfg, false)?, cfg, None, None),
    }
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and refuses one built on a different vocabulary or label set.
fn load_model(model: &ModelArgs, out: &Path, data: &TrainData) -> Result<TrainState> {
    let path = model.checkpoint.clone().unwrap_or_else(|| out.join(MODEL_FILE));
    let state = checkpoint::load(&path)?;
    check_compatible(&state, data)?;
    Ok(state)
}

fn check_compatible(state: &TrainState, data: &TrainData) -> Result<()> {
    let found = data.vocab.hash()?;
    if state.vocab_hash != found {
        return Err(Error::VocabMismatch {
            expected: state.vocab_hash.clone(),
            found,
        });
    }
    if state.labels != data.labels.labels() {
        return Err(Error::Invalid(format!(
            "checkpoint label set {:?} differs from the data's {:?}",
            state.labels,
            data.labels.labels()
        )));
    }
    Ok(())
}

/// Runs one verb and returns the summary table for stdout.
pub fn run_command(command: &Command) -> Result<String> {
    let common = command.common();
    let cfg = load_config(common)?;
    let out = &common.out;
    match command {
        Command::Prepare { synthetic, .. } => prepare(&cfg, *synthetic, out),
        Command::Train { data, resume, .. } => train(cfg, data.as_deref(), resume.as_deref(), out),
        Command::Eval { model, .. } => evaluate(&cfg, model, out),
        Command::AttackEval {
            model,
            epsilon,
            attack_steps,
            defense,
            ..
        } => {
            let mut cfg = cfg;
            if let Some(e) = epsilon {
                cfg.robustness.epsilon = *e;
            }
            if let Some(s) = attack_steps {
                cfg.robustness.steps = *s;
            }
            if defense.is_some() {
                cfg.robustness.defense = *defense;
            }
            cfg.validate().map_err(as_config_error)?;
            attack_eval(&cfg, model, out)
        }
        Command::EmbedExport { model, projector, .. } => embed_export(&cfg, model, *projector, out),
    }
}

fn prepare(cfg: &TrainConfig, synthetic: bool, out: &Path) -> Result<String> {
    let split = build_split(cfg, synthetic)?;
    let data = TrainData::from_split(&split, cfg, None, None)?;
    create_out(out)?;
    let pools = [&split.train, &split.test, &split.uda, &split.contrastive];
    for (file, pool) in SPLIT_FILES.iter().zip(pools) {
        write_dataset(&out.join(file), pool)?;
    }
    data.vocab.save(&out.join(VOCAB_FILE))?;
    write_text(&out.join(LABEL_FILE), &data.labels.to_json()?)?;
    log::info!("prepared data in {}", out.display());

    let mut table = String::from("pool         examples\n");
    for (file, pool) in SPLIT_FILES.iter().zip(pools) {
        let _ = writeln!(table, "{:<12} {:>8}", file.trim_end_matches(".jsonl"), pool.len());
    }
    let _ = writeln!(table, "{:<12} {:>8}", "vocab", data.vocab.len());
    let _ = writeln!(table, "{:<12} {:>8}", "classes", data.labels.num_classes());
    let _ = writeln!(table, "vocab_hash   {}", data.vocab.hash()?);
    Ok(table)
}

fn train(cfg: TrainConfig, prepared: Option<&Path>, resume: Option<&Path>, out: &Path) -> Result<String> {
    let data = load_data(&cfg, prepared)?;
    let mut state = match resume {
        Some(path) => {
            let mut state = checkpoint::load(path)?;
            check_compatible(&state, &data)?;
            state.config.total_steps = cfg.total_steps;
            log::info!("resuming from {} at step {}", path.display(), state.step);
            state
        }
        None => TrainState::new(cfg, &data)?,
    };
    create_out(out)?;
    data.vocab.save(&out.join(VOCAB_FILE))?;
    write_text(&out.join(LABEL_FILE), &data.labels.to_json()?)?;
    let stats = run(
        &mut state,
        &data,
        &RunOptions {
            out_dir: Some(out.to_path_buf()),
            until: None,
        },
    )?;
    log::info!(
        "augmentation: {} back-translation fallbacks, {} tf-idf fallbacks, {} rejected negatives",
        stats.back_translate_fallbacks,
        stats.tfidf_fallbacks,
        stats.rejected_negatives
    );

    let seqs: Vec<&TokenSeq> = data.test.iter().map(|e| &e.seq).collect();
    let preds = predict(&state.student, &seqs)?;
    let labels: Vec<usize> = data.test.iter().map(|e| e.label).collect();
    let report = classify_metrics(&preds, &labels, &data.labels)?;
    let mut table = String::from("step      l_total     l_sup       l_unsup     l_adv       l_con       test_acc\n");
    match state.history.last() {
        Some(row) => {
            let l = &row.losses;
            let _ = writeln!(
                table,
                "{:<9} {:<11.6} {:<11.6} {:<11.6} {:<11.6} {:<11.6} {:.4}",
                row.step, l.l_total, l.l_sup, l.l_unsup, l.l_adv, l.l_con, report.accuracy
            );
        }
        None => {
            let _ = writeln!(table, "{:<9} {:<59} {:.4}", state.step, "-", report.accuracy);
        }
    }
    Ok(table)
}

fn evaluate(cfg: &TrainConfig, model: &ModelArgs, out: &Path) -> Result<String> {
    let data = load_data(cfg, model.data.as_deref())?;
    let state = load_model(model, out, &data)?;
    let seqs: Vec<&TokenSeq> = data.test.iter().map(|e| &e.seq).collect();
    let preds = predict(&state.student, &seqs)?;
    let labels: Vec<usize> = data.test.iter().map(|e| e.label).collect();
    let report = classify_metrics(&preds, &labels, &data.labels)?;
    create_out(out)?;
    write_text(&out.join(METRICS_FILE), &serde_json::to_string_pretty(&report)?)?;
    Ok(report.table())
}

fn attack_eval(cfg: &TrainConfig, model: &ModelArgs, out: &Path) -> Result<String> {
    let data = load_data(cfg, model.data.as_deref())?;
    let state = load_model(model, out, &data)?;
    let defense = cfg.robustness.defense.unwrap_or(state.config.attack);
    let reports = robustness_eval(&state.student, &data.test, defense, &cfg.robustness, cfg.seed)?;
    create_out(out)?;
    write_text(&out.join(ROBUSTNESS_FILE), &serde_json::to_string_pretty(&reports)?)?;
    let mut table = String::from("defense  attack  epsilon     steps  samples  sa      ra\n");
    for r in &reports {
        let _ = writeln!(
            table,
            "{:<8} {:<7} {:<11.4e} {:<6} {:<8} {:.4}  {:.4}",
            parse_label(&r.defense),
            parse_label(&r.attack),
            r.epsilon,
            r.steps,
            r.samples,
            r.sa,
            r.ra
        );
    }
    Ok(table)
}

fn parse_label<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::from("?"),
    }
}

fn embed_export(cfg: &TrainConfig, model: &ModelArgs, projector: Projector, out: &Path) -> Result<String> {
    let data = load_data(cfg, model.data.as_deref())?;
    let state = load_model(model, out, &data)?;
    let rows = export_embeddings(&state.student, &data.test, &data.labels, projector)?;
    create_out(out)?;
    let path = out.join(EMBEDDINGS_FILE);
    write_csv(&rows, data.labels.num_classes(), &path)?;
    Ok(format!("rows     {}\ncolumns  {}\nfile     {}\n", rows.len(), rows.first().map_or(0, |r| r.width()), path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        parse_args(std::iter::once("sslc").chain(args.iter().copied()))
    }

    #[test]
    fn flags_map_onto_the_command() {
        let cli = parse(&["train", "--config", "c.json", "--seed", "7"]).unwrap();
        let common = cli.command.common();
        assert_eq!(common.seed, Some(7));
        assert_eq!(common.config, PathBuf::from("c.json"));
        assert_eq!(common.out, PathBuf::from("out"));
        assert!(matches!(cli.command, Command::Train { resume: None, .. }));

        let cli = parse(&["attack-eval", "--config", "c.json", "--defense", "fgm", "--epsilon", "0"]).unwrap();
        assert!(matches!(
            cli.command,
            Command::AttackEval {
                defense: Some(AttackChoice::Fgm),
                epsilon: Some(e),
                ..
            } if e == 0.0
        ));
        let cli = parse(&["embed-export", "--config", "c.json", "--projector", "pca2"]).unwrap();
        assert!(matches!(cli.command, Command::EmbedExport { projector: Projector::Pca2, .. }));
    }

    #[test]
    fn usage_errors() {
        for args in [
            &["train"][..],
            &["bogus-verb", "--config", "c.json"],
            &["train", "--config", "c.json", "--nope"],
            &["embed-export", "--config", "c.json", "--projector", "tsne"],
            &[],
        ] {
            let err = parse(args).unwrap_err();
            assert!(err.use_stderr(), "{args:?}");
            assert_eq!(err.exit_code(), 2, "{args:?}");
        }
    }

    #[test]
    fn config_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"omega": 2}"#).unwrap();
        let common = Common {
            config: path.clone(),
            seed: None,
            out: dir.path().join("out"),
            steps: None,
        };
        let err = load_config(&common).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(err.to_string().contains("omega"));

        let missing = Common {
            config: dir.path().join("absent.json"),
            ..common.clone()
        };
        assert_eq!(exit_code(&load_config(&missing).unwrap_err()), 2);
        assert_eq!(exit_code(&Error::Invalid("x".into())), 1);
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"data": {"labeled": "l.jsonl", "unlabeled": "/abs/u.jsonl"}}"#).unwrap();
        let cfg = load_config(&Common {
            config: path,
            seed: Some(3),
            out: dir.path().to_path_buf(),
            steps: Some(5),
        })
        .unwrap();
        assert_eq!(cfg.data.labeled, Some(dir.path().join("l.jsonl")));
        assert_eq!(cfg.data.unlabeled, Some(PathBuf::from("/abs/u.jsonl")));
        assert_eq!((cfg.seed, cfg.total_steps), (3, 5));
    }

}
