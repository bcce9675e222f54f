//! The `kgdelta` command line: corpus generation, training, evaluation,
//! graph plumbing and the gradient suite.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use kgdelta_core::corpus::{build_dataset, build_vocab, group_games, load_dataset, Split, SplitCounts};
use kgdelta_core::dsl::{parse_op, render_op, tokenize};
use kgdelta_core::eval::{
    fr_f1, group_scores_by_verb, per_verb_table, tf_f1, verb_group, Averaging, EvalReport, OracleGenerator,
    UpdateGenerator,
};
use kgdelta_core::{BeliefGraph, RelationRegistry, Transition, UpdateSequence, WorldConfig};
use kgdelta_model::gradcheck::{run_suite, suite_table, Block};
use kgdelta_model::{train, EncoderVariant, LogEntry, Model, ModelConfig, TrainConfig};
use serde::de::DeserializeOwned;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or input files.
    #[error("{0}")]
    Usage(String),
    /// Failure while doing the work.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "kgdelta", version, about = "Learn belief-graph update commands from text-game transitions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/valid/test JSONL splits and corpus statistics.
    GenData(GenDataArgs),
    /// Train an update-command generator on a generated corpus.
    Train(TrainArgs),
    /// Teacher-forced command F1: each step sees the gold prior graph.
    EvalTf(EvalArgs),
    /// Free-run triple F1: each game starts from an empty belief graph.
    EvalFr(EvalArgs),
    /// Apply an ops file to a graph file.
    Apply(ApplyArgs),
    /// Canonical ops turning one graph file into another.
    Diff(DiffArgs),
    /// Finite-difference gradient checks of every model block.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Flat TOML file: world keys plus seed, train, valid, test, jobs.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Games in the training split [default: 160].
    #[arg(long)]
    pub train: Option<usize>,
    /// Games in the validation split [default: 20].
    #[arg(long)]
    pub valid: Option<usize>,
    /// Games in the test split [default: 20].
    #[arg(long)]
    pub test: Option<usize>,
    /// Worker threads; output does not depend on it [default: 1].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding train.jsonl and optionally valid.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// Flat TOML file of model and training keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = ["none", "gcn", "rgcn", "rgcn-rel"])]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub max_decode_len: Option<usize>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines training log [default: <out>.log.jsonl].
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub ckpt: Option<PathBuf>,
    /// A JSONL file, or a corpus directory combined with --split.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test", value_parser = ["train", "valid", "test"])]
    pub split: String,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Add teacher-forced scores grouped by action verb.
    #[arg(long)]
    pub per_verb: bool,
    /// Replay the gold commands instead of running a model.
    #[arg(long)]
    pub oracle: bool,
    /// Micro-average teacher-forced F1 over all commands.
    #[arg(long)]
    pub micro: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    /// Graph file (`head<TAB>relation<TAB>tail` lines); empty graph if omitted.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// One rendered command per line.
    #[arg(long)]
    pub ops: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long)]
    pub to: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f32,
}

pub fn run(command: &Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::EvalTf(a) => eval(a, Protocol::TeacherForced, out),
        Command::EvalFr(a) => eval(a, Protocol::FreeRun, out),
        Command::Apply(a) => apply(a, out),
        Command::Diff(a) => diff(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn read_table(path: Option<&Path>) -> Result<toml::Table> {
    let Some(path) = path else {
        return Ok(toml::Table::new());
    };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn take<T: DeserializeOwned>(table: &mut toml::Table, key: &str) -> Result<Option<T>> {
    match table.remove(key) {
        None => Ok(None),
        Some(v) => v
            .try_into()
            .map(Some)
            .map_err(|e| usage(format!("config key `{key}`: {e}"))),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(runtime)
}

fn write_output(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| runtime(format!("{}: {e}", p.display()))),
        None => emit(out, text),
    }
}

fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let mut table = read_table(a.config.as_deref())?;
    let seed = a.seed.or(take(&mut table, "seed")?).unwrap_or(0);
    let train = a.train.or(take(&mut table, "train")?).unwrap_or(160);
    let valid = a.valid.or(take(&mut table, "valid")?).unwrap_or(20);
    let test = a.test.or(take(&mut table, "test")?).unwrap_or(20);
    let jobs = a.jobs.or(take(&mut table, "jobs")?).unwrap_or(1);
    let world: WorldConfig = toml::Value::Table(table).try_into().map_err(usage)?;
    world.validate().map_err(usage)?;
    let stats = build_dataset(&world, SplitCounts { train, valid, test }, seed, &a.out, jobs).map_err(runtime)?;
    emit(out, &stats.table())
}

/// Config keys that belong to the training loop; the rest configure the model.
const TRAIN_KEYS: [&str; 8] = [
    "epochs",
    "batch_size",
    "lr",
    "clip_norm",
    "max_steps",
    "val_limit",
    "eval_every",
    "log_every",
];

fn load_split(path: &Path, registry: &RelationRegistry) -> Result<Vec<Transition>> {
    if !path.is_file() {
        return Err(usage(format!("{}: no such data file", path.display())));
    }
    load_dataset(path, registry).map_err(usage)
}

fn train_cmd(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    if !a.data.is_dir() {
        return Err(usage(format!("{}: no such data directory", a.data.display())));
    }
    let mut table = read_table(a.config.as_deref())?;
    let registry = match take::<Vec<String>>(&mut table, "relations")? {
        Some(labels) => RelationRegistry::new(labels).map_err(usage)?,
        None => RelationRegistry::default(),
    };
    let seed: Option<u64> = a.seed.or(take(&mut table, "seed")?);
    let mut train_table = toml::Table::new();
    for key in TRAIN_KEYS {
        if let Some(v) = table.remove(key) {
            train_table.insert(key.to_string(), v);
        }
    }
    let mut model_cfg: ModelConfig = toml::Value::Table(table).try_into().map_err(usage)?;
    let mut train_cfg: TrainConfig = toml::Value::Table(train_table).try_into().map_err(usage)?;
    if let Some(s) = seed {
        model_cfg.seed = s;
        train_cfg.seed = s;
    }
    if let Some(v) = &a.variant {
        model_cfg.variant = EncoderVariant::parse(v).ok_or_else(|| usage(format!("unknown variant {v}")))?;
    }
    if let Some(h) = a.hidden {
        model_cfg.hidden = h;
        model_cfg.ffn_hidden = 2 * h;
    }
    if let Some(m) = a.max_decode_len {
        model_cfg.max_decode_len = m;
    }
    if let Some(e) = a.epochs {
        train_cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        train_cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        train_cfg.lr = lr;
    }
    if a.max_steps.is_some() {
        train_cfg.max_steps = a.max_steps;
    }
    model_cfg.validate().map_err(usage)?;

    let train_data = load_split(&a.data.join(Split::Train.file_name()), &registry)?;
    let valid_path = a.data.join(Split::Valid.file_name());
    let valid_data = if valid_path.is_file() { load_split(&valid_path, &registry)? } else { Vec::new() };
    let vocab = build_vocab(&train_data, &registry);
    let mut model = Model::new(model_cfg, vocab, registry).map_err(usage)?;

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let mut log_file = fs::File::create(&log_path).map_err(|e| runtime(format!("{}: {e}", log_path.display())))?;
    let mut log_error = None;
    let mut log = |e: &LogEntry| {
        let line = serde_json::to_string(e).expect("log entries serialize");
        eprintln!("{line}");
        if let Err(err) = writeln!(log_file, "{line}") {
            log_error.get_or_insert(err);
        }
    };
    let outcome = train(&mut model, &train_data, &valid_data, &train_cfg, None, &mut log).map_err(runtime)?;
    if let Some(e) = log_error {
        return Err(runtime(format!("{}: {e}", log_path.display())));
    }
    model.save(&a.out, &outcome.state).map_err(runtime)?;

    let mut summary = String::new();
    summary += &format!("variant {}\n", model.variant());
    summary += &format!("parameters {}\n", model.params.num_elements());
    summary += &format!("train_transitions {}\n", train_data.len());
    summary += &format!("skipped_too_long {}\n", outcome.skipped_too_long);
    summary += &format!("steps {}\n", outcome.steps);
    if let Some(best) = outcome.best_val_tf_f1 {
        summary += &format!("best_val_tf_f1 {best:.4} (step {})\n", outcome.best_step);
    }
    summary += &format!("checkpoint {}\n", a.out.display());
    emit(out, &summary)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Protocol {
    TeacherForced,
    FreeRun,
}

fn eval(a: &EvalArgs, protocol: Protocol, out: &mut dyn Write) -> Result<()> {
    let model = match &a.ckpt {
        Some(path) if !a.oracle => {
            if !path.is_file() {
                return Err(usage(format!("{}: no such checkpoint", path.display())));
            }
            Some(Model::load(path).map_err(usage)?.0)
        }
        _ => None,
    };
    let registry = model.as_ref().map(|m| m.registry.clone()).unwrap_or_default();
    let path = if a.data.is_dir() {
        let split = match a.split.as_str() {
            "train" => Split::Train,
            "valid" => Split::Valid,
            _ => Split::Test,
        };
        a.data.join(split.file_name())
    } else {
        a.data.clone()
    };
    let transitions = load_split(&path, &registry)?;
    let generator: &(dyn UpdateGenerator + Sync) = match &model {
        Some(m) => m,
        None => &OracleGenerator,
    };
    let averaging = if a.micro { Averaging::Micro } else { Averaging::PerTransition };

    let mut report = EvalReport::default();
    report.counts.transitions = transitions.len();
    let mut per_transition = None;
    match protocol {
        Protocol::TeacherForced => {
            let tf = tf_f1(generator, &transitions, averaging, a.jobs);
            report.tf_f1 = Some(tf.score);
            report.averaging = Some(averaging);
            report.counts.malformed = tf.malformed();
            per_transition = Some(tf.per_transition);
        }
        Protocol::FreeRun => {
            let games = group_games(&transitions);
            let fr = fr_f1(generator, &games, a.jobs);
            report.fr_f1 = Some(fr.score);
            report.fr_step_curve = fr.step_curve;
            report.counts.games = games.len();
            report.counts.malformed = fr.malformed;
        }
    }
    if a.per_verb {
        let scores = match per_transition {
            Some(s) => s,
            None => tf_f1(generator, &transitions, Averaging::PerTransition, a.jobs).per_transition,
        };
        report.per_verb = group_scores_by_verb(&transitions, &scores);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in &transitions {
            *counts.entry(verb_group(&t.action)).or_default() += 1;
        }
        report.per_verb_counts = counts;
    }

    let json = serde_json::to_string_pretty(&report).map_err(runtime)? + "\n";
    match &a.report {
        Some(p) => {
            fs::write(p, &json).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            let mut summary = String::new();
            if let Some(s) = report.tf_f1 {
                summary += &format!("tf_f1 {s:.4}\n");
            }
            if let Some(s) = report.fr_f1 {
                summary += &format!("fr_f1 {s:.4}\n");
            }
            summary += &format!(
                "transitions {} games {} malformed {}\n",
                report.counts.transitions, report.counts.games, report.counts.malformed
            );
            if a.per_verb {
                summary += &per_verb_table(&report.per_verb, Some(&report.per_verb_counts));
            }
            emit(out, &summary)
        }
        None => emit(out, &json),
    }
}

fn read_graph(path: &Path, registry: &RelationRegistry) -> Result<BeliefGraph> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    BeliefGraph::from_rdf_text(&text, registry).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_ops(path: &Path, registry: &RelationRegistry) -> Result<UpdateSequence> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut ops = UpdateSequence::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let op = parse_op(&tokenize(line), registry).map_err(|e| usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        ops.push(op);
    }
    Ok(ops)
}

fn render_ops(ops: &UpdateSequence) -> String {
    ops.iter().map(|op| render_op(op) + "\n").collect()
}

fn apply(a: &ApplyArgs, out: &mut dyn Write) -> Result<()> {
    let registry = RelationRegistry::default();
    let graph = match &a.graph {
        Some(p) => read_graph(p, &registry)?,
        None => BeliefGraph::new(),
    };
    let ops = read_ops(&a.ops, &registry)?;
    write_output(a.out.as_deref(), &graph.apply_update(&ops).to_rdf_text(), out)
}

fn diff(a: &DiffArgs, out: &mut dyn Write) -> Result<()> {
    let registry = RelationRegistry::default();
    let from = read_graph(&a.from, &registry)?;
    let to = read_graph(&a.to, &registry)?;
    write_output(a.out.as_deref(), &render_ops(&from.diff(&to)), out)
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let results = run_suite(&Block::ALL, 0..a.seeds).map_err(runtime)?;
    emit(out, &suite_table(&results, a.tol))?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed(a.tol)).map(|r| r.block.name()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!("gradient check failed for {}", failed.join(", "))))
    }
}
