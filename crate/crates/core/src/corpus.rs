//! JSONL dataset files, split generation and vocabulary construction.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{self, Vocabulary};
use crate::eval::map_ordered;
use crate::graph::{BeliefGraph, GraphError, RelationRegistry, Triple};
use crate::world::{generate_game_with, Game, NamePool, Transition, WorldConfig, WorldError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Schema { path: String, line: usize, message: String },
    #[error(transparent)]
    World(#[from] WorldError),
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    pub game: u64,
    pub step: usize,
    #[serde(default)]
    pub branch: usize,
    /// `[head, relation, tail]` triples, sorted.
    pub graph_prev: Vec<[String; 3]>,
    pub action: String,
    pub observation: String,
    pub graph_next: Vec<[String; 3]>,
    /// Rendered commands in canonical order.
    pub ops: Vec<String>,
}

fn graph_rows(g: &BeliefGraph) -> Vec<[String; 3]> {
    g.to_rdf_triples()
        .into_iter()
        .map(|t| [t.head.label().to_string(), t.relation.label().to_string(), t.tail.label().to_string()])
        .collect()
}

fn rows_graph(rows: &[[String; 3]], registry: &RelationRegistry) -> Result<BeliefGraph, GraphError> {
    rows.iter()
        .map(|[h, r, t]| Triple::parse(h, t, r, registry))
        .collect()
}

impl TransitionRecord {
    pub fn from_transition(t: &Transition) -> Self {
        TransitionRecord {
            game: t.game,
            step: t.step,
            branch: t.branch,
            graph_prev: graph_rows(&t.g_seen_prev),
            action: t.action.clone(),
            observation: t.observation.clone(),
            graph_next: graph_rows(&t.g_seen_next),
            ops: t.ops.iter().map(dsl::render_op).collect(),
        }
    }

    /// Rebuilds the transition and checks that the stored ops equal the diff
    /// of the stored graphs.
    pub fn to_transition(&self, registry: &RelationRegistry) -> Result<Transition, String> {
        let prev = rows_graph(&self.graph_prev, registry).map_err(|e| e.to_string())?;
        let next = rows_graph(&self.graph_next, registry).map_err(|e| e.to_string())?;
        let ops = prev.diff(&next);
        let rendered: Vec<String> = ops.iter().map(dsl::render_op).collect();
        if rendered != self.ops {
            return Err(format!(
                "stored ops do not match the graph diff (stored {}, derived {})",
                self.ops.len(),
                rendered.len()
            ));
        }
        for op in &self.ops {
            dsl::parse_op(&dsl::tokenize(op), registry).map_err(|e| e.to_string())?;
        }
        Ok(Transition {
            game: self.game,
            step: self.step,
            branch: self.branch,
            g_seen_prev: prev,
            action: self.action.clone(),
            observation: self.observation.clone(),
            g_seen_next: next,
            ops,
        })
    }
}

pub fn write_jsonl<W: Write>(mut out: W, transitions: &[Transition]) -> io::Result<()> {
    for t in transitions {
        let line = serde_json::to_string(&TransitionRecord::from_transition(t)).map_err(io::Error::other)?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R, registry: &RelationRegistry, path: &str) -> Result<Vec<Transition>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io { path: path.to_string(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| CorpusError::Schema { path: path.to_string(), line: i + 1, message };
        let record: TransitionRecord = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        out.push(record.to_transition(registry).map_err(schema)?);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, registry: &RelationRegistry) -> Result<Vec<Transition>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    read_jsonl(BufReader::new(file), registry, &path.display().to_string())
}

/// Groups transitions by game id, keeping file order within a game.
pub fn group_games(transitions: &[Transition]) -> Vec<Vec<&Transition>> {
    let mut ids: Vec<u64> = Vec::new();
    let mut groups: Vec<Vec<&Transition>> = Vec::new();
    for t in transitions {
        match ids.iter().position(|&g| g == t.game) {
            Some(i) => groups[i].push(t),
            None => {
                ids.push(t.game);
                groups.push(vec![t]);
            }
        }
    }
    groups
}

/// Every token a model may read or write: observation and action words,
/// entity and relation labels (relations also split on `_`), command syntax
/// and the reserved tokens.
pub fn build_vocab<'a>(transitions: impl IntoIterator<Item = &'a Transition>, registry: &RelationRegistry) -> Vocabulary {
    let mut tokens: BTreeSet<String> = BTreeSet::new();
    for w in ["add", "delete", "(", ")", ","] {
        tokens.insert(w.to_string());
    }
    for r in registry.labels() {
        tokens.insert(r.clone());
        tokens.extend(r.split('_').map(String::from));
    }
    for t in transitions {
        tokens.extend(dsl::tokenize(&t.action).into_iter().map(|t| t.text));
        tokens.extend(dsl::tokenize(&t.observation).into_iter().map(|t| t.text));
        for g in [&t.g_seen_prev, &t.g_seen_next] {
            for tr in g {
                tokens.extend(tr.head.label().split(' ').map(String::from));
                tokens.extend(tr.tail.label().split(' ').map(String::from));
            }
        }
    }
    Vocabulary::from_tokens(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Valid => "valid.jsonl",
            Split::Test => "test.jsonl",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Valid => 2,
            Split::Test => 3,
        }
    }

    fn names(self) -> NamePool {
        match self {
            Split::Test => NamePool::Test,
            _ => NamePool::Train,
        }
    }
}

/// Seed for game `index` of `split`; distinct splits never share a seed
/// stream because the split tag is mixed in.
pub fn game_seed(master: u64, split: Split, index: u64) -> u64 {
    let mut z = master ^ split.tag().wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }
}

/// Generates the games of every split. Game ids run consecutively over
/// train, valid, then test.
pub fn generate_splits(config: &WorldConfig, counts: SplitCounts, seed: u64) -> Result<Vec<(Split, Vec<Game>)>, CorpusError> {
    generate_splits_jobs(config, counts, seed, 1)
}

/// As [`generate_splits`], spreading games over `jobs` threads. The result
/// does not depend on `jobs`.
pub fn generate_splits_jobs(
    config: &WorldConfig,
    counts: SplitCounts,
    seed: u64,
    jobs: usize,
) -> Result<Vec<(Split, Vec<Game>)>, CorpusError> {
    let mut plan = Vec::new();
    for split in Split::ALL {
        for i in 0..counts.get(split) {
            plan.push((split, i as u64, plan.len() as u64));
        }
    }
    let games = map_ordered(&plan, jobs, |&(split, i, id)| {
        generate_game_with(config, game_seed(seed, split, i), id, split.names())
    });
    let mut out: Vec<(Split, Vec<Game>)> = Split::ALL.iter().map(|&s| (s, Vec::new())).collect();
    for (&(split, _, _), game) in plan.iter().zip(games) {
        let slot = Split::ALL.iter().position(|&s| s == split).expect("known split");
        out[slot].1.push(game?);
    }
    Ok(out)
}

/// Corpus statistics with the usual dataset-table columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    #[serde(rename = "#Train")]
    pub n_train: usize,
    #[serde(rename = "#Valid")]
    pub n_valid: usize,
    #[serde(rename = "#Test")]
    pub n_test: usize,
    #[serde(rename = "Avg. Obs.")]
    pub avg_obs_tokens: f64,
    #[serde(rename = "Avg. #Operations")]
    pub avg_ops: f64,
    #[serde(rename = "#Vertices")]
    pub n_vertices: usize,
    #[serde(rename = "#Edges")]
    pub n_edges: usize,
    #[serde(rename = "Avg. #Connections")]
    pub avg_connections: f64,
}

impl DatasetStats {
    pub fn compute(splits: &[(Split, Vec<Transition>)]) -> Self {
        let count = |s: Split| splits.iter().filter(|(k, _)| *k == s).map(|(_, v)| v.len()).sum();
        let all: Vec<&Transition> = splits.iter().flat_map(|(_, v)| v.iter()).collect();
        let n = all.len().max(1) as f64;
        let mut vertices = BTreeSet::new();
        let mut relations = BTreeSet::new();
        for t in &all {
            for tr in t.g_seen_next.iter().chain(t.g_seen_prev.iter()) {
                vertices.insert(tr.head.label().to_string());
                vertices.insert(tr.tail.label().to_string());
                relations.insert(tr.relation.label().to_string());
            }
        }
        DatasetStats {
            n_train: count(Split::Train),
            n_valid: count(Split::Valid),
            n_test: count(Split::Test),
            avg_obs_tokens: all.iter().map(|t| dsl::tokenize(&t.observation).len() as f64).sum::<f64>() / n,
            avg_ops: all.iter().map(|t| t.ops.len() as f64).sum::<f64>() / n,
            n_vertices: vertices.len(),
            n_edges: relations.len(),
            avg_connections: all.iter().map(|t| t.g_seen_next.len() as f64).sum::<f64>() / n,
        }
    }

    /// Two-line aligned table.
    pub fn table(&self) -> String {
        let headers = ["#Train", "#Valid", "#Test", "Avg. Obs.", "Avg. #Operations", "#Vertices", "#Edges", "Avg. #Connections"];
        let values = [
            self.n_train.to_string(),
            self.n_valid.to_string(),
            self.n_test.to_string(),
            format!("{:.1}", self.avg_obs_tokens),
            format!("{:.2}", self.avg_ops),
            self.n_vertices.to_string(),
            self.n_edges.to_string(),
            format!("{:.1}", self.avg_connections),
        ];
        let widths: Vec<usize> = headers.iter().zip(&values).map(|(h, v)| h.len().max(v.len())).collect();
        let row = |cells: Vec<String>| -> String {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        format!(
            "{}\n{}\n",
            row(headers.iter().map(|s| s.to_string()).collect()),
            row(values.to_vec())
        )
    }
}

/// Writes `train.jsonl`, `valid.jsonl`, `test.jsonl` and `stats.json` into
/// `dir` and returns the statistics.
pub fn build_dataset(
    config: &WorldConfig,
    counts: SplitCounts,
    seed: u64,
    dir: &Path,
    jobs: usize,
) -> Result<DatasetStats, CorpusError> {
    let io_err = |p: &Path| {
        let path = p.display().to_string();
        move |source| CorpusError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut splits = Vec::new();
    for (split, games) in generate_splits_jobs(config, counts, seed, jobs)? {
        let transitions: Vec<Transition> = games.into_iter().flat_map(|g| g.transitions).collect();
        let path = dir.join(split.file_name());
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = io::BufWriter::new(file);
        write_jsonl(&mut w, &transitions).map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))?;
        splits.push((split, transitions));
    }
    let stats = DatasetStats::compute(&splits);
    let path = dir.join("stats.json");
    let json = serde_json::to_string_pretty(&stats).expect("stats serialize");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(stats)
}
