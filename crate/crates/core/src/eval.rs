//! Scoring: command-level F1 with the gold prior graph as input, free-run
//! triple-level F1 over whole games, and per-verb breakdowns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::graph::{BeliefGraph, Relation, Triple, UpdateOp, UpdateSequence};
use crate::world::{Transition, ACTION_VERBS};

/// F1 from raw counts. Both sides empty scores 1; one side empty scores 0.
pub fn f1_from_counts(n_pred: usize, n_gold: usize, n_hit: usize) -> f64 {
    if n_pred == 0 && n_gold == 0 {
        return 1.0;
    }
    if n_pred == 0 || n_gold == 0 || n_hit == 0 {
        return 0.0;
    }
    let p = n_hit as f64 / n_pred as f64;
    let r = n_hit as f64 / n_gold as f64;
    2.0 * p * r / (p + r)
}

pub fn set_f1<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>) -> f64 {
    f1_from_counts(predicted.len(), gold.len(), predicted.intersection(gold).count())
}

/// Output of a command generator for one transition.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Generation {
    pub ops: UpdateSequence,
    /// Segments that failed to parse; they count as wrong predictions.
    pub malformed: usize,
}

/// Anything that proposes update commands from a transition's text and an
/// input graph.
pub trait UpdateGenerator {
    fn generate(&self, transition: &Transition, graph: &BeliefGraph) -> Generation;

    /// Whether the generator conditions on relation labels. Free-run scoring
    /// of non-relational generators compares single-relation graphs.
    fn relational(&self) -> bool {
        true
    }
}

/// Replays the gold commands of each transition, ignoring the input graph.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleGenerator;

impl UpdateGenerator for OracleGenerator {
    fn generate(&self, transition: &Transition, _graph: &BeliefGraph) -> Generation {
        Generation { ops: transition.ops.clone(), malformed: 0 }
    }
}

/// Counts for one command-level comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CommandCounts {
    pub n_pred: usize,
    pub n_gold: usize,
    pub n_hit: usize,
    pub malformed: usize,
}

impl CommandCounts {
    pub fn f1(&self) -> f64 {
        f1_from_counts(self.n_pred, self.n_gold, self.n_hit)
    }
}

/// Compares whole commands structurally. Duplicate predictions collapse;
/// malformed segments add to the prediction count.
pub fn command_counts(generated: &Generation, gold: &UpdateSequence) -> CommandCounts {
    let pred: BTreeSet<&UpdateOp> = generated.ops.iter().collect();
    let gold: BTreeSet<&UpdateOp> = gold.iter().collect();
    CommandCounts {
        n_pred: pred.len() + generated.malformed,
        n_gold: gold.len(),
        n_hit: pred.intersection(&gold).count(),
        malformed: generated.malformed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Mean of per-transition F1.
    #[default]
    PerTransition,
    /// F1 of corpus-wide command counts.
    Micro,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfResult {
    pub score: f64,
    pub per_transition: Vec<f64>,
    pub counts: Vec<CommandCounts>,
}

impl TfResult {
    pub fn malformed(&self) -> usize {
        self.counts.iter().map(|c| c.malformed).sum()
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Runs `f` over `items` on up to `jobs` threads and returns results in input
/// order.
pub fn map_ordered<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Teacher-forced command F1: each transition is generated from its gold
/// prior graph and compared with its gold commands.
pub fn tf_f1<G: UpdateGenerator + Sync + ?Sized>(generator: &G, transitions: &[Transition], averaging: Averaging, jobs: usize) -> TfResult {
    let counts: Vec<CommandCounts> = map_ordered(transitions, jobs, |t| {
        command_counts(&generator.generate(t, &t.g_seen_prev), &t.ops)
    });
    let per_transition: Vec<f64> = counts.iter().map(CommandCounts::f1).collect();
    let score = match averaging {
        Averaging::PerTransition => mean(&per_transition),
        Averaging::Micro => {
            let sum = |f: fn(&CommandCounts) -> usize| counts.iter().map(f).sum::<usize>();
            f1_from_counts(sum(|c| c.n_pred), sum(|c| c.n_gold), sum(|c| c.n_hit))
        }
    };
    TfResult { score, per_transition, counts }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrResult {
    pub score: f64,
    pub per_game: Vec<f64>,
    /// Mean F1 of the running belief against the gold seen graph, by step.
    pub step_curve: Vec<f64>,
    pub malformed: usize,
}

fn triple_set(g: &BeliefGraph, collapse: bool) -> BTreeSet<Triple> {
    if collapse {
        g.collapse_relations(&Relation::collapsed()).iter().cloned().collect()
    } else {
        g.iter().cloned().collect()
    }
}

/// Free-run F1 for one game: the belief starts empty and each on-path step
/// feeds the generator its own previous belief.
pub fn free_run_game<G: UpdateGenerator + ?Sized>(generator: &G, game: &[&Transition]) -> (f64, Vec<f64>, usize) {
    let collapse = !generator.relational();
    let mut on_path: Vec<&Transition> = game.iter().copied().filter(|t| t.is_on_path()).collect();
    on_path.sort_by_key(|t| t.step);
    let mut belief = BeliefGraph::new();
    let mut curve = Vec::with_capacity(on_path.len());
    let mut malformed = 0;
    for t in &on_path {
        let out = generator.generate(t, &belief);
        malformed += out.malformed;
        belief = belief.apply_update(&out.ops);
        curve.push(set_f1(&triple_set(&belief, collapse), &triple_set(&t.g_seen_next, collapse)));
    }
    let gold_final = on_path.last().map(|t| t.g_seen_next.clone()).unwrap_or_default();
    let score = set_f1(&triple_set(&belief, collapse), &triple_set(&gold_final, collapse));
    (score, curve, malformed)
}

pub fn fr_f1<G: UpdateGenerator + Sync + ?Sized>(generator: &G, games: &[Vec<&Transition>], jobs: usize) -> FrResult {
    let runs = map_ordered(games, jobs, |g| free_run_game(generator, g));
    let per_game: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let longest = runs.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let step_curve = (0..longest)
        .map(|i| {
            let at: Vec<f64> = runs.iter().filter_map(|r| r.1.get(i).copied()).collect();
            mean(&at)
        })
        .collect();
    FrResult {
        score: mean(&per_game),
        per_game,
        step_curve,
        malformed: runs.iter().map(|r| r.2).sum(),
    }
}

/// Group key for an action: its leading verb if it belongs to the action
/// grammar, otherwise `other`.
pub fn verb_group(action: &str) -> String {
    let verb = action.split_whitespace().next().unwrap_or("").to_lowercase();
    if ACTION_VERBS.contains(&verb.as_str()) {
        verb
    } else {
        "other".to_string()
    }
}

/// Mean per-transition score within each verb group.
pub fn group_scores_by_verb(transitions: &[Transition], scores: &[f64]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (t, s) in transitions.iter().zip(scores) {
        let e = acc.entry(verb_group(&t.action)).or_default();
        e.0 += s;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

pub fn group_by_verb<G: UpdateGenerator + Sync + ?Sized>(generator: &G, transitions: &[Transition], jobs: usize) -> BTreeMap<String, f64> {
    let tf = tf_f1(generator, transitions, Averaging::PerTransition, jobs);
    group_scores_by_verb(transitions, &tf.per_transition)
}

/// Aligned two-column table, verbs in grammar order.
pub fn per_verb_table(per_verb: &BTreeMap<String, f64>, counts: Option<&BTreeMap<String, usize>>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>7} {:>7}", "verb", "TF-F1", "n");
    let order = ACTION_VERBS.iter().map(|s| s.to_string()).chain(std::iter::once("other".to_string()));
    for verb in order {
        if let Some(score) = per_verb.get(&verb) {
            let n = counts.and_then(|c| c.get(&verb)).map(|n| n.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{verb:<10} {score:>7.3} {n:>7}");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalCounts {
    pub transitions: usize,
    pub games: usize,
    pub malformed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tf_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fr_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub averaging: Option<Averaging>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub per_verb: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub per_verb_counts: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub fr_step_curve: Vec<f64>,
    pub counts: EvalCounts,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{RelationRegistry, Verb};

    fn op(verb: Verb, h: &str, t: &str, r: &str) -> UpdateOp {
        UpdateOp { verb, triple: Triple::parse(h, t, r, &RelationRegistry::default()).unwrap() }
    }

    #[test]
    fn set_f1_examples() {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(set_f1(&s(&["a", "b"]), &s(&["a", "b"])), 1.0);
        assert!((set_f1(&s(&["a", "b"]), &s(&["b", "c"])) - 0.5).abs() < 1e-12);
        assert_eq!(set_f1(&s(&[]), &s(&[])), 1.0);
        assert_eq!(set_f1(&s(&["a"]), &s(&[])), 0.0);
        assert_eq!(set_f1(&s(&[]), &s(&["a"])), 0.0);
    }

    #[test]
    fn one_wrong_command_of_two() {
        let gold: UpdateSequence = vec![op(Verb::Add, "a", "b", "in"), op(Verb::Delete, "c", "d", "on")].into();
        let pred = Generation {
            ops: vec![op(Verb::Add, "a", "b", "in"), op(Verb::Delete, "c", "e", "on")].into(),
            malformed: 0,
        };
        assert!((command_counts(&pred, &gold).f1() - 0.5).abs() < 1e-12);
        let with_bad = Generation { ops: vec![op(Verb::Add, "a", "b", "in")].into(), malformed: 1 };
        assert!((command_counts(&with_bad, &gold).f1() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn verb_groups() {
        assert_eq!(verb_group("go west"), "go");
        assert_eq!(verb_group("prepare meal"), "prepare");
        assert_eq!(verb_group("dance wildly"), "other");
        assert_eq!(verb_group(""), "other");
    }

    #[test]
    fn map_ordered_keeps_order() {
        let items: Vec<u32> = (0..37).collect();
        assert_eq!(map_ordered(&items, 4, |x| x * 2), map_ordered(&items, 1, |x| x * 2));
    }
}
