//! Acceptance suite. Runs every criterion in sequence and prints one
//! PASS/FAIL line each. Positional arguments select criteria by substring.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use kgdelta_core::corpus::{build_vocab, generate_splits, group_games, read_jsonl, write_jsonl, SplitCounts};
use kgdelta_core::dsl::{parse_sequence, render_op, render_sequence, tokenize};
use kgdelta_core::eval::{fr_f1, group_scores_by_verb, tf_f1, Averaging, Generation, OracleGenerator, UpdateGenerator};
use kgdelta_core::examples::{default_registry, shed_transition};
use kgdelta_core::graph::DEFAULT_RELATIONS;
use kgdelta_core::{BeliefGraph, RelationRegistry, Transition, Triple, UpdateOp, UpdateSequence, WorldConfig};
use kgdelta_model::gradcheck::{run_suite, suite_table, Block};
use kgdelta_model::{train, EncoderVariant, Model, ModelConfig, TrainConfig, TrainingState};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
    /// Extra lines printed under the verdict.
    notes: Vec<String>,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome { passed, detail: detail.into(), notes: Vec::new() }
    }
}

const CRITERIA: [(&str, fn() -> Outcome); 8] = [
    ("gradient-suite", gradient_suite),
    ("update-algebra", update_algebra),
    ("dsl-round-trip", dsl_round_trip),
    ("metric-oracle", metric_oracle),
    ("corpus-integrity", corpus_integrity),
    ("overfit", overfit),
    ("trend", trend),
    ("determinism", determinism),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut passed, mut failed) = (0, 0);
    for (name, check) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {name} [{:.1}s]: {}", t0.elapsed().as_secs_f64(), outcome.detail);
        for note in &outcome.notes {
            println!("     {note}");
        }
        if outcome.passed {
            passed += 1;
        } else {
            failed += 1;
        }
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- gradients

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let results = run_suite(&Block::ALL, 0..20).expect("suite runs");
    let elapsed = t0.elapsed();
    let tol = 1e-3;
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("blocks");
    let passed = results.len() == Block::ALL.len()
        && results.iter().all(|r| r.seeds == 20 && r.passed(tol))
        && elapsed < Duration::from_secs(120);
    let mut out = Outcome::new(
        passed,
        format!(
            "{} blocks x 20 seeds, worst {} {:.2e} < {tol:.0e}, {:.1}s < 120s",
            results.len(),
            worst.block.name(),
            worst.max_rel_error,
            elapsed.as_secs_f64()
        ),
    );
    if !passed {
        out.notes = suite_table(&results, tol).lines().map(String::from).collect();
    }
    out
}

// ------------------------------------------------------------ random graphs

const NAMES: [&str; 10] = [
    "player", "shed", "backyard", "kitchen", "red apple", "toolbox", "wooden door", "closed", "sliced", "workbench",
];

fn random_triple(rng: &mut ChaCha8Rng, registry: &RelationRegistry) -> Triple {
    let h = NAMES[rng.gen_range(0..NAMES.len())];
    let t = NAMES[rng.gen_range(0..NAMES.len())];
    let r = DEFAULT_RELATIONS[rng.gen_range(0..DEFAULT_RELATIONS.len())];
    Triple::parse(h, t, r, registry).expect("valid triple")
}

fn random_graph(rng: &mut ChaCha8Rng, registry: &RelationRegistry, max: usize) -> BeliefGraph {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| random_triple(rng, registry)).collect()
}

fn random_op(rng: &mut ChaCha8Rng, registry: &RelationRegistry) -> UpdateOp {
    let t = random_triple(rng, registry);
    if rng.gen_bool(0.5) {
        UpdateOp::add(t)
    } else {
        UpdateOp::delete(t)
    }
}

/// Adds a few random edges and removes a few existing ones.
fn mutate(g: &BeliefGraph, rng: &mut ChaCha8Rng, registry: &RelationRegistry) -> BeliefGraph {
    let mut ops: Vec<UpdateOp> = (0..rng.gen_range(0..=3)).map(|_| UpdateOp::add(random_triple(rng, registry))).collect();
    let existing: Vec<&Triple> = g.iter().collect();
    for _ in 0..rng.gen_range(0..=2) {
        if let Some(t) = existing.choose(rng) {
            ops.push(UpdateOp::delete((*t).clone()));
        }
    }
    g.apply_update(&ops.into())
}

// ------------------------------------------------------------------ algebra

fn update_algebra() -> Outcome {
    let t0 = Instant::now();
    let registry = default_registry();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut failures = Vec::new();
    let mut absent_checked = 0;
    for i in 0..1000 {
        let g = random_graph(&mut rng, &registry, 15);
        let h = random_graph(&mut rng, &registry, 15);
        let delta = g.diff(&h);
        if g.apply_update(&delta) != h {
            failures.push(format!("round trip #{i}"));
        }
        let mut shuffled = delta.into_vec();
        shuffled.shuffle(&mut rng);
        if g.apply_update(&shuffled.into()) != h {
            failures.push(format!("permuted diff #{i}"));
        }
        let t = random_triple(&mut rng, &registry);
        if !g.contains(&t) {
            absent_checked += 1;
            if g.apply_op(&UpdateOp::delete(t)) != g {
                failures.push(format!("absent delete #{i}"));
            }
        }
    }
    let elapsed = t0.elapsed();
    let passed = failures.is_empty() && absent_checked > 0 && elapsed < Duration::from_secs(10);
    Outcome::new(
        passed,
        format!(
            "1000 pairs: round trip, permuted diff, {absent_checked} absent deletes; {} failures; {:.2}s < 10s{}",
            failures.len(),
            elapsed.as_secs_f64(),
            failures.first().map(|f| format!("; first {f}")).unwrap_or_default()
        ),
    )
}

fn dsl_round_trip() -> Outcome {
    let registry = default_registry();
    let mut rng = ChaCha8Rng::seed_from_u64(2000);
    let mut failures = 0;
    let mut first = String::new();
    for _ in 0..1000 {
        let n = rng.gen_range(0..=12);
        let seq: UpdateSequence = (0..n).map(|_| random_op(&mut rng, &registry)).collect::<Vec<_>>().into();
        let seq = seq.canonical_order();
        let tokens = render_sequence(&seq);
        let text: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
        let from_tokens = parse_sequence(&tokens, &registry);
        let from_text = parse_sequence(&tokenize(&text.join(" ")), &registry);
        if from_tokens != (seq.clone(), 0) || from_text != (seq, 0) {
            failures += 1;
            if first.is_empty() {
                first = format!("; first {}", text.join(" "));
            }
        }
    }
    Outcome::new(failures == 0, format!("1000 canonical sequences, {failures} mismatches{first}"))
}

// ------------------------------------------------------------------ metrics

/// Replays a fixed generation per transition, keyed by (game, step, branch).
struct Scripted {
    outputs: BTreeMap<(u64, usize, usize), Generation>,
    relational: bool,
}

impl UpdateGenerator for Scripted {
    fn generate(&self, t: &Transition, _graph: &BeliefGraph) -> Generation {
        self.outputs[&(t.game, t.step, t.branch)].clone()
    }

    fn relational(&self) -> bool {
        self.relational
    }
}

fn labels(t: &Triple) -> (String, String, String) {
    (t.head.label().to_string(), t.tail.label().to_string(), t.relation.label().to_string())
}

fn brute_f1(n_pred: usize, n_gold: usize, n_hit: usize) -> f64 {
    match (n_pred, n_gold) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => 2.0 * n_hit as f64 / (n_pred + n_gold) as f64,
    }
}

fn dedup(items: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// (n_pred, n_gold, n_hit) for one transition, from rendered command strings.
fn brute_counts(generation: &Generation, gold: &UpdateSequence) -> (usize, usize, usize) {
    let pred = dedup(generation.ops.iter().map(render_op));
    let gold = dedup(gold.iter().map(render_op));
    let hits = pred.iter().filter(|p| gold.contains(p)).count();
    (pred.len() + generation.malformed, gold.len(), hits)
}

fn brute_fr(script: &Scripted, transitions: &[Transition]) -> f64 {
    let mut games: BTreeMap<u64, Vec<&Transition>> = BTreeMap::new();
    for t in transitions.iter().filter(|t| t.branch == 0) {
        games.entry(t.game).or_default().push(t);
    }
    let key = |(h, t, r): (String, String, String)| if script.relational { (h, t, r) } else { (h, t, String::new()) };
    let mut total = 0.0;
    for steps in games.values_mut() {
        steps.sort_by_key(|t| t.step);
        let mut belief: Vec<(String, String, String)> = Vec::new();
        for t in steps.iter() {
            for op in script.generate(t, &BeliefGraph::new()).ops.iter() {
                let e = labels(&op.triple);
                let pos = belief.iter().position(|b| *b == e);
                match (op.verb == kgdelta_core::Verb::Add, pos) {
                    (true, None) => belief.push(e),
                    (false, Some(i)) => {
                        belief.remove(i);
                    }
                    _ => {}
                }
            }
        }
        let pred: Vec<_> = dedup_keys(belief.into_iter().map(key));
        let gold: Vec<_> = dedup_keys(steps.last().unwrap().g_seen_next.iter().map(labels).map(key));
        let hits = pred.iter().filter(|p| gold.contains(p)).count();
        total += brute_f1(pred.len(), gold.len(), hits);
    }
    total / games.len() as f64
}

fn dedup_keys<T: PartialEq>(items: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn random_case(rng: &mut ChaCha8Rng, registry: &RelationRegistry) -> (Scripted, Vec<Transition>) {
    let mut transitions = Vec::new();
    let mut outputs = BTreeMap::new();
    for game in 0..rng.gen_range(1..=3u64) {
        let mut g = BeliefGraph::new();
        for step in 0..rng.gen_range(1..=5usize) {
            for branch in 0..=rng.gen_range(0..=2usize) {
                let next = if rng.gen_bool(0.15) { g.clone() } else { mutate(&g, rng, registry) };
                let ops = g.diff(&next);
                let mut pred: Vec<UpdateOp> = ops.iter().filter(|_| rng.gen_bool(0.6)).cloned().collect();
                if let Some(dup) = pred.first().cloned().filter(|_| rng.gen_bool(0.3)) {
                    pred.push(dup);
                }
                for _ in 0..rng.gen_range(0..=2) {
                    pred.push(random_op(rng, registry));
                }
                pred.shuffle(rng);
                let malformed = if rng.gen_bool(0.3) { rng.gen_range(1..=2) } else { 0 };
                outputs.insert((game, step, branch), Generation { ops: pred.into(), malformed });
                transitions.push(Transition {
                    game,
                    step,
                    branch,
                    g_seen_prev: g.clone(),
                    action: "look".into(),
                    observation: String::new(),
                    g_seen_next: next.clone(),
                    ops,
                });
                if branch == 0 {
                    g = next;
                }
            }
        }
    }
    transitions.shuffle(rng);
    let relational = rng.gen_bool(0.5);
    (Scripted { outputs, relational }, transitions)
}

fn metric_oracle() -> Outcome {
    let registry = default_registry();
    let mut rng = ChaCha8Rng::seed_from_u64(3000);
    let mut worst: f64 = 0.0;
    let (mut collapsed, mut malformed) = (0, 0);
    for _ in 0..100 {
        let (script, transitions) = random_case(&mut rng, &registry);
        collapsed += usize::from(!script.relational);
        let counts: Vec<_> = transitions
            .iter()
            .map(|t| brute_counts(&script.generate(t, &t.g_seen_prev), &t.ops))
            .collect();
        malformed += transitions.iter().map(|t| script.generate(t, &t.g_seen_prev).malformed).sum::<usize>();
        let per: f64 = counts.iter().map(|&(p, g, h)| brute_f1(p, g, h)).sum::<f64>() / counts.len() as f64;
        let sum = |f: fn(&(usize, usize, usize)) -> usize| counts.iter().map(f).sum::<usize>();
        let micro = brute_f1(sum(|c| c.0), sum(|c| c.1), sum(|c| c.2));
        let fr = brute_fr(&script, &transitions);
        let games = group_games(&transitions);
        for jobs in [1, 3] {
            worst = worst
                .max((tf_f1(&script, &transitions, Averaging::PerTransition, jobs).score - per).abs())
                .max((tf_f1(&script, &transitions, Averaging::Micro, jobs).score - micro).abs())
                .max((fr_f1(&script, &games, jobs).score - fr).abs());
        }
    }
    let shed = shed_transition();
    let shed_tf = tf_f1(&OracleGenerator, std::slice::from_ref(&shed), Averaging::PerTransition, 1).score;
    let shed_fr = fr_f1(&OracleGenerator, &[vec![&shed]], 1).score;
    let passed = worst <= 1e-9 && shed_tf == 1.0 && shed_fr == 1.0;
    Outcome::new(
        passed,
        format!(
            "100 cases ({collapsed} collapsed, {malformed} malformed segments), max |engine - brute| {worst:.1e} <= 1e-9; shed TF {shed_tf} FR {shed_fr}"
        ),
    )
}

// ------------------------------------------------------------------- corpus

fn corpus_integrity() -> Outcome {
    let cfg = WorldConfig::default();
    let registry = cfg.registry().unwrap();
    let splits = generate_splits(&cfg, SplitCounts { train: 160, valid: 20, test: 20 }, 4242).unwrap();
    let mut problems: Vec<String> = Vec::new();
    let mut all = Vec::new();
    let mut n_games = 0;
    for (_, games) in &splits {
        for game in games {
            n_games += 1;
            let mut on_path_prev = BeliefGraph::new();
            for (i, t) in game.transitions.iter().enumerate() {
                if t.g_seen_prev.diff(&t.g_seen_next) != t.ops || t.g_seen_prev.apply_update(&t.ops) != t.g_seen_next {
                    problems.push(format!("game {} step {} branch {}: ops differ from diff", t.game, t.step, t.branch));
                }
                if !t.g_seen_next.is_subgraph_of(&game.full_graphs[i]) {
                    problems.push(format!("game {} step {} branch {}: seen not in full", t.game, t.step, t.branch));
                }
                if t.is_on_path() {
                    if t.g_seen_prev != on_path_prev {
                        problems.push(format!("game {} step {}: prior is not the previous belief", t.game, t.step));
                    }
                    on_path_prev = t.g_seen_next.clone();
                }
            }
            all.extend(game.transitions.iter().cloned());
        }
    }
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &all).unwrap();
    let back = read_jsonl(&buf[..], &registry, "memory").unwrap();
    let jsonl_ok = back == all;
    let oracle_fr = fr_f1(&OracleGenerator, &group_games(&back), 1).score;
    let oracle_tf = tf_f1(&OracleGenerator, &back, Averaging::PerTransition, 1).score;
    let passed = n_games == 200 && problems.is_empty() && jsonl_ok && oracle_fr == 1.0 && oracle_tf == 1.0;
    Outcome::new(
        passed,
        format!(
            "{n_games} games, {} transitions, {} step violations, jsonl round trip {}, oracle FR {oracle_fr} TF {oracle_tf}{}",
            all.len(),
            problems.len(),
            if jsonl_ok { "ok" } else { "MISMATCH" },
            problems.first().map(|p| format!("; first {p}")).unwrap_or_default()
        ),
    )
}

// ----------------------------------------------------------------- training

fn overfit() -> Outcome {
    let t0 = Instant::now();
    let cfg = WorldConfig::default();
    let registry = cfg.registry().unwrap();
    let splits = generate_splits(&cfg, SplitCounts { train: 1, valid: 0, test: 0 }, 5).unwrap();
    // Identical text with different priors cannot be fitted without the graph.
    let mut seen = Vec::new();
    let data: Vec<Transition> = splits[0].1[0]
        .transitions
        .iter()
        .filter(|t| {
            let key = (t.action.clone(), t.observation.clone());
            let fresh = !seen.contains(&key);
            seen.push(key);
            fresh
        })
        .take(10)
        .cloned()
        .collect();
    let vocab = build_vocab(&data, &registry);
    let chunk = 25;
    let mut parts = Vec::new();
    let mut passed = data.len() == 10;
    for variant in EncoderVariant::ALL {
        let mc = ModelConfig {
            hidden: 32,
            n_enc_layers: 1,
            n_dec_layers: 1,
            n_heads: 4,
            ffn_hidden: 64,
            variant,
            max_decode_len: 160,
            seed: 0,
            ..Default::default()
        };
        let mut model = Model::new(mc, vocab.clone(), registry.clone()).unwrap();
        let tc = TrainConfig {
            epochs: chunk,
            batch_size: data.len(),
            lr: 3e-3,
            max_steps: Some(chunk),
            log_every: 0,
            ..Default::default()
        };
        let mut state: Option<TrainingState> = None;
        let mut score = 0.0;
        let mut steps = 0;
        while steps < 500 {
            let out = train(&mut model, &data, &[], &tc, state.as_ref(), &mut |_| {}).unwrap();
            steps = out.steps;
            state = Some(out.state);
            score = tf_f1(&model, &data, Averaging::PerTransition, 1).score;
            if score >= 0.99 {
                break;
            }
        }
        passed &= score >= 0.99;
        parts.push(format!("{variant} {score:.3}@{steps}"));
    }
    let elapsed = t0.elapsed();
    passed &= elapsed < Duration::from_secs(300);
    Outcome::new(
        passed,
        format!("10 transitions, TF >= 0.99 within 500 steps: {}; {:.0}s < 300s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

#[derive(Default, Clone)]
struct Scores {
    tf: f64,
    fr: f64,
    per_verb: BTreeMap<String, f64>,
}

fn trend() -> Outcome {
    const SEEDS: [u64; 3] = [0, 1, 2];
    let cfg = WorldConfig::default();
    let registry = cfg.registry().unwrap();
    let splits = generate_splits(&cfg, SplitCounts { train: 160, valid: 20, test: 20 }, 11).unwrap();
    let flat = |i: usize| -> Vec<Transition> { splits[i].1.iter().flat_map(|g| g.transitions.clone()).collect() };
    let (train_t, valid_t, test_t) = (flat(0), flat(1), flat(2));
    let vocab = build_vocab(&train_t, &registry);
    let games = group_games(&test_t);
    let mut mean: BTreeMap<EncoderVariant, Scores> = BTreeMap::new();
    for variant in EncoderVariant::ALL {
        let acc = mean.entry(variant).or_default();
        for seed in SEEDS {
            let mc = ModelConfig {
                hidden: 64,
                n_enc_layers: 2,
                n_dec_layers: 2,
                n_heads: 4,
                ffn_hidden: 128,
                variant,
                max_decode_len: 160,
                seed,
                ..Default::default()
            };
            let mut model = Model::new(mc, vocab.clone(), registry.clone()).unwrap();
            let tc = TrainConfig {
                epochs: 8,
                batch_size: 16,
                val_limit: Some(200),
                seed,
                log_every: 0,
                ..Default::default()
            };
            train(&mut model, &train_t, &valid_t, &tc, None, &mut |_| {}).unwrap();
            let tf = tf_f1(&model, &test_t, Averaging::PerTransition, 1);
            let fr = fr_f1(&model, &games, 1);
            let w = 1.0 / SEEDS.len() as f64;
            acc.tf += w * tf.score;
            acc.fr += w * fr.score;
            for (verb, s) in group_scores_by_verb(&test_t, &tf.per_transition) {
                *acc.per_verb.entry(verb).or_default() += w * s;
            }
        }
    }
    let none = &mean[&EncoderVariant::NoGraph];
    let graph_variants = [EncoderVariant::Gcn, EncoderVariant::Rgcn, EncoderVariant::RgcnRelEmb];
    let verb = |s: &Scores, v: &str| s.per_verb.get(v).copied().unwrap_or(0.0);
    let a = graph_variants.iter().all(|v| mean[v].fr >= none.fr + 0.05);
    let gcn_tf = mean[&EncoderVariant::Gcn].tf;
    let b = mean[&EncoderVariant::Rgcn].tf >= gcn_tf && mean[&EncoderVariant::RgcnRelEmb].tf >= gcn_tf;
    let c = graph_variants.iter().all(|v| verb(none, "go") <= verb(&mean[v], "go") - 0.10);
    let d = mean.values().all(|s| {
        let mut ranked: Vec<(&String, &f64)> = s.per_verb.iter().collect();
        ranked.sort_by(|x, y| x.1.total_cmp(y.1));
        ranked.iter().take(2).any(|(k, _)| k.as_str() == "prepare")
    });
    let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
    let mut out = Outcome::new(
        a && b && c && d,
        format!(
            "(a) graph FR >= none + 0.05 {}, (b) relational TF >= gcn {}, (c) none go <= graph go - 0.10 {}, (d) prepare in bottom two {}",
            mark(a),
            mark(b),
            mark(c),
            mark(d)
        ),
    );
    for (v, s) in &mean {
        let mut line = format!("{:<9} TF {:.3} FR {:.3} |", v.to_string(), s.tf, s.fr);
        for (k, x) in &s.per_verb {
            let _ = write!(line, " {k} {x:.3}");
        }
        out.notes.push(line);
    }
    out
}

// -------------------------------------------------------------- determinism

fn run_in(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_kgdelta"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// Runs every subcommand in `dir` with fixed relative paths and returns each
/// captured output (stdout or file) by name.
fn session(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut got = BTreeMap::new();
    let ops: String = shed_transition().ops.iter().map(|o| render_op(o) + "\n").collect();
    std::fs::write(dir.join("shed.ops"), ops).unwrap();
    std::fs::write(dir.join("from.tsv"), "player\tat\tbackyard\ntoolbox\tin\tshed\n").unwrap();
    let steps: [(&str, &[&str]); 8] = [
        ("gen-data", &["gen-data", "--out", "data", "--train", "3", "--valid", "1", "--test", "1", "--seed", "9"]),
        ("gen-data-jobs", &["gen-data", "--out", "data2", "--train", "3", "--valid", "1", "--test", "1", "--seed", "9", "--jobs", "2"]),
        ("train", &["train", "--data", "data", "--hidden", "8", "--max-steps", "6", "--out", "m.ckpt"]),
        ("eval-tf", &["eval-tf", "--ckpt", "m.ckpt", "--data", "data", "--per-verb", "--report", "tf.json"]),
        ("eval-fr", &["eval-fr", "--ckpt", "m.ckpt", "--data", "data", "--report", "fr.json"]),
        ("apply", &["apply", "--graph", "from.tsv", "--ops", "shed.ops", "--out", "to.tsv"]),
        ("diff", &["diff", "--from", "from.tsv", "--to", "to.tsv"]),
        ("gradcheck", &["gradcheck", "--seeds", "2"]),
    ];
    for (name, args) in steps {
        got.insert(format!("{name} stdout"), run_in(dir, args));
    }
    for file in [
        "data/train.jsonl",
        "data/valid.jsonl",
        "data/test.jsonl",
        "data/stats.json",
        "m.ckpt",
        "m.ckpt.log.jsonl",
        "tf.json",
        "fr.json",
        "to.tsv",
    ] {
        got.insert(file.to_string(), std::fs::read(dir.join(file)).unwrap());
    }
    for file in ["train.jsonl", "valid.jsonl", "test.jsonl"] {
        got.insert(format!("data2/{file}"), std::fs::read(dir.join("data2").join(file)).unwrap());
    }
    got
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = session(a.path());
    let second = session(b.path());
    let mut differ: Vec<String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(*v))
        .map(|(k, _)| k.clone())
        .collect();
    for file in ["train.jsonl", "valid.jsonl", "test.jsonl"] {
        if first[&format!("data/{file}")] != first[&format!("data2/{file}")] {
            differ.push(format!("jobs 1 vs 2: {file}"));
        }
    }
    let files = first.keys().filter(|k| !k.ends_with("stdout")).count();
    let passed = differ.is_empty();
    Outcome::new(
        passed,
        format!(
            "two runs, {} outputs compared byte for byte ({files} files): {}",
            first.len(),
            if differ.is_empty() { "identical".to_string() } else { format!("differ: {}", differ.join(", ")) }
        ),
    )
}
