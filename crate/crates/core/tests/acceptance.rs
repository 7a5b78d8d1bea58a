//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails. The training runs make this slow (tens of
//! minutes on one core).

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use moss::autodiff::{Gradients, ParameterStore, Tape};
use moss::cli::training_set;
use moss::corpus::vocab::UNK;
use moss::corpus::{
    make_turn_input, tokenize, Dialog, DialogTurn, Goal, Mask, Module, Source, TurnInput,
    TurnPrediction,
};
use moss::eval::{
    corpus_bleu, entity_match_rate, evaluate, gold_predictions, module_accuracy, report,
    success_accuracy, success_f1, MetricReport,
};
use moss::kb::KnowledgeBase;
use moss::model::{
    FrameworkConfig, InitSource, Instance, MemorySource, Moss, Network, TurnTeacher,
};
use moss::synth::{generate, split, to_raw, GenConfig, Task, TaskSchema};
use moss::train::{read_log, train, turn_loss, EpochLog, TrainConfig, TrainOutcome};

mod common;

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn note(msg: &str) {
    eprintln!("[acceptance] {msg}");
}

struct Data {
    schema: TaskSchema,
    kb: KnowledgeBase,
    train: Vec<Dialog>,
    valid: Vec<Dialog>,
    test: Vec<Dialog>,
}

fn data(task: Task, n: usize, seed: u64) -> Data {
    let (schema, kb) = task.build(seed).unwrap();
    let corpus = generate(&schema, &kb, &GenConfig::new(task, n, seed)).unwrap();
    let (train, valid, test) = split(&corpus, (3.0, 1.0, 1.0), seed).unwrap();
    Data {
        schema,
        kb,
        train,
        valid,
        test,
    }
}

fn fit(
    d: &Data,
    instance: Instance,
    dialogs: &[Dialog],
    seed: u64,
    log: Option<&mut Vec<u8>>,
) -> TrainOutcome {
    let tc = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let fw = FrameworkConfig {
        seed,
        ..FrameworkConfig::for_instance(instance)
    };
    let sink = log.map(|l| l as &mut dyn std::io::Write);
    train(&tc, &fw, dialogs, Some(&d.valid), &d.kb, None, sink).unwrap()
}

fn score(model: &Moss, d: &Data) -> MetricReport {
    evaluate(model, &d.kb, &d.schema, &d.test).unwrap().0
}

// ---------------------------------------------------------------- 1

fn gradient_soundness() -> Verdict {
    let start = Instant::now();
    let mut worst = (0.0, String::new(), 0);
    for seed in 1..=5 {
        let (e, name) = common::network_check_with(common::micro_config(Instance::All, seed));
        if e > worst.0 {
            worst = (e, name, seed);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst.0 < common::TOL && secs < 30.0,
        format!(
            "worst relative error {:.2e} ({} seed {}), {secs:.1} s",
            worst.0, worst.1, worst.2
        ),
    )
}

// ---------------------------------------------------------------- 2

/// The two-decoder belief-span model written down from scratch: a shared
/// embedding and bidirectional GRU encoder, a belief decoder started from
/// the encoder and reading the context, and a response decoder started
/// from the belief decoder, reading the user turn and the decoded belief
/// span, conditioned on the KB match vector. Every decoder has additive
/// attention, a GRU cell, an output layer over [state; context] and a copy
/// scorer.
fn belief_span_shape(e: usize, h: usize, v: usize, k: usize) -> BTreeMap<String, Vec<usize>> {
    let mut p = BTreeMap::new();
    p.insert("embedding".to_string(), vec![v, e]);
    for dir in ["fwd", "bwd"] {
        p.insert(format!("encoder.gru_{dir}.w_ih"), vec![3 * h, e]);
        p.insert(format!("encoder.gru_{dir}.w_hh"), vec![3 * h, h]);
        p.insert(format!("encoder.gru_{dir}.bias"), vec![3 * h]);
    }
    for (dec, kb) in [("dst", 0), ("nlg", k)] {
        let q = |s: &str| format!("decoder.{dec}.{s}");
        p.insert(q("attention.v"), vec![h]);
        p.insert(q("attention.w_memory"), vec![h, h]);
        p.insert(q("attention.w_query"), vec![h, h]);
        p.insert(q("copy.weight"), vec![h, h]);
        p.insert(q("gru.w_ih"), vec![3 * h, e + h + kb]);
        p.insert(q("gru.w_hh"), vec![3 * h, h]);
        p.insert(q("gru.bias"), vec![3 * h]);
        p.insert(q("out.weight"), vec![v, 2 * h]);
        p.insert(q("out.bias"), vec![v]);
    }
    p
}

/// Parameter group: the encoder, the embedding, or one decoder.
fn group(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts[0] {
        "decoder" => parts[..2].join("."),
        first => first.to_string(),
    }
}

fn wiring_equivalence() -> Verdict {
    let mut fw = common::micro_config(Instance::WoNluDpl, 11);
    fw.d_emb = 5;
    fw.d_hid = 7;
    let vocab = common::micro_vocab();
    let kb = common::micro_kb();
    let mut store = ParameterStore::<f64>::new(11);
    let net = Network::new(&mut store, &fw).unwrap();

    let want = belief_span_shape(fw.d_emb, fw.d_hid, vocab.len(), fw.kb_dim);
    let got: BTreeMap<String, Vec<usize>> = store
        .iter()
        .map(|(_, n, t)| (n.to_string(), t.shape().to_vec()))
        .collect();
    if got != want {
        let extra: Vec<_> = got
            .iter()
            .filter(|(n, s)| want.get(*n) != Some(s))
            .collect();
        let missing: Vec<_> = want
            .iter()
            .filter(|(n, s)| got.get(*n) != Some(s))
            .collect();
        return Err(format!(
            "parameter set differs: extra {extra:?}, missing {missing:?}"
        ));
    }

    // declared chain
    let chain: Vec<_> = net
        .wiring()
        .into_iter()
        .map(|w| (w.module, w.h0, w.memory, w.kb))
        .collect();
    let want_chain = vec![
        (
            Module::Dst,
            InitSource::Encoder,
            vec![
                MemorySource::Belief,
                MemorySource::Response,
                MemorySource::User,
            ],
            false,
        ),
        (
            Module::Nlg,
            InitSource::Module(Module::Dst),
            vec![
                MemorySource::Response,
                MemorySource::User,
                MemorySource::Hidden(Module::Dst),
            ],
            true,
        ),
    ];
    if chain != want_chain {
        return Err(format!("wiring {chain:?}"));
    }

    // realised chain: h0 identities and gradient reachability per loss
    let input = TurnInput {
        b: tokenize("GO"),
        r: tokenize("GO"),
        u: tokenize("want thai"),
    };
    let (s, r) = (tokenize("thai SEP_REQ"), tokenize("offer thai"));
    let teacher = TurnTeacher {
        s: Some(&s),
        r: Some(&r),
        ..TurnTeacher::default()
    };
    let mut reach = BTreeMap::new();
    for module in [Module::Dst, Module::Nlg] {
        let mut tape = Tape::new(&store);
        let out = net
            .forward_turn(&mut tape, &vocab, &kb, &input, &teacher, None)
            .unwrap();
        let bits = |v| {
            tape.value(v)
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        };
        if bits(out.results[&Module::Dst].h0) != bits(out.encoder.h_e)
            || bits(out.results[&Module::Nlg].h0) != bits(out.results[&Module::Dst].last_hidden())
        {
            return Err("decoder h0 does not follow encoder -> belief -> response".into());
        }
        let loss = out.losses()[&module];
        let mut grads = Gradients::zeros_like(&store);
        tape.backward(loss, 1.0, &mut grads).unwrap();
        let groups: BTreeSet<String> = store
            .iter()
            .filter(|(id, _, _)| !grads.is_zero(*id))
            .map(|(_, n, _)| group(n))
            .collect();
        reach.insert(module, groups);
    }
    let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let want_reach = BTreeMap::from([
        (Module::Dst, set(&["decoder.dst", "embedding", "encoder"])),
        (
            Module::Nlg,
            set(&["decoder.dst", "decoder.nlg", "embedding", "encoder"]),
        ),
    ]);
    ensure(
        reach == want_reach,
        format!(
            "{} parameters match; loss reachability {reach:?}",
            want.len()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn masking_law() -> Verdict {
    let d = data(Task::Simple, 5, 3);
    let vocab = moss::corpus::Vocab::build(&d.train, 800).unwrap();
    let model = Moss::new(FrameworkConfig::default(), vocab).unwrap();
    let raw = to_raw(&d.train[0]);
    let enc = model.net.encoder.param_ids();
    let mut turns = 0;
    for t in 1..=raw.turns.len() {
        let input = make_turn_input(&raw, t, Source::Gold, model.config.has_dpl).unwrap();
        let teacher = TurnTeacher::from_turn(&raw.turns[t - 1], &model.config);
        let mut tape = Tape::new(&model.store);
        let out = model
            .net
            .forward_turn(&mut tape, &model.vocab, &d.kb, &input, &teacher, None)
            .unwrap();
        let (br, total) = turn_loss(&mut tape, &out, &raw.turns[t - 1], &model.config).unwrap();
        let nlg = tape.scalar(out.losses()[&Module::Nlg]);
        let total = total.ok_or("raw turn produced no loss")?;
        if tape.scalar(total).to_bits() != nlg.to_bits() || br.total != br.nlg.unwrap() {
            return Err(format!("turn {t}: total {} vs nlg {nlg}", br.total));
        }
        if br.nlu.is_some() || br.dst.is_some() || br.dpl.is_some() {
            return Err(format!("turn {t}: masked module reported a loss"));
        }
        let mut grads = Gradients::zeros_like(&model.store);
        tape.backward(total, 1.0, &mut grads).unwrap();
        if enc.iter().any(|&id| grads.is_zero(id)) || grads.is_zero(model.net.embedding) {
            return Err(format!("turn {t}: encoder parameter without gradient"));
        }
        turns += 1;
    }
    Ok(format!(
        "{turns} NLG-only turns: total == l_nlg bit-exactly, encoder gradients non-zero"
    ))
}

// ---------------------------------------------------------------- 4

fn schedule_conformance(log: &[EpochLog]) -> Verdict {
    if log.is_empty() || log.len() > 11 {
        return Err(format!("{} epochs logged", log.len()));
    }
    for e in log {
        let want = if e.epoch <= 10 { 0.003 } else { 0.0015 };
        if e.lr != want || e.batch_size != 32 {
            return Err(format!(
                "epoch {}: lr {} batch {}",
                e.epoch, e.lr, e.batch_size
            ));
        }
    }
    let last = log.last().unwrap();
    ensure(
        log.iter().enumerate().all(|(i, e)| e.epoch == i + 1),
        format!(
            "{} epochs, batch 32, last lr {} at epoch {}",
            log.len(),
            last.lr,
            last.epoch
        ),
    )
}

// ---------------------------------------------------------------- 5

fn simple_convergence(rep: &MetricReport, secs: f64, epochs: usize) -> Verdict {
    ensure(
        rep.mat >= 0.95 && rep.succ_f1 >= 0.90 && epochs <= 11 && secs < 1200.0,
        format!(
            "Mat {:.3}, Succ.F1 {:.3}, BLEU {:.3} after {epochs} epochs in {secs:.0} s",
            rep.mat, rep.succ_f1, rep.bleu
        ),
    )
}

// ---------------------------------------------------------------- 6, 7

struct ComplexGrid {
    all: Vec<f64>,
    wo_nlu: Vec<f64>,
    wo_nlu_dpl: Vec<f64>,
    all_40: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn complex_grid() -> ComplexGrid {
    let mut g = ComplexGrid {
        all: Vec::new(),
        wo_nlu: Vec::new(),
        wo_nlu_dpl: Vec::new(),
        all_40: Vec::new(),
    };
    for seed in 1..=3 {
        let d = data(Task::Complex, 800, seed);
        for (instance, fraction, into) in [
            (Instance::All, 1.0, &mut g.all),
            (Instance::WoNlu, 1.0, &mut g.wo_nlu),
            (Instance::WoNluDpl, 1.0, &mut g.wo_nlu_dpl),
            (Instance::All, 0.4, &mut g.all_40),
        ] {
            let dialogs = training_set(&d.train, fraction, false, seed).unwrap();
            let out = fit(&d, instance, &dialogs, seed, None);
            let acc = score(&out.model, &d).succ_acc.unwrap();
            note(&format!(
                "complex seed {seed} {instance}@{fraction}: Succ.acc {acc:.4}"
            ));
            into.push(acc);
        }
    }
    g
}

fn supervision_ordering(g: &ComplexGrid) -> Verdict {
    let (a, b, c) = (mean(&g.all), mean(&g.wo_nlu), mean(&g.wo_nlu_dpl));
    ensure(
        a - b >= -0.02 && b - c >= -0.02,
        format!("mean Succ.acc all {a:.4} / wo_nlu {b:.4} / wo_nlu_dpl {c:.4}"),
    )
}

fn data_efficiency(g: &ComplexGrid) -> Verdict {
    let (a, c) = (mean(&g.all_40), mean(&g.wo_nlu_dpl));
    ensure(
        a - c >= -0.02,
        format!(
            "mean Succ.acc all@40% {a:.4} vs wo_nlu_dpl@100% {c:.4} (per seed {:?} vs {:?})",
            g.all_40, g.wo_nlu_dpl
        ),
    )
}

// ---------------------------------------------------------------- 8

fn raw_patching() -> Verdict {
    let mut gains = Vec::new();
    for seed in 1..=3 {
        let d = data(Task::Simple, 500, seed);
        let mut bleu = [0.0; 2];
        for (i, raw) in [false, true].into_iter().enumerate() {
            let dialogs = training_set(&d.train, 0.6, raw, seed).unwrap();
            let out = fit(&d, Instance::All, &dialogs, seed, None);
            bleu[i] = score(&out.model, &d).bleu;
        }
        note(&format!(
            "simple seed {seed}: BLEU 60% {:.4}, +40% raw {:.4}",
            bleu[0], bleu[1]
        ));
        gains.push(bleu[1] - bleu[0]);
    }
    let g = mean(&gains);
    ensure(
        g >= 0.005,
        format!("mean BLEU gain {g:.4} (per seed {gains:.4?})"),
    )
}

// ---------------------------------------------------------------- 9

fn metric_oracles() -> Verdict {
    let b = corpus_bleu(&[tokenize("a b c d")], &[tokenize("a b c d e")]).unwrap();
    if (b - 0.7788).abs() > 1e-3 {
        return Err(format!("BLEU fixture {b}"));
    }
    // p1 = 5/6, p2 = 4/6, p3 = 3/5, p4 = 2/4 with add-one above unigrams
    let hand = (5.0f64 / 6.0 * 4.0 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0).powf(0.25);
    let b2 = corpus_bleu(
        &[tokenize("the cat sat on a mat")],
        &[tokenize("the cat sat on the mat")],
    )
    .unwrap();
    if (b2 - hand).abs() > 1e-12 {
        return Err(format!("hand-counted BLEU {b2} vs {hand}"));
    }

    for task in [Task::Simple, Task::Complex] {
        let (schema, kb) = task.build(1).unwrap();
        let corpus = generate(&schema, &kb, &GenConfig::new(task, 40, 1)).unwrap();
        let rep = report(
            &gold_predictions(&corpus),
            &corpus,
            &schema,
            kb.requestable(),
        )
        .unwrap();
        let accs = [rep.nlu_acc, rep.dst_acc, rep.dpl_acc, rep.succ_acc];
        if rep.mat != 1.0 || rep.succ_f1 != 1.0 || accs.iter().flatten().any(|&a| a != 1.0) {
            return Err(format!("{task} gold predictions: {rep:?}"));
        }
    }

    let turn = |s: &str, a: &str, r: &str| DialogTurn {
        user: tokenize("hi"),
        m: Some(tokenize("inform")),
        s: Some(tokenize(s)),
        a: Some(tokenize(a)),
        resp: Some(tokenize(r)),
        mask: Mask::ALL,
    };
    let pred = |s: &str, a: &str, r: &str| TurnPrediction {
        m: Some(tokenize("inform")),
        s: Some(tokenize(s)),
        a: Some(tokenize(a)),
        r: Some(tokenize(r)),
    };
    let goal = |req: &[&str], sol: Option<&str>| {
        Some(Goal {
            constraints: BTreeMap::new(),
            requests: req.iter().map(|s| s.to_string()).collect(),
            solution: sol.map(str::to_string),
        })
    };
    let gold = vec![
        Dialog {
            dialog_id: "a".into(),
            goal: goal(&["address", "phone"], Some("solve_restart_router")),
            turns: vec![
                turn("thai SEP_REQ", "offer", "<name> is nice"),
                turn(
                    "thai west SEP_REQ phone",
                    "solve_restart_router",
                    "the phone is <phone>",
                ),
            ],
        },
        Dialog {
            dialog_id: "b".into(),
            goal: goal(&[], Some("solve_reset_adapter")),
            turns: vec![turn("cheap SEP_REQ", "solve_reset_adapter", "bye")],
        },
    ];
    let preds = vec![
        vec![
            pred("thai SEP_REQ", "offer", "<name> is nice"),
            pred(
                "west thai SEP_REQ",
                "solve_reset_adapter",
                "the address is <address> and <phone>",
            ),
        ],
        vec![pred(
            "expensive SEP_REQ",
            "solve_reset_adapter",
            "bye <postcode>",
        )],
    ];
    let requestable: Vec<String> = ["address", "phone", "postcode"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let complex = Task::Complex.build(1).unwrap().0;
    let acts = complex.act_tokens();
    // Mat: final states {thai, west} match, {cheap} vs {expensive} does not
    let mat = entity_match_rate(&preds, &gold).unwrap();
    // F1: tp address, phone; fp postcode; fn none -> 2*2 / (2*2 + 1)
    let f1 = success_f1(&preds, &gold, &requestable).unwrap();
    // DST: turn 1 right, turn 2 drops the request, turn 3 wrong -> 1/3
    let dst = module_accuracy(Module::Dst, &preds, &gold, &acts)
        .unwrap()
        .unwrap();
    // DPL: 2 of 3 turns right; Succ.acc: dialog b only
    let dpl = module_accuracy(Module::Dpl, &preds, &gold, &acts)
        .unwrap()
        .unwrap();
    let succ = success_accuracy(&preds, &gold, &complex).unwrap().unwrap();
    let want = [
        (mat, 0.5),
        (f1, 0.8),
        (dst, 1.0 / 3.0),
        (dpl, 2.0 / 3.0),
        (succ, 0.5),
    ];
    if let Some((got, w)) = want.iter().find(|(g, w)| (g - w).abs() > 1e-12) {
        return Err(format!("hand-counted fixture gave {got}, expected {w}"));
    }
    Ok(format!(
        "BLEU fixture {b:.4}, gold identity on both tasks, {} hand-counted values",
        want.len() + 1
    ))
}

// ---------------------------------------------------------------- 10

const NOVEL: [(&str, &str); 14] = [
    ("thai", "ethiopian"),
    ("chinese", "korean"),
    ("italian", "greek"),
    ("indian", "turkish"),
    ("mexican", "lebanese"),
    ("french", "peruvian"),
    ("north", "uptown"),
    ("south", "harbour"),
    ("east", "riverside"),
    ("west", "docklands"),
    ("centre", "midtown"),
    ("cheap", "budget"),
    ("moderate", "mid-range"),
    ("expensive", "luxury"),
];

fn substitute(d: &Dialog) -> Dialog {
    let map: BTreeMap<&str, &str> = NOVEL.into_iter().collect();
    let sub = |t: &mut Vec<String>| {
        for w in t.iter_mut() {
            if let Some(n) = map.get(w.as_str()) {
                *w = n.to_string();
            }
        }
    };
    let mut d = d.clone();
    for turn in &mut d.turns {
        sub(&mut turn.user);
        for f in [&mut turn.m, &mut turn.s, &mut turn.a, &mut turn.resp]
            .into_iter()
            .flatten()
        {
            sub(f);
        }
    }
    d
}

fn copy_oov(model: &Moss, d: &Data) -> Verdict {
    let novel: BTreeSet<&str> = NOVEL.iter().map(|(_, n)| *n).collect();
    if let Some(n) = novel.iter().find(|n| model.vocab.contains(n)) {
        return Err(format!("`{n}` is in the vocabulary"));
    }
    let (mut cases, mut wins) = (0usize, 0usize);
    for dialog in d.test.iter().map(substitute) {
        for t in 1..=dialog.turns.len() {
            let turn = &dialog.turns[t - 1];
            let input = make_turn_input(&dialog, t, Source::Gold, model.config.has_dpl).unwrap();
            let teacher = TurnTeacher::from_turn(turn, &model.config);
            let mut tape = Tape::new(&model.store);
            let out = model
                .net
                .forward_turn(&mut tape, &model.vocab, &d.kb, &input, &teacher, None)
                .unwrap();
            let dst = &out.results[&Module::Dst];
            for (i, &target) in dst.targets.iter().enumerate() {
                let word = dst.surface(&model.vocab, target);
                if target < model.vocab.len()
                    || !novel.contains(word.as_str())
                    || !turn.user.contains(&word)
                {
                    continue;
                }
                let p = dst.distribution(&tape, i);
                cases += 1;
                wins += usize::from(p[target] > p[UNK]);
            }
        }
    }
    if cases == 0 {
        return Err("no out-of-vocabulary value reached the belief span".into());
    }
    let rate = wins as f64 / cases as f64;
    ensure(
        rate >= 0.95,
        format!(
            "copy beats UNK in {wins}/{cases} held-out occurrences ({:.1}%)",
            100.0 * rate
        ),
    )
}

// ---------------------------------------------------------------- 11

fn determinism(model: &Moss, d: &Data) -> Verdict {
    let subset = &d.train[..100];
    let tc = TrainConfig {
        max_epochs: 1,
        seed: 7,
        ..TrainConfig::default()
    };
    let run = || {
        let out = train(
            &tc,
            &FrameworkConfig::default(),
            subset,
            Some(&d.valid[..20]),
            &d.kb,
            None,
            None,
        )
        .unwrap();
        out.log[0].loss
    };
    let (a, b) = (run(), run());
    let bits = |l: &moss::train::LossBreakdown| {
        let mut v = vec![l.total.to_bits()];
        v.extend(
            Module::ALL
                .iter()
                .filter_map(|&m| l.get(m).map(f64::to_bits)),
        );
        v
    };
    if bits(&a) != bits(&b) {
        return Err(format!("epoch-1 losses differ: {a:?} vs {b:?}"));
    }

    let before = evaluate(model, &d.kb, &d.schema, &d.test).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = Moss::load(dir.path()).unwrap();
    let after = evaluate(&loaded, &d.kb, &d.schema, &d.test).unwrap();
    let row_bits = |r: &MetricReport| {
        r.rows()
            .into_iter()
            .map(|(k, v)| (k, v.map(f64::to_bits)))
            .collect::<Vec<_>>()
    };
    if row_bits(&before.0) != row_bits(&after.0) || before.1 != after.1 {
        return Err("metrics or predictions changed across save/load".into());
    }
    Ok(format!(
        "epoch-1 loss {:.6} twice bit-identically; reloaded model reproduces {} metrics exactly",
        a.total,
        before.0.rows().len()
    ))
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    if std::env::args().skip(1).any(|a| a == "--list") {
        return;
    }
    // numeric arguments select criteria, e.g. `cargo test --test acceptance -- 2 9`
    let only: BTreeSet<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |ns: &[usize]| only.is_empty() || ns.iter().any(|n| only.contains(n));
    let mut results: BTreeMap<usize, (&str, Verdict)> = BTreeMap::new();
    let mut record = |n: usize, name: &'static str, v: Verdict| {
        let line = match &v {
            Ok(d) => format!("criterion {n:>2} {name}: PASS ({d})"),
            Err(d) => format!("criterion {n:>2} {name}: FAIL ({d})"),
        };
        note(&line);
        results.insert(n, (name, v));
    };

    if wanted(&[1]) {
        record(1, "gradient soundness", guarded(gradient_soundness));
    }
    if wanted(&[2]) {
        record(2, "wiring equivalence", guarded(wiring_equivalence));
    }
    if wanted(&[3]) {
        record(3, "masking law", guarded(masking_law));
    }
    if wanted(&[9]) {
        record(9, "metric oracles", guarded(metric_oracles));
    }

    if wanted(&[4, 5, 10, 11]) {
        note("training MOSS-all on the simple task (500 dialogs, seed 1)");
        let simple = data(Task::Simple, 500, 1);
        let mut log_bytes = Vec::new();
        let start = Instant::now();
        let trained = catch_unwind(AssertUnwindSafe(|| {
            fit(
                &simple,
                Instance::All,
                &simple.train,
                1,
                Some(&mut log_bytes),
            )
        }));
        let secs = start.elapsed().as_secs_f64();
        match trained {
            Ok(out) => {
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("train.log");
                std::fs::write(&path, &log_bytes).unwrap();
                let log = guarded(|| {
                    let log = read_log(&path).map_err(|e| e.to_string())?;
                    schedule_conformance(&log)
                });
                record(4, "schedule conformance", log);
                let rep = score(&out.model, &simple);
                record(
                    5,
                    "simple-task convergence",
                    simple_convergence(&rep, secs, out.log.len()),
                );
                record(
                    10,
                    "copy of unseen KB values",
                    guarded(|| copy_oov(&out.model, &simple)),
                );
                record(
                    11,
                    "determinism and checkpoint round-trip",
                    guarded(|| determinism(&out.model, &simple)),
                );
            }
            Err(_) => {
                for (n, name) in [
                    (4, "schedule conformance"),
                    (5, "simple-task convergence"),
                    (10, "copy of unseen KB values"),
                    (11, "determinism and checkpoint round-trip"),
                ] {
                    record(n, name, Err("training run panicked".into()));
                }
            }
        }
    }

    if wanted(&[8]) {
        record(8, "raw-data patching", guarded(raw_patching));
    }

    if wanted(&[6, 7]) {
        match catch_unwind(complex_grid) {
            Ok(g) => {
                record(
                    6,
                    "supervision ordering",
                    guarded(|| supervision_ordering(&g)),
                );
                record(7, "data efficiency", guarded(|| data_efficiency(&g)));
            }
            Err(_) => {
                record(
                    6,
                    "supervision ordering",
                    Err("complex grid panicked".into()),
                );
                record(7, "data efficiency", Err("complex grid panicked".into()));
            }
        }
    }

    println!();
    let mut failed = 0;
    for (n, (name, v)) in &results {
        match v {
            Ok(d) => println!("PASS criterion {n:>2} {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {n:>2} {name}: {d}");
            }
        }
    }
    println!(
        "\nacceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
