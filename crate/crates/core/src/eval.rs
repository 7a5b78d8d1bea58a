//! Dialog-level metrics under predicted-state rollout and per-module error
//! localization.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{split_state, Dialog, Mask, Module, Tokens, TurnPrediction};
use crate::error::{MossError, Result};
use crate::kb::KnowledgeBase;
use crate::model::{Moss, Rollout};
use crate::synth::TaskSchema;

/// Per-turn model outputs of one dialog.
pub type DialogPrediction = Vec<TurnPrediction>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mat: f64,
    pub succ_f1: f64,
    pub bleu: f64,
    pub nlu_acc: Option<f64>,
    pub dst_acc: Option<f64>,
    pub dpl_acc: Option<f64>,
    pub succ_acc: Option<f64>,
    pub n_dialogs: usize,
    pub n_turns: usize,
}

impl MetricReport {
    pub fn rows(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("Mat", Some(self.mat)),
            ("Succ.F1", Some(self.succ_f1)),
            ("BLEU", Some(self.bleu)),
            ("NLU.acc", self.nlu_acc),
            ("DST.acc", self.dst_acc),
            ("DPL.acc", self.dpl_acc),
            ("Succ.acc", self.succ_acc),
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in self.rows() {
            match v {
                Some(v) => writeln!(f, "{name:<10} {v:>8.4}")?,
                None => writeln!(f, "{name:<10} {:>8}", "n/a")?,
            }
        }
        writeln!(f, "{:<10} {:>8}", "dialogs", self.n_dialogs)?;
        write!(f, "{:<10} {:>8}", "turns", self.n_turns)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub dialog_id: String,
    pub turn: usize,
    pub module: Module,
    pub predicted: String,
    pub gold: String,
    pub first_wrong_module: bool,
}

fn check_aligned(preds: &[DialogPrediction], gold: &[Dialog]) -> Result<()> {
    if preds.len() != gold.len() {
        return Err(MossError::contract(format!(
            "{} predicted dialogs for {} gold dialogs",
            preds.len(),
            gold.len()
        )));
    }
    for (p, g) in preds.iter().zip(gold) {
        if p.len() != g.turns.len() {
            return Err(MossError::contract(format!(
                "dialog `{}`: {} predicted turns, {} gold",
                g.dialog_id,
                p.len(),
                g.turns.len()
            )));
        }
    }
    Ok(())
}

fn constraint_set(state: &[String]) -> BTreeSet<&str> {
    split_state(state).0.iter().map(String::as_str).collect()
}

/// Share of dialogs whose final-turn constraint set equals the gold one.
pub fn entity_match_rate(preds: &[DialogPrediction], gold: &[Dialog]) -> Result<f64> {
    check_aligned(preds, gold)?;
    if gold.is_empty() {
        return Err(MossError::precondition("no dialogs to evaluate"));
    }
    let mut matched = 0;
    for (p, g) in preds.iter().zip(gold) {
        let gold_state = g.turns.last().and_then(|t| t.s.as_ref()).ok_or_else(|| {
            MossError::precondition(format!("dialog `{}` has no final gold state", g.dialog_id))
        })?;
        let hit = p
            .last()
            .and_then(|t| t.s.as_ref())
            .is_some_and(|s| constraint_set(s) == constraint_set(gold_state));
        matched += hit as usize;
    }
    Ok(matched as f64 / gold.len() as f64)
}

/// Micro-averaged F1 of requestable placeholders emitted in any response
/// against the goal's requested slots. 1.0 when both sides are empty.
pub fn success_f1(
    preds: &[DialogPrediction],
    gold: &[Dialog],
    requestable: &[String],
) -> Result<f64> {
    check_aligned(preds, gold)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, g) in preds.iter().zip(gold) {
        let requested: BTreeSet<&str> = g
            .goal
            .as_ref()
            .map(|goal| goal.requests.iter().map(String::as_str).collect())
            .unwrap_or_default();
        let answered: BTreeSet<&str> = requestable
            .iter()
            .filter(|slot| {
                let placeholder = format!("<{slot}>");
                p.iter()
                    .any(|t| t.r.as_ref().is_some_and(|r| r.contains(&placeholder)))
            })
            .map(String::as_str)
            .collect();
        tp += answered.intersection(&requested).count();
        fp += answered.difference(&requested).count();
        fn_ += requested.difference(&answered).count();
    }
    if tp + fp + fn_ == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 with brevity penalty; add-one smoothing on 2- to 4-gram
/// precisions.
pub fn corpus_bleu(candidates: &[Tokens], references: &[Tokens]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(MossError::contract("BLEU of an empty corpus"));
    }
    if candidates.len() != references.len() {
        return Err(MossError::contract(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            let rc = ngrams(r, n);
            for (g, k) in ngrams(c, n) {
                matches[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if c_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = (matches[0] as f64 / totals[0] as f64).ln();
    for n in 1..4 {
        log_p += ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(bp * (log_p / 4.0).exp())
}

fn split_acts<'a>(tokens: &'a [String], acts: &HashSet<String>) -> (Vec<&'a str>, Vec<&'a str>) {
    let (a, mut s): (Vec<&str>, Vec<&str>) = tokens
        .iter()
        .map(String::as_str)
        .partition(|t| acts.contains(*t));
    s.sort_unstable();
    (a, s)
}

/// Whether a predicted module output counts as correct for the gold one.
/// Act tokens must match in order, slot tokens as multisets. States compare
/// constraint and request segments as multisets.
pub fn turn_correct(
    module: Module,
    predicted: &[String],
    gold: &[String],
    acts: &HashSet<String>,
) -> bool {
    match module {
        Module::Dst => {
            fn canon(s: &[String]) -> (Vec<&String>, Vec<&String>) {
                let (c, r) = split_state(s);
                let mut c: Vec<&String> = c.iter().collect();
                let mut r: Vec<&String> = r.iter().collect();
                c.sort_unstable();
                r.sort_unstable();
                (c, r)
            }
            canon(predicted) == canon(gold)
        }
        _ => split_acts(predicted, acts) == split_acts(gold, acts),
    }
}

/// Share of annotated turns the module gets right; `None` when the module
/// is absent from the predictions or nothing is annotated.
pub fn module_accuracy(
    module: Module,
    preds: &[DialogPrediction],
    gold: &[Dialog],
    acts: &HashSet<String>,
) -> Result<Option<f64>> {
    check_aligned(preds, gold)?;
    let (mut correct, mut total) = (0usize, 0usize);
    for (p, g) in preds.iter().zip(gold) {
        for (pt, gt) in p.iter().zip(&g.turns) {
            let Some(gold_tokens) = gt.field(module) else {
                continue;
            };
            let Some(pred_tokens) = pt.get(module) else {
                return Ok(None);
            };
            total += 1;
            correct += turn_correct(module, pred_tokens, gold_tokens, acts) as usize;
        }
    }
    Ok((total > 0).then(|| correct as f64 / total as f64))
}

/// System acts of a predicted turn: the policy output when there is one,
/// otherwise the acts recovered from the response.
fn system_acts(turn: &TurnPrediction, schema: &TaskSchema) -> Tokens {
    match (&turn.a, &turn.r) {
        (Some(a), _) => a.clone(),
        (None, Some(r)) => schema.invert(r),
        (None, None) => Tokens::new(),
    }
}

/// Share of dialogs with a gold solution where that solution act appears in
/// any predicted turn; `None` when no dialog has a solution.
pub fn success_accuracy(
    preds: &[DialogPrediction],
    gold: &[Dialog],
    schema: &TaskSchema,
) -> Result<Option<f64>> {
    check_aligned(preds, gold)?;
    let (mut hits, mut total) = (0usize, 0usize);
    for (p, g) in preds.iter().zip(gold) {
        let Some(solution) = g.goal.as_ref().and_then(|goal| goal.solution.as_ref()) else {
            continue;
        };
        total += 1;
        hits += p.iter().any(|t| system_acts(t, schema).contains(solution)) as usize;
    }
    Ok((total > 0).then(|| hits as f64 / total as f64))
}

/// One record per wrong module-turn. NLG is judged on the acts its response
/// realises, so paraphrases of the right acts are not errors.
pub fn error_report(
    preds: &[DialogPrediction],
    gold: &[Dialog],
    schema: &TaskSchema,
) -> Result<Vec<ErrorRecord>> {
    check_aligned(preds, gold)?;
    let acts = schema.act_tokens();
    let mut out = Vec::new();
    for (p, g) in preds.iter().zip(gold) {
        for (i, (pt, gt)) in p.iter().zip(&g.turns).enumerate() {
            let mut first = true;
            for module in Module::ALL {
                let (Some(pred), Some(gold_tokens)) = (pt.get(module), gt.field(module)) else {
                    continue;
                };
                let ok = match module {
                    Module::Nlg => schema.invert(pred) == schema.invert(gold_tokens),
                    _ => turn_correct(module, pred, gold_tokens, &acts),
                };
                if !ok {
                    out.push(ErrorRecord {
                        dialog_id: g.dialog_id.clone(),
                        turn: i + 1,
                        module,
                        predicted: pred.join(" "),
                        gold: gold_tokens.join(" "),
                        first_wrong_module: first,
                    });
                    first = false;
                }
            }
        }
    }
    Ok(out)
}

/// Copy of the dialog carrying only user utterances and the goal.
pub fn strip_annotations(dialog: &Dialog) -> Dialog {
    let mut d = dialog.clone();
    for t in &mut d.turns {
        t.m = None;
        t.s = None;
        t.a = None;
        t.resp = None;
        t.mask = Mask {
            nlu: false,
            dst: false,
            dpl: false,
            nlg: false,
        };
    }
    d
}

/// Runs the model on every dialog with its own outputs as context. Gold
/// annotations are removed before decoding.
pub fn predict_corpus(
    model: &Moss,
    kb: &KnowledgeBase,
    corpus: &[Dialog],
) -> Result<Vec<DialogPrediction>> {
    corpus
        .iter()
        .map(|d| {
            let records = model.run_dialog(kb, &strip_annotations(d), Rollout::Predicted)?;
            Ok(records.into_iter().map(|r| r.prediction).collect())
        })
        .collect()
}

/// Every metric over already computed predictions.
pub fn report(
    preds: &[DialogPrediction],
    gold: &[Dialog],
    schema: &TaskSchema,
    requestable: &[String],
) -> Result<MetricReport> {
    check_aligned(preds, gold)?;
    let acts = schema.act_tokens();
    let (mut cands, mut refs) = (Vec::new(), Vec::new());
    for (p, g) in preds.iter().zip(gold) {
        for (pt, gt) in p.iter().zip(&g.turns) {
            if let Some(r) = &gt.resp {
                cands.push(pt.r.clone().unwrap_or_default());
                refs.push(r.clone());
            }
        }
    }
    let accs: BTreeMap<Module, Option<f64>> = [Module::Nlu, Module::Dst, Module::Dpl]
        .into_iter()
        .map(|m| Ok((m, module_accuracy(m, preds, gold, &acts)?)))
        .collect::<Result<_>>()?;
    Ok(MetricReport {
        mat: entity_match_rate(preds, gold)?,
        succ_f1: success_f1(preds, gold, requestable)?,
        bleu: corpus_bleu(&cands, &refs)?,
        nlu_acc: accs[&Module::Nlu],
        dst_acc: accs[&Module::Dst],
        dpl_acc: accs[&Module::Dpl],
        succ_acc: success_accuracy(preds, gold, schema)?,
        n_dialogs: gold.len(),
        n_turns: gold.iter().map(|d| d.turns.len()).sum(),
    })
}

/// Predicts the corpus and scores it.
pub fn evaluate(
    model: &Moss,
    kb: &KnowledgeBase,
    schema: &TaskSchema,
    corpus: &[Dialog],
) -> Result<(MetricReport, Vec<DialogPrediction>)> {
    let preds = predict_corpus(model, kb, corpus)?;
    let rep = report(&preds, corpus, schema, kb.requestable())?;
    Ok((rep, preds))
}

/// Gold annotations laid out as predictions.
pub fn gold_predictions(corpus: &[Dialog]) -> Vec<DialogPrediction> {
    corpus
        .iter()
        .map(|d| {
            d.turns
                .iter()
                .map(|t| TurnPrediction {
                    m: t.m.clone(),
                    s: t.s.clone(),
                    a: t.a.clone(),
                    r: t.resp.clone(),
                })
                .collect()
        })
        .collect()
}
