//! Seeded generators of fully annotated synthetic dialogs, plus corpus
//! splitting and subsampling.

pub mod complex;
pub mod schema;
pub mod simple;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_state, Dialog, DialogTurn, Goal, Mask, Module, Tokens};
use crate::error::{MossError, Result};
use crate::kb::{KnowledgeBase, Query};

pub use schema::{SlotSpec, TaskSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Simple,
    Complex,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Simple => "simple",
            Task::Complex => "complex",
        }
    }

    /// Schema and knowledge base of the task. Only the simple task's KB
    /// depends on `seed`.
    pub fn build(self, seed: u64) -> Result<(TaskSchema, KnowledgeBase)> {
        match self {
            Task::Simple => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((simple::schema(), simple::knowledge_base(&mut rng)?))
            }
            Task::Complex => Ok((complex::schema(), complex::knowledge_base()?)),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = MossError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Task::Simple),
            "complex" => Ok(Task::Complex),
            _ => Err(MossError::precondition(format!("unknown task `{s}`"))),
        }
    }
}

/// Probability of dropping each module's annotation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnotationDropout {
    pub nlu: f64,
    pub dst: f64,
    pub dpl: f64,
    pub nlg: f64,
}

impl AnnotationDropout {
    pub fn get(&self, module: Module) -> f64 {
        match module {
            Module::Nlu => self.nlu,
            Module::Dst => self.dst,
            Module::Dpl => self.dpl,
            Module::Nlg => self.nlg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub task: Task,
    pub n_dialogs: usize,
    pub seed: u64,
    pub max_turns: usize,
    #[serde(default)]
    pub annotation_dropout: AnnotationDropout,
    /// Draw masks per turn instead of per dialog.
    #[serde(default)]
    pub per_turn: bool,
}

impl GenConfig {
    pub fn new(task: Task, n_dialogs: usize, seed: u64) -> Self {
        GenConfig {
            task,
            n_dialogs,
            seed,
            max_turns: 12,
            annotation_dropout: AnnotationDropout::default(),
            per_turn: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_dialogs == 0 {
            return Err(MossError::precondition("n_dialogs must be at least 1"));
        }
        if self.max_turns == 0 {
            return Err(MossError::precondition("max_turns must be at least 1"));
        }
        for m in Module::ALL {
            let p = self.annotation_dropout.get(m);
            if !(0.0..=1.0).contains(&p) {
                return Err(MossError::precondition(format!(
                    "dropout for {m} is {p}, outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Per-dialog generator seed: the run seed mixed with the dialog index.
pub fn dialog_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Generates `cfg.n_dialogs` dialogs of `cfg.task`.
pub fn generate(schema: &TaskSchema, kb: &KnowledgeBase, cfg: &GenConfig) -> Result<Vec<Dialog>> {
    cfg.validate()?;
    schema.validate()?;
    let kb_slots: Vec<String> = kb.informable().to_vec();
    if kb_slots != schema.slot_names() {
        return Err(MossError::contract(
            "schema slots differ from knowledge-base slots",
        ));
    }
    (0..cfg.n_dialogs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(dialog_seed(cfg.seed, i));
            let id = format!("{}-{:05}", cfg.task.name(), i);
            let mut d = match cfg.task {
                Task::Simple => simple::dialog(schema, kb, &mut rng, id, cfg.max_turns)?,
                Task::Complex => complex::dialog(schema, kb, &mut rng, id, cfg.max_turns)?,
            };
            apply_dropout(&mut d, &cfg.annotation_dropout, cfg.per_turn, &mut rng);
            Ok(d)
        })
        .collect()
}

fn apply_dropout(d: &mut Dialog, p: &AnnotationDropout, per_turn: bool, rng: &mut ChaCha8Rng) {
    if Module::ALL.iter().all(|&m| p.get(m) == 0.0) {
        return;
    }
    let draw = |rng: &mut ChaCha8Rng| {
        let mut mask = Mask::ALL;
        for m in Module::ALL {
            mask.set(m, !rng.gen_bool(p.get(m)));
        }
        if Module::ALL.iter().all(|&m| !mask.get(m)) {
            mask.nlg = true;
        }
        mask
    };
    let dialog_mask = draw(rng);
    for turn in &mut d.turns {
        let mask = if per_turn { draw(rng) } else { dialog_mask };
        set_mask(turn, mask);
    }
}

/// Sets the mask and drops the annotations it excludes.
pub fn set_mask(turn: &mut DialogTurn, mask: Mask) {
    turn.mask = mask;
    if !mask.nlu {
        turn.m = None;
    }
    if !mask.dst {
        turn.s = None;
    }
    if !mask.dpl {
        turn.a = None;
    }
    if !mask.nlg {
        turn.resp = None;
    }
}

/// The dialog as a raw conversation: only the system responses remain.
pub fn to_raw(d: &Dialog) -> Dialog {
    let mut raw = d.clone();
    for t in &mut raw.turns {
        set_mask(t, Mask::NLG_ONLY);
    }
    raw
}

/// Seeded shuffle split into train/valid/test with sizes within one of
/// the exact proportions.
pub fn split(
    corpus: &[Dialog],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Dialog>, Vec<Dialog>, Vec<Dialog>)> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| x.is_nan() || x <= 0.0 || !x.is_finite()) {
        return Err(MossError::precondition(format!(
            "split ratios must be positive, got {r:?}"
        )));
    }
    if corpus.len() < 3 {
        return Err(MossError::contract(format!(
            "cannot split {} dialogs three ways",
            corpus.len()
        )));
    }
    let total: f64 = r.iter().sum();
    let n = corpus.len();
    let exact: Vec<f64> = r.iter().map(|x| x / total * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .partial_cmp(&(exact[a] - exact[a].floor()))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| {
        idx[range]
            .iter()
            .map(|&i| corpus[i].clone())
            .collect::<Vec<_>>()
    };
    let (a, b) = (sizes[0], sizes[0] + sizes[1]);
    Ok((take(0..a), take(a..b), take(b..n)))
}

/// `floor(fraction * n)` dialogs chosen without replacement, and the rest.
/// Both parts keep corpus order.
pub fn subsample(
    corpus: &[Dialog],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<Dialog>, Vec<Dialog>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MossError::precondition(format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    let n = corpus.len();
    let k = ((fraction * n as f64) + 1e-9).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chosen: BTreeSet<usize> = idx[..k].iter().copied().collect();
    let (mut sample, mut rest) = (Vec::with_capacity(k), Vec::with_capacity(n - k));
    for (i, d) in corpus.iter().enumerate() {
        if chosen.contains(&i) {
            sample.push(d.clone());
        } else {
            rest.push(d.clone());
        }
    }
    Ok((sample, rest))
}

/// Accumulates the scripted dialog state and emits annotated turns.
pub(crate) struct Script<'a> {
    schema: &'a TaskSchema,
    slots: Vec<String>,
    constraints: BTreeMap<String, String>,
    requests: BTreeSet<String>,
    turns: Vec<DialogTurn>,
}

impl<'a> Script<'a> {
    pub fn new(schema: &'a TaskSchema, slots: &[String]) -> Self {
        Script {
            schema,
            slots: slots.to_vec(),
            constraints: BTreeMap::new(),
            requests: BTreeSet::new(),
            turns: Vec::new(),
        }
    }

    pub fn inform(&mut self, pairs: &[(String, String)]) {
        for (s, v) in pairs {
            self.constraints.insert(s.clone(), v.clone());
        }
    }

    pub fn request(&mut self, slots: &[String]) {
        self.requests.extend(slots.iter().cloned());
    }

    pub fn constraints(&self) -> Query {
        self.constraints.clone()
    }

    /// Constraint values in schema slot order, `SEP_REQ`, sorted requests.
    pub fn state(&self) -> Tokens {
        let cons: Vec<&str> = self
            .slots
            .iter()
            .filter_map(|s| self.constraints.get(s).map(String::as_str))
            .collect();
        let reqs: Vec<&str> = self.requests.iter().map(String::as_str).collect();
        make_state(&cons, &reqs)
    }

    pub fn turn<R: Rng>(&mut self, user: Tokens, m: Tokens, a: Tokens, rng: &mut R) -> Result<()> {
        let resp = self.schema.realize(&a, rng)?;
        self.turns.push(DialogTurn {
            user,
            m: Some(m),
            s: Some(self.state()),
            a: Some(a),
            resp: Some(resp),
            mask: Mask::ALL,
        });
        Ok(())
    }

    pub fn finish(mut self, dialog_id: String, goal: Goal, max_turns: usize) -> Dialog {
        self.turns.truncate(max_turns);
        Dialog {
            dialog_id,
            goal: Some(goal),
            turns: self.turns,
        }
    }
}
