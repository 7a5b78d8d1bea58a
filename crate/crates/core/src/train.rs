//! Joint training of all present decoders with per-turn annotation masks.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_global_norm, Adam, Gradients, ParameterStore, Tape, Var};
use crate::corpus::{make_turn_input, Dialog, DialogTurn, Module, Source, TurnPrediction, Vocab};
use crate::error::{MossError, Result};
use crate::kb::KnowledgeBase;
use crate::model::{FrameworkConfig, Moss, TurnOutput, TurnTeacher};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_after_epoch: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Share of training dialogs held out for checkpoint selection when no
    /// validation corpus is given.
    pub val_fraction: f64,
    pub update: UpdateMode,
}

/// How often the optimizer steps within a batch of dialogs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// Once per turn index, over the batch dialogs reaching that turn.
    #[default]
    Turn,
    /// Once per batch.
    Dialog,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.003,
            decay_factor: 0.5,
            decay_after_epoch: 10,
            batch_size: 32,
            dropout: 0.5,
            max_epochs: 11,
            seed: 1,
            clip_norm: 5.0,
            val_fraction: 0.1,
            update: UpdateMode::Turn,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.decay_factor, self.clip_norm];
        if positive.iter().any(|&v| v.is_nan() || v <= 0.0)
            || self.batch_size == 0
            || self.max_epochs == 0
        {
            return Err(MossError::precondition(
                "training hyperparameters must be positive",
            ));
        }
        if self.decay_after_epoch == 0 {
            return Err(MossError::precondition(
                "decay_after_epoch must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(MossError::precondition(
                "dropout and val_fraction must lie in [0, 1)",
            ));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = (epoch.saturating_sub(1) / self.decay_after_epoch) as i32;
        self.lr * self.decay_factor.powi(decays)
    }
}

/// Per-module losses; `None` where the module is absent or unannotated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nlu: Option<f64>,
    pub dst: Option<f64>,
    pub dpl: Option<f64>,
    pub nlg: Option<f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn get(&self, module: Module) -> Option<f64> {
        match module {
            Module::Nlu => self.nlu,
            Module::Dst => self.dst,
            Module::Dpl => self.dpl,
            Module::Nlg => self.nlg,
        }
    }

    fn slot(&mut self, module: Module) -> &mut Option<f64> {
        match module {
            Module::Nlu => &mut self.nlu,
            Module::Dst => &mut self.dst,
            Module::Dpl => &mut self.dpl,
            Module::Nlg => &mut self.nlg,
        }
    }

    /// Adds `other * weight` componentwise; a component stays `None` only
    /// if it is `None` on both sides.
    pub fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        for m in Module::ALL {
            if let Some(v) = other.get(m) {
                *self.slot(m) = Some(self.get(m).unwrap_or(0.0) + v * weight);
            }
        }
        self.total += other.total * weight;
    }

    /// First non-finite component, by module name.
    pub fn non_finite(&self) -> Option<&'static str> {
        for m in Module::ALL {
            if self.get(m).is_some_and(|v| !v.is_finite()) {
                return Some(m.name());
            }
        }
        (!self.total.is_finite()).then_some("total")
    }
}

/// Loss of one teacher-forced turn. Returns the breakdown and the scalar
/// to differentiate (absent when no module is annotated).
pub fn turn_loss<T: crate::autodiff::Real>(
    tape: &mut Tape<'_, T>,
    out: &TurnOutput,
    gold: &DialogTurn,
    config: &FrameworkConfig,
) -> Result<(LossBreakdown, Option<Var>)> {
    let mut br = LossBreakdown::default();
    let mut parts = Vec::new();
    for module in config.modules() {
        if !gold.mask.get(module) {
            continue;
        }
        let loss = out.get(module).and_then(|r| r.loss).ok_or_else(|| {
            MossError::contract(format!("{module} is annotated but was not teacher-forced"))
        })?;
        let v = tape.scalar(loss).as_f64();
        *br.slot(module) = Some(v);
        br.total += v;
        parts.push(loss);
    }
    let total = if parts.is_empty() {
        None
    } else {
        Some(tape.sum_many(&parts)?)
    };
    Ok((br, total))
}

/// Runs turn `i` (0-based) of a dialog under teacher forcing and appends
/// the model's outputs to `preds`. With `grads` set, backpropagates
/// `weight * loss`. With `rng` set, dropout is active.
#[allow(clippy::too_many_arguments)]
pub fn teacher_turn(
    model: &Moss,
    kb: &KnowledgeBase,
    dialog: &Dialog,
    i: usize,
    preds: &mut Vec<TurnPrediction>,
    rng: Option<&mut ChaCha8Rng>,
    grads: Option<&mut Gradients<f32>>,
    weight: f64,
) -> Result<LossBreakdown> {
    let turn = &dialog.turns[i];
    let input = make_turn_input(dialog, i + 1, Source::Mixed(preds), model.config.has_dpl)?;
    let teacher = TurnTeacher::from_turn(turn, &model.config);
    let mut tape = Tape::new(&model.store);
    let out = model
        .net
        .forward_turn(&mut tape, &model.vocab, kb, &input, &teacher, rng)?;
    let (br, total) = turn_loss(&mut tape, &out, turn, &model.config)?;
    if let (Some(g), Some(total)) = (grads, total) {
        if br.total.is_finite() {
            tape.backward(total, weight as f32, g)?;
        }
    }
    preds.push(out.prediction());
    Ok(br)
}

/// Runs one dialog under teacher forcing; the loss is the mean over turns.
/// With `grads` set, backpropagates `weight` times that mean.
pub fn dialog_loss(
    model: &Moss,
    kb: &KnowledgeBase,
    dialog: &Dialog,
    mut rng: Option<&mut ChaCha8Rng>,
    mut grads: Option<&mut Gradients<f32>>,
    weight: f64,
) -> Result<LossBreakdown> {
    let n = dialog.turns.len();
    let mut preds: Vec<TurnPrediction> = Vec::with_capacity(n);
    let mut sum = LossBreakdown::default();
    for i in 0..n {
        let br = teacher_turn(
            model,
            kb,
            dialog,
            i,
            &mut preds,
            rng.as_deref_mut(),
            grads.as_deref_mut(),
            weight / n as f64,
        )?;
        sum.accumulate(&br, 1.0 / n as f64);
    }
    Ok(sum)
}

/// Mean loss over a corpus without dropout or updates.
pub fn corpus_loss(model: &Moss, kb: &KnowledgeBase, corpus: &[Dialog]) -> Result<LossBreakdown> {
    let mut mean = LossBreakdown::default();
    for d in corpus {
        let br = dialog_loss(model, kb, d, None, None, 0.0)?;
        mean.accumulate(&br, 1.0 / corpus.len() as f64);
    }
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub batches: usize,
    pub loss: LossBreakdown,
    pub valid_loss: Option<f64>,
    pub wall_time_s: f64,
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss (the last
    /// epoch when there is no validation data).
    pub model: Moss,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Trains a fresh model. The vocabulary is built from `train` unless given.
/// Without `valid`, `val_fraction` of `train` is held out.
pub fn train(
    tc: &TrainConfig,
    fw: &FrameworkConfig,
    train: &[Dialog],
    valid: Option<&[Dialog]>,
    kb: &KnowledgeBase,
    vocab: Option<Vocab>,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train.is_empty() {
        return Err(MossError::precondition("training corpus is empty"));
    }
    if let Some(d) = train.iter().find(|d| {
        d.turns
            .iter()
            .all(|t| Module::ALL.iter().all(|&m| !t.mask.get(m)))
    }) {
        return Err(MossError::precondition(format!(
            "dialog `{}` has no annotated module",
            d.dialog_id
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let (train_set, valid_set): (Vec<Dialog>, Vec<Dialog>) = match valid {
        Some(v) => (train.to_vec(), v.to_vec()),
        None => {
            let mut idx: Vec<usize> = (0..train.len()).collect();
            idx.shuffle(&mut rng);
            let n_val = (train.len() as f64 * tc.val_fraction).floor() as usize;
            let n_val = n_val.min(train.len() - 1);
            let mut val: Vec<usize> = idx[..n_val].to_vec();
            val.sort_unstable();
            let (mut tr, mut va) = (Vec::new(), Vec::new());
            for (i, d) in train.iter().enumerate() {
                if val.binary_search(&i).is_ok() {
                    va.push(d.clone());
                } else {
                    tr.push(d.clone());
                }
            }
            (tr, va)
        }
    };
    let vocab = match vocab {
        Some(v) => v,
        None => Vocab::build(&train_set, fw.vocab_size)?,
    };
    let mut fw = fw.clone();
    fw.seed = tc.seed;
    fw.dropout = tc.dropout;
    let mut model = Moss::new(fw, vocab)?;
    let mut adam = Adam::new(tc.lr);
    let mut grads = Gradients::zeros_like(&model.store);
    let mut best: Option<(f64, usize, ParameterStore<f32>)> = None;
    let mut log = Vec::new();
    let start = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=tc.max_epochs {
        let lr = tc.lr_at(epoch);
        adam.lr = lr;
        order.shuffle(&mut rng);
        let mut epoch_loss = LossBreakdown::default();
        let batches: Vec<&[usize]> = order.chunks(tc.batch_size).collect();
        for (b, batch) in batches.iter().enumerate() {
            let dialogs: Vec<&Dialog> = batch.iter().map(|&i| &train_set[i]).collect();
            let ctx = StepContext {
                epoch,
                batch: b + 1,
                clip_norm: tc.clip_norm,
            };
            let losses = match tc.update {
                UpdateMode::Dialog => dialog_batch(
                    &mut model, kb, &dialogs, &mut rng, &mut adam, &mut grads, &ctx,
                )?,
                UpdateMode::Turn => turn_batches(
                    &mut model, kb, &dialogs, &mut rng, &mut adam, &mut grads, &ctx,
                )?,
            };
            for br in &losses {
                epoch_loss.accumulate(br, 1.0 / train_set.len() as f64);
            }
        }
        let valid_loss = if valid_set.is_empty() {
            None
        } else {
            Some(corpus_loss(&model, kb, &valid_set)?.total)
        };
        let entry = EpochLog {
            epoch,
            lr,
            batch_size: tc.batch_size,
            batches: batches.len(),
            loss: epoch_loss,
            valid_loss,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: loss {:.4} valid {} lr {lr} ({:.1}s)",
            entry.loss.total,
            valid_loss.map_or("-".into(), |v| format!("{v:.4}")),
            entry.wall_time_s
        );
        if let Some(sink) = log_sink.as_deref_mut() {
            let line = serde_json::to_string(&entry)?;
            writeln!(sink, "{line}").map_err(|e| MossError::io("training log", e))?;
        }
        let score = valid_loss.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(s, _, _)| score <= *s) {
            best = Some((score, epoch, model.store.clone()));
        }
        log.push(entry);
    }
    let (_, best_epoch, store) = best.expect("at least one epoch ran");
    model.store = store;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
    })
}

struct StepContext {
    epoch: usize,
    batch: usize,
    clip_norm: f64,
}

impl StepContext {
    fn check(&self, br: &LossBreakdown, dialog: &Dialog) -> Result<()> {
        match br.non_finite() {
            Some(part) => Err(MossError::Training(format!(
                "non-finite {part} loss in epoch {}, batch {} (dialog `{}`)",
                self.epoch, self.batch, dialog.dialog_id
            ))),
            None => Ok(()),
        }
    }

    fn step(&self, model: &mut Moss, adam: &mut Adam, grads: &mut Gradients<f32>) -> Result<()> {
        clip_global_norm(grads, self.clip_norm);
        adam.step(&mut model.store, grads).map_err(|e| {
            MossError::Training(format!("epoch {}, batch {}: {e}", self.epoch, self.batch))
        })
    }
}

/// One update on the whole batch: loss averaged over turns, then dialogs.
fn dialog_batch(
    model: &mut Moss,
    kb: &KnowledgeBase,
    dialogs: &[&Dialog],
    rng: &mut ChaCha8Rng,
    adam: &mut Adam,
    grads: &mut Gradients<f32>,
    ctx: &StepContext,
) -> Result<Vec<LossBreakdown>> {
    let w = 1.0 / dialogs.len() as f64;
    let mut out = Vec::with_capacity(dialogs.len());
    for d in dialogs {
        let br = dialog_loss(model, kb, d, Some(rng), Some(grads), w)?;
        ctx.check(&br, d)?;
        out.push(br);
    }
    ctx.step(model, adam, grads)?;
    Ok(out)
}

/// One update per turn index: the loss of turn t averaged over the batch
/// dialogs that have a turn t.
fn turn_batches(
    model: &mut Moss,
    kb: &KnowledgeBase,
    dialogs: &[&Dialog],
    rng: &mut ChaCha8Rng,
    adam: &mut Adam,
    grads: &mut Gradients<f32>,
    ctx: &StepContext,
) -> Result<Vec<LossBreakdown>> {
    let max_turns = dialogs.iter().map(|d| d.turns.len()).max().unwrap_or(0);
    let mut preds: Vec<Vec<TurnPrediction>> = vec![Vec::new(); dialogs.len()];
    let mut sums = vec![LossBreakdown::default(); dialogs.len()];
    for t in 0..max_turns {
        let active: Vec<usize> = (0..dialogs.len())
            .filter(|&j| dialogs[j].turns.len() > t)
            .collect();
        let w = 1.0 / active.len() as f64;
        let mut any = false;
        for &j in &active {
            let d = dialogs[j];
            let br = teacher_turn(model, kb, d, t, &mut preds[j], Some(rng), Some(grads), w)?;
            ctx.check(&br, d)?;
            any |= Module::ALL.iter().any(|&m| br.get(m).is_some());
            sums[j].accumulate(&br, 1.0 / d.turns.len() as f64);
        }
        if any {
            ctx.step(model, adam, grads)?;
        }
    }
    Ok(sums)
}

/// Reads a JSON-lines training log.
pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = std::fs::read_to_string(path).map_err(|e| MossError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
