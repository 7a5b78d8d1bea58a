//! Attention-based unidirectional GRU decoder with a copy mechanism.
//!
//! At every step the previous hidden state attends over the memory; the
//! GRU consumes `[emb(y_{j-1}) (; k_t) ; context]`. Generation logits come
//! from `[h_j ; context]`, copy scores from `h_j · tanh(W_c m_i)` for every
//! memory position. Both are normalised by one softmax and probabilities of
//! identical surface tokens are summed. Out-of-vocabulary memory tokens get
//! extended ids past the vocabulary so they can still be emitted.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::nn::INIT_RANGE;
use crate::autodiff::{
    dropout, gru_cell, AttentionParams, GruParams, Init, Linear, ParamId, ParameterStore, Real,
    Tape, Var,
};
use crate::corpus::vocab::{reserved, GO, UNK};
use crate::corpus::{Module, Tokens, Vocab};
use crate::error::{MossError, Result};
use crate::kb::{condition_embedding, MatchDegree};

use super::encoder::Segment;

#[derive(Debug, Clone, Copy)]
pub struct DecoderParams {
    pub module: Module,
    pub attention: AttentionParams,
    pub gru: GruParams,
    pub out: Linear,
    pub copy: Option<ParamId>,
    pub kb_conditioned: bool,
}

impl DecoderParams {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        module: Module,
        d_emb: usize,
        d_hid: usize,
        vocab_size: usize,
        kb_dim: Option<usize>,
        copy: bool,
    ) -> Result<Self> {
        let prefix = format!("decoder.{}", module.name());
        let d_in = d_emb + kb_dim.unwrap_or(0) + d_hid;
        Ok(DecoderParams {
            module,
            attention: AttentionParams::new(
                store,
                &format!("{prefix}.attention"),
                d_hid,
                d_hid,
                d_hid,
            )?,
            gru: GruParams::new(store, &format!("{prefix}.gru"), d_in, d_hid)?,
            out: Linear::new(store, &format!("{prefix}.out"), 2 * d_hid, vocab_size, true)?,
            copy: if copy {
                Some(store.add(
                    &format!("{prefix}.copy.weight"),
                    vec![d_hid, d_hid],
                    Init::Uniform(INIT_RANGE),
                )?)
            } else {
                None
            },
            kb_conditioned: kb_dim.is_some(),
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![
            self.attention.w_query,
            self.attention.w_memory,
            self.attention.v,
            self.gru.w_ih,
            self.gru.w_hh,
            self.gru.bias,
            self.out.weight,
        ];
        v.extend(self.out.bias);
        v.extend(self.copy);
        v
    }
}

/// Shared per-forward state: vocabulary, dropout source and switches.
pub struct DecodeEnv<'a> {
    pub vocab: &'a Vocab,
    pub embedding: ParamId,
    pub dropout: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl DecodeEnv<'_> {
    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub(crate) fn dropout<T: Real>(&mut self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) => dropout(tape, x, self.dropout, true, rng),
            None => Ok(x),
        }
    }
}

pub struct DecodeRequest<'r> {
    pub memory: &'r [Segment],
    pub h0: Var,
    pub kb: Option<MatchDegree>,
    /// Gold output without its EOS; present means teacher forcing.
    pub teacher: Option<&'r [String]>,
    pub max_len: usize,
}

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub module: Module,
    /// Emitted tokens, including the closing EOS when one was produced.
    pub tokens: Tokens,
    /// Decoder hidden state after each emitted token.
    pub hidden: Vec<Var>,
    /// Log-probabilities over the extended vocabulary, one per step.
    pub log_probs: Vec<Var>,
    /// Surface forms of extended ids `vocab_size..`.
    pub ext_tokens: Tokens,
    /// Target ids under teacher forcing.
    pub targets: Vec<usize>,
    /// Mean negative log-likelihood of the targets under teacher forcing.
    pub loss: Option<Var>,
    /// Hit the length cap without emitting EOS.
    pub truncated: bool,
    pub h0: Var,
}

impl DecodeResult {
    /// Output tokens without the closing EOS.
    pub fn content(&self) -> Tokens {
        let eos = reserved(self.module.eos());
        let mut t = self.tokens.clone();
        if t.last().is_some_and(|l| l == eos) {
            t.pop();
        }
        t
    }

    pub fn last_hidden(&self) -> Var {
        *self.hidden.last().expect("decode emits at least one step")
    }

    pub fn segment<T: Real>(&self, tape: &mut Tape<'_, T>) -> Result<Segment> {
        Ok(Segment {
            states: tape.stack_rows(&self.hidden)?,
            tokens: self.tokens.clone(),
        })
    }

    /// Probability distribution of step `i` over the extended vocabulary.
    pub fn distribution<T: Real>(&self, tape: &Tape<'_, T>, i: usize) -> Vec<f64> {
        tape.value(self.log_probs[i])
            .iter()
            .map(|v| v.as_f64().exp())
            .collect()
    }

    pub fn surface(&self, vocab: &Vocab, id: usize) -> String {
        if id < vocab.len() {
            vocab.decode(id).unwrap_or("UNK").to_string()
        } else {
            self.ext_tokens[id - vocab.len()].clone()
        }
    }
}

/// Maps memory tokens to output ids, assigning extended ids to OOV surfaces.
pub(crate) struct CopyMap {
    pub src: Vec<usize>,
    pub ext: Tokens,
    ext_index: HashMap<String, usize>,
}

impl CopyMap {
    pub fn new(vocab: &Vocab, memory: &[Segment]) -> Self {
        let mut src = Vec::new();
        let mut ext = Tokens::new();
        let mut ext_index = HashMap::new();
        for seg in memory {
            for tok in &seg.tokens {
                let id = match vocab.get(tok) {
                    Some(id) => id,
                    None => *ext_index.entry(tok.clone()).or_insert_with(|| {
                        ext.push(tok.clone());
                        vocab.len() + ext.len() - 1
                    }),
                };
                src.push(id);
            }
        }
        CopyMap {
            src,
            ext,
            ext_index,
        }
    }

    /// Output id for a gold token: vocabulary id, else extended id when the
    /// token is copyable, else UNK.
    pub fn target(&self, vocab: &Vocab, tok: &str) -> usize {
        vocab
            .get(tok)
            .or_else(|| self.ext_index.get(tok).copied())
            .unwrap_or(UNK)
    }
}

pub fn decode_module<T: Real>(
    tape: &mut Tape<'_, T>,
    env: &mut DecodeEnv<'_>,
    params: &DecoderParams,
    req: &DecodeRequest<'_>,
) -> Result<DecodeResult> {
    if req.memory.is_empty() || req.memory.iter().all(Segment::is_empty) {
        return Err(MossError::precondition(format!(
            "{} decoder needs a non-empty memory",
            params.module
        )));
    }
    if req.kb.is_some() != params.kb_conditioned {
        return Err(MossError::contract(format!(
            "{} decoder kb conditioning mismatch",
            params.module
        )));
    }
    let vocab = env.vocab;
    let vsize = vocab.len();
    let eos_id = params.module.eos();
    let eos = reserved(eos_id);

    let states: Vec<Var> = req.memory.iter().map(|s| s.states).collect();
    let memory = tape.stack_rows(&states)?;
    let keys = params.attention.keys(tape, memory)?;
    let copy_on = params.copy.is_some();
    let copy_keys = match params.copy {
        Some(id) => {
            let wc = tape.param(id);
            let proj = tape.matmul_nt(memory, wc)?;
            Some(tape.tanh(proj))
        }
        None => None,
    };
    let copy_map = CopyMap::new(vocab, req.memory);
    let src: &[usize] = if copy_on { &copy_map.src } else { &[] };
    let ext_size = vsize + if copy_on { copy_map.ext.len() } else { 0 };
    let table = tape.param(env.embedding);

    let gold: Option<Vec<&str>> = req.teacher.map(|t| {
        t.iter()
            .map(String::as_str)
            .chain(std::iter::once(eos))
            .collect()
    });
    let steps = match &gold {
        Some(g) => g.len(),
        None => req.max_len,
    };

    let mut result = DecodeResult {
        module: params.module,
        tokens: Tokens::new(),
        hidden: Vec::with_capacity(steps),
        log_probs: Vec::with_capacity(steps),
        ext_tokens: if copy_on {
            copy_map.ext.clone()
        } else {
            Tokens::new()
        },
        targets: Vec::new(),
        loss: None,
        truncated: false,
        h0: req.h0,
    };
    let mut nll = Vec::new();
    let mut h = req.h0;
    let mut prev = GO;
    for step in 0..steps {
        let ctx = params.attention.attend(tape, h, keys, memory)?;
        let mut e = tape.embed(table, &[prev])?;
        e = env.dropout(tape, e)?;
        if let Some(k) = &req.kb {
            e = condition_embedding(tape, e, k)?;
        }
        let x = tape.concat_cols(&[e, ctx])?;
        h = gru_cell(tape, x, h, &params.gru)?;
        let mut o = tape.concat_cols(&[h, ctx])?;
        o = env.dropout(tape, o)?;
        let gen = params.out.forward(tape, o)?;
        let copy = match copy_keys {
            Some(ck) => Some(tape.matmul_nt(h, ck)?),
            None => None,
        };
        let lp = tape.copy_mix(gen, copy, src, ext_size)?;
        result.hidden.push(h);
        result.log_probs.push(lp);

        let (out_id, surface) = match &gold {
            Some(g) => {
                let target = if copy_on {
                    copy_map.target(vocab, g[step])
                } else {
                    vocab.encode(g[step])
                };
                result.targets.push(target);
                let p = tape.pick(lp, target)?;
                nll.push(p);
                (target, g[step].to_string())
            }
            None => {
                let id = argmax(tape.value(lp));
                (id, result_surface(vocab, &copy_map.ext, id))
            }
        };
        result.tokens.push(surface);
        if out_id == eos_id {
            break;
        }
        prev = if out_id < vsize { out_id } else { UNK };
        if gold.is_none() && step + 1 == steps {
            result.truncated = true;
        }
    }
    if !nll.is_empty() {
        let total = tape.sum_many(&nll)?;
        result.loss = Some(tape.scale(total, T::of(-1.0 / nll.len() as f64)));
    }
    Ok(result)
}

fn result_surface(vocab: &Vocab, ext: &[String], id: usize) -> String {
    if id < vocab.len() {
        vocab.decode(id).unwrap_or("UNK").to_string()
    } else {
        ext[id - vocab.len()].clone()
    }
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
