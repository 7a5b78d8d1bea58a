use crate::autodiff::{gru_cell, GruParams, ParamId, ParameterStore, Real, Tape, Var};
use crate::corpus::{Tokens, TurnInput, Vocab};
use crate::error::{MossError, Result};

/// Hidden states over one input sequence, with the tokens they encode.
#[derive(Debug, Clone)]
pub struct Segment {
    pub states: Var,
    pub tokens: Tokens,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderStates {
    pub b: Segment,
    pub r: Segment,
    pub u: Segment,
    pub h_e: Var,
}

/// Shared bidirectional GRU encoder. Per-token state is the sum of the two
/// directions.
#[derive(Debug, Clone, Copy)]
pub struct Encoder {
    pub fwd: GruParams,
    pub bwd: GruParams,
}

impl Encoder {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, d_emb: usize, d_hid: usize) -> Result<Self> {
        Ok(Encoder {
            fwd: GruParams::new(store, "encoder.gru_fwd", d_emb, d_hid)?,
            bwd: GruParams::new(store, "encoder.gru_bwd", d_emb, d_hid)?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        for g in [self.fwd, self.bwd] {
            v.extend([g.w_ih, g.w_hh, g.bias]);
        }
        v
    }

    /// Encodes `[B_{t-1}, R_{t-1}, U_t]` as one concatenated sequence.
    pub fn encode<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        embedding: ParamId,
        vocab: &Vocab,
        input: &TurnInput,
    ) -> Result<EncoderStates> {
        let ids: Vec<Vec<usize>> = [&input.b, &input.r, &input.u]
            .iter()
            .map(|seq| vocab.encode_all(seq))
            .collect();
        let (b, r, u, h_e) = self.encode_ids(tape, embedding, &ids[0], &ids[1], &ids[2])?;
        Ok(EncoderStates {
            b: Segment {
                states: b,
                tokens: input.b.clone(),
            },
            r: Segment {
                states: r,
                tokens: input.r.clone(),
            },
            u: Segment {
                states: u,
                tokens: input.u.clone(),
            },
            h_e,
        })
    }

    /// Encodes id sequences; returns the three state matrices and `h_E`.
    pub fn encode_ids<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        embedding: ParamId,
        b: &[usize],
        r: &[usize],
        u: &[usize],
    ) -> Result<(Var, Var, Var, Var)> {
        if b.is_empty() || r.is_empty() || u.is_empty() {
            return Err(MossError::precondition("encoder inputs must be non-empty"));
        }
        let all: Vec<usize> = b.iter().chain(r).chain(u).copied().collect();
        let table = tape.param(embedding);
        let vocab_size = tape.shape(table).0;
        if let Some(&bad) = all.iter().find(|&&i| i >= vocab_size) {
            return Err(MossError::contract(format!(
                "token id {bad} outside vocabulary of size {vocab_size}"
            )));
        }
        let emb = tape.embed(table, &all)?;
        let n = all.len();
        let d = self.fwd.d_hid;
        let xs: Vec<Var> = (0..n).map(|i| tape.row(emb, i)).collect::<Result<_>>()?;

        let mut fwd = Vec::with_capacity(n);
        let mut h = tape.row_constant(vec![T::zero(); d]);
        for &x in &xs {
            h = gru_cell(tape, x, h, &self.fwd)?;
            fwd.push(h);
        }
        let mut bwd = vec![h; n];
        let mut h = tape.row_constant(vec![T::zero(); d]);
        for i in (0..n).rev() {
            h = gru_cell(tape, xs[i], h, &self.bwd)?;
            bwd[i] = h;
        }
        let states: Vec<Var> = (0..n)
            .map(|i| tape.add(fwd[i], bwd[i]))
            .collect::<Result<_>>()?;
        let (nb, nr) = (b.len(), r.len());
        let sb = tape.stack_rows(&states[..nb])?;
        let sr = tape.stack_rows(&states[nb..nb + nr])?;
        let su = tape.stack_rows(&states[nb + nr..])?;
        Ok((sb, sr, su, states[n - 1]))
    }
}
