//! Neural building blocks on top of the tape.

use rand::Rng;

use super::params::{Init, ParamId, ParameterStore};
use super::tape::{Tape, Var};
use super::tensor::Real;
use crate::error::Result;

/// Weight initialisation range for all non-bias parameters.
pub const INIT_RANGE: f64 = 0.08;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.add(
            &format!("{prefix}.weight"),
            vec![d_out, d_in],
            Init::Uniform(INIT_RANGE),
        )?;
        let bias = if bias {
            Some(store.add(&format!("{prefix}.bias"), vec![d_out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = self.bias.map(|b| tape.param(b));
        tape.linear(x, w, b)
    }
}

/// Parameters of one GRU cell, gate blocks stacked `z | r | n`.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_hid: usize,
}

impl GruParams {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        d_in: usize,
        d_hid: usize,
    ) -> Result<Self> {
        Ok(GruParams {
            w_ih: store.add(
                &format!("{prefix}.w_ih"),
                vec![3 * d_hid, d_in],
                Init::Uniform(INIT_RANGE),
            )?,
            w_hh: store.add(
                &format!("{prefix}.w_hh"),
                vec![3 * d_hid, d_hid],
                Init::Uniform(INIT_RANGE),
            )?,
            bias: store.add(&format!("{prefix}.bias"), vec![3 * d_hid], Init::Zeros)?,
            d_in,
            d_hid,
        })
    }
}

/// One GRU step: `h' = (1 − z) ⊙ h̃ + z ⊙ h`.
pub fn gru_cell<T: Real>(
    tape: &mut Tape<'_, T>,
    x: Var,
    h_prev: Var,
    p: &GruParams,
) -> Result<Var> {
    let (w, u, b) = (tape.param(p.w_ih), tape.param(p.w_hh), tape.param(p.bias));
    tape.gru(x, h_prev, w, u, b)
}

/// Parameters of additive (Bahdanau) attention.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_query: ParamId,
    pub w_memory: ParamId,
    pub v: ParamId,
}

impl AttentionParams {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        d_query: usize,
        d_mem: usize,
        d_att: usize,
    ) -> Result<Self> {
        Ok(AttentionParams {
            w_query: store.add(
                &format!("{prefix}.w_query"),
                vec![d_att, d_query],
                Init::Uniform(INIT_RANGE),
            )?,
            w_memory: store.add(
                &format!("{prefix}.w_memory"),
                vec![d_att, d_mem],
                Init::Uniform(INIT_RANGE),
            )?,
            v: store.add(
                &format!("{prefix}.v"),
                vec![d_att],
                Init::Uniform(INIT_RANGE),
            )?,
        })
    }

    /// Projects the memory once so it can be attended over many steps.
    pub fn keys<T: Real>(&self, tape: &mut Tape<'_, T>, memory: Var) -> Result<Var> {
        let w = tape.param(self.w_memory);
        tape.matmul_nt(memory, w)
    }

    pub fn attend<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        query: Var,
        keys: Var,
        memory: Var,
    ) -> Result<Var> {
        let wq = tape.param(self.w_query);
        let q = tape.matmul_nt(query, wq)?;
        let v = tape.param(self.v);
        tape.attention(q, keys, memory, v)
    }
}

/// Additive attention of `query` over the rows of `memory`. Returns the
/// context vector and the attention weights.
pub fn additive_attention<T: Real>(
    tape: &mut Tape<'_, T>,
    p: &AttentionParams,
    query: Var,
    memory: Var,
) -> Result<(Var, Vec<T>)> {
    let keys = p.keys(tape, memory)?;
    let ctx = p.attend(tape, query, keys, memory)?;
    let w = tape
        .attention_weights(ctx)
        .map(<[T]>::to_vec)
        .unwrap_or_default();
    Ok((ctx, w))
}

/// `−log softmax(logits)[target]`
pub fn softmax_nll<T: Real>(tape: &mut Tape<'_, T>, logits: Var, target: usize) -> Result<Var> {
    let lp = tape.log_softmax(logits)?;
    let pick = tape.pick(lp, target)?;
    Ok(tape.scale(pick, -T::one()))
}

/// Inverted dropout. Identity when `rate` is zero or `training` is false.
pub fn dropout<T: Real, R: Rng>(
    tape: &mut Tape<'_, T>,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if !training || rate <= 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.shape(x);
    let keep = T::of(1.0 / (1.0 - rate));
    let mask = (0..r * c)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    tape.mask_mul(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::Gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with_gru(seed: u64, d_in: usize, d: usize) -> (ParameterStore<f64>, GruParams) {
        let mut s = ParameterStore::new(seed);
        let p = GruParams::new(&mut s, "gru", d_in, d).unwrap();
        (s, p)
    }

    #[test]
    fn gru_zero_case() {
        let mut s = ParameterStore::<f64>::new(0);
        let p = GruParams::new(&mut s, "gru", 3, 3).unwrap();
        for id in [p.w_ih, p.w_hh] {
            s.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut t = Tape::new(&s);
        let x = t.row_constant(vec![0.0; 3]);
        let h = t.row_constant(vec![0.0; 3]);
        let out = gru_cell(&mut t, x, h, &p).unwrap();
        assert_eq!(t.value(out), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gru_saturated_update_gate_carries_state() {
        let (mut s, p) = store_with_gru(3, 4, 4);
        {
            let w = s.get_mut(p.w_ih).data_mut();
            w[..16].iter_mut().for_each(|v| *v = 0.0);
        }
        {
            let u = s.get_mut(p.w_hh).data_mut();
            u[..16].iter_mut().for_each(|v| *v = 0.0);
        }
        s.get_mut(p.bias).data_mut()[..4]
            .iter_mut()
            .for_each(|v| *v = 50.0);
        let mut t = Tape::new(&s);
        let x = t.row_constant(vec![0.3, -0.2, 0.9, 0.1]);
        let h_prev = vec![0.5, -0.7, 0.25, 0.0];
        let h = t.row_constant(h_prev.clone());
        let out = gru_cell(&mut t, x, h, &p).unwrap();
        for (a, b) in t.value(out).iter().zip(&h_prev) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gru_shape_mismatch_reports_both_shapes() {
        let (s, p) = store_with_gru(1, 4, 4);
        let mut t = Tape::new(&s);
        let x = t.row_constant(vec![0.0; 5]);
        let h = t.row_constant(vec![0.0; 4]);
        let err = gru_cell(&mut t, x, h, &p).unwrap_err().to_string();
        assert!(err.contains("gru_cell"), "{err}");
    }

    #[test]
    fn attention_singleton_and_symmetric_memory() {
        let mut s = ParameterStore::<f64>::new(5);
        let p = AttentionParams::new(&mut s, "att", 3, 3, 3).unwrap();
        let mut t = Tape::new(&s);
        let q = t.row_constant(vec![0.1, 0.2, 0.3]);
        let m1 = t.constant(1, 3, vec![1.0, -1.0, 0.5]).unwrap();
        let (ctx, w) = additive_attention(&mut t, &p, q, m1).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(t.value(ctx), &[1.0, -1.0, 0.5]);

        let m2 = t
            .constant(2, 3, vec![1.0, -1.0, 0.5, 1.0, -1.0, 0.5])
            .unwrap();
        let (_, w) = additive_attention(&mut t, &p, q, m2).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn attention_rejects_empty_memory() {
        let mut s = ParameterStore::<f64>::new(5);
        let p = AttentionParams::new(&mut s, "att", 2, 2, 2).unwrap();
        let mut t = Tape::new(&s);
        let q = t.row_constant(vec![0.1, 0.2]);
        let wq = t.param(p.w_query);
        let qp = t.matmul_nt(q, wq).unwrap();
        let empty_keys = t.row_constant(Vec::new());
        let v = t.param(p.v);
        assert!(t.attention(qp, empty_keys, empty_keys, v).is_err());
    }

    #[test]
    fn softmax_nll_closed_forms() {
        let s = ParameterStore::<f64>::new(0);
        let mut t = Tape::new(&s);
        let l = t.row_constant(vec![0.7; 4]);
        let loss = softmax_nll(&mut t, l, 2).unwrap();
        assert!((t.scalar(loss) - 4f64.ln()).abs() < 1e-12);

        let l = t.row_constant(vec![10.0, 0.0, 0.0]);
        let loss = softmax_nll(&mut t, l, 0).unwrap();
        let expected = (1.0 + 2.0 * (-10f64).exp()).ln();
        assert!((t.scalar(loss) - expected).abs() < 1e-15);
        assert!((t.scalar(loss) - 9.08e-5).abs() < 1e-7);

        assert!(softmax_nll(&mut t, l, 3).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let s = ParameterStore::<f32>::new(0);
        let mut t = Tape::new(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = t.row_constant(vec![1.0, 2.0, 3.0]);
        assert_eq!(dropout(&mut t, x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(dropout(&mut t, x, 0.5, false, &mut rng).unwrap(), x);
        let y = dropout(&mut t, x, 0.5, true, &mut rng).unwrap();
        assert!(t
            .value(y)
            .iter()
            .zip([1.0, 2.0, 3.0])
            .all(|(&a, b)| a == 0.0 || a == 2.0 * b));
    }

    #[test]
    fn backward_sum_of_parameter_is_ones_and_unused_is_zero() {
        let mut s = ParameterStore::<f64>::new(0);
        let used = s.add("used", vec![2, 3], Init::Uniform(0.08)).unwrap();
        let unused = s.add("unused", vec![4], Init::Uniform(0.08)).unwrap();
        let mut g = Gradients::zeros_like(&s);
        let mut t = Tape::new(&s);
        let p = t.param(used);
        let loss = t.sum(p);
        t.backward(loss, 1.0, &mut g).unwrap();
        assert!(g.get(used).iter().all(|&v| v == 1.0));
        assert!(g.is_zero(unused));
        assert!(
            t.backward(loss, 1.0, &mut g).is_err(),
            "second backward must fail"
        );
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut s = ParameterStore::<f64>::new(0);
        let id = s.add("w", vec![3], Init::Uniform(0.08)).unwrap();
        let mut g = Gradients::zeros_like(&s);
        let mut t = Tape::new(&s);
        let p = t.param(id);
        assert!(matches!(
            t.backward(p, 1.0, &mut g),
            Err(crate::error::MossError::Contract(_))
        ));
    }
}
