//! Finite-difference checking shared by the gradient and acceptance suites.
#![allow(dead_code)]

use moss::autodiff::{Gradients, ParamId, ParameterStore, Tape, Var};
use moss::corpus::{tokenize, TurnInput, Vocab};
use moss::kb::{Entity, KnowledgeBase};
use moss::model::{FrameworkConfig, Instance, Network, TurnTeacher};
use moss::Result;

// fourth-order central stencil; error O(h^4) keeps tiny gradients measurable
pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-3;

/// Relative error of two gradient tensors, measured on their norms.
pub fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

/// Checks every parameter of `store` reachable by `f`. Returns the worst
/// relative error and the name of the parameter it belongs to.
pub fn check<F>(store: &mut ParameterStore<f64>, f: F) -> (f64, String)
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let mut grads = Gradients::zeros_like(store);
    {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape).unwrap();
        tape.backward(loss, 1.0, &mut grads).unwrap();
    }
    let eval = |s: &ParameterStore<f64>| -> f64 {
        let mut tape = Tape::new(s);
        let loss = f(&mut tape).unwrap();
        tape.scalar(loss)
    };
    let ids: Vec<(ParamId, String)> = store.iter().map(|(id, n, _)| (id, n.to_string())).collect();
    let mut worst = (0.0, String::new());
    for (id, name) in ids {
        let n = store.get(id).len();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let orig = store.get(id).data()[i];
            let mut at = |delta: f64| {
                store.get_mut(id).data_mut()[i] = orig + delta;
                eval(store)
            };
            let (p2, p1, m1, m2) = (at(2.0 * H), at(H), at(-H), at(-2.0 * H));
            store.get_mut(id).data_mut()[i] = orig;
            numeric.push((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * H));
        }
        let e = rel_error(grads.get(id), &numeric);
        if e > worst.0 {
            worst = (e, name);
        }
    }
    worst
}

pub fn micro_vocab() -> Vocab {
    let mut text = moss::corpus::vocab::RESERVED.join("\n");
    text.push_str("\nthai\ninform\noffer\n");
    Vocab::from_text(&text).unwrap()
}

pub fn micro_kb() -> KnowledgeBase {
    let e: Entity = [("name", "siam"), ("food", "thai")]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    KnowledgeBase::new(vec!["food".into()], vec!["phone".into()], vec![e]).unwrap()
}

pub fn micro_config(instance: Instance, seed: u64) -> FrameworkConfig {
    let mut c = FrameworkConfig::for_instance(instance);
    c.d_emb = 4;
    c.d_hid = 4;
    c.vocab_size = 12;
    c.seed = seed;
    c.dropout = 0.0;
    c
}

pub fn network_check_with(config: FrameworkConfig) -> (f64, String) {
    let seed = config.seed;
    let vocab = micro_vocab();
    assert_eq!(vocab.len(), 12);
    let kb = micro_kb();
    let mut store = ParameterStore::<f64>::new(seed);
    let net = Network::new(&mut store, &config).unwrap();
    // random init is small; widen it so gradients are not all tiny
    let ids: Vec<ParamId> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v *= 5.0;
        }
    }
    let input = TurnInput {
        b: tokenize("GO"),
        r: tokenize("GO"),
        u: tokenize("want thai"),
    };
    let (m, s, a, r) = (
        tokenize("inform thai"),
        tokenize("thai SEP_REQ"),
        tokenize("offer"),
        tokenize("offer thai want"),
    );
    let mut teacher = TurnTeacher {
        m: Some(&m),
        s: Some(&s),
        a: Some(&a),
        r: Some(&r),
    };
    if !config.has_nlu {
        teacher.m = None;
    }
    if !config.has_dpl {
        teacher.a = None;
    }
    check(&mut store, |t| {
        let out = net.forward_turn(t, &vocab, &kb, &input, &teacher, None)?;
        let losses: Vec<Var> = out.losses().into_values().collect();
        t.sum_many(&losses)
    })
}
