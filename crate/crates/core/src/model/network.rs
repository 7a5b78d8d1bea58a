use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::nn::INIT_RANGE;
use crate::autodiff::{Init, Linear, ParamId, ParameterStore, Real, Tape, Var};
use crate::corpus::vocab::{RESERVED, UNK};
use crate::corpus::{DialogTurn, Module, Tokens, TurnInput, TurnPrediction, Vocab};
use crate::error::{MossError, Result};
use crate::kb::{condition_embedding, state_to_query, KnowledgeBase, MatchDegree};

use super::config::{ActMemory, FrameworkConfig};
use super::decoder::{decode_module, DecodeEnv, DecodeRequest, DecodeResult, DecoderParams};
use super::encoder::{Encoder, EncoderStates, Segment};

/// One attended source of a module decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MemorySource {
    Belief,
    Response,
    User,
    /// Hidden states of an upstream decoder.
    Hidden(Module),
    /// The system act of this turn as an attended memory.
    Act,
}

/// Where a decoder takes its initial hidden state from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitSource {
    Encoder,
    Module(Module),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleWiring {
    pub module: Module,
    pub memory: Vec<MemorySource>,
    pub h0: InitSource,
    pub kb: bool,
}

/// The decoder chain of a framework instance, in pipeline order.
pub fn wiring(config: &FrameworkConfig) -> Vec<ModuleWiring> {
    use MemorySource::*;
    let mut out = Vec::new();
    let mut last = InitSource::Encoder;
    if config.has_nlu {
        out.push(ModuleWiring {
            module: Module::Nlu,
            memory: vec![Belief, Response, User],
            h0: last,
            kb: false,
        });
        last = InitSource::Module(Module::Nlu);
    }
    let mut dst_memory = vec![Belief, Response, User];
    if config.has_nlu {
        dst_memory.push(Hidden(Module::Nlu));
    }
    out.push(ModuleWiring {
        module: Module::Dst,
        memory: dst_memory,
        h0: last,
        kb: false,
    });
    last = InitSource::Module(Module::Dst);
    if config.has_dpl {
        out.push(ModuleWiring {
            module: Module::Dpl,
            memory: vec![Response, User, Hidden(Module::Dst)],
            h0: last,
            kb: true,
        });
        last = InitSource::Module(Module::Dpl);
        out.push(ModuleWiring {
            module: Module::Nlg,
            memory: vec![Act, Response, User],
            h0: last,
            kb: true,
        });
    } else {
        out.push(ModuleWiring {
            module: Module::Nlg,
            memory: vec![Response, User, Hidden(Module::Dst)],
            h0: last,
            kb: true,
        });
    }
    out
}

/// Gold targets handed to the decoders. Modules without a target free-run.
#[derive(Debug, Clone, Copy, Default)]
pub struct TurnTeacher<'a> {
    pub m: Option<&'a [String]>,
    pub s: Option<&'a [String]>,
    pub a: Option<&'a [String]>,
    pub r: Option<&'a [String]>,
}

impl<'a> TurnTeacher<'a> {
    pub fn get(&self, module: Module) -> Option<&'a [String]> {
        match module {
            Module::Nlu => self.m,
            Module::Dst => self.s,
            Module::Dpl => self.a,
            Module::Nlg => self.r,
        }
    }

    pub fn set(&mut self, module: Module, target: Option<&'a [String]>) {
        match module {
            Module::Nlu => self.m = target,
            Module::Dst => self.s = target,
            Module::Dpl => self.a = target,
            Module::Nlg => self.r = target,
        }
    }

    /// Annotated targets of `turn` for the modules `config` contains.
    pub fn from_turn(turn: &'a DialogTurn, config: &FrameworkConfig) -> Self {
        let mut t = TurnTeacher::default();
        for module in config.modules() {
            t.set(module, turn.target(module).map(Vec::as_slice));
        }
        t
    }

    pub fn is_empty(&self) -> bool {
        Module::ALL.iter().all(|&m| self.get(m).is_none())
    }
}

#[derive(Debug, Clone)]
pub struct TurnOutput {
    pub encoder: EncoderStates,
    pub results: BTreeMap<Module, DecodeResult>,
    pub k: MatchDegree,
}

impl TurnOutput {
    pub fn get(&self, module: Module) -> Option<&DecodeResult> {
        self.results.get(&module)
    }

    /// Teacher-forced loss of every module that had a target.
    pub fn losses(&self) -> BTreeMap<Module, Var> {
        self.results
            .iter()
            .filter_map(|(&m, r)| r.loss.map(|l| (m, l)))
            .collect()
    }

    pub fn prediction(&self) -> TurnPrediction {
        let get = |m| self.results.get(&m).map(DecodeResult::content);
        TurnPrediction {
            m: get(Module::Nlu),
            s: get(Module::Dst),
            a: get(Module::Dpl),
            r: get(Module::Nlg),
        }
    }
}

/// Parameter handles of one framework instance.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: FrameworkConfig,
    pub embedding: ParamId,
    pub encoder: Encoder,
    pub decoders: BTreeMap<Module, DecoderParams>,
    /// Projection of k-conditioned act embeddings into the NLG memory.
    pub act_proj: Option<Linear>,
}

impl Network {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, config: &FrameworkConfig) -> Result<Self> {
        config.validate()?;
        let (d_emb, d_hid, v) = (config.d_emb, config.d_hid, config.vocab_size);
        let embedding = store.add("embedding", vec![v, d_emb], Init::Uniform(INIT_RANGE))?;
        let encoder = Encoder::new(store, d_emb, d_hid)?;
        let mut decoders = BTreeMap::new();
        for w in wiring(config) {
            let kb = w.kb.then_some(config.kb_dim);
            decoders.insert(
                w.module,
                DecoderParams::new(store, w.module, d_emb, d_hid, v, kb, config.copy)?,
            );
        }
        let act_proj = if config.has_dpl && config.act_memory == ActMemory::Tokens {
            Some(Linear::new(
                store,
                "decoder.nlg.act_proj",
                d_emb + config.kb_dim,
                d_hid,
                true,
            )?)
        } else {
            None
        };
        Ok(Network {
            config: config.clone(),
            embedding,
            encoder,
            decoders,
            act_proj,
        })
    }

    pub fn wiring(&self) -> Vec<ModuleWiring> {
        wiring(&self.config)
    }

    /// Every parameter the instance owns.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.embedding];
        v.extend(self.encoder.param_ids());
        for d in self.decoders.values() {
            v.extend(d.param_ids());
        }
        if let Some(p) = self.act_proj {
            v.push(p.weight);
            v.extend(p.bias);
        }
        v
    }

    /// Parameters belonging to one module decoder.
    pub fn module_params(&self, module: Module) -> Vec<ParamId> {
        let mut v = self
            .decoders
            .get(&module)
            .map(DecoderParams::param_ids)
            .unwrap_or_default();
        if module == Module::Nlg {
            if let Some(p) = self.act_proj {
                v.push(p.weight);
                v.extend(p.bias);
            }
        }
        v
    }

    /// Runs every present decoder for one turn on `tape`.
    ///
    /// With `rng` set, dropout is active. Teacher targets force the matching
    /// decoders; others free-run. A target for an absent module is an error.
    pub fn forward_turn<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        vocab: &Vocab,
        kb: &KnowledgeBase,
        input: &TurnInput,
        teacher: &TurnTeacher<'_>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TurnOutput> {
        if vocab.len() != self.config.vocab_size {
            return Err(MossError::contract(format!(
                "vocabulary has {} entries, network expects {}",
                vocab.len(),
                self.config.vocab_size
            )));
        }
        if let Some(&m) = Module::ALL
            .iter()
            .find(|&&m| teacher.get(m).is_some() && !self.config.has(m))
        {
            return Err(MossError::contract(format!(
                "teacher given for absent module {m}"
            )));
        }
        let mut ids = [&input.b, &input.r, &input.u].map(|seq| vocab.encode_all(seq));
        if let Some(rng) = rng.as_deref_mut() {
            let p = self.config.word_dropout;
            if p > 0.0 {
                for id in ids.iter_mut().flatten() {
                    if *id >= RESERVED.len() && rng.gen_bool(p) {
                        *id = UNK;
                    }
                }
            }
        }
        let (b, r, u, h_e) =
            self.encoder
                .encode_ids(tape, self.embedding, &ids[0], &ids[1], &ids[2])?;
        let seg = |states, tokens: &Tokens| Segment {
            states,
            tokens: tokens.clone(),
        };
        let enc = EncoderStates {
            b: seg(b, &input.b),
            r: seg(r, &input.r),
            u: seg(u, &input.u),
            h_e,
        };
        let mut env = DecodeEnv {
            vocab,
            embedding: self.embedding,
            dropout: self.config.dropout,
            rng,
        };
        let mut results: BTreeMap<Module, DecodeResult> = BTreeMap::new();
        let mut segments: BTreeMap<Module, Segment> = BTreeMap::new();
        let mut k = MatchDegree::from_count(0, self.config.kb_dim);

        for w in self.wiring() {
            if w.module == Module::Dpl || (w.module == Module::Nlg && !self.config.has_dpl) {
                let state = results[&Module::Dst].content();
                let (_, degree) = kb.query(&state_to_query(&state, kb), self.config.kb_dim)?;
                k = degree;
            }
            let mut memory = Vec::with_capacity(w.memory.len());
            for src in &w.memory {
                let seg = match src {
                    MemorySource::Belief => enc.b.clone(),
                    MemorySource::Response => enc.r.clone(),
                    MemorySource::User => enc.u.clone(),
                    MemorySource::Hidden(m) => segments[m].clone(),
                    MemorySource::Act => {
                        self.act_memory(tape, vocab, &results[&Module::Dpl], &segments, &k)?
                    }
                };
                memory.push(seg);
            }
            let h0 = match w.h0 {
                InitSource::Encoder => enc.h_e,
                InitSource::Module(m) => results[&m].last_hidden(),
            };
            let req = DecodeRequest {
                memory: &memory,
                h0,
                kb: w.kb.then_some(k),
                teacher: teacher.get(w.module),
                max_len: self.config.max_len.get(w.module),
            };
            let res = decode_module(tape, &mut env, &self.decoders[&w.module], &req)?;
            segments.insert(w.module, res.segment(tape)?);
            results.insert(w.module, res);
        }
        Ok(TurnOutput {
            encoder: enc,
            results,
            k,
        })
    }

    fn act_memory<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        vocab: &Vocab,
        dpl: &DecodeResult,
        segments: &BTreeMap<Module, Segment>,
        k: &MatchDegree,
    ) -> Result<Segment> {
        match self.act_proj {
            None => Ok(segments[&Module::Dpl].clone()),
            Some(proj) => {
                let ids: Vec<usize> = dpl
                    .tokens
                    .iter()
                    .map(|t| vocab.get(t).unwrap_or(UNK))
                    .collect();
                let table = tape.param(self.embedding);
                let e = tape.embed(table, &ids)?;
                let e = condition_embedding(tape, e, k)?;
                let p = proj.forward(tape, e)?;
                Ok(Segment {
                    states: tape.tanh(p),
                    tokens: dpl.tokens.clone(),
                })
            }
        }
    }
}
