//! The MOSS network: shared encoder, module decoders and their wiring.

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod network;

use std::fs;
use std::path::Path;

use crate::autodiff::{checkpoint, ParameterStore, Tape};
use crate::corpus::{make_turn_input, Dialog, Source, TurnInput, TurnPrediction, Vocab};
use crate::error::{MossError, Result};
use crate::kb::{KnowledgeBase, MatchDegree};

pub use config::{ActMemory, FrameworkConfig, Instance, MaxLen};
pub use decoder::{decode_module, DecodeEnv, DecodeRequest, DecodeResult, DecoderParams};
pub use encoder::{Encoder, EncoderStates, Segment};
pub use network::{
    wiring, InitSource, MemorySource, ModuleWiring, Network, TurnOutput, TurnTeacher,
};

pub const PARAMS_FILE: &str = "params.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.txt";

/// Which previous-turn context a rollout feeds forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rollout {
    Gold,
    Predicted,
}

/// What the model produced for one turn of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnRecord {
    pub input: TurnInput,
    pub prediction: TurnPrediction,
    pub k: MatchDegree,
    pub truncated: bool,
}

/// A trained (or freshly initialised) framework instance with its vocabulary.
#[derive(Debug, Clone)]
pub struct Moss {
    pub config: FrameworkConfig,
    pub vocab: Vocab,
    pub store: ParameterStore<f32>,
    pub net: Network,
}

impl Moss {
    /// Initialises parameters from `config.seed`. The vocabulary size
    /// overrides `config.vocab_size`.
    pub fn new(mut config: FrameworkConfig, vocab: Vocab) -> Result<Self> {
        config.vocab_size = vocab.len();
        let mut store = ParameterStore::new(config.seed);
        let net = Network::new(&mut store, &config)?;
        Ok(Moss {
            config,
            vocab,
            store,
            net,
        })
    }

    /// Decodes one turn without teacher forcing or dropout.
    pub fn predict_turn(&self, kb: &KnowledgeBase, input: &TurnInput) -> Result<TurnRecord> {
        let mut tape = Tape::new(&self.store);
        let out = self.net.forward_turn(
            &mut tape,
            &self.vocab,
            kb,
            input,
            &TurnTeacher::default(),
            None,
        )?;
        Ok(TurnRecord {
            input: input.clone(),
            prediction: out.prediction(),
            k: out.k,
            truncated: out.results.values().any(|r| r.truncated),
        })
    }

    /// Runs the model over every turn of `dialog`. With `Rollout::Predicted`
    /// each turn's context is built from the model's own previous outputs.
    pub fn run_dialog(
        &self,
        kb: &KnowledgeBase,
        dialog: &Dialog,
        rollout: Rollout,
    ) -> Result<Vec<TurnRecord>> {
        let mut records: Vec<TurnRecord> = Vec::with_capacity(dialog.turns.len());
        let mut preds: Vec<TurnPrediction> = Vec::with_capacity(dialog.turns.len());
        for t in 1..=dialog.turns.len() {
            let source = match rollout {
                Rollout::Gold => Source::Gold,
                Rollout::Predicted => Source::Predicted(&preds),
            };
            let input = make_turn_input(dialog, t, source, self.config.has_dpl)?;
            let rec = self.predict_turn(kb, &input)?;
            preds.push(rec.prediction.clone());
            records.push(rec);
        }
        Ok(records)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| MossError::io(dir, e))?;
        checkpoint::save(&self.store, &dir.join(PARAMS_FILE))?;
        self.config.save(&dir.join(CONFIG_FILE))?;
        self.vocab.save(&dir.join(VOCAB_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config = FrameworkConfig::load(&dir.join(CONFIG_FILE))?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        let loaded = checkpoint::load(&dir.join(PARAMS_FILE))?;
        if vocab.len() != config.vocab_size {
            return Err(MossError::contract(format!(
                "vocabulary file has {} tokens, config says {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let mut model = Moss::new(config, vocab)?;
        model.store.load_from(&loaded)?;
        Ok(model)
    }
}
