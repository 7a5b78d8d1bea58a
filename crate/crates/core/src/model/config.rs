use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Module;
use crate::error::{MossError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxLen {
    pub m: usize,
    pub s: usize,
    pub a: usize,
    pub r: usize,
}

impl Default for MaxLen {
    fn default() -> Self {
        MaxLen {
            m: 40,
            s: 40,
            a: 40,
            r: 60,
        }
    }
}

impl MaxLen {
    pub fn get(&self, module: Module) -> usize {
        match module {
            Module::Nlu => self.m,
            Module::Dst => self.s,
            Module::Dpl => self.a,
            Module::Nlg => self.r,
        }
    }
}

/// What the NLG decoder attends to for the system act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActMemory {
    /// Embedded act tokens, conditioned on the match degree and projected.
    Tokens,
    /// The DPL decoder hidden states.
    #[default]
    Hidden,
}

fn default_true() -> bool {
    true
}

/// Which modules exist and the network dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkConfig {
    pub has_nlu: bool,
    pub has_dpl: bool,
    pub d_emb: usize,
    pub d_hid: usize,
    pub vocab_size: usize,
    pub kb_dim: usize,
    pub dropout: f64,
    #[serde(default)]
    pub max_len: MaxLen,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub act_memory: ActMemory,
    #[serde(default = "default_true")]
    pub copy: bool,
    /// Training-time probability of feeding UNK to the encoder in place of
    /// a word. The surface token stays copyable.
    #[serde(default)]
    pub word_dropout: f64,
}

impl Default for FrameworkConfig {
    fn default() -> Self {
        FrameworkConfig {
            has_nlu: true,
            has_dpl: true,
            d_emb: 50,
            d_hid: 50,
            vocab_size: 800,
            kb_dim: crate::kb::DEFAULT_KB_DIM,
            dropout: 0.5,
            max_len: MaxLen::default(),
            seed: 1,
            act_memory: ActMemory::Hidden,
            copy: true,
            word_dropout: 0.0,
        }
    }
}

impl FrameworkConfig {
    pub fn for_instance(instance: Instance) -> Self {
        let mut c = FrameworkConfig::default();
        c.set_instance(instance);
        c
    }

    pub fn set_instance(&mut self, instance: Instance) {
        self.has_nlu = instance.has_nlu();
        self.has_dpl = instance.has_dpl();
    }

    pub fn instance(&self) -> Instance {
        match (self.has_nlu, self.has_dpl) {
            (true, true) => Instance::All,
            (false, true) => Instance::WoNlu,
            (true, false) => Instance::WoDpl,
            (false, false) => Instance::WoNluDpl,
        }
    }

    pub fn has(&self, module: Module) -> bool {
        match module {
            Module::Nlu => self.has_nlu,
            Module::Dpl => self.has_dpl,
            Module::Dst | Module::Nlg => true,
        }
    }

    /// Present modules in pipeline order.
    pub fn modules(&self) -> Vec<Module> {
        Module::ALL.into_iter().filter(|&m| self.has(m)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_emb == 0 || self.d_hid == 0 || self.vocab_size == 0 || self.kb_dim == 0 {
            return Err(MossError::precondition(
                "network dimensions must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.word_dropout) {
            return Err(MossError::precondition(format!(
                "word_dropout {} outside [0, 1)",
                self.word_dropout
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MossError::precondition(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        let l = self.max_len;
        if l.m == 0 || l.s == 0 || l.a == 0 || l.r == 0 {
            return Err(MossError::precondition(
                "max decode lengths must be positive",
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MossError::io(path, e))?;
        let c: FrameworkConfig = serde_json::from_str(&text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)
            .map_err(|e| MossError::io(path, e))
    }
}

/// The framework instances obtained by removing NLU and/or DPL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instance {
    All,
    WoNlu,
    WoDpl,
    WoNluDpl,
}

impl Instance {
    pub const EVERY: [Instance; 4] = [
        Instance::All,
        Instance::WoNlu,
        Instance::WoDpl,
        Instance::WoNluDpl,
    ];

    pub fn has_nlu(self) -> bool {
        matches!(self, Instance::All | Instance::WoDpl)
    }

    pub fn has_dpl(self) -> bool {
        matches!(self, Instance::All | Instance::WoNlu)
    }

    pub fn name(self) -> &'static str {
        match self {
            Instance::All => "all",
            Instance::WoNlu => "wo_nlu",
            Instance::WoDpl => "wo_dpl",
            Instance::WoNluDpl => "wo_nlu_dpl",
        }
    }
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Instance {
    type Err = MossError;

    fn from_str(s: &str) -> Result<Self> {
        Instance::EVERY
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| MossError::precondition(format!("unknown instance `{s}`")))
    }
}
