use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Tokens};
use crate::error::{MossError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub values: Vec<String>,
}

/// Slots, acts and surface templates of a synthetic task.
///
/// System templates are keyed by act, or by `act.arg` for acts that take
/// slot arguments. User templates are keyed by intent, with `{slots}`
/// standing for the joined slot phrases, and by `slot.<name>` for phrases
/// where `{}` is the value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub task: String,
    pub informable: Vec<SlotSpec>,
    pub requestable: Vec<String>,
    pub user_intents: Vec<String>,
    pub system_acts: Vec<String>,
    pub solution_acts: Vec<String>,
    /// Acts that may follow each act.
    pub transitions: BTreeMap<String, Vec<String>>,
    pub templates: BTreeMap<String, Vec<String>>,
    pub user_templates: BTreeMap<String, Vec<String>>,
}

impl TaskSchema {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.informable.iter().find(|s| s.values.is_empty()) {
            return Err(MossError::contract(format!(
                "slot `{}` has no values",
                s.name
            )));
        }
        if let Some(a) = self
            .solution_acts
            .iter()
            .find(|a| !self.system_acts.contains(a))
        {
            return Err(MossError::contract(format!(
                "solution act `{a}` is not a system act"
            )));
        }
        for act in &self.system_acts {
            let prefix = format!("{act}.");
            if !self.templates.contains_key(act)
                && !self.templates.keys().any(|k| k.starts_with(&prefix))
            {
                return Err(MossError::contract(format!(
                    "system act `{act}` has no template"
                )));
            }
        }
        for intent in &self.user_intents {
            if !self.user_templates.contains_key(intent) {
                return Err(MossError::contract(format!(
                    "user intent `{intent}` has no template"
                )));
            }
        }
        let mut seen = HashSet::new();
        for (key, variants) in &self.templates {
            if variants.is_empty() {
                return Err(MossError::contract(format!(
                    "template `{key}` has no variants"
                )));
            }
            if let Some(dup) = variants.iter().find(|v| !seen.insert(v.as_str())) {
                return Err(MossError::contract(format!(
                    "template `{dup}` is used twice"
                )));
            }
        }
        Ok(())
    }

    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.informable.iter().find(|s| s.name == name)
    }

    pub fn slot_names(&self) -> Vec<String> {
        self.informable.iter().map(|s| s.name.clone()).collect()
    }

    /// Intent and act tokens; everything else in M or A is a slot token.
    pub fn act_tokens(&self) -> HashSet<String> {
        self.user_intents
            .iter()
            .chain(&self.system_acts)
            .cloned()
            .collect()
    }

    /// Splits an act sequence into template keys.
    pub fn act_units(&self, acts: &[String]) -> Vec<String> {
        let mut units = Vec::new();
        let mut current: Option<&str> = None;
        let mut had_arg = false;
        for tok in acts {
            if self.system_acts.contains(tok) {
                if let (Some(act), false) = (current, had_arg) {
                    units.push(act.to_string());
                }
                current = Some(tok);
                had_arg = false;
            } else if let Some(act) = current {
                units.push(format!("{act}.{tok}"));
                had_arg = true;
            }
        }
        if let (Some(act), false) = (current, had_arg) {
            units.push(act.to_string());
        }
        units
    }

    /// Realises an act sequence with randomly chosen template variants.
    pub fn realize<R: Rng>(&self, acts: &[String], rng: &mut R) -> Result<Tokens> {
        let mut out = Tokens::new();
        for (i, unit) in self.act_units(acts).iter().enumerate() {
            let variants = self
                .templates
                .get(unit)
                .ok_or_else(|| MossError::contract(format!("no template for `{unit}`")))?;
            if i > 0 {
                out.push("and".into());
            }
            out.extend(tokenize(variants.choose(rng).expect("validated non-empty")));
        }
        Ok(out)
    }

    /// Recovers the act sequence realised by a response: greedy longest
    /// template match, skipping tokens no template covers.
    pub fn invert(&self, response: &[String]) -> Tokens {
        let candidates: Vec<(&str, Tokens)> = self
            .templates
            .iter()
            .flat_map(|(k, vs)| vs.iter().map(move |v| (k.as_str(), tokenize(v))))
            .collect();
        let mut keys: Vec<&str> = Vec::new();
        let mut pos = 0;
        while pos < response.len() {
            let best = candidates
                .iter()
                .filter(|(_, t)| response[pos..].starts_with(t))
                .max_by_key(|(_, t)| t.len());
            match best {
                Some((k, t)) => {
                    keys.push(k);
                    pos += t.len();
                }
                None => pos += 1,
            }
        }
        let mut acts = Tokens::new();
        let mut last_act: Option<&str> = None;
        for key in keys {
            let (act, arg) = match key.split_once('.') {
                Some((a, b)) => (a, Some(b)),
                None => (key, None),
            };
            if last_act != Some(act) || arg.is_none() {
                acts.push(act.to_string());
            }
            if let Some(arg) = arg {
                acts.push(arg.to_string());
            }
            last_act = Some(act);
        }
        acts
    }

    /// A user utterance for `intent`. `slots` are (slot, value) pairs; `args`
    /// fill `{args}` (e.g. requested slot names).
    pub fn user_utterance<R: Rng>(
        &self,
        intent: &str,
        slots: &[(String, String)],
        args: &[String],
        rng: &mut R,
    ) -> Result<Tokens> {
        let variants = self
            .user_templates
            .get(intent)
            .ok_or_else(|| MossError::contract(format!("no user template for `{intent}`")))?;
        let mut phrases = Vec::with_capacity(slots.len());
        for (slot, value) in slots {
            let key = format!("slot.{slot}");
            let pv = self
                .user_templates
                .get(&key)
                .ok_or_else(|| MossError::contract(format!("no phrase for slot `{slot}`")))?;
            phrases.push(pv.choose(rng).expect("non-empty").replace("{}", value));
        }
        let text = variants
            .choose(rng)
            .expect("validated non-empty")
            .replace("{slots}", &phrases.join(" and "))
            .replace("{args}", &args.join(" and "));
        Ok(tokenize(&text))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| MossError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MossError::io(path, e))?;
        let s: TaskSchema = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }
}

pub(crate) fn owned(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub(crate) fn template_map(items: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
    items
        .iter()
        .map(|(k, v)| (k.to_string(), owned(v)))
        .collect()
}
