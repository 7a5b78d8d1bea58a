use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{reserved, EOS_A, EOS_S, GO, SEP_REQ};
use crate::error::{MossError, Result};

pub type Tokens = Vec<String>;

pub fn tokenize(s: &str) -> Tokens {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn join(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Which module annotations a turn carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub nlu: bool,
    pub dst: bool,
    pub dpl: bool,
    pub nlg: bool,
}

impl Mask {
    pub const ALL: Mask = Mask {
        nlu: true,
        dst: true,
        dpl: true,
        nlg: true,
    };
    pub const NLG_ONLY: Mask = Mask {
        nlu: false,
        dst: false,
        dpl: false,
        nlg: true,
    };

    pub fn get(&self, module: Module) -> bool {
        match module {
            Module::Nlu => self.nlu,
            Module::Dst => self.dst,
            Module::Dpl => self.dpl,
            Module::Nlg => self.nlg,
        }
    }

    pub fn set(&mut self, module: Module, on: bool) {
        match module {
            Module::Nlu => self.nlu = on,
            Module::Dst => self.dst = on,
            Module::Dpl => self.dpl = on,
            Module::Nlg => self.nlg = on,
        }
    }
}

/// The four dialog modules, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Module {
    Nlu,
    Dst,
    Dpl,
    Nlg,
}

impl Module {
    pub const ALL: [Module; 4] = [Module::Nlu, Module::Dst, Module::Dpl, Module::Nlg];

    pub fn name(self) -> &'static str {
        match self {
            Module::Nlu => "nlu",
            Module::Dst => "dst",
            Module::Dpl => "dpl",
            Module::Nlg => "nlg",
        }
    }

    /// Module-specific end-of-sequence token id.
    pub fn eos(self) -> usize {
        match self {
            Module::Nlu => super::vocab::EOS_M,
            Module::Dst => super::vocab::EOS_S,
            Module::Dpl => super::vocab::EOS_A,
            Module::Nlg => super::vocab::EOS_R,
        }
    }
}

impl std::fmt::Display for Module {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Goal {
    pub constraints: BTreeMap<String, String>,
    pub requests: Vec<String>,
    pub solution: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogTurn {
    pub user: Tokens,
    pub m: Option<Tokens>,
    pub s: Option<Tokens>,
    pub a: Option<Tokens>,
    pub resp: Option<Tokens>,
    pub mask: Mask,
}

impl DialogTurn {
    pub fn field(&self, module: Module) -> Option<&Tokens> {
        match module {
            Module::Nlu => self.m.as_ref(),
            Module::Dst => self.s.as_ref(),
            Module::Dpl => self.a.as_ref(),
            Module::Nlg => self.resp.as_ref(),
        }
    }

    /// Gold target for `module` when the turn is annotated for it.
    pub fn target(&self, module: Module) -> Option<&Tokens> {
        if self.mask.get(module) {
            self.field(module)
        } else {
            None
        }
    }

    pub fn all_tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.user
            .iter()
            .chain(self.m.iter().flatten())
            .chain(self.s.iter().flatten())
            .chain(self.a.iter().flatten())
            .chain(self.resp.iter().flatten())
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialog {
    pub dialog_id: String,
    pub goal: Option<Goal>,
    pub turns: Vec<DialogTurn>,
}

/// Splits a dialog state into its constraint and request segments.
pub fn split_state(s: &[String]) -> (&[String], &[String]) {
    let sep = reserved(SEP_REQ);
    match s.iter().position(|t| t == sep) {
        Some(i) => (&s[..i], &s[i + 1..]),
        None => (s, &[]),
    }
}

/// Builds a dialog state token sequence: constraints, `SEP_REQ`, requests.
pub fn make_state<S: AsRef<str>>(constraints: &[S], requests: &[S]) -> Tokens {
    let mut out: Tokens = constraints.iter().map(|s| s.as_ref().to_string()).collect();
    out.push(reserved(SEP_REQ).to_string());
    out.extend(requests.iter().map(|s| s.as_ref().to_string()));
    out
}

/// State summary `B_t = [S_t ; A_t]`, each part closed by its module EOS.
/// With neither part available this is the turn-0 sentinel `[GO]`.
pub fn state_summary(s: Option<&[String]>, a: Option<&[String]>) -> Tokens {
    if s.is_none() && a.is_none() {
        return vec![reserved(GO).to_string()];
    }
    let mut out = Tokens::new();
    if let Some(s) = s {
        out.extend(s.iter().cloned());
        out.push(reserved(EOS_S).to_string());
    }
    if let Some(a) = a {
        out.extend(a.iter().cloned());
        out.push(reserved(EOS_A).to_string());
    }
    out
}

/// Module outputs produced by a model for one turn.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TurnPrediction {
    pub m: Option<Tokens>,
    pub s: Option<Tokens>,
    pub a: Option<Tokens>,
    pub r: Option<Tokens>,
}

impl TurnPrediction {
    pub fn get(&self, module: Module) -> Option<&Tokens> {
        match module {
            Module::Nlu => self.m.as_ref(),
            Module::Dst => self.s.as_ref(),
            Module::Dpl => self.a.as_ref(),
            Module::Nlg => self.r.as_ref(),
        }
    }
}

/// Where previous-turn context comes from.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    /// Gold annotations of the previous turn.
    Gold,
    /// The model's own previous-turn outputs (evaluation condition).
    Predicted(&'a [TurnPrediction]),
    /// Gold where annotated, the model's output otherwise (training).
    Mixed(&'a [TurnPrediction]),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnInput {
    pub b: Tokens,
    pub r: Tokens,
    pub u: Tokens,
}

/// Inputs `(B_{t-1}, R_{t-1}, U_t)` for turn `t` (1-based). `include_act`
/// controls whether `A_{t-1}` enters the state summary.
pub fn make_turn_input(
    dialog: &Dialog,
    t: usize,
    source: Source<'_>,
    include_act: bool,
) -> Result<TurnInput> {
    if t == 0 || t > dialog.turns.len() {
        return Err(MossError::Index {
            index: t,
            len: dialog.turns.len(),
        });
    }
    let u = dialog.turns[t - 1].user.clone();
    if t == 1 {
        return Ok(TurnInput {
            b: vec![reserved(GO).to_string()],
            r: vec![reserved(GO).to_string()],
            u,
        });
    }
    let gold = &dialog.turns[t - 2];
    let pred = |preds: &'_ [TurnPrediction]| -> Result<TurnPrediction> {
        preds
            .get(t - 2)
            .cloned()
            .ok_or_else(|| MossError::contract(format!("no prediction for turn {}", t - 1)))
    };
    let (s, a, r) = match source {
        Source::Gold => (gold.s.clone(), gold.a.clone(), gold.resp.clone()),
        Source::Predicted(p) => {
            let p = pred(p)?;
            (p.s, p.a, p.r)
        }
        Source::Mixed(p) => {
            let p = pred(p)?;
            (
                gold.target(Module::Dst).cloned().or(p.s),
                gold.target(Module::Dpl).cloned().or(p.a),
                gold.target(Module::Nlg).cloned().or(p.r),
            )
        }
    };
    let a = if include_act { a } else { None };
    Ok(TurnInput {
        b: state_summary(s.as_deref(), a.as_deref()),
        r: r.unwrap_or_else(|| vec![reserved(GO).to_string()]),
        u,
    })
}

// ---- JSON lines ----

#[derive(Debug, Serialize, Deserialize)]
struct RawTurn {
    user: String,
    m: Option<String>,
    s: Option<String>,
    a: Option<String>,
    resp: Option<String>,
    mask: Mask,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDialog {
    dialog_id: String,
    goal: Option<Goal>,
    turns: Vec<RawTurn>,
}

impl Dialog {
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        if self.turns.is_empty() {
            return Err(("turns".into(), "dialog has no turns".into()));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            for module in Module::ALL {
                if turn.mask.get(module) && turn.field(module).is_none() {
                    let field = match module {
                        Module::Nlu => "m",
                        Module::Dst => "s",
                        Module::Dpl => "a",
                        Module::Nlg => "resp",
                    };
                    return Err((
                        format!("turns[{i}].{field}"),
                        format!("mask.{} is true but the field is absent", module.name()),
                    ));
                }
            }
            if let Some(s) = &turn.s {
                let (cons, _) = split_state(s);
                let mut seen = std::collections::HashSet::new();
                if let Some(dup) = cons.iter().find(|c| !seen.insert(c.as_str())) {
                    return Err((
                        format!("turns[{i}].s"),
                        format!("duplicate constraint `{dup}`"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> Result<String> {
        let raw = RawDialog {
            dialog_id: self.dialog_id.clone(),
            goal: self.goal.clone(),
            turns: self
                .turns
                .iter()
                .map(|t| RawTurn {
                    user: join(&t.user),
                    m: t.m.as_deref().map(join),
                    s: t.s.as_deref().map(join),
                    a: t.a.as_deref().map(join),
                    resp: t.resp.as_deref().map(join),
                    mask: t.mask,
                })
                .collect(),
        };
        Ok(serde_json::to_string(&raw)?)
    }

    fn from_raw(raw: RawDialog) -> Dialog {
        Dialog {
            dialog_id: raw.dialog_id,
            goal: raw.goal,
            turns: raw
                .turns
                .into_iter()
                .map(|t| DialogTurn {
                    user: tokenize(&t.user),
                    m: t.m.as_deref().map(tokenize),
                    s: t.s.as_deref().map(tokenize),
                    a: t.a.as_deref().map(tokenize),
                    resp: t.resp.as_deref().map(tokenize),
                    mask: t.mask,
                })
                .collect(),
        }
    }
}

/// Parses a JSON-lines corpus. `origin` names the source in errors.
pub fn parse_corpus(text: &str, origin: &str) -> Result<Vec<Dialog>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |field: String, message: String| MossError::Parse {
            path: origin.to_string(),
            line: i + 1,
            field,
            message,
        };
        let raw: RawDialog = serde_json::from_str(line).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<json>".into());
            parse_err(field, msg)
        })?;
        let dialog = Dialog::from_raw(raw);
        dialog.validate().map_err(|(f, m)| parse_err(f, m))?;
        out.push(dialog);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Dialog>> {
    let text = fs::read_to_string(path).map_err(|e| MossError::io(path, e))?;
    parse_corpus(&text, &path.display().to_string())
}

pub fn corpus_to_string(corpus: &[Dialog]) -> Result<String> {
    let mut s = String::new();
    for d in corpus {
        s.push_str(&d.to_json_line()?);
        s.push('\n');
    }
    Ok(s)
}

pub fn save_corpus(corpus: &[Dialog], path: &Path) -> Result<()> {
    fs::write(path, corpus_to_string(corpus)?).map_err(|e| MossError::io(path, e))
}
