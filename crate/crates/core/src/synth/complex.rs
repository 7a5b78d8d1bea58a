//! Troubleshooting-shaped task: collect the setup, diagnose the router
//! light, then prescribe one of four fixes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::schema::{owned, template_map, SlotSpec, TaskSchema};
use super::Script;
use crate::corpus::{Dialog, Goal};
use crate::error::{MossError, Result};
use crate::kb::{Entity, KnowledgeBase};

pub const DEVICES: [&str; 4] = ["laptop", "desktop", "phone", "tablet"];
pub const SYMPTOMS: [&str; 4] = ["slow", "dropping", "offline", "nowifi"];
pub const CONNECTIONS: [&str; 3] = ["wired", "wireless", "hotspot"];
pub const STATUSES: [&str; 3] = ["green", "red", "blinking"];
pub const SOLUTIONS: [&str; 4] = [
    "solve_restart_router",
    "solve_reset_adapter",
    "solve_update_driver",
    "solve_reset_winsock",
];

/// The fix for a router light and symptom.
pub fn solution(status: &str, symptom: &str) -> &'static str {
    match (status, symptom) {
        ("red", _) => "solve_restart_router",
        ("blinking", _) => "solve_reset_adapter",
        (_, "slow" | "dropping") => "solve_update_driver",
        _ => "solve_reset_winsock",
    }
}

pub fn schema() -> TaskSchema {
    let slot = |name: &str, values: &[&str]| SlotSpec {
        name: name.into(),
        values: owned(values),
    };
    let asks = ["ask_device", "ask_symptom", "ask_connection"];
    let diagnoses = ["diagnose_light", "diagnose_cable"];
    let mut transitions = BTreeMap::new();
    let after_ask: Vec<String> = asks
        .iter()
        .chain(&diagnoses)
        .map(|s| s.to_string())
        .collect();
    transitions.insert("greet".to_string(), after_ask.clone());
    for a in asks {
        transitions.insert(a.to_string(), after_ask.clone());
    }
    for d in diagnoses {
        transitions.insert(d.to_string(), owned(&SOLUTIONS));
    }
    for s in SOLUTIONS {
        transitions.insert(s.to_string(), owned(&["remind_steps", "goodbye"]));
    }
    transitions.insert("remind_steps".into(), owned(&["goodbye"]));
    let mut system_acts = owned(&["greet"]);
    system_acts.extend(owned(&asks));
    system_acts.extend(owned(&diagnoses));
    system_acts.extend(owned(&SOLUTIONS));
    system_acts.extend(owned(&["remind_steps", "goodbye"]));
    TaskSchema {
        task: "complex".into(),
        informable: vec![
            slot("device", &DEVICES),
            slot("symptom", &SYMPTOMS),
            slot("connection", &CONNECTIONS),
            slot("status", &STATUSES),
        ],
        requestable: Vec::new(),
        user_intents: owned(&["hello", "inform", "report_status", "ask_howto", "thank_bye"]),
        system_acts,
        solution_acts: owned(&SOLUTIONS),
        transitions,
        templates: template_map(&[
            ("greet", &["hello , what seems to be the problem ?", "hi , how can i help you today ?"]),
            ("ask_device", &["which device are you using ?", "what kind of device is it ?"]),
            ("ask_symptom", &["what exactly is wrong with the internet ?", "can you describe the problem ?"]),
            ("ask_connection", &["how is the device connected ?", "what type of connection do you use ?"]),
            (
                "diagnose_light",
                &["what color is the light on the router ?", "please look at the router , which light is on ?"],
            ),
            (
                "diagnose_cable",
                &[
                    "please check the cable and tell me the router light color",
                    "is the cable plugged in ? what light does the router show ?",
                ],
            ),
            (
                "solve_restart_router",
                &[
                    "please unplug the router , wait thirty seconds , plug it back in and wait for the lights to settle",
                    "turn the router off at the switch , wait a moment , then turn it on again and reconnect",
                ],
            ),
            (
                "solve_reset_adapter",
                &[
                    "open the network settings , disable the network adapter , wait a few seconds and enable it again",
                    "go to the device manager , right click the network adapter , choose disable and then enable",
                ],
            ),
            (
                "solve_update_driver",
                &[
                    "open the device manager , find the network adapter , choose update driver and restart the computer",
                    "download the latest network driver from the vendor website , install it and restart the device",
                ],
            ),
            (
                "solve_reset_winsock",
                &[
                    "open a command prompt as administrator , type netsh winsock reset and restart the computer",
                    "run the command netsh winsock reset in an administrator prompt , then reboot the device",
                ],
            ),
            (
                "remind_steps",
                &["just follow the steps i described", "do it step by step as i said"],
            ),
            ("goodbye", &["glad i could help , goodbye", "you are welcome , bye"]),
        ]),
        user_templates: template_map(&[
            ("hello", &["hello", "hi there"]),
            ("inform", &["my internet has a problem {slots}", "i need help {slots}"]),
            ("inform_answer", &["{slots}", "it is {slots}"]),
            ("report_status", &["the light is {}", "the router shows {}"]),
            ("ask_howto", &["how do i do that ?", "can you explain how ?"]),
            ("thank_bye", &["thanks , it works now", "great , thank you bye"]),
            ("slot.device", &["on my {}", "using a {}"]),
            ("slot.symptom", &["the connection is {}", "my internet is {}"]),
            ("slot.connection", &["over a {} link", "with a {} connection"]),
        ]),
    }
}

/// Every device/symptom/connection/status combination with its fix.
pub fn knowledge_base() -> Result<KnowledgeBase> {
    let mut entities = Vec::new();
    for d in DEVICES {
        for s in SYMPTOMS {
            for c in CONNECTIONS {
                for st in STATUSES {
                    let mut e = Entity::new();
                    e.insert("name".into(), format!("case_{}", entities.len()));
                    e.insert("device".into(), d.into());
                    e.insert("symptom".into(), s.into());
                    e.insert("connection".into(), c.into());
                    e.insert("status".into(), st.into());
                    e.insert("solution".into(), solution(st, s).into());
                    entities.push(e);
                }
            }
        }
    }
    KnowledgeBase::new(
        owned(&["device", "symptom", "connection", "status"]),
        Vec::new(),
        entities,
    )
}

pub(super) fn dialog(
    schema: &TaskSchema,
    kb: &KnowledgeBase,
    rng: &mut ChaCha8Rng,
    id: String,
    max_turns: usize,
) -> Result<Dialog> {
    let ents = kb.entities();
    if ents.is_empty() {
        return Err(MossError::contract(
            "complex task needs a non-empty knowledge base",
        ));
    }
    let entity = &ents[rng.gen_range(0..ents.len())];
    let slots = schema.slot_names();
    let fix = entity
        .get("solution")
        .cloned()
        .ok_or_else(|| MossError::contract("complex-task entity lacks a solution"))?;
    let goal = Goal {
        constraints: slots
            .iter()
            .map(|s| (s.clone(), entity[s].clone()))
            .collect(),
        requests: Vec::new(),
        solution: Some(fix.clone()),
    };
    let setup = &slots[..3];
    let mut script = Script::new(schema, &slots);

    if rng.gen_bool(0.4) {
        let user = schema.user_utterance("hello", &[], &[], rng)?;
        script.turn(user, owned(&["hello"]), owned(&["greet"]), rng)?;
    }
    let k = rng.gen_range(1..=2);
    let mut reveal: Vec<String> = setup.choose_multiple(rng, k).cloned().collect();
    reveal.sort_by_key(|s| slots.iter().position(|x| x == s));
    let mut first = true;
    while !reveal.is_empty() {
        let pairs: Vec<(String, String)> = reveal
            .iter()
            .map(|s| (s.clone(), entity[s].clone()))
            .collect();
        let intent = if first { "inform" } else { "inform_answer" };
        let user = schema.user_utterance(intent, &pairs, &[], rng)?;
        script.inform(&pairs);
        first = false;
        let known = script.constraints();
        let act = match setup.iter().find(|s| !known.contains_key(*s)) {
            Some(next) => {
                reveal = vec![next.clone()];
                format!("ask_{next}")
            }
            None => {
                reveal.clear();
                if entity["connection"] == "wired" {
                    "diagnose_cable".into()
                } else {
                    "diagnose_light".into()
                }
            }
        };
        let m = std::iter::once("inform".to_string())
            .chain(pairs.into_iter().map(|(_, v)| v))
            .collect();
        script.turn(user, m, vec![act], rng)?;
    }

    let status = entity["status"].clone();
    let user = schema.user_utterance("report_status", &[], &[], rng)?;
    let user = user
        .into_iter()
        .map(|t| if t == "{}" { status.clone() } else { t })
        .collect();
    script.inform(&[("status".to_string(), status.clone())]);
    let (matches, _) = kb.query(&script.constraints(), crate::kb::DEFAULT_KB_DIM)?;
    if matches.len() != 1 {
        return Err(MossError::contract(
            "complete troubleshooting state must match one case",
        ));
    }
    script.turn(user, vec!["report_status".into(), status], vec![fix], rng)?;

    if rng.gen_bool(0.5) {
        let user = schema.user_utterance("ask_howto", &[], &[], rng)?;
        script.turn(user, owned(&["ask_howto"]), owned(&["remind_steps"]), rng)?;
    }
    let user = schema.user_utterance("thank_bye", &[], &[], rng)?;
    script.turn(user, owned(&["thank_bye"]), owned(&["goodbye"]), rng)?;
    Ok(script.finish(id, goal, max_turns))
}
