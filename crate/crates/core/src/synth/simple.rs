//! Restaurant-search-shaped task: narrow down a restaurant, then ask
//! for its details.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::schema::{owned, template_map, SlotSpec, TaskSchema};
use super::Script;
use crate::corpus::{Dialog, Goal};
use crate::error::{MossError, Result};
use crate::kb::{Entity, KnowledgeBase, Query, DEFAULT_KB_DIM};

pub const FOODS: [&str; 6] = ["thai", "chinese", "italian", "indian", "mexican", "french"];
pub const AREAS: [&str; 5] = ["north", "south", "east", "west", "centre"];
pub const PRICES: [&str; 3] = ["cheap", "moderate", "expensive"];
pub const REQUESTABLE: [&str; 4] = ["address", "phone", "postcode", "rating"];
pub const KB_SIZE: usize = 30;

pub fn schema() -> TaskSchema {
    let slot = |name: &str, values: &[&str]| SlotSpec {
        name: name.into(),
        values: owned(values),
    };
    let mut transitions = std::collections::BTreeMap::new();
    for ask in ["ask_food", "ask_area", "ask_price"] {
        transitions.insert(
            ask.to_string(),
            owned(&["ask_food", "ask_area", "ask_price", "offer"]),
        );
    }
    transitions.insert("offer".into(), owned(&["inform", "bye"]));
    transitions.insert("inform".into(), owned(&["inform", "bye"]));
    TaskSchema {
        task: "simple".into(),
        informable: vec![
            slot("food", &FOODS),
            slot("area", &AREAS),
            slot("price", &PRICES),
        ],
        requestable: owned(&REQUESTABLE),
        user_intents: owned(&["inform", "request", "bye"]),
        system_acts: owned(&[
            "ask_food",
            "ask_area",
            "ask_price",
            "offer",
            "inform",
            "bye",
        ]),
        solution_acts: Vec::new(),
        transitions,
        templates: template_map(&[
            (
                "ask_food",
                &[
                    "what kind of food would you like ?",
                    "which cuisine do you want ?",
                ],
            ),
            (
                "ask_area",
                &[
                    "which area do you prefer ?",
                    "what part of town do you have in mind ?",
                ],
            ),
            (
                "ask_price",
                &[
                    "what price range are you looking for ?",
                    "how much would you like to spend ?",
                ],
            ),
            (
                "offer",
                &[
                    "<name> is a nice <food> restaurant in the <area>",
                    "how about <name> ? it serves <food> food at a <price> price",
                ],
            ),
            ("inform.address", &["the address is <address>"]),
            ("inform.phone", &["the phone number is <phone>"]),
            ("inform.postcode", &["the postcode is <postcode>"]),
            ("inform.rating", &["the rating is <rating>"]),
            (
                "bye",
                &["goodbye and enjoy your meal", "you are welcome , goodbye"],
            ),
        ]),
        user_templates: template_map(&[
            (
                "inform",
                &[
                    "i want a restaurant {slots}",
                    "i am looking for a place {slots}",
                    "{slots} please",
                ],
            ),
            (
                "inform_answer",
                &["{slots}", "i would like something {slots}"],
            ),
            (
                "request",
                &["what is the {args} ?", "can you tell me the {args} ?"],
            ),
            ("bye", &["thank you goodbye", "thanks , bye"]),
            ("slot.food", &["serving {} food", "with {} food"]),
            ("slot.area", &["in the {}", "in the {} area"]),
            ("slot.price", &["that is {}", "in the {} price range"]),
        ]),
    }
}

/// Thirty restaurants with distinct (food, area, price) combinations.
pub fn knowledge_base(rng: &mut ChaCha8Rng) -> Result<KnowledgeBase> {
    let mut combos = Vec::new();
    for f in FOODS {
        for a in AREAS {
            for p in PRICES {
                combos.push((f, a, p));
            }
        }
    }
    combos.shuffle(rng);
    let entities: Vec<Entity> = combos
        .into_iter()
        .take(KB_SIZE)
        .enumerate()
        .map(|(i, (f, a, p))| {
            let mut e = Entity::new();
            e.insert("name".into(), format!("restaurant_{i}"));
            e.insert("food".into(), f.into());
            e.insert("area".into(), a.into());
            e.insert("price".into(), p.into());
            e.insert(
                "address".into(),
                format!("{} street {i}", ["mill", "regent", "hills"][i % 3]),
            );
            e.insert("phone".into(), format!("01223 {:06}", 350_000 + i * 37));
            e.insert("postcode".into(), format!("cb{}", 1 + i % 5));
            e.insert("rating".into(), format!("{}", 1 + i % 5));
            e
        })
        .collect();
    KnowledgeBase::new(
        owned(&["food", "area", "price"]),
        owned(&REQUESTABLE),
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
            "simple task needs a non-empty knowledge base",
        ));
    }
    let entity = &ents[rng.gen_range(0..ents.len())];
    let slots = schema.slot_names();
    let k = rng.gen_range(1..=2);
    let mut requests: Vec<String> = owned(&REQUESTABLE)
        .choose_multiple(rng, k)
        .cloned()
        .collect();
    requests.sort_by_key(|r| REQUESTABLE.iter().position(|x| x == r));
    let goal = Goal {
        constraints: slots
            .iter()
            .map(|s| (s.clone(), entity[s].clone()))
            .collect(),
        requests: requests.clone(),
        solution: None,
    };

    let mut script = Script::new(schema, &slots);
    let k = rng.gen_range(1..=2);
    let mut reveal: Vec<String> = slots.choose_multiple(rng, k).cloned().collect();
    reveal.sort_by_key(|s| slots.iter().position(|x| x == s));
    let mut first = true;
    loop {
        let pairs: Vec<(String, String)> = reveal
            .iter()
            .map(|s| (s.clone(), entity[s].clone()))
            .collect();
        let intent = if first { "inform" } else { "inform_answer" };
        let user = schema.user_utterance(intent, &pairs, &[], rng)?;
        script.inform(&pairs);
        first = false;
        let q: Query = script.constraints();
        let (matches, _) = kb.query(&q, DEFAULT_KB_DIM)?;
        let missing: Vec<&String> = slots.iter().filter(|s| !q.contains_key(*s)).collect();
        let act = if matches.len() > 1 && !missing.is_empty() {
            let next = missing[0].clone();
            reveal = vec![next.clone()];
            vec![format!("ask_{next}")]
        } else {
            reveal.clear();
            owned(&["offer"])
        };
        let m = std::iter::once("inform".to_string())
            .chain(pairs.into_iter().map(|(_, v)| v))
            .collect();
        script.turn(user, m, act, rng)?;
        if reveal.is_empty() {
            break;
        }
    }
    let user = schema.user_utterance("request", &[], &requests, rng)?;
    script.request(&requests);
    let m = std::iter::once("request".to_string())
        .chain(requests.iter().cloned())
        .collect();
    let a = std::iter::once("inform".to_string())
        .chain(requests.iter().cloned())
        .collect();
    script.turn(user, m, a, rng)?;

    let user = schema.user_utterance("bye", &[], &[], rng)?;
    script.turn(user, owned(&["bye"]), owned(&["bye"]), rng)?;
    Ok(script.finish(id, goal, max_turns))
}
