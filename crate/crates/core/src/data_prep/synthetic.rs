//! Desk-scale synthetic catalog, session logs and labelled replay set.
//!
//! Scenarios are (action, object) pairs. Utterances paraphrase both with
//! synonyms and filler. A fraction of turns are vague about the action;
//! for those the session's `order_status` attribute decides the scenario,
//! so only a model that reads the aspects can resolve them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::matcher::Attributes;
use crate::service::{ScenarioEntry, ScenarioSolutionTable};
use crate::ScenarioId;

use super::{OperationKind, SessionLogRecord, StaffOperation, TimedUtterance};

struct Action {
    name: &'static str,
    synonyms: &'static [&'static str],
    /// Order status that usually accompanies this request.
    status: &'static str,
}

const ACTIONS: &[Action] = &[
    Action { name: "return", synonyms: &["send back", "give back", "ship back"], status: "delivered" },
    Action { name: "refund", synonyms: &["money back", "reimburse", "repay"], status: "returned" },
    Action { name: "exchange", synonyms: &["swap", "replace", "trade"], status: "delivered" },
    Action { name: "track", synonyms: &["locate", "trace", "follow"], status: "shipped" },
    Action { name: "cancel", synonyms: &["call off", "stop", "abort"], status: "paid" },
    Action { name: "pay", synonyms: &["checkout", "settle", "purchase"], status: "unpaid" },
    Action { name: "invoice", synonyms: &["receipt", "bill", "tax form"], status: "paid" },
    Action { name: "warranty", synonyms: &["guarantee", "coverage", "insure"], status: "delivered" },
    Action { name: "repair", synonyms: &["fix", "mend", "restore"], status: "delivered" },
    Action { name: "complain", synonyms: &["grumble", "protest", "object"], status: "cancelled" },
];

/// Actions used for vague turns, keyed by the status that reveals them.
const VAGUE_BY_STATUS: &[(&str, &str)] =
    &[("unpaid", "pay"), ("paid", "cancel"), ("shipped", "track"), ("returned", "refund"), ("cancelled", "complain")];

struct Object {
    name: &'static str,
    synonyms: &'static [&'static str],
    domain: &'static str,
}

const OBJECTS: &[Object] = &[
    Object { name: "shoes", synonyms: &["sneakers", "boots", "trainers"], domain: "footwear" },
    Object { name: "phone", synonyms: &["smartphone", "mobile", "handset"], domain: "electronics" },
    Object { name: "laptop", synonyms: &["notebook", "computer", "ultrabook"], domain: "electronics" },
    Object { name: "jacket", synonyms: &["coat", "parka", "blazer"], domain: "apparel" },
    Object { name: "watch", synonyms: &["smartwatch", "wristwatch", "timepiece"], domain: "accessories" },
    Object { name: "headphones", synonyms: &["earphones", "earbuds", "headset"], domain: "electronics" },
    Object { name: "sofa", synonyms: &["couch", "settee", "loveseat"], domain: "home" },
    Object { name: "camera", synonyms: &["camcorder", "webcam", "dslr"], domain: "electronics" },
];

const TEMPLATES: &[&str] = &[
    "hi i want to {a} my {o}",
    "can you help me {a} the {o} i bought",
    "{a} {o} please",
    "i need to {a} this {o}",
    "hello about my {o} i would like to {a} it",
    "how do i {a} a {o}",
];

const VAGUE_TEMPLATES: &[&str] =
    &["i have a problem with my {o}", "question about the {o} order", "help with {o}", "something about my {o}"];

const FILLER: &[&str] = &["today", "asap", "thanks", "urgent", "again", "yesterday", "quickly", "kindly"];

const TIERS: &[&str] = &["bronze", "silver", "gold", "platinum"];
const REGIONS: &[&str] = &["domestic", "cross_border", "overseas", "unknown"];
const TEAMS: &[&str] = &["presales", "aftersales", "logistics", "finance"];
const STATUSES: &[&str] = &["unpaid", "paid", "shipped", "delivered", "returned", "cancelled"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Catalog size, at most 80.
    pub scenarios: usize,
    /// Organic turns for each common scenario.
    pub turns_per_scenario: usize,
    /// Scenarios given only `rare_turns` organic turns.
    pub rare_scenarios: usize,
    pub rare_turns: usize,
    /// Share of turns whose action only the order status reveals.
    pub vague_fraction: f64,
    /// Probability that `order_status` matches the action on clear turns.
    pub status_agreement: f64,
    pub replay_items: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            scenarios: 60,
            turns_per_scenario: 20,
            rare_scenarios: 2,
            rare_turns: 2,
            vague_fraction: 0.15,
            status_agreement: 0.8,
            replay_items: 1000,
        }
    }
}

/// Labelled utterance for replay evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayItem {
    pub utterance: String,
    pub scenario_id: ScenarioId,
    #[serde(default)]
    pub attributes: Attributes,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub catalog: ScenarioSolutionTable,
    pub logs: Vec<SessionLogRecord>,
    pub replay: Vec<ReplayItem>,
    /// Rare scenarios, in id order.
    pub rare: Vec<ScenarioId>,
}

impl SyntheticCorpus {
    /// Every utterance and description, for embedding and tf-idf fitting.
    pub fn texts(&self) -> Vec<String> {
        let mut out: Vec<String> = self.catalog.iter().map(|e| e.description.clone()).collect();
        out.extend(self.logs.iter().flat_map(|l| l.utterances.iter().map(|u| u.text.clone())));
        out
    }
}

fn scenario_id(a: &Action, o: &Object) -> ScenarioId {
    format!("{}_{}", a.name, o.name).into()
}

fn pick<'a, R: Rng>(canonical: &'a str, synonyms: &'a [&'a str], rng: &mut R) -> &'a str {
    if rng.gen_bool(0.3) {
        canonical
    } else {
        synonyms.choose(rng).expect("synonyms")
    }
}

struct Turn {
    scenario: ScenarioId,
    text: String,
    vague: bool,
    status: &'static str,
}

struct Generator<'c> {
    scenarios: Vec<(usize, usize)>,
    config: &'c SyntheticConfig,
}

impl Generator<'_> {
    fn turn<R: Rng>(&self, scenario: (usize, usize), rng: &mut R) -> Turn {
        let (a, o) = (&ACTIONS[scenario.0], &OBJECTS[scenario.1]);
        let vague_status = VAGUE_BY_STATUS.iter().find(|(_, act)| *act == a.name).map(|(s, _)| *s);
        let obj = pick(o.name, o.synonyms, rng);
        let (mut text, vague, status) = match vague_status {
            Some(status) if rng.gen_bool(self.config.vague_fraction) => {
                (VAGUE_TEMPLATES.choose(rng).expect("templates").replace("{o}", obj), true, status)
            }
            _ => {
                let act = pick(a.name, a.synonyms, rng);
                let t = TEMPLATES.choose(rng).expect("templates").replace("{a}", act).replace("{o}", obj);
                let status = if rng.gen_bool(self.config.status_agreement) { a.status } else { STATUSES.choose(rng).expect("statuses") };
                (t, false, status)
            }
        };
        if rng.gen_bool(0.3) {
            text.push(' ');
            text.push_str(FILLER.choose(rng).expect("filler"));
        }
        Turn { scenario: scenario_id(a, o), text, vague, status }
    }

    fn attributes<R: Rng>(&self, status: &str, rng: &mut R) -> Attributes {
        let mut a = Attributes::new();
        a.insert("customer_tier".into(), json!(TIERS.choose(rng).expect("tiers")));
        a.insert("customer_region".into(), json!(REGIONS.choose(rng).expect("regions")));
        a.insert("staff_team".into(), json!(TEAMS.choose(rng).expect("teams")));
        a.insert("order_status".into(), json!(status));
        a.insert("order_amount".into(), json!((rng.gen_range(5.0..3000.0_f64) * 100.0).round() / 100.0));
        a.insert("customer_tenure_days".into(), json!(rng.gen_range(0..3000)));
        if rng.gen_bool(0.7) {
            a.insert("past_complaints".into(), json!(rng.gen_range(0..6)));
        }
        a
    }
}

/// Builds the catalog, organic session logs and an independent replay set.
pub fn generate(config: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut all: Vec<(usize, usize)> = (0..ACTIONS.len()).flat_map(|a| (0..OBJECTS.len()).map(move |o| (a, o))).collect();
    all.shuffle(&mut rng);
    let n = config.scenarios.clamp(2, all.len());
    let scenarios: Vec<(usize, usize)> = all[..n].to_vec();
    let catalog = ScenarioSolutionTable::from_entries(scenarios.iter().map(|&(a, o)| {
        let (act, obj) = (&ACTIONS[a], &OBJECTS[o]);
        ScenarioEntry {
            scenario_id: scenario_id(act, obj),
            description: format!("customer wants to {} {}", act.name, obj.name),
            solution: format!("Guide: how staff handle a request to {} {}.", act.name, obj.name),
            domain: obj.domain.into(),
        }
    }))
    .expect("generated catalog is valid");

    let rare_count = config.rare_scenarios.min(n.saturating_sub(1));
    let mut by_id: Vec<(ScenarioId, (usize, usize))> =
        scenarios.iter().map(|&(a, o)| (scenario_id(&ACTIONS[a], &OBJECTS[o]), (a, o))).collect();
    by_id.sort_by(|x, y| x.0.cmp(&y.0));
    let mut order: Vec<usize> = (0..by_id.len()).collect();
    order.shuffle(&mut rng);
    let mut rare: Vec<ScenarioId> = order[..rare_count].iter().map(|&i| by_id[i].0.clone()).collect();
    rare.sort();

    let gen = Generator { scenarios, config };
    let mut plan: Vec<(usize, usize)> = Vec::new();
    for (id, sc) in &by_id {
        let turns = if rare.contains(id) { config.rare_turns } else { config.turns_per_scenario };
        plan.extend(std::iter::repeat_n(*sc, turns));
    }
    plan.shuffle(&mut rng);

    let mut logs = Vec::new();
    let mut rest = plan.as_slice();
    while !rest.is_empty() {
        let take = rng.gen_range(1..=3).min(rest.len());
        let (chunk, tail) = rest.split_at(take);
        rest = tail;
        let base = logs.len() as f64 * 1000.0;
        let mut ts = base;
        let mut utterances = Vec::new();
        let mut operations = Vec::new();
        if rng.gen_bool(0.03) {
            // staff browsing before the customer speaks
            let &(a, o) = gen.scenarios.choose(&mut rng).expect("scenarios");
            operations.push(StaffOperation { ts, kind: OperationKind::Click, scenario_id: scenario_id(&ACTIONS[a], &OBJECTS[o]) });
        }
        let mut status = None;
        for &sc in chunk {
            ts += rng.gen_range(5.0..40.0);
            let turn = gen.turn(sc, &mut rng);
            if status.is_none() || turn.vague {
                status = Some(turn.status);
            }
            utterances.push(TimedUtterance { ts, text: turn.text });
            ts += rng.gen_range(1.0..8.0);
            if rng.gen_bool(0.3) {
                let &(a, o) = gen.scenarios.choose(&mut rng).expect("scenarios");
                operations.push(StaffOperation { ts, kind: OperationKind::Hover, scenario_id: scenario_id(&ACTIONS[a], &OBJECTS[o]) });
                ts += 1.0;
            }
            let kind = if rng.gen_bool(0.8) { OperationKind::Click } else { OperationKind::Search };
            operations.push(StaffOperation { ts, kind, scenario_id: turn.scenario });
        }
        let attributes = gen.attributes(status.expect("at least one turn"), &mut rng);
        logs.push(SessionLogRecord { id: format!("sess-{:05}", logs.len()), utterances, operations, attributes });
    }

    let mut replay_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_1234);
    let replay = (0..config.replay_items)
        .map(|_| {
            let &sc = gen.scenarios.choose(&mut replay_rng).expect("scenarios");
            let turn = gen.turn(sc, &mut replay_rng);
            ReplayItem { utterance: turn.text, scenario_id: turn.scenario, attributes: gen.attributes(turn.status, &mut replay_rng) }
        })
        .collect();

    SyntheticCorpus { catalog, logs, replay, rare }
}
