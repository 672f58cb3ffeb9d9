//! Question generators for the static QA environment.
//!
//! Six task types, three question patterns each. Every pattern has its own
//! vocabulary (so embeddings cluster by pattern) and a base difficulty.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{SkillDecl, TaskDecl};

const NAMES: [&str; 12] = [
    "Anne", "Tom", "Sue", "Ravi", "Lena", "Omar", "Mia", "Jonas", "Priya", "Kofi", "Elena", "Hugo",
];
const ITEMS: [&str; 8] = [
    "marbles", "stamps", "apples", "coins", "books", "pencils", "shells", "cards",
];
const CITIES: [&str; 8] = [
    "Lisbon", "Oslo", "Quito", "Hanoi", "Accra", "Perth", "Riga", "Cusco",
];
const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October",
    "November", "December",
];

pub(super) fn skills() -> Vec<SkillDecl> {
    let decl = |name: &str, pre: &[&str]| SkillDecl {
        name: name.into(),
        prerequisites: pre.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        decl("quantity_extraction", &[]),
        decl("unit_conversion", &["quantity_extraction"]),
        decl("ratio_reasoning", &["quantity_extraction"]),
        decl("multi_step_arithmetic", &["unit_conversion", "ratio_reasoning"]),
        decl("date_arithmetic", &["multi_step_arithmetic"]),
        decl("entity_comparison", &["date_arithmetic"]),
        decl("evidence_chaining", &["entity_comparison"]),
        decl("answer_verification", &["evidence_chaining"]),
    ]
}

pub(super) fn task_types() -> Vec<TaskDecl> {
    let decl = |name: &str, resolver: &str, unlock_iter: i64| TaskDecl {
        name: name.into(),
        resolver: resolver.into(),
        unlock_iter,
    };
    vec![
        decl("count_lookup", "quantity_extraction", 0),
        decl("unit_change", "unit_conversion", 0),
        decl("ratio_total", "ratio_reasoning", 0),
        decl("multi_step_total", "multi_step_arithmetic", 0),
        decl("date_gap", "date_arithmetic", 0),
        decl("entity_compare", "entity_comparison", 0),
    ]
}

pub(super) struct Generated {
    pub text: String,
    pub context: String,
    pub gold: String,
    /// Skills named in a worked decomposition; empty for one-step questions.
    pub steps: Vec<String>,
}

pub(super) struct PatternDef {
    pub task_type: &'static str,
    pub name: &'static str,
    pub difficulty: f64,
    pub generate: fn(&mut ChaCha8Rng) -> Generated,
}

fn pick(rng: &mut ChaCha8Rng, xs: &[&'static str]) -> &'static str {
    xs.choose(rng).copied().expect("non-empty list")
}

fn two_names(rng: &mut ChaCha8Rng) -> (&'static str, &'static str) {
    let a = pick(rng, &NAMES);
    loop {
        let b = pick(rng, &NAMES);
        if b != a {
            return (a, b);
        }
    }
}

fn short(text: String, gold: impl ToString) -> Generated {
    Generated {
        text,
        context: String::new(),
        gold: gold.to_string(),
        steps: Vec::new(),
    }
}

/// Padding paragraphs so long-context questions cross the length
/// threshold; facts the question needs are embedded among them.
fn long_context(rng: &mut ChaCha8Rng, facts: &[String]) -> String {
    let mut parts: Vec<String> = Vec::new();
    for _ in 0..4 {
        let city = pick(rng, &CITIES);
        let year = rng.random_range(1850..2000);
        parts.push(format!(
            "Archive note: the municipal records office of {city} catalogued its correspondence in {year}, \
             listing letters, ledgers and maps that were later moved to the regional library for safekeeping."
        ));
    }
    for (i, f) in facts.iter().enumerate() {
        let at = (i * 2 + 1).min(parts.len());
        parts.insert(at, f.clone());
    }
    parts.join(" ")
}

pub(super) fn patterns() -> Vec<PatternDef> {
    vec![
        // count_lookup
        PatternDef {
            task_type: "count_lookup",
            name: "basket_inventory",
            difficulty: 0.78,
            generate: |rng| {
                let n = pick(rng, &NAMES);
                let item = pick(rng, &ITEMS);
                let x = rng.random_range(3..40);
                let y = rng.random_range(3..40);
                short(
                    format!("{n} keeps {x} {item} in a basket and {y} {item} on a shelf. How many {item} does {n} keep in the basket?"),
                    x,
                )
            },
        },
        PatternDef {
            task_type: "count_lookup",
            name: "shelf_remaining",
            difficulty: 0.68,
            generate: |rng| {
                let n = pick(rng, &NAMES);
                let item = pick(rng, &ITEMS);
                let x = rng.random_range(20..90);
                let y = rng.random_range(1..20);
                short(
                    format!("A shelf holds {x} {item}. {n} removes {y} of them. How many {item} remain on the shelf?"),
                    x - y,
                )
            },
        },
        PatternDef {
            task_type: "count_lookup",
            name: "gift_received",
            difficulty: 0.73,
            generate: |rng| {
                let (a, b) = two_names(rng);
                let item = pick(rng, &ITEMS);
                let x = rng.random_range(2..30);
                let y = rng.random_range(2..30);
                short(
                    format!("{a} owned {x} {item} before {b} gave {a} a gift of {y} more. How many {item} does {a} own after the gift?"),
                    x + y,
                )
            },
        },
        // unit_change
        PatternDef {
            task_type: "unit_change",
            name: "meters_to_centimeters",
            difficulty: 0.73,
            generate: |rng| {
                let n = pick(rng, &NAMES);
                let m = rng.random_range(2..60);
                short(
                    format!("{n} measures a rope of {m} meters. Convert the rope length to centimeters."),
                    m * 100,
                )
            },
        },
        PatternDef {
            task_type: "unit_change",
            name: "hours_to_minutes",
            difficulty: 0.68,
            generate: |rng| {
                let n = pick(rng, &NAMES);
                let h = rng.random_range(2..30);
                let extra = rng.random_range(1..59);
                short(
                    format!("{n} practiced piano for {h} hours and {extra} minutes. Express the practice time in minutes."),
                    h * 60 + extra,
                )
            },
        },
        PatternDef {
            task_type: "unit_change",
            name: "kilograms_to_grams",
            difficulty: 0.63,
            generate: |rng| {
                let item = pick(rng, &ITEMS);
                let kg = rng.random_range(2..50);
                let g = rng.random_range(1..999);
                short(
                    format!("A crate of {item} weighs {kg} kilograms plus {g} grams on the scale. What is the weight in grams?"),
                    kg * 1000 + g,
                )
            },
        },
        // ratio_total
        PatternDef {
            task_type: "ratio_total",
            name: "times_as_many_total",
            difficulty: 0.63,
            generate: |rng| {
                let (a, b) = two_names(rng);
                let item = pick(rng, &ITEMS);
                let k = rng.random_range(2..6);
                let y = rng.random_range(2..25);
                let mut g = short(
                    format!("{a} has {k} times as many {item} as {b}. {b} has {y} {item}. How many {item} do they have altogether?"),
                    k * y + y,
                );
                g.steps = vec!["quantity_extraction".into(), "ratio_reasoning".into()];
                g
            },
        },
        PatternDef {
            task_type: "ratio_total",
            name: "half_as_many_total",
            difficulty: 0.58,
            generate: |rng| {
                let (a, b) = two_names(rng);
                let item = pick(rng, &ITEMS);
                let y = rng.random_range(2..30) * 2;
                let mut g = short(
                    format!("{a} has half as many {item} as {b}, and {b} has {y}. Find the combined total of {item} held by both."),
                    y / 2 + y,
                );
                g.steps = vec!["quantity_extraction".into(), "ratio_reasoning".into()];
                g
            },
        },
        PatternDef {
            task_type: "ratio_total",
            name: "share_split",
            difficulty: 0.68,
            generate: |rng| {
                let (a, b) = two_names(rng);
                let item = pick(rng, &ITEMS);
                let p = rng.random_range(1..5);
                let q = rng.random_range(1..5);
                let unit = rng.random_range(2..12);
                short(
                    format!("{a} and {b} split {} {item} in the ratio {p}:{q}. How large is the share of {a}?", (p + q) * unit),
                    p * unit,
                )
            },
        },
        // multi_step_total
        PatternDef {
            task_type: "multi_step_total",
            name: "shopping_change",
            difficulty: 0.58,
            generate: |rng| {
                let n = pick(rng, &NAMES);
                let item = pick(rng, &ITEMS);
                let c = rng.random_range(2..9);
                let price = rng.random_range(2..15);
                let paid = c * price + rng.random_range(1..40);
                let mut g = short(
                    format!("{n} buys {c} packs of {item} at {price} dollars each and pays with {paid} dollars. How much change does {n} get back?"),
                    paid - c * price,
                );
                g.steps = vec!["quantity_extraction".into(), "multi_step_arithmetic".into()];
                g
            },
        },
        PatternDef {
            task_type: "multi_step_total",
            name: "weekly_savings",
            difficulty: 0.63,
            generate: |rng| {
                let n = pick(rng, &NAMES);
                let start = rng.random_range(5..60);
                let weekly = rng.random_range(2..20);
                let weeks = rng.random_range(2..10);
                let spent = rng.random_range(1..start);
                let mut g = short(
                    format!("{n} starts with {start} dollars of savings, adds {weekly} dollars every week for {weeks} weeks, then spends {spent} dollars. What are the savings now?"),
                    start + weekly * weeks - spent,
                );
                g.steps = vec!["quantity_extraction".into(), "unit_conversion".into(), "multi_step_arithmetic".into()];
                g
            },
        },
        PatternDef {
            task_type: "multi_step_total",
            name: "trip_distance",
            difficulty: 0.68,
            generate: |rng| {
                let n = pick(rng, &NAMES);
                let speed = rng.random_range(30..90);
                let h1 = rng.random_range(1..5);
                let h2 = rng.random_range(1..5);
                let mut g = short(
                    format!("{n} drives at {speed} kilometers per hour for {h1} hours, rests, then drives {h2} more hours at the same speed. What distance is covered on the trip?"),
                    speed * (h1 + h2),
                );
                g.steps = vec!["unit_conversion".into(), "multi_step_arithmetic".into()];
                g
            },
        },
        // date_gap (long context)
        PatternDef {
            task_type: "date_gap",
            name: "founding_years_between",
            difficulty: 0.58,
            generate: |rng| {
                let a = pick(rng, &CITIES);
                let b = loop {
                    let b = pick(rng, &CITIES);
                    if b != a {
                        break b;
                    }
                };
                let ya = rng.random_range(1500..1800);
                let yb = ya + rng.random_range(5..200);
                let facts = [
                    format!("The university of {a} was founded in {ya} by a council of merchants."),
                    format!("The university of {b} was founded in {yb} after a royal charter."),
                ];
                Generated {
                    text: format!("How many years passed between the founding of the university of {a} and the university of {b}?"),
                    context: long_context(rng, &facts),
                    gold: (yb - ya).to_string(),
                    steps: vec!["quantity_extraction".into(), "date_arithmetic".into()],
                }
            },
        },
        PatternDef {
            task_type: "date_gap",
            name: "age_at_event",
            difficulty: 0.63,
            generate: |rng| {
                let n = pick(rng, &NAMES);
                let born = rng.random_range(1800..1950);
                let event = born + rng.random_range(15..70);
                let city = pick(rng, &CITIES);
                let facts = [
                    format!("{n} the cartographer was born in {born} in {city}."),
                    format!("In {event}, {n} published the first survey atlas of the coast."),
                ];
                Generated {
                    text: format!("How old was {n} the cartographer when the survey atlas was published?"),
                    context: long_context(rng, &facts),
                    gold: (event - born).to_string(),
                    steps: vec!["quantity_extraction".into(), "date_arithmetic".into()],
                }
            },
        },
        PatternDef {
            task_type: "date_gap",
            name: "month_span",
            difficulty: 0.68,
            generate: |rng| {
                let city = pick(rng, &CITIES);
                let m1 = rng.random_range(0..6);
                let m2 = m1 + rng.random_range(1..6);
                let facts = [
                    format!("The bridge works in {city} began in {}.", MONTHS[m1]),
                    format!("The bridge in {city} reopened to traffic in {} of the same year.", MONTHS[m2]),
                ];
                Generated {
                    text: format!("For how many months was the bridge in {city} closed for works?"),
                    context: long_context(rng, &facts),
                    gold: (m2 - m1).to_string(),
                    steps: Vec::new(),
                }
            },
        },
        // entity_compare (long context)
        PatternDef {
            task_type: "entity_compare",
            name: "earlier_birth",
            difficulty: 0.63,
            generate: |rng| {
                let (a, b) = two_names(rng);
                let ya = rng.random_range(1800..1950);
                let mut yb = rng.random_range(1800..1950);
                if yb == ya {
                    yb += 1;
                }
                let facts = [
                    format!("The composer {a} was born in {ya}."),
                    format!("The composer {b} was born in {yb}."),
                ];
                Generated {
                    text: format!("Which composer was born earlier, {a} or {b}?"),
                    context: long_context(rng, &facts),
                    gold: if ya < yb { a } else { b }.to_string(),
                    steps: vec!["date_arithmetic".into(), "entity_comparison".into()],
                }
            },
        },
        PatternDef {
            task_type: "entity_compare",
            name: "taller_tower",
            difficulty: 0.68,
            generate: |rng| {
                let a = pick(rng, &CITIES);
                let b = loop {
                    let b = pick(rng, &CITIES);
                    if b != a {
                        break b;
                    }
                };
                let ha = rng.random_range(40..300);
                let mut hb = rng.random_range(40..300);
                if hb == ha {
                    hb += 1;
                }
                let facts = [
                    format!("The clock tower of {a} rises {ha} meters above the square."),
                    format!("The clock tower of {b} rises {hb} meters above the harbour."),
                ];
                Generated {
                    text: format!("Which city has the taller clock tower, {a} or {b}?"),
                    context: long_context(rng, &facts),
                    gold: if ha > hb { a } else { b }.to_string(),
                    steps: Vec::new(),
                }
            },
        },
        PatternDef {
            task_type: "entity_compare",
            name: "same_language",
            difficulty: 0.73,
            generate: |rng| {
                let (a, b) = two_names(rng);
                let langs = ["German", "French", "Italian", "Czech"];
                let la = langs[rng.random_range(0..langs.len())];
                let lb = langs[rng.random_range(0..langs.len())];
                let facts = [
                    format!("The libretto of the opera by {a} is written in {la}."),
                    format!("The libretto of the opera by {b} is written in {lb}."),
                ];
                Generated {
                    text: format!("Are the opera libretti by {a} and {b} in the same language?"),
                    context: long_context(rng, &facts),
                    gold: if la == lb { "yes" } else { "no" }.to_string(),
                    steps: Vec::new(),
                }
            },
        },
    ]
}
