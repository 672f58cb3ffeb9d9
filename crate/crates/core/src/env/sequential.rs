//! Toy sequential environment: five achievements that unlock strictly in
//! order. Each achievement completes when its two-action combo is played
//! back to back after the previous achievement.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Question, SkillDecl, TaskDecl, HELD_OUT_PER_PATTERN, TRAIN_PER_PATTERN};
use crate::ids::stable_hash;

/// `(achievement, [setup action, finishing action])` in unlock order.
pub const ACHIEVEMENTS: [(&str, [&str; 2]); 5] = [
    ("collect_wood", ["move_forward", "chop_tree"]),
    ("make_plank", ["open_inventory", "craft_plank"]),
    ("build_table", ["move_forward", "place_table"]),
    ("craft_pickaxe", ["open_inventory", "craft_pickaxe"]),
    ("mine_stone", ["move_forward", "mine_stone"]),
];

pub const ACTIONS: [&str; 9] = [
    "move_forward",
    "turn_left",
    "open_inventory",
    "chop_tree",
    "craft_plank",
    "place_table",
    "craft_pickaxe",
    "mine_stone",
    "noop",
];

pub const DEFAULT_EPISODE_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeStep {
    pub action: String,
    /// Index into [`ACHIEVEMENTS`] unlocked by this step.
    pub unlocked: Option<usize>,
}

/// State of one running episode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Episode {
    pub steps: Vec<EpisodeStep>,
    pub achieved: usize,
}

impl Episode {
    /// Index of the next achievement, or `None` when all are done.
    pub fn next_goal(&self) -> Option<usize> {
        (self.achieved < ACHIEVEMENTS.len()).then_some(self.achieved)
    }

    pub fn recent_actions(&self, n: usize) -> Vec<String> {
        let start = self.steps.len().saturating_sub(n);
        self.steps[start..].iter().map(|s| s.action.clone()).collect()
    }

    /// Plays `action`; unknown actions count as `noop`.
    pub fn step(&mut self, action: &str) -> Option<usize> {
        let action = if ACTIONS.contains(&action) { action } else { "noop" };
        let prev = self.steps.last().map(|s| s.action.as_str());
        let unlocked = self.next_goal().filter(|&g| {
            let [setup, finish] = ACHIEVEMENTS[g].1;
            prev == Some(setup) && action == finish
        });
        if unlocked.is_some() {
            self.achieved += 1;
        }
        self.steps.push(EpisodeStep {
            action: action.to_string(),
            unlocked,
        });
        unlocked
    }

    pub fn fraction_achieved(&self) -> f64 {
        self.achieved as f64 / ACHIEVEMENTS.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainWorld {
    pub seed: u64,
    pub episode_len: usize,
}

impl ChainWorld {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            episode_len: DEFAULT_EPISODE_LEN,
        }
    }

    pub fn actions(&self) -> &'static [&'static str] {
        &ACTIONS
    }

    pub fn new_episode(&self) -> Episode {
        Episode::default()
    }
}

pub(super) fn skills() -> Vec<SkillDecl> {
    ACHIEVEMENTS
        .iter()
        .enumerate()
        .map(|(i, (name, _))| SkillDecl {
            name: name.to_string(),
            prerequisites: if i == 0 {
                Vec::new()
            } else {
                vec![ACHIEVEMENTS[i - 1].0.to_string()]
            },
        })
        .collect()
}

pub(super) fn task_types() -> Vec<TaskDecl> {
    ACHIEVEMENTS
        .iter()
        .map(|(name, _)| TaskDecl {
            name: format!("{name}_howto"),
            resolver: name.to_string(),
            unlock_iter: 0,
        })
        .collect()
}

pub(super) struct GeneratedQuestion {
    pub question: Question,
    pub pattern: String,
    pub difficulty: f64,
    pub held_out: bool,
}

const EXPLORERS: [&str; 12] = [
    "Ada", "Bo", "Cyd", "Dee", "Eli", "Fay", "Gus", "Hal", "Ivy", "Jun", "Kai", "Lux",
];
const PLACES: [&str; 10] = [
    "river bank", "pine grove", "cave mouth", "meadow", "hillside", "old camp", "lake shore", "quarry",
    "clearing", "ridge",
];

fn phrase(achievement: &str) -> String {
    achievement.replace('_', " ")
}

/// Three question patterns per achievement, each with its own phrasing.
pub(super) fn questions(seed: u64) -> Vec<GeneratedQuestion> {
    let per = TRAIN_PER_PATTERN.min(EXPLORERS.len() * PLACES.len() - HELD_OUT_PER_PATTERN);
    let mut out = Vec::new();
    for (i, (ach, [setup, finish])) in ACHIEVEMENTS.iter().enumerate() {
        let task_type = format!("{ach}_howto");
        let prereq = if i == 0 { "none" } else { ACHIEVEMENTS[i - 1].0 };
        let kinds: [(&str, f64, String); 3] = [
            ("finishing_action", 0.45, finish.to_string()),
            ("setup_action", 0.4, setup.to_string()),
            ("required_before", 0.5, prereq.to_string()),
        ];
        for (kind, difficulty, gold) in kinds {
            let mut combos: Vec<(usize, usize)> = (0..EXPLORERS.len())
                .flat_map(|a| (0..PLACES.len()).map(move |b| (a, b)))
                .collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(stable_hash(&[&seed.to_le_bytes(), ach.as_bytes(), kind.as_bytes()]));
            combos.shuffle(&mut rng);
            for (n, (a, b)) in combos.into_iter().take(per + HELD_OUT_PER_PATTERN).enumerate() {
                let (who, place) = (EXPLORERS[a], PLACES[b]);
                let what = phrase(ach);
                let text = match kind {
                    "finishing_action" => {
                        format!("Explorer {who} at the {place} is one move from {what}. Which action finishes {what}?")
                    }
                    "setup_action" => format!(
                        "Before the final move toward {what}, what setup action should explorer {who} take at the {place}?"
                    ),
                    _ => format!(
                        "Explorer {who} at the {place} asks which achievement has to be unlocked before {what}."
                    ),
                };
                out.push(GeneratedQuestion {
                    question: Question {
                        text,
                        context: String::new(),
                        task_type: task_type.clone(),
                        gold: gold.clone(),
                    },
                    pattern: format!("{ach}:{kind}"),
                    difficulty,
                    held_out: n >= per,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn achievements_unlock_in_order_only() {
        let mut ep = Episode::default();
        // Pickaxe combo before wood does nothing.
        assert_eq!(ep.step("open_inventory"), None);
        assert_eq!(ep.step("craft_pickaxe"), None);
        assert_eq!(ep.step("move_forward"), None);
        assert_eq!(ep.step("chop_tree"), Some(0));
        assert_eq!(ep.step("open_inventory"), None);
        assert_eq!(ep.step("craft_plank"), Some(1));
        assert_eq!(ep.achieved, 2);
        assert_eq!(ep.next_goal(), Some(2));
        assert_eq!(ep.recent_actions(3), vec!["chop_tree", "open_inventory", "craft_plank"]);
    }

    #[test]
    fn unknown_action_is_noop() {
        let mut ep = Episode::default();
        ep.step("fly");
        assert_eq!(ep.steps[0].action, "noop");
    }

    #[test]
    fn full_chain_reaches_all_achievements() {
        let mut ep = Episode::default();
        for (_, [a, b]) in ACHIEVEMENTS {
            ep.step(a);
            ep.step(b);
        }
        assert_eq!(ep.next_goal(), None);
        assert_eq!(ep.fraction_achieved(), 1.0);
    }
}
