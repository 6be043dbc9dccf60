//! The Knight Quest gridworld.
//!
//! A knight on a 4x4 grid collects gold at the mine, buys a key in town and
//! rescues the princess, while a dragon wanders on the three cells around
//! her. Buying armour protects against the dragon but makes the knight slow
//! and a poor miner. Rescuing the princess or being killed resets the game.

use std::collections::HashMap;

use super::{EnvInstance, EnvMetadata};
use crate::mdp::{ActionSpec, FiniteMdp, RewardDist};

const SIDE: usize = 4;
const TOWN: (usize, usize) = (0, 3);
const PRINCESS: (usize, usize) = (0, 0);
const MINE: (usize, usize) = (3, 1);
const DRAGON_CELLS: [(usize, usize); 3] = [(0, 1), (1, 0), (1, 1)];
const DRAGON_MOVES: [[f64; 3]; 3] = [[0.4, 0.0, 0.6], [0.0, 0.4, 0.6], [0.4, 0.2, 0.4]];

const ARMOURED_MOVE: f64 = 0.5;
const ARMOURED_MINING: f64 = 0.01;

const STEP: f64 = -1.0;
const MISUSE: f64 = -10.0;
const RESCUE: f64 = 20.0;
const KILLED: f64 = -20.0;

/// Action names in id order.
pub const KNIGHT_ACTIONS: [&str; 8] = ["right", "down", "left", "up", "stay", "CG", "BK", "BA"];

/// Object codes: none, key, armour, key and armour.
const NOTHING: u8 = 0;
const KEY: u8 = 1;
const ARMOUR: u8 = 2;
const BOTH: u8 = 3;

/// Decoded Knight Quest state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KnightState {
    pub row: usize,
    pub col: usize,
    pub gold: u8,
    pub dragon: u8,
    pub object: u8,
}

impl KnightState {
    fn cell(self) -> (usize, usize) {
        (self.row, self.col)
    }

    fn armoured(self) -> bool {
        self.object == ARMOUR || self.object == BOTH
    }

    /// States that never persist: they are replaced by a reset.
    fn is_transient(self) -> bool {
        let rescued = self.cell() == PRINCESS && (self.object == KEY || self.object == BOTH);
        let killed = !self.armoured() && self.cell() == DRAGON_CELLS[self.dragon as usize];
        rescued || killed
    }
}

fn scale(r: f64) -> f64 {
    (r - KILLED) / (RESCUE - KILLED)
}

fn reset_states() -> [KnightState; 3] {
    [0, 1, 2].map(|d| KnightState { row: TOWN.0, col: TOWN.1, gold: 0, dragon: d, object: NOTHING })
}

/// Knight-only outcomes of an action: `(probability, knight part, raw reward)`.
fn knight_outcomes(s: KnightState, action: usize) -> Vec<(f64, KnightState, f64)> {
    let moved = |dr: isize, dc: isize| {
        let r = s.row as isize + dr;
        let c = s.col as isize + dc;
        if (0..SIDE as isize).contains(&r) && (0..SIDE as isize).contains(&c) {
            KnightState { row: r as usize, col: c as usize, ..s }
        } else {
            s
        }
    };
    match action {
        0..=3 => {
            let (dr, dc) = [(0, 1), (1, 0), (0, -1), (-1, 0)][action];
            let target = moved(dr, dc);
            if s.armoured() && target != s {
                vec![(ARMOURED_MOVE, target, STEP), (1.0 - ARMOURED_MOVE, s, STEP)]
            } else {
                vec![(1.0, target, STEP)]
            }
        }
        4 => vec![(1.0, s, STEP)],
        5 => {
            if s.cell() != MINE {
                return vec![(1.0, s, MISUSE)];
            }
            let rich = KnightState { gold: 1, ..s };
            if s.armoured() && rich != s {
                vec![(ARMOURED_MINING, rich, STEP), (1.0 - ARMOURED_MINING, s, STEP)]
            } else {
                vec![(1.0, rich, STEP)]
            }
        }
        6 | 7 => {
            if s.cell() != TOWN || s.gold == 0 {
                return vec![(1.0, s, MISUSE)];
            }
            let bought = if action == 6 { KEY } else { ARMOUR };
            let object = if s.object == NOTHING { bought } else { BOTH };
            vec![(1.0, KnightState { gold: 0, object, ..s }, STEP)]
        }
        _ => unreachable!("eight actions"),
    }
}

/// All persistent states, ordered lexicographically by (row, col, gold,
/// dragon, object).
fn persistent_states() -> Vec<KnightState> {
    let mut out = Vec::with_capacity(360);
    for row in 0..SIDE {
        for col in 0..SIDE {
            for gold in 0..2 {
                for dragon in 0..3 {
                    for object in 0..4 {
                        let s = KnightState { row, col, gold, dragon, object };
                        if !s.is_transient() {
                            out.push(s);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Builds the 360-state, 8-action MDP, together with the decoded state of
/// every index. Rewards are mapped affinely from `[-20, 20]` to `[0, 1]`.
pub(crate) fn knight_quest_states() -> (FiniteMdp, Vec<KnightState>) {
    let states = persistent_states();
    let index: HashMap<KnightState, usize> = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let n = states.len();
    let resets = reset_states().map(|s| index[&s]);

    let actions = states
        .iter()
        .map(|&s| {
            (0..KNIGHT_ACTIONS.len())
                .map(|a| {
                    let mut trans = vec![0.0; n];
                    let mut rewards: Vec<(f64, f64)> = Vec::new();
                    let mut add_reward = |value: f64, p: f64| match rewards.iter_mut().find(|(v, _)| *v == value) {
                        Some(entry) => entry.1 += p,
                        None => rewards.push((value, p)),
                    };
                    for (pk, knight, raw) in knight_outcomes(s, a) {
                        for (d, &pd) in DRAGON_MOVES[s.dragon as usize].iter().enumerate() {
                            let p = pk * pd;
                            if p == 0.0 {
                                continue;
                            }
                            let next = KnightState { dragon: d as u8, ..knight };
                            let rescued = next.cell() == PRINCESS && (next.object == KEY || next.object == BOTH);
                            let killed = !next.armoured() && next.cell() == DRAGON_CELLS[d];
                            if rescued || killed {
                                add_reward(scale(if rescued { RESCUE } else { KILLED }), p);
                                for &r in &resets {
                                    trans[r] += p / 3.0;
                                }
                            } else {
                                add_reward(scale(raw), p);
                                trans[index[&next]] += p;
                            }
                        }
                    }
                    let mean = rewards.iter().map(|(v, p)| v * p).sum();
                    let reward_dist = if rewards.len() == 1 {
                        RewardDist::Deterministic
                    } else {
                        let (values, probs) = rewards.into_iter().unzip();
                        RewardDist::Categorical { values, probs }
                    };
                    ActionSpec { reward_mean: mean, reward_dist, trans }
                })
                .collect()
        })
        .collect();
    let mdp = FiniteMdp::new(1.0, actions).expect("Knight Quest rows are probability vectors");
    (mdp, states)
}

pub fn make_knight_quest() -> EnvInstance {
    let (mdp, _) = knight_quest_states();
    EnvInstance {
        name: "knight_quest".into(),
        mdp,
        metadata: EnvMetadata {
            gain: Some(0.5),
            bias_span: Some(3.28),
            diameter: Some(250.0),
            ..EnvMetadata::default()
        },
    }
}
