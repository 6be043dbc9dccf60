//! Benchmark environments and random MDP fixtures.

mod knight_quest;

use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionSpec, FiniteMdp, RewardDist};

pub use knight_quest::{make_knight_quest, KnightState, KNIGHT_ACTIONS};

/// Known properties of an environment, where available in closed form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvMetadata {
    pub gain: Option<f64>,
    /// Optimal bias, pinned to zero at the last state.
    pub bias: Option<Vec<f64>>,
    pub bias_span: Option<f64>,
    pub diameter: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EnvInstance {
    pub name: String,
    pub mdp: FiniteMdp,
    pub metadata: EnvMetadata,
}

impl EnvInstance {
    pub fn sample<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<(f64, usize)> {
        sample(self, s, a, rng)
    }
}

/// One transition of the environment.
pub fn sample<R: Rng + ?Sized>(env: &EnvInstance, s: usize, a: usize, rng: &mut R) -> Result<(f64, usize)> {
    env.mdp.sample(s, a, rng)
}

/// Two states, two actions each. In state 0, action 0 moves to state 1 and
/// action 1 stays with reward 1/2. In state 1, action 0 moves back and
/// action 1 stays with reward 1.
pub fn make_two_state() -> EnvInstance {
    let mdp = FiniteMdp::new(
        1.0,
        vec![
            vec![ActionSpec::goto(0.0, 1, 2), ActionSpec::goto(0.5, 0, 2)],
            vec![ActionSpec::goto(0.0, 0, 2), ActionSpec::goto(1.0, 1, 2)],
        ],
    )
    .expect("two-state MDP is well formed");
    EnvInstance {
        name: "two_state".into(),
        mdp,
        metadata: EnvMetadata {
            gain: Some(1.0),
            bias_span: Some(1.0),
            diameter: Some(1.0),
            ..EnvMetadata::default()
        },
    }
}

fn bernoulli(p: f64, trans: Vec<f64>) -> ActionSpec {
    ActionSpec { reward_mean: p, reward_dist: RewardDist::Bernoulli(p), trans }
}

/// The three-state domain. State 0 reaches state 1 only with probability
/// `delta`; state 1 pays Be(1/3) and returns to 0; state 2 pays Be(2/3) and
/// either stays (action 1) or behaves like state 0 (action 0).
pub fn make_three_state(delta: f64) -> Result<EnvInstance> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid(format!("delta must lie in [0, 1), got {delta}")));
    }
    let mdp = FiniteMdp::new(
        1.0,
        vec![
            vec![ActionSpec::deterministic(0.0, vec![0.0, delta, 1.0 - delta])],
            vec![bernoulli(1.0 / 3.0, vec![1.0, 0.0, 0.0])],
            vec![
                bernoulli(2.0 / 3.0, vec![1.0 - delta, delta, 0.0]),
                bernoulli(2.0 / 3.0, vec![0.0, 0.0, 1.0]),
            ],
        ],
    )?;
    let bias = vec![(-2.0 - delta) / (3.0 * (1.0 - delta)), -1.0 / (1.0 - delta), 0.0];
    Ok(EnvInstance {
        name: "three_state".into(),
        mdp,
        metadata: EnvMetadata {
            gain: Some(2.0 / 3.0),
            bias_span: Some(1.0 / (1.0 - delta)),
            bias: Some(bias),
            diameter: Some(if delta == 0.0 { f64::INFINITY } else { (1.0 / delta).max(2.0 / (1.0 - delta)) }),
        },
    })
}

/// The small MDPs used as regressions for the truncated operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Counterexample {
    /// Two states; state 1 pays 1 under both actions, so no policy keeps the
    /// one-step backup within span 1/2 of state 0.
    B1,
    /// Chain 0 -> 1 -> 2 with a choice between rewards `beta` and `delta` in
    /// state 1. Requires `beta < delta < alpha <= 1`.
    B2 { alpha: f64, beta: f64, delta: f64 },
    /// Cycle 0 -> 1 -> 2 -> 0 where state 0 pays 1 and loops with
    /// probability `delta`. Requires `0 < delta < 1`.
    B3 { delta: f64 },
}

pub fn make_counterexample(which: Counterexample) -> Result<EnvInstance> {
    let (name, actions) = match which {
        Counterexample::B1 => (
            "b1",
            vec![
                vec![ActionSpec::goto(0.0, 1, 2), ActionSpec::goto(0.0, 0, 2)],
                vec![ActionSpec::goto(1.0, 0, 2), ActionSpec::goto(1.0, 1, 2)],
            ],
        ),
        Counterexample::B2 { alpha, beta, delta } => {
            if !(beta < delta && delta < alpha && alpha <= 1.0 && beta >= 0.0) {
                return Err(Error::invalid(format!(
                    "need 0 <= beta < delta < alpha <= 1, got alpha={alpha} beta={beta} delta={delta}"
                )));
            }
            (
                "b2",
                vec![
                    vec![ActionSpec::goto(alpha, 1, 3)],
                    vec![ActionSpec::goto(beta, 2, 3), ActionSpec::goto(delta, 2, 3)],
                    vec![ActionSpec::goto(0.0, 2, 3)],
                ],
            )
        }
        Counterexample::B3 { delta } => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::invalid(format!("need 0 < delta < 1, got {delta}")));
            }
            (
                "b3",
                vec![
                    vec![ActionSpec::deterministic(1.0, vec![delta, 1.0 - delta, 0.0])],
                    vec![ActionSpec::goto(0.0, 2, 3)],
                    vec![ActionSpec::goto(0.0, 0, 3)],
                ],
            )
        }
    };
    Ok(EnvInstance { name: name.into(), mdp: FiniteMdp::new(1.0, actions)?, metadata: EnvMetadata::default() })
}

/// A random MDP: each row spreads a flat Dirichlet draw over `branching`
/// distinct successors, and each mean reward is uniform on `[0, 1]` with
/// Bernoulli noise.
pub fn random_mdp<R: Rng + ?Sized>(
    num_states: usize,
    num_actions: usize,
    branching: usize,
    rng: &mut R,
) -> Result<FiniteMdp> {
    if num_states == 0 || num_actions == 0 || branching == 0 {
        return Err(Error::invalid("sizes must be at least one"));
    }
    let branching = branching.min(num_states);
    let actions = (0..num_states)
        .map(|_| {
            (0..num_actions)
                .map(|_| {
                    let support = rand::seq::index::sample(rng, num_states, branching);
                    let weights: Vec<f64> = (0..branching).map(|_| Exp1.sample(rng)).collect();
                    let total: f64 = weights.iter().sum();
                    let mut trans = vec![0.0; num_states];
                    for (j, w) in support.iter().zip(&weights) {
                        trans[j] = w / total;
                    }
                    bernoulli(rng.random(), trans)
                })
                .collect()
        })
        .collect();
    FiniteMdp::new(1.0, actions)
}

/// An environment addressable from a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    TwoState,
    ThreeState { delta: f64 },
    KnightQuest,
    B1,
    B2 { alpha: f64, beta: f64, delta: f64 },
    B3 { delta: f64 },
    /// An MDP document on disk.
    File { path: PathBuf },
}

impl EnvSpec {
    pub fn build(&self) -> Result<EnvInstance> {
        match self {
            EnvSpec::TwoState => Ok(make_two_state()),
            EnvSpec::ThreeState { delta } => make_three_state(*delta),
            EnvSpec::KnightQuest => Ok(make_knight_quest()),
            EnvSpec::B1 => make_counterexample(Counterexample::B1),
            EnvSpec::B2 { alpha, beta, delta } => {
                make_counterexample(Counterexample::B2 { alpha: *alpha, beta: *beta, delta: *delta })
            }
            EnvSpec::B3 { delta } => make_counterexample(Counterexample::B3 { delta: *delta }),
            EnvSpec::File { path } => Ok(EnvInstance {
                name: path.display().to_string(),
                mdp: FiniteMdp::load(path)?,
                metadata: EnvMetadata::default(),
            }),
        }
    }
}
