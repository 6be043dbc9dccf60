//! Episodic optimistic learners.
//!
//! An [`Agent`] follows the usual optimistic loop: at the start of each
//! episode it builds a confidence set from its statistics, plans in it, then
//! executes the planned policy until some state-action pair has been played
//! as often within the episode as in all earlier episodes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::{build_confidence_set, ConfidenceParams, RunningStats};
use crate::error::{Error, Result};
use crate::extended::{evi, modify, BoundedParamMdp, ExtendedDecision};
use crate::mdp::{sample_index, sp, PairLayout};
use crate::planner::{scopt, ScOptOptions, SpanConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Extended value iteration on the confidence set.
    #[serde(rename = "UCRL")]
    Ucrl,
    /// Span-constrained planning on the modified confidence set.
    #[serde(rename = "SCAL")]
    Scal,
    /// Both planners; keep the one whose value has the smaller span.
    #[serde(rename = "SCAL-best-of-both")]
    ScalBestOfBoth,
}

/// How the attraction probability `eta_k` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaMode {
    /// `eta_k = r_max / (c t_k)`, capped at 1.
    Theoretical,
    Zero,
}

/// How the contraction factor passed to the planner is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// `gamma_k = 1 - eta_k`.
    Theoretical,
    Zero,
}

fn default_delta() -> f64 {
    0.1
}

fn one() -> f64 {
    1.0
}

fn default_max_iter() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub mode: Mode,
    /// Span bound. Ignored by UCRL.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Overrides the environment's reward bound.
    #[serde(default)]
    pub r_max: Option<f64>,
    #[serde(default = "one")]
    pub alpha_r: f64,
    #[serde(default = "one")]
    pub alpha_p: f64,
    #[serde(default = "theoretical_eta")]
    pub eta_mode: EtaMode,
    #[serde(default = "theoretical_gamma")]
    pub gamma_mode: GammaMode,
    #[serde(default)]
    pub attract_state: usize,
    /// Iteration budget of each planner call.
    #[serde(default = "default_max_iter")]
    pub max_planner_iter: usize,
}

fn theoretical_eta() -> EtaMode {
    EtaMode::Theoretical
}

fn theoretical_gamma() -> GammaMode {
    GammaMode::Theoretical
}

impl AgentConfig {
    pub fn ucrl() -> Self {
        AgentConfig {
            mode: Mode::Ucrl,
            c: None,
            delta: default_delta(),
            r_max: None,
            alpha_r: 1.0,
            alpha_p: 1.0,
            eta_mode: EtaMode::Theoretical,
            gamma_mode: GammaMode::Theoretical,
            attract_state: 0,
            max_planner_iter: default_max_iter(),
        }
    }

    pub fn scal(c: f64) -> Self {
        AgentConfig { mode: Mode::Scal, c: Some(c), ..Self::ucrl() }
    }

    /// The settings of the published experiments: radii shrunk by 0.05,
    /// no attraction and no contraction term.
    pub fn experimental(mut self) -> Self {
        self.alpha_r = 0.05;
        self.alpha_p = 0.05;
        self.eta_mode = EtaMode::Zero;
        self.gamma_mode = GammaMode::Zero;
        self
    }

    pub fn validate(&self, num_states: usize) -> Result<()> {
        ConfidenceParams::new(self.delta, self.alpha_r, self.alpha_p)?;
        if self.mode != Mode::Ucrl {
            match self.c {
                Some(c) if c > 0.0 => {}
                Some(c) => return Err(Error::invalid(format!("c must be positive, got {c}"))),
                None => return Err(Error::invalid("SCAL needs a span bound `c`")),
            }
            if self.eta_mode == EtaMode::Zero && self.gamma_mode == GammaMode::Theoretical {
                return Err(Error::invalid("gamma_mode `theoretical` needs eta_mode `theoretical`"));
            }
        }
        if self.attract_state >= num_states {
            return Err(Error::invalid(format!("attract_state {} out of range", self.attract_state)));
        }
        if matches!(self.r_max, Some(r) if !(r > 0.0)) {
            return Err(Error::invalid("r_max must be positive"));
        }
        if self.max_planner_iter == 0 {
            return Err(Error::invalid("max_planner_iter must be positive"));
        }
        Ok(())
    }
}

/// What the planner reported at the start of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanDiagnostics {
    /// The planner whose policy is executed.
    pub planner: Mode,
    pub iterations: usize,
    /// Span of the value vector the policy was derived from.
    pub value_span: f64,
    pub gain_estimate: f64,
    pub eta: f64,
    /// Both spans when both planners ran.
    pub ucrl_span: Option<f64>,
    pub scal_span: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    /// Episode index, from 1.
    pub k: usize,
    /// Time step at which the episode started, from 1.
    pub t_k: u64,
    /// Visit counts frozen at the start of the episode.
    pub n_k: Vec<u64>,
    /// Visits within the episode.
    pub nu: Vec<u64>,
    /// Per state, the distribution over real actions.
    pub policy: Vec<Vec<(usize, f64)>>,
    pub diagnostics: PlanDiagnostics,
}

impl EpisodeState {
    /// Whether the episode may play pair `k` once more.
    fn allows(&self, pair: usize) -> bool {
        self.nu[pair] < self.n_k[pair].max(1)
    }
}

/// Result of recording a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeSignal {
    Continue,
    /// The pair just played has used up its budget for this episode; playing
    /// it again will start a new episode.
    PairExhausted,
}

pub struct Agent {
    config: AgentConfig,
    layout: PairLayout,
    r_max: f64,
    params: ConfidenceParams,
    stats: RunningStats,
    /// Current time step, from 1.
    t: u64,
    episodes: usize,
    episode: Option<EpisodeState>,
    pending: Option<(usize, usize)>,
}

impl Agent {
    pub fn new(config: AgentConfig, layout: PairLayout, env_r_max: f64) -> Result<Self> {
        config.validate(layout.num_states())?;
        let r_max = config.r_max.unwrap_or(env_r_max);
        let params = ConfidenceParams::new(config.delta, config.alpha_r, config.alpha_p)?;
        Ok(Agent {
            stats: RunningStats::new(layout.clone(), r_max),
            config,
            layout,
            r_max,
            params,
            t: 1,
            episodes: 0,
            episode: None,
            pending: None,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn stats(&self) -> &RunningStats {
        &self.stats
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn episode(&self) -> Option<&EpisodeState> {
        self.episode.as_ref()
    }

    /// Builds the confidence set from the current statistics and plans in it.
    pub fn plan_episode(&mut self) -> Result<&EpisodeState> {
        let set = build_confidence_set(&self.stats, self.t, &self.params)?;
        self.plan_on(&set)
    }

    /// Plans in a caller-supplied set instead of the confidence set.
    pub fn plan_on(&mut self, set: &BoundedParamMdp) -> Result<&EpisodeState> {
        if set.layout() != &self.layout {
            return Err(Error::invalid("planning set does not match the agent's MDP"));
        }
        let t_k = self.t;
        let eps = self.r_max / (t_k as f64).sqrt();
        let ucrl = || -> Result<(ExtendedDecision, PlanDiagnostics)> {
            let res = evi(set, eps, self.config.max_planner_iter)?;
            let span = sp(&res.u);
            Ok((
                res.decision,
                PlanDiagnostics {
                    planner: Mode::Ucrl,
                    iterations: res.iterations,
                    value_span: span,
                    gain_estimate: res.gain_estimate,
                    eta: 0.0,
                    ucrl_span: Some(span),
                    scal_span: None,
                },
            ))
        };
        let scal = || -> Result<(ExtendedDecision, PlanDiagnostics)> {
            let c = self.config.c.expect("validated");
            let eta = match self.config.eta_mode {
                EtaMode::Theoretical => (self.r_max / (c * t_k as f64)).min(1.0),
                EtaMode::Zero => 0.0,
            };
            let gamma = match self.config.gamma_mode {
                GammaMode::Theoretical => 1.0 - eta,
                GammaMode::Zero => 0.0,
            };
            let modified = modify(set, eta, self.config.attract_state)?;
            let opts = ScOptOptions {
                c: SpanConstraint::new(c)?,
                ref_state: self.config.attract_state,
                gamma: if gamma >= 1.0 { 0.0 } else { gamma },
                eps,
                max_iter: self.config.max_planner_iter,
            };
            let res = scopt(&modified, &vec![0.0; self.layout.num_states()], &opts)?;
            let span = sp(&res.v_final);
            Ok((
                res.policy,
                PlanDiagnostics {
                    planner: Mode::Scal,
                    iterations: res.iterations,
                    value_span: span,
                    gain_estimate: res.gain_estimate,
                    eta,
                    ucrl_span: None,
                    scal_span: Some(span),
                },
            ))
        };
        let (decision, diagnostics) = match self.config.mode {
            Mode::Ucrl => ucrl()?,
            Mode::Scal => scal()?,
            Mode::ScalBestOfBoth => {
                let (du, u) = ucrl()?;
                let (ds, s) = scal()?;
                let (ucrl_span, scal_span) = (u.value_span, s.value_span);
                let (d, mut diag) = if ucrl_span < scal_span { (du, u) } else { (ds, s) };
                diag.ucrl_span = Some(ucrl_span);
                diag.scal_span = Some(scal_span);
                (d, diag)
            }
        };
        self.episodes += 1;
        let policy = (0..self.layout.num_states()).map(|s| decision.action_marginals(s)).collect();
        self.episode = Some(EpisodeState {
            k: self.episodes,
            t_k,
            n_k: self.stats.counts().to_vec(),
            nu: vec![0; self.layout.num_pairs()],
            policy,
            diagnostics,
        });
        Ok(self.episode.as_ref().unwrap())
    }

    /// Draws the action to play in `s`. Starts a new episode first when
    /// none is running, or when the drawn pair has exhausted its budget.
    pub fn act<R: Rng + ?Sized>(&mut self, s: usize, rng: &mut R) -> Result<usize> {
        if s >= self.layout.num_states() {
            return Err(Error::invalid(format!("state {s} out of range")));
        }
        if self.episode.is_none() {
            self.plan_episode()?;
        }
        let mut a = self.draw(s, rng);
        if !self.episode.as_ref().unwrap().allows(self.layout.pair(s, a)) {
            self.plan_episode()?;
            a = self.draw(s, rng);
        }
        self.pending = Some((s, a));
        Ok(a)
    }

    fn draw<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let marginals = &self.episode.as_ref().unwrap().policy[s];
        if marginals.len() == 1 {
            return marginals[0].0;
        }
        let weights: Vec<f64> = marginals.iter().map(|(_, w)| *w).collect();
        marginals[sample_index(&weights, rng)].0
    }

    /// Records the outcome of the last action.
    pub fn observe(&mut self, s: usize, a: usize, reward: f64, next: usize) -> Result<EpisodeSignal> {
        if self.pending != Some((s, a)) {
            return Err(Error::invalid(format!(
                "observed ({s},{a}) but the last action was {:?}",
                self.pending
            )));
        }
        self.stats.update(s, a, reward, next)?;
        self.pending = None;
        self.t += 1;
        let pair = self.layout.pair(s, a);
        let episode = self.episode.as_mut().expect("an action was played");
        episode.nu[pair] += 1;
        Ok(if episode.allows(pair) { EpisodeSignal::Continue } else { EpisodeSignal::PairExhausted })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env;
    use crate::extended::BoundedParamMdp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(agent: &mut Agent, env: &env::EnvInstance, steps: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut rng_a = ChaCha8Rng::seed_from_u64(seed);
        let mut rng_e = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut s = 0;
        let mut actions = Vec::new();
        let mut starts = Vec::new();
        for _ in 0..steps {
            let a = agent.act(s, &mut rng_a).unwrap();
            actions.push(a);
            starts.push(agent.episode().unwrap().k);
            let (r, next) = env.sample(s, a, &mut rng_e).unwrap();
            agent.observe(s, a, r, next).unwrap();
            s = next;
        }
        (actions, starts)
    }

    #[test]
    fn config_json_and_validation() {
        let cfg: AgentConfig = serde_json::from_str(r#"{"mode":"SCAL","c":2.0,"eta_mode":"zero","gamma_mode":"zero"}"#).unwrap();
        assert_eq!(cfg.mode, Mode::Scal);
        assert_eq!(cfg.alpha_r, 1.0);
        cfg.validate(3).unwrap();
        let best: AgentConfig = serde_json::from_str(r#"{"mode":"SCAL-best-of-both","c":1}"#).unwrap();
        assert_eq!(best.mode, Mode::ScalBestOfBoth);
        assert!(AgentConfig { c: None, ..AgentConfig::scal(1.0) }.validate(3).is_err());
        assert!(AgentConfig { eta_mode: EtaMode::Zero, ..AgentConfig::scal(1.0) }.validate(3).is_err());
        assert!(AgentConfig { attract_state: 3, ..AgentConfig::ucrl() }.validate(3).is_err());
        assert!(serde_json::from_str::<AgentConfig>(r#"{"mode":"SCAL","cc":2}"#).is_err());
    }

    #[test]
    fn first_plan_respects_span_bound() {
        for c in [0.3, 1.0, 4.0] {
            let env = env::make_three_state(0.1).unwrap();
            let mut agent = Agent::new(AgentConfig::scal(c), env.mdp.layout().clone(), 1.0).unwrap();
            let ep = agent.plan_episode().unwrap();
            assert!(ep.diagnostics.value_span <= c + 1e-12);
            assert_eq!(ep.t_k, 1);
            assert_eq!(ep.diagnostics.eta, 1.0f64.min(1.0 / c));
        }
    }

    #[test]
    fn point_interval_injection_plans_optimally() {
        let env = env::make_three_state(0.005).unwrap();
        let set = BoundedParamMdp::from_mdp(&env.mdp);
        let mut agent = Agent::new(AgentConfig::scal(2.0).experimental(), env.mdp.layout().clone(), 1.0).unwrap();
        let ep = agent.plan_on(&set).unwrap();
        // eps_k = 1 at t_k = 1.
        assert!((ep.diagnostics.gain_estimate - 2.0 / 3.0).abs() <= 1.0);
        assert_eq!(ep.policy[2], vec![(1, 1.0)]);
    }

    #[test]
    fn scal_value_span_below_ucrl() {
        let env = env::make_three_state(0.005).unwrap();
        let mut ucrl = Agent::new(AgentConfig::ucrl().experimental(), env.mdp.layout().clone(), 1.0).unwrap();
        let mut scal = Agent::new(AgentConfig::scal(0.5).experimental(), env.mdp.layout().clone(), 1.0).unwrap();
        // Same data for both.
        run(&mut ucrl, &env, 3000, 1);
        let stats_after = ucrl.stats().clone();
        scal.stats = stats_after;
        scal.t = ucrl.t;
        let u = ucrl.plan_episode().unwrap().diagnostics.value_span;
        let s = scal.plan_episode().unwrap().diagnostics.value_span;
        assert!(s <= 0.5 + 1e-12);
        assert!(u > 0.5, "UCRL span {u}");
    }

    #[test]
    fn best_of_both_records_both_spans() {
        let env = env::make_three_state(0.1).unwrap();
        let cfg = AgentConfig { mode: Mode::ScalBestOfBoth, ..AgentConfig::scal(0.5).experimental() };
        let mut agent = Agent::new(cfg, env.mdp.layout().clone(), 1.0).unwrap();
        run(&mut agent, &env, 500, 3);
        let diag = &agent.plan_episode().unwrap().diagnostics;
        let (u, s) = (diag.ucrl_span.unwrap(), diag.scal_span.unwrap());
        assert_eq!(diag.value_span, u.min(s));
    }

    #[test]
    fn episode_budget_rules() {
        let env = env::make_two_state();
        let mut agent = Agent::new(AgentConfig::ucrl(), env.mdp.layout().clone(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut env_rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = 0;
        for _ in 0..5000 {
            let a = agent.act(s, &mut rng).unwrap();
            let ep = agent.episode().unwrap();
            let pair = env.mdp.layout().pair(s, a);
            // Within an episode a pair is never played more than max(1, N_k) times.
            assert!(ep.nu[pair] < ep.n_k[pair].max(1));
            let (r, next) = env.sample(s, a, &mut env_rng).unwrap();
            agent.observe(s, a, r, next).unwrap();
            let ep = agent.episode().unwrap();
            // Doubling: counts at most double within an episode.
            let total = agent.stats().counts()[pair];
            assert!(total <= 2 * ep.n_k[pair].max(1));
            s = next;
        }
    }

    #[test]
    fn fresh_pair_allows_one_visit() {
        let env = env::make_two_state();
        let mut agent = Agent::new(AgentConfig::ucrl(), env.mdp.layout().clone(), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = agent.act(0, &mut rng).unwrap();
        let (r, next) = env.sample(0, a, &mut rng).unwrap();
        assert_eq!(agent.observe(0, a, r, next).unwrap(), EpisodeSignal::PairExhausted);
        assert!(agent.observe(0, a, r, next).is_err());
    }

    #[test]
    fn episode_count_bound() {
        let env = env::make_three_state(0.1).unwrap();
        let mut agent = Agent::new(AgentConfig::scal(2.0).experimental(), env.mdp.layout().clone(), 1.0).unwrap();
        let t = 20_000usize;
        run(&mut agent, &env, t, 9);
        let sa = 4.0;
        let bound = sa * (8.0 * t as f64 / sa).log2();
        assert!((agent.episode().unwrap().k as f64) <= bound);
    }

    #[test]
    fn identical_seeds_identical_runs() {
        let env = env::make_three_state(0.1).unwrap();
        let make = || Agent::new(AgentConfig::ucrl().experimental(), env.mdp.layout().clone(), 1.0).unwrap();
        let (mut a, mut b) = (make(), make());
        assert_eq!(run(&mut a, &env, 2000, 4), run(&mut b, &env, 2000, 4));
    }

    #[test]
    fn executed_policy_is_a_distribution() {
        let env = env::make_three_state(0.005).unwrap();
        let mut agent = Agent::new(AgentConfig::scal(2.0).experimental(), env.mdp.layout().clone(), 1.0).unwrap();
        run(&mut agent, &env, 5000, 5);
        for marg in &agent.episode().unwrap().policy {
            assert!((marg.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(marg.len() <= 2);
        }
    }

    #[test]
    fn mixture_sampling_frequency() {
        let env = env::make_two_state();
        let mut agent = Agent::new(AgentConfig::ucrl(), env.mdp.layout().clone(), 1.0).unwrap();
        agent.plan_episode().unwrap();
        agent.episode.as_mut().unwrap().policy[0] = vec![(0, 0.5), (1, 0.5)];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 10_000;
        let ones = (0..n).filter(|_| agent.draw(0, &mut rng) == 1).count();
        let sigma = (0.25 / n as f64).sqrt();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 3.0 * sigma);
    }
}
