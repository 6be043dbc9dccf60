//! Seeded regret experiments and their CSV output.
//!
//! [`run_learning`] plays an agent against an environment for every seed of a
//! [`RunConfig`] and records the cumulative regret `t g* - sum r` every
//! `record_every` steps. [`aggregate`] averages the seeds with a normal 95%
//! interval, and [`write_csv`] emits one row per (recorded step, seed) plus
//! mean rows flagged with seed `-1`. The intervals go to a sibling
//! `<stem>.ci.csv` file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig};
use crate::env::{EnvInstance, EnvSpec};
use crate::error::{Error, Result};
use crate::mdp::{optimal_gain_bias_with, FiniteMdp, RviOptions};
use crate::par::Execution;

pub const CSV_HEADER: &str = "t,seed,cum_reward,regret,episode,value_span,gain_est";
pub const CI_HEADER: &str = "t,column,n,mean,ci_low,ci_high";

const AGENT_STREAM: u64 = 0;
const ENV_STREAM: u64 = 1;

fn default_record_every() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub agent: AgentConfig,
    pub horizon: u64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    #[serde(default)]
    pub initial_state: usize,
    /// Where `learn` writes the CSV. Relative paths are resolved against the
    /// config file's directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("`seeds` must not be empty"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("`record_every` must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub cum_reward: f64,
    pub regret: f64,
    pub episode: u64,
    pub value_span: f64,
    pub gain_est: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub seed: u64,
    pub rows: Vec<TraceRow>,
    /// Why the seed stopped early, if it did. The last row then carries NaN
    /// planner columns.
    pub error: Option<String>,
}

/// Optimal gain used as the regret baseline. Falls back to the aperiodic
/// variant of relative value iteration when the plain one cycles.
pub fn reference_gain(mdp: &FiniteMdp) -> Result<f64> {
    let plain = RviOptions { eps: 1e-8, max_iter: 1_000_000, ..RviOptions::default() };
    let gb = match optimal_gain_bias_with(mdp, &plain) {
        Ok(gb) => gb,
        Err(Error::NonConvergence(_)) => optimal_gain_bias_with(mdp, &RviOptions { tau: 0.5, ..plain })?,
        Err(e) => return Err(e),
    };
    Ok(gb.gain[0])
}

pub fn run_learning(config: &RunConfig) -> Result<Vec<RegretTrace>> {
    run_learning_with(config, Execution::default())
}

/// Runs every seed, possibly in parallel. Output is ordered like `seeds`.
pub fn run_learning_with(config: &RunConfig, exec: Execution) -> Result<Vec<RegretTrace>> {
    config.validate()?;
    let env = config.env.build()?;
    if config.initial_state >= env.mdp.num_states() {
        return Err(Error::invalid(format!("initial_state {} out of range", config.initial_state)));
    }
    config.agent.validate(env.mdp.num_states())?;
    let g_star = reference_gain(&env.mdp)?;
    Ok(exec.map_slice(&config.seeds, |&seed| run_seed(&env, g_star, config, seed)))
}

/// One seeded run against a known optimal gain.
pub fn run_seed(env: &EnvInstance, g_star: f64, config: &RunConfig, seed: u64) -> RegretTrace {
    let mut rng_agent = ChaCha8Rng::seed_from_u64(seed);
    rng_agent.set_stream(AGENT_STREAM);
    let mut rng_env = ChaCha8Rng::seed_from_u64(seed);
    rng_env.set_stream(ENV_STREAM);

    let mut trace = RegretTrace { seed, rows: Vec::new(), error: None };
    let mut agent = match Agent::new(config.agent.clone(), env.mdp.layout().clone(), env.mdp.r_max()) {
        Ok(agent) => agent,
        Err(e) => {
            trace.error = Some(e.to_string());
            return trace;
        }
    };
    let mut s = config.initial_state;
    let mut cum = 0.0;
    for t in 1..=config.horizon {
        let a = match agent.act(s, &mut rng_agent) {
            Ok(a) => a,
            Err(e) => {
                let episode = agent.episode().map_or(0, |ep| ep.k as u64);
                trace.rows.push(TraceRow {
                    t: t - 1,
                    cum_reward: cum,
                    regret: (t - 1) as f64 * g_star - cum,
                    episode,
                    value_span: f64::NAN,
                    gain_est: f64::NAN,
                });
                trace.error = Some(format!("seed {seed}, step {t}: {e}"));
                return trace;
            }
        };
        let (r, next) = env.mdp.sample_unchecked(s, a, &mut rng_env);
        agent.observe(s, a, r, next).expect("the agent accepts its own transition");
        cum += r;
        if t % config.record_every == 0 {
            let ep = agent.episode().expect("an episode is running");
            trace.rows.push(TraceRow {
                t,
                cum_reward: cum,
                regret: t as f64 * g_star - cum,
                episode: ep.k as u64,
                value_span: ep.diagnostics.value_span,
                gain_est: ep.diagnostics.gain_estimate,
            });
        }
        s = next;
    }
    trace
}

/// Mean and normal 95% interval of one column at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSummary {
    pub n: usize,
    pub mean: f64,
    /// `None` below two samples.
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub t: u64,
    pub cum_reward: ColumnSummary,
    pub regret: ColumnSummary,
    pub episode: ColumnSummary,
    pub value_span: ColumnSummary,
    pub gain_est: ColumnSummary,
}

impl AggregateRow {
    pub fn columns(&self) -> [(&'static str, &ColumnSummary); 5] {
        [
            ("cum_reward", &self.cum_reward),
            ("regret", &self.regret),
            ("episode", &self.episode),
            ("value_span", &self.value_span),
            ("gain_est", &self.gain_est),
        ]
    }
}

fn summarize(xs: &[f64]) -> ColumnSummary {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ci = (n >= 2).then(|| {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let half = 1.96 * var.sqrt() / (n as f64).sqrt();
        (mean - half, mean + half)
    });
    ColumnSummary { n, mean, ci }
}

/// Pointwise mean over seeds at every recorded step. Seeds that stopped
/// early contribute only up to their last regular row.
pub fn aggregate(traces: &[RegretTrace]) -> Vec<AggregateRow> {
    let mut steps: Vec<u64> = traces
        .iter()
        .flat_map(|tr| regular_rows(tr).iter().map(|r| r.t))
        .collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|t| {
            let rows: Vec<&TraceRow> =
                traces.iter().filter_map(|tr| regular_rows(tr).iter().find(|r| r.t == t)).collect();
            let col = |f: fn(&TraceRow) -> f64| summarize(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            AggregateRow {
                t,
                cum_reward: col(|r| r.cum_reward),
                regret: col(|r| r.regret),
                episode: col(|r| r.episode as f64),
                value_span: col(|r| r.value_span),
                gain_est: col(|r| r.gain_est),
            }
        })
        .collect()
}

fn regular_rows(trace: &RegretTrace) -> &[TraceRow] {
    match trace.error {
        Some(_) if !trace.rows.is_empty() => &trace.rows[..trace.rows.len() - 1],
        _ => &trace.rows,
    }
}

/// Formats a float with 9 significant digits, in its shortest form.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("scientific notation parses");
    format!("{rounded}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_sig9).unwrap_or_default()
}

/// Per-seed rows followed, for each recorded step, by the mean row.
pub fn render_csv(traces: &[RegretTrace], agg: &[AggregateRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{CSV_HEADER}").unwrap();
    for tr in traces {
        for r in &tr.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.t,
                tr.seed,
                fmt_sig9(r.cum_reward),
                fmt_sig9(r.regret),
                r.episode,
                fmt_sig9(r.value_span),
                fmt_sig9(r.gain_est)
            )
            .unwrap();
        }
    }
    for a in agg {
        writeln!(
            out,
            "{},-1,{},{},{},{},{}",
            a.t,
            fmt_sig9(a.cum_reward.mean),
            fmt_sig9(a.regret.mean),
            fmt_sig9(a.episode.mean),
            fmt_sig9(a.value_span.mean),
            fmt_sig9(a.gain_est.mean)
        )
        .unwrap();
    }
    out
}

pub fn render_ci_csv(agg: &[AggregateRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{CI_HEADER}").unwrap();
    for a in agg {
        for (name, c) in a.columns() {
            writeln!(
                out,
                "{},{name},{},{},{},{}",
                a.t,
                c.n,
                fmt_sig9(c.mean),
                fmt_opt(c.ci.map(|x| x.0)),
                fmt_opt(c.ci.map(|x| x.1))
            )
            .unwrap();
        }
    }
    out
}

/// `runs/a.csv` -> `runs/a.ci.csv`.
pub fn ci_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.ci.csv"))
}

/// Writes the trace CSV at `path` and the intervals next to it.
pub fn write_csv(path: &Path, traces: &[RegretTrace]) -> Result<()> {
    let agg = aggregate(traces);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, render_csv(traces, &agg))?;
    std::fs::write(ci_path(path), render_ci_csv(&agg))?;
    Ok(())
}

/// One parsed line of a trace CSV. Mean rows have `seed == -1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub t: u64,
    pub seed: i64,
    pub cum_reward: f64,
    pub regret: f64,
    pub episode: f64,
    pub value_span: f64,
    pub gain_est: f64,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == CSV_HEADER => {}
        other => return Err(Error::invalid(format!("unexpected CSV header {other:?}"))),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |what: &str| Error::invalid(format!("line {}: bad {what}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad("field count"));
            }
            let num = |k: usize, name: &str| f[k].parse::<f64>().map_err(|_| bad(name));
            Ok(CsvRow {
                t: f[0].parse().map_err(|_| bad("t"))?,
                seed: f[1].parse().map_err(|_| bad("seed"))?,
                cum_reward: num(2, "cum_reward")?,
                regret: num(3, "regret")?,
                episode: num(4, "episode")?,
                value_span: num(5, "value_span")?,
                gain_est: num(6, "gain_est")?,
            })
        })
        .collect()
}

/// Rebuilds per-seed traces from a CSV, dropping the mean rows. Error
/// messages are not stored in the CSV, so `error` is always `None`.
pub fn traces_from_csv(text: &str) -> Result<Vec<RegretTrace>> {
    let mut out: Vec<RegretTrace> = Vec::new();
    for row in parse_csv(text)? {
        if row.seed < 0 {
            continue;
        }
        let seed = row.seed as u64;
        if out.last().map(|tr| tr.seed) != Some(seed) {
            out.push(RegretTrace { seed, rows: Vec::new(), error: None });
        }
        out.last_mut().unwrap().rows.push(TraceRow {
            t: row.t,
            cum_reward: row.cum_reward,
            regret: row.regret,
            episode: row.episode as u64,
            value_span: row.value_span,
            gain_est: row.gain_est,
        });
    }
    Ok(out)
}
