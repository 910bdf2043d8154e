//! Seeded experiment runner: configuration, the session loop, metrics,
//! sweeps, repeated runs and checkpoints.

mod checkpoint;
mod config;

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION, Checkpoint, load_checkpoint, save_checkpoint};
pub use config::{ExperimentConfig, RunConfig, apply_override};

use crate::agents::{Agent, AgentKind, ObservedSession, build_agent};
use crate::env_models::FeatureContext;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::shop_sim::{
    Catalog, TerminalKind, UserBehaviorModel, random_action, sample_catalog, simulate_session, PageDecision,
};
use crate::ssmdp::top_k_list;

pub const CSV_HEADER: &str = "session,transaction_amount,terminal,length,moving_avg,wall_ms";

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// 1-based session index.
    pub session: u64,
    pub transaction_amount: f64,
    pub terminal: TerminalKind,
    pub length: usize,
    /// Mean transaction amount over the trailing window, this session included.
    pub moving_avg: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.session,
            self.transaction_amount,
            self.terminal.as_str(),
            self.length,
            self.moving_avg,
            self.wall_ms
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        let bad = || Error::invalid(format!("malformed metrics line `{line}`"));
        if fields.len() != 6 {
            return Err(bad());
        }
        Ok(Self {
            session: fields[0].parse().map_err(|_| bad())?,
            transaction_amount: fields[1].parse().map_err(|_| bad())?,
            terminal: TerminalKind::parse(fields[2]).ok_or_else(bad)?,
            length: fields[3].parse().map_err(|_| bad())?,
            moving_avg: fields[4].parse().map_err(|_| bad())?,
            wall_ms: fields[5].parse().map_err(|_| bad())?,
        })
    }
}

/// Header plus one line per row, newline-terminated.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(48 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.csv_line());
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::invalid("metrics CSV header does not match"));
    }
    lines.filter(|l| !l.is_empty()).map(MetricsRow::parse_csv_line).collect()
}

/// Mean transaction amount of the last `window` rows.
pub fn final_window_mean(rows: &[MetricsRow], window: usize) -> f64 {
    let tail = &rows[rows.len().saturating_sub(window)..];
    tail.iter().map(|r| r.transaction_amount).sum::<f64>() / tail.len().max(1) as f64
}

/// Random-stream derivation for the parts of a run that need one.
fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SESSION_STREAM: u64 = 0;
const WARMUP_STREAM: u64 = 1;

/// A live run: environment, agent and the session random stream.
pub struct Experiment {
    config: ExperimentConfig,
    catalog: Catalog,
    model: UserBehaviorModel,
    context: FeatureContext,
    agent: Box<dyn Agent>,
    session_rng: ChaCha8Rng,
    sessions_done: u64,
    recent: VecDeque<f64>,
}

impl Experiment {
    /// Builds the environment and agent from `config` and runs the warm-up.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let mut exp = Self::assemble(config)?;
        exp.warm_up()?;
        Ok(exp)
    }

    fn assemble(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let catalog = sample_catalog(&config.catalog, &mut ChaCha8Rng::seed_from_u64(config.catalog.seed))?;
        let model = UserBehaviorModel::for_catalog(&config.behavior, &catalog)?;
        let context = FeatureContext::new(catalog.n_features(), catalog.max_steps(), config.behavior.window)?
            .with_prices(model.price_scale, model.price_spread)?;
        let agent = build_agent(&config.agent, &context)?;
        Ok(Self {
            session_rng: stream(config.run.session_seed, SESSION_STREAM),
            recent: VecDeque::with_capacity(config.run.metrics_window),
            config,
            catalog,
            model,
            context,
            agent,
            sessions_done: 0,
        })
    }

    /// Random-policy sessions that pretrain the environment models of agents that have them.
    fn warm_up(&mut self) -> Result<()> {
        if self.agent.kind() != AgentKind::DpgFbe {
            return Ok(());
        }
        let mut rng = stream(self.config.run.session_seed, WARMUP_STREAM);
        let mut action_rng = stream(self.config.agent.seed, WARMUP_STREAM);
        let n = self.catalog.n_features();
        let k = self.catalog.page_size();
        for _ in 0..self.config.run.warmup_sessions {
            let (records, terminal) = simulate_session(&self.catalog, &self.model, &mut rng, false, |state, pool| {
                let action = random_action(n, &mut action_rng);
                let page = top_k_list(pool, &action, k, state.step() + 1)?;
                Ok(PageDecision {
                    action: Some(action),
                    page,
                })
            })?;
            self.agent.pretrain(&ObservedSession { records, terminal })?;
        }
        Ok(())
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn model(&self) -> &UserBehaviorModel {
        &self.model
    }

    pub fn context(&self) -> &FeatureContext {
        &self.context
    }

    pub fn agent(&self) -> &dyn Agent {
        self.agent.as_ref()
    }

    pub fn sessions_done(&self) -> u64 {
        self.sessions_done
    }

    /// Simulates one session, lets the agent learn from it and records it.
    pub fn step(&mut self) -> Result<MetricsRow> {
        let started = Instant::now();
        let k = self.catalog.page_size();
        let agent = &mut self.agent;
        let with_clicks = agent.uses_clicks();
        let (records, terminal) = simulate_session(
            &self.catalog,
            &self.model,
            &mut self.session_rng,
            with_clicks,
            |state, pool| agent.decide(state, pool, k),
        )?;
        let session = ObservedSession { records, terminal };
        agent.observe(&session)?;

        let amount = session.transaction_amount();
        if self.recent.len() == self.config.run.metrics_window {
            self.recent.pop_front();
        }
        self.recent.push_back(amount);
        self.sessions_done += 1;
        let moving_avg = self.recent.iter().sum::<f64>() / self.recent.len() as f64;
        Ok(MetricsRow {
            session: self.sessions_done,
            transaction_amount: amount,
            terminal,
            length: session.records.len(),
            moving_avg,
            wall_ms: if self.config.run.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        })
    }

    pub fn run(&mut self, sessions: u64) -> Result<Vec<MetricsRow>> {
        (0..sessions).map(|_| self.step()).collect()
    }

    /// Everything needed to continue this run bit-identically.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut params = ParamStore::new();
        self.agent.export(&mut params);
        params.put_rng("run.session_rng", &self.session_rng);
        params.put_u64("run.sessions_done", self.sessions_done);
        params.insert("run.recent_amounts", self.recent.iter().copied().collect());
        Checkpoint {
            config: self.config.clone(),
            params,
        }
    }

    /// Rebuilds a run from a checkpoint; the warm-up is not repeated.
    pub fn restore(checkpoint: &Checkpoint) -> Result<Self> {
        let mut exp = Self::assemble(checkpoint.config.clone())?;
        let params = &checkpoint.params;
        exp.agent.import(params)?;
        exp.session_rng = params.get_rng("run.session_rng")?;
        exp.sessions_done = params.get_u64("run.sessions_done")?;
        let recent = params
            .get("run.recent_amounts")
            .ok_or_else(|| Error::CheckpointCorrupt("missing array `run.recent_amounts`".into()))?;
        if recent.len() > exp.config.run.metrics_window {
            return Err(Error::CheckpointCorrupt("moving-average window is longer than configured".into()));
        }
        exp.recent = recent.iter().copied().collect();
        Ok(exp)
    }
}

/// Runs `config.run.sessions` sessions from scratch.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(Vec<MetricsRow>, Experiment)> {
    let mut exp = Experiment::new(config.clone())?;
    let rows = exp.run(config.run.sessions)?;
    Ok((rows, exp))
}

/// One arm of a sweep.
#[derive(Debug, Clone)]
pub struct SweepArm {
    pub value: String,
    pub config: ExperimentConfig,
    pub rows: Vec<MetricsRow>,
}

/// Runs one experiment per value of the dotted parameter `param`, all other
/// settings, seeds included, shared.
pub fn sweep(config: &ExperimentConfig, param: &str, values: &[String]) -> Result<Vec<SweepArm>> {
    if values.is_empty() {
        return Err(Error::config(param, "a sweep needs at least one value"));
    }
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| apply_override(config, param, v))
        .collect::<Result<_>>()?;
    configs
        .into_iter()
        .zip(values)
        .map(|(cfg, value)| {
            let (rows, _) = run_experiment(&cfg)?;
            Ok(SweepArm {
                value: value.clone(),
                config: cfg,
                rows,
            })
        })
        .collect()
}

/// Combined sweep CSV: the swept value followed by the metrics columns.
pub fn sweep_csv(param: &str, arms: &[SweepArm]) -> String {
    let mut out = format!("{param},{CSV_HEADER}\n");
    for arm in arms {
        for row in &arm.rows {
            let _ = writeln!(out, "{},{}", arm.value, row.csv_line());
        }
    }
    out
}

/// `runs` independent repetitions differing only in the session seed.
pub fn run_repeated(config: &ExperimentConfig, runs: usize) -> Result<Vec<Vec<MetricsRow>>> {
    (0..runs as u64)
        .map(|i| {
            let mut cfg = config.clone();
            cfg.run.session_seed = config.run.session_seed.wrapping_add(i);
            run_experiment(&cfg).map(|(rows, _)| rows)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentConfig;
    use crate::shop_sim::{BehaviorConfig, CatalogConfig};

    pub(crate) fn tiny_config(kind: AgentKind) -> ExperimentConfig {
        ExperimentConfig {
            catalog: CatalogConfig {
                n_features: 4,
                catalog_size: 60,
                page_size: 5,
                seed: 1,
            },
            behavior: BehaviorConfig {
                purchase_offset: Some(1.0),
                ..BehaviorConfig::default()
            },
            agent: AgentConfig {
                kind,
                hidden: vec![8, 4],
                batch_size: 8,
                ..AgentConfig::default()
            },
            run: RunConfig {
                sessions: 20,
                warmup_sessions: 5,
                session_seed: 9,
                metrics_window: 7,
                record_wall_time: false,
            },
        }
    }

    #[test]
    fn one_session_one_row() {
        let mut cfg = tiny_config(AgentKind::Random);
        cfg.run.sessions = 1;
        let (rows, _) = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].session, 1);
    }

    #[test]
    fn moving_average_is_recomputable() {
        let (rows, _) = run_experiment(&tiny_config(AgentKind::DpgFbe)).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let lo = (i + 1).saturating_sub(7);
            let w = &rows[lo..=i];
            let avg = w.iter().map(|r| r.transaction_amount).sum::<f64>() / w.len() as f64;
            assert!((avg - row.moving_avg).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_round_trips() {
        let (rows, _) = run_experiment(&tiny_config(AgentKind::CascadeUcb1)).unwrap();
        let text = metrics_csv(&rows);
        assert!(text.starts_with("session,transaction_amount,terminal,length,moving_avg,wall_ms\n"));
        assert_eq!(parse_metrics_csv(&text).unwrap(), rows);
    }

    #[test]
    fn empty_sweep_is_rejected() {
        let cfg = tiny_config(AgentKind::Random);
        assert!(matches!(sweep(&cfg, "agent.gamma", &[]), Err(Error::Config { .. })));
        assert!(matches!(
            sweep(&cfg, "agent.no_such_field", &["1".into()]),
            Err(Error::Config { .. })
        ));
    }
}
