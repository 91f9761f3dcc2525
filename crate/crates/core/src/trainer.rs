//! Training protocol, the hand-written scheduling baseline and the two
//! post-training probes (reaction to an unseen critical event, and how many
//! online updates it takes before the agent first tries puncturing it).

use alloc::vec::Vec;
use rand::Rng;

use crate::agents::{epsilon_at, point_values, AgentKind, AgentSpec, Learner};
use crate::nn::{split_gaussian, HeadKind, NetworkParams};
use crate::rng::{stream, ACTION_STREAM, ENV_STREAM, INIT_STREAM};
use crate::sim::{
    RequestKind, RequestState, ResourceState, SimConfig, SimState, Simulator, StepOutcome,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(default, deny_unknown_fields)
)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub seed: u64,
    pub agent: AgentSpec,
    pub sim: SimConfig,
    /// Keep a parameter snapshot every this many episodes; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 30,
            steps_per_episode: 3000,
            seed: 0,
            agent: AgentSpec::default(),
            sim: SimConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_episode == 0 {
            return Err(Error::InvalidConfig(
                "steps_per_episode must be at least 1".into(),
            ));
        }
        self.agent.validate()?;
        self.sim.validate()
    }

    /// Global step at which epsilon reaches zero.
    pub fn epsilon_decay_steps(&self) -> u64 {
        let total = (self.episodes * self.steps_per_episode) as f64;
        libm::round(self.agent.epsilon_decay_fraction * total) as u64
    }
}

/// Raw per-episode event counts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeCounters {
    pub steps: usize,
    pub sum_reward: f64,
    pub transmissions_started: usize,
    pub tx_interrupted: usize,
    /// Requests placed on a resource.
    pub scheduled: usize,
    pub scheduled_critical: usize,
    /// Requests that arrived and were resolved (scheduled or missed) within
    /// the episode. A request still pending at truncation is not counted.
    pub arrived: usize,
    pub arrived_critical: usize,
    pub missed: usize,
    pub missed_critical: usize,
}

impl EpisodeCounters {
    fn arrival(&mut self, kind: Option<RequestKind>) {
        match kind {
            Some(RequestKind::Critical) => {
                self.arrived += 1;
                self.arrived_critical += 1;
            }
            Some(RequestKind::Normal) => self.arrived += 1,
            _ => {}
        }
    }

    fn record(&mut self, out: &StepOutcome) {
        self.steps += 1;
        self.sum_reward += out.reward.r_total;
        self.transmissions_started += out.started;
        if out.flags.tx_interrupted {
            self.tx_interrupted += 1;
        }
        if let Some(kind) = out.flags.scheduled {
            self.scheduled += 1;
            if kind == RequestKind::Critical {
                self.scheduled_critical += 1;
            }
        }
        if let Some(kind) = out.flags.missed {
            self.missed += 1;
            if kind == RequestKind::Critical {
                self.missed_critical += 1;
            }
        }
    }

    fn truncate(&mut self, pending: RequestKind) {
        match pending {
            RequestKind::Critical => {
                self.arrived -= 1;
                self.arrived_critical -= 1;
            }
            RequestKind::Normal => self.arrived -= 1,
            RequestKind::None => {}
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    /// Zero-based episode index.
    pub episode: usize,
    pub sum_reward: f64,
    /// Interrupted transmissions over transmissions started.
    pub tx_interrupted_ratio: f64,
    /// Missed requests over resolved arrivals.
    pub urllc_missed_ratio: f64,
    pub critical_missed_ratio: f64,
    pub epsilon_end: f64,
    pub counters: EpisodeCounters,
}

impl EpisodeMetrics {
    fn from_counters(episode: usize, epsilon_end: f64, c: EpisodeCounters) -> Self {
        Self {
            episode,
            sum_reward: c.sum_reward,
            tx_interrupted_ratio: ratio(c.tx_interrupted, c.transmissions_started),
            urllc_missed_ratio: ratio(c.missed, c.arrived),
            critical_missed_ratio: ratio(c.missed_critical, c.arrived_critical),
            epsilon_end,
            counters: c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Episodes completed when the snapshot was taken.
    pub episode: usize,
    pub step: u64,
    pub params: NetworkParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub agent: AgentKind,
    pub seed: u64,
    pub episodes: Vec<EpisodeMetrics>,
    pub snapshot: NetworkParams,
    pub steps: u64,
    pub checkpoints: Vec<Checkpoint>,
    /// Reaction probe evaluated on the final snapshot.
    pub reaction: ReactionProbe,
}

/// Starts an episode on a fresh sub-frame; returns the first observation.
fn begin_episode(env: &mut Simulator, c: &mut EpisodeCounters) -> Vec<f64> {
    c.transmissions_started += env.reset();
    c.arrival(env.maybe_spawn_request());
    env.observe()
}

/// Steps the environment, lets the next request arrive and returns the
/// outcome with the next observation.
fn advance(
    env: &mut Simulator,
    c: &mut EpisodeCounters,
    action: usize,
) -> Result<(StepOutcome, Vec<f64>)> {
    let out = env.step(action)?;
    c.record(&out);
    c.arrival(env.maybe_spawn_request());
    Ok((out, env.observe()))
}

/// Online training: one forward pass, action, environment step, single
/// transition loss, Adam step and Polyak update per environment step.
pub fn train(cfg: &TrainConfig) -> Result<RunResult> {
    cfg.validate()?;
    let widths = cfg.agent.widths(cfg.sim.state_dim(), cfg.sim.n_actions());
    let init = NetworkParams::init_uniform(&widths, &mut stream(cfg.seed, INIT_STREAM))?;
    train_from(cfg, init)
}

/// [`train`] starting from the given online parameters.
pub fn train_from(cfg: &TrainConfig, init: NetworkParams) -> Result<RunResult> {
    cfg.validate()?;
    let spec = &cfg.agent;
    let expected_out = spec.kind.head().output_dim(cfg.sim.n_actions());
    if init.input_dim() != cfg.sim.state_dim() || init.output_dim() != expected_out {
        return Err(Error::ShapeMismatch {
            expected: expected_out,
            got: init.output_dim(),
        });
    }
    let mut learner = Learner::new(spec.clone(), init)?;
    let mut env = Simulator::new(cfg.sim.clone(), stream(cfg.seed, ENV_STREAM))?;
    let mut action_rng = stream(cfg.seed, ACTION_STREAM);
    let decay_steps = cfg.epsilon_decay_steps();
    let uses_epsilon = spec.kind.head() == HeadKind::Deterministic;

    let mut rows = Vec::with_capacity(cfg.episodes);
    let mut checkpoints = Vec::new();
    let mut global_step = 0u64;
    for episode in 0..cfg.episodes {
        let mut c = EpisodeCounters::default();
        let mut epsilon = 0.0;
        let mut s = begin_episode(&mut env, &mut c);
        for step in 0..cfg.steps_per_episode {
            let diverged = |what| Error::Diverged {
                episode,
                step,
                what,
            };
            if uses_epsilon {
                epsilon = epsilon_at(global_step, decay_steps, spec.epsilon_initial);
            }
            let acted = learner.act(&s, epsilon, &mut action_rng)?;
            if !acted.pass.output().iter().all(|v| v.is_finite()) {
                return Err(diverged("non-finite network output"));
            }
            let (out, s_next) = advance(&mut env, &mut c, acted.decision.action)?;
            let loss =
                learner.learn(&acted, out.reward.r_total, &s_next, false, &mut action_rng)?;
            if !loss.is_finite() {
                return Err(diverged("non-finite loss"));
            }
            global_step += 1;
            s = s_next;
        }
        c.truncate(env.state().request.kind);
        rows.push(EpisodeMetrics::from_counters(episode, epsilon, c));
        if cfg.checkpoint_every > 0 && (episode + 1) % cfg.checkpoint_every == 0 {
            checkpoints.push(Checkpoint {
                episode: episode + 1,
                step: global_step,
                params: learner.online().clone(),
            });
        }
    }
    if !learner.online().is_finite() {
        return Err(Error::Diverged {
            episode: cfg.episodes,
            step: 0,
            what: "non-finite parameters",
        });
    }
    let snapshot = learner.into_online();
    let reaction = probe_reaction(&snapshot, spec.kind, &cfg.sim)?;
    Ok(RunResult {
        agent: spec.kind,
        seed: cfg.seed,
        episodes: rows,
        snapshot,
        steps: global_step,
        checkpoints,
        reaction,
    })
}

/// Hand-written scheduling rule used as the reference line.
///
/// Critical requests go to the resource with the least remaining occupation
/// (a free one if any, lowest index on ties). A normal request takes a free
/// resource right away; otherwise it waits while some transmission ends
/// before the sub-frame does, and at the latest possible moment punctures the
/// resource with the least remaining occupation.
pub fn manual_action(state: &SimState, cfg: &SimConfig) -> usize {
    let least_remaining = || {
        let mut best = 0;
        for (i, r) in state.resources.iter().enumerate() {
            if r.remaining_slots < state.resources[best].remaining_slots {
                best = i;
            }
        }
        best + 1
    };
    match state.request.kind {
        RequestKind::None => 0,
        RequestKind::Critical => least_remaining(),
        RequestKind::Normal => {
            if let Some(free) = state.resources.iter().position(|r| r.remaining_slots == 0) {
                return free + 1;
            }
            let slots_left = cfg.slots_per_subframe - state.slot_index;
            if state
                .resources
                .iter()
                .any(|r| r.remaining_slots < slots_left)
            {
                0
            } else {
                least_remaining()
            }
        }
    }
}

/// Evaluates [`manual_action`] without learning. Uses the same environment
/// stream as [`train`] for the given seed.
pub fn manual_baseline(
    sim: &SimConfig,
    episodes: usize,
    steps_per_episode: usize,
    seed: u64,
) -> Result<Vec<EpisodeMetrics>> {
    sim.validate()?;
    let mut env = Simulator::new(sim.clone(), stream(seed, ENV_STREAM))?;
    let mut rows = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut c = EpisodeCounters::default();
        begin_episode(&mut env, &mut c);
        for _ in 0..steps_per_episode {
            let action = manual_action(env.state(), env.config());
            advance(&mut env, &mut c, action)?;
        }
        c.truncate(env.state().request.kind);
        rows.push(EpisodeMetrics::from_counters(episode, 0.0, c));
    }
    Ok(rows)
}

/// The unseen situation: a critical request in the first mini-slot with every
/// resource fully occupied, gains at the Rayleigh-squared mean `2 sigma^2`.
pub fn probe_state(cfg: &SimConfig) -> SimState {
    let gain = 2.0 * cfg.rayleigh_sigma * cfg.rayleigh_sigma;
    SimState {
        slot_index: 0,
        subframe_index: 0,
        resources: alloc::vec![
            ResourceState { remaining_slots: cfg.slots_per_subframe, gain };
            cfg.n_resources
        ],
        request: RequestState {
            kind: RequestKind::Critical,
            age_slots: 0,
        },
    }
}

/// Network evaluation on the probe state.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionProbe {
    /// Point values (Q, or means for Gaussian heads), wait first.
    pub values: Vec<f64>,
    pub argmax: usize,
    /// Wait value over the mean puncture value; `None` when that mean is ~0.
    pub md: Option<f64>,
    pub logstd_wait: Option<f64>,
    pub mean_logstd_punct: Option<f64>,
}

impl ReactionProbe {
    /// Relative preference for waiting, `md - 1`.
    pub fn excess(&self) -> Option<f64> {
        self.md.map(|m| m - 1.0)
    }
}

/// Wait value divided by the mean of the puncture values.
pub fn magnitude_difference(values: &[f64]) -> Option<f64> {
    let punct = &values[1..];
    let denom = punct.iter().sum::<f64>() / punct.len() as f64;
    if denom.abs() < 1e-12 {
        None
    } else {
        Some(values[0] / denom)
    }
}

pub fn probe_reaction(
    params: &NetworkParams,
    kind: AgentKind,
    cfg: &SimConfig,
) -> Result<ReactionProbe> {
    let mut s = alloc::vec![0.0; cfg.state_dim()];
    crate::sim::observe_into(&probe_state(cfg), cfg, &mut s);
    let pass = params.forward(&s)?;
    let out = pass.output();
    if out.len() != kind.head().output_dim(cfg.n_actions()) {
        return Err(Error::ShapeMismatch {
            expected: kind.head().output_dim(cfg.n_actions()),
            got: out.len(),
        });
    }
    let values = point_values(kind, out).to_vec();
    let (logstd_wait, mean_logstd_punct) = match kind.head() {
        HeadKind::Deterministic => (None, None),
        HeadKind::Gaussian => {
            let (_, ls) = split_gaussian(out);
            let punct = ls[1..].iter().sum::<f64>() / (ls.len() - 1) as f64;
            (Some(ls[0]), Some(punct))
        }
    };
    Ok(ReactionProbe {
        argmax: crate::agents::argmax(&values),
        md: magnitude_difference(&values),
        values,
        logstd_wait,
        mean_logstd_punct,
    })
}

/// How the wait transition used during adaptation ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum ProbeTransition {
    /// One-step episode: the target is the reward alone.
    #[default]
    Terminal,
    /// The target bootstraps from the target network at the next slot.
    Bootstrapped,
}

/// Outcome of one adaptation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Adaptation {
    /// Confrontations up to and including the first puncture, or the cap.
    pub steps: usize,
    pub explored: bool,
}

/// Confronts the agent with the probe state until it chooses to puncture,
/// training on the wait transition in between. The agent
/// explores with its own mechanism at epsilon 0. Starts from a fresh
/// optimizer and a target copy of `params`.
pub fn probe_adaptation<R: Rng + ?Sized>(
    params: &NetworkParams,
    spec: &AgentSpec,
    cfg: &SimConfig,
    cap: usize,
    transition: ProbeTransition,
    rng: &mut R,
) -> Result<Adaptation> {
    let terminal = transition == ProbeTransition::Terminal;
    let probe = probe_state(cfg);
    let mut env = Simulator::with_state(cfg.clone(), probe, stream(0, "probe-env"))?;
    let s = env.observe();
    let out = env.step(0)?;
    let s_next = env.observe();
    let r = out.reward.r_total;

    let mut learner = Learner::new(spec.clone(), params.clone())?;
    for n in 1..=cap {
        let acted = learner.act(&s, 0.0, rng)?;
        if acted.decision.action != 0 {
            return Ok(Adaptation {
                steps: n,
                explored: true,
            });
        }
        learner.learn(&acted, r, &s_next, terminal, rng)?;
    }
    Ok(Adaptation {
        steps: cap,
        explored: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: AgentKind) -> TrainConfig {
        TrainConfig {
            episodes: 2,
            steps_per_episode: 200,
            seed: 3,
            agent: AgentSpec {
                hidden_widths: alloc::vec![8, 8],
                ..AgentSpec::with_kind(kind)
            },
            ..TrainConfig::default()
        }
    }

    fn state(resources: &[usize], slot: usize, kind: RequestKind) -> SimState {
        SimState {
            slot_index: slot,
            subframe_index: 0,
            resources: resources
                .iter()
                .map(|&remaining_slots| ResourceState {
                    remaining_slots,
                    gain: 1.0,
                })
                .collect(),
            request: RequestState { kind, age_slots: 0 },
        }
    }

    #[test]
    fn zero_episodes_leave_initial_snapshot() {
        let cfg = TrainConfig {
            episodes: 0,
            ..tiny(AgentKind::Eg)
        };
        let run = train(&cfg).unwrap();
        assert!(run.episodes.is_empty());
        let widths = cfg.agent.widths(5, 3);
        let init =
            NetworkParams::init_uniform(&widths, &mut stream(cfg.seed, INIT_STREAM)).unwrap();
        assert_eq!(run.snapshot, init);
    }

    #[test]
    fn null_environment_never_moves_parameters() {
        let mut cfg = tiny(AgentKind::Eg);
        cfg.sim.p_occupy = 0.0;
        cfg.sim.p_request = 0.0;
        // A zero network has zero TD error on all-zero rewards, so every
        // Adam step sees a zero gradient.
        let zero = NetworkParams::zeros(&cfg.agent.widths(5, 3)).unwrap();
        let run = train_from(&cfg, zero.clone()).unwrap();
        assert!(run.episodes.iter().all(|e| e.sum_reward == 0.0));
        assert_eq!(run.snapshot, zero);
    }

    #[test]
    fn training_is_deterministic() {
        for kind in AgentKind::ALL {
            let a = train(&tiny(kind)).unwrap();
            let b = train(&tiny(kind)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn manual_rule_cases() {
        let cfg = SimConfig::default();
        assert_eq!(
            manual_action(&state(&[4, 0], 1, RequestKind::Normal), &cfg),
            2
        );
        assert_eq!(
            manual_action(&state(&[5, 7], 0, RequestKind::Normal), &cfg),
            0
        );
        assert_eq!(
            manual_action(&state(&[3, 6], 2, RequestKind::Critical), &cfg),
            1
        );
        assert_eq!(
            manual_action(&state(&[6, 3], 2, RequestKind::Critical), &cfg),
            2
        );
        assert_eq!(
            manual_action(&state(&[1, 1], 6, RequestKind::Normal), &cfg),
            1
        );
        assert_eq!(
            manual_action(&state(&[2, 2], 5, RequestKind::Normal), &cfg),
            1
        );
        assert_eq!(
            manual_action(&state(&[2, 2], 4, RequestKind::Normal), &cfg),
            0
        );
        assert_eq!(
            manual_action(&state(&[2, 2], 4, RequestKind::None), &cfg),
            0
        );
    }

    #[test]
    fn md_arithmetic() {
        assert_eq!(magnitude_difference(&[4.0, 1.0, 3.0]), Some(2.0));
        assert_eq!(magnitude_difference(&[2.5, 2.5, 2.5]), Some(1.0));
        assert_eq!(magnitude_difference(&[2.5, 1.0, -1.0]), None);
    }

    #[test]
    fn probe_state_observation() {
        let cfg = SimConfig::default();
        let mut s = [0.0; 5];
        crate::sim::observe_into(&probe_state(&cfg), &cfg, &mut s);
        assert_eq!(s, [0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn eg_reaction_has_no_logstd() {
        let cfg = tiny(AgentKind::Eg);
        let run = train(&cfg).unwrap();
        assert!(run.reaction.logstd_wait.is_none());
        assert!(run.reaction.mean_logstd_punct.is_none());
        let run = train(&tiny(AgentKind::Vb)).unwrap();
        assert!(run.reaction.logstd_wait.is_some());
    }

    #[test]
    fn adaptation_respects_cap() {
        let cfg = tiny(AgentKind::Vb);
        let run = train(&cfg).unwrap();
        let mut rng = stream(1, "p");
        let out = probe_adaptation(
            &run.snapshot,
            &cfg.agent,
            &cfg.sim,
            5,
            ProbeTransition::Terminal,
            &mut rng,
        )
        .unwrap();
        assert!(out.steps <= 5);
    }

    #[test]
    fn adaptation_counts_first_confrontation() {
        // Zero network, Gaussian head: sampled values are pure noise, so some
        // seed punctures immediately.
        let spec = AgentSpec {
            hidden_widths: alloc::vec![4],
            ..AgentSpec::with_kind(AgentKind::Vb)
        };
        let sim = SimConfig::default();
        let net = NetworkParams::zeros(&spec.widths(5, 3)).unwrap();
        let found = (0..20).any(|seed| {
            let mut rng = stream(seed, "p");
            probe_adaptation(&net, &spec, &sim, 1, ProbeTransition::Terminal, &mut rng).unwrap()
                == Adaptation {
                    steps: 1,
                    explored: true,
                }
        });
        assert!(found);
    }

    #[test]
    fn bootstrapping_is_irrelevant_without_discount() {
        let mut cfg = tiny(AgentKind::Eg);
        cfg.agent.gamma = 0.0;
        let run = train(&cfg).unwrap();
        let adapt = |t| {
            probe_adaptation(
                &run.snapshot,
                &cfg.agent,
                &cfg.sim,
                300,
                t,
                &mut stream(4, "p"),
            )
            .unwrap()
        };
        assert_eq!(
            adapt(ProbeTransition::Terminal),
            adapt(ProbeTransition::Bootstrapped)
        );
    }

    #[test]
    fn counters_balance() {
        let sim = SimConfig {
            p_critical: 0.3,
            ..SimConfig::default()
        };
        for row in manual_baseline(&sim, 3, 1000, 5).unwrap() {
            let c = row.counters;
            assert_eq!(c.missed + c.scheduled, c.arrived);
            assert!(c.tx_interrupted <= c.scheduled);
            assert_eq!(c.missed, 0);
        }
    }
}
