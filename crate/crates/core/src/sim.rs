//! Mini-slot URLLC puncturing environment.
//!
//! Time advances one mini-slot per [`Simulator::step`]. Sub-frames hold
//! `slots_per_subframe` mini-slots; at each sub-frame start every resource is
//! independently filled with a background transmission of random length and
//! every resource gets a fresh Rayleigh-squared power gain. Before the agent
//! acts in a slot, [`Simulator::maybe_spawn_request`] may pose a puncturing
//! request. Action `0` waits, action `k` in `1..=N` places the pending request
//! on resource `k - 1`, voiding whatever transmission runs there.

use alloc::vec::Vec;
use rand::Rng;

use crate::rng::LabRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(default, deny_unknown_fields)
)]
pub struct SimConfig {
    pub n_resources: usize,
    pub slots_per_subframe: usize,
    /// Probability that a resource carries a transmission in a sub-frame.
    pub p_occupy: f64,
    pub occupy_len_min: usize,
    pub occupy_len_max: usize,
    /// Per-slot probability of a request arriving while none is pending.
    pub p_request: f64,
    /// Fraction of arrivals that are critical.
    pub p_critical: f64,
    pub rayleigh_sigma: f64,
    pub w_capacity: f64,
    pub w_discard: f64,
    pub w_discard_critical: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_resources: 2,
            slots_per_subframe: 7,
            p_occupy: 0.7,
            occupy_len_min: 5,
            occupy_len_max: 7,
            p_request: 0.1,
            p_critical: 0.0,
            rayleigh_sigma: 1.0,
            w_capacity: 1.0,
            w_discard: 5.0,
            w_discard_critical: 5.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        let probability = |p: f64| (0.0..=1.0).contains(&p);
        if self.n_resources == 0 {
            return bad("n_resources must be at least 1");
        }
        if self.slots_per_subframe < 2 {
            return bad("slots_per_subframe must be at least 2");
        }
        if !(probability(self.p_occupy)
            && probability(self.p_request)
            && probability(self.p_critical))
        {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.occupy_len_min == 0
            || self.occupy_len_min > self.occupy_len_max
            || self.occupy_len_max > self.slots_per_subframe
        {
            return bad("need 1 <= occupy_len_min <= occupy_len_max <= slots_per_subframe");
        }
        if !(self.rayleigh_sigma.is_finite() && self.rayleigh_sigma > 0.0) {
            return bad("rayleigh_sigma must be positive");
        }
        if ![self.w_capacity, self.w_discard, self.w_discard_critical]
            .iter()
            .all(|w| w.is_finite())
        {
            return bad("reward weights must be finite");
        }
        Ok(())
    }

    /// Wait plus one puncture action per resource.
    pub fn n_actions(&self) -> usize {
        self.n_resources + 1
    }

    /// Length of the observation vector.
    pub fn state_dim(&self) -> usize {
        3 + self.n_resources
    }

    /// Weighted sum of the capacity and discard reward components.
    pub fn weigh(&self, capacity: f64, discard: f64, discard_critical: f64) -> f64 {
        self.w_capacity * capacity
            + self.w_discard * discard
            + self.w_discard_critical * discard_critical
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResourceState {
    /// Mini-slots left in the ongoing transmission, 0 when free.
    pub remaining_slots: usize,
    /// Power gain `|h|^2` for the current sub-frame.
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RequestKind {
    #[default]
    None,
    Normal,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RequestState {
    pub kind: RequestKind,
    pub age_slots: usize,
}

impl RequestState {
    pub fn is_pending(&self) -> bool {
        self.kind != RequestKind::None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub slot_index: usize,
    pub subframe_index: u64,
    pub resources: Vec<ResourceState>,
    pub request: RequestState,
}

impl SimState {
    fn empty(n_resources: usize) -> Self {
        Self {
            slot_index: 0,
            subframe_index: 0,
            resources: alloc::vec![ResourceState::default(); n_resources],
            request: RequestState::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub r_capacity: f64,
    pub r_discard: f64,
    pub r_discard_critical: f64,
    pub r_total: f64,
}

/// What happened during one step, for the episode counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventFlags {
    /// A pending request was placed on a resource.
    pub scheduled: Option<RequestKind>,
    /// The placement voided an ongoing transmission.
    pub tx_interrupted: bool,
    /// A pending request timed out and was discarded.
    pub missed: Option<RequestKind>,
}

/// Inverse-transform Rayleigh draw squared: `(sigma * sqrt(-2 ln u))^2` for `u` in (0, 1].
pub fn gain_from_uniform(u: f64, sigma: f64) -> f64 {
    let magnitude = sigma * libm::sqrt(-2.0 * libm::log(u));
    magnitude * magnitude
}

/// Rayleigh-squared power gain with scale `sigma`; mean `2 sigma^2`.
pub fn sample_channel_gain<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    // random() is on [0, 1); flip it to (0, 1] so ln never sees 0.
    let u = 1.0 - rng.random::<f64>();
    gain_from_uniform(u, sigma)
}

#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: SimConfig,
    state: SimState,
    rng: LabRng,
}

impl Simulator {
    /// New environment positioned at the first slot of a freshly filled sub-frame.
    pub fn new(cfg: SimConfig, rng: LabRng) -> Result<Self> {
        cfg.validate()?;
        let state = SimState::empty(cfg.n_resources);
        let mut sim = Self { cfg, state, rng };
        sim.begin_subframe();
        Ok(sim)
    }

    /// Wraps an explicitly constructed state, e.g. a probe situation.
    pub fn with_state(cfg: SimConfig, state: SimState, rng: LabRng) -> Result<Self> {
        cfg.validate()?;
        if state.resources.len() != cfg.n_resources {
            return Err(Error::ShapeMismatch {
                expected: cfg.n_resources,
                got: state.resources.len(),
            });
        }
        if state.slot_index >= cfg.slots_per_subframe {
            return Err(Error::InvalidConfig(
                "slot_index outside the sub-frame".into(),
            ));
        }
        Ok(Self { cfg, state, rng })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    /// Discards the current sub-frame and starts over at slot 0. Returns how
    /// many transmissions the fresh sub-frame started.
    pub fn reset(&mut self) -> usize {
        self.state = SimState::empty(self.cfg.n_resources);
        self.begin_subframe()
    }

    /// Refills occupancy and redraws all gains. Returns how many
    /// transmissions were started.
    pub fn begin_subframe(&mut self) -> usize {
        debug_assert_eq!(self.state.slot_index, 0);
        let cfg = &self.cfg;
        let mut started = 0;
        for res in &mut self.state.resources {
            res.remaining_slots = if self.rng.random_bool(cfg.p_occupy) {
                started += 1;
                self.rng
                    .random_range(cfg.occupy_len_min..=cfg.occupy_len_max)
            } else {
                0
            };
            res.gain = sample_channel_gain(&mut self.rng, cfg.rayleigh_sigma);
        }
        started
    }

    /// Poses a new request with probability `p_request` unless one is already
    /// pending. Returns the kind of the new arrival, if any.
    pub fn maybe_spawn_request(&mut self) -> Option<RequestKind> {
        if self.state.request.is_pending() || !self.rng.random_bool(self.cfg.p_request) {
            return None;
        }
        let kind = if self.rng.random_bool(self.cfg.p_critical) {
            RequestKind::Critical
        } else {
            RequestKind::Normal
        };
        self.state.request = RequestState { kind, age_slots: 0 };
        Some(kind)
    }

    /// Applies `action` to the current slot and advances time by one slot.
    /// Crossing into a new sub-frame refills it immediately.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let n = self.cfg.n_resources;
        if action > n {
            return Err(Error::ActionOutOfRange { action, max: n });
        }
        let mut flags = EventFlags::default();
        let pending = self.state.request.kind;

        if action > 0 && pending != RequestKind::None {
            let res = &mut self.state.resources[action - 1];
            if res.remaining_slots > 0 {
                flags.tx_interrupted = true;
                res.remaining_slots = 0;
            }
            flags.scheduled = Some(pending);
            self.state.request = RequestState::default();
        }

        let r_capacity: f64 = self
            .state
            .resources
            .iter()
            .filter(|r| r.remaining_slots > 0)
            .map(|r| libm::log1p(r.gain))
            .sum();

        let last_slot = self.state.slot_index + 1 == self.cfg.slots_per_subframe;
        let (mut r_discard, mut r_discard_critical) = (0.0, 0.0);
        match self.state.request.kind {
            RequestKind::Critical => {
                r_discard_critical = -1.0;
                flags.missed = Some(RequestKind::Critical);
                self.state.request = RequestState::default();
            }
            RequestKind::Normal if last_slot => {
                r_discard = -1.0;
                flags.missed = Some(RequestKind::Normal);
                self.state.request = RequestState::default();
            }
            RequestKind::Normal => self.state.request.age_slots += 1,
            RequestKind::None => {}
        }

        for res in &mut self.state.resources {
            res.remaining_slots = res.remaining_slots.saturating_sub(1);
        }

        let reward = RewardBreakdown {
            r_capacity,
            r_discard,
            r_discard_critical,
            r_total: self.cfg.weigh(r_capacity, r_discard, r_discard_critical),
        };

        let mut started = 0;
        if last_slot {
            self.state.slot_index = 0;
            self.state.subframe_index += 1;
            started = self.begin_subframe();
        } else {
            self.state.slot_index += 1;
        }
        Ok(StepOutcome {
            reward,
            flags,
            started,
        })
    }

    pub fn observe(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.cfg.state_dim()];
        observe_into(&self.state, &self.cfg, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: RewardBreakdown,
    pub flags: EventFlags,
    /// Transmissions started by a sub-frame refill triggered by this step.
    pub started: usize,
}

/// Writes the state vector: relative slot position, request flag, critical
/// flag, then each resource's relative remaining occupation.
pub fn observe_into(state: &SimState, cfg: &SimConfig, out: &mut [f64]) {
    let slots = cfg.slots_per_subframe as f64;
    out[0] = state.slot_index as f64 / (slots - 1.0);
    out[1] = if state.request.is_pending() { 1.0 } else { 0.0 };
    out[2] = if state.request.kind == RequestKind::Critical {
        1.0
    } else {
        0.0
    };
    for (o, r) in out[3..].iter_mut().zip(&state.resources) {
        *o = r.remaining_slots as f64 / slots;
    }
}
