//! Exploration agents and their per-transition losses.
//!
//! * `Eg`: deterministic head, epsilon-greedy action choice, squared TD loss
//!   on the taken action.
//! * `Vb`: Gaussian head, actions chosen by argmax of a reparameterized
//!   sample, TD loss plus `w_lp` times the summed log densities of the sample.
//! * `Me`: Gaussian head as `Vb`, TD loss plus a clipped-softmax penalty that
//!   pulls the sampled action values toward equal magnitude.
//!
//! Loss functions return the loss together with its gradient with respect to
//! every raw network output, ready for [`NetworkParams::backward`].

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::nn::{
    gaussian_log_density, gaussian_log_density_partials, sample_gaussian_head, split_gaussian,
    Adam, ForwardPass, GaussianSample, HeadKind, NetworkParams, TargetPair,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "lowercase")
)]
pub enum AgentKind {
    Eg,
    Vb,
    Me,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Eg, AgentKind::Vb, AgentKind::Me];

    pub fn head(self) -> HeadKind {
        match self {
            AgentKind::Eg => HeadKind::Deterministic,
            AgentKind::Vb | AgentKind::Me => HeadKind::Gaussian,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Eg => "eg",
            AgentKind::Vb => "vb",
            AgentKind::Me => "me",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "eg" | "EG" => Some(AgentKind::Eg),
            "vb" | "VB" => Some(AgentKind::Vb),
            "me" | "ME" => Some(AgentKind::Me),
            _ => None,
        }
    }
}

impl core::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sign of the softmax penalty in the maximum-entropy loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum PenaltySign {
    /// `L_TD - w_me * sum log sm`: minimized by equal action values.
    #[default]
    UniformPrior,
    /// `L_TD + w_me * sum log sm`: the literal sign, which favors one action.
    AsWritten,
}

/// Which Gaussian draw the TD prediction and penalties of a stochastic head
/// are evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum LossNoise {
    /// The draw that selected the action.
    Selection,
    /// An independent draw taken when the loss is formed.
    #[default]
    Fresh,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(default, deny_unknown_fields)
)]
pub struct AgentSpec {
    pub kind: AgentKind,
    pub epsilon_initial: f64,
    /// Fraction of all training steps after which epsilon reaches 0.
    pub epsilon_decay_fraction: f64,
    pub w_lp: f64,
    pub w_me: f64,
    pub softmax_clip_low: f64,
    pub me_sign: PenaltySign,
    pub loss_noise: LossNoise,
    pub gamma: f64,
    pub learning_rate: f64,
    pub target_tau: f64,
    pub hidden_widths: Vec<usize>,
}

impl Default for AgentSpec {
    fn default() -> Self {
        Self {
            kind: AgentKind::Eg,
            epsilon_initial: 0.99,
            epsilon_decay_fraction: 0.5,
            w_lp: 1e-2,
            w_me: core::f64::consts::E,
            softmax_clip_low: 1e-3,
            me_sign: PenaltySign::UniformPrior,
            loss_noise: LossNoise::Fresh,
            gamma: 0.99,
            learning_rate: 1e-4,
            target_tau: 1e-4,
            hidden_widths: vec![128, 128],
        }
    }
}

impl AgentSpec {
    pub fn with_kind(kind: AgentKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(0.0..=1.0).contains(&self.epsilon_initial) {
            return bad("epsilon_initial must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return bad("epsilon_decay_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.softmax_clip_low > 0.0 && self.softmax_clip_low < 1.0) {
            return bad("softmax_clip_low must lie in (0, 1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.target_tau) {
            return bad("target_tau must lie in [0, 1]");
        }
        if !(self.w_lp.is_finite() && self.w_me.is_finite()) {
            return bad("penalty weights must be finite");
        }
        if self.hidden_widths.contains(&0) {
            return bad("hidden widths must be nonzero");
        }
        Ok(())
    }

    /// Layer widths for a network on `state_dim` inputs and `n_actions` actions.
    pub fn widths(&self, state_dim: usize, n_actions: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_widths.len() + 2);
        w.push(state_dim);
        w.extend_from_slice(&self.hidden_widths);
        w.push(self.kind.head().output_dim(n_actions));
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub terminal: bool,
}

/// Linear decay from `epsilon_initial` to exactly 0 at `total_decay_steps`.
pub fn epsilon_at(step: u64, total_decay_steps: u64, epsilon_initial: f64) -> f64 {
    if total_decay_steps == 0 || step >= total_decay_steps {
        return 0.0;
    }
    let eps = epsilon_initial * (1.0 - step as f64 / total_decay_steps as f64);
    eps.max(0.0)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Chosen action plus, for Gaussian heads, the sample that decided it.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: usize,
    pub sample: Option<GaussianSample>,
}

/// Picks an action from a raw head output. Epsilon only applies to `Eg`;
/// Gaussian agents explore through their own sampling.
pub fn select_action<R: Rng + ?Sized>(
    kind: AgentKind,
    output: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Decision {
    match kind.head() {
        HeadKind::Deterministic => {
            let action = if epsilon > 0.0 && rng.random_bool(epsilon.min(1.0)) {
                rng.random_range(0..output.len())
            } else {
                argmax(output)
            };
            Decision {
                action,
                sample: None,
            }
        }
        HeadKind::Gaussian => {
            let (mu, log_sigma) = split_gaussian(output);
            let sample = sample_gaussian_head(mu, log_sigma, rng);
            Decision {
                action: argmax(&sample.q),
                sample: Some(sample),
            }
        }
    }
}

/// Action values a head output stands for: the Q vector itself, or the means.
pub fn point_values(kind: AgentKind, output: &[f64]) -> &[f64] {
    match kind.head() {
        HeadKind::Deterministic => output,
        HeadKind::Gaussian => split_gaussian(output).0,
    }
}

/// `(prediction, bootstrap_target)` of the TD error for one transition. The
/// prediction is the online value of the taken action (the sampled value for
/// Gaussian heads); the target bootstraps from the target network's best
/// point value at `s_next` and is a constant for differentiation.
pub fn td_components(
    spec: &AgentSpec,
    online_output: &[f64],
    decision: &Decision,
    target_output_next: &[f64],
    r: f64,
    terminal: bool,
) -> (f64, f64) {
    let prediction = match &decision.sample {
        Some(sample) => sample.q[decision.action],
        None => online_output[decision.action],
    };
    let gamma = if terminal { 0.0 } else { spec.gamma };
    let next = point_values(spec.kind, target_output_next);
    let best_next = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (prediction, r + gamma * best_next)
}

/// Squared TD error and its derivative with respect to the prediction.
pub fn td_loss(prediction: f64, bootstrap_target: f64) -> (f64, f64) {
    let diff = prediction - bootstrap_target;
    (diff * diff, 2.0 * diff)
}

/// A loss value and its gradient with respect to each raw network output.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub output_grad: Vec<f64>,
}

pub fn loss_eg(
    prediction: f64,
    bootstrap_target: f64,
    action: usize,
    n_actions: usize,
) -> LossEval {
    let (loss, d) = td_loss(prediction, bootstrap_target);
    let mut output_grad = vec![0.0; n_actions];
    output_grad[action] = d;
    LossEval { loss, output_grad }
}

/// Gradient layout for Gaussian heads: `[d mu_0.., d log_sigma_0..]`.
fn gaussian_td(
    prediction: f64,
    bootstrap_target: f64,
    action: usize,
    log_sigma: &[f64],
    noise: &[f64],
) -> LossEval {
    let n = log_sigma.len();
    let (loss, d) = td_loss(prediction, bootstrap_target);
    let mut output_grad = vec![0.0; 2 * n];
    output_grad[action] = d;
    output_grad[n + action] = d * libm::exp(log_sigma[action]) * noise[action];
    LossEval { loss, output_grad }
}

/// Variance-based loss `L_TD + w_lp * sum_i lp(q_i; mu_i, log_sigma_i)`,
/// with `q_i = mu_i + exp(log_sigma_i) * noise_i`.
#[allow(clippy::too_many_arguments)]
pub fn loss_vb(
    prediction: f64,
    bootstrap_target: f64,
    action: usize,
    mu: &[f64],
    log_sigma: &[f64],
    noise: &[f64],
    w_lp: f64,
) -> LossEval {
    let n = mu.len();
    let mut eval = gaussian_td(prediction, bootstrap_target, action, log_sigma, noise);
    if w_lp == 0.0 {
        return eval;
    }
    let mut penalty = 0.0;
    for i in 0..n {
        let sigma = libm::exp(log_sigma[i]);
        let q = mu[i] + sigma * noise[i];
        penalty += gaussian_log_density(q, mu[i], log_sigma[i]);
        let (d_q, d_mu, d_ls) = gaussian_log_density_partials(q, mu[i], log_sigma[i]);
        // dq/dmu = 1, dq/dlog_sigma = sigma * noise.
        eval.output_grad[i] += w_lp * (d_mu + d_q);
        eval.output_grad[n + i] += w_lp * (d_ls + d_q * sigma * noise[i]);
    }
    eval.loss += w_lp * penalty;
    eval
}

/// Softmax shifted by the maximum, then clamped elementwise to `[clip_low, 1]`
/// without renormalizing.
pub fn softmax_clipped(q: &[f64], clip_low: f64) -> Vec<f64> {
    softmax(q)
        .into_iter()
        .map(|p| p.clamp(clip_low, 1.0))
        .collect()
}

fn softmax(q: &[f64]) -> Vec<f64> {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = q.iter().map(|v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Signed, weighted `sum_i log(clamped softmax_i(q))` and its gradient with
/// respect to `q`. Clamped entries pass no gradient through the clamp.
pub fn softmax_penalty(
    q: &[f64],
    weight: f64,
    clip_low: f64,
    sign: PenaltySign,
) -> (f64, Vec<f64>) {
    let signed = match sign {
        PenaltySign::UniformPrior => -weight,
        PenaltySign::AsWritten => weight,
    };
    let sm = softmax(q);
    let live: Vec<bool> = sm.iter().map(|&p| p >= clip_low).collect();
    let n_live = live.iter().filter(|&&l| l).count() as f64;
    let value: f64 = sm.iter().map(|&p| libm::log(p.clamp(clip_low, 1.0))).sum();
    // d/dq_j sum_{i live} log sm_i = [j live] - n_live * sm_j
    let grad = sm
        .iter()
        .zip(&live)
        .map(|(&p, &l)| signed * (if l { 1.0 } else { 0.0 } - n_live * p))
        .collect();
    (signed * value, grad)
}

/// Maximum-entropy loss: TD on the sampled value plus the softmax penalty on
/// the whole sampled vector.
#[allow(clippy::too_many_arguments)]
pub fn loss_me(
    prediction: f64,
    bootstrap_target: f64,
    action: usize,
    mu: &[f64],
    log_sigma: &[f64],
    noise: &[f64],
    spec: &AgentSpec,
) -> LossEval {
    let n = mu.len();
    let mut eval = gaussian_td(prediction, bootstrap_target, action, log_sigma, noise);
    if spec.w_me == 0.0 {
        return eval;
    }
    let q: Vec<f64> = (0..n)
        .map(|i| mu[i] + libm::exp(log_sigma[i]) * noise[i])
        .collect();
    let (penalty, grad_q) = softmax_penalty(&q, spec.w_me, spec.softmax_clip_low, spec.me_sign);
    for i in 0..n {
        eval.output_grad[i] += grad_q[i];
        eval.output_grad[n + i] += grad_q[i] * libm::exp(log_sigma[i]) * noise[i];
    }
    eval.loss += penalty;
    eval
}

/// Full loss of `spec.kind` for one transition whose online output and
/// decision are already known.
pub fn assemble_loss(
    spec: &AgentSpec,
    online_output: &[f64],
    decision: &Decision,
    target_output_next: &[f64],
    r: f64,
    terminal: bool,
) -> LossEval {
    let (prediction, target) = td_components(
        spec,
        online_output,
        decision,
        target_output_next,
        r,
        terminal,
    );
    match (spec.kind, &decision.sample) {
        (AgentKind::Eg, _) | (_, None) => {
            loss_eg(prediction, target, decision.action, online_output.len())
        }
        (AgentKind::Vb, Some(sample)) => {
            let (mu, log_sigma) = split_gaussian(online_output);
            loss_vb(
                prediction,
                target,
                decision.action,
                mu,
                log_sigma,
                &sample.noise,
                spec.w_lp,
            )
        }
        (AgentKind::Me, Some(sample)) => {
            let (mu, log_sigma) = split_gaussian(online_output);
            loss_me(
                prediction,
                target,
                decision.action,
                mu,
                log_sigma,
                &sample.noise,
                spec,
            )
        }
    }
}

/// Online learner: target pair, optimizer and reusable gradient buffer.
#[derive(Debug, Clone)]
pub struct Learner {
    spec: AgentSpec,
    pair: TargetPair,
    adam: Adam,
    grads: NetworkParams,
}

/// Result of [`Learner::act`]: the forward pass and what was decided from it.
#[derive(Debug, Clone)]
pub struct Acted {
    pub pass: ForwardPass,
    pub decision: Decision,
}

impl Learner {
    pub fn new(spec: AgentSpec, online: NetworkParams) -> Result<Self> {
        spec.validate()?;
        let adam = Adam::new(online.len(), spec.learning_rate);
        let grads = online.zeros_like();
        let pair = TargetPair::new(online, spec.target_tau);
        Ok(Self {
            spec,
            pair,
            adam,
            grads,
        })
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn online(&self) -> &NetworkParams {
        &self.pair.online
    }

    pub fn target(&self) -> &NetworkParams {
        &self.pair.target
    }

    pub fn into_online(self) -> NetworkParams {
        self.pair.online
    }

    pub fn act<R: Rng + ?Sized>(&self, s: &[f64], epsilon: f64, rng: &mut R) -> Result<Acted> {
        let pass = self.pair.online.forward(s)?;
        let decision = select_action(self.spec.kind, pass.output(), epsilon, rng);
        Ok(Acted { pass, decision })
    }

    /// One gradient step on the transition that follows `acted`, then one
    /// Polyak update of the target. Returns the loss value.
    pub fn learn<R: Rng + ?Sized>(
        &mut self,
        acted: &Acted,
        r: f64,
        s_next: &[f64],
        terminal: bool,
        rng: &mut R,
    ) -> Result<f64> {
        let target_next = self.pair.target.forward(s_next)?;
        let resampled;
        let decision = match (&acted.decision.sample, self.spec.loss_noise) {
            (Some(_), LossNoise::Fresh) => {
                let (mu, log_sigma) = split_gaussian(acted.pass.output());
                resampled = Decision {
                    action: acted.decision.action,
                    sample: Some(sample_gaussian_head(mu, log_sigma, rng)),
                };
                &resampled
            }
            _ => &acted.decision,
        };
        let eval = assemble_loss(
            &self.spec,
            acted.pass.output(),
            decision,
            target_next.output(),
            r,
            terminal,
        );
        self.pair
            .online
            .backward(&acted.pass, &eval.output_grad, &mut self.grads)?;
        self.adam.apply(&mut self.pair.online, &self.grads)?;
        self.pair.polyak_update();
        Ok(eval.loss)
    }
}
