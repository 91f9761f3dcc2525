//! Backpropagated gradients against central finite differences.

use proptest::prelude::*;
use punctlab_core::agents::{assemble_loss, AgentKind, AgentSpec, Decision};
use punctlab_core::nn::{
    gaussian_log_density, gaussian_log_density_partials, reparameterize, split_gaussian,
    GaussianSample, HeadKind, NetworkParams,
};
use punctlab_core::rng::stream;
use rand::Rng;
use rand_distr::StandardNormal;

const STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared in absolute terms; central
/// differences cannot resolve them relative to a loss of order 10.
const FLOOR: f64 = 1e-4;

/// Loss of `kind` as a function of the parameters, holding the action, the
/// noise draw, the reward and the target output fixed.
fn loss_at(
    spec: &AgentSpec,
    net: &NetworkParams,
    s: &[f64],
    action: usize,
    noise: Option<&[f64]>,
    target_next: &[f64],
    r: f64,
) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let pass = net.forward(s).unwrap();
    let out = pass.output().to_vec();
    let sample = noise.map(|z| {
        let (mu, ls) = split_gaussian(&out);
        GaussianSample {
            q: reparameterize(mu, ls, z),
            noise: z.to_vec(),
        }
    });
    let decision = Decision { action, sample };
    let eval = assemble_loss(spec, &out, &decision, target_next, r, false);
    (eval.loss, eval.output_grad, pass.pre_activations().to_vec())
}

fn same_signs(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .all(|(x, y)| (*x < 0.0) == (*y < 0.0) && (*x <= 0.0) == (*y <= 0.0))
}

/// Returns (checked, worst relative error).
fn check_case(kind: AgentKind, seed: u64, hidden: [usize; 2]) -> (usize, f64) {
    let mut rng = stream(seed, "gradient-oracle");
    let n_actions = 3;
    let spec = AgentSpec {
        hidden_widths: hidden.to_vec(),
        ..AgentSpec::with_kind(kind)
    };
    let widths = spec.widths(5, n_actions);
    let mut net = NetworkParams::init_uniform(&widths, &mut rng).unwrap();
    for v in net.values_mut() {
        *v *= 2.0;
    }
    let s: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let target_next: Vec<f64> = (0..kind.head().output_dim(n_actions))
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let r = rng.random_range(-5.0..5.0);
    let action = rng.random_range(0..n_actions);
    let noise: Option<Vec<f64>> = (kind.head() == HeadKind::Gaussian)
        .then(|| (0..n_actions).map(|_| rng.sample(StandardNormal)).collect());

    let pass = net.forward(&s).unwrap();
    let (_, upstream, pre) = loss_at(&spec, &net, &s, action, noise.as_deref(), &target_next, r);
    let analytic = net.gradient(&pass, &upstream).unwrap();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for k in 0..net.len() {
        let orig = net.values()[k];
        let h = STEP * orig.abs().max(1.0);
        net.values_mut()[k] = orig + h;
        let (up, _, pre_up) = loss_at(&spec, &net, &s, action, noise.as_deref(), &target_next, r);
        net.values_mut()[k] = orig - h;
        let (down, _, pre_down) =
            loss_at(&spec, &net, &s, action, noise.as_deref(), &target_next, r);
        net.values_mut()[k] = orig;
        // A pre-activation crossing the activation kink makes the difference quotient meaningless.
        if !(same_signs(&pre, &pre_up) && same_signs(&pre, &pre_down)) {
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.values()[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(err);
        checked += 1;
    }
    (checked, worst)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eg_loss_gradient_matches_differences(seed in any::<u64>(), h1 in 2usize..8, h2 in 2usize..8) {
        let (checked, worst) = check_case(AgentKind::Eg, seed, [h1, h2]);
        prop_assert!(checked > 0);
        prop_assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn vb_loss_gradient_matches_differences(seed in any::<u64>(), h1 in 2usize..8, h2 in 2usize..8) {
        let (checked, worst) = check_case(AgentKind::Vb, seed, [h1, h2]);
        prop_assert!(checked > 0);
        prop_assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn me_loss_gradient_matches_differences(seed in any::<u64>(), h1 in 2usize..8, h2 in 2usize..8) {
        let (checked, worst) = check_case(AgentKind::Me, seed, [h1, h2]);
        prop_assert!(checked > 0);
        prop_assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn log_density_partials_match_differences(
        q in -5.0f64..5.0,
        mu in -5.0f64..5.0,
        ls in -3.0f64..2.0,
    ) {
        let (dq, dmu, dls) = gaussian_log_density_partials(q, mu, ls);
        let h = 1e-6;
        let fd = |f: &dyn Fn(f64) -> f64, x: f64| (f(x + h) - f(x - h)) / (2.0 * h);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0);
        prop_assert!(close(dq, fd(&|x| gaussian_log_density(x, mu, ls), q)));
        prop_assert!(close(dmu, fd(&|x| gaussian_log_density(q, x, ls), mu)));
        prop_assert!(close(dls, fd(&|x| gaussian_log_density(q, mu, x), ls)));
    }
}

#[test]
fn terminal_transitions_ignore_the_target_network() {
    let spec = AgentSpec::with_kind(AgentKind::Eg);
    let out = [1.0, 2.0, 3.0];
    let decision = Decision {
        action: 1,
        sample: None,
    };
    let a = assemble_loss(&spec, &out, &decision, &[100.0, 0.0, 0.0], 0.5, true);
    let b = assemble_loss(&spec, &out, &decision, &[-7.0, 3.0, 1.0], 0.5, true);
    assert_eq!(a, b);
    assert_eq!(a.loss, (2.0f64 - 0.5).powi(2));
}
