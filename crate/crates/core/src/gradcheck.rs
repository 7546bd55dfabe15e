//! Central finite-difference check of [`Mlp::backward`].
//!
//! The reference loss is evaluated from [`Mlp::forward`] outputs alone, so
//! the check shares no code with the analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{Mlp, MlpShape};
use crate::simenv::Action;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Inputs are resampled until every hidden pre-activation is at least this
/// far from zero, so a ±STEP perturbation never crosses a ReLU kink.
const KINK_MARGIN: f64 = 1e-3;

/// Denominator floor for the relative error of near-zero gradients.
const REL_FLOOR: f64 = 1e-6;

/// One randomly drawn check problem.
#[derive(Debug, Clone)]
pub struct Case {
    pub mlp: Mlp,
    pub obs: Vec<f64>,
    pub action: Action,
    pub advantage: f64,
    pub target: f64,
    pub entropy_coeff: f64,
}

/// `−log π(a|s)·A − β·H(π) + ½(target − V(s))²`, from a forward pass.
pub fn combined_loss(mlp: &Mlp, obs: &[f64], action: Action, advantage: f64, target: f64, beta: f64) -> f64 {
    let f = mlp.forward(obs).expect("shape checked by caller");
    // log-softmax by hand: independent of the network's own normalization
    let max = f.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + f.logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let logp: Vec<f64> = f.logits.iter().map(|l| l - lse).collect();
    let entropy = -logp.iter().map(|l| l.exp() * l).sum::<f64>();
    -logp[action.0] * advantage - beta * entropy + 0.5 * (target - f.value).powi(2)
}

/// Draws a random network of the given shape and a random problem.
pub fn random_case(rng: &mut ChaCha8Rng, shape: &MlpShape) -> Case {
    let mlp = Mlp::init(shape, rng.gen()).expect("valid shape");
    // jitter every parameter so zero-initialized biases are exercised too
    let mut params = mlp.params().to_vec();
    for p in params.iter_mut() {
        *p += rng.gen_range(-0.1..0.1);
    }
    let mlp = Mlp::from_params(shape, params).expect("same shape");
    let obs = loop {
        let x: Vec<f64> = (0..shape.input).map(|_| rng.gen_range(0.0..1.0)).collect();
        if mlp.kink_margin(&x) >= KINK_MARGIN {
            break x;
        }
    };
    Case {
        action: Action(rng.gen_range(0..shape.actions)),
        advantage: rng.gen_range(-2.0..2.0),
        target: rng.gen_range(-2.0..2.0),
        entropy_coeff: rng.gen_range(0.0..0.1),
        mlp,
        obs,
    }
}

/// Central-difference gradient of [`combined_loss`] for every parameter.
pub fn numeric_gradient(case: &Case) -> Vec<f64> {
    let loss = |m: &Mlp| {
        combined_loss(
            m,
            &case.obs,
            case.action,
            case.advantage,
            case.target,
            case.entropy_coeff,
        )
    };
    let mut probe = case.mlp.clone();
    (0..probe.params().len())
        .map(|i| {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + STEP;
            let up = loss(&probe);
            probe.params_mut()[i] = orig - STEP;
            let down = loss(&probe);
            probe.params_mut()[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Maximum relative error between analytic and central-difference
/// gradients over every parameter of `case`.
pub fn max_relative_error(case: &Case) -> f64 {
    let f = case.mlp.forward(&case.obs).expect("shape");
    let analytic = case
        .mlp
        .backward(&f.cache, case.action, case.advantage, case.target, case.entropy_coeff)
        .expect("action in range");
    relative_error(&analytic.data, &numeric_gradient(case))
}

/// Runs `cases` random checks from `seed` and returns the worst error.
pub fn run(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = MlpShape::new(6, &[8, 8], 3);
    (0..cases)
        .map(|_| max_relative_error(&random_case(&mut rng, &shape)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_matches_finite_differences() {
        let worst = run(42, 20);
        assert!(worst < TOLERANCE, "max relative error {worst}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let case = random_case(&mut rng, &MlpShape::new(6, &[8, 8], 3));
        let f = case.mlp.forward(&case.obs).unwrap();
        // flipped advantage sign in the analytic path must be caught
        let g = case
            .mlp
            .backward(&f.cache, case.action, -case.advantage, case.target, case.entropy_coeff)
            .unwrap();
        assert!(relative_error(&g.data, &numeric_gradient(&case)) > 1e-2);
    }
}
