#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nlgmp::ssm::{simulate, ModelFn, StateSpaceModel};
use nlgmp::GaussianMoments;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let l = normal_matrix(rng, n, n);
    &l * l.transpose() + DMatrix::identity(n, n) * floor
}

pub fn random_gaussian(rng: &mut ChaCha8Rng, n: usize) -> GaussianMoments {
    let mean = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    GaussianMoments::new(mean, spd(rng, n, 0.2)).unwrap()
}

/// Stable linear model with n ≤ 4, p ≤ 2, sometimes a known input, plus
/// simulated observations with about 10% gaps.
pub struct LinearCase {
    pub model: StateSpaceModel,
    pub inputs: DMatrix<f64>,
    pub observations: Vec<Option<DVector<f64>>>,
}

pub fn random_linear_case(rng: &mut ChaCha8Rng, steps: usize) -> LinearCase {
    let n = rng.random_range(1..=4);
    let p = rng.random_range(1..=2);
    let m = rng.random_range(0..=1);
    let raw = normal_matrix(rng, n, n);
    let norm = raw.clone().svd(false, false).singular_values.max();
    let a = raw * (rng.random_range(0.5..0.98) / norm);
    let g = (m > 0).then(|| ModelFn::Matrix(normal_matrix(rng, n, m)));
    let model = StateSpaceModel {
        state_dim: n,
        input_dim: m,
        obs_dim: p,
        f: ModelFn::Matrix(a),
        g,
        h: ModelFn::Matrix(normal_matrix(rng, p, n) + DMatrix::identity(p, n)),
        q: spd(rng, n, 0.05) * 0.3,
        r: spd(rng, p, 0.1) * 0.5,
        x0: random_gaussian(rng, n),
    };
    let inputs = DMatrix::from_fn(steps, m, |i, _| (0.3 * i as f64).sin());
    let t = simulate(&model, &inputs, rng.random()).unwrap();
    let observations = t
        .observation_list()
        .into_iter()
        .map(|y| if rng.random_bool(0.1) { None } else { y })
        .collect();
    LinearCase {
        model,
        inputs,
        observations,
    }
}

/// Max-entry difference relative to the max-entry size of the reference.
pub fn rel_err(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    let scale = want.amax().max(1e-300);
    (got - want).amax() / scale
}

pub fn rel_err_vec(got: &DVector<f64>, want: &DVector<f64>) -> f64 {
    let scale = want.amax().max(1e-300);
    (got - want).amax() / scale
}

/// `E[∏ zᵢ^kᵢ]` for `z ~ N(0, I)`.
pub fn monomial_moment(powers: &[u32]) -> f64 {
    powers
        .iter()
        .map(|&k| {
            if k % 2 == 1 {
                0.0
            } else {
                (1..k).step_by(2).map(|j| j as f64).product::<f64>()
            }
        })
        .product()
}

pub fn eval_monomial(z: &[f64], powers: &[u32]) -> f64 {
    z.iter()
        .zip(powers)
        .map(|(v, &k)| v.powi(k as i32))
        .product()
}

/// Random polynomial with per-coordinate degree at most `max_degree`:
/// coefficients and exponent vectors.
pub fn random_polynomial(
    rng: &mut ChaCha8Rng,
    n: usize,
    max_degree: u32,
    terms: usize,
) -> Vec<(f64, Vec<u32>)> {
    (0..terms)
        .map(|_| {
            let powers = (0..n).map(|_| rng.random_range(0..=max_degree)).collect();
            (rng.random_range(-1.0..1.0), powers)
        })
        .collect()
}

/// Text of a random smooth map `Rⁿ → Rᵖ` in the model language.
pub fn random_smooth_map(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<String> {
    (0..p)
        .map(|j| {
            let mut idx = || rng.random_range(1..=n);
            let (a, b, c, d, e) = (idx(), idx(), idx(), idx(), idx());
            let mut coef = || {
                let v: f64 = rng.random_range(-1.5..1.5);
                let sign = if v < 0.0 { '-' } else { '+' };
                (sign, (v.abs() * 100.0).round() / 100.0)
            };
            let (k0, k1, k2, k3) = (coef(), coef(), coef(), coef());
            format!(
                "{}{} {} {}*sin(x{a}) {} {}*x{b}*x{c} {} {}*tanh(x{d}) + cos({}*x{e} + 0.3)",
                if k0.0 == '-' { "-" } else { "" },
                k0.1,
                k1.0,
                k1.1,
                k2.0,
                k2.1,
                k3.0,
                k3.1,
                j + 1
            )
        })
        .collect()
}

/// Gauss-Hermite, unscented or spherical-radial rule whose point count makes a forward
/// output covariance of dimension `p` generically invertible.
pub fn rule_for(rng: &mut ChaCha8Rng, n: usize, p: usize) -> nlgmp::QuadratureRule {
    use nlgmp::quadrature::RuleKind;
    let choice = rng.random_range(0..3);
    let kind = if 2 * n >= p && choice == 0 {
        RuleKind::Unscented {
            kappa: (3.0 - n as f64).max(0.5),
        }
    } else if 2 * n > p && choice == 1 {
        RuleKind::SphericalRadial
    } else {
        let mut order: usize = 2;
        while order.pow(n as u32) <= p {
            order += 1;
        }
        RuleKind::GaussHermite {
            order: order.max(3),
        }
    };
    kind.build(n).unwrap()
}

/// Moment-form and dual-form backward results for one random node, as
/// `(moment, dual)` marginals on X.
pub fn random_node_case(rng: &mut ChaCha8Rng) -> (GaussianMoments, GaussianMoments) {
    use nlgmp::ssm::parse_expr;
    use nlgmp::{
        backward_dual, backward_marginal, combine_forward_backward, forward_pass,
        marginal_from_dual, to_dual, GaussianMessage,
    };
    let n = rng.random_range(1..=4);
    let p = rng.random_range(1..=4);
    let exprs = random_smooth_map(rng, n, p)
        .iter()
        .map(|s| parse_expr(s, n, 0).unwrap())
        .collect();
    let f = ModelFn::Exprs(exprs);
    let node = nlgmp::ssm::StateFn(&f);
    let x = random_gaussian(rng, n);
    let rule = rule_for(rng, n, p);
    let fp = forward_pass(&node, &x, &rule).unwrap();
    let bwd = GaussianMessage::Informative(random_gaussian(rng, p));
    let y_marginal = combine_forward_backward(&fp.y_forward, &bwd).unwrap();
    let y_dual = to_dual(&fp.y_forward, &bwd).unwrap();
    let moment = backward_marginal(&fp, &x, &y_marginal).unwrap();
    let dual = marginal_from_dual(&x, &backward_dual(&fp, &y_dual).unwrap()).unwrap();
    (moment, dual)
}
