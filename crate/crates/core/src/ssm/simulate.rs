use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::StateSpaceModel;
use crate::error::{Error, Result};
use crate::gaussian::chol_psd;
use crate::quadrature::VectorFn;

/// A sampled path of the model: one row per time step `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    pub observations: DMatrix<f64>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Observations as per-step vectors, all present.
    pub fn observation_list(&self) -> Vec<Option<DVector<f64>>> {
        self.observations
            .row_iter()
            .map(|r| Some(r.transpose()))
            .collect()
    }

    pub fn input_list(&self) -> Vec<DVector<f64>> {
        self.inputs.row_iter().map(|r| r.transpose()).collect()
    }
}

fn draw(rng: &mut ChaCha8Rng, factor: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(rng));
    factor * z
}

/// Samples `x₀` from the prior and runs the model forward over the rows of
/// `inputs` (N×m). The stream of draws is a ChaCha8 generator seeded with
/// `seed`, so the result is reproducible within this implementation.
pub fn simulate(model: &StateSpaceModel, inputs: &DMatrix<f64>, seed: u64) -> Result<Trajectory> {
    let (n, m, p) = (model.state_dim, model.input_dim, model.obs_dim);
    if inputs.ncols() != m {
        return Err(Error::Dimension {
            context: "simulate input columns",
            expected: m,
            got: inputs.ncols(),
        });
    }
    let steps = inputs.nrows();
    let l0 = chol_psd(model.x0.cov())?;
    let lq = chol_psd(&model.q)?;
    let lr = chol_psd(&model.r)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = model.x0.mean() + draw(&mut rng, &l0);
    let mut states = DMatrix::zeros(steps, n);
    let mut observations = DMatrix::zeros(steps, p);
    for (i, u) in inputs.row_iter().enumerate() {
        let step = i + 1;
        let mut next = model.transition().eval(&x).map_err(|e| e.at_step(step))?;
        if let Some(g) = model.input_map() {
            next += g.eval(&u.transpose()).map_err(|e| e.at_step(step))?;
        }
        next += draw(&mut rng, &lq);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        let y = model.output().eval(&next).map_err(|e| e.at_step(step))? + draw(&mut rng, &lr);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        states.set_row(i, &next.transpose());
        observations.set_row(i, &y.transpose());
        x = next;
    }
    Ok(Trajectory {
        states,
        inputs: inputs.clone(),
        observations,
        seed,
    })
}
