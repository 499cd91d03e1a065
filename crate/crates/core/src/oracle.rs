//! Slow, independent reference computations used to validate the message
//! passing code: Monte-Carlo moments, a dense-grid 1-D Bayes update and a
//! textbook Kalman filter with RTS smoother.
//!
//! Nothing here goes through the factorization helpers of
//! [`crate::gaussian`]; only plain nalgebra arithmetic is used.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gaussian::GaussianMoments;
use crate::quadrature::VectorFn;
use crate::ssm::StateSpaceModel;

/// Minimum sample count accepted by [`mc_moments`].
pub const MIN_MC_SAMPLES: usize = 10_000;

/// Largest tolerated fraction of non-finite function values.
const MAX_NONFINITE_FRACTION: f64 = 1e-4;

/// Standard errors of the entries of [`McMoments`].
#[derive(Debug, Clone, PartialEq)]
pub struct McStandardErrors {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub cross: DMatrix<f64>,
}

/// Sample moments of `(X, f(X))`.
#[derive(Debug, Clone, PartialEq)]
pub struct McMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `Cov(X, f(X))`, n×p.
    pub cross: DMatrix<f64>,
    pub standard_errors: McStandardErrors,
    /// Samples with finite `f` values that entered the estimates.
    pub sample_count: usize,
}

/// Monte-Carlo estimate of the moments of `f(X)` with `X ~ input`.
///
/// Samples where `f` fails or is non-finite are dropped; more than 0.01% of
/// them is an error.
pub fn mc_moments<F: VectorFn + ?Sized>(
    f: &F,
    input: &GaussianMoments,
    samples: usize,
    seed: u64,
) -> Result<McMoments> {
    if samples < MIN_MC_SAMPLES {
        return Err(Error::Parameter(format!(
            "mc_moments needs at least {MIN_MC_SAMPLES} samples, got {samples}"
        )));
    }
    let n = input.dim();
    let l = match Cholesky::new(input.cov().clone()) {
        Some(c) => c.l(),
        None => {
            let eig = input.cov().clone().symmetric_eigen();
            let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut xs: Vec<DVector<f64>> = Vec::with_capacity(samples);
    let mut ys: Vec<DVector<f64>> = Vec::with_capacity(samples);
    let mut failures = 0usize;
    for _ in 0..samples {
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let x = input.mean() + &l * z;
        match f.eval(&x) {
            Ok(y) if y.iter().all(|v| v.is_finite()) => {
                xs.push(x);
                ys.push(y);
            }
            _ => failures += 1,
        }
    }
    if failures as f64 > MAX_NONFINITE_FRACTION * samples as f64 {
        return Err(Error::Evaluation(format!(
            "{failures} of {samples} samples gave non-finite function values"
        )));
    }
    let count = ys.len();
    let p = ys[0].len();
    let nf = count as f64;

    let mean_y = ys.iter().fold(DVector::zeros(p), |acc, y| acc + y) / nf;
    let mean_x = xs.iter().fold(DVector::zeros(n), |acc, x| acc + x) / nf;

    // Accumulate first and second moments of the centred products to get
    // both the estimates and their standard errors in one pass.
    let mut cov: DMatrix<f64> = DMatrix::zeros(p, p);
    let mut cov_sq = DMatrix::zeros(p, p);
    let mut cross: DMatrix<f64> = DMatrix::zeros(n, p);
    let mut cross_sq = DMatrix::zeros(n, p);
    let mut var_y: DVector<f64> = DVector::zeros(p);
    for (x, y) in xs.iter().zip(&ys) {
        let dy = y - &mean_y;
        let dx = x - &mean_x;
        for a in 0..p {
            var_y[a] += dy[a] * dy[a];
            for b in 0..p {
                let t = dy[a] * dy[b];
                cov[(a, b)] += t;
                cov_sq[(a, b)] += t * t;
            }
        }
        for a in 0..n {
            for b in 0..p {
                let t = dx[a] * dy[b];
                cross[(a, b)] += t;
                cross_sq[(a, b)] += t * t;
            }
        }
    }
    let se_of = |sum: f64, sum_sq: f64| {
        let m = sum / nf;
        ((sum_sq / nf - m * m).max(0.0) / (nf - 1.0)).sqrt()
    };
    let mean_se = var_y.map(|v| (v / (nf - 1.0) / nf).sqrt());
    let cov_se = DMatrix::from_fn(p, p, |a, b| se_of(cov[(a, b)], cov_sq[(a, b)]));
    let cross_se = DMatrix::from_fn(n, p, |a, b| se_of(cross[(a, b)], cross_sq[(a, b)]));
    let cov = cov / (nf - 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;
    let cross = cross / (nf - 1.0);

    Ok(McMoments {
        mean: mean_y,
        cov,
        cross,
        standard_errors: McStandardErrors {
            mean: mean_se,
            cov: cov_se,
            cross: cross_se,
        },
        sample_count: count,
    })
}

/// Grid layout for [`grid_bayes_1d`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Half width of the grid in prior standard deviations.
    pub half_width_sd: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            half_width_sd: 8.0,
            points: 20_001,
        }
    }
}

/// Posterior moments of a scalar state given `y = h(x) + v`, `v ~ N(0, r)`,
/// by the trapezoidal rule on a uniform grid around the prior.
pub fn grid_bayes_1d(
    prior: &GaussianMoments,
    h: &dyn Fn(f64) -> f64,
    y_obs: f64,
    r: f64,
    grid: &GridSpec,
) -> Result<GaussianMoments> {
    if prior.dim() != 1 {
        return Err(Error::Dimension {
            context: "grid_bayes_1d prior",
            expected: 1,
            got: prior.dim(),
        });
    }
    if grid.half_width_sd < 8.0 || grid.points < 10_000 {
        return Err(Error::Parameter(
            "grid must span at least ±8 prior standard deviations with at least 10000 points"
                .into(),
        ));
    }
    if !(r > 0.0 && r.is_finite() && y_obs.is_finite()) {
        return Err(Error::Parameter(
            "need finite y and finite positive r".into(),
        ));
    }
    let (m0, v0) = (prior.mean()[0], prior.cov()[(0, 0)]);
    if v0 <= 0.0 {
        return Err(Error::Parameter("prior variance must be positive".into()));
    }
    let sd = v0.sqrt();
    let lo = m0 - grid.half_width_sd * sd;
    let step = 2.0 * grid.half_width_sd * sd / (grid.points - 1) as f64;

    let density = |x: f64| {
        let e = h(x) - y_obs;
        let prior = (-0.5 * (x - m0) * (x - m0) / v0).exp();
        let lik = (-0.5 * e * e / r).exp() / r.sqrt();
        prior * lik
    };
    let (mut z, mut s1, mut s2, mut peak) = (0.0, 0.0, 0.0, 0.0f64);
    let mut ends = [0.0; 2];
    for k in 0..grid.points {
        let x = lo + step * k as f64;
        let d = density(x);
        if !d.is_finite() {
            return Err(Error::Evaluation(format!(
                "posterior density not finite at x={x}"
            )));
        }
        let w = if k == 0 || k + 1 == grid.points {
            0.5
        } else {
            1.0
        };
        z += w * d;
        s1 += w * d * x;
        s2 += w * d * x * x;
        peak = peak.max(d);
        if k == 0 {
            ends[0] = d;
        } else if k + 1 == grid.points {
            ends[1] = d;
        }
    }
    if z * step < 1e-300 || peak == 0.0 {
        return Err(Error::Evaluation(
            "posterior mass underflows on the grid; widen the grid".into(),
        ));
    }
    if ends.iter().any(|e| *e > 1e-9 * peak) {
        return Err(Error::Evaluation(
            "posterior mass reaches the grid boundary; widen the grid".into(),
        ));
    }
    let mean = s1 / z;
    let var = (s2 / z - mean * mean).max(0.0);
    GaussianMoments::scalar(mean, var)
}

/// Mean and covariance from the reference recursions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMarginal {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Output of [`kalman_reference`], steps `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanReference {
    pub predicted: Vec<ReferenceMarginal>,
    pub filtered: Vec<ReferenceMarginal>,
    pub smoothed: Vec<ReferenceMarginal>,
    /// `y − H m⃗` and `H V⃗ Hᵀ + R` for observed steps.
    pub innovations: Vec<Option<(DVector<f64>, DMatrix<f64>)>>,
}

fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Evaluation(format!("reference Kalman filter: {what} is singular")))
}

/// Kalman filter and RTS smoother for a linear model, written out from the
/// closed-form recursions. `inputs` is N×m, or may have zero columns for
/// models without inputs.
pub fn kalman_reference(
    model: &StateSpaceModel,
    observations: &[Option<DVector<f64>>],
    inputs: &DMatrix<f64>,
) -> Result<KalmanReference> {
    let (Some(a), Some(h)) = (model.f.as_matrix(), model.h.as_matrix()) else {
        return Err(Error::Precondition(
            "kalman_reference needs matrix f and h".into(),
        ));
    };
    let b = match &model.g {
        None => None,
        Some(g) => Some(
            g.as_matrix()
                .ok_or_else(|| Error::Precondition("kalman_reference needs a matrix g".into()))?,
        ),
    };
    let steps = observations.len();
    if b.is_some() && model.input_dim > 0 && inputs.nrows() != steps {
        return Err(Error::Dimension {
            context: "kalman_reference inputs",
            expected: steps,
            got: inputs.nrows(),
        });
    }

    let mut predicted = Vec::with_capacity(steps);
    let mut filtered: Vec<ReferenceMarginal> = Vec::with_capacity(steps);
    let mut innovations = Vec::with_capacity(steps);
    let mut m = model.x0.mean().clone();
    let mut p = model.x0.cov().clone();
    for (i, y) in observations.iter().enumerate() {
        let mut mp = a * &m;
        if let Some(b) = b {
            if model.input_dim > 0 {
                mp += b * inputs.row(i).transpose();
            }
        }
        let pp = a * &p * a.transpose() + &model.q;
        predicted.push(ReferenceMarginal {
            mean: mp.clone(),
            cov: pp.clone(),
        });
        match y {
            Some(y) => {
                let s = h * &pp * h.transpose() + &model.r;
                let k = &pp * h.transpose() * inverse(&s, "innovation covariance")?;
                let e = y - h * &mp;
                m = &mp + &k * &e;
                p = &pp - &k * h * &pp;
                p = (&p + p.transpose()) * 0.5;
                innovations.push(Some((e, s)));
            }
            None => {
                m = mp;
                p = pp;
                innovations.push(None);
            }
        }
        filtered.push(ReferenceMarginal {
            mean: m.clone(),
            cov: p.clone(),
        });
    }

    let mut smoothed = filtered.clone();
    for i in (0..steps.saturating_sub(1)).rev() {
        let j = &filtered[i].cov
            * a.transpose()
            * inverse(&predicted[i + 1].cov, "predicted covariance")?;
        let mean = &filtered[i].mean + &j * (&smoothed[i + 1].mean - &predicted[i + 1].mean);
        let cov =
            &filtered[i].cov + &j * (&smoothed[i + 1].cov - &predicted[i + 1].cov) * j.transpose();
        smoothed[i] = ReferenceMarginal {
            mean,
            cov: (&cov + cov.transpose()) * 0.5,
        };
    }
    Ok(KalmanReference {
        predicted,
        filtered,
        smoothed,
        innovations,
    })
}
