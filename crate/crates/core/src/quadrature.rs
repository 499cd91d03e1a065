//! Unit-Gaussian quadrature rules
//!
//! ```text
//! ∫ g(z) N(z; 0, I) dz ≈ Σᵢ wᵢ g(ζᵢ)
//! ```
//!
//! and their transport to an arbitrary Gaussian input, `xᵢ = m + L ζᵢ` with
//! `L Lᵀ = V`.
//!
//! Three families are provided: the classic unscented transform, tensorized
//! Gauss-Hermite rules and the third-degree spherical-radial (cubature) rule.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{chol_psd, GaussianMoments};

/// Largest tensor Gauss-Hermite rule that will be constructed.
pub const MAX_RULE_POINTS: u128 = 10_000_000;

/// Highest supported 1-D Gauss-Hermite order.
pub const MAX_GH_ORDER: usize = 20;

/// A vector-valued function evaluated at quadrature nodes.
///
/// Implemented for plain closures; model components implement it with
/// fallible evaluation.
pub trait VectorFn {
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

impl<F> VectorFn for F
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuleKind {
    Unscented { kappa: f64 },
    GaussHermite { order: usize },
    SphericalRadial,
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleKind::Unscented { kappa } => write!(f, "unscented (kappa={kappa})"),
            RuleKind::GaussHermite { order } => write!(f, "Gauss-Hermite (order {order})"),
            RuleKind::SphericalRadial => write!(f, "spherical-radial"),
        }
    }
}

impl RuleKind {
    /// Constructs the rule of this family for dimension `n`.
    pub fn build(self, n: usize) -> Result<QuadratureRule> {
        match self {
            RuleKind::Unscented { kappa } => unscented_rule(n, kappa),
            RuleKind::GaussHermite { order } => gauss_hermite_rule(n, order),
            RuleKind::SphericalRadial => spherical_radial_rule(n),
        }
    }
}

/// Nodes and weights of a unit-Gaussian quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    kind: RuleKind,
    /// One node per row, ℓ×n.
    points: DMatrix<f64>,
    weights: DVector<f64>,
    degree: usize,
}

impl QuadratureRule {
    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Polynomial exactness degree.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Negative weights occur for the unscented rule with `kappa < 0`.
    pub fn has_negative_weights(&self) -> bool {
        self.weights.iter().any(|w| *w < 0.0)
    }

    /// `Σ wᵢ g(ζᵢ)` over the unit-space nodes.
    pub fn integrate_unit<G: VectorFn + ?Sized>(&self, g: &G) -> Result<DVector<f64>> {
        weighted_sum(&self.points, &self.weights, g)
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Parameter("dimension must be at least 1".into()));
    }
    Ok(())
}

/// Classic unscented transform: `ζ₀ = 0` with weight `κ/(n+κ)` and
/// `±√(n+κ)·eᵢ` with weight `1/(2(n+κ))`.
pub fn unscented_rule(n: usize, kappa: f64) -> Result<QuadratureRule> {
    check_dim(n)?;
    let nk = n as f64 + kappa;
    if !kappa.is_finite() || nk <= 0.0 {
        return Err(Error::Parameter(format!(
            "unscented kappa must exceed -n = -{n}, got {kappa}"
        )));
    }
    let spread = nk.sqrt();
    let mut points = DMatrix::zeros(2 * n + 1, n);
    let mut weights = DVector::from_element(2 * n + 1, 1.0 / (2.0 * nk));
    weights[0] = kappa / nk;
    for i in 0..n {
        points[(1 + i, i)] = spread;
        points[(1 + n + i, i)] = -spread;
    }
    Ok(QuadratureRule {
        kind: RuleKind::Unscented { kappa },
        points,
        weights,
        degree: 3,
    })
}

/// Default unscented parameter `κ = 3 − n`.
pub fn default_kappa(n: usize) -> f64 {
    3.0 - n as f64
}

/// Third-degree spherical-radial rule: `±√n·eᵢ`, each with weight `1/(2n)`.
pub fn spherical_radial_rule(n: usize) -> Result<QuadratureRule> {
    check_dim(n)?;
    let spread = (n as f64).sqrt();
    let mut points = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        points[(i, i)] = spread;
        points[(n + i, i)] = -spread;
    }
    Ok(QuadratureRule {
        kind: RuleKind::SphericalRadial,
        points,
        weights: DVector::from_element(2 * n, 1.0 / (2.0 * n as f64)),
        degree: 3,
    })
}

/// 1-D probabilists' Gauss-Hermite nodes and weights, ascending.
///
/// Golub-Welsch: the nodes are the eigenvalues of the Jacobi matrix with
/// off-diagonal `√k`, the weights the squared first eigenvector components.
/// Mirror pairs are averaged so the rule is exactly symmetric.
pub fn gauss_hermite_1d(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 || order > MAX_GH_ORDER {
        return Err(Error::Parameter(format!(
            "Gauss-Hermite order must be in 1..={MAX_GH_ORDER}, got {order}"
        )));
    }
    let mut jacobi = DMatrix::zeros(order, order);
    for k in 1..order {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|j| (eig.eigenvalues[j], eig.eigenvectors[(0, j)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..order / 2 {
        let j = order - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((nodes, weights))
}

/// Tensor-product Gauss-Hermite rule with `orderⁿ` nodes.
pub fn gauss_hermite_rule(n: usize, order: usize) -> Result<QuadratureRule> {
    check_dim(n)?;
    let (nodes, w1) = gauss_hermite_1d(order)?;
    let count = u32::try_from(n)
        .ok()
        .and_then(|e| (order as u128).checked_pow(e))
        .unwrap_or(u128::MAX);
    if count > MAX_RULE_POINTS {
        return Err(Error::Size {
            points: count,
            limit: MAX_RULE_POINTS,
        });
    }
    let count = count as usize;
    let mut points = DMatrix::zeros(count, n);
    let mut weights = DVector::zeros(count);
    let mut index = vec![0usize; n];
    for row in 0..count {
        let mut w = 1.0;
        for (axis, &k) in index.iter().enumerate() {
            points[(row, axis)] = nodes[k];
            w *= w1[k];
        }
        weights[row] = w;
        // odometer increment, last axis fastest
        for digit in index.iter_mut().rev() {
            *digit += 1;
            if *digit < order {
                break;
            }
            *digit = 0;
        }
    }
    Ok(QuadratureRule {
        kind: RuleKind::GaussHermite { order },
        points,
        weights,
        degree: 2 * order - 1,
    })
}

/// Quadrature nodes transported to an input Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPoints {
    /// One point per row, ℓ×n.
    pub points: DMatrix<f64>,
    pub weights: DVector<f64>,
}

impl SigmaPoints {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.points.row(i).transpose()
    }
}

/// `xᵢ = m + L ζᵢ` with `L = chol_psd(V)`.
pub fn transform_points(rule: &QuadratureRule, input: &GaussianMoments) -> Result<SigmaPoints> {
    if rule.dim() != input.dim() {
        return Err(Error::Dimension {
            context: "transform_points rule vs input",
            expected: rule.dim(),
            got: input.dim(),
        });
    }
    let l = chol_psd(input.cov())?;
    let mut points = &rule.points * l.transpose();
    for mut row in points.row_iter_mut() {
        row += input.mean().transpose();
    }
    Ok(SigmaPoints {
        points,
        weights: rule.weights.clone(),
    })
}

fn weighted_sum<G: VectorFn + ?Sized>(
    points: &DMatrix<f64>,
    weights: &DVector<f64>,
    g: &G,
) -> Result<DVector<f64>> {
    let mut acc: Option<DVector<f64>> = None;
    for (i, w) in weights.iter().enumerate() {
        let x = points.row(i).transpose();
        let gx = g.eval(&x).map_err(|e| Error::NonFiniteAtNode {
            node: i,
            detail: e.to_string(),
        })?;
        if gx.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteAtNode {
                node: i,
                detail: format!("g({:?}) = {:?}", x.as_slice(), gx.as_slice()),
            });
        }
        match acc.as_mut() {
            Some(a) => a.axpy(*w, &gx, 1.0),
            None => acc = Some(gx * *w),
        }
    }
    acc.ok_or_else(|| Error::Parameter("empty quadrature rule".into()))
}

/// `E[g(X)] ≈ Σ wᵢ g(xᵢ)` for `X ~ input`.
pub fn expect<G: VectorFn + ?Sized>(
    rule: &QuadratureRule,
    g: &G,
    input: &GaussianMoments,
) -> Result<DVector<f64>> {
    let sp = transform_points(rule, input)?;
    weighted_sum(&sp.points, &sp.weights, g)
}
