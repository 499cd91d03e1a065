//! Covariance-safe linear algebra: jittered Cholesky, conditioned solves,
//! symmetrization and PSD projection.
//!
//! Every factorization in the crate goes through [`chol_psd`], which also
//! feeds a per-thread tally so inference drivers can report how many matrix
//! factorizations each step performed.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, Dyn};

use crate::error::{Error, Result};

/// Environment variable holding a real multiplier applied to the default
/// tolerances.
pub const TOLERANCE_SCALE_ENV: &str = "NLGMP_TOLERANCE_SCALE";

/// Jitter ladder, in units of `trace / n`.
const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Numerical tolerances shared by the Gaussian message algebra.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Maximum asymmetry relative to the largest absolute entry.
    pub symmetry: f64,
    /// Eigenvalues down to `-psd * max|entry|` count as PSD.
    pub psd: f64,
    /// Negative eigenvalues down to `-psd_clip * max|entry|` are clipped to
    /// zero; anything more negative is an error.
    pub psd_clip: f64,
    /// Largest condition number accepted by a solve.
    pub max_condition: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            symmetry: 1e-10,
            psd: 1e-10,
            psd_clip: 1e-8,
            max_condition: 1e14,
        }
    }
}

impl Tolerances {
    /// Defaults with the relative tolerances multiplied by `scale`.
    pub fn scaled(scale: f64) -> Self {
        let d = Self::default();
        Self {
            symmetry: d.symmetry * scale,
            psd: d.psd * scale,
            psd_clip: d.psd_clip * scale,
            max_condition: d.max_condition,
        }
    }

    /// Process-wide tolerances: the defaults, scaled by
    /// `NLGMP_TOLERANCE_SCALE` when that variable holds a positive number.
    pub fn global() -> &'static Tolerances {
        static GLOBAL: OnceLock<Tolerances> = OnceLock::new();
        GLOBAL.get_or_init(|| {
            std::env::var(TOLERANCE_SCALE_ENV)
                .ok()
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|s| s.is_finite() && *s > 0.0)
                .map(Tolerances::scaled)
                .unwrap_or_default()
        })
    }
}

/// Count of factorizations, keyed by matrix dimension.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FactorizationTally {
    pub by_dim: BTreeMap<usize, usize>,
}

impl FactorizationTally {
    pub fn total(&self) -> usize {
        self.by_dim.values().sum()
    }

    pub fn of_dim(&self, dim: usize) -> usize {
        self.by_dim.get(&dim).copied().unwrap_or(0)
    }
}

thread_local! {
    static TALLIES: RefCell<Vec<FactorizationTally>> = const { RefCell::new(Vec::new()) };
}

fn record_factorization(dim: usize) {
    TALLIES.with(|t| {
        for tally in t.borrow_mut().iter_mut() {
            *tally.by_dim.entry(dim).or_insert(0) += 1;
        }
    });
}

/// Runs `f` and returns its result together with the number of
/// factorizations it performed on the current thread. Calls may nest.
pub fn count_factorizations<T>(f: impl FnOnce() -> T) -> (T, FactorizationTally) {
    TALLIES.with(|t| t.borrow_mut().push(FactorizationTally::default()));
    let out = f();
    let tally = TALLIES.with(|t| t.borrow_mut().pop().unwrap_or_default());
    (out, tally)
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn check_square(m: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            context,
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    Ok(())
}

/// Relative asymmetry `max|A - Aᵀ| / max|A|` (zero for the zero matrix).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(m - m.transpose())) / scale
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, name: &str, tol: &Tolerances) -> Result<()> {
    let a = asymmetry(m);
    if !a.is_finite() || a > tol.symmetry {
        return Err(Error::NotSymmetric {
            matrix: name.to_string(),
            asymmetry: a,
        });
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

pub(crate) fn check_psd(m: &DMatrix<f64>, name: &str, tol: &Tolerances) -> Result<()> {
    if m.nrows() == 0 {
        return Ok(());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPsd {
            matrix: name.to_string(),
            min_eigenvalue: f64::NAN,
        });
    }
    let lmin = min_eigenvalue(m);
    if lmin < -tol.psd * max_abs(m) {
        return Err(Error::NotPsd {
            matrix: name.to_string(),
            min_eigenvalue: lmin,
        });
    }
    Ok(())
}

/// Symmetrizes `m` and clips small negative eigenvalues to zero.
///
/// Eigenvalues below `-psd_clip * max|entry|` are reported as
/// [`Error::NotPsd`].
pub fn psd_project(m: &DMatrix<f64>, name: &str, tol: &Tolerances) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    let n = sym.nrows();
    if n == 0 {
        return Ok(sym);
    }
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPsd {
            matrix: name.to_string(),
            min_eigenvalue: f64::NAN,
        });
    }
    let scale = max_abs(&sym);
    if n == 1 {
        let v = sym[(0, 0)];
        return if v >= 0.0 {
            Ok(sym)
        } else if v >= -tol.psd_clip * scale {
            Ok(DMatrix::zeros(1, 1))
        } else {
            Err(Error::NotPsd {
                matrix: name.to_string(),
                min_eigenvalue: v,
            })
        };
    }
    let eig = sym.clone().symmetric_eigen();
    let lmin = eig.eigenvalues.min();
    if lmin >= 0.0 {
        return Ok(sym);
    }
    if lmin < -tol.psd_clip * scale {
        return Err(Error::NotPsd {
            matrix: name.to_string(),
            min_eigenvalue: lmin,
        });
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok(symmetrize(&rebuilt))
}

/// Cholesky factorization with escalating diagonal jitter.
///
/// Returns the factorization of `matrix + jitter·I` and the jitter used.
/// The zero matrix factors to a zero factor without jitter.
fn factor_with_jitter(
    matrix: &DMatrix<f64>,
    name: &str,
) -> Result<(Option<Cholesky<f64, Dyn>>, f64)> {
    let n = matrix.nrows();
    record_factorization(n);
    if max_abs(matrix) == 0.0 {
        return Ok((None, 0.0));
    }
    let sym = symmetrize(matrix);
    let unit = (sym.trace() / n as f64).abs();
    for step in JITTER_LADDER {
        let jitter = step * unit;
        let mut shifted = sym.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok((Some(chol), jitter));
        }
    }
    Err(Error::NotPsd {
        matrix: name.to_string(),
        min_eigenvalue: min_eigenvalue(&sym),
    })
}

/// Lower-triangular `L` with `L·Lᵀ = matrix + jitter·I`, where the jitter
/// escalates through `{0, 1e-12, 1e-10, 1e-8}·trace/n` until the
/// factorization succeeds.
pub fn chol_psd(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    chol_psd_named(matrix, "matrix")
}

pub(crate) fn chol_psd_named(matrix: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    check_square(matrix, "chol_psd")?;
    check_symmetric(matrix, name, Tolerances::global())?;
    let n = matrix.nrows();
    Ok(match factor_with_jitter(matrix, name)?.0 {
        Some(chol) => chol.l(),
        None => DMatrix::zeros(n, n),
    })
}

/// Inverse of a PSD matrix through the jittered factorization. Singular
/// directions are damped by the jitter instead of being rejected, which
/// behaves like a pseudo-inverse on the range of the matrix. The zero
/// matrix maps to zero.
pub(crate) fn psd_inverse(matrix: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    check_square(matrix, "psd_inverse")?;
    let n = matrix.nrows();
    Ok(match factor_with_jitter(matrix, name)?.0 {
        Some(chol) => symmetrize(&chol.inverse()),
        None => DMatrix::zeros(n, n),
    })
}

/// A condition-checked factorization of a symmetric positive definite
/// matrix, used for every solve whose contract rejects singular input.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(matrix: &DMatrix<f64>, name: &str) -> Result<Self> {
        let tol = Tolerances::global();
        check_square(matrix, "SpdFactor")?;
        check_symmetric(matrix, name, tol)?;
        let sym = symmetrize(matrix);
        let condition = if sym.nrows() == 1 {
            if sym[(0, 0)] > 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            let eig = sym.symmetric_eigenvalues();
            let (lo, hi) = (eig.min(), eig.max());
            if lo > 0.0 {
                hi / lo
            } else {
                f64::INFINITY
            }
        };
        if !condition.is_finite() || condition > tol.max_condition {
            return Err(Error::Conditioning {
                matrix: name.to_string(),
                condition,
            });
        }
        match factor_with_jitter(&sym, name)? {
            (Some(chol), _) => Ok(Self { chol }),
            (None, _) => Err(Error::Conditioning {
                matrix: name.to_string(),
                condition: f64::INFINITY,
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// `A⁻¹·B`.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    /// `A⁻¹`, symmetrized.
    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }
}
