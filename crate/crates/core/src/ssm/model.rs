use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use super::expr::{parse_expr, Expr, ParseError};
use crate::error::{Error, Result};
use crate::gaussian::{asymmetry, max_abs, GaussianMoments, Tolerances};
use crate::quadrature::VectorFn;

/// A model component: a list of expressions or a matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFn {
    Exprs(Vec<Expr>),
    Matrix(DMatrix<f64>),
}

impl ModelFn {
    pub fn output_dim(&self) -> usize {
        match self {
            ModelFn::Exprs(e) => e.len(),
            ModelFn::Matrix(m) => m.nrows(),
        }
    }

    pub fn as_matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            ModelFn::Matrix(m) => Some(m),
            ModelFn::Exprs(_) => None,
        }
    }

    fn eval_with(&self, arg: &DVector<f64>, on_state: bool) -> Result<DVector<f64>> {
        match self {
            ModelFn::Matrix(m) => {
                if m.ncols() != arg.len() {
                    return Err(Error::Dimension {
                        context: "model matrix argument",
                        expected: m.ncols(),
                        got: arg.len(),
                    });
                }
                Ok(m * arg)
            }
            ModelFn::Exprs(exprs) => {
                let (x, u): (&[f64], &[f64]) = if on_state {
                    (arg.as_slice(), &[])
                } else {
                    (&[], arg.as_slice())
                };
                let values = exprs
                    .iter()
                    .map(|e| {
                        e.eval(x, u)
                            .map_err(|err| Error::Evaluation(err.to_string()))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Ok(DVector::from_vec(values))
            }
        }
    }
}

/// A [`ModelFn`] read as a function of the state (`f`, `h`).
#[derive(Debug, Clone, Copy)]
pub struct StateFn<'a>(pub &'a ModelFn);

/// A [`ModelFn`] read as a function of the input (`g`).
#[derive(Debug, Clone, Copy)]
pub struct InputFn<'a>(pub &'a ModelFn);

impl VectorFn for StateFn<'_> {
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.0.eval_with(x, true)
    }
}

impl VectorFn for InputFn<'_> {
    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.0.eval_with(u, false)
    }
}

/// `xᵢ = f(xᵢ₋₁) + g(uᵢ) + wᵢ`, `yᵢ = h(xᵢ) + vᵢ` with `wᵢ ~ N(0, Q)`,
/// `vᵢ ~ N(0, R)` and `x₀ ~ x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub state_dim: usize,
    pub input_dim: usize,
    pub obs_dim: usize,
    pub f: ModelFn,
    pub g: Option<ModelFn>,
    pub h: ModelFn,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x0: GaussianMoments,
}

impl StateSpaceModel {
    pub fn transition(&self) -> StateFn<'_> {
        StateFn(&self.f)
    }

    pub fn input_map(&self) -> Option<InputFn<'_>> {
        self.g.as_ref().map(InputFn)
    }

    pub fn output(&self) -> StateFn<'_> {
        StateFn(&self.h)
    }

    /// `H` when the output map was given as a matrix.
    pub fn output_matrix(&self) -> Option<&DMatrix<f64>> {
        self.h.as_matrix()
    }

    /// All of `f`, `g` (if present) and `h` are matrices.
    pub fn is_linear(&self) -> bool {
        self.f.as_matrix().is_some()
            && self.g.as_ref().is_none_or(|g| g.as_matrix().is_some())
            && self.h.as_matrix().is_some()
    }

    /// Loads a model from its JSON description.
    pub fn from_json(text: &str) -> std::result::Result<Self, ModelFileError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| {
            let offset = byte_offset(text, e.line(), e.column());
            ModelFileError::Json {
                offset,
                message: e.to_string(),
            }
        })?;
        file.into_model()
    }

    pub fn load(path: &Path) -> std::result::Result<Self, ModelFileError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelFileError::Io(e.to_string()))?;
        Self::from_json(&text)
    }
}

/// One failed model check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn violation(field: &str, message: impl Into<String>) -> Violation {
    Violation {
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_component(
    out: &mut Vec<Violation>,
    field: &str,
    component: &ModelFn,
    rows: usize,
    cols: usize,
    on_state: bool,
) {
    match component {
        ModelFn::Matrix(m) => {
            if m.nrows() != rows || m.ncols() != cols {
                out.push(violation(
                    field,
                    format!(
                        "matrix is {}x{}, expected {rows}x{cols}",
                        m.nrows(),
                        m.ncols()
                    ),
                ));
            }
            if m.iter().any(|v| !v.is_finite()) {
                out.push(violation(field, "matrix has non-finite entries"));
            }
        }
        ModelFn::Exprs(exprs) => {
            if exprs.len() != rows {
                out.push(violation(
                    field,
                    format!("has {} expressions, expected {rows}", exprs.len()),
                ));
            }
            for (i, e) in exprs.iter().enumerate() {
                let (nx, nu) = e.arity();
                let (used, foreign) = if on_state { (nx, nu) } else { (nu, nx) };
                if used > cols || foreign > 0 {
                    out.push(violation(
                        &format!("{field}[{i}]"),
                        "references a variable outside its argument",
                    ));
                }
            }
        }
    }
}

fn check_covariance(
    out: &mut Vec<Violation>,
    field: &str,
    m: &DMatrix<f64>,
    dim: usize,
    definite: bool,
) {
    let tol = Tolerances::global();
    if m.nrows() != dim || m.ncols() != dim {
        out.push(violation(
            field,
            format!("is {}x{}, expected {dim}x{dim}", m.nrows(), m.ncols()),
        ));
        return;
    }
    if m.iter().any(|v| !v.is_finite()) {
        out.push(violation(field, format!("{field} has non-finite entries")));
        return;
    }
    if asymmetry(m) > tol.symmetry {
        out.push(violation(field, format!("{field} not symmetric")));
        return;
    }
    if dim == 0 {
        return;
    }
    let eig = ((m + m.transpose()) * 0.5).symmetric_eigenvalues();
    let (lo, scale) = (eig.min(), max_abs(m));
    if definite {
        if lo <= 0.0 || lo <= tol.psd * scale {
            out.push(violation(field, format!("{field} not positive definite")));
        }
    } else if lo < -tol.psd * scale {
        out.push(violation(
            field,
            format!("{field} not positive semidefinite"),
        ));
    }
}

/// Lists every violated model invariant; empty when the model is valid.
pub fn validate_model(model: &StateSpaceModel) -> Vec<Violation> {
    let (n, m, p) = (model.state_dim, model.input_dim, model.obs_dim);
    let mut out = Vec::new();
    if n == 0 {
        out.push(violation("state_dim", "must be at least 1"));
    }
    if p == 0 {
        out.push(violation("obs_dim", "must be at least 1"));
    }
    check_component(&mut out, "f", &model.f, n, n, true);
    if let Some(g) = &model.g {
        check_component(&mut out, "g", g, n, m, false);
    }
    check_component(&mut out, "h", &model.h, p, n, true);
    check_covariance(&mut out, "Q", &model.q, n, false);
    check_covariance(&mut out, "R", &model.r, p, true);
    if model.x0.dim() != n {
        out.push(violation(
            "x0",
            format!("has dimension {}, expected {n}", model.x0.dim()),
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelFileError {
    #[error("{0}")]
    Io(String),
    #[error("offset {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("key `{key}`: {message}")]
    Field { key: String, message: String },
    #[error("key `{key}`: {source}")]
    Expr {
        key: String,
        #[source]
        source: ParseError,
    },
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorFile {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    state_dim: usize,
    input_dim: usize,
    obs_dim: usize,
    f: Value,
    #[serde(default)]
    g: Option<Value>,
    h: Value,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    x0: PriorFile,
}

fn field_err(key: &str, message: impl Into<String>) -> ModelFileError {
    ModelFileError::Field {
        key: key.to_string(),
        message: message.into(),
    }
}

fn matrix_from_rows(
    key: &str,
    rows: &[Vec<f64>],
) -> std::result::Result<DMatrix<f64>, ModelFileError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(field_err(key, "rows have unequal lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn component(
    key: &str,
    value: &Value,
    state_dim: usize,
    input_dim: usize,
) -> std::result::Result<ModelFn, ModelFileError> {
    match value {
        Value::Array(items) => {
            let exprs = items
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    let key = format!("{key}[{i}]");
                    let text = item
                        .as_str()
                        .ok_or_else(|| field_err(&key, "expected an expression string"))?;
                    parse_expr(text, state_dim, input_dim)
                        .map_err(|source| ModelFileError::Expr { key, source })
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(ModelFn::Exprs(exprs))
        }
        Value::Object(map) => {
            if let Some(extra) = map.keys().find(|k| k.as_str() != "matrix") {
                return Err(field_err(&format!("{key}.{extra}"), "unknown key"));
            }
            let rows = map
                .get("matrix")
                .ok_or_else(|| field_err(key, "object form needs a `matrix` key"))?;
            let rows: Vec<Vec<f64>> = serde_json::from_value(rows.clone())
                .map_err(|e| field_err(&format!("{key}.matrix"), e.to_string()))?;
            Ok(ModelFn::Matrix(matrix_from_rows(
                &format!("{key}.matrix"),
                &rows,
            )?))
        }
        _ => Err(field_err(
            key,
            "expected a list of expressions or {\"matrix\": [[...]]}",
        )),
    }
}

impl ModelFile {
    fn into_model(self) -> std::result::Result<StateSpaceModel, ModelFileError> {
        let (n, m) = (self.state_dim, self.input_dim);
        let f = component("f", &self.f, n, 0)?;
        let g = match &self.g {
            None | Some(Value::Null) => None,
            Some(v) => Some(component("g", v, 0, m)?),
        };
        let h = component("h", &self.h, n, 0)?;
        let q = matrix_from_rows("Q", &self.q)?;
        let r = matrix_from_rows("R", &self.r)?;
        let cov = matrix_from_rows("x0.cov", &self.x0.cov)?;
        let x0 = GaussianMoments::new(DVector::from_vec(self.x0.mean), cov)
            .map_err(|e| field_err("x0", e.to_string()))?;
        Ok(StateSpaceModel {
            state_dim: n,
            input_dim: m,
            obs_dim: self.obs_dim,
            f,
            g,
            h,
            q,
            r,
            x0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::catalog::ungm;

    #[test]
    fn ungm_is_valid() {
        assert!(validate_model(&ungm(true)).is_empty());
        assert!(validate_model(&ungm(false)).is_empty());
    }

    #[test]
    fn zero_r_and_asymmetric_q() {
        let mut m = ungm(true);
        m.r = DMatrix::zeros(1, 1);
        let v = validate_model(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "R");
        assert_eq!(v[0].message, "R not positive definite");

        let mut m = crate::ssm::catalog::constant_velocity(1.0, 0.1, 0.5);
        m.q[(0, 1)] += 1e-3;
        let v = validate_model(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "Q not symmetric");
    }

    #[test]
    fn dimension_violations() {
        let mut m = ungm(true);
        m.h = ModelFn::Matrix(DMatrix::zeros(1, 2));
        m.f = ModelFn::Exprs(vec![]);
        let fields: Vec<String> = validate_model(&m).into_iter().map(|v| v.field).collect();
        assert_eq!(fields, vec!["f", "h"]);
    }

    #[test]
    fn json_round_trip_of_ungm() {
        let text = r#"{
            "state_dim": 1, "input_dim": 1, "obs_dim": 1,
            "f": ["0.5*x1 + 25*x1/(1 + x1^2)"],
            "g": ["8*u1"],
            "h": {"matrix": [[1.0]]},
            "Q": [[10.0]], "R": [[1.0]],
            "x0": {"mean": [0.0], "cov": [[1.0]]}
        }"#;
        let m = StateSpaceModel::from_json(text).unwrap();
        assert!(validate_model(&m).is_empty());
        assert_eq!(m.output_matrix(), Some(&DMatrix::from_element(1, 1, 1.0)));
        let fx = m.transition().eval(&DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(fx[0], 13.0);
        let gu = m
            .input_map()
            .unwrap()
            .eval(&DVector::from_element(1, 0.5))
            .unwrap();
        assert_eq!(gu[0], 4.0);
    }

    #[test]
    fn json_rejects_unknown_and_bad_keys() {
        let base = r#"{"state_dim": 1, "input_dim": 0, "obs_dim": 1, "f": ["x1"], "g": null,
            "h": ["x1"], "Q": [[1]], "R": [[1]], "x0": {"mean": [0], "cov": [[1]]}"#;
        assert!(StateSpaceModel::from_json(&format!("{base}}}")).is_ok());

        let err = StateSpaceModel::from_json(&format!("{base}, \"bogus\": 1}}")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");

        let bad_expr = base.replace(r#""f": ["x1"]"#, r#""f": ["sin("]"#);
        let err = StateSpaceModel::from_json(&format!("{bad_expr}}}")).unwrap_err();
        assert!(
            matches!(err, ModelFileError::Expr { ref key, .. } if key == "f[0]"),
            "{err}"
        );

        let bad_matrix = base.replace(r#""h": ["x1"]"#, r#""h": {"matrx": [[1]]}"#);
        let err = StateSpaceModel::from_json(&format!("{bad_matrix}}}")).unwrap_err();
        assert!(err.to_string().contains("h.matrx"), "{err}");

        let err = StateSpaceModel::from_json("{\"state_dim\": 1,").unwrap_err();
        assert!(matches!(err, ModelFileError::Json { .. }));
    }

    #[test]
    fn byte_offsets_from_line_and_column() {
        let text = "ab\ncde\nf";
        assert_eq!(byte_offset(text, 1, 1), 0);
        assert_eq!(byte_offset(text, 2, 2), 4);
        assert_eq!(byte_offset(text, 3, 1), 7);
    }
}
