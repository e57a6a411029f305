use serde::Serialize;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn new(op_name: &str, max_relative_error: f64, tolerance: f64) -> Self {
        GradCheckReport {
            op_name: op_name.to_string(),
            max_relative_error,
            tolerance,
            passed: max_relative_error < tolerance,
        }
    }

    /// Combines reports for the same op, keeping the worst error.
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        GradCheckReport::new(
            &self.op_name,
            self.max_relative_error.max(other.max_relative_error),
            self.tolerance.min(other.tolerance),
        )
    }
}

fn step_for(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval_finite(f: &impl Fn(&Tensor) -> Result<f64>, x: &Tensor) -> Result<f64> {
    let v = f(x)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("function value {v} is not finite")))
    }
}

/// Central-difference check of a supplied `analytic` gradient of `f` at `x`.
pub fn compare_gradients(
    op_name: &str,
    f: impl Fn(&Tensor) -> Result<f64>,
    x: &Tensor,
    analytic: &[f64],
    tol: f64,
) -> Result<GradCheckReport> {
    if analytic.len() != x.numel() {
        return Err(Error::Dimension {
            op: "compare_gradients",
            lhs: x.shape().to_vec(),
            rhs: vec![analytic.len()],
        });
    }
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let orig = x.values()[i];
        let h = step_for(orig);
        probe.values_mut()[i] = orig + h;
        let up = eval_finite(&f, &probe)?;
        probe.values_mut()[i] = orig - h;
        let down = eval_finite(&f, &probe)?;
        probe.values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(GradCheckReport::new(op_name, worst, tol))
}

/// Checks the reverse-mode gradient of a scalar graph function of one input.
pub fn finite_diff_check(
    op_name: &str,
    f: impl Fn(&mut Graph, Var) -> Result<Var>,
    x: &Tensor,
    tol: f64,
) -> Result<GradCheckReport> {
    finite_diff_check_many(op_name, |g, vars| f(g, vars[0]), std::slice::from_ref(x), tol)
}

/// Checks the gradient with respect to every input in `xs`; the report
/// carries the worst error across all coordinates of all inputs.
pub fn finite_diff_check_many(
    op_name: &str,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    xs: &[Tensor],
    tol: f64,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let mut report = GradCheckReport::new(op_name, 0.0, tol);
    for (k, x) in xs.iter().enumerate() {
        let analytic = g
            .grad(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; x.numel()]);
        let value_at = |probe: &Tensor| -> Result<f64> {
            let mut h = Graph::new();
            let inputs: Vec<Var> = xs
                .iter()
                .enumerate()
                .map(|(j, other)| h.constant(if j == k { probe.clone() } else { other.clone() }))
                .collect();
            let v = f(&mut h, &inputs)?;
            h.value(v).item()
        };
        report = report.merge(compare_gradients(op_name, value_at, x, &analytic, tol)?);
    }
    Ok(report)
}
