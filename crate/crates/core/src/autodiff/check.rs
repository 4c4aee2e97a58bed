use super::tape::{record_forward, GraphProgram, Tape};
use super::Tensor;
use crate::Real;

/// Denominator floor in the relative error `|a - n| / max(|a|, |n|, floor)`,
/// so coordinates whose true gradient is ~0 are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheckReport {
    pub h: f64,
    pub tol: f64,
    pub entries: Vec<CoordinateCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
    /// Set when the program itself failed to record; `passed` is false.
    pub failure: Option<String>,
}

impl GradientCheckReport {
    fn failed(h: f64, tol: f64, why: String) -> Self {
        Self {
            h,
            tol,
            entries: Vec::new(),
            max_rel_error: f64::INFINITY,
            passed: false,
            failure: Some(why),
        }
    }

    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares backward() against central differences of `sum(output)` for
/// every coordinate of every input. Never panics or errors: failures are
/// reported through the `passed` flag.
pub fn check_gradients<S, P>(program: &P, inputs: &[Tensor<S>], h: f64, tol: f64) -> GradientCheckReport
where
    S: Real,
    P: GraphProgram<S>,
{
    check_gradients_with(program, inputs, h, tol, |_| {})
}

pub(crate) fn check_gradients_with<S, P>(
    program: &P,
    inputs: &[Tensor<S>],
    h: f64,
    tol: f64,
    prepare: impl Fn(&mut Tape<S>),
) -> GradientCheckReport
where
    S: Real,
    P: GraphProgram<S>,
{
    if !(h > 0.0 && tol > 0.0) {
        return GradientCheckReport::failed(h, tol, format!("need h > 0 and tol > 0, got h={h} tol={tol}"));
    }
    let (out, mut tape) = match record_forward(|t, v| program(t, v), inputs) {
        Ok(r) => r,
        Err(e) => return GradientCheckReport::failed(h, tol, e.to_string()),
    };
    prepare(&mut tape);
    let seed = Tensor::full(out.shape().to_vec(), S::one());
    let grads = match tape.backward(&seed) {
        Ok(g) => g,
        Err(e) => return GradientCheckReport::failed(h, tol, e.to_string()),
    };

    let eval = |xs: &[Tensor<S>]| -> Option<f64> {
        record_forward(|t, v| program(t, v), xs)
            .ok()
            .map(|(o, _)| o.data().iter().map(|v| v.as_f64()).sum())
    };

    let mut entries = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = match grads.input(k) {
            Ok(g) => g.data().to_vec(),
            Err(e) => return GradientCheckReport::failed(h, tol, e.to_string()),
        };
        for (i, a) in analytic.into_iter().enumerate() {
            let bumped = |delta: f64| {
                let mut xs = inputs.to_vec();
                let mut data = xs[k].data().to_vec();
                data[i] += S::lit(delta);
                xs[k] = Tensor::new(input.shape().to_vec(), data).expect("same shape");
                xs
            };
            let (Some(fp), Some(fm)) = (eval(&bumped(h)), eval(&bumped(-h))) else {
                return GradientCheckReport::failed(h, tol, format!("forward failed at input {k}[{i}]"));
            };
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = a.as_f64();
            entries.push(CoordinateCheck {
                input: k,
                index: i,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric),
            });
        }
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    GradientCheckReport {
        h,
        tol,
        passed: max_rel_error < tol && entries.iter().all(|e| e.rel_error.is_finite()),
        max_rel_error,
        entries,
        failure: None,
    }
}
