use super::{AutodiffError, Tape, Tensor, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Absolute error below which an element always passes.
pub const ABS_FLOOR: f64 = 1e-8;

/// One element whose analytic and numeric gradients disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub mismatches: Vec<GradMismatch>,
    pub error: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.mismatches.is_empty() && self.checked > 0
    }
}

/// `|a - n| <= max(tol * max(|a|, |n|), ABS_FLOOR)`.
pub fn within_tolerance(analytic: f64, numeric: f64, tol: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= (tol * analytic.abs().max(numeric.abs())).max(ABS_FLOOR)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if !value.is_scalar() {
        return Err(AutodiffError::NonScalarOutput {
            shape: value.shape().to_vec(),
        });
    }
    Ok(value.data()[0])
}

/// Compares reverse-mode gradients of the scalar function `f` with central
/// finite differences over every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], tol: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut report = GradCheckReport::default();
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let grads = f(&mut tape, &vars).and_then(|out| tape.backward(out));
        match grads {
            Ok(g) => vars
                .iter()
                .zip(inputs)
                .map(|(v, t)| g.get_or_zeros(*v, t.numel()))
                .collect::<Vec<_>>(),
            Err(e) => {
                report.error = Some(e.to_string());
                return report;
            }
        }
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    for (input, grad) in analytic.iter().enumerate() {
        for index in 0..grad.len() {
            let orig = work[input].data()[index];
            work[input].data_mut()[index] = orig + FD_STEP;
            let plus = evaluate(&f, &work);
            work[input].data_mut()[index] = orig - FD_STEP;
            let minus = evaluate(&f, &work);
            work[input].data_mut()[index] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(e), _) | (_, Err(e)) => {
                    report.error = Some(e.to_string());
                    return report;
                }
            };
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grad[index];
            report.checked += 1;
            if (a - numeric).abs() > ABS_FLOOR {
                report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
            }
            if !within_tolerance(a, numeric, tol) {
                report.mismatches.push(GradMismatch {
                    input,
                    index,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    report
}
