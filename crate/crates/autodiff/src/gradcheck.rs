use crate::{AutodiffError, ParamStore, Tape, Var};

/// Denominator floor of the relative error; below it the comparison is
/// effectively absolute.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub max_abs_analytic: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape)?;
    Ok(tape.value(out).scalar())
}

/// Compares reverse-mode gradients of the scalar computation `f` against
/// central differences `(f(x + eps) - f(x - eps)) / (2 eps)`.
///
/// `max_coords_per_param` limits how many coordinates of each tensor are
/// perturbed (evenly strided); `None` checks all of them.
pub fn grad_check<F>(
    store: &mut ParamStore,
    eps: f64,
    max_coords_per_param: Option<usize>,
    f: F,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape) -> Result<Var, AutodiffError>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let out = f(&mut tape)?;
        tape.backward(out)
    };
    let mut dense: Vec<Option<Vec<f64>>> = vec![None; store.len()];
    for (id, g) in analytic.params() {
        dense[id.index()] = Some(g.values().to_vec());
    }

    let ids: Vec<_> = store.ids().collect();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        params: Vec::with_capacity(ids.len()),
    };
    for id in ids {
        let len = store.value(id).len();
        let coords: Vec<usize> = match max_coords_per_param {
            Some(k) if k < len => {
                let stride = len as f64 / k as f64;
                (0..k).map(|i| (i as f64 * stride) as usize).collect()
            }
            _ => (0..len).collect(),
        };
        let mut check = ParamCheck {
            name: store.get(id).name.clone(),
            coords_checked: coords.len(),
            max_relative_error: 0.0,
            max_abs_error: 0.0,
            max_abs_analytic: 0.0,
        };
        for k in coords {
            let original = store.value(id).values()[k];
            store.value_mut(id).values_mut()[k] = original + eps;
            let plus = evaluate(store, &f)?;
            store.value_mut(id).values_mut()[k] = original - eps;
            let minus = evaluate(store, &f)?;
            store.value_mut(id).values_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = dense[id.index()].as_ref().map_or(0.0, |g| g[k]);
            check.max_abs_analytic = check.max_abs_analytic.max(a.abs());
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            check.max_relative_error = check.max_relative_error.max(relative_error(a, numeric));
        }
        report.max_relative_error = report.max_relative_error.max(check.max_relative_error);
        report.params.push(check);
    }
    Ok(report)
}
