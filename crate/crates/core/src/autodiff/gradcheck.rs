//! Central finite-difference checks of tape gradients.

use alloc::vec::Vec;

use super::{AutodiffError, Tape, Tensor, Var};

/// Magnitude below which errors are measured absolutely rather than relative
/// to the gradient.
pub const ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateCheck {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, ERROR_FLOOR)`
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: Vec<CoordinateCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.coordinates.iter().all(|c| c.error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CoordinateCheck> {
        self.coordinates
            .iter()
            .filter(move |c| c.error >= self.tolerance)
    }

    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.coordinates
            .iter()
            .max_by(|a, b| a.error.total_cmp(&b.error))
    }
}

fn eval<'g, F>(f: &F, params: &[Tensor]) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape<'g>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.shape() != (1, 1) {
        return Err(AutodiffError::NotScalar(v.rows(), v.cols()));
    }
    Ok(v.item())
}

/// Compares the tape gradient of `f` with `(f(x + h e_i) - f(x - h e_i)) / 2h`
/// at every coordinate of every parameter.
pub fn gradient_check<'g, F>(
    f: F,
    params: &[Tensor],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape<'g>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let analytic = tape.backward(loss)?.into_params();
    compare_gradients(f, params, &analytic, h, tol)
}

/// Finite-difference comparison against externally supplied gradients.
pub fn compare_gradients<'g, F>(
    f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape<'g>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut coordinates = Vec::new();
    let mut work: Vec<Tensor> = params.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for index in 0..params[p].as_slice().len() {
            let x0 = params[p].as_slice()[index];
            work[p].as_mut_slice()[index] = x0 + h;
            let plus = eval(&f, &work)?;
            work[p].as_mut_slice()[index] = x0 - h;
            let minus = eval(&f, &work)?;
            work[p].as_mut_slice()[index] = x0;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.as_slice()[index];
            let scale = a.abs().max(numeric.abs()).max(ERROR_FLOOR);
            coordinates.push(CoordinateCheck {
                param: p,
                index,
                analytic: a,
                numeric,
                error: (a - numeric).abs() / scale,
            });
        }
    }
    Ok(GradCheckReport {
        coordinates,
        tolerance: tol,
    })
}
