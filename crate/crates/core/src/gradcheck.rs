//! Finite-difference verification of analytic gradients.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`
    Central3,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`
    Central5,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_index: Option<usize>,
}

/// Relative error with an absolute floor on the denominator, so entries that
/// are numerically zero on both sides compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic[i]` with a numerical derivative of `f` for each `i` in
/// `coords`. `params` is perturbed in place and restored afterwards.
pub fn check_gradient<F, Fun>(
    params: &mut [F],
    analytic: &[F],
    coords: &[usize],
    h: f64,
    stencil: Stencil,
    floor: f64,
    mut f: Fun,
) -> GradCheck
where
    F: Real,
    Fun: FnMut(&[F]) -> F,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut report = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_index: None,
    };
    for &i in coords {
        let orig = params[i];
        let mut eval = |offset: f64, p: &mut [F]| {
            p[i] = orig + F::lit(offset);
            let v = f(p).as_f64();
            p[i] = orig;
            v
        };
        let numeric = match stencil {
            Stencil::Central3 => (eval(h, params) - eval(-h, params)) / (2.0 * h),
            Stencil::Central5 => {
                (-eval(2.0 * h, params) + 8.0 * eval(h, params) - 8.0 * eval(-h, params)
                    + eval(-2.0 * h, params))
                    / (12.0 * h)
            }
        };
        let a = analytic[i].as_f64();
        let rel = rel_err(a, numeric, floor);
        report.checked += 1;
        report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        if rel > report.max_rel_err || report.worst_index.is_none() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst_index = Some(i);
        }
    }
    report
}
