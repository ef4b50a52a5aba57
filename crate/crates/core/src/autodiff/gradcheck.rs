//! Central finite differences over every scalar of a [`ParamStore`].

use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor used by [`check`]; below it errors are measured absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Compares `analytic` against central differences of `loss` with step `h`.
/// `store_of` selects the store to perturb inside `model`, and `loss` must only
/// read the model (it is re-evaluated twice per scalar).
pub fn check<M>(
    model: &mut M,
    store_of: impl Fn(&mut M) -> &mut ParamStore,
    analytic: &[f64],
    h: f64,
    loss: impl FnMut(&M) -> f64,
) -> GradCheck {
    weighted(model, store_of, analytic, &[(h, 1.0)], loss)
}

/// Like [`check`], but with the Richardson combination
/// `(4 D(h/2) - D(h)) / 3` of two central differences, which cancels the `h^2`
/// error term and tolerates a larger step (less rounding noise).
pub fn check_extrapolated<M>(
    model: &mut M,
    store_of: impl Fn(&mut M) -> &mut ParamStore,
    analytic: &[f64],
    h: f64,
    loss: impl FnMut(&M) -> f64,
) -> GradCheck {
    weighted(model, store_of, analytic, &[(0.5 * h, 4.0 / 3.0), (h, -1.0 / 3.0)], loss)
}

fn weighted<M>(
    model: &mut M,
    store_of: impl Fn(&mut M) -> &mut ParamStore,
    analytic: &[f64],
    terms: &[(f64, f64)],
    mut loss: impl FnMut(&M) -> f64,
) -> GradCheck {
    let n = store_of(model).num_scalars();
    assert_eq!(analytic.len(), n, "analytic gradient length");
    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        checked: n,
    };
    for k in 0..n {
        let x0 = store_of(model).scalar(k);
        let mut numeric = 0.0;
        for &(h, w) in terms {
            store_of(model).set_scalar(k, x0 + h);
            let up = loss(model);
            store_of(model).set_scalar(k, x0 - h);
            let down = loss(model);
            numeric += w * (up - down) / (2.0 * h);
        }
        store_of(model).set_scalar(k, x0);
        let rel = relative_error(analytic[k], numeric, REL_FLOOR);
        out.max_abs_error = out.max_abs_error.max((analytic[k] - numeric).abs());
        if rel > out.max_rel_error {
            out.max_rel_error = rel;
            out.worst_index = k;
        }
    }
    out
}
