use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamId, ParamStore, Tensor, Var};

/// Denominator floor for relative errors; components whose magnitude is
/// below it are compared in absolute terms scaled by the floor.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::Shape(format!(
            "expected a scalar, got {:?}",
            t.shape()
        )));
    }
    let s = t.data()[0];
    if !s.is_finite() {
        return Err(Error::NonFinite("gradient check objective".into()));
    }
    Ok(s)
}

/// Maximum relative error between the reverse-mode gradient of the scalar
/// function `f` at `at` and central finite differences with step `eps`.
pub fn grad_check<F>(store: &ParamStore, f: F, at: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let x = g.input(at.clone(), true);
    let y = f(&mut g, x)?;
    scalar_of(&g, y)?;
    g.backward(y)?;
    let analytic = g.grad(x).unwrap_or_else(|| Tensor::zeros(at.shape()));
    if !analytic.all_finite() {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    let eval = |point: Tensor| -> Result<f64> {
        let mut g = Graph::new(store);
        let x = g.input(point, false);
        let y = f(&mut g, x)?;
        scalar_of(&g, y)
    };
    let mut worst = 0.0f64;
    for i in 0..at.len() {
        let mut plus = at.clone();
        plus.data_mut()[i] += eps;
        let mut minus = at.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(rel_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Like [`grad_check`] but differentiates with respect to the parameters in
/// `ids`. At most `max_per_param` evenly spaced components of each parameter
/// are perturbed (`None` checks all of them).
pub fn grad_check_params<F>(
    store: &ParamStore,
    ids: &[ParamId],
    f: F,
    eps: f64,
    max_per_param: Option<usize>,
) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let y = f(&mut g)?;
    scalar_of(&g, y)?;
    g.backward(y)?;
    let grads = g.param_grads();
    drop(g);
    let mut probe = store.clone();
    let eval = |probe: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(probe);
        let y = f(&mut g)?;
        scalar_of(&g, y)
    };
    let mut worst = 0.0f64;
    for &id in ids {
        let n = store.get(id).len();
        let analytic = grads[id.index()]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        let stride = match max_per_param {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let store = ParamStore::new();
        let at = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = grad_check(
            &store,
            |g, x| {
                let sq = g.mul(x, x)?;
                Ok(g.sum(sq))
            },
            &at,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let store = ParamStore::new();
        let at = Tensor::new(&[1], vec![f64::NAN]).unwrap();
        let res = grad_check(&store, |g, x| Ok(g.sum(x)), &at, 1e-5);
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }
}
