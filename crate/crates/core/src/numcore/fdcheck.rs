use super::graph::{Graph, Var};
use super::params::{grad, BoundParams, ParamSet};
use crate::error::{EmoError, Result};

/// Worst per-coordinate disagreement between autodiff and central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub layer: String,
    pub coord: usize,
}

/// Compares `∂f/∂p` from the tape against a Richardson-extrapolated central
/// difference, `(4 D(e/2) − D(e)) / 3` with `D(h) = (f(p+h) − f(p−h)) / 2h`,
/// for every coordinate and returns the largest `|fd − ad| / (|ad| + 1e-12)`.
/// The extrapolation cancels the `h²` term, so `e` can be large enough to
/// keep round-off well below small gradient entries.
pub fn finite_diff_check<F>(f: F, params: &ParamSet, eps: f64) -> Result<FdReport>
where
    F: Fn(&mut Graph, &BoundParams) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(EmoError::Config(format!("finite difference step must be positive, got {eps}")));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let loss = f(&mut g, &bound)?;
    let analytic = grad(&mut g, loss, &bound)?;

    let eval = |p: &ParamSet, layer: &str, coord: usize| -> Result<f64> {
        let mut g = Graph::new();
        let b = p.bind_const(&mut g);
        let l = f(&mut g, &b)?;
        let v = g.value(l).item();
        if !v.is_finite() {
            return Err(EmoError::NonFinite(format!("objective at layer `{layer}` coordinate {coord}")));
        }
        Ok(v)
    };

    let mut report = FdReport { max_rel_err: 0.0, layer: String::new(), coord: 0 };
    let mut probe = params.clone();
    for li in 0..params.len() {
        let name = params.name(li).to_string();
        for c in 0..params.tensor(li).len() {
            let orig = params.tensor(li).data()[c];
            let mut central = |h: f64| -> Result<f64> {
                probe.tensor_mut(li).data_mut()[c] = orig + h;
                let up = eval(&probe, &name, c)?;
                probe.tensor_mut(li).data_mut()[c] = orig - h;
                let down = eval(&probe, &name, c)?;
                probe.tensor_mut(li).data_mut()[c] = orig;
                Ok((up - down) / (2.0 * h))
            };
            let fd = (4.0 * central(eps / 2.0)? - central(eps)?) / 3.0;
            let ad = analytic.tensor(li).data()[c];
            let rel = (fd - ad).abs() / (ad.abs() + 1e-12);
            if rel > report.max_rel_err || report.layer.is_empty() {
                report = FdReport { max_rel_err: rel.max(report.max_rel_err), layer: name.clone(), coord: c };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn one(name: &str, t: Tensor) -> ParamSet {
        ParamSet::from_entries(vec![(name.into(), t)]).unwrap()
    }

    #[test]
    fn half_squared_norm() {
        let p = one("p", Tensor::vector(vec![1.0, -2.0]));
        let r = finite_diff_check(
            |g, b| {
                let v = b.get("p")?;
                let sq = g.mul(v, v)?;
                let s = g.sum(sq);
                Ok(g.scale(s, 0.5))
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }

    #[test]
    fn tanh_at_zero() {
        let p = one("p", Tensor::vector(vec![0.0]));
        let r = finite_diff_check(
            |g, b| {
                let t = g.tanh(b.get("p")?);
                Ok(g.sum(t))
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-7, "{r:?}");
    }

    #[test]
    fn non_finite_objective_names_coordinate() {
        let p = one("p", Tensor::vector(vec![0.0, 1.0]));
        let err = finite_diff_check(
            |g, b| {
                let l = g.log(b.get("p")?);
                Ok(g.sum(l))
            },
            &p,
            1e-6,
        );
        // log(0 - eps) is NaN
        match err {
            Err(EmoError::NonFinite(msg)) => assert!(msg.contains("coordinate 0"), "{msg}"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        let p = one("p", Tensor::vector(vec![0.0]));
        assert!(finite_diff_check(|g, b| Ok(g.sum(b.get("p")?)), &p, 0.0).is_err());
    }
}
