use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Var};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat element index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub const GRAD_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of a scalar function against central differences over
/// every element of every non-frozen parameter in `store`.
///
/// The relative error per element is `|analytic - numeric| / max(GRAD_FLOOR, |numeric|)`.
/// Below the floor, central differences at step 1e-5 are dominated by round-off
/// (about `1e-16 * |f| / step`), so tiny gradients are judged on absolute error.
pub fn grad_check<F>(f: F, store: &ParamStore, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        g.value(out).item()
    };

    let first = eval(store)?;
    let second = eval(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }

    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let analytic = g.backward(loss)?;

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let names: Vec<String> = store
        .iter()
        .filter(|(_, p)| !p.frozen)
        .map(|(n, _)| n.clone())
        .collect();
    for name in names {
        let n = store.value(&name)?.len();
        for i in 0..n {
            let orig = store.value(&name)?.data()[i];
            work.get_mut(&name)?.value.data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work.get_mut(&name)?.value.data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work.get_mut(&name)?.value.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.get(&name).map_or(0.0, |t| t.data()[i]);
            let rel = (a - numeric).abs() / numeric.abs().max(GRAD_FLOOR);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    #[test]
    fn quadratic_form_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.insert("x", Tensor::randn(&[4, 1], 1.0, &mut rng));
        let a = Tensor::randn(&[4, 4], 1.0, &mut rng);
        let report = grad_check(
            |g, s| {
                let x = g.param(s, "x")?;
                let am = g.constant(a.clone());
                let ax = g.matmul(am, x)?;
                let prod = g.mul(x, ax)?;
                Ok(g.sum(prod))
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert_eq!(report.checked, 4);
        assert!(report.max_rel_error <= 1e-8, "{report:?}");
    }

    #[test]
    fn softmax_cross_entropy_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        store.insert("w", Tensor::randn(&[5, 4], 0.5, &mut rng));
        store.insert("b", Tensor::randn(&[4], 0.5, &mut rng));
        let x = Tensor::randn(&[1, 5], 1.0, &mut rng);
        let report = grad_check(
            |g, s| {
                let w = g.param(s, "w")?;
                let b = g.param(s, "b")?;
                let xv = g.constant(x.clone());
                let h = g.matmul(xv, w)?;
                let h = g.add_row(h, b)?;
                let logits = g.reshape(h, &[4])?;
                g.cross_entropy(logits, 2)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::vector(vec![1.0, 2.0]));
        store.insert("b", Tensor::vector(vec![3.0]));
        store.set_frozen("b", true);
        let report = grad_check(
            |g, s| {
                let a = g.param(s, "a")?;
                let b = g.param(s, "b")?;
                let sa = g.sum(a);
                let prod = g.scale_by(sa, b)?;
                Ok(g.sum(prod))
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert_eq!(report.checked, 2);
    }

    #[test]
    fn nondeterminism_detected() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::vector(vec![1.0]));
        let calls = Cell::new(0u32);
        let err = grad_check(
            |g, s| {
                calls.set(calls.get() + 1);
                let a = g.param(s, "a")?;
                Ok(g.scale(a, calls.get() as f64))
            },
            &store,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Determinism { .. }));
    }
}
