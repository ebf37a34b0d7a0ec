use super::params::ParamStore;
use crate::error::{Error, Result};

/// Maximum over the checked entries of
/// `|analytic - central difference| / max(1, |central difference|)`.
///
/// `indices` restricts the comparison to a subset of flat parameter
/// positions; `None` checks all of them.
pub fn grad_check(
    f: impl Fn(&ParamStore) -> Result<f64>,
    params: &ParamStore,
    analytic: &[f64],
    eps: f64,
    indices: Option<&[usize]>,
) -> Result<f64> {
    if analytic.len() != params.len() {
        return Err(Error::Size(format!(
            "gradient has {} entries, parameters {}",
            analytic.len(),
            params.len()
        )));
    }
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut work = params.clone();
    let mut worst = 0.0f64;
    for &k in idx {
        let x0 = work.data()[k];
        work.data_mut()[k] = x0 + eps;
        let fp = f(&work)?;
        work.data_mut()[k] = x0 - eps;
        let fm = f(&work)?;
        work.data_mut()[k] = x0;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!("non-finite objective perturbing parameter {k}")));
        }
        let fd = (fp - fm) / (2.0 * eps);
        worst = worst.max((analytic[k] - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}

/// Evenly spread subset of `count` flat indices, always including the ends.
pub fn spread_indices(len: usize, count: usize) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    if count <= 1 {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..count).map(|k| k * (len - 1) / (count - 1)).collect();
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::params::Init;

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.register("w", &[3, 2], Init::Glorot);
        p.init(4);
        p
    }

    #[test]
    fn sum_of_squares_is_exact() {
        let p = store();
        let g: Vec<f64> = p.data().iter().map(|v| 2.0 * v).collect();
        let e = grad_check(|s| Ok(s.data().iter().map(|v| v * v).sum()), &p, &g, 1e-5, None).unwrap();
        assert!(e < 1e-8, "{e}");
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let p = store();
        let g = vec![0.0; p.len()];
        let e = grad_check(|_| Ok(4.2), &p, &g, 1e-5, None).unwrap();
        assert!(e <= 1e-12);
    }

    #[test]
    fn non_finite_objective_is_numeric_error() {
        let p = store();
        let g = vec![0.0; p.len()];
        let r = grad_check(|_| Ok(f64::NAN), &p, &g, 1e-5, None);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn spread_covers_ends() {
        assert_eq!(spread_indices(10, 3), vec![0, 4, 9]);
        assert_eq!(spread_indices(2, 5), vec![0, 1]);
    }
}
