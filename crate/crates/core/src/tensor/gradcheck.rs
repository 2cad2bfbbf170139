//! Central-difference verification of tape gradients.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Named parameter values.
pub type ParamMap<T> = BTreeMap<String, Tensor<T>>;

/// Named parameter handles bound on one graph.
pub type VarMap<T> = BTreeMap<String, Var<T>>;

/// `d loss / d p` for every named parameter.
pub fn grad<T: Scalar>(loss: &Var<T>, params: &VarMap<T>) -> Result<ParamMap<T>> {
    let grads = loss.graph().backward(loss)?;
    Ok(params.iter().map(|(k, v)| (k.clone(), grads.wrt(v))).collect())
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Check at most this many randomly chosen coordinates per parameter.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Scales every analytic gradient by 1.5 before comparing; used to
    /// confirm that the checker actually fails on a wrong gradient.
    pub corrupt_analytic: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-4,
            max_coords: None,
            seed: 0,
            corrupt_analytic: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|)` over checked
    /// coordinates.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates skipped because the ±eps probes straddle a kink.
    pub excluded: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<F>(loss_fn: &F, params: &ParamMap<f64>) -> Result<(f64, u64)>
where
    F: Fn(&Graph<f64>, &VarMap<f64>) -> Result<Var<f64>>,
{
    let g = Graph::new();
    let vars: VarMap<f64> = params.iter().map(|(k, v)| (k.clone(), g.constant(v.clone()))).collect();
    let loss = loss_fn(&g, &vars)?;
    if loss.value().numel() != 1 {
        return Err(Error::shape("finite_diff_check", "scalar loss", loss.shape()));
    }
    Ok((loss.item(), g.kink_signature()))
}

/// Compares tape gradients of `loss_fn` against central differences.
///
/// Coordinates whose `+eps` or `−eps` probe lands on a different piece of a
/// piecewise operator than the unperturbed point are excluded.
pub fn finite_diff_check<F>(loss_fn: F, params: &ParamMap<f64>, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &VarMap<f64>) -> Result<Var<f64>>,
{
    let g = Graph::new();
    let vars: VarMap<f64> = params.iter().map(|(k, v)| (k.clone(), g.param(v.clone()))).collect();
    let loss = loss_fn(&g, &vars)?;
    let base_sig = g.kink_signature();
    let analytic = grad(&loss, &vars)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        excluded: 0,
    };
    let mut probe = params.clone();
    for (name, value) in params {
        let n = value.numel();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = value.data()[i];
            let slot = probe.get_mut(name).expect("probe mirrors params");
            slot.data_mut()[i] = orig + cfg.eps;
            let (fp, sp) = evaluate(&loss_fn, &probe)?;
            let slot = probe.get_mut(name).expect("probe mirrors params");
            slot.data_mut()[i] = orig - cfg.eps;
            let (fm, sm) = evaluate(&loss_fn, &probe)?;
            probe.get_mut(name).expect("probe mirrors params").data_mut()[i] = orig;
            if sp != base_sig || sm != base_sig {
                report.excluded += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.eps);
            let mut a = analytic[name].data()[i];
            if cfg.corrupt_analytic {
                a *= 1.5;
            }
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((name.clone(), i));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn quadratic_passes_tightly() {
        let mut p = ParamMap::new();
        p.insert(
            "x".into(),
            Tensor::<f64>::from_fn(Shape::new(1, 2, 3, 3), |_, c, y, x| (c + y * 3 + x) as f64 * 0.1 - 0.4),
        );
        let r = finite_diff_check(|_, v| Ok(v["x"].square().sum()), &p, &GradCheckConfig::default()).unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
        assert_eq!(r.checked, 18);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut p = ParamMap::new();
        p.insert("x".into(), Tensor::<f64>::full(Shape::new(1, 1, 2, 2), 0.7));
        let cfg = GradCheckConfig {
            corrupt_analytic: true,
            ..Default::default()
        };
        let r = finite_diff_check(|_, v| Ok(v["x"].square().sum()), &p, &cfg).unwrap();
        assert!(!r.passes(1e-4));
    }

    #[test]
    fn probes_across_a_shrinkage_kink_are_excluded() {
        let mut p = ParamMap::new();
        // |x| equals the threshold exactly at index 1.
        p.insert(
            "x".into(),
            Tensor::<f64>::from_plane(1, 3, vec![2.0, 0.5, -1.0]).unwrap(),
        );
        p.insert("t".into(), Tensor::<f64>::full(Shape::new(1, 1, 1, 1), 0.5));
        let r = finite_diff_check(
            |_, v| Ok(v["x"].sst(&v["t"])?.square().sum()),
            &p,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.excluded >= 1, "{r:?}");
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
