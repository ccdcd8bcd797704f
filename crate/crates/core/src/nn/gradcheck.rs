//! Central finite-difference checks of [`Graph::backward`].

use rand::seq::index::sample;

use super::{Graph, NodeId, ParamId, ParameterStore, Real};
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Smallest denominator of the relative error. Gradients below this
    /// magnitude are compared in absolute terms, since their finite
    /// differences are pure rounding noise.
    pub floor: f64,
    /// Scalars probed per tensor; tensors smaller than this are probed fully.
    pub samples_per_tensor: usize,
    pub seed: u64,
    /// Restricts the check to these parameters when set.
    pub params: Option<Vec<ParamId>>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-3,
            tolerance: 1e-3,
            floor: 1e-8,
            samples_per_tensor: 64,
            seed: 0,
            params: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

pub fn relative_error(ad: f64, fd: f64, floor: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(floor)
}

/// Compares the reverse-mode gradient of `loss_fn` against central
/// differences. `loss_fn` must build the same computation every call.
pub fn grad_check<R, F>(
    store: &mut ParameterStore<R>,
    cfg: &GradCheckConfig,
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    R: Real,
    F: FnMut(&mut Graph<'_, R>) -> Result<NodeId>,
{
    let grads = {
        let mut g = Graph::new(&*store);
        let l = loss_fn(&mut g)?;
        g.backward(l)?
    };

    let mut eval = |s: &ParameterStore<R>| -> Result<f64> {
        let mut g = Graph::new(s);
        let l = loss_fn(&mut g)?;
        let v = g.scalar(l).as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check loss".into()));
        }
        Ok(v)
    };

    let ids: Vec<ParamId> = match &cfg.params {
        Some(p) => p.clone(),
        None => store.ids().collect(),
    };
    let mut rng = seeded(cfg.seed);
    let eps = cfg.epsilon;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance: cfg.tolerance,
    };
    for id in ids {
        let ad = grads.get(id, store);
        let n = ad.len();
        let picks: Vec<usize> = if n <= cfg.samples_per_tensor {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, cfg.samples_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for i in picks {
            let orig = store.value(id)[i];
            store.get_mut(id).data_mut()[i] = R::lit(orig.as_f64() + eps);
            let plus = eval(store);
            store.get_mut(id).data_mut()[i] = R::lit(orig.as_f64() - eps);
            let minus = eval(store);
            store.get_mut(id).data_mut()[i] = orig;
            let fd = (plus? - minus?) / (2.0 * eps);
            let a = ad[i].as_f64();
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
            }
            let err = relative_error(a, fd, cfg.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Linear, Mlp};

    #[test]
    fn linear_model_is_exact() {
        let mut rng = seeded(2);
        let mut s = ParameterStore::<f64>::new();
        let lin = Linear::new(&mut s, "l", 5, 3, true, &mut rng).unwrap();
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let r = grad_check(&mut s, &GradCheckConfig::default(), |g| {
            let xi = g.constant(vec![4, 5], x.clone())?;
            let y = lin.forward(g, xi)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(r.max_rel_error <= 1e-5, "{r:?}");
    }

    #[test]
    fn two_layer_mlp() {
        let mut rng = seeded(4);
        let mut s = ParameterStore::<f64>::new();
        let mlp = Mlp::new(&mut s, "m", 6, 16, 4, &mut rng).unwrap();
        // Larger weights than the default init so the check is not trivial.
        for id in s.ids().collect::<Vec<_>>() {
            s.get_mut(id).data_mut().iter_mut().for_each(|v| *v *= 25.0);
        }
        let x: Vec<f64> = (0..18).map(|i| (i as f64 * 0.71).cos()).collect();
        let targets = [Some(1), Some(3), None];
        let r = grad_check(&mut s, &GradCheckConfig::default(), |g| {
            let xi = g.constant(vec![3, 6], x.clone())?;
            let y = mlp.forward(g, xi)?;
            g.cross_entropy(y, &targets)
        })
        .unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.checked > 64);
    }
}
