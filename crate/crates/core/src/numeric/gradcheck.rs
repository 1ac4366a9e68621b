use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Options for [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub eps: f64,
    /// Checks at most this many randomly chosen coordinates per parameter.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Returns the largest `|a - n| / (max(|a|, |n|) + 1e-8)`.
pub fn grad_check<F>(params: &ParamStore<f64>, f: F, opts: &GradCheck) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph<f64>, &ParamStore<f64>) -> Result<Var<'g, f64>>,
{
    let mut store = params.clone();
    let graph = Graph::new();
    let loss = f(&graph, &store)?;
    graph.backward(loss, &mut store)?;
    let analytic = store.clone();

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let g = Graph::new();
        let v = f(&g, s)?;
        let value = v.item();
        if !value.is_finite() {
            return Err(Error::Contract("grad_check: non-finite objective".into()));
        }
        Ok(value)
    };

    let mut rng = SplitMix64::new(opts.seed);
    let names: Vec<String> = store.names().map(String::from).collect();
    let mut worst = 0.0f64;
    for name in &names {
        let n = store.get(name).map_or(0, |t| t.len());
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(limit) if limit < n => (0..limit).map(|_| rng.below(n)).collect(),
            _ => (0..n).collect(),
        };
        let grad = analytic.grad(name).expect("backward fills every gradient");
        for i in coords {
            let orig = store.get(name).unwrap().data()[i];
            store.get_mut(name).unwrap().data_mut()[i] = orig + opts.eps;
            let plus = eval(&store)?;
            store.get_mut(name).unwrap().data_mut()[i] = orig - opts.eps;
            let minus = eval(&store)?;
            store.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / (a.abs().max(numeric.abs()) + 1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
