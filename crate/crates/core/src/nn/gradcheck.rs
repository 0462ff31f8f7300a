//! Central finite-difference verification of analytic gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::params::ParameterStore;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Entries sampled per parameter tensor; tensors at most this large are
    /// checked exhaustively.
    pub max_entries_per_param: usize,
    /// Gradient magnitudes below this are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_entries_per_param: 16,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(store: &ParameterStore, loss: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParameterStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = loss(&mut g, store)?;
    Ok(g.scalar(out))
}

/// Compares the gradient of the scalar built by `loss` against central
/// differences over a sample of every parameter in `store`. Returns the worst
/// relative error.
pub fn finite_diff_check<F>(
    store: &mut ParameterStore,
    opts: &GradCheckOptions,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParameterStore) -> Result<Var>,
{
    if !(opts.eps > 0.0 && opts.eps.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {}", opts.eps)));
    }
    if store.is_frozen() {
        return Err(Error::Config("cannot gradient-check a frozen parameter store".into()));
    }
    let first = evaluate(store, &mut loss)?;
    let second = evaluate(store, &mut loss)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    {
        let mut g = Graph::new();
        let out = loss(&mut g, store)?;
        let grads = g.backward(out)?;
        g.accumulate_into(&grads, &mut analytic_store)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for name in names {
        let (rows, cols) = store.value(&name)?.dim();
        let total = rows * cols;
        let picks: Vec<usize> = if total <= opts.max_entries_per_param {
            (0..total).collect()
        } else {
            index::sample(&mut rng, total, opts.max_entries_per_param).into_vec()
        };
        for flat in picks {
            let idx = (flat / cols, flat % cols);
            let original = store.value(&name)?[idx];
            store.value_mut(&name)?[idx] = original + opts.eps;
            let plus = evaluate(store, &mut loss);
            store.value_mut(&name)?[idx] = original - opts.eps;
            let minus = evaluate(store, &mut loss);
            store.value_mut(&name)?[idx] = original;
            let numeric = (plus? - minus?) / (2.0 * opts.eps);
            let analytic = analytic_store.grad(&name)?[idx];
            let err = relative_error(analytic, numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = idx;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Central-difference gradient of a plain function.
pub fn numeric_gradient<F>(mut f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let plus = f(&probe);
            probe[i] = x[i] - eps;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}
