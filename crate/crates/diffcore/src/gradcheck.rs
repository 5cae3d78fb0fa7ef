use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DiffError, Result};
use crate::{Graph, ParamId, ParamStore, Real, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: Real,
    /// Number of random coordinates to probe; `None` probes all of them.
    pub probes: Option<usize>,
    /// Lower bound on the relative-error denominator, so that coordinates
    /// with vanishing gradients are compared absolutely.
    pub floor: Real,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            probes: None,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: Real,
    pub probes: usize,
    /// `(parameter, flat index, analytic, numeric)` of the worst probe.
    pub worst: Option<(String, usize, Real, Real)>,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: Real, numeric: Real, floor: Real) -> Real {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backward gradients of the scalar built by `f` with central
/// finite differences over the store's parameters.
pub fn grad_check<F>(store: &mut ParamStore, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<Real> {
        let mut g = Graph::new(store);
        let l = f(&mut g)?;
        let v = g.value(l).item();
        if !v.is_finite() {
            return Err(DiffError::NonFinite { op: "grad_check loss" });
        }
        Ok(v)
    };
    let analytic = {
        let mut g = Graph::new(store);
        let l = f(&mut g)?;
        if !g.value(l).item().is_finite() {
            return Err(DiffError::NonFinite { op: "grad_check loss" });
        }
        g.backward(l)?
    };

    let coords: Vec<(ParamId, usize)> = store
        .param_ids()
        .flat_map(|id| (0..store.param(id).tensor.numel()).map(move |i| (id, i)))
        .collect();
    let chosen: Vec<usize> = match opts.probes {
        Some(n) if n < coords.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, coords.len(), n).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..coords.len()).collect(),
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probes: chosen.len(),
        worst: None,
    };
    for &c in &chosen {
        let (id, i) = coords[c];
        let orig = store.param(id).tensor.data()[i];
        store.param_mut(id).tensor.data_mut()[i] = orig + opts.step;
        let plus = eval(store);
        store.param_mut(id).tensor.data_mut()[i] = orig - opts.step;
        let minus = eval(store);
        store.param_mut(id).tensor.data_mut()[i] = orig;
        let numeric = (plus? - minus?) / (2.0 * opts.step);
        let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
        let err = relative_error(a, numeric, opts.floor);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((store.param(id).name.clone(), i, a, numeric));
        }
    }
    Ok(report)
}
