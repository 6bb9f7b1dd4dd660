//! Finite-difference verification of tape gradients.
//!
//! For every checked coordinate three second-order estimates are formed from
//! five evaluations at `θ + {-2,-1,0,1,2}·eps`: central, forward three-point
//! and backward three-point. In smooth regions they agree to O(eps²); when a
//! ReLU kink lies inside the stencil only the estimate on the far side stays
//! clean, so the estimate closest to the analytic value is compared. Such
//! coordinates are counted in [`ParamReport::kinks`].
//!
//! Parameters larger than `max_coords` are checked on a seeded random subset
//! of coordinates.

use rand::seq::index::sample;

use super::param::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Lower bound of the relative-error denominator `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tolerance: 1e-6,
            floor: 1e-3,
            max_coords: 48,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamReport {
    pub name: String,
    pub max_rel: f64,
    pub max_abs: f64,
    pub checked: usize,
    pub kinks: usize,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub params: Vec<ParamReport>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradReport {
    pub fn max_rel(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamReport> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel.total_cmp(&b.max_rel))
    }
}

fn evaluate<F>(f: &mut F, store: &ParamStore<f64>) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Usage(format!(
            "grad_check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    let x = v.item();
    if !x.is_finite() {
        return Err(Error::Numeric(format!("grad_check: function value {x} is not finite")));
    }
    Ok(x)
}

/// Compare `backward()` against finite differences of `f` for every
/// non-frozen parameter in `store`. Gradients in `store` are overwritten.
pub fn grad_check<F>(store: &mut ParamStore<f64>, mut f: F, cfg: &GradCheckConfig) -> Result<GradReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let f0 = tape.value(out).item();
    if !f0.is_finite() {
        return Err(Error::Numeric(format!("grad_check: function value {f0} is not finite")));
    }
    tape.backward(out, store)?;
    drop(tape);

    let h = cfg.eps;
    let ids: Vec<_> = store.ids().filter(|&id| !store.get(id).frozen).collect();
    let mut reports = Vec::with_capacity(ids.len());
    for id in ids {
        let name = store.get(id).name.clone();
        let analytic = store.get(id).grad.data().to_vec();
        let n = analytic.len();
        let coords: Vec<usize> = if n <= cfg.max_coords {
            (0..n).collect()
        } else {
            let mut r = rng::stream(cfg.seed, &format!("gradcheck/{name}"), 0);
            let mut c = sample(&mut r, n, cfg.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut rep = ParamReport {
            name,
            max_rel: 0.0,
            max_abs: 0.0,
            checked: coords.len(),
            kinks: 0,
        };
        for &i in &coords {
            let orig = store.get(id).value.data()[i];
            let mut at = |offset: f64, store: &mut ParamStore<f64>| -> Result<f64> {
                store.get_mut(id).value.data_mut()[i] = orig + offset;
                let v = evaluate(&mut f, store);
                store.get_mut(id).value.data_mut()[i] = orig;
                v
            };
            let fm2 = at(-2.0 * h, store)?;
            let fm1 = at(-h, store)?;
            let fp1 = at(h, store)?;
            let fp2 = at(2.0 * h, store)?;
            let central = (fp1 - fm1) / (2.0 * h);
            let forward = (-3.0 * f0 + 4.0 * fp1 - fp2) / (2.0 * h);
            let backward = (3.0 * f0 - 4.0 * fm1 + fm2) / (2.0 * h);
            let a = analytic[i];
            let (numeric, kink) = [(central, false), (forward, true), (backward, true)]
                .into_iter()
                .min_by(|x, y| (x.0 - a).abs().total_cmp(&(y.0 - a).abs()))
                .expect("three estimates");
            if kink && (numeric - a).abs() < (central - a).abs() {
                rep.kinks += 1;
            }
            let abs = (numeric - a).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(cfg.floor);
            rep.max_abs = rep.max_abs.max(abs);
            rep.max_rel = rep.max_rel.max(rel);
        }
        reports.push(rep);
    }
    let pass = reports.iter().all(|r| r.max_rel <= cfg.tolerance);
    Ok(GradReport {
        params: reports,
        tolerance: cfg.tolerance,
        pass,
    })
}
