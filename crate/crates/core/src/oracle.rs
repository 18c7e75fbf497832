//! Desk-scale references: exhaustive search over `{0,1}^K` for the pattern
//! update, golden-section search for the variance update, and a brute-force
//! maximum-likelihood table over all patterns.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{mstep_gamma, z_objective, EStep};
use crate::error::{Error, Result};
use crate::model::{SystemModel, Theta};

pub const BRUTE_FORCE_MAX_K: usize = 20;
pub const TABLE_MAX_K: usize = 12;
pub const EXHAUSTIVE_MAX_K: usize = 12;
pub const EXHAUSTIVE_MAX_N: usize = 5;

/// Result of enumerating every missing pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best_z: Vec<u8>,
    pub best_value: f64,
    /// Every pattern with its objective; kept only for `K <= 12`.
    pub table: Option<Vec<(Vec<u8>, f64)>>,
    /// Patterns within `1e-12 (1 + |best|)` of the best value.
    pub argmax_set: Vec<Vec<u8>>,
}

impl OracleResult {
    pub fn contains(&self, z: &[u8]) -> bool {
        self.argmax_set.iter().any(|w| w == z)
    }
}

/// Pattern `bits` as a length-`k` vector, time 1 in bit 0.
pub fn pattern(bits: u32, k: usize) -> Vec<u8> {
    (0..k).map(|i| ((bits >> i) & 1) as u8).collect()
}

pub fn pattern_string(z: &[u8]) -> String {
    z.iter().map(|v| if *v == 1 { '1' } else { '0' }).collect()
}

/// Enumerates the pattern objective (emission scores plus `log p(z)`) over all of `{0,1}^K`.
pub fn brute_force_scores(scores: &[[f64; 2]], model: &SystemModel) -> Result<OracleResult> {
    let k = scores.len();
    if k > BRUTE_FORCE_MAX_K {
        return Err(Error::SizeCap {
            what: "K",
            value: k,
            cap: BRUTE_FORCE_MAX_K,
        });
    }
    let values: Vec<f64> = (0..1u32 << k)
        .map(|bits| z_objective(scores, model, &pattern(bits, k)))
        .collect();
    let best_value = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-12 * (1.0 + best_value.abs());
    let argmax_set: Vec<Vec<u8>> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= best_value - slack)
        .map(|(bits, _)| pattern(bits as u32, k))
        .collect();
    let best_bits = values
        .iter()
        .position(|v| *v == best_value)
        .unwrap_or_default();
    let table = (k <= TABLE_MAX_K).then(|| {
        values
            .iter()
            .enumerate()
            .map(|(bits, v)| (pattern(bits as u32, k), *v))
            .collect()
    });
    Ok(OracleResult {
        best_z: pattern(best_bits as u32, k),
        best_value,
        table,
        argmax_set,
    })
}

/// Exhaustive pattern update under the smoothing posterior of `theta_ref`.
pub fn brute_force_z(model: &SystemModel, y: &DMatrix<f64>, theta_ref: &Theta) -> Result<OracleResult> {
    if model.k > BRUTE_FORCE_MAX_K {
        return Err(Error::SizeCap {
            what: "K",
            value: model.k,
            cap: BRUTE_FORCE_MAX_K,
        });
    }
    let es = EStep::run(model, y, theta_ref)?;
    brute_force_scores(&es.scores, model)
}

/// Golden-section maximizer of `f` on `[lo, hi]`. `better(c, d)` must return
/// `f(c) - f(d)`; passing the difference lets callers evaluate it without
/// cancellation.
pub fn golden_section_max(lo: f64, hi: f64, better: impl Fn(f64, f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    for _ in 0..400 {
        if b - a <= 1e-15 * (1.0 + b.abs()) {
            break;
        }
        let c = b - INV_PHI * (b - a);
        let d = a + INV_PHI * (b - a);
        if better(c, d) > 0.0 {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Variance update by per-coordinate golden-section search of the prior term of Q.
pub fn brute_force_gamma(
    model: &SystemModel,
    y: &DMatrix<f64>,
    theta_ref: &Theta,
    gamma_floor: f64,
) -> Result<Vec<f64>> {
    let es = EStep::run(model, y, theta_ref)?;
    let horizon = es.stats.horizon() as f64;
    Ok((0..model.n)
        .map(|i| {
            let row = es.stats.input_power.row(i);
            let power: f64 = row.sum();
            let hi = 10.0 * row.max();
            if !(hi > gamma_floor) {
                return gamma_floor;
            }
            // f(c) - f(d) for f(g) = -(K/2) ln g - power / (2g)
            let diff = |c: f64, d: f64| {
                -0.5 * horizon * ((c - d) / d).ln_1p() + 0.5 * power * (c - d) / (c * d)
            };
            golden_section_max(gamma_floor, hi, diff)
        })
        .collect())
}

/// Budget for the per-pattern inner maximization in [`exhaustive_ml`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExhaustiveOptions {
    /// Starting variances; each start is a multiple of the all-ones vector.
    pub starts: Vec<f64>,
    /// Iterations spent on every pattern.
    pub screen_iters: usize,
    /// Patterns (best screened first) that get the long run.
    pub refine_top: usize,
    pub refine_iters: usize,
    pub tol_rel_l: f64,
    pub gamma_floor: f64,
}

impl Default for ExhaustiveOptions {
    fn default() -> Self {
        ExhaustiveOptions {
            starts: vec![1.0, 1e-2],
            screen_iters: 300,
            refine_top: 8,
            refine_iters: 20_000,
            tol_rel_l: 1e-10,
            gamma_floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlEntry {
    pub z: Vec<u8>,
    pub gamma: Vec<f64>,
    pub log_likelihood: f64,
    pub refined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveMl {
    pub z_best: Vec<u8>,
    pub gamma_best: Vec<f64>,
    pub l_best: f64,
    /// One entry per pattern, in enumeration order.
    pub table: Vec<MlEntry>,
}

/// Variance-only EM with the pattern frozen; an ordinary EM on `L`, so it ascends.
pub fn gamma_only_em(
    model: &SystemModel,
    y: &DMatrix<f64>,
    theta0: &Theta,
    max_iters: usize,
    tol_rel_l: f64,
    gamma_floor: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut theta = theta0.clone();
    let mut es = EStep::run(model, y, &theta)?;
    for _ in 0..max_iters {
        let gamma = mstep_gamma(&es.stats, gamma_floor);
        let next = theta.with_gamma(gamma);
        let next_es = EStep::run(model, y, &next)?;
        let (l, l_next) = (es.log_likelihood(), next_es.log_likelihood());
        theta = next;
        es = next_es;
        if (l_next - l).abs() <= tol_rel_l * (1.0 + l.abs()) {
            break;
        }
    }
    let l = es.log_likelihood();
    Ok((theta.gamma, l))
}

fn best_over_starts(
    model: &SystemModel,
    y: &DMatrix<f64>,
    z: &[u8],
    starts: impl IntoIterator<Item = Vec<f64>>,
    iters: usize,
    opts: &ExhaustiveOptions,
) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for gamma0 in starts {
        let theta0 = Theta::new(gamma0, z.to_vec());
        let (g, l) = gamma_only_em(model, y, &theta0, iters, opts.tol_rel_l, opts.gamma_floor)?;
        if best.as_ref().is_none_or(|(_, bl)| l > *bl) {
            best = Some((g, l));
        }
    }
    best.ok_or_else(|| Error::InvalidInput("no starting points".into()))
}

/// Maximizes `L([gamma; z])` over `gamma` for every pattern `z`.
///
/// Each pattern gets a short multi-start run; the `refine_top` best then get
/// a long run continued from their screened optimum as well as from the
/// original starts.
pub fn exhaustive_ml(
    model: &SystemModel,
    y: &DMatrix<f64>,
    opts: &ExhaustiveOptions,
) -> Result<ExhaustiveMl> {
    exhaustive_ml_seeded(model, y, opts, &[])
}

/// [`exhaustive_ml`] where every pattern in `seeds` is also refined, with the
/// seed's variances as one more starting point. Passing an EM result makes
/// the search a superset of that run.
pub fn exhaustive_ml_seeded(
    model: &SystemModel,
    y: &DMatrix<f64>,
    opts: &ExhaustiveOptions,
    seeds: &[Theta],
) -> Result<ExhaustiveMl> {
    model.validate()?;
    if model.k > EXHAUSTIVE_MAX_K {
        return Err(Error::SizeCap {
            what: "K",
            value: model.k,
            cap: EXHAUSTIVE_MAX_K,
        });
    }
    if model.n > EXHAUSTIVE_MAX_N {
        return Err(Error::SizeCap {
            what: "n",
            value: model.n,
            cap: EXHAUSTIVE_MAX_N,
        });
    }
    for s in seeds {
        s.validate(model)?;
    }
    let starts = |n: usize| opts.starts.iter().map(move |s| vec![*s; n]);
    let mut table: Vec<MlEntry> = (0..1u32 << model.k)
        .into_par_iter()
        .map(|bits| {
            let z = pattern(bits, model.k);
            let (gamma, l) = best_over_starts(model, y, &z, starts(model.n), opts.screen_iters, opts)?;
            Ok(MlEntry {
                z,
                gamma,
                log_likelihood: l,
                refined: false,
            })
        })
        .collect::<Result<_>>()?;

    let index_of = |z: &[u8]| z.iter().enumerate().fold(0usize, |acc, (i, v)| acc | ((*v as usize) << i));
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.sort_by(|&a, &b| table[b].log_likelihood.total_cmp(&table[a].log_likelihood));
    order.truncate(opts.refine_top);
    let mut jobs: Vec<(usize, Vec<Vec<f64>>)> = order
        .into_iter()
        .map(|idx| (idx, vec![table[idx].gamma.clone()]))
        .collect();
    for s in seeds {
        let idx = index_of(&s.z);
        match jobs.iter_mut().find(|(j, _)| *j == idx) {
            Some((_, extra)) => extra.push(s.gamma.clone()),
            None => jobs.push((idx, vec![table[idx].gamma.clone(), s.gamma.clone()])),
        }
    }
    let refined: Vec<(usize, (Vec<f64>, f64))> = jobs
        .par_iter()
        .map(|(idx, extra)| {
            let from = extra.iter().cloned().chain(starts(model.n));
            best_over_starts(model, y, &table[*idx].z, from, opts.refine_iters, opts).map(|r| (*idx, r))
        })
        .collect::<Result<_>>()?;
    for (idx, (gamma, l)) in refined {
        let entry = &mut table[idx];
        if l >= entry.log_likelihood {
            entry.gamma = gamma;
            entry.log_likelihood = l;
        }
        entry.refined = true;
    }

    let best = table
        .iter()
        .max_by(|a, b| a.log_likelihood.total_cmp(&b.log_likelihood))
        .expect("at least one pattern");
    Ok(ExhaustiveMl {
        z_best: best.z.clone(),
        gamma_best: best.gamma.clone(),
        l_best: best.log_likelihood,
        table,
    })
}
