//! Posterior-predictive choice probabilities and price elasticities.
//!
//! Every prediction re-simulates choices: given a parameter configuration
//! (one posterior draw, or the truth), utilities are rebuilt with fresh
//! idiosyncratic errors and the observed individuals' factor draws, choices
//! are taken by argmax, and shares are indicator frequencies over all
//! (individual, period) cells.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::substream;
use crate::model::{EquationParams, PanelData};
use crate::vectorize::Loadings;

/// One parameter configuration to predict under.
#[derive(Debug, Clone)]
pub struct PredictDraw {
    pub params: EquationParams,
    /// Factor loadings and the individuals' factor draws; both present or
    /// both absent.
    pub loadings: Option<Loadings>,
    /// N x L matrix of factor values.
    pub factors: Option<DMatrix<f64>>,
    /// Random-effects alternative: N x (J + J_p) individual effects.
    pub nu: Option<DMatrix<f64>>,
}

/// A counterfactual: per-good multipliers applied to every observed price.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub price_multipliers: Vec<f64>,
}

impl Scenario {
    pub fn baseline(j: usize) -> Self {
        Scenario {
            label: "baseline".into(),
            price_multipliers: vec![1.0; j],
        }
    }

    pub fn perturb_good(j: usize, good: usize, factor: f64) -> Self {
        let mut multipliers = vec![1.0; j];
        multipliers[good] = factor;
        Scenario {
            label: format!("price {} x {factor}", good + 1),
            price_multipliers: multipliers,
        }
    }

    fn validate(&self, j: usize) -> Result<()> {
        if self.price_multipliers.len() != j {
            return Err(Error::Usage(format!(
                "scenario has {} price multipliers, data has {j} goods",
                self.price_multipliers.len()
            )));
        }
        if self.price_multipliers.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Usage("price multipliers must be positive".into()));
        }
        Ok(())
    }
}

/// Bundle- and good-level shares from one or more simulation passes.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ShareTable {
    /// Length 2^J, index 0 is the outside option.
    pub bundle: Vec<f64>,
    /// Length J: S_j aggregates the bundles containing j.
    pub good: Vec<f64>,
}

/// Elasticity estimates with their Monte-Carlo uncertainty.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ElasticityTable {
    /// (j, k): percent change of good k's share per percent of good j's price.
    pub good: Vec<Vec<f64>>,
    pub good_se: Vec<Vec<f64>>,
    /// (j, r): same for inside bundle r (index 0 here is bundle 1).
    pub bundle: Vec<Vec<f64>>,
    pub bundle_se: Vec<Vec<f64>>,
    /// Cells whose baseline share was zero; their entries are NaN.
    pub undefined: Vec<String>,
}

/// Options for the elasticity computation.
#[derive(Debug, Clone)]
pub struct ElasticityOptions {
    /// Relative price step of the two-sided difference.
    pub step: f64,
    /// Share the idiosyncratic errors across the forward, baseline, and
    /// backward evaluations of each simulation pass.
    pub common_random_numbers: bool,
    /// Simulation passes per parameter draw.
    pub reps_per_draw: usize,
    pub seed: u64,
}

impl Default for ElasticityOptions {
    fn default() -> Self {
        ElasticityOptions {
            step: 0.05,
            common_random_numbers: true,
            reps_per_draw: 1,
            seed: 0,
        }
    }
}

/// Per-observation quantities that do not change across scenarios or draws.
struct ObsBase {
    individual: usize,
    period: usize,
    /// Deterministic mean of each inside bundle at baseline prices.
    base_mean: Vec<f64>,
    /// Price-coefficient times observed price, per good: the mean shift of
    /// a multiplier m on good j is price_term[j] * (m - 1) for every bundle
    /// containing j.
    price_term: Vec<f64>,
}

fn obs_bases(data: &PanelData, params: &EquationParams) -> Result<Vec<ObsBase>> {
    let cs = &data.choice_set;
    let price_slot = data.price_slot.ok_or_else(|| {
        Error::Usage("price elasticities need a designated price column in z".into())
    })?;
    let mut out = Vec::with_capacity(data.n_obs());
    for (i, obs_list) in data.individuals.iter().enumerate() {
        for obs in obs_list {
            let mut base_mean = Vec::with_capacity(cs.n_inside());
            for r in 1..cs.n_bundles() {
                base_mean.push(crate::model::mean_utility(params, cs, obs, r)?);
            }
            let price_term = (0..cs.n_goods())
                .map(|g| {
                    let coef = params.values[params.layout.theta_map[g][price_slot]];
                    coef * obs.z[g][price_slot]
                })
                .collect();
            out.push(ObsBase {
                individual: i,
                period: obs.period,
                base_mean,
                price_term,
            });
        }
    }
    Ok(out)
}

/// Factor or random-effect contribution to each good-level error mean for
/// one observation under one draw.
fn good_effects(draw: &PredictDraw, j: usize, individual: usize, period: usize) -> Vec<f64> {
    let mut eff = vec![0.0; j];
    if let (Some(loadings), Some(f)) = (&draw.loadings, &draw.factors) {
        let lt = loadings.at(period);
        for g in 0..j {
            for l in 0..f.ncols() {
                eff[g] += lt[(g, l)] * f[(individual, l)];
            }
        }
    }
    if let Some(nu) = &draw.nu {
        for g in 0..j {
            eff[g] += nu[(individual, g)];
        }
    }
    eff
}

fn check_draw(draw: &PredictDraw, data: &PanelData) -> Result<()> {
    let n = data.n_individuals();
    if let (Some(loadings), Some(f)) = (&draw.loadings, &draw.factors) {
        if f.nrows() != n || f.ncols() != loadings.n_factors() {
            return Err(Error::Usage("factor matrix does not match data/loadings".into()));
        }
        if loadings.n_rows() < data.choice_set.n_goods() {
            return Err(Error::Usage("loading rows fewer than goods".into()));
        }
    } else if draw.loadings.is_some() != draw.factors.is_some() {
        return Err(Error::Usage("loadings and factors must come together".into()));
    }
    if let Some(nu) = &draw.nu {
        if nu.nrows() != n || nu.ncols() < data.choice_set.n_goods() {
            return Err(Error::Usage("random-effect matrix does not match data".into()));
        }
    }
    Ok(())
}

/// Simulated shares under one draw and one scenario, averaged over
/// `reps` fresh-error passes.
pub fn predict_shares_single(
    draw: &PredictDraw,
    data: &PanelData,
    scenario: &Scenario,
    reps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ShareTable> {
    let cs = &data.choice_set;
    let j = cs.n_goods();
    scenario.validate(j)?;
    check_draw(draw, data)?;
    let bases = obs_bases(data, &draw.params)?;
    let n_b = cs.n_bundles();
    let mut counts = vec![0u64; n_b];
    let mut utilities = vec![0.0; n_b];
    for _ in 0..reps.max(1) {
        for base in &bases {
            let eff = good_effects(draw, j, base.individual, base.period);
            utilities[0] = rng.sample::<f64, _>(StandardNormal);
            for r in 1..n_b {
                let mut u = base.base_mean[r - 1];
                for &g in cs.bundle(r) {
                    u += base.price_term[g] * (scenario.price_multipliers[g] - 1.0) + eff[g];
                }
                utilities[r] = u + rng.sample::<f64, _>(StandardNormal);
            }
            counts[crate::model::argmax_choice(&utilities)?] += 1;
        }
    }
    let total = (reps.max(1) * bases.len()) as f64;
    let bundle: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let good = (0..j)
        .map(|g| cs.bundles_with(g).iter().map(|&r| bundle[r]).sum())
        .collect();
    Ok(ShareTable { bundle, good })
}

/// Posterior-predictive mean shares over a set of draws, each simulated
/// with its own substream.
pub fn predict_shares(
    draws: &[PredictDraw],
    data: &PanelData,
    scenario: &Scenario,
    reps_per_draw: usize,
    seed: u64,
) -> Result<ShareTable> {
    if draws.is_empty() {
        return Err(Error::Usage("no parameter draws to predict from".into()));
    }
    let tables: Vec<ShareTable> = draws
        .par_iter()
        .enumerate()
        .map(|(m, draw)| {
            let mut rng = substream(seed, m as u64);
            predict_shares_single(draw, data, scenario, reps_per_draw, &mut rng)
        })
        .collect::<Result<_>>()?;
    let n_b = tables[0].bundle.len();
    let j = tables[0].good.len();
    let m = tables.len() as f64;
    Ok(ShareTable {
        bundle: (0..n_b)
            .map(|r| tables.iter().map(|t| t.bundle[r]).sum::<f64>() / m)
            .collect(),
        good: (0..j)
            .map(|g| tables.iter().map(|t| t.good[g]).sum::<f64>() / m)
            .collect(),
    })
}

/// Share tables from one simulation pass for every scenario of the
/// elasticity grid: index 0 is baseline, then (forward, backward) per good.
fn elasticity_pass(
    draw: &PredictDraw,
    data: &PanelData,
    bases: &[ObsBase],
    step: f64,
    crn: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let cs = &data.choice_set;
    let j = cs.n_goods();
    let n_b = cs.n_bundles();
    let n_scen = 1 + 2 * j;
    let mut counts = vec![vec![0u64; n_b]; n_scen];
    let mut eps = vec![0.0; n_b];
    let mut utilities = vec![0.0; n_b];
    for base in bases {
        let eff = good_effects(draw, j, base.individual, base.period);
        // bundle-level mean with factor effects but before any perturbation
        let mut mean0 = vec![0.0; n_b];
        for r in 1..n_b {
            let mut u = base.base_mean[r - 1];
            for &g in cs.bundle(r) {
                u += eff[g];
            }
            mean0[r] = u;
        }
        if crn {
            for e in eps.iter_mut() {
                *e = rng.sample::<f64, _>(StandardNormal);
            }
        }
        for s in 0..n_scen {
            if !crn {
                for e in eps.iter_mut() {
                    *e = rng.sample::<f64, _>(StandardNormal);
                }
            }
            // scenario s perturbs good (s-1)/2 by ±step; s = 0 is baseline
            let (good, delta) = if s == 0 {
                (usize::MAX, 0.0)
            } else {
                ((s - 1) / 2, if s % 2 == 1 { step } else { -step })
            };
            utilities[0] = eps[0];
            for r in 1..n_b {
                let mut u = mean0[r];
                if good != usize::MAX && cs.bundle(r).contains(&good) {
                    u += base.price_term[good] * delta;
                }
                utilities[r] = u + eps[r];
            }
            counts[s][crate::model::argmax_choice(&utilities)?] += 1;
        }
    }
    let total = bases.len() as f64;
    Ok(counts
        .into_iter()
        .map(|c| c.into_iter().map(|x| x as f64 / total).collect())
        .collect())
}

/// Two-sided price elasticities over a set of parameter draws.
///
/// Point estimates pool the simulated shares over all draws and passes
/// before taking the finite-difference ratio; standard errors come from the
/// spread of per-pass ratios. Cells with a zero pooled baseline share are
/// reported as NaN and listed in `undefined`.
pub fn price_elasticities(
    draws: &[PredictDraw],
    data: &PanelData,
    opts: &ElasticityOptions,
) -> Result<ElasticityTable> {
    if draws.is_empty() {
        return Err(Error::Usage("no parameter draws to predict from".into()));
    }
    if !(opts.step > 0.0 && opts.step < 1.0) {
        return Err(Error::Usage(format!("invalid elasticity step {}", opts.step)));
    }
    for d in draws {
        check_draw(d, data)?;
    }
    let cs = &data.choice_set;
    let j = cs.n_goods();
    let n_b = cs.n_bundles();
    let reps = opts.reps_per_draw.max(1);

    // one pass = (draw, rep); each owns a substream
    let passes: Vec<Vec<Vec<f64>>> = (0..draws.len() * reps)
        .into_par_iter()
        .map(|k| {
            let draw = &draws[k / reps];
            let bases = obs_bases(data, &draw.params)?;
            let mut rng = substream(opts.seed, k as u64);
            elasticity_pass(draw, data, &bases, opts.step, opts.common_random_numbers, &mut rng)
        })
        .collect::<Result<_>>()?;

    let n_pass = passes.len() as f64;
    let n_scen = 1 + 2 * j;
    // pooled shares per scenario
    let mut pooled = vec![vec![0.0; n_b]; n_scen];
    for p in &passes {
        for s in 0..n_scen {
            for r in 0..n_b {
                pooled[s][r] += p[s][r] / n_pass;
            }
        }
    }
    let good_share = |shares: &Vec<f64>, g: usize| -> f64 {
        cs.bundles_with(g).iter().map(|&r| shares[r]).sum()
    };

    let mut table = ElasticityTable {
        good: vec![vec![f64::NAN; j]; j],
        good_se: vec![vec![f64::NAN; j]; j],
        bundle: vec![vec![f64::NAN; n_b - 1]; j],
        bundle_se: vec![vec![f64::NAN; n_b - 1]; j],
        undefined: Vec::new(),
    };
    let ratio = |fwd: f64, bwd: f64, base: f64| (fwd - bwd) / base / (2.0 * opts.step);
    for pj in 0..j {
        let (sf, sb) = (1 + 2 * pj, 2 + 2 * pj);
        for k in 0..j {
            let base = good_share(&pooled[0], k);
            if base == 0.0 {
                table.undefined.push(format!("good {} wrt price {}", k + 1, pj + 1));
                continue;
            }
            table.good[pj][k] = ratio(good_share(&pooled[sf], k), good_share(&pooled[sb], k), base);
            // spread of per-pass ratios around the pooled estimate
            let per_pass: Vec<f64> = passes
                .iter()
                .filter_map(|p| {
                    let b = good_share(&p[0], k);
                    (b > 0.0).then(|| ratio(good_share(&p[sf], k), good_share(&p[sb], k), b))
                })
                .collect();
            table.good_se[pj][k] = spread_se(&per_pass);
        }
        for r in 1..n_b {
            let base = pooled[0][r];
            if base == 0.0 {
                table
                    .undefined
                    .push(format!("bundle {r} wrt price {}", pj + 1));
                continue;
            }
            table.bundle[pj][r - 1] = ratio(pooled[sf][r], pooled[sb][r], base);
            let per_pass: Vec<f64> = passes
                .iter()
                .filter_map(|p| (p[0][r] > 0.0).then(|| ratio(p[sf][r], p[sb][r], p[0][r])))
                .collect();
            table.bundle_se[pj][r - 1] = spread_se(&per_pass);
        }
    }
    Ok(table)
}

fn spread_se(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}
