//! Synthetic data generation for Monte-Carlo studies, plus ground-truth
//! elasticities evaluated at the generating parameters.
//!
//! The default configuration reproduces the published simulation design:
//! three goods with endogenous prices, a shared price coefficient of -1,
//! pairwise bundle intercepts making goods 1 and 2 complements and 2 and 3
//! substitutes, and two latent factors whose first loading column is fixed
//! while the others are redrawn every period.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{draw_truncated_normal, substream};
use crate::model::{ChoiceSet, EquationParams, Obs, PanelData, ParamLayout, SharingMap};
use crate::predict::{price_elasticities, ElasticityOptions, ElasticityTable, PredictDraw};
use crate::vectorize::Loadings;

/// Generating-process configuration. Defaults reproduce the published
/// three-good design; all fields are overridable and the shapes generalize
/// to other good counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub n_individuals: usize,
    pub n_periods: usize,
    pub n_goods: usize,
    /// Number of endogenous prices; either 0 (fully exogenous prices) or
    /// equal to `n_goods`.
    pub n_endogenous: usize,
    /// Shared price coefficient in every good utility.
    pub alpha: f64,
    /// Per good: coefficients on (intercept, x1, x2).
    pub beta: Vec<Vec<f64>>,
    /// Shared slope on the family-size covariate in every bundle effect.
    pub gamma_common: f64,
    /// Per-pair bundle intercepts, canonical pair order.
    pub gamma_pair: Vec<f64>,
    /// Per price equation: coefficients on (market price, intercept,
    /// instrument, x1, x2).
    pub theta_p: Vec<Vec<f64>>,
    /// Total latent factors; the first column of the loading matrix is the
    /// fixed `lambda1`, the rest are redrawn from N(0, I) each period.
    pub n_factors: usize,
    /// Fixed first loading column over the J + J_p equation rows.
    pub lambda1: Vec<f64>,
    /// Market-price law per good: mean and variance.
    pub market_price_mean: Vec<f64>,
    pub market_price_var: Vec<f64>,
    /// Individual covariate laws.
    pub x1_mean: f64,
    pub x1_var: f64,
    pub x2_mean: f64,
    pub x2_var: f64,
    /// Family size is uniform on {1, ..., family_size_max}.
    pub family_size_max: u32,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n_individuals: 1000,
            n_periods: 12,
            n_goods: 3,
            n_endogenous: 3,
            alpha: -1.0,
            beta: vec![
                vec![1.0, 0.2, 0.1],
                vec![2.0, 0.2, 0.1],
                vec![2.0, 0.1, 0.05],
            ],
            gamma_common: 0.05,
            gamma_pair: vec![2.0, 0.0, -1.0],
            // the market price enters with unit slope; the small x2 terms
            // differentiate the three price levels across individuals
            theta_p: vec![
                vec![1.0, 0.0, 0.5, 0.0, 0.01],
                vec![1.0, 0.0, 0.5, 0.0, 0.0],
                vec![1.0, 0.0, 0.5, 0.0, -0.01],
            ],
            n_factors: 2,
            lambda1: vec![1.0, 0.0, -1.0, 1.0, 0.0, -1.0],
            market_price_mean: vec![7.0, 6.0, 5.0],
            market_price_var: vec![0.04, 0.01, 0.01],
            x1_mean: 10.0,
            x1_var: 0.7225,
            x2_mean: 10.0,
            x2_var: 36.0,
            family_size_max: 6,
            seed: 0,
        }
    }
}

impl DgpConfig {
    /// A structurally similar configuration for an arbitrary good count,
    /// used for scale testing. Coefficients follow simple deterministic
    /// patterns in the spirit of the defaults.
    pub fn scaled(n: usize, t: usize, j: usize, endogenous: bool) -> Result<Self> {
        if j < 1 {
            return Err(Error::Config("need at least one good".into()));
        }
        let j_p = if endogenous { j } else { 0 };
        let cs = ChoiceSet::enumerate(j)?;
        let rows = j + j_p;
        Ok(DgpConfig {
            n_individuals: n,
            n_periods: t,
            n_goods: j,
            n_endogenous: j_p,
            beta: (0..j)
                .map(|g| vec![1.0 + (g % 2) as f64, 0.2, 0.1 - 0.01 * g as f64])
                .collect(),
            gamma_pair: (0..cs.n_pairs())
                .map(|q| match q % 3 {
                    0 => 1.0,
                    1 => 0.0,
                    _ => -1.0,
                })
                .collect(),
            theta_p: (0..j_p)
                .map(|g| vec![1.0, 0.0, 0.5, 0.0, 0.01 - 0.01 * g as f64])
                .collect(),
            lambda1: (0..rows)
                .map(|r| match r % 3 {
                    0 => 1.0,
                    1 => 0.0,
                    _ => -1.0,
                })
                .collect(),
            market_price_mean: (0..j).map(|g| 7.0 - (g % 3) as f64).collect(),
            market_price_var: (0..j)
                .map(|g| if g == 0 { 0.04 } else { 0.01 })
                .collect(),
            ..DgpConfig::default()
        })
    }

    pub fn validate(&self) -> Result<ChoiceSet> {
        let cs = ChoiceSet::enumerate(self.n_goods)?;
        if self.n_endogenous != 0 && self.n_endogenous != self.n_goods {
            return Err(Error::Config(
                "endogenous price count must be 0 or equal to the good count".into(),
            ));
        }
        let rows = self.n_goods + self.n_endogenous;
        if self.beta.len() != self.n_goods || self.beta.iter().any(|b| b.len() != 3) {
            return Err(Error::Config("beta must be one (intercept, x1, x2) triple per good".into()));
        }
        if self.gamma_pair.len() != cs.n_pairs() {
            return Err(Error::Config(format!(
                "gamma_pair needs {} entries (one per good pair)",
                cs.n_pairs()
            )));
        }
        if self.theta_p.len() != self.n_endogenous
            || self.theta_p.iter().any(|t| t.len() != 5)
        {
            return Err(Error::Config(
                "theta_p must be one 5-vector per endogenous price".into(),
            ));
        }
        if self.n_factors > 0 && self.lambda1.len() != rows {
            return Err(Error::Config(format!(
                "lambda1 needs {rows} entries (goods then prices)"
            )));
        }
        if self.market_price_mean.len() != self.n_goods
            || self.market_price_var.len() != self.n_goods
        {
            return Err(Error::Config("market price laws must cover every good".into()));
        }
        if self.market_price_var.iter().any(|&v| v < 0.0)
            || self.x1_var < 0.0
            || self.x2_var <= 0.0
        {
            return Err(Error::Config("variances must be nonnegative".into()));
        }
        if self.n_individuals == 0 || self.n_periods == 0 || self.family_size_max == 0 {
            return Err(Error::Config("empty panel dimensions".into()));
        }
        Ok(cs)
    }

    /// The coefficient-sharing structure of the generating process: one
    /// common price coefficient, one common family-size slope, everything
    /// else good- or pair-specific.
    pub fn sharing_map(&self) -> SharingMap {
        let theta = (0..self.n_goods)
            .map(|g| {
                vec![
                    "alpha".to_string(),
                    format!("b{}_0", g + 1),
                    format!("b{}_1", g + 1),
                    format!("b{}_2", g + 1),
                ]
            })
            .collect();
        let cs = ChoiceSet::enumerate(self.n_goods).expect("validated");
        let gamma = cs
            .pairs()
            .iter()
            .map(|&(a, b)| {
                vec![
                    "gamma_fam".to_string(),
                    format!("g{}_{}", a + 1, b + 1),
                ]
            })
            .collect();
        let theta_p = (0..self.n_endogenous)
            .map(|g| (0..5).map(|k| format!("fs{}_{k}", g + 1)).collect())
            .collect();
        SharingMap {
            theta,
            gamma,
            theta_p,
        }
    }

    fn true_parts(&self, cs: &ChoiceSet) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let theta = (0..self.n_goods)
            .map(|g| {
                vec![
                    self.alpha,
                    self.beta[g][0],
                    self.beta[g][1],
                    self.beta[g][2],
                ]
            })
            .collect();
        let gamma = (0..cs.n_pairs())
            .map(|q| vec![self.gamma_common, self.gamma_pair[q]])
            .collect();
        (theta, gamma, self.theta_p.clone())
    }
}

/// Everything the generator actually used: the parameter values, the
/// realized loadings and factors, and the seed. Loadings are recorded for
/// covariance checks and truth-mode prediction only; they are not
/// identified targets for estimation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    pub config: DgpConfig,
    pub sharing: SharingMap,
    /// Flattened parameter vector in the layout implied by `sharing`.
    pub theta_values: Vec<f64>,
    /// Per period: (J + J_p) x L loading matrix, row-major.
    pub loadings: Vec<Vec<Vec<f64>>>,
    /// N x L realized factors.
    pub factors: Vec<Vec<f64>>,
}

impl TruthRecord {
    pub fn equation_params(&self, data: &PanelData) -> Result<EquationParams> {
        let layout = ParamLayout::resolve(&self.sharing, data)?;
        if layout.dim() != self.theta_values.len() {
            return Err(Error::Data("truth record does not match data layout".into()));
        }
        Ok(EquationParams {
            layout,
            values: self.theta_values.clone(),
        })
    }

    pub fn loadings_state(&self) -> Loadings {
        Loadings {
            per_period: self
                .loadings
                .iter()
                .map(|p| {
                    let rows = p.len();
                    let cols = p.first().map_or(0, |r| r.len());
                    DMatrix::from_fn(rows, cols, |i, j| p[i][j])
                })
                .collect(),
        }
    }

    pub fn factor_matrix(&self) -> DMatrix<f64> {
        let n = self.factors.len();
        let l = self.factors.first().map_or(0, |f| f.len());
        DMatrix::from_fn(n, l, |i, j| self.factors[i][j])
    }

    /// The truth as a prediction input, conditioning on the realized
    /// factors and loadings.
    pub fn predict_draw(&self, data: &PanelData) -> Result<PredictDraw> {
        Ok(PredictDraw {
            params: self.equation_params(data)?,
            loadings: (self.config.n_factors > 0).then(|| self.loadings_state()),
            factors: (self.config.n_factors > 0).then(|| self.factor_matrix()),
            nu: None,
        })
    }
}

// substream ids within the dataset seed
const STREAM_PERIOD: u64 = 0;
const STREAM_INDIVIDUAL: u64 = 1;
const STREAM_OBS: u64 = 2;

/// Simulate one dataset. Identical configurations produce identical output.
pub fn simulate_dataset(cfg: &DgpConfig) -> Result<(PanelData, TruthRecord)> {
    let cs = cfg.validate()?;
    let (n, t, j, j_p, l) = (
        cfg.n_individuals,
        cfg.n_periods,
        cfg.n_goods,
        cfg.n_endogenous,
        cfg.n_factors,
    );
    let rows = j + j_p;

    // period-level state: market prices and per-period loadings
    let mut rng_t = substream(cfg.seed, STREAM_PERIOD);
    let mut market = vec![vec![0.0; j]; t];
    let mut loadings = Vec::with_capacity(t);
    for period in market.iter_mut() {
        for g in 0..j {
            let sd = cfg.market_price_var[g].sqrt();
            period[g] = cfg.market_price_mean[g] + sd * rng_t.sample::<f64, _>(StandardNormal);
        }
        let mut lam = DMatrix::zeros(rows, l);
        if l > 0 {
            // first column fixed; remaining columns fresh standard normals
            for r in 0..rows {
                lam[(r, 0)] = cfg.lambda1[r];
            }
            for c in 1..l {
                for r in 0..rows {
                    lam[(r, c)] = rng_t.sample::<f64, _>(StandardNormal);
                }
            }
        }
        loadings.push(lam);
    }

    // individual-level state
    let mut rng_i = substream(cfg.seed, STREAM_INDIVIDUAL);
    let mut x1 = vec![0.0; n];
    let mut x2 = vec![0.0; n];
    let mut family = vec![0.0; n];
    let mut factors = DMatrix::zeros(n, l);
    for i in 0..n {
        x1[i] = cfg.x1_mean + cfg.x1_var.sqrt() * rng_i.sample::<f64, _>(StandardNormal);
        x2[i] = draw_truncated_normal(
            &mut rng_i,
            cfg.x2_mean,
            cfg.x2_var.sqrt(),
            0.0,
            f64::INFINITY,
        )?;
        family[i] = rng_i.gen_range(1..=cfg.family_size_max) as f64;
        for c in 0..l {
            factors[(i, c)] = rng_i.sample::<f64, _>(StandardNormal);
        }
    }

    // observation-level generation
    let (theta_true, gamma_true, theta_p_true) = cfg.true_parts(&cs);
    let mut rng_o = substream(cfg.seed, STREAM_OBS);
    let mut individuals = Vec::with_capacity(n);
    let mut utilities = vec![0.0; cs.n_bundles()];
    for i in 0..n {
        let mut obs_list = Vec::with_capacity(t);
        for period in 0..t {
            let lam = &loadings[period];
            // structural errors nu = Lambda_t f_i over the equation rows
            let mut nu = vec![0.0; rows];
            for r in 0..rows {
                for c in 0..l {
                    nu[r] += lam[(r, c)] * factors[(i, c)];
                }
            }
            // prices: first stage when endogenous, market price plus noise
            // otherwise
            let mut inst = vec![0.0; j];
            let mut prices = vec![0.0; j];
            for g in 0..j {
                inst[g] = rng_o.sample::<f64, _>(StandardNormal);
                let eps_p: f64 = rng_o.sample(StandardNormal);
                if j_p > 0 {
                    let zp = [market[period][g], 1.0, inst[g], x1[i], x2[i]];
                    let mean: f64 = zp
                        .iter()
                        .zip(&theta_p_true[g])
                        .map(|(a, b)| a * b)
                        .sum();
                    prices[g] = mean + nu[j + g] + eps_p;
                } else {
                    prices[g] = market[period][g] + eps_p;
                }
            }
            // utilities and choice
            utilities[0] = rng_o.sample::<f64, _>(StandardNormal);
            for b in 1..cs.n_bundles() {
                let mut u: f64 = rng_o.sample(StandardNormal);
                for &g in cs.bundle(b) {
                    u += theta_true[g][0] * prices[g]
                        + theta_true[g][1]
                        + theta_true[g][2] * x1[i]
                        + theta_true[g][3] * x2[i]
                        + nu[g];
                }
                for &q in cs.pairs_in(b) {
                    u += gamma_true[q][0] * family[i] + gamma_true[q][1];
                }
                utilities[b] = u;
            }
            let choice = crate::model::argmax_choice(&utilities)?;
            obs_list.push(Obs {
                period,
                choice,
                prices: if j_p > 0 { prices.clone() } else { vec![] },
                z: (0..j)
                    .map(|g| vec![prices[g], 1.0, x1[i], x2[i]])
                    .collect(),
                w: (0..cs.n_pairs()).map(|_| vec![family[i], 1.0]).collect(),
                zp: (0..j_p)
                    .map(|g| vec![market[period][g], 1.0, inst[g], x1[i], x2[i]])
                    .collect(),
            });
        }
        individuals.push(obs_list);
    }

    let data = PanelData::new(cs.clone(), j_p, Some(0), individuals)?;
    let sharing = cfg.sharing_map();
    let layout = ParamLayout::resolve(&sharing, &data)?;
    let params = EquationParams::from_parts(layout, &theta_true, &gamma_true, &theta_p_true)?;
    let truth = TruthRecord {
        config: cfg.clone(),
        sharing,
        theta_values: params.values,
        loadings: loadings
            .iter()
            .map(|m| {
                (0..m.nrows())
                    .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
                    .collect()
            })
            .collect(),
        factors: (0..n)
            .map(|i| (0..l).map(|c| factors[(i, c)]).collect())
            .collect(),
    };
    Ok((data, truth))
}

/// Ground-truth good-level elasticities: the predictive elasticity
/// procedure run at the generating parameters, conditioning on the realized
/// factors and loadings, with `n_reps` fresh-error passes.
pub fn true_elasticities(
    data: &PanelData,
    truth: &TruthRecord,
    n_reps: usize,
    seed: u64,
) -> Result<ElasticityTable> {
    let draw = truth.predict_draw(data)?;
    let opts = ElasticityOptions {
        reps_per_draw: n_reps.max(1),
        seed,
        ..Default::default()
    };
    price_elasticities(&[draw], data, &opts)
}
