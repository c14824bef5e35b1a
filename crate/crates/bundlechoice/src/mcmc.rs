//! The Gibbs sampler: latent-utility data augmentation, conjugate updates
//! for equation parameters and loadings, per-individual factor draws, and
//! the two mixing moves (random sign switch and the interweaving boost).
//!
//! A chain is strictly sequential and owns one RNG substream, so a run is
//! reproducible bit for bit regardless of how many chains run in parallel.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{draw_gaussian_posterior, draw_gig, draw_truncated_normal, substream};
use crate::model::{EquationParams, PanelData, ParamLayout, SharingMap};
use crate::predict::PredictDraw;
use crate::spec::{DeltaMask, ModelSpec, ThetaMode, Variant};
use crate::vectorize::{
    build_design_blocks, h_f_rows, h_lambda_obs, mapping_matrix, LambdaLayout, Loadings,
};

/// Factor-variant latent state.
#[derive(Debug, Clone)]
pub struct FactorState {
    pub loadings: Loadings,
    /// N x L factor values.
    pub factors: DMatrix<f64>,
}

/// Random-effects latent state.
#[derive(Debug, Clone)]
pub struct ReState {
    /// N x (J + J_p) individual effects.
    pub nu: DMatrix<f64>,
    /// (J + J_p) covariance of the effects.
    pub sigma: DMatrix<f64>,
}

/// Full sampler state.
#[derive(Debug, Clone)]
pub struct ParameterState {
    /// Equation parameters, flattened per the sampler's layout.
    pub params: EquationParams,
    /// Latent utilities per (individual, observation, bundle); index 0 is
    /// the outside option.
    pub u: Vec<Vec<Vec<f64>>>,
    pub factor: Option<FactorState>,
    pub re: Option<ReState>,
}

/// Precomputed, sweep-invariant context for one (data, spec) pair.
pub struct Sampler<'a> {
    pub data: &'a PanelData,
    pub spec: &'a ModelSpec,
    /// Effective sharing map (first-stage section dropped for exogenous
    /// fits) and its resolved layout.
    pub sharing: SharingMap,
    pub layout: ParamLayout,
    /// Effective first-stage equation count (0 for exogenous fits).
    pub j_p: usize,
    /// Good-level equation rows J + j_p.
    pub n_rows: usize,
    /// Effective loading mask and λ-vector layout (factor variants).
    pub mask: Option<DeltaMask>,
    pub lambda_layout: Option<LambdaLayout>,
    /// Constant cross-product H'H over all observations.
    gram: DMatrix<f64>,
    /// Prior precision diagonal and mean for Θ.
    prior_prec: f64,
    prior_mean: f64,
    /// RE variant: the per-observation mapping matrix and its cross-product.
    re_map: Option<(DMatrix<f64>, DMatrix<f64>)>,
    /// Largest per-individual stacked block, for the marginalized guard.
    max_block: usize,
}

impl<'a> Sampler<'a> {
    pub fn new(data: &'a PanelData, sharing: &SharingMap, spec: &'a ModelSpec) -> Result<Self> {
        let warnings = spec.validate(
            data.choice_set.n_goods(),
            if spec.endogenous { data.j_p } else { 0 },
            data.t_max,
        )?;
        for w in warnings {
            log::warn!("{w}");
        }
        if spec.endogenous && data.j_p == 0 {
            return Err(Error::Config(
                "endogenous fit requested but data has no first-stage block".into(),
            ));
        }
        let j_p = if spec.endogenous { data.j_p } else { 0 };
        let mut sharing = sharing.clone();
        if !spec.endogenous {
            sharing.theta_p.clear();
        }
        let layout = ParamLayout::resolve_dims(
            &sharing,
            &data.z_dims(),
            &data.w_dims(),
            &if spec.endogenous { data.zp_dims() } else { vec![] },
        )?;
        let j = data.choice_set.n_goods();
        let n_rows = j + j_p;
        let (mask, lambda_layout) = if spec.variant == Variant::Re {
            (None, None)
        } else {
            let mask = spec.effective_delta(j, j_p, data.t_max);
            let layout = LambdaLayout::from_mask(&mask);
            for l in 0..spec.n_factors {
                if !layout.entries.iter().any(|&(_, _, fac)| fac == l) {
                    log::warn!("factor {} has no free loadings anywhere", l + 1);
                }
            }
            (Some(mask), Some(layout))
        };

        // constant normal-equations cross-product
        let dim = layout.dim();
        let mut gram = DMatrix::zeros(dim, dim);
        let mut max_block = 0;
        for obs_list in &data.individuals {
            max_block =
                max_block.max(obs_list.len() * (data.choice_set.n_inside() + j_p));
            for obs in obs_list {
                let blocks = build_design_blocks(&data.choice_set, obs, &layout, spec.endogenous)?;
                gram.gemm_tr(1.0, &blocks.h, &blocks.h, 1.0);
            }
        }
        let re_map = (spec.variant == Variant::Re).then(|| {
            let m = mapping_matrix(&data.choice_set, j_p);
            let mtm = m.transpose() * &m;
            (m, mtm)
        });
        Ok(Sampler {
            data,
            spec,
            sharing,
            layout,
            j_p,
            n_rows,
            mask,
            lambda_layout,
            gram,
            prior_prec: 1.0 / spec.priors.v_theta,
            prior_mean: spec.priors.m_theta,
            re_map,
            max_block,
        })
    }

    /// Good-level error means ν for one observation: Λ_t f_i rows, or the
    /// individual's random effect.
    fn good_effects(&self, state: &ParameterState, i: usize, period: usize) -> DVector<f64> {
        if let Some(fs) = &state.factor {
            let lam = fs.loadings.at(period);
            let f_i = fs.factors.row(i).transpose();
            lam * f_i
        } else if let Some(re) = &state.re {
            re.nu.row(i).transpose()
        } else {
            DVector::zeros(self.n_rows)
        }
    }

    /// Deterministic stacked mean (bundle utilities then first stages) of
    /// one observation at the current Θ.
    fn stacked_mean(&self, params: &EquationParams, obs: &crate::model::Obs) -> Result<DVector<f64>> {
        crate::vectorize::stacked_mean(&self.data.choice_set, params, obs, None, self.j_p, None)
    }

    /// Initial state: Θ at the prior mean, small random free loadings,
    /// standard-normal factors, utilities from one constrained sweep.
    pub fn init_state(&self, rng: &mut ChaCha8Rng) -> Result<ParameterState> {
        let mut params = EquationParams::zeros(self.layout.clone());
        for v in params.values.iter_mut() {
            *v = self.prior_mean;
        }
        let n = self.data.n_individuals();
        let factor = if self.spec.variant == Variant::Re {
            None
        } else {
            let layout = self.lambda_layout.as_ref().unwrap();
            let v = DVector::from_fn(layout.dim(), |_, _| {
                0.1 * rng.sample::<f64, _>(StandardNormal)
            });
            Some(FactorState {
                loadings: layout.from_vec(&v)?,
                factors: DMatrix::from_fn(n, self.spec.n_factors, |_, _| {
                    rng.sample::<f64, _>(StandardNormal)
                }),
            })
        };
        let re = (self.spec.variant == Variant::Re).then(|| ReState {
            nu: DMatrix::zeros(n, self.n_rows),
            sigma: DMatrix::identity(self.n_rows, self.n_rows),
        });
        let mut state = ParameterState {
            params,
            u: Vec::with_capacity(n),
            factor,
            re,
        };
        // utilities start at their means, then one constrained sweep
        // enforces the argmax invariant
        let n_b = self.data.choice_set.n_bundles();
        for (i, obs_list) in self.data.individuals.iter().enumerate() {
            let mut per_obs = Vec::with_capacity(obs_list.len());
            for obs in obs_list {
                let eff = self.good_effects(&state, i, obs.period);
                let mut u = vec![0.0; n_b];
                for r in 1..n_b {
                    let mut m =
                        crate::model::mean_utility(&state.params, &self.data.choice_set, obs, r)?;
                    for &g in self.data.choice_set.bundle(r) {
                        m += eff[g];
                    }
                    u[r] = m;
                }
                per_obs.push(u);
            }
            state.u.push(per_obs);
        }
        self.step_latent_utilities(&mut state, rng)?;
        Ok(state)
    }

    /// Step 1: truncated-normal draws for every latent utility. The chosen
    /// bundle is truncated above the running maximum of the others; every
    /// other bundle below it.
    pub fn step_latent_utilities(
        &self,
        state: &mut ParameterState,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let cs = &self.data.choice_set;
        let n_b = cs.n_bundles();
        for (i, obs_list) in self.data.individuals.iter().enumerate() {
            for (k, obs) in obs_list.iter().enumerate() {
                let eff = self.good_effects(state, i, obs.period);
                let mut means = vec![0.0; n_b];
                for r in 1..n_b {
                    let mut m = crate::model::mean_utility(&state.params, cs, obs, r)?;
                    for &g in cs.bundle(r) {
                        m += eff[g];
                    }
                    means[r] = m;
                }
                let u = &mut state.u[i][k];
                for r in 0..n_b {
                    let other_max = u
                        .iter()
                        .enumerate()
                        .filter(|&(s, _)| s != r)
                        .map(|(_, &v)| v)
                        .fold(f64::NEG_INFINITY, f64::max);
                    u[r] = if obs.choice == r {
                        draw_truncated_normal(rng, means[r], 1.0, other_max, f64::INFINITY)?
                    } else {
                        draw_truncated_normal(rng, means[r], 1.0, f64::NEG_INFINITY, other_max)?
                    };
                }
            }
        }
        Ok(())
    }

    /// The observation's stacked outcome: inside-bundle utilities, then
    /// observed prices when the fit is endogenous.
    fn stacked_outcome(&self, state: &ParameterState, i: usize, k: usize) -> DVector<f64> {
        let r = self.data.choice_set.n_inside();
        let obs = &self.data.individuals[i][k];
        DVector::from_fn(r + self.j_p, |row, _| {
            if row < r {
                state.u[i][k][row + 1]
            } else {
                obs.prices[row - r]
            }
        })
    }

    /// Step 2, conditional form: Θ | u, ν with target ỹ = y* − ν.
    pub fn step_theta(&self, state: &mut ParameterState, rng: &mut ChaCha8Rng) -> Result<()> {
        let dim = self.layout.dim();
        let mut hty = DVector::zeros(dim);
        let cs = &self.data.choice_set;
        for (i, obs_list) in self.data.individuals.iter().enumerate() {
            for (k, obs) in obs_list.iter().enumerate() {
                let eff = self.good_effects(state, i, obs.period);
                // bundle-level residual target
                let u = &state.u[i][k];
                let mut resid = vec![0.0; cs.n_inside()];
                for r in 1..cs.n_bundles() {
                    let nu_r: f64 = cs.bundle(r).iter().map(|&g| eff[g]).sum();
                    resid[r - 1] = u[r] - nu_r;
                }
                for g in 0..cs.n_goods() {
                    let s: f64 = cs.bundles_with(g).iter().map(|&r| resid[r - 1]).sum();
                    for (slot, &col) in self.layout.theta_map[g].iter().enumerate() {
                        hty[col] += obs.z[g][slot] * s;
                    }
                }
                for q in 0..cs.n_pairs() {
                    let s: f64 = (1..cs.n_bundles())
                        .filter(|&r| cs.pairs_in(r).contains(&q))
                        .map(|r| resid[r - 1])
                        .sum();
                    for (slot, &col) in self.layout.gamma_map[q].iter().enumerate() {
                        hty[col] += obs.w[q][slot] * s;
                    }
                }
                for p in 0..self.j_p {
                    let rp = obs.prices[p] - eff[cs.n_goods() + p];
                    for (slot, &col) in self.layout.theta_p_map[p].iter().enumerate() {
                        hty[col] += obs.zp[p][slot] * rp;
                    }
                }
            }
        }
        let mut precision = self.gram.clone();
        for d in 0..dim {
            precision[(d, d)] += self.prior_prec;
            hty[d] += self.prior_prec * self.prior_mean;
        }
        let draw = draw_gaussian_posterior(rng, &precision, &hty)?;
        state.params.values.copy_from_slice(draw.as_slice());
        Ok(())
    }

    /// Step 2, marginalized form: Θ with the factors integrated out, using
    /// per-individual inverse error covariances. Guarded by the block-size
    /// cap since it scales with the stacked per-individual dimension.
    pub fn step_theta_marginalized(
        &self,
        state: &mut ParameterState,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let fs = state.factor.as_ref().ok_or_else(|| {
            Error::Config("marginalized parameter step requires a factor variant".into())
        })?;
        if self.max_block > self.spec.mcmc.marginal_cap {
            return Err(Error::Config(format!(
                "marginalized parameter step refused: per-individual block \
                 dimension {} exceeds the cap {}",
                self.max_block, self.spec.mcmc.marginal_cap
            )));
        }
        let dim = self.layout.dim();
        let l = self.spec.n_factors;
        let cs = &self.data.choice_set;
        let d = cs.n_inside() + self.j_p;
        // per-period factor operator blocks
        let n_per = fs.loadings.n_periods();
        let b_t: Vec<DMatrix<f64>> = (0..n_per)
            .map(|t| h_lambda_obs(cs, fs.loadings.at(t), self.j_p))
            .collect();
        let mut a = DMatrix::zeros(dim, dim);
        let mut b = DVector::zeros(dim);
        for (i, obs_list) in self.data.individuals.iter().enumerate() {
            let t_i = obs_list.len();
            let mut h_i = DMatrix::zeros(t_i * d, dim);
            let mut u_i = DMatrix::zeros(t_i * d, l);
            let mut y_i = DVector::zeros(t_i * d);
            for (k, obs) in obs_list.iter().enumerate() {
                let blocks = build_design_blocks(cs, obs, &self.layout, self.spec.endogenous)?;
                h_i.view_mut((k * d, 0), (d, dim)).copy_from(&blocks.h);
                u_i.view_mut((k * d, 0), (d, l))
                    .copy_from(&b_t[obs.period.min(n_per - 1)]);
                y_i.rows_mut(k * d, d)
                    .copy_from(&self.stacked_outcome(state, i, k));
            }
            // Omega^-1 = I - U (I_L + U'U)^-1 U'
            let k_mat = DMatrix::identity(l, l) + u_i.transpose() * &u_i;
            let k_chol = k_mat
                .cholesky()
                .ok_or_else(|| Error::Numeric("marginalized step: capacitance not PD".into()))?;
            let hu = h_i.transpose() * &u_i; // dim x L
            let uy = u_i.transpose() * &y_i; // L
            let k_inv_uy = k_chol.solve(&uy);
            let k_inv_uh = k_chol.solve(&hu.transpose()); // L x dim
            a.gemm_tr(1.0, &h_i, &h_i, 1.0);
            a.gemm(-1.0, &hu, &k_inv_uh, 1.0);
            b += h_i.transpose() * &y_i - &hu * k_inv_uy;
        }
        for i in 0..dim {
            a[(i, i)] += self.prior_prec;
            b[i] += self.prior_prec * self.prior_mean;
        }
        let draw = draw_gaussian_posterior(rng, &a, &b)?;
        state.params.values.copy_from_slice(draw.as_slice());
        Ok(())
    }

    /// Step 3: per-individual Gaussian factor draws.
    pub fn step_factors(&self, state: &mut ParameterState, rng: &mut ChaCha8Rng) -> Result<()> {
        let Some(fs) = state.factor.as_ref() else {
            return Ok(());
        };
        let l = self.spec.n_factors;
        let cs = &self.data.choice_set;
        let n_per = fs.loadings.n_periods();
        let b_t: Vec<DMatrix<f64>> = (0..n_per)
            .map(|t| h_lambda_obs(cs, fs.loadings.at(t), self.j_p))
            .collect();
        let btb: Vec<DMatrix<f64>> = b_t.iter().map(|b| b.transpose() * b).collect();
        let mut draws = Vec::with_capacity(self.data.n_individuals());
        for (i, obs_list) in self.data.individuals.iter().enumerate() {
            let mut precision = DMatrix::identity(l, l);
            let mut linear = DVector::zeros(l);
            for (k, obs) in obs_list.iter().enumerate() {
                let t = obs.period.min(n_per - 1);
                precision += &btb[t];
                let resid =
                    self.stacked_outcome(state, i, k) - self.stacked_mean(&state.params, obs)?;
                linear += b_t[t].transpose() * resid;
            }
            draws.push(draw_gaussian_posterior(rng, &precision, &linear)?);
        }
        let fs = state.factor.as_mut().unwrap();
        for (i, f_i) in draws.iter().enumerate() {
            fs.factors.row_mut(i).copy_from(&f_i.transpose());
        }
        Ok(())
    }

    /// Step 4: with probability 1/2 per factor, flip the signs of the
    /// factor column and its loading column. Leaves Λ f' and Ω invariant.
    pub fn step_sign_switch(&self, state: &mut ParameterState, rng: &mut ChaCha8Rng) {
        let Some(fs) = state.factor.as_mut() else {
            return;
        };
        for l in 0..self.spec.n_factors {
            if rng.gen_bool(0.5) {
                self.flip_factor(fs, l);
            }
        }
    }

    fn flip_factor(&self, fs: &mut FactorState, l: usize) {
        for lam in fs.loadings.per_period.iter_mut() {
            for r in 0..lam.nrows() {
                lam[(r, l)] = -lam[(r, l)];
            }
        }
        for i in 0..fs.factors.nrows() {
            fs.factors[(i, l)] = -fs.factors[(i, l)];
        }
    }

    /// Step 5: interweaving boost. Per factor, resample the working scale
    /// and rescale (λ_l, f_l) accordingly; λ_l f_l' is exactly preserved.
    pub fn step_mda_boost(&self, state: &mut ParameterState, rng: &mut ChaCha8Rng) -> Result<()> {
        let Some(fs) = state.factor.as_mut() else {
            return Ok(());
        };
        let layout = self.lambda_layout.as_ref().unwrap();
        let pri = &self.spec.priors;
        let n = self.data.n_individuals() as f64;
        for l in 0..self.spec.n_factors {
            let free: Vec<&(usize, usize, usize)> = layout
                .entries
                .iter()
                .filter(|&&(_, _, fac)| fac == l)
                .collect();
            let lam_sq: f64 = free
                .iter()
                .map(|&&(t, row, fac)| fs.loadings.per_period[t][(row, fac)].powi(2))
                .sum();
            let f_sq: f64 = (0..fs.factors.nrows())
                .map(|i| fs.factors[(i, l)].powi(2))
                .sum();
            let gig_err = |e: Error| {
                Error::Config(format!(
                    "interweaving boost failed for factor {} (check GIG \
                     hyperparameters gig_p/gig_a/gig_b): {e}",
                    l + 1
                ))
            };
            let psi = draw_gig(rng, pri.gig_p, pri.gig_a, pri.gig_b).map_err(gig_err)?;
            let p_bar = pri.gig_p + free.len() as f64 / 2.0 - n / 2.0;
            let a_bar = pri.gig_a + lam_sq / (psi * pri.sigma2_lambda);
            let b_bar = pri.gig_b + psi * f_sq;
            let psi_new = draw_gig(rng, p_bar, a_bar, b_bar).map_err(gig_err)?;
            let lam_scale = (psi_new / psi).sqrt();
            for &&(t, row, fac) in &free {
                fs.loadings.per_period[t][(row, fac)] *= lam_scale;
            }
            for i in 0..fs.factors.nrows() {
                fs.factors[(i, l)] /= lam_scale;
            }
        }
        Ok(())
    }

    /// The boost's GIG order parameter for a factor with `n_free` free
    /// loadings: p̄ = p_Ψ + n_free/2 − N/2.
    pub fn mda_order(gig_p: f64, n_free: usize, n_individuals: usize) -> f64 {
        gig_p + n_free as f64 / 2.0 - n_individuals as f64 / 2.0
    }

    /// Step 6: free loadings, drawn per period block (periods are
    /// independent given Θ, u, f).
    pub fn step_loadings(&self, state: &mut ParameterState, rng: &mut ChaCha8Rng) -> Result<()> {
        let Some(fs) = state.factor.as_ref() else {
            return Ok(());
        };
        let layout = self.lambda_layout.as_ref().unwrap();
        let mask = self.mask.as_ref().unwrap();
        let cs = &self.data.choice_set;
        let n_per = layout.period_ranges.len();
        let mut grams: Vec<DMatrix<f64>> = layout
            .period_ranges
            .iter()
            .map(|&(s, e)| DMatrix::zeros(e - s, e - s))
            .collect();
        let mut rhs: Vec<DVector<f64>> = layout
            .period_ranges
            .iter()
            .map(|&(s, e)| DVector::zeros(e - s))
            .collect();
        let params = state.params.clone();
        for (i, obs_list) in self.data.individuals.iter().enumerate() {
            let f_i = fs.factors.row(i).transpose();
            for (k, obs) in obs_list.iter().enumerate() {
                let t = obs.period.min(n_per - 1);
                let (start, _) = layout.period_ranges[t];
                let rows = h_f_rows(cs, layout, mask, obs.period, self.j_p, &f_i);
                let resid = self.stacked_outcome(state, i, k) - self.stacked_mean(&params, obs)?;
                for (row_idx, entries) in rows.iter().enumerate() {
                    for e1 in entries {
                        rhs[t][e1.col - start] += e1.val * resid[row_idx];
                        for e2 in entries {
                            grams[t][(e1.col - start, e2.col - start)] += e1.val * e2.val;
                        }
                    }
                }
            }
        }
        let mut lam_vec = DVector::zeros(layout.dim());
        let prior = 1.0 / self.spec.priors.sigma2_lambda;
        for t in 0..n_per {
            let (s, e) = layout.period_ranges[t];
            if e == s {
                continue;
            }
            let mut precision = grams[t].clone();
            for d in 0..e - s {
                precision[(d, d)] += prior;
            }
            let draw = draw_gaussian_posterior(rng, &precision, &rhs[t])?;
            lam_vec.rows_mut(s, e - s).copy_from(&draw);
        }
        state.factor.as_mut().unwrap().loadings = layout.from_vec(&lam_vec)?;
        Ok(())
    }

    /// RE variant: per-individual effect draws ν_i | Σ, Θ, u.
    pub fn step_re_effects(&self, state: &mut ParameterState, rng: &mut ChaCha8Rng) -> Result<()> {
        let (m, mtm) = self.re_map.as_ref().ok_or_else(|| {
            Error::Config("random-effects step on a factor-variant sampler".into())
        })?;
        let sigma_inv = {
            let re = state.re.as_ref().unwrap();
            re.sigma
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numeric("effect covariance not PD".into()))?
                .inverse()
        };
        let params = state.params.clone();
        for i in 0..self.data.n_individuals() {
            let obs_list = &self.data.individuals[i];
            let mut linear = DVector::zeros(self.n_rows);
            for (k, obs) in obs_list.iter().enumerate() {
                let resid = self.stacked_outcome(state, i, k) - self.stacked_mean(&params, obs)?;
                linear += m.transpose() * resid;
            }
            let precision = mtm * obs_list.len() as f64 + &sigma_inv;
            let nu_i = draw_gaussian_posterior(rng, &precision, &linear)?;
            state
                .re
                .as_mut()
                .unwrap()
                .nu
                .row_mut(i)
                .copy_from(&nu_i.transpose());
        }
        Ok(())
    }

    /// RE variant: Σ | ν from the conjugate inverse-Wishart update.
    pub fn step_re_sigma(&self, state: &mut ParameterState, rng: &mut ChaCha8Rng) -> Result<()> {
        let re = state.re.as_mut().ok_or_else(|| {
            Error::Config("covariance step on a factor-variant sampler".into())
        })?;
        let d = self.n_rows;
        let n = self.data.n_individuals();
        let df = (d + 2 + n) as f64;
        let mut scale = DMatrix::identity(d, d);
        scale.gemm_tr(1.0, &re.nu, &re.nu, 1.0);
        // draw Wishart(df, scale^-1) by the Bartlett factorization, then invert
        let scale_inv_chol = scale
            .cholesky()
            .ok_or_else(|| Error::Numeric("effect scatter not PD".into()))?
            .inverse()
            .cholesky()
            .ok_or_else(|| Error::Numeric("effect scatter inverse not PD".into()))?;
        let l_mat = scale_inv_chol.l();
        let mut a = DMatrix::zeros(d, d);
        for i in 0..d {
            let chi = ChiSquared::new(df - i as f64)
                .map_err(|e| Error::Numeric(format!("chi-squared draw: {e}")))?;
            a[(i, i)] = chi.sample(rng).sqrt();
            for j in 0..i {
                a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let la = l_mat * a;
        let w = &la * la.transpose();
        re.sigma = w
            .cholesky()
            .ok_or_else(|| Error::Numeric("Wishart draw not PD".into()))?
            .inverse();
        Ok(())
    }

    /// One full sweep in the printed step order.
    pub fn sweep(&self, state: &mut ParameterState, rng: &mut ChaCha8Rng) -> Result<()> {
        self.step_latent_utilities(state, rng)?;
        match self.spec.mcmc.theta_mode {
            ThetaMode::Conditional => self.step_theta(state, rng)?,
            ThetaMode::Marginalized => self.step_theta_marginalized(state, rng)?,
        }
        if self.spec.variant == Variant::Re {
            self.step_re_effects(state, rng)?;
            self.step_re_sigma(state, rng)?;
        } else {
            self.step_factors(state, rng)?;
            self.step_sign_switch(state, rng);
            self.step_mda_boost(state, rng)?;
            self.step_loadings(state, rng)?;
        }
        Ok(())
    }
}

/// Reproducibility metadata for a stored chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub seed: u64,
    pub burn_in: usize,
    pub draws: usize,
    pub thinning: usize,
    pub spec_hash: String,
    /// Elapsed sampling time; informational only and excluded from the
    /// stored file so identical runs produce bit-identical artifacts.
    #[serde(skip)]
    pub wall_secs: f64,
}

/// Everything needed to continue a finished chain deterministically: the
/// RNG position and the full latent state after the last sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResumeState {
    pub rng: ChaCha8Rng,
    pub theta: Vec<f64>,
    pub u: Vec<Vec<Vec<f64>>>,
    pub lambda: Vec<f64>,
    pub factors: Vec<f64>,
    pub nu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sweeps_done: usize,
}

/// Thinned post-burn-in draws plus everything needed to re-run or predict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub spec: ModelSpec,
    pub sharing: SharingMap,
    pub param_names: Vec<String>,
    /// Effective loading mask (factor variants).
    pub mask: Option<DeltaMask>,
    pub n_individuals: usize,
    pub n_rows: usize,
    pub theta: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub factors: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub meta: ChainMeta,
    pub resume: Option<ResumeState>,
}

impl PosteriorChain {
    pub fn n_draws(&self) -> usize {
        self.theta.len()
    }

    /// Reconstruct prediction inputs from every `stride`-th stored draw.
    pub fn predict_draws(&self, data: &PanelData, stride: usize) -> Result<Vec<PredictDraw>> {
        if self.theta.is_empty() {
            return Err(Error::Usage("empty chain".into()));
        }
        let stride = stride.max(1);
        let layout = ParamLayout::resolve_dims(
            &self.sharing,
            &data.z_dims(),
            &data.w_dims(),
            &if self.spec.endogenous {
                data.zp_dims()
            } else {
                vec![]
            },
        )?;
        let lambda_layout = self.mask.as_ref().map(LambdaLayout::from_mask);
        let n = self.n_individuals;
        let l = self.spec.n_factors;
        let mut out = Vec::new();
        for m in (0..self.theta.len()).step_by(stride) {
            let params = EquationParams {
                layout: layout.clone(),
                values: self.theta[m].clone(),
            };
            let (loadings, factors) = if let Some(ll) = &lambda_layout {
                if self.factors.len() != self.theta.len() {
                    return Err(Error::Usage(
                        "chain stored no factor draws; cannot predict".into(),
                    ));
                }
                let v = DVector::from_column_slice(&self.lambda[m]);
                let f = DMatrix::from_fn(n, l, |i, c| self.factors[m][i * l + c]);
                (Some(ll.from_vec(&v)?), Some(f))
            } else {
                (None, None)
            };
            let nu = (!self.nu.is_empty()).then(|| {
                DMatrix::from_fn(n, self.n_rows, |i, c| self.nu[m][i * self.n_rows + c])
            });
            out.push(PredictDraw {
                params,
                loadings,
                factors,
                nu,
            });
        }
        Ok(out)
    }
}

/// Hash of everything that determines a run's output, for the chain header.
pub fn spec_hash(spec: &ModelSpec, sharing: &SharingMap, data: &PanelData) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(spec).unwrap_or_default());
    hasher.update(serde_json::to_vec(sharing).unwrap_or_default());
    hasher.update(data.n_individuals().to_le_bytes());
    for obs_list in &data.individuals {
        for obs in obs_list {
            hasher.update(obs.period.to_le_bytes());
            hasher.update(obs.choice.to_le_bytes());
            for xs in [&obs.prices]
                .into_iter()
                .chain(obs.z.iter())
                .chain(obs.w.iter())
                .chain(obs.zp.iter())
            {
                for &x in xs {
                    hasher.update(x.to_le_bytes());
                }
            }
        }
    }
    format!("{:x}", hasher.finalize())
}

/// Advance `n_sweeps` sweeps, retaining thinned post-burn-in draws into
/// `chain`. `done` counts sweeps already executed before this call.
fn run_sweeps(
    sampler: &Sampler,
    state: &mut ParameterState,
    rng: &mut ChaCha8Rng,
    chain: &mut PosteriorChain,
    done: usize,
    n_sweeps: usize,
) -> Result<()> {
    let m = &sampler.spec.mcmc;
    for sweep_idx in done..done + n_sweeps {
        sampler
            .sweep(state, rng)
            .map_err(|e| Error::Numeric(format!("sweep {sweep_idx} failed: {e}")))?;
        if sweep_idx >= m.burn_in && (sweep_idx - m.burn_in + 1) % m.thinning == 0 {
            chain.theta.push(state.params.values.clone());
            if let Some(fs) = &state.factor {
                let ll = sampler.lambda_layout.as_ref().unwrap();
                chain.lambda.push(ll.to_vec(&fs.loadings)?.as_slice().to_vec());
                if m.store_factors {
                    chain
                        .factors
                        .push(fs.factors.transpose().as_slice().to_vec());
                }
            }
            if let Some(re) = &state.re {
                chain.nu.push(re.nu.transpose().as_slice().to_vec());
                chain.sigma.push(re.sigma.as_slice().to_vec());
            }
        }
    }
    Ok(())
}

fn snapshot(sampler: &Sampler, state: &ParameterState, rng: &ChaCha8Rng, done: usize) -> ResumeState {
    let (lambda, factors) = match &state.factor {
        Some(fs) => {
            let ll = sampler.lambda_layout.as_ref().unwrap();
            (
                ll.to_vec(&fs.loadings)
                    .map(|v| v.as_slice().to_vec())
                    .unwrap_or_default(),
                fs.factors.transpose().as_slice().to_vec(),
            )
        }
        None => (vec![], vec![]),
    };
    let (nu, sigma) = match &state.re {
        Some(re) => (
            re.nu.transpose().as_slice().to_vec(),
            re.sigma.as_slice().to_vec(),
        ),
        None => (vec![], vec![]),
    };
    ResumeState {
        rng: rng.clone(),
        theta: state.params.values.clone(),
        u: state.u.clone(),
        lambda,
        factors,
        nu,
        sigma,
        sweeps_done: done,
    }
}

fn restore(sampler: &Sampler, rs: &ResumeState) -> Result<ParameterState> {
    let n = sampler.data.n_individuals();
    let l = sampler.spec.n_factors;
    let factor = match &sampler.lambda_layout {
        Some(ll) => {
            let v = DVector::from_column_slice(&rs.lambda);
            Some(FactorState {
                loadings: ll.from_vec(&v)?,
                factors: DMatrix::from_fn(n, l, |i, c| rs.factors[i * l + c]),
            })
        }
        None => None,
    };
    let d = sampler.n_rows;
    let re = (sampler.spec.variant == Variant::Re).then(|| ReState {
        nu: DMatrix::from_fn(n, d, |i, c| rs.nu[i * d + c]),
        sigma: DMatrix::from_fn(d, d, |i, j| rs.sigma[i * d + j]),
    });
    Ok(ParameterState {
        params: EquationParams {
            layout: sampler.layout.clone(),
            values: rs.theta.clone(),
        },
        u: rs.u.clone(),
        factor,
        re,
    })
}

fn empty_chain(sampler: &Sampler, data: &PanelData, spec: &ModelSpec) -> PosteriorChain {
    let m = &spec.mcmc;
    PosteriorChain {
        spec: spec.clone(),
        sharing: sampler.sharing.clone(),
        param_names: sampler.layout.names.clone(),
        mask: sampler.mask.clone(),
        n_individuals: data.n_individuals(),
        n_rows: sampler.n_rows,
        theta: vec![],
        lambda: vec![],
        factors: vec![],
        nu: vec![],
        sigma: vec![],
        meta: ChainMeta {
            seed: m.seed,
            burn_in: m.burn_in,
            draws: m.draws,
            thinning: m.thinning,
            spec_hash: spec_hash(spec, &sampler.sharing, data),
            wall_secs: 0.0,
        },
        resume: None,
    }
}

/// Run one chain to completion.
pub fn run_chain(data: &PanelData, sharing: &SharingMap, spec: &ModelSpec) -> Result<PosteriorChain> {
    let start = std::time::Instant::now();
    let sampler = Sampler::new(data, sharing, spec)?;
    let mut rng = substream(spec.mcmc.seed, 0);
    let mut state = sampler.init_state(&mut rng)?;
    let mut chain = empty_chain(&sampler, data, spec);
    let total = spec.mcmc.burn_in + spec.mcmc.draws;
    run_sweeps(&sampler, &mut state, &mut rng, &mut chain, 0, total)?;
    chain.resume = Some(snapshot(&sampler, &state, &rng, total));
    chain.meta.wall_secs = start.elapsed().as_secs_f64();
    Ok(chain)
}

/// Continue a finished chain for `extra_draws` more retained sweeps. The
/// concatenation of the original draws and the continuation is identical
/// to one longer run with the same seed.
pub fn resume_chain(
    data: &PanelData,
    prev: &PosteriorChain,
    extra_draws: usize,
) -> Result<PosteriorChain> {
    let rs = prev
        .resume
        .as_ref()
        .ok_or_else(|| Error::Usage("chain carries no resume state".into()))?;
    let start = std::time::Instant::now();
    let sampler = Sampler::new(data, &prev.sharing, &prev.spec)?;
    let hash = spec_hash(&prev.spec, &sampler.sharing, data);
    if hash != prev.meta.spec_hash {
        return Err(Error::Config(
            "chain was produced under a different spec or dataset; refusing to resume".into(),
        ));
    }
    let mut rng = rs.rng.clone();
    let mut state = restore(&sampler, rs)?;
    let mut chain = prev.clone();
    run_sweeps(
        &sampler,
        &mut state,
        &mut rng,
        &mut chain,
        rs.sweeps_done,
        extra_draws,
    )?;
    chain.resume = Some(snapshot(&sampler, &state, &rng, rs.sweeps_done + extra_draws));
    chain.meta.draws += extra_draws;
    chain.meta.wall_secs += start.elapsed().as_secs_f64();
    Ok(chain)
}

/// Per-parameter posterior summary.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    /// First-half vs second-half mean gap in units of its standard error;
    /// large values flag non-stationarity.
    pub split_stat: f64,
}

fn summarize_series(name: &str, xs: &[f64]) -> SummaryRow {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let half = xs.len() / 2;
    let split_stat = if half >= 2 {
        let (a, b) = xs.split_at(half);
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (a.len() - 1) as f64;
        let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (b.len() - 1) as f64;
        let se = (va / a.len() as f64 + vb / b.len() as f64).sqrt();
        if se == 0.0 {
            0.0
        } else {
            (ma - mb).abs() / se
        }
    } else {
        0.0
    };
    SummaryRow {
        name: name.to_string(),
        mean,
        sd,
        q05: q(0.05),
        q50: q(0.50),
        q95: q(0.95),
        split_stat,
    }
}

/// Summaries of the stored equation parameters (and Σ entries for the
/// random-effects variant).
pub fn summarize(chain: &PosteriorChain) -> Result<Vec<SummaryRow>> {
    if chain.theta.is_empty() {
        return Err(Error::Usage("cannot summarize an empty chain".into()));
    }
    let mut rows = Vec::new();
    for (p, name) in chain.param_names.iter().enumerate() {
        let series: Vec<f64> = chain.theta.iter().map(|d| d[p]).collect();
        rows.push(summarize_series(name, &series));
    }
    if !chain.sigma.is_empty() {
        let d = chain.n_rows;
        for a in 0..d {
            for b in a..d {
                let series: Vec<f64> = chain.sigma.iter().map(|s| s[a * d + b]).collect();
                rows.push(summarize_series(&format!("sigma[{},{}]", a + 1, b + 1), &series));
            }
        }
    }
    Ok(rows)
}
