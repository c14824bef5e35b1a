//! Model variants, factor-count guidance, priors, and sampler settings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Error-covariance structure of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Random effects: unrestricted individual effect ν_i ~ N(0, Σ),
    /// constant over time.
    Re,
    /// Factor-augmented: ν_i = Λ f_i with a time-invariant loading matrix.
    Fa,
    /// Time-varying factor-augmented: ν_it = Λ_t f_i, loadings per period.
    TvFa,
}

impl Variant {
    pub fn time_varying(self) -> bool {
        matches!(self, Variant::TvFa)
    }
}

/// Guideline factor count for the FA variant: matches the number of free
/// error-covariance parameters of the random-effects benchmark, so the
/// factor structure restricts nothing. For J + J_p equation rows this is
/// the smallest L whose L(J+J_p) free loadings reach the RE covariance's
/// (J+J_p)(J+J_p+1)/2 parameters, which is ceil((J + J_p + 1) / 2).
pub fn guideline_factors(j: usize, j_p: usize) -> usize {
    (j + j_p + 1).div_ceil(2)
}

/// Guideline range for a variant: FA pins L to the matched count, TV-FA
/// recommends up to two extra factors to absorb time variation.
pub fn guideline_range(variant: Variant, j: usize, j_p: usize) -> (usize, usize) {
    let l = guideline_factors(j, j_p);
    match variant {
        Variant::Re => (0, usize::MAX),
        Variant::Fa => (l, l),
        Variant::TvFa => (l, l + 2),
    }
}

/// Prior hyperparameters. Defaults are diffuse but proper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    /// Prior mean of every equation parameter.
    pub m_theta: f64,
    /// Prior variance of every equation parameter (V_Θ = v_theta · I).
    pub v_theta: f64,
    /// Prior variance of each free factor loading.
    pub sigma2_lambda: f64,
    /// Working-parameter prior for the interweaving boost, GIG(p, a, b).
    pub gig_p: f64,
    pub gig_a: f64,
    pub gig_b: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            m_theta: 0.0,
            v_theta: 100.0,
            sigma2_lambda: 1.0,
            gig_p: 1.0,
            gig_a: 1.0,
            gig_b: 1.0,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_theta > 0.0) || !(self.sigma2_lambda > 0.0) {
            return Err(Error::Config(
                "prior variances v_theta and sigma2_lambda must be positive".into(),
            ));
        }
        if !(self.gig_a > 0.0) || !(self.gig_b > 0.0) {
            return Err(Error::Config(
                "GIG working-prior hyperparameters a and b must be positive".into(),
            ));
        }
        if !self.gig_p.is_finite() {
            return Err(Error::Config("GIG working-prior p must be finite".into()));
        }
        Ok(())
    }
}

/// How the equation-parameter step conditions on the factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaMode {
    /// Draw Θ given f (residual target subtracts the factor contribution).
    #[default]
    Conditional,
    /// Integrate f out of the likelihood, weighting cross-products by the
    /// per-individual inverse error covariance. Only viable for small
    /// per-individual blocks, so it is guarded by `marginal_cap`.
    Marginalized,
}

/// Chain-length and sampler-mode settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSettings {
    pub burn_in: usize,
    pub draws: usize,
    pub thinning: usize,
    pub seed: u64,
    pub theta_mode: ThetaMode,
    /// Largest allowed (R + J_p) · T_i for the marginalized Θ step.
    pub marginal_cap: usize,
    /// Store the factor draws alongside Θ and λ.
    pub store_factors: bool,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            burn_in: 10_000,
            draws: 10_000,
            thinning: 1,
            seed: 0,
            theta_mode: ThetaMode::Conditional,
            marginal_cap: 512,
            store_factors: true,
        }
    }
}

/// Loading sparsity mask: one (J + J_p) x L binary matrix per period.
/// Entry (row, l) = 1 means that loading is free; 0 pins it to zero.
/// Rows 0..J are the utility equations, rows J..J+J_p the first stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaMask {
    pub periods: Vec<Vec<Vec<u8>>>,
}

impl DeltaMask {
    /// All loadings free in every period.
    pub fn all_free(n_rows: usize, l: usize, t: usize) -> Self {
        DeltaMask {
            periods: vec![vec![vec![1; l]; n_rows]; t.max(1)],
        }
    }

    pub fn entry(&self, t: usize, row: usize, l: usize) -> u8 {
        let p = &self.periods[t.min(self.periods.len() - 1)];
        p[row][l]
    }

    fn constant_over_time(&self) -> bool {
        self.periods.windows(2).all(|w| w[0] == w[1])
    }
}

/// Full model specification: variant, endogeneity, factor structure,
/// priors, and sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub endogenous: bool,
    /// Number of latent factors (ignored by the RE variant).
    pub n_factors: usize,
    /// Loading sparsity mask; `None` means all free.
    pub delta: Option<DeltaMask>,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default)]
    pub mcmc: McmcSettings,
}

impl ModelSpec {
    pub fn new(variant: Variant, endogenous: bool, n_factors: usize) -> Self {
        ModelSpec {
            variant,
            endogenous,
            n_factors,
            delta: None,
            priors: Priors::default(),
            mcmc: McmcSettings::default(),
        }
    }

    /// Check the spec against panel dimensions. Returns guideline warnings
    /// (factor count outside the recommended range); hard inconsistencies
    /// are errors.
    pub fn validate(&self, j: usize, j_p: usize, t_max: usize) -> Result<Vec<String>> {
        self.priors.validate()?;
        if self.mcmc.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        if self.endogenous && j_p == 0 {
            return Err(Error::Config(
                "endogenous variant requires first-stage data (J_p >= 1)".into(),
            ));
        }
        let rows = j + if self.endogenous { j_p } else { 0 };
        if self.variant != Variant::Re && self.n_factors == 0 {
            return Err(Error::Config(
                "factor-augmented variants need at least one factor".into(),
            ));
        }
        if let Some(delta) = &self.delta {
            if delta.periods.is_empty() {
                return Err(Error::Config("empty loading mask".into()));
            }
            for p in &delta.periods {
                if p.len() != rows || p.iter().any(|r| r.len() != self.n_factors) {
                    return Err(Error::Config(format!(
                        "loading mask must be {rows} x {} per period",
                        self.n_factors
                    )));
                }
            }
            if self.variant != Variant::TvFa && !delta.constant_over_time() {
                return Err(Error::Config(
                    "time-varying loading mask requires the time-varying variant".into(),
                ));
            }
            if self.variant == Variant::TvFa
                && delta.periods.len() != 1
                && delta.periods.len() != t_max
            {
                return Err(Error::Config(format!(
                    "loading mask has {} periods, panel has {t_max}",
                    delta.periods.len()
                )));
            }
        }
        let mut warnings = Vec::new();
        if self.variant != Variant::Re {
            let (lo, hi) = guideline_range(self.variant, j, j_p);
            if self.n_factors < lo || self.n_factors > hi {
                let w = format!(
                    "factor count L={} outside the recommended range [{lo}, {hi}] \
                     for J={j}, J_p={j_p}",
                    self.n_factors
                );
                warnings.push(w);
            }
        }
        Ok(warnings)
    }

    /// The mask in effect, defaulting to all free and, for the time-varying
    /// variant, replicating a single-period mask across all periods.
    pub fn effective_delta(&self, j: usize, j_p: usize, t_max: usize) -> DeltaMask {
        let rows = j + if self.endogenous { j_p } else { 0 };
        let t_eff = if self.variant == Variant::TvFa { t_max } else { 1 };
        match &self.delta {
            None => DeltaMask::all_free(rows, self.n_factors, t_eff),
            Some(d) if d.periods.len() == t_eff => d.clone(),
            Some(d) => DeltaMask {
                periods: vec![d.periods[0].clone(); t_eff.max(1)],
            },
        }
    }
}
