//! Goods, bundles, the ordered choice set, panel data containers, and the
//! deterministic utility algebra of the bundle-choice model.
//!
//! Bundle index 0 is always the outside option (empty bundle). Inside
//! bundles are ordered by size, then lexicographically within each size:
//! singletons ascending, pairs, triples, ..., full bundle. Goods are
//! 0-based internally; the CSV/JSON surfaces use 1-based labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Practical cap on the number of goods: the choice set has 2^J bundles.
pub const MAX_GOODS: usize = 7;

/// The ordered enumeration of all 2^J bundles over J goods.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceSet {
    j: usize,
    bundles: Vec<Vec<usize>>,
    pairs: Vec<(usize, usize)>,
    /// bundle index -> indices into `pairs` of the pairs contained in it
    bundle_pairs: Vec<Vec<usize>>,
    /// good -> bundle indices containing it
    good_bundles: Vec<Vec<usize>>,
}

impl ChoiceSet {
    /// Canonical choice-set enumeration: index 0 is the outside option,
    /// inside bundles ordered by size then lexicographically.
    pub fn enumerate(j: usize) -> Result<Self> {
        if j < 1 || j > MAX_GOODS {
            return Err(Error::Config(format!(
                "good count J={j} outside supported range [1, {MAX_GOODS}] \
                 (choice set has 2^J bundles)"
            )));
        }
        let mut bundles: Vec<Vec<usize>> = vec![vec![]];
        for size in 1..=j {
            let mut combo: Vec<usize> = (0..size).collect();
            loop {
                bundles.push(combo.clone());
                // next lexicographic combination of `size` out of `j`
                let mut k = size;
                loop {
                    if k == 0 {
                        break;
                    }
                    k -= 1;
                    if combo[k] < j - (size - k) {
                        combo[k] += 1;
                        for m in k + 1..size {
                            combo[m] = combo[m - 1] + 1;
                        }
                        break;
                    }
                    if k == 0 {
                        combo.clear();
                        break;
                    }
                }
                if combo.is_empty() {
                    break;
                }
            }
        }
        debug_assert_eq!(bundles.len(), 1 << j);

        let mut pairs = Vec::new();
        for j1 in 0..j {
            for j2 in j1 + 1..j {
                pairs.push((j1, j2));
            }
        }
        let pair_index = |j1: usize, j2: usize| -> usize {
            pairs.iter().position(|&p| p == (j1, j2)).unwrap()
        };
        let bundle_pairs = bundles
            .iter()
            .map(|b| {
                let mut v = Vec::new();
                for (a, &j1) in b.iter().enumerate() {
                    for &j2 in &b[a + 1..] {
                        v.push(pair_index(j1, j2));
                    }
                }
                v
            })
            .collect();
        let good_bundles = (0..j)
            .map(|g| {
                bundles
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.contains(&g))
                    .map(|(r, _)| r)
                    .collect()
            })
            .collect();
        Ok(ChoiceSet {
            j,
            bundles,
            pairs,
            bundle_pairs,
            good_bundles,
        })
    }

    pub fn n_goods(&self) -> usize {
        self.j
    }

    /// Number of inside options, R = 2^J - 1.
    pub fn n_inside(&self) -> usize {
        self.bundles.len() - 1
    }

    pub fn n_bundles(&self) -> usize {
        self.bundles.len()
    }

    pub fn bundles(&self) -> &[Vec<usize>] {
        &self.bundles
    }

    pub fn bundle(&self, r: usize) -> &[usize] {
        &self.bundles[r]
    }

    /// All unordered good pairs (j1, j2), j1 < j2, in lexicographic order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Pair indices (into `pairs()`) contained in bundle `r`.
    pub fn pairs_in(&self, r: usize) -> &[usize] {
        &self.bundle_pairs[r]
    }

    /// Bundle indices containing good `g` (all inside).
    pub fn bundles_with(&self, g: usize) -> &[usize] {
        &self.good_bundles[g]
    }

    /// R x J binary membership matrix over inside options: entry (r-1, j) is
    /// 1 iff good j is in bundle r.
    pub fn membership_matrix(&self) -> Vec<Vec<u8>> {
        (1..self.bundles.len())
            .map(|r| {
                (0..self.j)
                    .map(|g| u8::from(self.bundles[r].contains(&g)))
                    .collect()
            })
            .collect()
    }

    /// Number of inside bundles containing both goods (diagonal: containing
    /// the good). Equals (I_nu^u)' I_nu^u.
    pub fn good_cooccurrence(&self) -> Vec<Vec<usize>> {
        let mut m = vec![vec![0usize; self.j]; self.j];
        for b in &self.bundles[1..] {
            for &j1 in b {
                for &j2 in b {
                    m[j1][j2] += 1;
                }
            }
        }
        m
    }

    /// Number of inside bundles containing good `g` and the whole pair `q`.
    pub fn good_pair_cooccurrence(&self) -> Vec<Vec<usize>> {
        let mut m = vec![vec![0usize; self.pairs.len()]; self.j];
        for (r, b) in self.bundles.iter().enumerate().skip(1) {
            for &g in b {
                for &q in &self.bundle_pairs[r] {
                    m[g][q] += 1;
                }
            }
        }
        m
    }

    /// Number of inside bundles containing both pairs.
    pub fn pair_cooccurrence(&self) -> Vec<Vec<usize>> {
        let np = self.pairs.len();
        let mut m = vec![vec![0usize; np]; np];
        for bp in self.bundle_pairs.iter().skip(1) {
            for &q1 in bp {
                for &q2 in bp {
                    m[q1][q2] += 1;
                }
            }
        }
        m
    }
}

/// One observed (individual, period) decision with its covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obs {
    /// 0-based period index into the global period set.
    pub period: usize,
    /// Chosen bundle index in the canonical choice set.
    pub choice: usize,
    /// Observed endogenous regressors (prices), length J_p.
    pub prices: Vec<f64>,
    /// Utility covariates per good (price slot included when endogenous).
    pub z: Vec<Vec<f64>>,
    /// Bundle-effect covariates per pair, pair order from `ChoiceSet::pairs`.
    pub w: Vec<Vec<f64>>,
    /// Instrument + exogenous covariates per endogenous regressor.
    pub zp: Vec<Vec<f64>>,
}

/// Per-individual, per-period panel of observed bundle choices and covariates.
/// Supports unbalanced panels: individuals may observe any subset of periods.
#[derive(Debug, Clone)]
pub struct PanelData {
    pub choice_set: ChoiceSet,
    /// Number of endogenous regressors (0 for exogenous-only data).
    pub j_p: usize,
    /// Number of global periods (1 + max period index observed).
    pub t_max: usize,
    /// Slot of each good's own price inside its `z` vector, if any.
    pub price_slot: Option<usize>,
    /// Observations grouped by individual, each sorted by period.
    pub individuals: Vec<Vec<Obs>>,
}

impl PanelData {
    pub fn new(
        choice_set: ChoiceSet,
        j_p: usize,
        price_slot: Option<usize>,
        individuals: Vec<Vec<Obs>>,
    ) -> Result<Self> {
        let t_max = individuals
            .iter()
            .flatten()
            .map(|o| o.period + 1)
            .max()
            .unwrap_or(0);
        let data = PanelData {
            choice_set,
            j_p,
            t_max,
            price_slot,
            individuals,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn n_individuals(&self) -> usize {
        self.individuals.len()
    }

    pub fn n_obs(&self) -> usize {
        self.individuals.iter().map(|v| v.len()).sum()
    }

    /// Covariate dimension per good / per pair / per endogenous regressor.
    pub fn z_dims(&self) -> Vec<usize> {
        self.first_obs()
            .map(|o| o.z.iter().map(|v| v.len()).collect())
            .unwrap_or_default()
    }

    pub fn w_dims(&self) -> Vec<usize> {
        self.first_obs()
            .map(|o| o.w.iter().map(|v| v.len()).collect())
            .unwrap_or_default()
    }

    pub fn zp_dims(&self) -> Vec<usize> {
        self.first_obs()
            .map(|o| o.zp.iter().map(|v| v.len()).collect())
            .unwrap_or_default()
    }

    fn first_obs(&self) -> Option<&Obs> {
        self.individuals.iter().flatten().next()
    }

    fn validate(&self) -> Result<()> {
        let j = self.choice_set.n_goods();
        if self.j_p > j {
            return Err(Error::Data(format!(
                "J_p={} exceeds good count J={j}",
                self.j_p
            )));
        }
        let Some(first) = self.first_obs() else {
            return Ok(());
        };
        let zd: Vec<usize> = first.z.iter().map(|v| v.len()).collect();
        let wd: Vec<usize> = first.w.iter().map(|v| v.len()).collect();
        let pd: Vec<usize> = first.zp.iter().map(|v| v.len()).collect();
        for (i, obs_list) in self.individuals.iter().enumerate() {
            for o in obs_list {
                if o.choice >= self.choice_set.n_bundles() {
                    return Err(Error::Data(format!(
                        "individual {i}: choice index {} out of range (2^J={})",
                        o.choice,
                        self.choice_set.n_bundles()
                    )));
                }
                if o.z.len() != j || o.w.len() != self.choice_set.n_pairs() {
                    return Err(Error::Data(format!(
                        "individual {i}: covariate block counts do not match choice set"
                    )));
                }
                if o.prices.len() != self.j_p || o.zp.len() != self.j_p {
                    return Err(Error::Data(format!(
                        "individual {i}: expected {} endogenous regressors",
                        self.j_p
                    )));
                }
                let ok = o.z.iter().map(|v| v.len()).eq(zd.iter().copied())
                    && o.w.iter().map(|v| v.len()).eq(wd.iter().copied())
                    && o.zp.iter().map(|v| v.len()).eq(pd.iter().copied());
                if !ok {
                    return Err(Error::Data(format!(
                        "individual {i}: covariate vector lengths vary across the panel"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Declares which coefficient slots are shared across equations. Slots with
/// equal labels (within a section) resolve to one entry of the flattened
/// parameter vector; e.g. a common price coefficient carries the same label
/// in every good's list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingMap {
    /// Per good, one label per utility-covariate slot.
    pub theta: Vec<Vec<String>>,
    /// Per pair (canonical order), one label per bundle-effect slot.
    pub gamma: Vec<Vec<String>>,
    /// Per endogenous regressor, one label per first-stage slot.
    pub theta_p: Vec<Vec<String>>,
}

impl SharingMap {
    /// All-distinct labels: no parameter sharing anywhere.
    pub fn unshared(z_dims: &[usize], w_dims: &[usize], zp_dims: &[usize]) -> Self {
        let label = |s: &str, a: usize, k: usize| format!("{s}{}_{k}", a + 1);
        SharingMap {
            theta: z_dims
                .iter()
                .enumerate()
                .map(|(g, &d)| (0..d).map(|k| label("theta", g, k)).collect())
                .collect(),
            gamma: w_dims
                .iter()
                .enumerate()
                .map(|(q, &d)| (0..d).map(|k| label("gamma", q, k)).collect())
                .collect(),
            theta_p: zp_dims
                .iter()
                .enumerate()
                .map(|(g, &d)| (0..d).map(|k| label("theta_p", g, k)).collect())
                .collect(),
        }
    }
}

/// Resolved parameter layout: maps every (equation, slot) to an index of the
/// flattened vector Theta = (theta', gamma', theta_p')'.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub names: Vec<String>,
    pub theta_map: Vec<Vec<usize>>,
    pub gamma_map: Vec<Vec<usize>>,
    pub theta_p_map: Vec<Vec<usize>>,
}

impl ParamLayout {
    /// Resolve a sharing map against the data's covariate dimensions.
    /// Global order: theta labels in first-appearance order, then gamma,
    /// then theta_p. Labels are scoped per section.
    pub fn resolve(sharing: &SharingMap, data: &PanelData) -> Result<Self> {
        Self::resolve_dims(sharing, &data.z_dims(), &data.w_dims(), &data.zp_dims())
    }

    /// Same as `resolve`, with the covariate dimensions given directly
    /// (an exogenous fit passes an empty first-stage section).
    pub fn resolve_dims(
        sharing: &SharingMap,
        z_dims: &[usize],
        w_dims: &[usize],
        zp_dims: &[usize],
    ) -> Result<Self> {
        let check = |section: &str, labels: &[Vec<String>], dims: &[usize]| -> Result<()> {
            if labels.len() != dims.len() {
                return Err(Error::Data(format!(
                    "sharing map `{section}` has {} equations, data has {}",
                    labels.len(),
                    dims.len()
                )));
            }
            for (eq, (l, &d)) in labels.iter().zip(dims).enumerate() {
                if l.len() != d {
                    return Err(Error::Data(format!(
                        "sharing map `{section}` equation {eq}: {} labels for {d} covariate slots",
                        l.len()
                    )));
                }
            }
            Ok(())
        };
        check("theta", &sharing.theta, z_dims)?;
        check("gamma", &sharing.gamma, w_dims)?;
        check("theta_p", &sharing.theta_p, zp_dims)?;

        let mut names: Vec<String> = Vec::new();
        let mut resolve_section = |labels: &[Vec<String>], prefix: &str| -> Vec<Vec<usize>> {
            let mut out = Vec::with_capacity(labels.len());
            let start = names.len();
            for l in labels {
                let mut row = Vec::with_capacity(l.len());
                for lab in l {
                    let scoped = format!("{prefix}{lab}");
                    let idx = names[start..]
                        .iter()
                        .position(|n| *n == scoped)
                        .map(|p| start + p)
                        .unwrap_or_else(|| {
                            names.push(scoped);
                            names.len() - 1
                        });
                    row.push(idx);
                }
                out.push(row);
            }
            out
        };
        let theta_map = resolve_section(&sharing.theta, "");
        let gamma_map = resolve_section(&sharing.gamma, "gamma:");
        let theta_p_map = resolve_section(&sharing.theta_p, "fs:");
        Ok(ParamLayout {
            names,
            theta_map,
            gamma_map,
            theta_p_map,
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }
}

/// Equation parameters as one flattened vector plus its layout.
#[derive(Debug, Clone)]
pub struct EquationParams {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl EquationParams {
    pub fn zeros(layout: ParamLayout) -> Self {
        let values = vec![0.0; layout.dim()];
        EquationParams { layout, values }
    }

    /// From per-equation coefficient vectors. Shared slots must agree across
    /// the equations naming them.
    pub fn from_parts(
        layout: ParamLayout,
        theta: &[Vec<f64>],
        gamma: &[Vec<f64>],
        theta_p: &[Vec<f64>],
    ) -> Result<Self> {
        let mut values = vec![f64::NAN; layout.dim()];
        let mut fill = |map: &[Vec<usize>], vals: &[Vec<f64>], what: &str| -> Result<()> {
            if map.len() != vals.len() {
                return Err(Error::Data(format!("{what}: equation count mismatch")));
            }
            for (row, v) in map.iter().zip(vals) {
                if row.len() != v.len() {
                    return Err(Error::Data(format!("{what}: slot count mismatch")));
                }
                for (&idx, &x) in row.iter().zip(v) {
                    if values[idx].is_nan() {
                        values[idx] = x;
                    } else if values[idx] != x {
                        return Err(Error::Data(format!(
                            "{what}: shared slot `{}` assigned conflicting values",
                            // unscoped display is fine here
                            idx
                        )));
                    }
                }
            }
            Ok(())
        };
        let (tm, gm, pm) = (
            layout.theta_map.clone(),
            layout.gamma_map.clone(),
            layout.theta_p_map.clone(),
        );
        fill(&tm, theta, "theta")?;
        fill(&gm, gamma, "gamma")?;
        fill(&pm, theta_p, "theta_p")?;
        Ok(EquationParams { layout, values })
    }

    /// Effective coefficient vector for good `g`'s utility equation.
    pub fn theta_of(&self, g: usize) -> Vec<f64> {
        self.layout.theta_map[g]
            .iter()
            .map(|&i| self.values[i])
            .collect()
    }

    /// Effective coefficient vector for pair `q`'s bundle effect.
    pub fn gamma_of(&self, q: usize) -> Vec<f64> {
        self.layout.gamma_map[q]
            .iter()
            .map(|&i| self.values[i])
            .collect()
    }

    /// Effective coefficient vector for regressor `g`'s first stage.
    pub fn theta_p_of(&self, g: usize) -> Vec<f64> {
        self.layout.theta_p_map[g]
            .iter()
            .map(|&i| self.values[i])
            .collect()
    }
}

fn dot_mapped(slots: &[usize], values: &[f64], x: &[f64]) -> f64 {
    slots
        .iter()
        .zip(x)
        .map(|(&idx, &xv)| values[idx] * xv)
        .sum()
}

/// Deterministic good-utility z'theta_j for one observation.
pub fn good_mean(params: &EquationParams, obs: &Obs, g: usize) -> f64 {
    dot_mapped(&params.layout.theta_map[g], &params.values, &obs.z[g])
}

/// Deterministic pair effect w'gamma for one observation.
pub fn pair_effect(params: &EquationParams, obs: &Obs, q: usize) -> f64 {
    dot_mapped(&params.layout.gamma_map[q], &params.values, &obs.w[q])
}

/// First-stage mean zp'theta_p_j for one observation.
pub fn first_stage_mean(params: &EquationParams, obs: &Obs, g: usize) -> f64 {
    dot_mapped(&params.layout.theta_p_map[g], &params.values, &obs.zp[g])
}

/// Deterministic part of the bundle utility: sum of member good utilities
/// plus pair effects. Exactly 0 for the outside option.
pub fn mean_utility(
    params: &EquationParams,
    cs: &ChoiceSet,
    obs: &Obs,
    r: usize,
) -> Result<f64> {
    if r >= cs.n_bundles() {
        return Err(Error::Data(format!("bundle index {r} out of range")));
    }
    if obs.z.len() != cs.n_goods() {
        return Err(Error::Data(
            "covariate blocks do not match choice set".into(),
        ));
    }
    let mut u = 0.0;
    for &g in cs.bundle(r) {
        u += good_mean(params, obs, g);
    }
    for &q in cs.pairs_in(r) {
        u += pair_effect(params, obs, q);
    }
    Ok(u)
}

/// Index of the maximal utility; ties break to the lowest bundle index.
pub fn argmax_choice(utilities: &[f64]) -> Result<usize> {
    if utilities.iter().any(|u| u.is_nan()) {
        return Err(Error::Numeric("NaN latent utility".into()));
    }
    let mut best = 0;
    for (r, &u) in utilities.iter().enumerate().skip(1) {
        if u > utilities[best] {
            best = r;
        }
    }
    Ok(best)
}
