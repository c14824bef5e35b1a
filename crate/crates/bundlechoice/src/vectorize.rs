//! Stacked design operators of the vectorized model and the analytic joint
//! error covariances they imply.
//!
//! Everything here is per-observation or per-individual; the sampler never
//! materializes the full stacked system. Row order within one observation
//! is the R inside bundles first, then the J_p first-stage equations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ChoiceSet, Obs, PanelData, ParamLayout};
use crate::spec::DeltaMask;

/// Factor-loading state: one (J + J_p) x L matrix per period for the
/// time-varying variant, a single matrix otherwise. Row order is utility
/// equations 0..J then first stages J..J+J_p.
#[derive(Debug, Clone, PartialEq)]
pub struct Loadings {
    pub per_period: Vec<DMatrix<f64>>,
}

impl Loadings {
    pub fn zeros(rows: usize, l: usize, periods: usize) -> Self {
        Loadings {
            per_period: vec![DMatrix::zeros(rows, l); periods.max(1)],
        }
    }

    /// The loading matrix in effect at period `t` (clamped for the
    /// time-invariant case).
    pub fn at(&self, t: usize) -> &DMatrix<f64> {
        &self.per_period[t.min(self.per_period.len() - 1)]
    }

    pub fn n_rows(&self) -> usize {
        self.per_period[0].nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.per_period[0].ncols()
    }

    pub fn n_periods(&self) -> usize {
        self.per_period.len()
    }
}

/// Index layout of the free-loading vector λ. Order: period-major, then
/// factor, then equation row; masked entries are absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LambdaLayout {
    /// Global entries as (period, row, factor).
    pub entries: Vec<(usize, usize, usize)>,
    /// Per-period slices [start, end) into `entries`.
    pub period_ranges: Vec<(usize, usize)>,
    rows: usize,
    l: usize,
}

impl LambdaLayout {
    pub fn from_mask(mask: &DeltaMask) -> Self {
        let mut entries = Vec::new();
        let mut period_ranges = Vec::new();
        let rows = mask.periods[0].len();
        let l = mask.periods[0].first().map_or(0, |r| r.len());
        for (t, p) in mask.periods.iter().enumerate() {
            let start = entries.len();
            for fac in 0..l {
                for (row, row_mask) in p.iter().enumerate() {
                    if row_mask[fac] == 1 {
                        entries.push((t, row, fac));
                    }
                }
            }
            period_ranges.push((start, entries.len()));
        }
        LambdaLayout {
            entries,
            period_ranges,
            rows,
            l,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    /// Flatten the free entries of a loading state.
    pub fn to_vec(&self, loadings: &Loadings) -> Result<DVector<f64>> {
        if loadings.n_periods() != self.period_ranges.len()
            || loadings.n_rows() != self.rows
            || loadings.n_factors() != self.l
        {
            return Err(Error::Config("loading state does not match mask layout".into()));
        }
        Ok(DVector::from_iterator(
            self.entries.len(),
            self.entries
                .iter()
                .map(|&(t, row, fac)| loadings.per_period[t][(row, fac)]),
        ))
    }

    /// Rebuild a loading state; masked entries come out exactly 0.
    pub fn from_vec(&self, v: &DVector<f64>) -> Result<Loadings> {
        if v.len() != self.entries.len() {
            return Err(Error::Config("loading vector length mismatch".into()));
        }
        let mut loadings = Loadings::zeros(self.rows, self.l, self.period_ranges.len());
        for (&(t, row, fac), &x) in self.entries.iter().zip(v.iter()) {
            loadings.per_period[t][(row, fac)] = x;
        }
        Ok(loadings)
    }
}

/// The (R + J_p) x (J + J_p) mapping matrix: bundle-membership rows above,
/// an identity block for the first stages below.
pub fn mapping_matrix(cs: &ChoiceSet, j_p: usize) -> DMatrix<f64> {
    let j = cs.n_goods();
    let r = cs.n_inside();
    let mut m = DMatrix::zeros(r + j_p, j + j_p);
    for b in 1..=r {
        for &g in cs.bundle(b) {
            m[(b - 1, g)] = 1.0;
        }
    }
    for p in 0..j_p {
        m[(r + p, j + p)] = 1.0;
    }
    m
}

/// Per-observation design blocks in the 2 x 3 layout [z w 0; 0 0 zp].
#[derive(Debug, Clone)]
pub struct DesignBlocks {
    /// R x dim(θ-section): row r accumulates member-good covariates.
    pub z: DMatrix<f64>,
    /// R x dim(γ-section): row r accumulates contained-pair covariates.
    pub w: DMatrix<f64>,
    /// J_p x dim(θ^p-section) block-diagonal first-stage design.
    pub zp: DMatrix<f64>,
    /// (R + J_p) x dim(Θ) combined block.
    pub h: DMatrix<f64>,
}

/// Section boundaries of the flattened parameter vector.
pub fn section_dims(layout: &ParamLayout) -> (usize, usize, usize) {
    let max_of = |maps: &[Vec<usize>]| maps.iter().flatten().copied().max().map_or(0, |m| m + 1);
    let t_end = max_of(&layout.theta_map);
    let g_end = max_of(&layout.gamma_map).max(t_end);
    let p_end = max_of(&layout.theta_p_map).max(g_end);
    debug_assert_eq!(p_end, layout.dim());
    (t_end, g_end - t_end, p_end - g_end)
}

/// Build the stacked design for one observation. `endogenous` controls
/// whether the first-stage rows are present.
pub fn build_design_blocks(
    cs: &ChoiceSet,
    obs: &Obs,
    layout: &ParamLayout,
    endogenous: bool,
) -> Result<DesignBlocks> {
    if obs.z.len() != cs.n_goods() || obs.w.len() != cs.n_pairs() {
        return Err(Error::Data("covariate blocks do not match choice set".into()));
    }
    let (d_t, d_g, d_p) = section_dims(layout);
    let r = cs.n_inside();
    let j_p = if endogenous { obs.zp.len() } else { 0 };
    let mut z = DMatrix::zeros(r, d_t);
    let mut w = DMatrix::zeros(r, d_g);
    for b in 1..=r {
        for &g in cs.bundle(b) {
            for (k, &col) in layout.theta_map[g].iter().enumerate() {
                z[(b - 1, col)] += obs.z[g][k];
            }
        }
        for &q in cs.pairs_in(b) {
            for (k, &col) in layout.gamma_map[q].iter().enumerate() {
                w[(b - 1, col - d_t)] += obs.w[q][k];
            }
        }
    }
    let mut zp = DMatrix::zeros(j_p, d_p);
    for p in 0..j_p {
        for (k, &col) in layout.theta_p_map[p].iter().enumerate() {
            zp[(p, col - d_t - d_g)] += obs.zp[p][k];
        }
    }
    let mut h = DMatrix::zeros(r + j_p, d_t + d_g + d_p);
    h.view_mut((0, 0), (r, d_t)).copy_from(&z);
    h.view_mut((0, d_t), (r, d_g)).copy_from(&w);
    h.view_mut((r, d_t + d_g), (j_p, d_p)).copy_from(&zp);
    Ok(DesignBlocks { z, w, zp, h })
}

/// The per-period factor operator I_ν Λ_t: maps f_i to the observation's
/// (R + J_p) error-mean contributions.
pub fn h_lambda_obs(cs: &ChoiceSet, lambda_t: &DMatrix<f64>, j_p: usize) -> DMatrix<f64> {
    let j = cs.n_goods();
    let r = cs.n_inside();
    debug_assert_eq!(lambda_t.nrows(), j + j_p);
    let l = lambda_t.ncols();
    let mut m = DMatrix::zeros(r + j_p, l);
    for b in 1..=r {
        for &g in cs.bundle(b) {
            for c in 0..l {
                m[(b - 1, c)] += lambda_t[(g, c)];
            }
        }
    }
    for p in 0..j_p {
        for c in 0..l {
            m[(r + p, c)] = lambda_t[(j + p, c)];
        }
    }
    m
}

/// Factor contribution I_ν Λ_t f_i for one observation.
pub fn nu_contribution(
    cs: &ChoiceSet,
    lambda_t: &DMatrix<f64>,
    j_p: usize,
    f_i: &DVector<f64>,
) -> DVector<f64> {
    h_lambda_obs(cs, lambda_t, j_p) * f_i
}

/// One structurally nonzero coefficient of the loading-vector design H_f.
#[derive(Debug, Clone, Copy)]
pub struct HfEntry {
    /// Index into the flattened λ vector.
    pub col: usize,
    /// Coefficient value, always some f_il.
    pub val: f64,
}

/// Sparse rows of H_f for one observation: `rows[k]` lists the nonzero
/// (column, f-value) pairs of observation row k. Each utility row r touches
/// the free loadings (t, j, l) with j in bundle r; each first-stage row its
/// own equation row.
pub fn h_f_rows(
    cs: &ChoiceSet,
    layout: &LambdaLayout,
    mask: &DeltaMask,
    t: usize,
    j_p: usize,
    f_i: &DVector<f64>,
) -> Vec<Vec<HfEntry>> {
    let j = cs.n_goods();
    let r = cs.n_inside();
    let l = f_i.len();
    let t_idx = t.min(layout.period_ranges.len() - 1);
    let (start, _) = layout.period_ranges[t_idx];
    // position of free entry (row, fac) inside the period slice
    let pos = |row: usize, fac: usize| -> Option<usize> {
        if mask.entry(t_idx, row, fac) == 0 {
            return None;
        }
        let p = &mask.periods[t_idx];
        let mut idx = start;
        for f2 in 0..fac {
            idx += p.iter().filter(|m| m[f2] == 1).count();
        }
        idx += p[..row].iter().filter(|m| m[fac] == 1).count();
        Some(idx)
    };
    let mut rows = Vec::with_capacity(r + j_p);
    for b in 1..=r {
        let mut entries = Vec::new();
        for fac in 0..l {
            for &g in cs.bundle(b) {
                if let Some(col) = pos(g, fac) {
                    entries.push(HfEntry { col, val: f_i[fac] });
                }
            }
        }
        rows.push(entries);
    }
    for p in 0..j_p {
        let mut entries = Vec::new();
        for fac in 0..l {
            if let Some(col) = pos(j + p, fac) {
                entries.push(HfEntry { col, val: f_i[fac] });
            }
        }
        rows.push(entries);
    }
    rows
}

/// Dense H_f block for one observation (test and small-problem path).
pub fn h_f_dense(
    cs: &ChoiceSet,
    layout: &LambdaLayout,
    mask: &DeltaMask,
    t: usize,
    j_p: usize,
    f_i: &DVector<f64>,
) -> DMatrix<f64> {
    let rows = h_f_rows(cs, layout, mask, t, j_p, f_i);
    let mut m = DMatrix::zeros(rows.len(), layout.dim());
    for (k, row) in rows.iter().enumerate() {
        for e in row {
            m[(k, e.col)] += e.val;
        }
    }
    m
}

/// Per-period joint error covariance Ω_it = I_ν Λ_t Λ_t' I_ν' + I of
/// dimension R + J_p.
pub fn joint_error_covariance(
    cs: &ChoiceSet,
    lambda_t: &DMatrix<f64>,
    j_p: usize,
) -> DMatrix<f64> {
    let b = h_lambda_obs(cs, lambda_t, j_p);
    let n = b.nrows();
    &b * b.transpose() + DMatrix::identity(n, n)
}

/// Panel-level Ω_i over the given periods: block (t1, t2) is
/// I_ν Λ_t1 Λ_t2' I_ν' plus the identity on the diagonal blocks.
pub fn panel_error_covariance(
    cs: &ChoiceSet,
    loadings: &Loadings,
    periods: &[usize],
    j_p: usize,
) -> DMatrix<f64> {
    let blocks: Vec<DMatrix<f64>> = periods
        .iter()
        .map(|&t| h_lambda_obs(cs, loadings.at(t), j_p))
        .collect();
    let d = cs.n_inside() + j_p;
    let n = d * periods.len();
    let mut omega = DMatrix::identity(n, n);
    for (a, ba) in blocks.iter().enumerate() {
        for (b, bb) in blocks.iter().enumerate() {
            let prod = ba * bb.transpose();
            let mut view = omega.view_mut((a * d, b * d), (d, d));
            view += prod;
        }
    }
    omega
}

/// One named entry of the error-covariance summary.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CovarianceEntry {
    pub description: String,
    pub value: f64,
}

/// Good-level covariance entries implied by a loading state: variances,
/// within-period covariances across utility and first-stage errors, and
/// intertemporal covariances. `t1`/`t2` pick the periods to report
/// (identical for the time-invariant case).
pub fn covariance_summary(loadings: &Loadings, j: usize, t1: usize, t2: usize) -> Vec<CovarianceEntry> {
    let l1 = loadings.at(t1);
    let l2 = loadings.at(t2);
    let j_p = loadings.n_rows() - j;
    let cross = |a: usize, b: usize| l1.row(a).dot(&l1.row(b));
    let inter = |a: usize| l1.row(a).dot(&l2.row(a));
    let mut out = Vec::new();
    for g in 0..j {
        out.push(CovarianceEntry {
            description: format!("utility error variance, good {}", g + 1),
            value: 1.0 + cross(g, g),
        });
    }
    for g1 in 0..j {
        for g2 in g1 + 1..j {
            out.push(CovarianceEntry {
                description: format!("unobserved tastes cov, goods {} and {}", g1 + 1, g2 + 1),
                value: cross(g1, g2),
            });
        }
    }
    for g in 0..j {
        out.push(CovarianceEntry {
            description: format!(
                "intertemporal tastes cov, good {} (t{} vs t{})",
                g + 1,
                t1 + 1,
                t2 + 1
            ),
            value: inter(g),
        });
    }
    for g1 in 0..j {
        for g2 in 0..j_p {
            out.push(CovarianceEntry {
                description: format!(
                    "regressor endogeneity cov, good {} and price {}",
                    g1 + 1,
                    g2 + 1
                ),
                value: cross(g1, j + g2),
            });
        }
    }
    for g in 0..j_p {
        out.push(CovarianceEntry {
            description: format!("first-stage error variance, price {}", g + 1),
            value: 1.0 + cross(j + g, j + g),
        });
    }
    for g1 in 0..j_p {
        for g2 in g1 + 1..j_p {
            out.push(CovarianceEntry {
                description: format!("first-stage error cov, prices {} and {}", g1 + 1, g2 + 1),
                value: cross(j + g1, j + g2),
            });
        }
    }
    for g in 0..j_p {
        out.push(CovarianceEntry {
            description: format!(
                "first-stage intertemporal cov, price {} (t{} vs t{})",
                g + 1,
                t1 + 1,
                t2 + 1
            ),
            value: inter(j + g),
        });
    }
    out
}

/// Good-level covariance entries for the random-effects variant, read
/// directly from Σ (dimension J + J_p).
pub fn covariance_summary_re(sigma: &DMatrix<f64>, j: usize) -> Vec<CovarianceEntry> {
    let j_p = sigma.nrows() - j;
    let mut out = Vec::new();
    for g in 0..j {
        out.push(CovarianceEntry {
            description: format!("utility error variance, good {}", g + 1),
            value: 1.0 + sigma[(g, g)],
        });
    }
    for g1 in 0..j {
        for g2 in g1 + 1..j {
            out.push(CovarianceEntry {
                description: format!("unobserved tastes cov, goods {} and {}", g1 + 1, g2 + 1),
                value: sigma[(g1, g2)],
            });
        }
    }
    for g in 0..j {
        out.push(CovarianceEntry {
            description: format!("intertemporal tastes cov, good {}", g + 1),
            value: sigma[(g, g)],
        });
    }
    for g1 in 0..j {
        for g2 in 0..j_p {
            out.push(CovarianceEntry {
                description: format!(
                    "regressor endogeneity cov, good {} and price {}",
                    g1 + 1,
                    g2 + 1
                ),
                value: sigma[(g1, j + g2)],
            });
        }
    }
    for g in 0..j_p {
        out.push(CovarianceEntry {
            description: format!("first-stage error variance, price {}", g + 1),
            value: 1.0 + sigma[(j + g, j + g)],
        });
    }
    out
}

/// Stacked mean of the observation's equations: bundle mean utilities plus
/// factor contributions above, first-stage means plus contributions below.
pub fn stacked_mean(
    cs: &ChoiceSet,
    params: &crate::model::EquationParams,
    obs: &Obs,
    lambda_t: Option<&DMatrix<f64>>,
    j_p: usize,
    f_i: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let r = cs.n_inside();
    let mut mu = DVector::zeros(r + j_p);
    for b in 1..=r {
        mu[b - 1] = crate::model::mean_utility(params, cs, obs, b)?;
    }
    for p in 0..j_p {
        mu[r + p] = crate::model::first_stage_mean(params, obs, p);
    }
    if let (Some(lt), Some(f)) = (lambda_t, f_i) {
        mu += nu_contribution(cs, lt, j_p, f);
    }
    Ok(mu)
}

/// Sanity helper for data/layout agreement before building blocks.
pub fn check_dimensions(data: &PanelData, layout: &ParamLayout) -> Result<()> {
    if layout.theta_map.len() != data.choice_set.n_goods()
        || layout.gamma_map.len() != data.choice_set.n_pairs()
        || layout.theta_p_map.len() != data.j_p
    {
        return Err(Error::Data("parameter layout does not match panel shape".into()));
    }
    Ok(())
}
