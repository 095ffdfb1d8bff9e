//! Cross-country regression machinery: z-score standardization, OLS with
//! the usual diagnostics (adjusted R², F statistic, per-coefficient t
//! tests and significance stars), a fixed comparison schema of candidate
//! models, and Spearman rank correlation for external validation.
//!
//! Both the target and every predictor are standardized before fitting,
//! so coefficients are comparable across predictors and models.

mod linalg;
pub mod special;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{CountryPanel, PanelRow};

pub use special::{f_sf, ln_gamma, regularized_incomplete_beta, t_cdf};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("zero variance: values are constant")]
    ZeroVariance,
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("degrees of freedom must be positive, got {df}")]
    DegreesOfFreedom { df: u32 },
    #[error("design matrix is rank deficient (collinear or constant columns)")]
    RankDeficient,
    #[error("{rows} rows cannot support {predictors} predictors plus an intercept")]
    InsufficientRows { rows: usize, predictors: usize },
    #[error("column {name}: {source}")]
    Column {
        name: String,
        #[source]
        source: Box<StatsError>,
    },
    #[error("model spec needs at least one predictor")]
    EmptySpec,
    #[error("duplicate predictor {predictor} in model spec")]
    DuplicatePredictor { predictor: &'static str },
    #[error("exact permutation test supports n <= {max}, got {n}")]
    ExactPermutationTooLarge { n: usize, max: usize },
}

// ===== Standardization =====

/// A column transformed to sample mean 0 and sample standard deviation 1,
/// keeping the statistics needed to standardize new values the same way.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub values: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

/// Z-scores a column using the sample (n-1) standard deviation.
pub fn standardize(values: &[f64]) -> Result<Standardized, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooShort { needed: 2, got: values.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite { what: "input value" });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    if sd == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(Standardized {
        values: values.iter().map(|v| (v - mean) / sd).collect(),
        mean,
        sd,
    })
}

/// Mean and sample standard deviation of a fitted column, kept so new
/// rows can be mapped into the model's space without recomputation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub sd: f64,
}

// ===== Model specification =====

/// Candidate predictors, each reading one panel column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Predictor {
    LinkedIn,
    Sci,
    Distance,
    Gpi,
    Gdp,
}

impl Predictor {
    pub const ALL: [Predictor; 5] =
        [Predictor::LinkedIn, Predictor::Sci, Predictor::Distance, Predictor::Gpi, Predictor::Gdp];

    pub fn label(&self) -> &'static str {
        match self {
            Predictor::LinkedIn => "linkedin_estimates",
            Predictor::Sci => "sci",
            Predictor::Distance => "distance",
            Predictor::Gpi => "gpi",
            Predictor::Gdp => "gdp",
        }
    }

    pub fn value(&self, row: &PanelRow) -> f64 {
        match self {
            Predictor::LinkedIn => row.scaled_estimate,
            Predictor::Sci => row.sci,
            Predictor::Distance => row.distance_km,
            Predictor::Gpi => row.gpi,
            Predictor::Gdp => row.gdp_usd,
        }
    }
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A named predictor set to regress refugee counts on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub predictors: Vec<Predictor>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, predictors: Vec<Predictor>) -> Result<Self, StatsError> {
        if predictors.is_empty() {
            return Err(StatsError::EmptySpec);
        }
        for (i, p) in predictors.iter().enumerate() {
            if predictors[..i].contains(p) {
                return Err(StatsError::DuplicatePredictor { predictor: p.label() });
            }
        }
        Ok(ModelSpec { name: name.into(), predictors })
    }

    /// The default comparison schema: every candidate alone, the audience
    /// estimate paired with each covariate, then the larger combinations.
    /// Order and membership are fixed; reports key on these names.
    pub fn default_schema() -> Vec<ModelSpec> {
        use Predictor::*;
        let sets: [&[Predictor]; 14] = [
            &[LinkedIn],
            &[Sci],
            &[Distance],
            &[Gpi],
            &[Gdp],
            &[LinkedIn, Sci],
            &[LinkedIn, Distance],
            &[LinkedIn, Gpi],
            &[LinkedIn, Gdp],
            &[LinkedIn, Sci, Distance],
            &[LinkedIn, Sci, Gpi],
            &[LinkedIn, Sci, Gdp],
            &[LinkedIn, Sci, Gdp, Gpi],
            &[LinkedIn, Sci, Distance, Gpi],
        ];
        sets.iter()
            .enumerate()
            .map(|(i, set)| {
                ModelSpec::new(format!("Model {}", i + 1), set.to_vec())
                    .expect("default schema entries are valid")
            })
            .collect()
    }
}

// ===== Significance =====

/// Star rating for a p-value. A p-value exactly at a threshold earns the
/// stronger rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Significance {
    NotSignificant,
    P05,
    P01,
    P001,
}

impl Significance {
    pub fn from_p(p: f64) -> Significance {
        if p <= 0.001 {
            Significance::P001
        } else if p <= 0.01 {
            Significance::P01
        } else if p <= 0.05 {
            Significance::P05
        } else {
            Significance::NotSignificant
        }
    }

    pub fn stars(&self) -> &'static str {
        match self {
            Significance::NotSignificant => "",
            Significance::P05 => "*",
            Significance::P01 => "**",
            Significance::P001 => "***",
        }
    }
}

impl fmt::Display for Significance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.stars())
    }
}

// ===== OLS =====

/// A fitted model: standardized coefficients with their tests, fit
/// diagnostics, and the column statistics needed to score new rows.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub n: usize,
    /// Intercept of the standardized fit; near zero by construction.
    pub intercept: f64,
    /// One standardized coefficient per spec predictor, in spec order.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    /// Two-sided p-values with n - p - 1 degrees of freedom.
    pub p_values: Vec<f64>,
    pub stars: Vec<Significance>,
    pub r2: f64,
    pub r2_adjusted: f64,
    pub f_stat: f64,
    pub f_p_value: f64,
    pub f_stars: Significance,
    /// Raw-column mean/sd per predictor, in spec order.
    pub predictor_stats: Vec<ColumnStats>,
    /// Raw-column mean/sd of the target.
    pub target_stats: ColumnStats,
    /// Training means of the standardized predictor columns (numerically
    /// near zero); attribution uses these as the background point.
    pub feature_means: Vec<f64>,
}

impl FitResult {
    /// Maps a raw predictor row into the model's standardized space.
    pub fn standardize_row(&self, raw: &[f64]) -> Result<Vec<f64>, StatsError> {
        if raw.len() != self.spec.predictors.len() {
            return Err(StatsError::LengthMismatch {
                left: raw.len(),
                right: self.spec.predictors.len(),
            });
        }
        Ok(raw
            .iter()
            .zip(&self.predictor_stats)
            .map(|(v, s)| (v - s.mean) / s.sd)
            .collect())
    }

    /// Model output (standardized target space) for a standardized row.
    pub fn predict_standardized(&self, z: &[f64]) -> f64 {
        self.intercept
            + z.iter().zip(&self.coefficients).map(|(zi, b)| zi * b).sum::<f64>()
    }
}

/// R² penalized for model size: 1 - (1 - r2)(n - 1)/(n - p - 1).
pub fn adjusted_r2(r2: f64, n: usize, p: usize) -> f64 {
    let n = n as f64;
    let p = p as f64;
    1.0 - (1.0 - r2) * (n - 1.0) / (n - p - 1.0)
}

/// Overall F statistic from R²: (r2/p) / ((1 - r2)/(n - p - 1)).
/// A perfect fit (r2 = 1) yields +infinity.
pub fn f_statistic(r2: f64, n: usize, p: usize) -> f64 {
    let df_resid = (n - p - 1) as f64;
    (r2 / p as f64) / ((1.0 - r2) / df_resid)
}

/// Fits one spec on the panel: standardizes the target and each predictor
/// column, solves least squares with an intercept, and derives the
/// diagnostics. Needs n >= p + 2 rows so at least one residual degree of
/// freedom remains.
pub fn ols_fit(spec: &ModelSpec, panel: &CountryPanel) -> Result<FitResult, StatsError> {
    let n = panel.rows.len();
    let p = spec.predictors.len();
    if n < p + 2 {
        return Err(StatsError::InsufficientRows { rows: n, predictors: p });
    }

    let wrap = |name: &str| {
        let name = name.to_string();
        move |e: StatsError| StatsError::Column { name, source: Box::new(e) }
    };

    let target_raw: Vec<f64> = panel.rows.iter().map(|r| r.unhcr_refugees).collect();
    let target = standardize(&target_raw).map_err(wrap("unhcr_refugees"))?;

    let mut columns = Vec::with_capacity(p);
    for predictor in &spec.predictors {
        let raw: Vec<f64> = panel.rows.iter().map(|r| predictor.value(r)).collect();
        columns.push(standardize(&raw).map_err(wrap(predictor.label()))?);
    }

    let cols = p + 1;
    let mut design = vec![0.0; n * cols];
    for i in 0..n {
        design[i * cols] = 1.0;
        for (j, col) in columns.iter().enumerate() {
            design[i * cols + j + 1] = col.values[i];
        }
    }

    let solution = linalg::least_squares(&design, n, cols, &target.values)?;
    let intercept = solution.coefficients[0];
    let coefficients = solution.coefficients[1..].to_vec();

    let ssr: f64 = solution.residuals.iter().map(|r| r * r).sum();
    let zy_mean = target.values.iter().sum::<f64>() / n as f64;
    let sst: f64 = target.values.iter().map(|v| (v - zy_mean) * (v - zy_mean)).sum();
    let r2 = 1.0 - ssr / sst;

    let df_resid = (n - p - 1) as u32;
    let mse = ssr / df_resid as f64;

    let mut std_errors = Vec::with_capacity(p);
    let mut t_stats = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    let mut stars = Vec::with_capacity(p);
    for j in 0..p {
        let se = (mse * solution.xtx_inv_diag[j + 1]).sqrt();
        let t = coefficients[j] / se;
        // se = 0 on a perfect fit drives |t| to infinity; the tail is 0.
        let p_value = if t.is_finite() { 2.0 * t_cdf(-t.abs(), df_resid)? } else { 0.0 };
        std_errors.push(se);
        t_stats.push(t);
        p_values.push(p_value);
        stars.push(Significance::from_p(p_value));
    }

    let f_stat = f_statistic(r2, n, p);
    let f_p_value =
        if f_stat.is_finite() { f_sf(f_stat, p as u32, df_resid)? } else { 0.0 };
    let f_stars = Significance::from_p(f_p_value);

    let feature_means = columns
        .iter()
        .map(|c| c.values.iter().sum::<f64>() / n as f64)
        .collect();

    Ok(FitResult {
        spec: spec.clone(),
        n,
        intercept,
        coefficients,
        std_errors,
        t_stats,
        p_values,
        stars,
        r2,
        r2_adjusted: adjusted_r2(r2, n, p),
        f_stat,
        f_p_value,
        f_stars,
        predictor_stats: columns.iter().map(|c| ColumnStats { mean: c.mean, sd: c.sd }).collect(),
        target_stats: ColumnStats { mean: target.mean, sd: target.sd },
        feature_means,
    })
}

/// One schema entry's outcome; failures are recorded, not propagated.
#[derive(Debug)]
pub struct SchemaFit {
    pub spec: ModelSpec,
    pub outcome: Result<FitResult, StatsError>,
}

/// Fits every spec in order. A failing spec (collinear columns, constant
/// predictor) is reported in its row and does not abort the batch.
pub fn run_schema(panel: &CountryPanel, specs: &[ModelSpec]) -> Vec<SchemaFit> {
    specs
        .iter()
        .map(|spec| SchemaFit { spec: spec.clone(), outcome: ols_fit(spec, panel) })
        .collect()
}

// ===== Rank correlation =====

#[derive(Debug, Clone, Copy)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

const EXACT_PERMUTATION_MAX: usize = 10;

/// Average ranks (1-based); tied values share the mean of the ranks they
/// occupy.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));

    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = shared;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
        syy += (yi - my) * (yi - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn check_correlation_inputs(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 4 {
        return Err(StatsError::TooShort { needed: 4, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite { what: "correlation input" });
    }
    Ok(())
}

/// Spearman rank correlation with average-rank tie handling; the p-value
/// uses the t approximation t = rho sqrt((n-2)/(1-rho²)) on n - 2 degrees
/// of freedom. |rho| = 1 yields p = 0.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    check_correlation_inputs(x, y)?;
    let rho = pearson(&average_ranks(x), &average_ranks(y))?;
    let n = x.len();
    let p_value = if 1.0 - rho * rho <= 0.0 {
        0.0
    } else {
        let t = rho * ((n as f64 - 2.0) / (1.0 - rho * rho)).sqrt();
        2.0 * t_cdf(-t.abs(), (n - 2) as u32)?
    };
    Ok(Correlation { rho, p_value, n })
}

/// Spearman rho with an exact permutation p-value: the share of all n!
/// orderings of y whose |rho| reaches the observed one. Only for small
/// samples (n <= 10).
pub fn spearman_exact(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    check_correlation_inputs(x, y)?;
    let n = x.len();
    if n > EXACT_PERMUTATION_MAX {
        return Err(StatsError::ExactPermutationTooLarge { n, max: EXACT_PERMUTATION_MAX });
    }

    let rx = average_ranks(x);
    let mut ry = average_ranks(y);
    let observed = pearson(&rx, &ry)?;

    // Rank means and spreads are permutation-invariant, so each
    // permutation only changes the cross term.
    let nf = n as f64;
    let mx = rx.iter().sum::<f64>() / nf;
    let my = ry.iter().sum::<f64>() / nf;
    let sxx: f64 = rx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let syy: f64 = ry.iter().map(|v| (v - my) * (v - my)).sum();
    let denom = (sxx * syy).sqrt();
    let threshold = observed.abs() - 1e-12;

    let mut hits: u64 = 0;
    let mut total: u64 = 0;
    let mut tally = |ranks: &[f64]| {
        let sxy: f64 =
            rx.iter().zip(ranks).map(|(a, b)| (a - mx) * (b - my)).sum();
        if (sxy / denom).abs() >= threshold {
            hits += 1;
        }
        total += 1;
    };

    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    tally(&ry);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            tally(&ry);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }

    Ok(Correlation { rho: observed, p_value: hits as f64 / total as f64, n })
}
