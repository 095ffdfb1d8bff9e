//! Deterministic synthetic data with a planted regression relationship.
//!
//! The generator emits snapshot and indicator files shaped exactly like
//! real collected data, plus a truth record naming the coefficients it
//! planted. The construction works backwards from what the pipeline will
//! compute: the scaled audience column is derived from the emitted
//! snapshot through the actual scaling code, auxiliary predictor columns
//! are built orthonormal to it, and one pair is mixed with the precise
//! correlation that makes the planted linear combination have unit sample
//! variance. Fitting the standardized regression on the generated files
//! then recovers the planted coefficients to within float rounding, which
//! is what makes the generator useful as an end-to-end oracle.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::files::{write_indicators_file, write_snapshot_file};
use super::IngestError;
use crate::datamodel::{
    AgeBucket, AudienceCell, CountryCode, CountryIndicators, Gender, Snapshot, CENSOR_THRESHOLD,
};
use crate::scale::{self, Breakdown};
use crate::stats::{standardize, Predictor};

/// Scale applied to the planted response before rounding to integer
/// benchmark counts. Large enough that rounding moves recovered
/// coefficients by well under 1e-9.
const TARGET_SCALE: f64 = (1u64 << 40) as f64;
/// Offset keeping every rounded response positive.
const TARGET_OFFSET: f64 = (1u64 << 44) as f64;

/// Largest correlation the column-mixing step will accept; beyond this
/// the predictor columns would be close to collinear.
const MAX_MIX_CORRELATION: f64 = 0.99;

/// Vintage stamped on every synthetic benchmark value.
const BENCHMARK_DATE: &str = "2023-03-13";

const SLOT_COUNT: usize = Gender::ALL.len() * AgeBucket::ALL.len();

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Countries to generate; at least 3 and at least beta.len() + 2.
    pub n_countries: usize,
    /// Planted standardized coefficients, one per predictor in canonical
    /// order starting with the scaled audience column. Not every vector
    /// is realizable: the mixing step must be able to give the planted
    /// combination unit variance (see [`generate`] errors).
    pub beta: Vec<f64>,
    /// Standard deviation of gaussian noise added to the standardized
    /// response; zero plants an exact relationship.
    pub noise_scale: f64,
    /// When true, generated cell counts below the reporting threshold are
    /// zeroed like the platform would; when false, cell splits are merged
    /// so every cell is honestly reportable.
    pub censoring: bool,
    /// Weekly snapshots starting at `base_date`.
    pub n_snapshots: usize,
    pub base_date: NaiveDate,
    /// Range of per-country true audience totals in the first snapshot.
    pub count_range: (u64, u64),
}

impl SyntheticConfig {
    /// A medium-sized noise-free setup that exercises every pipeline
    /// stage: 38 countries, four predictors, two snapshots.
    pub fn standard(seed: u64) -> Self {
        SyntheticConfig {
            seed,
            n_countries: 38,
            beta: vec![1.0, 0.2, -0.15, -0.1],
            noise_scale: 0.0,
            censoring: false,
            n_snapshots: 2,
            base_date: NaiveDate::from_ymd_opt(2023, 2, 27).expect("valid date"),
            count_range: (2_000, 3_000_000),
        }
    }

    fn validate(&self) -> Result<(), IngestError> {
        let p = self.beta.len();
        let mut problems: Vec<String> = Vec::new();
        if self.n_countries < 3 {
            problems.push("n_countries must be at least 3".into());
        }
        if p == 0 || p > Predictor::ALL.len() {
            problems.push(format!(
                "beta must hold between 1 and {} coefficients",
                Predictor::ALL.len()
            ));
        } else if self.n_countries < p + 2 {
            problems.push(format!(
                "need at least {} countries to fit {p} predictors",
                p + 2
            ));
        }
        if self.n_countries > 26 * 26 {
            problems.push("n_countries exceeds the two-letter code space".into());
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            problems.push("beta coefficients must be finite".into());
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            problems.push("noise_scale must be finite and non-negative".into());
        }
        if self.n_snapshots == 0 {
            problems.push("n_snapshots must be at least 1".into());
        }
        if self.count_range.0 < 1 || self.count_range.0 > self.count_range.1 {
            problems.push("count_range must satisfy 1 <= lo <= hi".into());
        }
        if !self.censoring && self.count_range.0 < CENSOR_THRESHOLD {
            problems.push(format!(
                "without censoring, count_range.0 must be at least {CENSOR_THRESHOLD} so every total is reportable"
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(IngestError::Parameter { message: problems.join("; ") })
        }
    }
}

/// What the generator planted, for tests and audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub seed: u64,
    pub n_countries: usize,
    /// Standardized coefficients a regression on the bundle recovers
    /// (exactly, when `noise_scale` is zero).
    pub beta: Vec<f64>,
    /// Predictor labels matching `beta`, in canonical order.
    pub predictors: Vec<String>,
    pub noise_scale: f64,
    pub censoring: bool,
    pub snapshot_dates: Vec<NaiveDate>,
    /// Realized noise per country (zeros when noise_scale is zero).
    pub noise: BTreeMap<CountryCode, f64>,
    /// First-snapshot audience totals before any censoring.
    pub true_totals: BTreeMap<CountryCode, u64>,
    /// First-snapshot audience totals as reported (after censoring).
    pub observed_totals: BTreeMap<CountryCode, u64>,
    /// The planted benchmark counts.
    pub target_counts: BTreeMap<CountryCode, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub snapshots: Vec<Snapshot>,
    pub indicators: Vec<CountryIndicators>,
    pub truth: PlantedTruth,
}

/// Files written by [`write_bundle`].
#[derive(Debug, Clone)]
pub struct BundleFiles {
    pub snapshots: Vec<PathBuf>,
    pub indicators: PathBuf,
    pub truth: PathBuf,
    pub readme: PathBuf,
}

fn code_for(index: usize) -> CountryCode {
    let bytes = [b'A' + (index / 26) as u8, b'A' + (index % 26) as u8];
    CountryCode::new(std::str::from_utf8(&bytes).expect("ASCII")).expect("two letters")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Box-Muller standard normal draw.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Splits a true total over the ten (gender, age) cells. Every returned
/// cell is zero or at least the reporting threshold: with `censoring` the
/// platform's rule zeroes small cells (losing mass, like the real thing);
/// without it small cells are merged upward so the total is preserved.
fn split_total(rng: &mut ChaCha8Rng, total: u64, censoring: bool) -> [u64; SLOT_COUNT] {
    let m = rng.gen_range(1..=SLOT_COUNT);
    let mut slots: Vec<usize> = (0..SLOT_COUNT).collect();
    slots.shuffle(rng);
    let chosen = &slots[..m];
    let weights: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..1.0)).collect();
    let weight_sum: f64 = weights.iter().sum();

    let mut counts = [0u64; SLOT_COUNT];
    let mut assigned = 0u64;
    for (w, &slot) in weights.iter().zip(chosen) {
        let c = ((w / weight_sum) * total as f64).floor() as u64;
        counts[slot] = c;
        assigned += c;
    }
    let mut remainder = total - assigned;
    let mut i = 0;
    while remainder > 0 {
        counts[chosen[i % m]] += 1;
        remainder -= 1;
        i += 1;
    }

    if censoring {
        for c in counts.iter_mut() {
            if *c < CENSOR_THRESHOLD {
                *c = 0;
            }
        }
    } else {
        // move each sub-threshold cell into the currently largest other
        // cell; each pass zeroes one positive cell, so this terminates
        loop {
            if counts.iter().filter(|&&c| c > 0).count() <= 1 {
                break;
            }
            let Some(small) =
                (0..SLOT_COUNT).find(|&i| counts[i] > 0 && counts[i] < CENSOR_THRESHOLD)
            else {
                break;
            };
            let largest = (0..SLOT_COUNT)
                .filter(|&k| k != small)
                .max_by_key(|&k| counts[k])
                .expect("more than one slot");
            counts[largest] += counts[small];
            counts[small] = 0;
        }
    }
    counts
}

/// Decides which two predictor columns get mixed, and how strongly, so
/// that the planted combination has unit variance. Returns `None` when
/// the coefficients already sum to one in squares.
fn plan_mixing(beta: &[f64]) -> Result<Option<(usize, usize, f64)>, IngestError> {
    let p = beta.len();
    let square_sum: f64 = beta.iter().map(|b| b * b).sum();
    let shortfall = 1.0 - square_sum;
    if shortfall.abs() < 1e-12 {
        return Ok(None);
    }
    if p == 1 {
        return Err(IngestError::Parameter {
            message: format!(
                "a single planted coefficient must be +1 or -1, got {}",
                beta[0]
            ),
        });
    }
    for i in 0..p {
        for j in (i + 1)..p {
            let product = beta[i] * beta[j];
            if product == 0.0 {
                continue;
            }
            let rho = shortfall / (2.0 * product);
            if rho.abs() <= MAX_MIX_CORRELATION {
                return Ok(Some((i, j, rho)));
            }
        }
    }
    Err(IngestError::Parameter {
        message: format!(
            "cannot give the planted combination unit variance: no pair of \
             coefficients in {beta:?} admits a mixing correlation within \
             +/-{MAX_MIX_CORRELATION}"
        ),
    })
}

/// Centers `v`, projects out every basis direction (twice, for numerical
/// hygiene), and scales to unit sample standard deviation.
fn orthonormalize(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Result<Vec<f64>, IngestError> {
    let n = v.len() as f64;
    for _ in 0..2 {
        let mean = v.iter().sum::<f64>() / n;
        for x in v.iter_mut() {
            *x -= mean;
        }
        for b in basis {
            let coefficient = dot(&v, b) / dot(b, b);
            for (x, bi) in v.iter_mut().zip(b) {
                *x -= coefficient * bi;
            }
        }
    }
    let sd = (dot(&v, &v) / (n - 1.0)).sqrt();
    if sd < 1e-9 {
        return Err(IngestError::Parameter {
            message: "predictor direction collapsed during orthogonalization; \
                      increase n_countries"
                .to_string(),
        });
    }
    for x in v.iter_mut() {
        *x /= sd;
    }
    Ok(v)
}

/// Affine placement of a standardized column into a plausible value range.
struct ColumnPlan {
    center: f64,
    spread: f64,
    lo: f64,
    hi: f64,
    /// Uniform range used when the column carries no planted signal.
    filler: (f64, f64),
}

fn place_column(z: &[f64], plan: &ColumnPlan) -> Vec<f64> {
    let max_abs = z.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-12);
    let mut spread = plan.spread;
    spread = spread.min(0.95 * (plan.center - plan.lo) / max_abs);
    if plan.hi.is_finite() {
        spread = spread.min(0.95 * (plan.hi - plan.center) / max_abs);
    }
    z.iter().map(|&v| plan.center + spread * v).collect()
}

/// Generates the full bundle in memory. Fails when the configuration is
/// invalid, when the planted coefficients cannot be realized with unit
/// response variance, or when censoring flattens the audience column so
/// completely that no relationship can be planted on it.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData, IngestError> {
    config.validate()?;
    let p = config.beta.len();
    let mix = plan_mixing(&config.beta)?;
    let n = config.n_countries;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let countries: Vec<CountryCode> = (0..n).map(code_for).collect();

    // audience series: snapshot 0 draws fresh levels, later snapshots
    // drift them; one wb population per country for the whole series
    let mut wb_populations: BTreeMap<CountryCode, u64> = BTreeMap::new();
    let mut true_totals_first: BTreeMap<CountryCode, u64> = BTreeMap::new();
    let mut totals: Vec<u64> = vec![0; n];
    let mut platforms: Vec<u64> = vec![0; n];
    let mut snapshots = Vec::with_capacity(config.n_snapshots);
    let mut dates = Vec::with_capacity(config.n_snapshots);

    for k in 0..config.n_snapshots {
        let date = config.base_date + chrono::Duration::days(7 * k as i64);
        let mut cells = Vec::with_capacity(n * SLOT_COUNT);
        let mut platform_totals = BTreeMap::new();
        for (idx, &country) in countries.iter().enumerate() {
            if k == 0 {
                let wb = rng.gen_range(1_500_000..=90_000_000u64);
                wb_populations.insert(country, wb);
                let total = rng.gen_range(config.count_range.0..=config.count_range.1);
                let factor = rng.gen_range(0.02..0.30);
                // the educated audience is a subset of the platform population
                let platform = ((wb as f64 * factor).round() as u64).max(2 * total);
                totals[idx] = total;
                platforms[idx] = platform;
                true_totals_first.insert(country, total);
            } else {
                let growth = rng.gen_range(-0.02..0.08);
                let mut total = ((totals[idx] as f64) * (1.0 + growth)).round() as u64;
                total = total.max(1);
                if !config.censoring {
                    total = total.max(CENSOR_THRESHOLD);
                }
                let platform_growth = rng.gen_range(-0.03..0.05);
                let platform = (((platforms[idx] as f64) * (1.0 + platform_growth)).round()
                    as u64)
                    .max(2 * total);
                totals[idx] = total;
                platforms[idx] = platform;
            }
            let cell_counts = split_total(&mut rng, totals[idx], config.censoring);
            platform_totals.insert(country, platforms[idx]);
            for (slot, &count) in cell_counts.iter().enumerate() {
                cells.push(AudienceCell {
                    snapshot_date: date,
                    country,
                    gender: Gender::ALL[slot / AgeBucket::ALL.len()],
                    age: AgeBucket::ALL[slot % AgeBucket::ALL.len()],
                    count,
                    censored: count == 0,
                });
            }
        }
        snapshots.push(Snapshot::new(date, cells, platform_totals));
        dates.push(date);
    }

    // the audience column exactly as the pipeline will compute it from
    // the first snapshot
    let penetration = scale::penetration(&snapshots[0].platform_totals, &wb_populations)
        .expect("populations are positive by construction");
    let scaled = scale::country_totals(&snapshots[0], &penetration.table, Breakdown::Total)
        .expect("every country has a penetration value");
    let scaled_by_country: BTreeMap<CountryCode, f64> =
        scaled.iter().map(|e| (e.country, e.value)).collect();
    let audience: Vec<f64> = countries.iter().map(|c| scaled_by_country[c]).collect();
    let z1 = standardize(&audience).map_err(|_| IngestError::Parameter {
        message: "scaled audience column is degenerate; widen count_range or relax censoring"
            .to_string(),
    })?;

    // orthonormal directions for the remaining predictor columns
    let mut directions: Vec<Vec<f64>> = vec![z1.values.clone()];
    for _ in 1..p {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = orthonormalize(raw, &directions)?;
        directions.push(q);
    }
    let mut z_columns = directions.clone();
    if let Some((i, j, rho)) = mix {
        let complement = (1.0 - rho * rho).sqrt();
        z_columns[j] =
            (0..n).map(|r| rho * directions[i][r] + complement * directions[j][r]).collect();
    }

    let noise: Vec<f64> = if config.noise_scale > 0.0 {
        (0..n).map(|_| config.noise_scale * gaussian(&mut rng)).collect()
    } else {
        vec![0.0; n]
    };

    let mut target: Vec<u64> = Vec::with_capacity(n);
    for r in 0..n {
        let response: f64 = config
            .beta
            .iter()
            .enumerate()
            .map(|(k, b)| b * z_columns[k][r])
            .sum::<f64>()
            + noise[r];
        let y = TARGET_SCALE * response + TARGET_OFFSET;
        if y < 0.5 {
            return Err(IngestError::Parameter {
                message: "planted response went negative; reduce coefficient magnitudes \
                          or noise_scale"
                    .to_string(),
            });
        }
        target.push(y.round() as u64);
    }

    // indicator columns, canonical order after the audience column:
    // sci, distance, gpi, gdp
    let plans = [
        ColumnPlan {
            center: 250_000.0,
            spread: 80_000.0,
            lo: 0.0,
            hi: f64::INFINITY,
            filler: (5_000.0, 500_000.0),
        },
        ColumnPlan {
            center: 3_000.0,
            spread: 900.0,
            lo: 0.0,
            hi: f64::INFINITY,
            filler: (200.0, 8_000.0),
        },
        ColumnPlan { center: 2.5, spread: 0.45, lo: 1.0, hi: 5.0, filler: (1.1, 4.2) },
        ColumnPlan {
            center: 6e11,
            spread: 2e11,
            lo: 0.0,
            hi: f64::INFINITY,
            filler: (5e9, 3e12),
        },
    ];
    let mut indicator_columns: Vec<Vec<f64>> = Vec::with_capacity(plans.len());
    for (slot, plan) in plans.iter().enumerate() {
        let column_index = slot + 1;
        if column_index < p {
            indicator_columns.push(place_column(&z_columns[column_index], plan));
        } else {
            indicator_columns
                .push((0..n).map(|_| rng.gen_range(plan.filler.0..plan.filler.1)).collect());
        }
    }

    let as_of: NaiveDate = BENCHMARK_DATE.parse().expect("valid date");
    let indicators: Vec<CountryIndicators> = countries
        .iter()
        .enumerate()
        .map(|(r, &country)| CountryIndicators {
            country,
            wb_population: Some(wb_populations[&country]),
            gdp_usd: Some(indicator_columns[3][r]),
            gpi: Some(indicator_columns[2][r]),
            sci: Some(indicator_columns[0][r]),
            distance_km: Some(indicator_columns[1][r]),
            unhcr_refugees: Some(target[r]),
            unhcr_as_of: Some(as_of),
        })
        .collect();

    let observed_totals: BTreeMap<CountryCode, u64> = countries
        .iter()
        .map(|&c| {
            let sum = snapshots[0]
                .cells
                .iter()
                .filter(|cell| cell.country == c)
                .map(|cell| cell.count)
                .sum();
            (c, sum)
        })
        .collect();

    let truth = PlantedTruth {
        seed: config.seed,
        n_countries: n,
        beta: config.beta.clone(),
        predictors: Predictor::ALL[..p].iter().map(|pr| pr.label().to_string()).collect(),
        noise_scale: config.noise_scale,
        censoring: config.censoring,
        snapshot_dates: dates,
        noise: countries.iter().copied().zip(noise).collect(),
        true_totals: true_totals_first,
        observed_totals,
        target_counts: countries.iter().copied().zip(target).collect(),
    };

    Ok(SyntheticData { snapshots, indicators, truth })
}

/// Writes the bundle: one snapshot file per date, the indicators file,
/// the truth record, and a README describing the files. Deterministic
/// bytes for a given configuration.
pub fn write_bundle(data: &SyntheticData, dir: &Path) -> Result<BundleFiles, IngestError> {
    let io = |source| IngestError::Io { path: dir.to_path_buf(), source };
    fs::create_dir_all(dir).map_err(io)?;

    let mut snapshot_paths = Vec::with_capacity(data.snapshots.len());
    for snapshot in &data.snapshots {
        let path = dir.join(format!("snapshot_{}.csv", snapshot.date));
        write_snapshot_file(snapshot, &path)?;
        snapshot_paths.push(path);
    }

    let indicators_path = dir.join("indicators.csv");
    write_indicators_file(&data.indicators, &indicators_path)?;

    let truth_path = dir.join("truth.json");
    let json = serde_json::to_string_pretty(&data.truth).expect("truth record serializes");
    fs::write(&truth_path, json + "\n")
        .map_err(|source| IngestError::Io { path: truth_path.clone(), source })?;

    let readme_path = dir.join("README.md");
    fs::write(&readme_path, bundle_readme(data))
        .map_err(|source| IngestError::Io { path: readme_path.clone(), source })?;

    Ok(BundleFiles {
        snapshots: snapshot_paths,
        indicators: indicators_path,
        truth: truth_path,
        readme: readme_path,
    })
}

fn bundle_readme(data: &SyntheticData) -> String {
    let truth = &data.truth;
    let dates: Vec<String> = truth.snapshot_dates.iter().map(|d| d.to_string()).collect();
    format!(
        "# Synthetic audience bundle\n\
         \n\
         Deterministic synthetic data (seed {seed}) with a planted linear\n\
         relationship between the scaled audience column and the benchmark\n\
         counts. Fitting the standardized regression on this bundle\n\
         recovers the planted coefficients{exact}.\n\
         \n\
         ## Files\n\
         \n\
         - `snapshot_<date>.csv`: audience counts per (country, gender,\n\
           age) cell plus one platform-total row per country. Dates:\n\
           {dates}.\n\
         - `indicators.csv`: per-country covariates. Populations are drawn\n\
           from [1.5e6, 9e7]; filler columns use sci in [5e3, 5e5],\n\
           distance_km in [200, 8000], gpi in [1.1, 4.2], gdp_usd in\n\
           [5e9, 3e12]. The benchmark column carries the planted response.\n\
         - `truth.json`: the planted coefficients ({betas}), per-country\n\
           noise, true and observed audience totals, and the benchmark\n\
           counts.\n\
         \n\
         Counts respect the platform reporting rule: every cell is zero or\n\
         at least {threshold}. Censoring mode: {censoring}.\n",
        seed = truth.seed,
        exact = if truth.noise_scale == 0.0 { " exactly" } else { " up to the added noise" },
        dates = dates.join(", "),
        betas = truth
            .beta
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(", "),
        threshold = CENSOR_THRESHOLD,
        censoring = if truth.censoring { "on" } else { "off" },
    )
}
