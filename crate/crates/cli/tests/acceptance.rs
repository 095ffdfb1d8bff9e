//! Acceptance gate: one test per release criterion, each printing a
//! single `criterion NN PASS/FAIL` line (visible under `--nocapture`).
//! Tolerances are pinned next to the criteria they guard; oracles are
//! implemented inside this file so they cannot drift with the library.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use nowcast_core::attribution::{bruteforce_contributions, linear_contributions, shap_report};
use nowcast_core::datamodel::{
    assemble_panel, AgeBucket, AssembleOptions, AudienceCell, CountryCode, CountryPanel, Gender,
    PanelProvenance, PanelRow, SenioritySlice, SeniorityRole,
};
use nowcast_core::ingest::{
    read_indicators_file, read_snapshot_file, AudienceQuery, PlantedTruth, ReplayArchive,
};
use nowcast_core::analysis::{seniority_medians, seniority_shares};
use nowcast_core::scale::{penetration, scale_estimate, country_totals, Breakdown};
use nowcast_core::stats::{
    adjusted_r2, f_sf, f_statistic, ols_fit, spearman, t_cdf, ModelSpec, Predictor,
};
use nowcast_core::temporal;

/// Per-value agreement between closed-form and coalition-enumerated
/// attributions, and the local-accuracy residual.
const ATTRIBUTION_TOL: f64 = 1e-9;
/// Recovered coefficient error on a noise-free planted relationship.
const PLANTED_COEF_TOL: f64 = 1e-9;
/// Intercept of a standardized fit is zero by construction.
const PLANTED_INTERCEPT_TOL: f64 = 1e-10;
/// Single-predictor standardized coefficient vs Pearson r, and r2 vs r².
const IDENTITY_TOL: f64 = 1e-12;
/// t_cdf / f_sf against the numerical-integration oracle.
const SPECIAL_TOL: f64 = 1e-6;
/// Tied-rank correlation against the independent rank-then-Pearson oracle.
const TIE_TOL: f64 = 1e-12;
/// Share-sum deviation from 100 on non-empty slices.
const SHARE_SUM_TOL: f64 = 1e-9;

fn report(criterion: u32, outcome: Result<String, String>) {
    match outcome {
        Ok(detail) => println!("criterion {criterion:02} PASS: {detail}"),
        Err(detail) => {
            println!("criterion {criterion:02} FAIL: {detail}");
            panic!("criterion {criterion:02} failed: {detail}");
        }
    }
}

fn nowcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nowcast"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn cc(code: &str) -> CountryCode {
    CountryCode::new(code).unwrap()
}

fn code_for(index: usize) -> CountryCode {
    let bytes = [b'A' + (index / 26) as u8, b'A' + (index % 26) as u8];
    CountryCode::new(std::str::from_utf8(&bytes).unwrap()).unwrap()
}

fn day(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

/// Random panel with every column filled; target and predictors are
/// independent uniforms, so specs of any width stay full rank.
fn random_panel(rng: &mut ChaCha8Rng, n: usize) -> CountryPanel {
    let rows = (0..n)
        .map(|i| PanelRow {
            country: code_for(i),
            scaled_estimate: rng.gen_range(-5.0..5.0),
            sci: rng.gen_range(-5.0..5.0),
            distance_km: rng.gen_range(-5.0..5.0),
            gpi: rng.gen_range(-5.0..5.0),
            gdp_usd: rng.gen_range(-5.0..5.0),
            unhcr_refugees: rng.gen_range(-5.0..5.0),
        })
        .collect();
    CountryPanel { rows, provenance: PanelProvenance::default() }
}

#[test]
fn criterion_01_attribution_matches_coalition_enumeration() {
    report(1, (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut max_gap = 0.0f64;
        let mut max_local = 0.0f64;

        // 120 random linear models, widths cycling 1..=6
        for case in 0..120 {
            let p = case % 6 + 1;
            let coefficients: Vec<f64> = (0..p).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let intercept: f64 = rng.gen_range(-2.0..2.0);
            let means: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-4.0..4.0)).collect();

            let closed = linear_contributions(&coefficients, &means, &x)
                .map_err(|e| format!("case {case}: closed form failed: {e}"))?;
            let brute = bruteforce_contributions(&coefficients, intercept, &means, &x)
                .map_err(|e| format!("case {case}: enumeration failed: {e}"))?;
            for (j, (c, b)) in closed.iter().zip(&brute).enumerate() {
                let gap = (c - b).abs();
                max_gap = max_gap.max(gap);
                if gap > ATTRIBUTION_TOL {
                    return Err(format!(
                        "case {case} feature {j}: closed {c} vs enumerated {b} (gap {gap:e})"
                    ));
                }
            }

            let prediction =
                intercept + coefficients.iter().zip(&x).map(|(b, xi)| b * xi).sum::<f64>();
            let base =
                intercept + coefficients.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
            let local = (base + closed.iter().sum::<f64>() - prediction).abs();
            max_local = max_local.max(local);
            if local > ATTRIBUTION_TOL {
                return Err(format!("case {case}: local accuracy off by {local:e}"));
            }
        }

        // five actual OLS fits, every panel row decomposed
        let panel = random_panel(&mut rng, 12);
        for p in 1..=Predictor::ALL.len() {
            let spec = ModelSpec::new(format!("width {p}"), Predictor::ALL[..p].to_vec())
                .expect("prefix specs are valid");
            let fit = ols_fit(&spec, &panel).map_err(|e| format!("width {p}: {e}"))?;
            let shap = shap_report(&fit, &panel).map_err(|e| format!("width {p}: {e}"))?;
            for row in &shap.rows {
                let brute = bruteforce_contributions(
                    &fit.coefficients,
                    fit.intercept,
                    &fit.feature_means,
                    &row.features,
                )
                .map_err(|e| format!("width {p} {}: {e}", row.country))?;
                for (c, b) in row.contributions.iter().zip(&brute) {
                    let gap = (c - b).abs();
                    max_gap = max_gap.max(gap);
                    if gap > ATTRIBUTION_TOL {
                        return Err(format!(
                            "width {p} {}: fitted gap {gap:e}",
                            row.country
                        ));
                    }
                }
                let local = (shap.base_value + row.contributions.iter().sum::<f64>()
                    - row.prediction)
                    .abs();
                max_local = max_local.max(local);
                if local > ATTRIBUTION_TOL {
                    return Err(format!(
                        "width {p} {}: local accuracy off by {local:e}",
                        row.country
                    ));
                }
            }
        }

        Ok(format!(
            "120 random + 5 fitted models within {ATTRIBUTION_TOL:e} \
             (max value gap {max_gap:.2e}, max local residual {max_local:.2e})"
        ))
    })());
}

#[test]
fn criterion_02_planted_coefficients_are_recovered() {
    report(2, (|| {
        let dir = TempDir::new().unwrap();
        let out = dir.path().join("bundle");
        let output = nowcast(&[
            "simulate",
            "--out",
            &out.display().to_string(),
            "--seed",
            "20240",
            "--countries",
            "38",
            "--noise",
            "0.0",
            "--beta",
            "1.0,0.2,-0.15,-0.1",
        ]);
        if !output.status.success() {
            return Err(format!(
                "simulate failed: {}",
                String::from_utf8_lossy(&output.stderr)
            ));
        }

        let truth: PlantedTruth = serde_json::from_str(
            &fs::read_to_string(out.join("truth.json")).map_err(|e| e.to_string())?,
        )
        .map_err(|e| format!("truth record unreadable: {e}"))?;
        let config: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(out.join("config.json")).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        let first = config["snapshots"][0]
            .as_str()
            .ok_or("config lists no snapshots")?;

        // rebuild the panel the same way the pipeline would
        let snapshot = read_snapshot_file(&out.join(first)).map_err(|e| e.to_string())?;
        let indicators =
            read_indicators_file(&out.join("indicators.csv")).map_err(|e| e.to_string())?;
        let populations: BTreeMap<CountryCode, u64> = indicators
            .iter()
            .filter_map(|i| i.wb_population.map(|p| (i.country, p)))
            .collect();
        let table = penetration(&snapshot.platform_totals, &populations)
            .map_err(|e| e.to_string())?
            .table;
        let totals: BTreeMap<CountryCode, f64> =
            country_totals(&snapshot, &table, Breakdown::Total)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|e| (e.country, e.value))
                .collect();
        let (panel, dropped) =
            assemble_panel(&totals, &indicators, &AssembleOptions::default())
                .map_err(|e| e.to_string())?;
        if !dropped.is_empty() {
            return Err(format!("{} rows dropped from a complete bundle", dropped.len()));
        }

        let spec = ModelSpec::new(
            "planted",
            vec![Predictor::LinkedIn, Predictor::Sci, Predictor::Distance, Predictor::Gpi],
        )
        .unwrap();
        let labels: Vec<String> =
            spec.predictors.iter().map(|p| p.label().to_string()).collect();
        if labels != truth.predictors {
            return Err(format!(
                "predictor order mismatch: fit {labels:?} vs planted {:?}",
                truth.predictors
            ));
        }

        let fit = ols_fit(&spec, &panel).map_err(|e| e.to_string())?;
        let mut max_gap = 0.0f64;
        for (j, (got, want)) in fit.coefficients.iter().zip(&truth.beta).enumerate() {
            let gap = (got - want).abs();
            max_gap = max_gap.max(gap);
            if gap > PLANTED_COEF_TOL {
                return Err(format!(
                    "coefficient {j}: recovered {got} vs planted {want} (gap {gap:e})"
                ));
            }
        }
        if fit.intercept.abs() > PLANTED_INTERCEPT_TOL {
            return Err(format!("intercept {} exceeds {PLANTED_INTERCEPT_TOL:e}", fit.intercept));
        }

        Ok(format!(
            "n=38 noise-free bundle: all four coefficients within {PLANTED_COEF_TOL:e} \
             (max gap {max_gap:.2e}), intercept {:.2e}",
            fit.intercept
        ))
    })());
}

#[test]
fn criterion_03_single_predictor_coefficient_is_pearson_r() {
    report(3, (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let spec = ModelSpec::new("solo", vec![Predictor::LinkedIn]).unwrap();
        let mut max_coef_gap = 0.0f64;
        let mut max_r2_gap = 0.0f64;

        for case in 0..50 {
            let n = 8 + case % 23;
            let panel = random_panel(&mut rng, n);
            let x: Vec<f64> = panel.rows.iter().map(|r| r.scaled_estimate).collect();
            let y: Vec<f64> = panel.rows.iter().map(|r| r.unhcr_refugees).collect();

            // independent Pearson r
            let nf = n as f64;
            let mx = x.iter().sum::<f64>() / nf;
            let my = y.iter().sum::<f64>() / nf;
            let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
            let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
            let r = sxy / (sxx.sqrt() * syy.sqrt());

            let fit = ols_fit(&spec, &panel).map_err(|e| format!("case {case}: {e}"))?;
            let coef_gap = (fit.coefficients[0] - r).abs();
            let r2_gap = (fit.r2 - r * r).abs();
            max_coef_gap = max_coef_gap.max(coef_gap);
            max_r2_gap = max_r2_gap.max(r2_gap);
            if coef_gap > IDENTITY_TOL {
                return Err(format!(
                    "case {case} (n={n}): coefficient {} vs r {r} (gap {coef_gap:e})",
                    fit.coefficients[0]
                ));
            }
            if r2_gap > IDENTITY_TOL {
                return Err(format!(
                    "case {case} (n={n}): r2 {} vs r^2 {} (gap {r2_gap:e})",
                    fit.r2,
                    r * r
                ));
            }
        }

        Ok(format!(
            "50 seeded pairs within {IDENTITY_TOL:e} \
             (max coefficient gap {max_coef_gap:.2e}, max r2 gap {max_r2_gap:.2e})"
        ))
    })());
}

#[test]
fn criterion_04_reported_fit_triple_is_self_consistent() {
    report(4, (|| {
        // audited headline row: F = 329.2 from a one-predictor fit on n = 38
        let f = 329.2;
        let n = 38usize;
        let p = 1usize;
        let df_resid = (n - p - 1) as f64;

        let r2 = f / (f + df_resid);
        let r2_rounded = (r2 * 1e4).round() / 1e4;
        if r2_rounded != 0.9014 {
            return Err(format!("r2 {r2} rounds to {r2_rounded}, expected 0.9014"));
        }

        let coef = r2.sqrt();
        let coef_rounded = (coef * 100.0).round() / 100.0;
        if coef_rounded != 0.95 {
            return Err(format!("|coef| {coef} rounds to {coef_rounded}, expected 0.95"));
        }

        let adjusted = adjusted_r2(r2, n, p);
        for (name, value) in [("r2", r2), ("adjusted r2", adjusted)] {
            if !(0.89..=0.92).contains(&value) {
                return Err(format!("{name} {value} outside [0.89, 0.92]"));
            }
        }

        // the fit-statistic formula must invert back to the F we started from
        let f_back = f_statistic(r2, n, p);
        if (f_back - f).abs() > 1e-9 {
            return Err(format!("f_statistic inverts to {f_back}, expected {f}"));
        }
        let f_p = f_sf(f, p as u32, df_resid as u32).map_err(|e| e.to_string())?;
        if f_p > 0.001 {
            return Err(format!("tail probability {f_p} not beyond the 0.001 level"));
        }

        Ok(format!(
            "F=329.2 at n=38 implies r2 {r2:.6} (0.9014), |coef| {coef:.6} (0.95), \
             adjusted {adjusted:.6}; both inside [0.89, 0.92], tail p {f_p:.1e}"
        ))
    })());
}

// ===== numerical-integration oracle for criterion 5 =====

/// ln Γ(two_x / 2) by the exact recurrence from Γ(1/2) = √π and Γ(1) = 1.
fn ln_gamma_half(two_x: u32) -> f64 {
    let mut acc = if two_x % 2 == 1 { 0.5 * PI.ln() } else { 0.0 };
    let mut k = if two_x % 2 == 1 { 1 } else { 2 };
    while k < two_x {
        acc += (k as f64 / 2.0).ln();
        k += 2;
    }
    acc
}

fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature; plenty for smooth densities.
fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, 1e-12, 40)
}

/// P(T <= t) by integrating the t density from zero.
fn t_cdf_oracle(t: f64, df: u32) -> f64 {
    if t < 0.0 {
        return 1.0 - t_cdf_oracle(-t, df);
    }
    let d = df as f64;
    let ln_c = ln_gamma_half(df + 1) - ln_gamma_half(df) - 0.5 * (d * PI).ln();
    let pdf = move |u: f64| (ln_c - 0.5 * (d + 1.0) * (1.0 + u * u / d).ln()).exp();
    0.5 + integrate(&pdf, 0.0, t)
}

/// P(F > x) by integrating the F density over [0, x] after the u = v²
/// substitution, which removes the endpoint singularity for df1 = 1.
fn f_sf_oracle(x: f64, df1: u32, df2: u32) -> f64 {
    let (a, b) = (df1 as f64, df2 as f64);
    let ln_front = 0.5 * a * (a / b).ln()
        - (ln_gamma_half(df1) + ln_gamma_half(df2) - ln_gamma_half(df1 + df2));
    let integrand = move |v: f64| {
        if v == 0.0 {
            return if df1 == 1 { 2.0 * ln_front.exp() } else { 0.0 };
        }
        2.0 * (ln_front + (a - 1.0) * v.ln() - 0.5 * (a + b) * (1.0 + v * v * a / b).ln())
            .exp()
    };
    1.0 - integrate(&integrand, 0.0, x.sqrt())
}

#[test]
fn criterion_05_tail_probabilities_match_integration_oracle() {
    report(5, (|| {
        for df in 1..=200 {
            let center = t_cdf(0.0, df).map_err(|e| e.to_string())?;
            if center != 0.5 {
                return Err(format!("t_cdf(0, {df}) = {center}, expected exactly 0.5"));
            }
        }

        let mut points = 0usize;
        let mut max_gap = 0.0f64;

        let t_dfs = [1u32, 2, 3, 4, 5, 6, 8, 10, 12, 20, 30, 36, 120];
        let t_values = [0.25, 0.5, 1.0, 2.0, 3.0, 6.0];
        for &df in &t_dfs {
            for &v in &t_values {
                for &t in &[v, -v] {
                    let got = t_cdf(t, df).map_err(|e| e.to_string())?;
                    let want = t_cdf_oracle(t, df);
                    let gap = (got - want).abs();
                    max_gap = max_gap.max(gap);
                    points += 1;
                    if gap > SPECIAL_TOL {
                        return Err(format!(
                            "t_cdf({t}, {df}) = {got} vs oracle {want} (gap {gap:e})"
                        ));
                    }
                }
            }
        }

        let f_df1 = [1u32, 2, 3, 5];
        let f_df2 = [1u32, 4, 10, 36];
        let f_values = [0.5, 1.0, 2.5, 5.0];
        for &d1 in &f_df1 {
            for &d2 in &f_df2 {
                for &x in &f_values {
                    let got = f_sf(x, d1, d2).map_err(|e| e.to_string())?;
                    let want = f_sf_oracle(x, d1, d2);
                    let gap = (got - want).abs();
                    max_gap = max_gap.max(gap);
                    points += 1;
                    if gap > SPECIAL_TOL {
                        return Err(format!(
                            "f_sf({x}, {d1}, {d2}) = {got} vs oracle {want} (gap {gap:e})"
                        ));
                    }
                }
            }
        }

        if points < 200 {
            return Err(format!("only {points} grid points, need at least 200"));
        }
        Ok(format!(
            "{points} grid points within {SPECIAL_TOL:e} of the integration oracle \
             (max gap {max_gap:.2e}); t_cdf(0, df) exact for df 1..=200"
        ))
    })());
}

#[test]
fn criterion_06_platform_growth_episode_is_exact() {
    report(6, (|| {
        // raw count and population fixed; only the platform total moves
        let population: BTreeMap<CountryCode, u64> = [(cc("DE"), 81_920_000u64)].into();
        let before: BTreeMap<CountryCode, u64> = [(cc("DE"), 150_000u64)].into();
        let after: BTreeMap<CountryCode, u64> = [(cc("DE"), 160_000u64)].into();

        let cell = |date: &str| AudienceCell {
            snapshot_date: day(date),
            country: cc("DE"),
            gender: Gender::Female,
            age: AgeBucket::A25To34,
            count: 3_000,
            censored: false,
        };

        let table_before =
            penetration(&before, &population).map_err(|e| e.to_string())?.table;
        let table_after =
            penetration(&after, &population).map_err(|e| e.to_string())?.table;
        let older =
            scale_estimate(&cell("2023-02-27"), &table_before).map_err(|e| e.to_string())?;
        let newer =
            scale_estimate(&cell("2023-03-06"), &table_after).map_err(|e| e.to_string())?;

        if older.value != 1_638_400.0 {
            return Err(format!("older scaled estimate {} != 1638400", older.value));
        }
        if newer.value != 1_536_000.0 {
            return Err(format!("newer scaled estimate {} != 1536000", newer.value));
        }

        let pct = temporal::pct_diff(&older, &newer).map_err(|e| e.to_string())?;
        if pct != -0.0625 {
            return Err(format!("relative change {pct} is not exactly -0.0625"));
        }
        let record = temporal::diff(&older, day("2023-02-27"), &newer, day("2023-03-06"))
            .map_err(|e| e.to_string())?;
        if record.pct_diff != Some(-0.0625) {
            return Err(format!("diff record carries {:?}", record.pct_diff));
        }

        Ok("platform total 150000 -> 160000 with raw count 3000 and population \
            81920000 gives exactly -0.0625"
            .to_string())
    })());
}

#[test]
fn criterion_07_no_replayed_count_in_the_censored_band() {
    report(7, (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(707);
        let mut archive = ReplayArchive::new();
        let base = day("2023-02-27");
        let school_sets = ["universities-ua", "schools-all"];
        let mut censored = 0usize;

        for i in 0..10_000 {
            let query = AudienceQuery {
                country: code_for(rng.gen_range(0..60)),
                gender: if rng.gen_bool(0.5) {
                    Some(*Gender::ALL.choose(&mut rng).unwrap())
                } else {
                    None
                },
                age: if rng.gen_bool(0.5) {
                    Some(*AgeBucket::ALL.choose(&mut rng).unwrap())
                } else {
                    None
                },
                school_set: if rng.gen_bool(0.3) {
                    Some(school_sets.choose(&mut rng).unwrap().to_string())
                } else {
                    None
                },
                seniority: if rng.gen_bool(0.3) {
                    Some(*SeniorityRole::ALL.choose(&mut rng).unwrap())
                } else {
                    None
                },
            };
            let date = base + chrono::Days::new(rng.gen_range(0..70));
            // half the draws land below the threshold on purpose
            let stored: u64 = if rng.gen_bool(0.5) {
                rng.gen_range(0..300)
            } else {
                rng.gen_range(300..3_000_000)
            };

            archive.record(&query, date, stored);
            let got = archive.replay(&query, date).map_err(|e| format!("query {i}: {e}"))?;
            if got > 0 && got < 300 {
                return Err(format!(
                    "query {i}: stored {stored} replayed as {got}, inside (0, 300)"
                ));
            }
            let want = if stored >= 300 { stored } else { 0 };
            if got != want {
                return Err(format!("query {i}: stored {stored} replayed as {got}"));
            }
            if stored > 0 && got == 0 {
                censored += 1;
            }
        }

        Ok(format!(
            "10000 replayed queries, none in (0, 300); {censored} positive counts censored to 0"
        ))
    })());
}

#[test]
fn criterion_08_default_schema_is_complete() {
    report(8, (|| {
        use Predictor::*;
        let expected: [(&str, &[Predictor]); 14] = [
            ("Model 1", &[LinkedIn]),
            ("Model 2", &[Sci]),
            ("Model 3", &[Distance]),
            ("Model 4", &[Gpi]),
            ("Model 5", &[Gdp]),
            ("Model 6", &[LinkedIn, Sci]),
            ("Model 7", &[LinkedIn, Distance]),
            ("Model 8", &[LinkedIn, Gpi]),
            ("Model 9", &[LinkedIn, Gdp]),
            ("Model 10", &[LinkedIn, Sci, Distance]),
            ("Model 11", &[LinkedIn, Sci, Gpi]),
            ("Model 12", &[LinkedIn, Sci, Gdp]),
            ("Model 13", &[LinkedIn, Sci, Gdp, Gpi]),
            ("Model 14", &[LinkedIn, Sci, Distance, Gpi]),
        ];

        let schema = ModelSpec::default_schema();
        if schema.len() != expected.len() {
            return Err(format!("schema holds {} models, expected 14", schema.len()));
        }
        for (spec, (name, predictors)) in schema.iter().zip(&expected) {
            if spec.name != *name {
                return Err(format!("found {:?} where {name:?} belongs", spec.name));
            }
            if spec.predictors != *predictors {
                return Err(format!(
                    "{name} fits {:?}, expected {predictors:?}",
                    spec.predictors
                ));
            }
        }

        // the fit subcommand must emit one summary row per model and the
        // per-coefficient rows must spell the same sets out
        let label_of = |p: &Predictor| match p {
            LinkedIn => "linkedin_estimates",
            Sci => "sci",
            Distance => "distance",
            Gpi => "gpi",
            Gdp => "gdp",
        };
        let dir = TempDir::new().unwrap();
        let panel_path = dir.path().join("panel.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(808);
        nowcast_core::ingest::write_panel_file(&random_panel(&mut rng, 16), &panel_path)
            .map_err(|e| e.to_string())?;
        let output = nowcast(&[
            "fit",
            "--panel",
            &panel_path.display().to_string(),
            "--out",
            &dir.path().display().to_string(),
        ]);
        if !output.status.success() {
            return Err(format!(
                "fit subcommand failed: {}",
                String::from_utf8_lossy(&output.stderr)
            ));
        }

        let models = fs::read_to_string(dir.path().join("models.csv"))
            .map_err(|e| e.to_string())?;
        let model_names: Vec<&str> = models
            .lines()
            .skip(1)
            .map(|line| line.split(',').next().unwrap())
            .collect();
        let expected_names: Vec<&str> = expected.iter().map(|(name, _)| *name).collect();
        if model_names != expected_names {
            return Err(format!("models.csv lists {model_names:?}"));
        }

        let fits = fs::read_to_string(dir.path().join("fits.csv")).map_err(|e| e.to_string())?;
        let mut emitted: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for line in fits.lines().skip(1) {
            let mut cells = line.split(',');
            let model = cells.next().unwrap();
            emitted.entry(model).or_default().push(cells.next().unwrap());
        }
        for (name, predictors) in &expected {
            let want: Vec<&str> = predictors.iter().map(label_of).collect();
            if emitted.get(name) != Some(&want) {
                return Err(format!(
                    "{name} emitted {:?}, expected {want:?}",
                    emitted.get(name)
                ));
            }
        }

        Ok("schema and emitted fit rows: 14 models named Model 1..Model 14 \
            with the fixed predictor sets"
            .to_string())
    })());
}

#[test]
fn criterion_09_rank_correlation_properties() {
    report(9, (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(909);

        // exact endpoints on sorted distinct values
        for n in [4usize, 5, 10, 25, 38] {
            let mut x: Vec<f64> = (0..n).map(|i| i as f64 + rng.gen_range(0.0..0.5)).collect();
            x.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let reversed: Vec<f64> = x.iter().rev().copied().collect();

            let same = spearman(&x, &x).map_err(|e| e.to_string())?.rho;
            if same != 1.0 {
                return Err(format!("rho(x, x) = {same} at n={n}, expected exactly 1"));
            }
            let opposite = spearman(&x, &reversed).map_err(|e| e.to_string())?.rho;
            if opposite != -1.0 {
                return Err(format!(
                    "rho(x, reverse(x)) = {opposite} at n={n}, expected exactly -1"
                ));
            }
        }

        // strictly monotone transforms leave rho bit-identical
        for case in 0..100 {
            let n = 6 + case % 30;
            // integer grid: transforms keep distinct values distinct
            let mut x: Vec<f64> = (0..n).map(|i| (i % 20) as f64).collect();
            x.shuffle(&mut rng);
            let mut y: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
            y[0] = -100.0; // guard against a constant draw
            let base = spearman(&x, &y).map_err(|e| e.to_string())?.rho;

            let transformed: Vec<f64> = match case % 4 {
                0 => x.iter().map(|v| v * v * v).collect(),
                1 => x.iter().map(|v| (v / 8.0).exp()).collect(),
                2 => x.iter().map(|v| 3.0 * v + 7.0).collect(),
                _ => x.iter().map(|v| (v + 1.0).sqrt()).collect(),
            };
            let after = spearman(&transformed, &y).map_err(|e| e.to_string())?.rho;
            if after != base {
                return Err(format!(
                    "case {case}: transform {} changed rho {base} -> {after}",
                    case % 4
                ));
            }
        }

        // ties against an independent rank-then-Pearson oracle
        let mut max_gap = 0.0f64;
        for case in 0..100 {
            let n = 8 + case % 20;
            let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64).collect();
            let mut y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64).collect();
            x[0] = -1.0; // at least two distinct values on each side
            y[0] = -1.0;

            let got = spearman(&x, &y).map_err(|e| e.to_string())?.rho;
            let want = pearson_oracle(&rank_oracle(&x), &rank_oracle(&y));
            let gap = (got - want).abs();
            max_gap = max_gap.max(gap);
            if gap > TIE_TOL {
                return Err(format!(
                    "case {case} (n={n}): rho {got} vs oracle {want} (gap {gap:e})"
                ));
            }
        }

        Ok(format!(
            "endpoints exact at five sizes, 100 monotone transforms bit-stable, \
             100 tied samples within {TIE_TOL:e} of the rank oracle (max gap {max_gap:.2e})"
        ))
    })());
}

/// Average ranks, written independently of the library: sort index pairs,
/// walk runs of equal values, assign each run the mean of its positions.
fn rank_oracle(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let mean_rank = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            ranks[idx] = mean_rank;
        }
        start = end + 1;
    }
    ranks
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx.sqrt() * syy.sqrt())
}

#[test]
fn criterion_10_fixed_clock_runs_are_byte_identical() {
    report(10, (|| {
        let sample = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../sample");
        let config = sample.join("config.json");
        if !config.exists() {
            return Err(format!("sample bundle missing at {}", sample.display()));
        }

        let dir = TempDir::new().unwrap();
        let mut outputs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("run{run}"));
            let output = nowcast(&[
                "run",
                "--config",
                &config.display().to_string(),
                "--out",
                &out.display().to_string(),
                "--fixed-clock",
            ]);
            if !output.status.success() {
                return Err(format!(
                    "run {run} failed: {}",
                    String::from_utf8_lossy(&output.stderr)
                ));
            }

            let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
                .map_err(|e| e.to_string())?
                .map(|entry| {
                    let path = entry.map_err(|e| e.to_string())?.path();
                    let name = path.file_name().unwrap().to_string_lossy().into_owned();
                    Ok((name, fs::read(&path).map_err(|e| e.to_string())?))
                })
                .collect::<Result<_, String>>()?;
            files.sort_by(|a, b| a.0.cmp(&b.0));
            outputs.push(files);
        }

        let (first, second) = (&outputs[0], &outputs[1]);
        let names = |files: &[(String, Vec<u8>)]| {
            files.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>()
        };
        if names(first) != names(second) {
            return Err(format!(
                "file sets differ: {:?} vs {:?}",
                names(first),
                names(second)
            ));
        }
        for ((name, a), (_, b)) in first.iter().zip(second) {
            if a != b {
                return Err(format!("{name} differs between the two runs"));
            }
        }

        Ok(format!(
            "two runs on the sample bundle: {} files, all byte-identical",
            first.len()
        ))
    })());
}

#[test]
fn criterion_11_share_sums_and_median_convention() {
    report(11, (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(1111);
        let mut max_sum_gap = 0.0f64;

        // fuzzed slices: every non-empty slice's shares sum to 100
        for case in 0..300 {
            let mut counts = BTreeMap::new();
            for role in SeniorityRole::ALL {
                let count =
                    if rng.gen_bool(0.3) { 0 } else { rng.gen_range(300..50_000u64) };
                counts.insert(role, count);
            }
            counts.insert(SeniorityRole::Entry, rng.gen_range(300..50_000u64));

            let slice = SenioritySlice::new(
                None,
                code_for(case % 600),
                *Gender::ALL.choose(&mut rng).unwrap(),
                counts,
            );
            let rows = seniority_shares(&[slice]);
            if rows[0].empty {
                return Err(format!("case {case}: positive total flagged empty"));
            }
            let sum: f64 = rows[0].shares.values().sum();
            let gap = (sum - 100.0).abs();
            max_sum_gap = max_sum_gap.max(gap);
            if gap > SHARE_SUM_TOL {
                return Err(format!("case {case}: shares sum to {sum} (gap {gap:e})"));
            }
        }

        // medians agree with the shared median convention, odd and even groups
        let mut slices = Vec::new();
        for (i, gender, group) in [(0usize, Gender::Female, 7usize), (100, Gender::Male, 6)] {
            for j in 0..group {
                let entry = 300 + rng.gen_range(0..5_000u64);
                let senior = 300 + rng.gen_range(0..5_000u64);
                let counts: BTreeMap<SeniorityRole, u64> =
                    [(SeniorityRole::Entry, entry), (SeniorityRole::Senior, senior)].into();
                slices.push(SenioritySlice::new(None, code_for(i + j), gender, counts));
            }
        }
        let shares = seniority_shares(&slices);
        let medians = seniority_medians(&shares, false);
        let mut compared = 0usize;
        for median_row in &medians {
            let values: Vec<f64> = shares
                .iter()
                .filter(|s| s.gender == median_row.gender)
                .map(|s| s.shares[&median_row.role])
                .collect();
            let want = temporal::median(&values).ok_or("empty median group")?;
            if median_row.median != want {
                return Err(format!(
                    "{}/{}: median {} vs convention {want}",
                    median_row.gender, median_row.role, median_row.median
                ));
            }
            // spell the convention out against a sorted copy
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = sorted.len();
            let explicit = if n % 2 == 1 {
                sorted[n / 2]
            } else {
                (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
            };
            if median_row.median != explicit {
                return Err(format!(
                    "{}/{}: median {} vs explicit middle {explicit}",
                    median_row.gender, median_row.role, median_row.median
                ));
            }
            compared += 1;
        }
        if compared < 2 {
            return Err("median fixture produced too few groups".to_string());
        }

        Ok(format!(
            "300 fuzzed slices sum to 100 within {SHARE_SUM_TOL:e} (max gap {max_sum_gap:.2e}); \
             {compared} median groups match the shared convention exactly"
        ))
    })());
}
