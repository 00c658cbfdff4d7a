//! Subcommand implementations. Every command writes `manifest.json` first
//! and returns a JSON summary that is also printed to stdout.

use crate::config::RunConfig;
use crate::error::CliError;
use crate::svg::{self, Series};
use mrisk_core::scenarios::{self, GainTable, WorstCaseScenario};
use mrisk_core::{adapted, wasserstein, Constraint, Metric, Problem, SensitivityReport, Settings, TwoPeriodModel};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::path::Path;

pub const SCATTER_CAP: usize = 5000;
const RELATIVE_GUARD: f64 = 1e-12;

/// Mixes the master seed with a sweep index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `(metric, constraint)` pairs to evaluate: the configured ones plus the
/// unconstrained case of every metric.
pub fn combinations(cfg: &RunConfig) -> (Vec<(Metric, Constraint)>, Vec<String>) {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for &metric in &cfg.metrics {
        for c in Constraint::ALL {
            if c != Constraint::None && !cfg.constraints.contains(&c) {
                continue;
            }
            let supported = match metric {
                Metric::Adapted => true,
                Metric::Standard => matches!(c, Constraint::None | Constraint::Martingale),
            };
            if !supported {
                skipped.push(format!("{metric}/{c}: only available under the adapted metric"));
                continue;
            }
            if metric == Metric::Standard && c == Constraint::Martingale && !cfg_is_quadratic(cfg) {
                skipped.push(format!("{metric}/{c}: requires p = 2"));
                continue;
            }
            out.push((metric, c));
        }
    }
    (out, skipped)
}

fn cfg_is_quadratic(cfg: &RunConfig) -> bool {
    (cfg.p - 2.0).abs() < 1e-12
}

pub fn report_for(pb: &Problem, metric: Metric, c: Constraint) -> Result<SensitivityReport, CliError> {
    Ok(match metric {
        Metric::Adapted => adapted::sensitivity(pb, c)?,
        Metric::Standard => wasserstein::sensitivity(pb, c)?,
    })
}

/// Ordering checks between reports of one problem, with two-standard-error slack.
pub fn ordering_violations(reports: &[SensitivityReport]) -> Vec<String> {
    let find = |m: Metric, c: Constraint| reports.iter().find(|r| r.metric == m && r.constraint == c);
    let pairs = [
        ((Metric::Adapted, Constraint::MartingaleMarginal), (Metric::Adapted, Constraint::Marginal)),
        ((Metric::Adapted, Constraint::Marginal), (Metric::Adapted, Constraint::None)),
        ((Metric::Adapted, Constraint::MartingaleMarginal), (Metric::Adapted, Constraint::Martingale)),
        ((Metric::Adapted, Constraint::Martingale), (Metric::Adapted, Constraint::None)),
        ((Metric::Adapted, Constraint::Martingale), (Metric::Standard, Constraint::Martingale)),
        ((Metric::Standard, Constraint::Martingale), (Metric::Standard, Constraint::None)),
        ((Metric::Adapted, Constraint::None), (Metric::Standard, Constraint::None)),
    ];
    let mut out = Vec::new();
    for (lo, hi) in pairs {
        if let (Some(a), Some(b)) = (find(lo.0, lo.1), find(hi.0, hi.1)) {
            let slack = 2.0 * (a.stderr() + b.stderr()) + 1e-9 * b.value.abs().max(1.0);
            if a.value > b.value + slack {
                out.push(format!(
                    "{}/{} = {} exceeds {}/{} = {}",
                    a.metric, a.constraint, a.value, b.metric, b.constraint, b.value
                ));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct PointResult {
    pub sigma: f64,
    pub seed: u64,
    pub g: f64,
    pub g_stderr: f64,
    pub reports: Vec<SensitivityReport>,
    pub ordering_violations: Vec<String>,
    pub skipped: Vec<String>,
}

/// All sensitivities of one model.
pub fn evaluate_point(cfg: &RunConfig, sigma: Option<f64>, seed: u64) -> Result<PointResult, CliError> {
    let model = cfg.build_model(sigma, None)?;
    let criterion = cfg.build_criterion()?;
    let pb = Problem::with_settings(&criterion, &model, cfg.p, Settings { mc_samples: cfg.mc_samples, seed })?;
    let (combos, skipped) = combinations(cfg);
    let reports = combos
        .iter()
        .map(|&(m, c)| report_for(&pb, m, c))
        .collect::<Result<Vec<_>, _>>()?;
    let field = pb.field();
    let (g, g_stderr) = pb.mc_mean(|a, b| field.value(a, b));
    Ok(PointResult {
        sigma: sigma.unwrap_or(cfg.sigma()),
        seed,
        g,
        g_stderr,
        ordering_violations: ordering_violations(&reports),
        reports,
        skipped,
    })
}

fn write_sensitivity_csv(path: &Path, points: &[PointResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sigma", "constraint", "metric", "p", "value", "stderr"])?;
    for pt in points {
        for r in &pt.reports {
            w.write_record([
                pt.sigma.to_string(),
                r.constraint.to_string(),
                r.metric.to_string(),
                r.p.to_string(),
                r.value.to_string(),
                r.stderr().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn relative_value(pt: &PointResult, r: &SensitivityReport) -> Result<f64, CliError> {
    if pt.g.abs() < RELATIVE_GUARD {
        return Err(CliError::Numerical(mrisk_core::Error::NonFinite {
            context: format!("relative sensitivity: |g(mu)| = {:e} is below {RELATIVE_GUARD:e}", pt.g.abs()),
        }));
    }
    Ok(r.value / pt.g)
}

fn write_relative_csv(path: &Path, points: &[PointResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sigma", "constraint", "metric", "p", "value", "g", "relative"])?;
    for pt in points {
        for r in &pt.reports {
            w.write_record([
                pt.sigma.to_string(),
                r.constraint.to_string(),
                r.metric.to_string(),
                r.p.to_string(),
                r.value.to_string(),
                pt.g.to_string(),
                relative_value(pt, r)?.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_manifest(out: &Path, command: &str, cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    write_json(
        &out.join("manifest.json"),
        &json!({ "command": command, "version": env!("CARGO_PKG_VERSION"), "config": cfg }),
    )
}

fn summarize(pt: &PointResult) -> Value {
    json!({
        "sigma": pt.sigma,
        "g": pt.g,
        "g_stderr": pt.g_stderr,
        "reports": pt.reports.iter().map(|r| json!({
            "constraint": r.constraint,
            "metric": r.metric,
            "p": r.p,
            "value": r.value,
            "stderr": r.stderr(),
            "foc_residual": r.diagnostics.foc_residual,
        })).collect::<Vec<_>>(),
        "ordering_violations": pt.ordering_violations,
        "skipped": pt.skipped,
    })
}

pub fn sensitivity(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let pt = evaluate_point(cfg, None, cfg.seed)?;
    write_sensitivity_csv(&out.join("sensitivity.csv"), std::slice::from_ref(&pt))?;
    write_json(&out.join("reports.json"), &pt)?;
    Ok(summarize(&pt))
}

pub fn relative(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let pt = evaluate_point(cfg, None, cfg.seed)?;
    write_relative_csv(&out.join("relative.csv"), std::slice::from_ref(&pt))?;
    write_json(&out.join("reports.json"), &pt)?;
    Ok(summarize(&pt))
}

fn file_tag(metric: Metric, c: Constraint) -> String {
    format!("{}_{}", metric.label(), c.label())
}

pub fn hedge(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let criterion = cfg.build_criterion()?;
    let grids = if cfg.grid_sizes.is_empty() { vec![cfg.model.grid] } else { cfg.grid_sizes.clone() };
    let mut summary = Vec::new();
    for &n in &grids {
        let model = cfg.build_model(None, Some(n))?;
        let pb = Problem::with_settings(&criterion, &model, cfg.p, Settings { mc_samples: cfg.mc_samples, seed: cfg.seed })?;
        let (combos, _) = combinations(cfg);
        for (metric, c) in combos {
            if c == Constraint::None {
                continue;
            }
            let rep = report_for(&pb, metric, c)?;
            let grid = pb.grid();
            let h: Vec<f64> = rep.hedge.as_ref().map_or(vec![0.0; grid.len()], |h| h.values().to_vec());
            let f: Vec<f64> = rep.marginal_hedge.as_ref().map_or(vec![0.0; grid.len()], |f| f.values().to_vec());
            let tag = format!("hedge_{}_n{n}", file_tag(metric, c));
            let mut w = csv::Writer::from_path(out.join(format!("{tag}.csv")))?;
            w.write_record(["x1", "h", "f"])?;
            for i in 0..grid.len() {
                w.write_record([grid[i].to_string(), h[i].to_string(), f[i].to_string()])?;
            }
            w.flush()?;
            let hp: Vec<(f64, f64)> = grid.iter().copied().zip(h.iter().copied()).collect();
            let fp: Vec<(f64, f64)> = grid.iter().copied().zip(f.iter().copied()).collect();
            let mut series = Vec::new();
            if rep.hedge.is_some() {
                series.push(Series { name: "h", points: &hp });
            }
            if rep.marginal_hedge.is_some() {
                series.push(Series { name: "f", points: &fp });
            }
            let title = format!("Optimal hedge, {metric} metric, constraint {c}");
            std::fs::write(out.join(format!("{tag}.svg")), svg::line_plot(&title, "x1", "hedge", &series, None))?;
            let mut entry = json!({
                "grid": n,
                "metric": metric,
                "constraint": c,
                "value": rep.value,
                "foc_residual": rep.diagnostics.foc_residual,
            });
            if metric == Metric::Standard && c == Constraint::Martingale {
                entry["fredholm"] = fredholm_overlay(&pb, &rep, out, n)?;
            }
            summary.push(entry);
        }
    }
    let summary = json!({ "hedges": summary });
    write_json(&out.join("hedge_summary.json"), &summary)?;
    Ok(summary)
}

fn fredholm_overlay(pb: &Problem, direct: &SensitivityReport, out: &Path, n: usize) -> Result<Value, CliError> {
    let sys = wasserstein::build_fredholm_system(pb)?;
    let (fh, frep) = wasserstein::solve_fredholm_hedge(&sys, pb)?;
    let dh = direct.hedge.as_ref().expect("direct minimizer returns a hedge");
    let grid = pb.grid();
    let max_gap = grid.iter().map(|x| (fh.eval(*x) - dh.eval(*x)).abs()).fold(0.0, f64::max);
    let mut w = csv::Writer::from_path(out.join(format!("hedge_fredholm_vs_direct_n{n}.csv")))?;
    w.write_record(["x1", "direct", "fredholm"])?;
    for x in &grid {
        w.write_record([x.to_string(), dh.eval(*x).to_string(), fh.eval(*x).to_string()])?;
    }
    w.flush()?;
    let dp: Vec<(f64, f64)> = grid.iter().map(|x| (*x, dh.eval(*x))).collect();
    let fp: Vec<(f64, f64)> = grid.iter().map(|x| (*x, fh.eval(*x))).collect();
    let note = format!("max |fredholm - direct| = {max_gap:.3e}");
    let plot = svg::line_plot(
        "Martingale hedge: integral equation vs direct minimization",
        "x1",
        "h",
        &[Series { name: "direct", points: &dp }, Series { name: "fredholm", points: &fp }],
        Some(&note),
    );
    std::fs::write(out.join(format!("hedge_fredholm_vs_direct_n{n}.svg")), plot)?;
    Ok(json!({
        "value": frep.value,
        "direct_value": direct.value,
        "max_gap": max_gap,
        "relative_l2_gap": wasserstein::relative_l2_gap(pb, &fh, dh),
        "fredholm_residual": wasserstein::fredholm_residual(&fh, &sys),
        "direct_residual": wasserstein::fredholm_residual(dh, &sys),
        "c0": sys.c0,
        "c1": sys.c1,
        "det": sys.det,
    }))
}

fn write_scenario(out: &Path, tag: &str, s: &WorstCaseScenario, gains: &GainTable) -> Result<(), CliError> {
    let stride = s.base.len().div_ceil(SCATTER_CAP).max(1);
    let mut w = csv::Writer::from_path(out.join(format!("scenario_{tag}.csv")))?;
    w.write_record(["x1", "x2", "x1_prime", "x2_prime"])?;
    let mut base_pts = Vec::new();
    let mut disp_pts = Vec::new();
    for (b, d) in s.base.iter().zip(&s.displaced).step_by(stride) {
        w.write_record([b.0.to_string(), b.1.to_string(), d.0.to_string(), d.1.to_string()])?;
        base_pts.push(*b);
        disp_pts.push(*d);
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join(format!("gain_{tag}.csv")))?;
    w.write_record(["r", "gain", "stderr"])?;
    for row in &gains.rows {
        w.write_record([row.r.to_string(), row.gain.to_string(), row.stderr.to_string()])?;
    }
    w.flush()?;
    let title = format!("Worst-case scenario, {} metric, constraint {}, r = {}", s.metric, s.constraint, s.r);
    let plot = svg::scatter_plot(
        &title,
        "x1",
        "x2",
        &[Series { name: "reference", points: &base_pts }, Series { name: "worst case", points: &disp_pts }],
    );
    std::fs::write(out.join(format!("scenario_{tag}.svg")), plot)?;
    Ok(())
}

pub fn worst_case(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let model: TwoPeriodModel = cfg.build_model(None, None)?;
    let criterion = cfg.build_criterion()?;
    let pb = Problem::with_settings(&criterion, &model, cfg.p, Settings { mc_samples: cfg.mc_samples, seed: cfg.seed })?;
    let (combos, skipped) = combinations(cfg);
    let radii = [cfg.r, cfg.r / 2.0, cfg.r / 4.0];
    let mut entries = Vec::new();
    for (metric, c) in combos {
        let rep = report_for(&pb, metric, c)?;
        let dir = scenarios::displacement_direction(&pb, metric, c)?;
        let s = scenarios::pushforward_scenario(&pb, &dir, cfg.r, cfg.mc_samples, cfg.seed, true)?;
        let gains = scenarios::first_order_gain(&pb, &dir, &radii, cfg.mc_samples, cfg.seed)?;
        let tag = file_tag(metric, c);
        write_scenario(out, &tag, &s, &gains)?;
        entries.push(json!({
            "metric": metric,
            "constraint": c,
            "r": cfg.r,
            "sensitivity": rep.value,
            "distance": s.distance,
            "normalization": s.normalization,
            "gain": s.gain,
            "gain_stderr": s.gain_stderr,
            "extrapolated_gain": gains.extrapolated,
            "diagonal_mass_base": s.diagonal_mass_base,
            "diagonal_mass_displaced": s.diagonal_mass_displaced,
            "diagonal_mass_decrease": s.diagonal_mass_base - s.diagonal_mass_displaced,
            "first_coordinate_unchanged": s.base.iter().zip(&s.displaced).all(|(a, b)| a.0 == b.0),
            "recentring_error": s.recentring_error,
            "flat_direction": s.flat,
        }));
    }
    let summary = json!({ "scenarios": entries, "skipped": skipped });
    write_json(&out.join("worst_case_summary.json"), &summary)?;
    Ok(summary)
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    if cfg.sweep.is_empty() {
        return Err(CliError::Config("sweep: the sweep command needs a non-empty list of volatilities".into()));
    }
    let points = cfg
        .sweep
        .par_iter()
        .enumerate()
        .map(|(i, &s)| evaluate_point(cfg, Some(s), derive_seed(cfg.seed, i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    write_sensitivity_csv(&out.join("sweep_sensitivity.csv"), &points)?;
    write_relative_csv(&out.join("sweep_relative.csv"), &points)?;

    let keys: Vec<(Metric, Constraint)> = points[0].reports.iter().map(|r| (r.metric, r.constraint)).collect();
    let curve = |rel: bool| -> Result<Vec<(String, Vec<(f64, f64)>)>, CliError> {
        keys.iter()
            .map(|&(m, c)| {
                let pts = points
                    .iter()
                    .filter_map(|pt| {
                        pt.reports.iter().find(|r| r.metric == m && r.constraint == c).map(|r| {
                            let v = if rel { relative_value(pt, r)? } else { r.value };
                            Ok((pt.sigma, v))
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                Ok((format!("{m}/{c}"), pts))
            })
            .collect()
    };
    for (rel, name, title) in [
        (false, "sweep_sensitivity.svg", "Sensitivities"),
        (true, "sweep_relative.svg", "Relative sensitivities"),
    ] {
        let curves = curve(rel)?;
        let series: Vec<Series<'_>> = curves.iter().map(|(n, p)| Series { name: n, points: p }).collect();
        std::fs::write(out.join(name), svg::line_plot(title, "sigma", if rel { "value / g" } else { "value" }, &series, None))?;
    }
    let summary = json!({ "points": points.iter().map(summarize).collect::<Vec<_>>() });
    write_json(&out.join("sweep_summary.json"), &summary)?;
    Ok(summary)
}
