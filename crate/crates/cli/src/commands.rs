//! The three subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use distobs::certify::{certify, selection_norm, CertificateReport, Check, SuiteOptions};
use distobs::design::QMethod;
use distobs::generate::random_case;
use distobs::simulator::{run, write_csv, write_round_csv, SimTrace};
use distobs::synthesis::{synthesize, synthesize_with_gains, Synthesis};
use serde::Serialize;

use crate::artifacts::{load_gains, write_json, CertificateDoc, DesignDoc, CERTIFICATE_SCHEMA};
use crate::config::Scenario;
use crate::failure::Failure;

/// Slack on the measured rate before the summary flags a miss.
pub const RATE_SLACK: f64 = 0.05;
/// Longest horizon used for the simulator-versus-product check.
const ORACLE_HORIZON: u64 = 60;

pub struct Common {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub verbose: bool,
    pub gains: Option<PathBuf>,
}

impl Common {
    fn out_dir(&self, scenario: Option<&Scenario>) -> Result<PathBuf, Failure> {
        let dir = self
            .out
            .clone()
            .or_else(|| scenario.and_then(|s| s.output_dir().map(Path::to_path_buf)))
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&dir).map_err(|e| Failure::io("output_dir", e))?;
        Ok(dir)
    }
}

fn build(scenario: &Scenario, gains: Option<&Path>) -> Result<Synthesis, Failure> {
    let cfg = &scenario.config;
    let method = cfg.q.method();
    Ok(match gains {
        Some(path) => {
            let k_bars = load_gains(path, scenario.plant.m())?;
            synthesize_with_gains(
                &scenario.plant,
                &scenario.schedule,
                cfg.lambda,
                method,
                k_bars,
            )?
        }
        None => synthesize(&scenario.plant, &scenario.schedule, cfg.lambda, method)?,
    })
}

fn rounds(scenario: &Scenario, synth: &Synthesis) -> u64 {
    scenario.config.q.explicit().unwrap_or(synth.selection.q)
}

fn certify_scenario(scenario: &Scenario, synth: &Synthesis, seed: u64) -> CertificateReport {
    let options = SuiteOptions {
        oracle_horizon: Some(scenario.config.tau_max.clamp(1, ORACLE_HORIZON)),
        oracle_seed: seed,
        ..SuiteOptions::default()
    };
    let mut report = certify(synth, &options);
    if let Some(q) = scenario.config.q.explicit() {
        let mut sel = synth.selection.clone();
        sel.q = q;
        let check = match selection_norm(synth, &sel) {
            Ok(v) => Check {
                label: "explicit_q_bound".into(),
                graph: None,
                agent: None,
                value: v,
                threshold: synth.lambda,
                passed: v <= synth.lambda * (1.0 + 1e-12),
                detail: format!("|A_tilde B^q| in the mixed norm at the configured q = {q}"),
            },
            Err(e) => Check {
                label: "explicit_q_bound".into(),
                graph: None,
                agent: None,
                value: f64::NAN,
                threshold: synth.lambda,
                passed: false,
                detail: e.to_string(),
            },
        };
        report.checks.push(check);
        report.passed = report.checks.iter().all(|c| c.passed);
    }
    report
}

fn first_failure(reports: &[&CertificateReport]) -> Option<Failure> {
    let failed: Vec<&Check> = reports.iter().flat_map(|r| r.failures()).collect();
    let first = failed.first()?;
    Some(Failure::certificate(
        first.label.clone(),
        format!(
            "{} of {} checks failed; first: {} value {:.6e} against {:.6e}",
            failed.len(),
            reports.iter().map(|r| r.checks.len()).sum::<usize>(),
            first.label,
            first.value,
            first.threshold
        ),
    ))
}

fn print_table(reports: &[&CertificateReport]) {
    #[derive(Default)]
    struct Row {
        total: usize,
        failed: usize,
        lo: f64,
        hi: f64,
    }
    let mut rows: BTreeMap<&str, Row> = BTreeMap::new();
    for c in reports.iter().flat_map(|r| &r.checks) {
        let row = rows.entry(c.label.as_str()).or_insert(Row {
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
            ..Row::default()
        });
        row.total += 1;
        row.failed += (!c.passed) as usize;
        row.lo = row.lo.min(c.value);
        row.hi = row.hi.max(c.value);
    }
    println!(
        "{:<34} {:>6} {:>6} {:>13} {:>13}  status",
        "check", "count", "failed", "min value", "max value"
    );
    for (label, row) in rows {
        println!(
            "{label:<34} {:>6} {:>6} {:>13.4e} {:>13.4e}  {}",
            row.total,
            row.failed,
            row.lo,
            row.hi,
            if row.failed == 0 { "PASS" } else { "FAIL" }
        );
    }
}

fn print_design(synth: &Synthesis, report: &CertificateReport, q: u64) {
    let sel = &synth.selection;
    println!(
        "n = {}, m = {}, lambda = {}, unobservable dims = {:?}",
        report.n, report.m, report.lambda, report.unobservable_dims
    );
    println!(
        "q = {q} ({:?}: p = {}, p_bar = {}, certified bound {:.6})",
        sel.method, sel.p, sel.p_bar, sel.certified_bound
    );
    for g in &report.graphs {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
        println!(
            "graph {}: laplacian second eigenvalue {:.6}, lyapunov margin {}, |B|_R {}, mixed |B^p| {}",
            g.graph,
            g.laplacian_second_eigenvalue,
            fmt(g.lyapunov_margin),
            fmt(g.weighted_norm),
            fmt(g.mixed_norm)
        );
    }
}

pub fn cmd_synthesize(config: &Path, common: &Common) -> Result<(), Failure> {
    let scenario = Scenario::load(config)?;
    let synth = build(&scenario, common.gains.as_deref())?;
    let q = rounds(&scenario, &synth);
    let report = certify_scenario(&scenario, &synth, common.seed);
    let dir = common.out_dir(Some(&scenario))?;
    write_json(&dir.join("design.json"), &DesignDoc::new(&synth, q))?;
    write_json(
        &dir.join("certificate.json"),
        &CertificateDoc {
            schema: CERTIFICATE_SCHEMA,
            report: &report,
        },
    )?;
    print_design(&synth, &report, q);
    if common.verbose {
        print_table(&[&report]);
    }
    match first_failure(&[&report]) {
        Some(f) => Err(f),
        None => {
            println!("all {} certificate checks passed", report.checks.len());
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub lambda: f64,
    pub q: u64,
    pub tau_max: u64,
    pub initial_error: f64,
    pub final_error: f64,
    /// Geometric-mean decay per event over the measurement window.
    pub measured_rate: Option<f64>,
    pub rate_window: Option<[u64; 2]>,
    pub rate_target_met: bool,
    pub status: String,
}

/// Errors below this fraction of the initial error are treated as rounding
/// noise and excluded from the rate estimate.
const NOISE_FLOOR: f64 = 1e-12;

/// Decay rate over the second half of the run, stopping early once the
/// error reaches the rounding floor.
pub fn measured_rate(trace: &SimTrace) -> Option<(f64, [u64; 2])> {
    let errs: Vec<f64> = trace.records.iter().map(|r| r.total_err_norm).collect();
    let tau_max = errs.len() as u64 - 1;
    if tau_max < 2 {
        return None;
    }
    let floor = NOISE_FLOOR * errs[0].max(f64::MIN_POSITIVE);
    let lo = tau_max / 2;
    if errs[lo as usize] <= floor {
        // Already converged to the floor; measure from the start instead.
        let hi = errs.iter().position(|&e| e <= floor).unwrap_or(1).max(1) as u64;
        return Some((rate_between(&errs, 0, hi), [0, hi]));
    }
    let hi = (lo..=tau_max)
        .take_while(|&t| errs[t as usize] > floor)
        .last()
        .unwrap_or(lo);
    if hi == lo {
        return None;
    }
    Some((rate_between(&errs, lo, hi), [lo, hi]))
}

fn rate_between(errs: &[f64], lo: u64, hi: u64) -> f64 {
    if hi <= lo || errs[lo as usize] == 0.0 {
        return 0.0;
    }
    (errs[hi as usize] / errs[lo as usize]).powf(1.0 / (hi - lo) as f64)
}

pub fn cmd_simulate(config: &Path, common: &Common) -> Result<(), Failure> {
    let scenario = Scenario::load(config)?;
    let synth = build(&scenario, common.gains.as_deref())?;
    let q = rounds(&scenario, &synth);
    let (x0, x_hat0) = scenario.initial_state(common.seed);
    let mut sim = synth.scenario(q, x0, x_hat0, scenario.config.tau_max);
    sim.verbose = common.verbose;
    let trace = run(&sim)?;
    let dir = common.out_dir(Some(&scenario))?;

    let write = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| {
        let file = File::create(dir.join(name)).map_err(|e| Failure::io("write_output", e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Failure::io("write_output", e))
    };
    write("trace.csv", &|w| write_csv(&trace, w, true))?;
    if common.verbose {
        write("rounds.csv", &|w| write_round_csv(&trace, w))?;
    }

    let lambda = scenario.config.lambda;
    let rate = measured_rate(&trace);
    let met = rate.is_none_or(|(r, _)| r <= lambda + RATE_SLACK);
    let summary = SimulationSummary {
        lambda,
        q,
        tau_max: scenario.config.tau_max,
        initial_error: trace.records[0].total_err_norm,
        final_error: trace.records.last().map_or(0.0, |r| r.total_err_norm),
        measured_rate: rate.map(|r| r.0),
        rate_window: rate.map(|r| r.1),
        rate_target_met: met,
        status: if met {
            "rate target met"
        } else {
            "rate target not met"
        }
        .into(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "simulated {} events with q = {q}; error {:.3e} -> {:.3e}",
        summary.tau_max, summary.initial_error, summary.final_error
    );
    match rate {
        Some((r, [lo, hi])) => {
            println!("measured rate {r:.4} over events {lo}..{hi} (lambda = {lambda})")
        }
        None => println!("measured rate unavailable for this horizon (lambda = {lambda})"),
    }
    println!("{}", summary.status);
    Ok(())
}

/// Number of random scenarios checked by `verify` without a config.
pub const DEFAULT_SUITE_CASES: usize = 6;

pub fn cmd_verify(config: Option<&Path>, cases: usize, common: &Common) -> Result<(), Failure> {
    let reports = match config {
        Some(path) => {
            let scenario = Scenario::load(path)?;
            let synth = build(&scenario, common.gains.as_deref())?;
            println!("verifying {}", path.display());
            vec![certify_scenario(&scenario, &synth, common.seed)]
        }
        None => {
            if common.gains.is_some() {
                return Err(Failure::invalid(
                    "gains_without_config",
                    "--gains requires --config",
                ));
            }
            println!(
                "verifying {cases} random scenarios with seed {}",
                common.seed
            );
            let mut reports = Vec::new();
            for index in 0..cases {
                let case = random_case(index, common.seed);
                for method in [QMethod::WeightedTwoNorm, QMethod::MixedNorm] {
                    let synth = synthesize(&case.plant, &case.schedule, case.lambda, method)?;
                    let options = SuiteOptions {
                        oracle_seed: common.seed,
                        ..SuiteOptions::default()
                    };
                    reports.push(certify(&synth, &options));
                }
            }
            reports
        }
    };
    let refs: Vec<&CertificateReport> = reports.iter().collect();
    print_table(&refs);
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out).map_err(|e| Failure::io("output_dir", e))?;
        let docs: Vec<_> = reports
            .iter()
            .map(|report| CertificateDoc {
                schema: CERTIFICATE_SCHEMA,
                report,
            })
            .collect();
        write_json(&out.join("verify.json"), &docs)?;
    }
    match first_failure(&refs) {
        Some(f) => Err(f),
        None => {
            println!("all checks passed");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use distobs::linalg::Vector;
    use distobs::simulator::TraceRecord;

    fn trace(errs: &[f64]) -> SimTrace {
        SimTrace {
            records: errs
                .iter()
                .enumerate()
                .map(|(t, &e)| TraceRecord {
                    tau: t as u64,
                    graph_id: 0,
                    x: Vector::zeros(1),
                    estimates: vec![Vector::zeros(1); 2],
                    agent_err_norms: vec![e, e],
                    total_err_norm: e,
                    round_errors: None,
                })
                .collect(),
        }
    }

    #[test]
    fn rate_of_geometric_decay() {
        let errs: Vec<f64> = (0..21).map(|t| 0.7f64.powi(t)).collect();
        let (r, window) = measured_rate(&trace(&errs)).unwrap();
        assert!((r - 0.7).abs() < 1e-12);
        assert_eq!(window, [10, 20]);
    }

    #[test]
    fn rate_stops_at_the_noise_floor() {
        let mut errs: Vec<f64> = (0..40).map(|t| 0.1f64.powi(t)).collect();
        for e in errs.iter_mut().skip(14) {
            *e = 1e-16;
        }
        let (r, window) = measured_rate(&trace(&errs)).unwrap();
        assert!((r - 0.1).abs() < 1e-9, "{r}");
        assert_eq!(window[0], 0);
    }

    #[test]
    fn short_runs_have_no_rate() {
        assert!(measured_rate(&trace(&[1.0])).is_none());
        assert!(measured_rate(&trace(&[1.0, 0.5])).is_none());
    }
}
