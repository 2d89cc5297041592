//! Monte Carlo replicates, per-cell estimates and the aggregate report.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::ds::CoverageSummary;
use crate::error::{Error, Result};
use crate::estimators::{
    empirical_ds_estimate, iran_estimate, net_undercount, procedure_c_table, EmpiricalDsInputs, F30Placement,
    NegativeCellPolicy, Procedure, ProcedureCEstimates,
};
use crate::groups::GroupKey;
use crate::matching::GroupTallies;
use crate::par::{map_indexed, Execution};
use crate::seeds::{replicate_stream, Component};

use super::config::ExperimentConfig;
use super::pipeline::{replicate_tallies, simulate_replicate, CensusCounts, ExclusionCounts, ReplicateTallies, World};

/// One estimator variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Match-code estimator with a placement for code 30.
    Iran(F30Placement),
    /// Empirical estimator with a mover procedure.
    Procedure(Procedure),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Iran(p) => write!(f, "iran-{p}"),
            Method::Procedure(p) => write!(f, "proc-{p}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(p) = s.strip_prefix("iran-") {
            return Ok(Method::Iran(p.parse()?));
        }
        if let Some(p) = s.strip_prefix("proc-") {
            return Ok(Method::Procedure(p.parse()?));
        }
        Err(Error::Config(format!("unknown method `{s}`")))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

pub fn methods(procedures: &[Procedure], placements: &[F30Placement]) -> Vec<Method> {
    placements
        .iter()
        .map(|p| Method::Iran(*p))
        .chain(procedures.iter().map(|p| Method::Procedure(*p)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub t_hat: f64,
    /// A negative procedure-C cell was clamped to zero.
    pub clamped: bool,
}

/// Estimate `T` for one cell. Procedure C goes through its capture table.
pub fn estimate(method: Method, tallies: &GroupTallies, counts: &CensusCounts, policy: NegativeCellPolicy) -> Result<Estimate> {
    let plain = |t_hat| Estimate { t_hat, clamped: false };
    match method {
        Method::Iran(placement) => iran_estimate(&tallies.fcodes, placement).map(plain),
        Method::Procedure(procedure) => {
            let (np_hat, m_hat) = tallies.movers.p_sample_terms(procedure)?;
            let inputs = EmpiricalDsInputs {
                c: counts.c,
                ii: counts.ii,
                ee_hat: tallies.ee_hat,
                ne_hat: tallies.ne_hat,
                np_hat,
                m_hat,
            };
            if procedure == Procedure::C {
                inputs.validate()?;
                let table = ProcedureCEstimates::from_tallies(&tallies.movers, inputs.x1plus_hat());
                let table = procedure_c_table(&table, policy)?;
                return Ok(Estimate { t_hat: table.t_hat, clamped: table.clamped });
            }
            empirical_ds_estimate(&inputs).map(plain)
        }
    }
}

/// One estimate for one cell in one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellEstimate {
    pub replicate: u64,
    pub group: GroupKey,
    pub method: Method,
    pub t_hat: f64,
    /// Scope-adjusted census count.
    pub c: f64,
    pub u_hat: f64,
    pub r_hat: f64,
    pub t_true: f64,
    /// True net undercount `T - C`.
    pub u_true: f64,
    pub r_true: f64,
    pub clamped: bool,
}

/// An estimator that could not produce a value for one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub replicate: u64,
    pub group: GroupKey,
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateReport {
    pub replicate: u64,
    pub estimates: Vec<CellEstimate>,
    pub failures: Vec<CellFailure>,
    pub tallies: ReplicateTallies,
}

impl ReplicateReport {
    pub fn get(&self, group: GroupKey, method: Method) -> Option<&CellEstimate> {
        self.estimates.iter().find(|e| e.group == group && e.method == method)
    }
}

fn replicate_error(config: &ExperimentConfig, replicate: u64, source: Error) -> Error {
    Error::Replicate {
        index: replicate,
        seed: config.seed,
        stream: replicate_stream(replicate, Component::Sample),
        source: Box::new(source),
    }
}

/// Full pipeline and every configured estimator for replicate `k`.
///
/// An estimator that fails on one cell (no out-movers, a negative capture
/// cell, ...) is recorded as a [`CellFailure`]; with `strict` it aborts the
/// replicate instead. Pipeline errors always abort.
pub fn run_replicate_in(world: &World, config: &ExperimentConfig, replicate: u64) -> Result<ReplicateReport> {
    let wrap = |e| replicate_error(config, replicate, e);
    let data = simulate_replicate(world, config, replicate).map_err(wrap)?;
    let tallies = replicate_tallies(world, config, &data).map_err(wrap)?;
    let methods = methods(&config.procedures, &config.f30);
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for (group, g) in &tallies.groups {
        let counts = tallies.census.get(group).copied().unwrap_or_default();
        let truth = tallies.ledger.get(group);
        for &method in &methods {
            let Estimate { t_hat, clamped } = match estimate(method, g, &counts, config.negative_cells) {
                Ok(e) => e,
                Err(e) if config.strict => {
                    return Err(wrap(Error::DegenerateInputs(format!("{group} {method}: {e}"))));
                }
                Err(e) => {
                    failures.push(CellFailure { replicate, group: *group, method, error: e.to_string() });
                    continue;
                }
            };
            let CoverageSummary { u_hat, r_hat, .. } = net_undercount(t_hat, counts.c).map_err(wrap)?;
            estimates.push(CellEstimate {
                replicate,
                group: *group,
                method,
                t_hat,
                c: counts.c,
                u_hat,
                r_hat,
                t_true: truth.t as f64,
                u_true: truth.n() as f64,
                r_true: truth.r(),
                clamped,
            });
        }
    }
    Ok(ReplicateReport { replicate, estimates, failures, tallies })
}

pub fn run_replicate(config: &ExperimentConfig, replicate: u64) -> Result<ReplicateReport> {
    config.validate()?;
    let world = World::build(config)?;
    run_replicate_in(&world, config, replicate)
}

/// Replicate statistics for one cell and method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryRow {
    pub group: GroupKey,
    pub method: Method,
    /// Replicates with an estimate.
    pub replicates: u64,
    /// Replicates where the estimator failed on this cell.
    pub failed: u64,
    pub clamped: u64,
    pub mean_t_hat: f64,
    pub sd_t_hat: f64,
    /// Monte Carlo standard error of the mean.
    pub se_mean: f64,
    pub t_true: f64,
    pub relative_bias: f64,
    pub mean_c: f64,
    pub mean_r_hat: f64,
    pub mean_r_true: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanExclusions {
    pub temp_absent_no_q: f64,
    pub not_listed_no_q: f64,
    pub temp_absent_unlisted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub replicates: u64,
    pub summary: Vec<SummaryRow>,
    pub mean_exclusions: MeanExclusions,
    #[serde(skip)]
    pub per_replicate: Vec<ReplicateReport>,
}

impl ExperimentReport {
    pub fn row(&self, group: GroupKey, method: Method) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.group == group && r.method == method)
    }
}

fn summarize(config: &ExperimentConfig, reports: Vec<ReplicateReport>) -> ExperimentReport {
    let mut cells: BTreeMap<(GroupKey, Method), (Vec<&CellEstimate>, u64)> = BTreeMap::new();
    for r in &reports {
        for e in &r.estimates {
            cells.entry((e.group, e.method)).or_default().0.push(e);
        }
        for f in &r.failures {
            cells.entry((f.group, f.method)).or_default().1 += 1;
        }
    }
    let summary = cells
        .into_iter()
        .map(|((group, method), (es, failed))| {
            let n = es.len() as f64;
            let mean = |f: fn(&CellEstimate) -> f64| es.iter().map(|e| f(e)).sum::<f64>() / n;
            let mean_t_hat = mean(|e| e.t_hat);
            let sd_t_hat = if es.len() > 1 {
                (es.iter().map(|e| (e.t_hat - mean_t_hat).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let t_true = mean(|e| e.t_true);
            SummaryRow {
                group,
                method,
                replicates: es.len() as u64,
                failed,
                clamped: es.iter().filter(|e| e.clamped).count() as u64,
                mean_t_hat,
                sd_t_hat,
                se_mean: sd_t_hat / n.sqrt(),
                t_true,
                relative_bias: (mean_t_hat - t_true) / t_true,
                mean_c: mean(|e| e.c),
                mean_r_hat: mean(|e| e.r_hat),
                mean_r_true: mean(|e| e.r_true),
            }
        })
        .collect();
    let n = reports.len() as f64;
    let ex = |f: fn(&ExclusionCounts) -> u64| reports.iter().map(|r| f(&r.tallies.exclusions) as f64).sum::<f64>() / n;
    ExperimentReport {
        seed: config.seed,
        replicates: config.replicates,
        summary,
        mean_exclusions: MeanExclusions {
            temp_absent_no_q: ex(|e| e.temp_absent_no_q),
            not_listed_no_q: ex(|e| e.not_listed_no_q),
            temp_absent_unlisted: ex(|e| e.temp_absent_unlisted),
        },
        per_replicate: reports,
    }
}

/// Run every replicate and aggregate. The first failing replicate (in index
/// order) aborts the experiment; its seed and stream are in the error.
pub fn run_experiment(config: &ExperimentConfig, execution: Execution) -> Result<ExperimentReport> {
    config.validate()?;
    let world = World::build(config)?;
    let results = map_indexed(config.replicates, execution, |k| run_replicate_in(&world, config, k));
    let reports = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize(config, reports))
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

/// Per-replicate table as CSV.
pub fn replicates_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "replicate", "group", "method", "t_hat", "c", "u_hat", "r_hat", "t_true", "u_true", "r_true", "status",
    ])?;
    for r in &report.per_replicate {
        for f in &r.failures {
            let mut row = vec![f.replicate.to_string(), f.group.to_string(), f.method.to_string()];
            row.extend(std::iter::repeat_n(String::new(), 7));
            row.push(f.error.clone());
            w.write_record(row)?;
        }
        for e in &r.estimates {
            w.write_record([
                e.replicate.to_string(),
                e.group.to_string(),
                e.method.to_string(),
                fmt_f(e.t_hat),
                fmt_f(e.c),
                fmt_f(e.u_hat),
                fmt_f(e.r_hat),
                fmt_f(e.t_true),
                fmt_f(e.u_true),
                fmt_f(e.r_true),
                if e.clamped { "clamped" } else { "ok" }.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn summary_json(report: &ExperimentReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

pub fn summary_text(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed {}  replicates {}", report.seed, report.replicates);
    let _ = writeln!(
        s,
        "excluded households per replicate: temp-absent/no-q {:.2}, not-listed/no-q {:.2}, temp-absent/unlisted {:.2}",
        report.mean_exclusions.temp_absent_no_q,
        report.mean_exclusions.not_listed_no_q,
        report.mean_exclusions.temp_absent_unlisted
    );
    let _ = writeln!(
        s,
        "{:<14} {:<18} {:>6} {:>14} {:>12} {:>12} {:>10} {:>9} {:>9}",
        "group", "method", "failed", "mean T_hat", "sd", "true T", "rel bias", "R_hat %", "R true %"
    );
    for r in &report.summary {
        let _ = writeln!(
            s,
            "{:<14} {:<18} {:>6} {:>14.1} {:>12.1} {:>12.0} {:>10.5} {:>9.3} {:>9.3}",
            r.group.to_string(),
            r.method.to_string(),
            r.failed,
            r.mean_t_hat,
            r.sd_t_hat,
            r.t_true,
            r.relative_bias,
            r.mean_r_hat,
            r.mean_r_true
        );
    }
    s
}

/// Write `replicates.csv`, `summary.json` and `summary.txt` into `dir`.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("replicates.csv"), replicates_csv(report)?)?;
    std::fs::write(dir.join("summary.json"), summary_json(report))?;
    std::fs::write(dir.join("summary.txt"), summary_text(report))?;
    Ok(())
}
