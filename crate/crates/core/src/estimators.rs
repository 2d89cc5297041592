//! Dual-system estimators built from survey tallies: the empirical estimator,
//! the three mover-treatment procedures, the match-code (f-code) estimator
//! used in Iran 2006, and the procedure-C capture table.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ds::{ds_estimate_cells, CoverageSummary, DsTable};
use crate::error::{Error, Result};
use crate::groups::GroupKey;

/// PES treatment of movers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Procedure {
    /// Census-time residents: non-movers and out-movers.
    A,
    /// PES-time residents: non-movers and in-movers.
    B,
    /// Movers counted through in-movers, matched through out-movers.
    C,
}

impl Procedure {
    pub const ALL: [Procedure; 3] = [Procedure::A, Procedure::B, Procedure::C];
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Procedure::A => "a",
            Procedure::B => "b",
            Procedure::C => "c",
        })
    }
}

impl FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Procedure::A),
            "b" => Ok(Procedure::B),
            "c" => Ok(Procedure::C),
            other => Err(Error::Config(format!("unknown procedure `{other}`"))),
        }
    }
}

/// Weighted P-sample totals and matches split by mover status.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MoverTallies {
    pub n_non: f64,
    pub n_in: f64,
    pub n_out: f64,
    pub m_non: f64,
    pub m_out: f64,
    /// Only present when in-movers were matched at their census address.
    pub m_in: Option<f64>,
    pub post_stratum: GroupKey,
}

impl MoverTallies {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("m_non", self.m_non, "n_non", self.n_non),
            ("m_out", self.m_out, "n_out", self.n_out),
        ];
        for (m_name, m, n_name, n) in pairs {
            if !(m >= 0.0 && m <= n && n.is_finite()) {
                return Err(Error::DegenerateInputs(format!(
                    "need 0 <= {m_name} ({m}) <= {n_name} ({n})"
                )));
            }
        }
        if let Some(m_in) = self.m_in {
            if !(m_in >= 0.0 && m_in <= self.n_in) {
                return Err(Error::DegenerateInputs(format!(
                    "need 0 <= m_in ({m_in}) <= n_in ({})",
                    self.n_in
                )));
            }
        }
        if self.n_in < 0.0 {
            return Err(Error::DegenerateInputs(format!("n_in = {} is negative", self.n_in)));
        }
        Ok(())
    }

    /// P-sample total and matches `(N_p, M)` under a procedure.
    pub fn p_sample_terms(&self, procedure: Procedure) -> Result<(f64, f64)> {
        self.validate()?;
        let (np, m) = match procedure {
            Procedure::A => (self.n_non + self.n_out, self.m_non + self.m_out),
            Procedure::B => {
                let m_in = self.m_in.ok_or(Error::MissingField("m_in"))?;
                (self.n_non + self.n_in, self.m_non + m_in)
            }
            Procedure::C => {
                if self.n_out <= 0.0 && self.n_in > 0.0 {
                    return Err(Error::DegenerateInputs(
                        "procedure C needs out-movers to estimate the mover match rate".into(),
                    ));
                }
                (
                    self.n_non + self.n_in,
                    self.m_non + self.implied_in_mover_matches().unwrap_or(0.0),
                )
            }
        };
        if m <= 0.0 {
            return Err(Error::DegenerateInputs(format!(
                "procedure {procedure}: no matches in the P-sample"
            )));
        }
        Ok((np, m))
    }

    /// Difference between in-mover and out-mover totals. Zero nationally
    /// in a closed population; nonzero within post-strata.
    pub fn mover_imbalance(&self) -> f64 {
        (self.n_in - self.n_out).abs()
    }

    /// Matched in-movers imputed from the out-mover match rate.
    /// Zero when there are no in-movers to impute for.
    pub fn implied_in_mover_matches(&self) -> Option<f64> {
        if self.n_in == 0.0 {
            return Some(0.0);
        }
        (self.n_out > 0.0).then(|| self.m_out / self.n_out * self.n_in)
    }
}

/// Inverse match rate `N_p / M`.
pub fn mover_ratio(tallies: &MoverTallies, procedure: Procedure) -> Result<f64> {
    let (np, m) = tallies.p_sample_terms(procedure)?;
    Ok(np / m)
}

/// Inputs of the empirical estimator `(C - II)(1 - EE/Ne)(Np/M)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDsInputs {
    /// Census count.
    pub c: f64,
    /// Whole-person imputations.
    pub ii: f64,
    /// Weighted E-sample erroneous enumerations.
    pub ee_hat: f64,
    /// Weighted E-sample total.
    pub ne_hat: f64,
    /// Weighted P-sample total.
    pub np_hat: f64,
    /// Weighted P-sample matches.
    pub m_hat: f64,
}

impl EmpiricalDsInputs {
    pub fn validate(&self) -> Result<()> {
        if self.ne_hat <= 0.0 {
            return Err(Error::DegenerateInputs("empty E-sample (ne_hat = 0)".into()));
        }
        if self.m_hat <= 0.0 {
            return Err(Error::DegenerateInputs("no P-sample matches (m_hat = 0)".into()));
        }
        if !(0.0..=self.c).contains(&self.ii) {
            return Err(Error::DegenerateInputs(format!(
                "need 0 <= ii ({}) <= c ({})",
                self.ii, self.c
            )));
        }
        if !(0.0..=self.ne_hat).contains(&self.ee_hat) {
            return Err(Error::DegenerateInputs(format!(
                "need 0 <= ee_hat ({}) <= ne_hat ({})",
                self.ee_hat, self.ne_hat
            )));
        }
        if self.m_hat > self.np_hat {
            return Err(Error::DegenerateInputs(format!(
                "m_hat ({}) exceeds np_hat ({})",
                self.m_hat, self.np_hat
            )));
        }
        Ok(())
    }

    /// Correctly enumerated census population, `(C - II)(1 - EE/Ne)`.
    pub fn x1plus_hat(&self) -> f64 {
        (self.c - self.ii) * (1.0 - self.ee_hat / self.ne_hat)
    }
}

pub fn empirical_ds_estimate(inputs: &EmpiricalDsInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(inputs.x1plus_hat() * (inputs.np_hat / inputs.m_hat))
}

/// Net undercount and its percent form.
pub fn net_undercount(t_hat: f64, c: f64) -> Result<CoverageSummary> {
    if !t_hat.is_finite() || t_hat <= 0.0 {
        return Err(Error::Domain(format!("t_hat = {t_hat} must be positive")));
    }
    let u_hat = t_hat - c;
    Ok(CoverageSummary {
        t_hat,
        c,
        u_hat,
        r_hat: 100.0 * u_hat / t_hat,
    })
}

/// Where matched out-movers (code 30) enter the doubly-missed cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F30Placement {
    /// Left out of `N22` entirely, as published.
    #[default]
    Omitted,
    /// Counted in census-only cell `X10`.
    #[serde(alias = "numerator")]
    InNumerator,
    /// Counted as matched, in `X11`.
    #[serde(alias = "denominator")]
    InDenominator,
}

impl F30Placement {
    pub const ALL: [F30Placement; 3] = [
        F30Placement::Omitted,
        F30Placement::InNumerator,
        F30Placement::InDenominator,
    ];
}

impl fmt::Display for F30Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            F30Placement::Omitted => "omitted",
            F30Placement::InNumerator => "numerator",
            F30Placement::InDenominator => "denominator",
        })
    }
}

impl FromStr for F30Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omitted" => Ok(F30Placement::Omitted),
            "numerator" | "in_numerator" => Ok(F30Placement::InNumerator),
            "denominator" | "in_denominator" => Ok(F30Placement::InDenominator),
            other => Err(Error::Config(format!("unknown f30 placement `{other}`"))),
        }
    }
}

/// Weighted person totals per final match code.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FCodeTallies {
    pub f10: f64,
    pub f30: f64,
    /// Census omissions 42/1 .. 42/4.
    pub f42: [f64; 4],
    /// PES omissions 52/1 .. 52/4.
    pub f52: [f64; 4],
    pub post_stratum: GroupKey,
}

impl FCodeTallies {
    pub fn sum_f42(&self) -> f64 {
        self.f42.iter().sum()
    }

    pub fn sum_f52(&self) -> f64 {
        self.f52.iter().sum()
    }

    /// Persons seen by either source, `X(1)`.
    pub fn x_seen(&self) -> f64 {
        self.f10 + self.f30 + self.sum_f42() + self.sum_f52()
    }

    fn validate(&self) -> Result<()> {
        let all = [self.f10, self.f30]
            .into_iter()
            .chain(self.f42)
            .chain(self.f52);
        for v in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::DegenerateInputs(format!("f-code tally {v} must be >= 0")));
            }
        }
        Ok(())
    }

    /// The capture table implied by a placement of code 30.
    pub fn table(&self, placement: F30Placement) -> Result<DsTable> {
        let (x11, x10) = match placement {
            F30Placement::Omitted => (self.f10, self.sum_f52()),
            F30Placement::InNumerator => (self.f10, self.f30 + self.sum_f52()),
            F30Placement::InDenominator => (self.f10 + self.f30, self.sum_f52()),
        };
        DsTable::with_stratum(x11, x10, self.sum_f42(), self.post_stratum)
    }
}

/// Weighted estimate of persons missed by both census and PES.
pub fn iran_n22(f: &FCodeTallies, placement: F30Placement) -> Result<f64> {
    f.validate()?;
    let s42 = f.sum_f42();
    let s52 = f.sum_f52();
    let (numerator, denominator) = match placement {
        F30Placement::Omitted => (s42 * s52, f.f10),
        F30Placement::InNumerator => (s42 * (f.f30 + s52), f.f10),
        F30Placement::InDenominator => (s42 * s52, f.f10 + f.f30),
    };
    if denominator <= 0.0 {
        return Err(Error::DegenerateInputs(format!(
            "N22 denominator is zero under placement `{placement}`"
        )));
    }
    Ok(numerator / denominator)
}

/// `f10 + f30 + Σf42 + Σf52 + N22`.
pub fn iran_estimate(f: &FCodeTallies, placement: F30Placement) -> Result<f64> {
    Ok(f.x_seen() + iran_n22(f, placement)?)
}

/// Weighted totals a–g used to build the procedure-C table (f is derived).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcedureCEstimates {
    /// Non-movers in the P-sample.
    pub a: f64,
    /// Out-movers in the P-sample.
    pub b: f64,
    /// In-movers in the P-sample.
    pub c: f64,
    /// Matched non-movers.
    pub d: f64,
    /// Matched out-movers.
    pub e: f64,
    /// Correctly enumerated census population.
    pub g: f64,
}

impl ProcedureCEstimates {
    /// Matched in-movers, `(e / b) c`; zero when there are no in-movers.
    pub fn f(&self) -> f64 {
        if self.c == 0.0 {
            return 0.0;
        }
        self.e / self.b * self.c
    }

    pub fn from_tallies(t: &MoverTallies, g: f64) -> Self {
        Self { a: t.n_non, b: t.n_out, c: t.n_in, d: t.m_non, e: t.m_out, g }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeCellPolicy {
    #[default]
    Reject,
    ClampToZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcedureCTable {
    pub table: DsTable,
    pub t_hat: f64,
    /// Whether a negative off-diagonal cell was clamped to zero.
    pub clamped: bool,
}

pub fn procedure_c_table(e: &ProcedureCEstimates, policy: NegativeCellPolicy) -> Result<ProcedureCTable> {
    for (name, v) in [("a", e.a), ("b", e.b), ("c", e.c), ("d", e.d), ("e", e.e), ("g", e.g)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidEstimates(format!("{name} = {v} must be >= 0")));
        }
    }
    if e.b <= 0.0 && e.c > 0.0 {
        return Err(Error::DegenerateInputs("b (out-movers) must be positive when c > 0".into()));
    }
    let x11 = e.d + e.f();
    if x11 <= 0.0 {
        return Err(Error::DegenerateInputs("d + f must be positive".into()));
    }
    let mut x10 = e.g - x11;
    let mut x01 = (e.a + e.c) - x11;
    let mut clamped = false;
    if x10 < 0.0 || x01 < 0.0 {
        match policy {
            NegativeCellPolicy::Reject => {
                return Err(Error::InvalidEstimates(format!(
                    "negative cell: x10 = {x10}, x01 = {x01}"
                )))
            }
            NegativeCellPolicy::ClampToZero => {
                x10 = x10.max(0.0);
                x01 = x01.max(0.0);
                clamped = true;
            }
        }
    }
    let table = DsTable::new(x11, x10, x01)?;
    let t_hat = ds_estimate_cells(&table)?;
    Ok(ProcedureCTable { table, t_hat, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn movers(n_non: f64, n_in: f64, n_out: f64, m_non: f64, m_out: f64) -> MoverTallies {
        MoverTallies { n_non, n_in, n_out, m_non, m_out, m_in: None, post_stratum: GroupKey::National }
    }

    fn fcodes(f10: f64, f30: f64, s42: f64, s52: f64) -> FCodeTallies {
        FCodeTallies {
            f10,
            f30,
            f42: [s42, 0.0, 0.0, 0.0],
            f52: [0.0, 0.0, 0.0, s52],
            post_stratum: GroupKey::National,
        }
    }

    #[test]
    fn empirical_examples() {
        let e = EmpiricalDsInputs { c: 1050.0, ii: 50.0, ee_hat: 100.0, ne_hat: 1000.0, np_hat: 1000.0, m_hat: 900.0 };
        assert!((empirical_ds_estimate(&e).unwrap() - 1000.0).abs() < 1e-9);
        assert_eq!(e.x1plus_hat(), 900.0);

        let e = EmpiricalDsInputs { c: 777.0, ii: 0.0, ee_hat: 0.0, ne_hat: 3.0, np_hat: 40.0, m_hat: 40.0 };
        assert_eq!(empirical_ds_estimate(&e).unwrap(), 777.0);

        let e = EmpiricalDsInputs { c: 1000.0, ii: 0.0, ee_hat: 0.0, ne_hat: 900.0, np_hat: 920.0, m_hat: 880.0 };
        assert!((empirical_ds_estimate(&e).unwrap() - 1_045.454_545_454_545).abs() < 1e-9);
    }

    #[test]
    fn empirical_degenerate() {
        let e = EmpiricalDsInputs { c: 10.0, ii: 0.0, ee_hat: 0.0, ne_hat: 5.0, np_hat: 5.0, m_hat: 0.0 };
        assert!(matches!(empirical_ds_estimate(&e), Err(Error::DegenerateInputs(_))));
        let e = EmpiricalDsInputs { ne_hat: 0.0, m_hat: 1.0, ..e };
        assert!(matches!(empirical_ds_estimate(&e), Err(Error::DegenerateInputs(_))));
    }

    #[test]
    fn mover_ratio_examples() {
        let t = movers(800.0, 100.0, 100.0, 720.0, 80.0);
        assert_eq!(mover_ratio(&t, Procedure::C).unwrap(), 1.125);
        assert_eq!(mover_ratio(&t, Procedure::A).unwrap(), 1.125);

        let perfect = MoverTallies { m_in: Some(30.0), ..movers(50.0, 30.0, 20.0, 50.0, 20.0) };
        for p in Procedure::ALL {
            assert_eq!(mover_ratio(&perfect, p).unwrap(), 1.0);
        }
    }

    #[test]
    fn mover_ratio_errors() {
        let t = movers(800.0, 100.0, 100.0, 720.0, 80.0);
        assert_eq!(mover_ratio(&t, Procedure::B), Err(Error::MissingField("m_in")));
        let no_out = movers(800.0, 100.0, 0.0, 720.0, 0.0);
        assert!(matches!(mover_ratio(&no_out, Procedure::C), Err(Error::DegenerateInputs(_))));
        let no_match = movers(10.0, 0.0, 5.0, 0.0, 0.0);
        assert!(matches!(mover_ratio(&no_match, Procedure::A), Err(Error::DegenerateInputs(_))));
        let bad = movers(10.0, 0.0, 5.0, 11.0, 0.0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn imbalance_diagnostic() {
        let t = movers(800.0, 120.0, 100.0, 720.0, 80.0);
        assert_eq!(t.mover_imbalance(), 20.0);
        assert_eq!(t.implied_in_mover_matches(), Some(96.0));
    }

    #[test]
    fn undercount_examples() {
        let s = net_undercount(1000.0, 960.0).unwrap();
        assert_eq!((s.u_hat, s.r_hat), (40.0, 4.0));
        assert!(!s.is_net_overcount());

        let s = net_undercount(512.0, 512.0).unwrap();
        assert_eq!((s.u_hat, s.r_hat), (0.0, 0.0));

        let s = net_undercount(1012.5, 1020.0).unwrap();
        assert_eq!(s.u_hat, -7.5);
        assert!((s.r_hat - (-0.740_740_740_740_740_7)).abs() < 1e-12);
        assert!(s.is_net_overcount());

        assert!(matches!(net_undercount(0.0, 10.0), Err(Error::Domain(_))));
    }

    #[test]
    fn n22_examples() {
        let f = fcodes(100.0, 0.0, 10.0, 20.0);
        assert_eq!(iran_n22(&f, F30Placement::Omitted).unwrap(), 2.0);
        for p in F30Placement::ALL {
            assert_eq!(iran_n22(&f, p).unwrap(), 2.0);
        }
        let f = fcodes(100.0, 100.0, 10.0, 20.0);
        assert_eq!(iran_n22(&f, F30Placement::InDenominator).unwrap(), 1.0);
        assert_eq!(iran_n22(&f, F30Placement::Omitted).unwrap(), 2.0);
        assert!(iran_n22(&fcodes(0.0, 0.0, 1.0, 1.0), F30Placement::Omitted).is_err());
    }

    #[test]
    fn iran_estimate_examples() {
        assert_eq!(iran_estimate(&fcodes(100.0, 0.0, 10.0, 20.0), F30Placement::Omitted).unwrap(), 132.0);
        assert_eq!(iran_estimate(&fcodes(250.0, 0.0, 0.0, 0.0), F30Placement::Omitted).unwrap(), 250.0);
        let f = fcodes(100.0, 50.0, 10.0, 20.0);
        assert_eq!(iran_estimate(&f, F30Placement::Omitted).unwrap(), 182.0);
        assert!((iran_estimate(&f, F30Placement::InDenominator).unwrap() - (180.0 + 200.0 / 150.0)).abs() < 1e-12);
        assert_eq!(iran_estimate(&f, F30Placement::InNumerator).unwrap(), 187.0);
    }

    #[test]
    fn f30_placement_tables_match_n22() {
        let f = fcodes(100.0, 50.0, 10.0, 20.0);
        for p in [F30Placement::InNumerator, F30Placement::InDenominator] {
            let t = f.table(p).unwrap();
            assert!((ds_estimate_cells(&t).unwrap() - iran_estimate(&f, p).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn procedure_c_examples() {
        let e = ProcedureCEstimates { a: 800.0, b: 100.0, c: 100.0, d: 720.0, e: 80.0, g: 900.0 };
        assert_eq!(e.f(), 80.0);
        let r = procedure_c_table(&e, NegativeCellPolicy::Reject).unwrap();
        assert_eq!((r.table.x11, r.table.x10, r.table.x01), (800.0, 100.0, 100.0));
        assert_eq!(r.t_hat, 1012.5);
        assert_eq!(r.t_hat, 900.0 * 900.0 / 800.0);

        let e = ProcedureCEstimates { a: 321.0, b: 1.0, c: 0.0, d: 321.0, e: 1.0, g: 321.0 };
        assert_eq!(procedure_c_table(&e, NegativeCellPolicy::Reject).unwrap().t_hat, 321.0);

        let e = ProcedureCEstimates { a: 500.0, b: 50.0, c: 50.0, d: 400.0, e: 40.0, g: 540.0 };
        let r = procedure_c_table(&e, NegativeCellPolicy::Reject).unwrap();
        assert_eq!(e.f(), 40.0);
        assert!((r.t_hat - 675.0).abs() < 1e-9);
    }

    #[test]
    fn procedure_c_errors_and_clamp() {
        let base = ProcedureCEstimates { a: 500.0, b: 50.0, c: 50.0, d: 400.0, e: 40.0, g: 540.0 };
        let no_b = ProcedureCEstimates { b: 0.0, ..base };
        assert!(matches!(procedure_c_table(&no_b, NegativeCellPolicy::Reject), Err(Error::DegenerateInputs(_))));
        let no_match = ProcedureCEstimates { d: 0.0, e: 0.0, ..base };
        assert!(matches!(procedure_c_table(&no_match, NegativeCellPolicy::Reject), Err(Error::DegenerateInputs(_))));

        let no_movers = ProcedureCEstimates { b: 0.0, c: 0.0, e: 0.0, ..base };
        assert_eq!(procedure_c_table(&no_movers, NegativeCellPolicy::Reject).unwrap().t_hat, 540.0 * 500.0 / 400.0);
        assert_eq!(mover_ratio(&movers(800.0, 0.0, 0.0, 720.0, 0.0), Procedure::C).unwrap(), 800.0 / 720.0);

        let low_g = ProcedureCEstimates { g: 400.0, ..base };
        assert!(matches!(procedure_c_table(&low_g, NegativeCellPolicy::Reject), Err(Error::InvalidEstimates(_))));
        let r = procedure_c_table(&low_g, NegativeCellPolicy::ClampToZero).unwrap();
        assert!(r.clamped);
        assert_eq!(r.table.x10, 0.0);
        assert_eq!(r.t_hat, 550.0);
    }
}
