//! The 2×2 dual-system capture table and the estimators defined on it.
//!
//! Rows are census in/out, columns are PES in/out. The doubly-missed cell
//! `x00` is never observed; it is estimated under the odds-ratio-one
//! (independence) assumption.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::groups::GroupKey;

/// Weighted counts of the three observable cells of the capture table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsTable {
    /// In census and in PES.
    pub x11: f64,
    /// In census, missed by PES.
    pub x10: f64,
    /// Missed by census, in PES.
    pub x01: f64,
    pub post_stratum: GroupKey,
}

impl DsTable {
    pub fn new(x11: f64, x10: f64, x01: f64) -> Result<Self> {
        Self::with_stratum(x11, x10, x01, GroupKey::National)
    }

    pub fn with_stratum(x11: f64, x10: f64, x01: f64, post_stratum: GroupKey) -> Result<Self> {
        for (name, v) in [("x11", x11), ("x10", x10), ("x01", x01)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!("cell {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(Self { x11, x10, x01, post_stratum })
    }

    /// Census total `X1+`.
    pub fn x1plus(&self) -> f64 {
        self.x11 + self.x10
    }

    /// PES total `X+1`.
    pub fn xplus1(&self) -> f64 {
        self.x11 + self.x01
    }

    /// Persons seen by at least one source, `X(1)`.
    pub fn x_seen(&self) -> f64 {
        self.x11 + self.x10 + self.x01
    }

    /// Multiply every cell by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        Self::with_stratum(self.x11 * lambda, self.x10 * lambda, self.x01 * lambda, self.post_stratum)
    }

    fn integer_cells(&self) -> Result<(u64, u64, u64)> {
        let cell = |name: &str, v: f64| -> Result<u64> {
            if v.fract() != 0.0 {
                return Err(Error::Domain(format!(
                    "likelihood needs integer cells; {name} = {v}"
                )));
            }
            Ok(v as u64)
        };
        Ok((cell("x11", self.x11)?, cell("x10", self.x10)?, cell("x01", self.x01)?))
    }
}

/// True population, census count, and the derived net undercount.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub t_hat: f64,
    pub c: f64,
    /// `t_hat - c`; negative values are a net overcount.
    pub u_hat: f64,
    /// Percent net undercount, `100 * u_hat / t_hat`.
    pub r_hat: f64,
}

impl CoverageSummary {
    pub fn is_net_overcount(&self) -> bool {
        self.u_hat < 0.0
    }
}

/// Doubly-missed cell under odds ratio one: `x10 * x01 / x11`.
pub fn estimate_x00(table: &DsTable) -> Result<f64> {
    let product = table.x10 * table.x01;
    if product == 0.0 {
        return Ok(0.0);
    }
    if table.x11 == 0.0 {
        return Err(Error::DegenerateTable(format!(
            "x11 = 0 with x10 * x01 = {product}; collapse strata before estimating"
        )));
    }
    Ok(product / table.x11)
}

/// Petersen form `X1+ * X+1 / X11`.
pub fn ds_estimate_margins(x1plus: f64, xplus1: f64, x11: f64) -> Result<f64> {
    if x11 <= 0.0 {
        return Err(Error::DegenerateTable("x11 must be positive".into()));
    }
    if x1plus < x11 || xplus1 < x11 {
        return Err(Error::InvalidMargins(format!(
            "margins ({x1plus}, {xplus1}) must both be >= x11 = {x11}"
        )));
    }
    Ok(x1plus * xplus1 / x11)
}

/// Cell-sum form `X(1) + X00`.
pub fn ds_estimate_cells(table: &DsTable) -> Result<f64> {
    if table.x11 <= 0.0 {
        return Err(Error::DegenerateTable("x11 must be positive".into()));
    }
    Ok(table.x_seen() + estimate_x00(table)?)
}

/// Log of the multinomial capture likelihood and its two factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub total: f64,
    /// Conditional multinomial over the observable cells.
    pub conditional: f64,
    /// Binomial in `t` with miss probability `p*`.
    pub binomial: f64,
}

fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

fn xlny(x: u64, y: f64) -> f64 {
    if x == 0 {
        0.0
    } else {
        x as f64 * y.ln()
    }
}

/// `ln C(t, seen) + seen ln(1-p*) + (t-seen) ln p*`, valid for p* in [0, 1].
fn ln_binomial_part(t: u64, seen: u64, p_star: f64) -> f64 {
    ln_factorial(t) - ln_factorial(seen) - ln_factorial(t - seen)
        + xlny(seen, 1.0 - p_star)
        + xlny(t - seen, p_star)
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("{name} = {p} must lie in (0, 1)")));
    }
    Ok(())
}

/// Log-likelihood of population size `t` and marginal capture probabilities
/// `pi1plus` (census) and `piplus1` (PES) for an integer table.
pub fn log_likelihood(t: u64, pi1plus: f64, piplus1: f64, table: &DsTable) -> Result<LogLikelihood> {
    check_probability("pi1plus", pi1plus)?;
    check_probability("piplus1", piplus1)?;
    let (x11, x10, x01) = table.integer_cells()?;
    let seen = x11 + x10 + x01;
    if t < seen {
        return Err(Error::Domain(format!("t = {t} is below the {seen} observed persons")));
    }

    let p11 = pi1plus * piplus1;
    let p10 = pi1plus * (1.0 - piplus1);
    let p01 = (1.0 - pi1plus) * piplus1;
    let p_star = (1.0 - pi1plus) * (1.0 - piplus1);

    let conditional = ln_factorial(seen) - ln_factorial(x11) - ln_factorial(x10) - ln_factorial(x01)
        + xlny(x11, p11)
        + xlny(x10, p10)
        + xlny(x01, p01)
        - xlny(seen, 1.0 - p_star);
    let binomial = ln_binomial_part(t, seen, p_star);

    let total = ln_factorial(t)
        - ln_factorial(t - seen)
        - ln_factorial(x11)
        - ln_factorial(x10)
        - ln_factorial(x01)
        + xlny(x11, p11)
        + xlny(x10, p10)
        + xlny(x01, p01)
        + xlny(t - seen, p_star);

    Ok(LogLikelihood { total, conditional, binomial })
}

/// Maximum-likelihood estimates from a grid search over integer population sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleEstimate {
    pub t_mle: u64,
    pub pi1plus: f64,
    pub piplus1: f64,
}

/// Closed-form capture probabilities and the integer `t` maximizing the
/// binomial factor over `[x_seen, t_max]`. Ties go to the larger `t`.
pub fn mle_by_search(table: &DsTable, t_max: u64) -> Result<MleEstimate> {
    let (x11, _, _) = table.integer_cells()?;
    if x11 == 0 {
        return Err(Error::DegenerateTable("x11 must be positive".into()));
    }
    let seen = table.x_seen() as u64;
    if t_max < seen {
        return Err(Error::Domain(format!("t_max = {t_max} is below x_seen = {seen}")));
    }
    let pi1plus = table.x11 / table.xplus1();
    let piplus1 = table.x11 / table.x1plus();
    let p_star = (1.0 - pi1plus) * (1.0 - piplus1);

    let mut best_t = seen;
    let mut best = ln_binomial_part(seen, seen, p_star);
    for t in seen + 1..=t_max {
        let ll = ln_binomial_part(t, seen, p_star);
        if ll >= best - 1e-12 * best.abs().max(1.0) {
            if ll > best {
                best = ll;
            }
            best_t = t;
        } else if t as f64 > seen as f64 / (1.0 - p_star) + 1.0 {
            // log L2 is unimodal in t; past the continuous maximizer it only decreases.
            break;
        }
    }
    Ok(MleEstimate { t_mle: best_t, pi1plus, piplus1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(x11: f64, x10: f64, x01: f64) -> DsTable {
        DsTable::new(x11, x10, x01).unwrap()
    }

    #[test]
    fn x00_examples() {
        assert_eq!(estimate_x00(&table(72.0, 18.0, 8.0)).unwrap(), 2.0);
        assert_eq!(estimate_x00(&table(5.0, 0.0, 7.0)).unwrap(), 0.0);
        assert_eq!(estimate_x00(&table(800.0, 100.0, 100.0)).unwrap(), 12.5);
    }

    #[test]
    fn x00_degenerate() {
        assert!(matches!(
            estimate_x00(&table(0.0, 3.0, 4.0)),
            Err(Error::DegenerateTable(_))
        ));
        assert_eq!(estimate_x00(&table(0.0, 0.0, 4.0)).unwrap(), 0.0);
    }

    #[test]
    fn margins_examples() {
        assert_eq!(ds_estimate_margins(90.0, 80.0, 72.0).unwrap(), 100.0);
        assert_eq!(ds_estimate_margins(37.0, 37.0, 37.0).unwrap(), 37.0);
        assert_eq!(ds_estimate_margins(900.0, 900.0, 800.0).unwrap(), 1012.5);
        assert!(matches!(ds_estimate_margins(9.0, 9.0, 0.0), Err(Error::DegenerateTable(_))));
        assert!(matches!(ds_estimate_margins(5.0, 9.0, 6.0), Err(Error::InvalidMargins(_))));
    }

    #[test]
    fn cells_examples() {
        assert_eq!(ds_estimate_cells(&table(72.0, 18.0, 8.0)).unwrap(), 100.0);
        assert_eq!(ds_estimate_cells(&table(41.0, 0.0, 0.0)).unwrap(), 41.0);
        assert_eq!(ds_estimate_cells(&table(800.0, 100.0, 100.0)).unwrap(), 1012.5);
        assert!(ds_estimate_cells(&table(0.0, 0.0, 3.0)).is_err());
    }

    #[test]
    fn negative_cells_rejected() {
        assert!(DsTable::new(1.0, -1.0, 0.0).is_err());
        assert!(DsTable::new(f64::NAN, 1.0, 0.0).is_err());
    }

    #[test]
    fn likelihood_factorizes() {
        let ll = log_likelihood(100, 0.9, 0.8, &table(72.0, 18.0, 8.0)).unwrap();
        assert!((ll.total - (ll.conditional + ll.binomial)).abs() < 1e-10);
    }

    #[test]
    fn binomial_factor_peaks_at_petersen_value() {
        let t = table(72.0, 18.0, 8.0);
        let at = |n| log_likelihood(n, 0.9, 0.8, &t).unwrap().binomial;
        assert!(at(100) >= at(98));
        assert!(at(100) >= at(150));
    }

    #[test]
    fn likelihood_boundary_is_finite() {
        let ll = log_likelihood(98, 0.3, 0.6, &table(72.0, 18.0, 8.0)).unwrap();
        assert!(ll.total.is_finite());
    }

    #[test]
    fn likelihood_domain_errors() {
        let t = table(72.0, 18.0, 8.0);
        assert!(matches!(log_likelihood(100, 1.0, 0.5, &t), Err(Error::Domain(_))));
        assert!(matches!(log_likelihood(100, 0.5, 0.0, &t), Err(Error::Domain(_))));
        assert!(matches!(log_likelihood(97, 0.5, 0.5, &t), Err(Error::Domain(_))));
        assert!(log_likelihood(100, 0.5, 0.5, &table(7.5, 1.0, 1.0)).is_err());
    }

    #[test]
    fn mle_examples() {
        let m = mle_by_search(&table(72.0, 18.0, 8.0), 500).unwrap();
        assert_eq!(m.t_mle, 100);
        assert_eq!(m.pi1plus, 0.9);
        assert_eq!(m.piplus1, 0.8);

        let m = mle_by_search(&table(64.0, 0.0, 0.0), 500).unwrap();
        assert_eq!((m.t_mle, m.pi1plus, m.piplus1), (64, 1.0, 1.0));

        let m = mle_by_search(&table(50.0, 50.0, 50.0), 1000).unwrap();
        assert_eq!((m.t_mle, m.pi1plus, m.piplus1), (200, 0.5, 0.5));
    }

    #[test]
    fn mle_rejects_bad_inputs() {
        assert!(matches!(mle_by_search(&table(0.0, 5.0, 5.0), 100), Err(Error::DegenerateTable(_))));
        assert!(mle_by_search(&table(5.0, 5.0, 5.0), 10).is_err());
    }
}
