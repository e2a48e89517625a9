//! Leader-follower economics: vehicle participation, server cost and the
//! data consumer's profit as a function of payment `c1`, sampling
//! frequency `f_d` and server count `s`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::privacy::{total_loss_eval, LossModel};
use crate::stats::{lognormal_cdf, lognormal_pdf};
use crate::utility::{eval_utility, UtilityModel};

/// How the sensitivity distribution turns into a participation fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipationModel {
    /// `V * F(r)`: fraction of vehicles whose sensitivity is below `r`.
    #[default]
    Cdf,
    /// `V * f(r)` with the log-normal density, clipped to `[0, V]`.
    PdfAsWritten,
}

/// How server cost enters the profit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerCostModel {
    /// One server's cost `c2 v f_d / s + c3`, subtracted once.
    #[default]
    PerServerAsWritten,
    /// The per-server cost times `s`.
    TotalTimesS,
}

impl ParticipationModel {
    pub const ALL: [Self; 2] = [Self::Cdf, Self::PdfAsWritten];
}

impl ServerCostModel {
    pub const ALL: [Self; 2] = [Self::PerServerAsWritten, Self::TotalTimesS];
}

impl fmt::Display for ParticipationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cdf => "cdf",
            Self::PdfAsWritten => "pdf_as_written",
        })
    }
}

impl fmt::Display for ServerCostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerServerAsWritten => "per_server_as_written",
            Self::TotalTimesS => "total_times_s",
        })
    }
}

/// Everything except the decision variables `(c1, f_d, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EconParams {
    /// Server computation cost per sample.
    pub c2: f64,
    /// Server upkeep cost.
    pub c3: f64,
    /// Registered vehicles `V`.
    pub vehicles: f64,
    /// Log-normal location of privacy sensitivity.
    pub mu: f64,
    /// Log-normal scale of privacy sensitivity.
    pub sigma: f64,
    pub participation: ParticipationModel,
    pub server_cost: ServerCostModel,
    pub loss: LossModel,
    pub utility: UtilityModel,
}

impl Default for EconParams {
    fn default() -> Self {
        Self {
            c2: 1e-6,
            c3: 1e-4,
            vehicles: 2928.0,
            mu: 0.0,
            sigma: 0.5,
            participation: ParticipationModel::default(),
            server_cost: ServerCostModel::default(),
            loss: LossModel::default(),
            utility: UtilityModel::default(),
        }
    }
}

impl EconParams {
    pub fn with_modes(self, participation: ParticipationModel, server_cost: ServerCostModel) -> Self {
        Self {
            participation,
            server_cost,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c2 >= 0.0 && self.c3 >= 0.0 && self.c2.is_finite() && self.c3.is_finite()) {
            return Err(Error::domain("server costs must be finite and non-negative"));
        }
        if !(self.vehicles >= 1.0 && self.vehicles.is_finite()) {
            return Err(Error::domain("vehicle count V must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite() && self.mu.is_finite()) {
            return Err(Error::domain("log-normal parameters need finite mu and sigma > 0"));
        }
        self.loss.validate()?;
        self.utility.validate()
    }
}

/// Individual privacy-sensitivity multiplier `e_i >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct PrivacySensitivity(f64);

impl PrivacySensitivity {
    pub fn new(e: f64) -> Result<Self> {
        if e >= 0.0 && e.is_finite() {
            Ok(Self(e))
        } else {
            Err(Error::domain(format!("privacy sensitivity {e} must be non-negative")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Net utility of a vehicle: `c1 f_d - e_i L`.
pub fn vehicle_utility(c1: f64, f_d: f64, e: PrivacySensitivity, loss: f64) -> f64 {
    c1 * f_d - e.0 * loss
}

/// Sensitivity at which a vehicle is indifferent to sharing.
pub fn participation_threshold(c1: f64, f_d: f64, loss: f64) -> f64 {
    c1 * f_d / loss
}

/// Expected participating vehicles, in `[0, V]`.
pub fn expected_participants(params: &EconParams, c1: f64, f_d: f64, s: f64) -> f64 {
    let loss = total_loss_eval(&params.loss, f_d, s).value;
    participants_at_ratio(params, participation_threshold(c1, f_d, loss))
}

fn participants_at_ratio(params: &EconParams, ratio: f64) -> f64 {
    let fraction = match params.participation {
        ParticipationModel::Cdf => lognormal_cdf(ratio, params.mu, params.sigma),
        ParticipationModel::PdfAsWritten => lognormal_pdf(ratio, params.mu, params.sigma),
    };
    (params.vehicles * fraction).clamp(0.0, params.vehicles)
}

/// Cost of one server: `c2 v f_d / s + c3`.
pub fn per_server_cost(params: &EconParams, c1: f64, f_d: f64, s: f64) -> f64 {
    server_cost_for(params, expected_participants(params, c1, f_d, s), f_d, s)
}

fn server_cost_for(params: &EconParams, v: f64, f_d: f64, s: f64) -> f64 {
    params.c2 * v * f_d / s + params.c3
}

/// Every intermediate of one profit evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfitBreakdown {
    pub c1: f64,
    pub f_d: f64,
    pub s: f64,
    pub loss: f64,
    pub loss_unclamped: f64,
    /// `c1 f_d / L`, the participation threshold.
    pub ratio: f64,
    pub participants: f64,
    pub utility: f64,
    /// Server term as subtracted from profit (depends on the cost model).
    pub server_cost: f64,
    pub payments: f64,
    pub profit: f64,
}

impl ProfitBreakdown {
    pub const CSV_HEADER: [&'static str; 7] = ["c1", "f_d", "s", "utility", "server_cost", "payments", "profit"];

    pub fn write_csv<W: Write>(rows: &[ProfitBreakdown], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in rows {
            w.serialize((r.c1, r.f_d, r.s, r.utility, r.server_cost, r.payments, r.profit))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn profit_breakdown(params: &EconParams, c1: f64, f_d: f64, s: f64) -> ProfitBreakdown {
    let loss = total_loss_eval(&params.loss, f_d, s);
    let ratio = participation_threshold(c1, f_d, loss.value);
    let v = participants_at_ratio(params, ratio);
    let utility = eval_utility(&params.utility, v, f_d);
    let one_server = server_cost_for(params, v, f_d, s);
    let server_cost = match params.server_cost {
        ServerCostModel::PerServerAsWritten => one_server,
        ServerCostModel::TotalTimesS => one_server * s,
    };
    let payments = c1 * v * f_d;
    ProfitBreakdown {
        c1,
        f_d,
        s,
        loss: loss.value,
        loss_unclamped: loss.unclamped,
        ratio,
        participants: v,
        utility,
        server_cost,
        payments,
        profit: utility - server_cost - payments,
    }
}

/// The data consumer's profit `U(v, f_d) - server cost - c1 v f_d`.
pub fn profit(params: &EconParams, c1: f64, f_d: f64, s: f64) -> f64 {
    profit_breakdown(params, c1, f_d, s).profit
}

/// Checks `c1 >= 0`, `f_d > 0`, `s >= 1`.
pub fn check_decision(c1: f64, f_d: f64, s: f64) -> Result<()> {
    if !(c1 >= 0.0 && c1.is_finite()) {
        return Err(Error::domain(format!("payment c1 = {c1} must be non-negative")));
    }
    if !(f_d > 0.0 && f_d.is_finite()) {
        return Err(Error::domain(format!("frequency f_d = {f_d} must be positive")));
    }
    if !(s >= 1.0 && s.is_finite()) {
        return Err(Error::domain(format!("server count s = {s} must be at least 1")));
    }
    Ok(())
}

/// Cost-guidance rules for choosing `c2` and `c3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GuidanceWarning {
    /// `c3` should be within an order of magnitude of `c1 V / s`.
    UpkeepVsPayment { c3: f64, payment_per_server: f64 },
    /// `c3` should stay below `c2 V / s`.
    UpkeepVsCompute { c3: f64, compute_per_server: f64 },
    /// `c2` should stay below `1 / V`.
    ComputeVsFleet { c2: f64, inverse_fleet: f64 },
}

impl fmt::Display for GuidanceWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UpkeepVsPayment { c3, payment_per_server } => write!(
                f,
                "c3 = {c3:e} is not within an order of magnitude of c1*V/s = {payment_per_server:e}"
            ),
            Self::UpkeepVsCompute { c3, compute_per_server } => {
                write!(f, "c3 = {c3:e} is not below c2*V/s = {compute_per_server:e}")
            }
            Self::ComputeVsFleet { c2, inverse_fleet } => {
                write!(f, "c2 = {c2:e} is not below 1/V = {inverse_fleet:e}")
            }
        }
    }
}

/// Advisory checks; never fails.
pub fn validate_params(params: &EconParams, c1: f64, s: f64) -> Vec<GuidanceWarning> {
    let mut warnings = Vec::new();
    let payment_per_server = c1 * params.vehicles / s;
    let ratio = params.c3 / payment_per_server;
    if !(ratio.is_finite() && (0.1..=10.0).contains(&ratio)) {
        warnings.push(GuidanceWarning::UpkeepVsPayment {
            c3: params.c3,
            payment_per_server,
        });
    }
    let compute_per_server = params.c2 * params.vehicles / s;
    if params.c3 >= compute_per_server {
        warnings.push(GuidanceWarning::UpkeepVsCompute {
            c3: params.c3,
            compute_per_server,
        });
    }
    let inverse_fleet = 1.0 / params.vehicles;
    if params.c2 >= inverse_fleet {
        warnings.push(GuidanceWarning::ComputeVsFleet {
            c2: params.c2,
            inverse_fleet,
        });
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: (f64, f64, f64) = (3.57e-6, 7.31, 15.12);

    #[test]
    fn vehicle_utility_examples() {
        let e = PrivacySensitivity::new(0.0).unwrap();
        assert_eq!(vehicle_utility(2.0, 3.0, e, 0.4), 6.0);
        let e = PrivacySensitivity::new(0.5).unwrap();
        assert!((vehicle_utility(1e-5, 10.0, e, 0.2) + 0.0999).abs() < 1e-15);
        let threshold = PrivacySensitivity::new(participation_threshold(1e-5, 10.0, 0.2)).unwrap();
        assert!(vehicle_utility(1e-5, 10.0, threshold, 0.2).abs() < 1e-18);
        assert!(PrivacySensitivity::new(-1.0).is_err());
    }

    #[test]
    fn participants_examples() {
        let p = EconParams::default();
        // r = 1 at the median: pick f_d, s with unclamped loss and c1 = L / f_d
        let (f_d, s) = (30.0, 5.0);
        let l = total_loss_eval(&p.loss, f_d, s).value;
        let v = expected_participants(&p, l / f_d, f_d, s);
        assert!((v - 1464.0).abs() < 2928.0 * 1.5e-7, "{v}");
        assert_eq!(expected_participants(&p, 0.0, 1.0, 1.0), 0.0);
        let b = profit_breakdown(&p, REFERENCE.0, REFERENCE.1, REFERENCE.2);
        assert!((b.ratio - 26_096.7).abs() < 1e-6);
        assert_eq!(b.participants, 2928.0);
    }

    #[test]
    fn pdf_mode_is_clipped() {
        let p = EconParams {
            vehicles: 10.0,
            sigma: 0.01,
            participation: ParticipationModel::PdfAsWritten,
            ..Default::default()
        };
        let l = total_loss_eval(&p.loss, 30.0, 5.0).value;
        assert_eq!(expected_participants(&p, l / 30.0, 30.0, 5.0), 10.0);
    }

    #[test]
    fn server_cost_examples() {
        let p = EconParams { c2: 0.0, ..Default::default() };
        assert_eq!(per_server_cost(&p, 1e-3, 10.0, 3.0), 1e-4);
        let p = EconParams::default();
        // mpmath: 0.00151558730158730159
        let c = per_server_cost(&p, REFERENCE.0, REFERENCE.1, REFERENCE.2);
        assert!((c - 0.001_515_587_301_587_301_6).abs() < 1e-15);
        let half = server_cost_for(&p, 2928.0, 7.31, 30.24) - p.c3;
        assert!((2.0 * half - (c - p.c3)).abs() < 1e-18);
    }

    #[test]
    fn profit_examples() {
        let p = EconParams::default();
        assert_eq!(profit(&p, 0.0, 7.31, 15.12), -1e-4);
        let b = profit_breakdown(&p, REFERENCE.0, REFERENCE.1, REFERENCE.2);
        // mpmath: 0.912073275098412698
        assert!((b.profit - 0.912_073_275_098_412_7).abs() < 1e-12);
        assert!((b.utility - b.server_cost - b.payments - b.profit).abs() <= 1e-12);
        let times_s = p.with_modes(ParticipationModel::Cdf, ServerCostModel::TotalTimesS);
        let bs = profit_breakdown(&times_s, REFERENCE.0, REFERENCE.1, REFERENCE.2);
        assert!((bs.server_cost - b.server_cost * 15.12).abs() < 1e-15);
        // saturated region: only payments depend on c1
        assert!(profit(&p, 4e-6, 7.31, 15.12) < profit(&p, 3.57e-6, 7.31, 15.12));
    }

    #[test]
    fn guidance_examples() {
        let p = EconParams::default();
        let w = validate_params(&p, 1e-6, 15.0);
        assert!(!w.iter().any(|w| matches!(w, GuidanceWarning::UpkeepVsCompute { .. })));
        assert!(!w.iter().any(|w| matches!(w, GuidanceWarning::ComputeVsFleet { .. })));
        let w = validate_params(&EconParams { c2: 1.0, ..p }, 1e-6, 15.0);
        assert!(w.iter().any(|w| matches!(w, GuidanceWarning::ComputeVsFleet { .. })));
        let w = validate_params(&EconParams { c3: 0.0, ..p }, 1e-6, 15.0);
        assert!(w.iter().any(|w| matches!(w, GuidanceWarning::UpkeepVsPayment { .. })));
        // the reference point satisfies all three
        assert!(validate_params(&p, REFERENCE.0, REFERENCE.2).is_empty());
    }

    #[test]
    fn params_json_round_trip() {
        let p = EconParams::default().with_modes(ParticipationModel::PdfAsWritten, ServerCostModel::TotalTimesS);
        let text = serde_json::to_string_pretty(&p).unwrap();
        assert!(text.contains("pdf_as_written") && text.contains("total_times_s"));
        assert_eq!(serde_json::from_str::<EconParams>(&text).unwrap(), p);
        let partial: EconParams = serde_json::from_str(r#"{"c2": 2e-6}"#).unwrap();
        assert_eq!(partial.c2, 2e-6);
        assert_eq!(partial.vehicles, 2928.0);
    }

    #[test]
    fn validation() {
        assert!(EconParams::default().validate().is_ok());
        assert!(EconParams { sigma: 0.0, ..Default::default() }.validate().is_err());
        assert!(EconParams { vehicles: 0.0, ..Default::default() }.validate().is_err());
        assert!(EconParams { c2: -1.0, ..Default::default() }.validate().is_err());
        assert!(check_decision(0.0, 1.0, 1.0).is_ok());
        assert!(check_decision(0.0, 0.0, 1.0).is_err());
        assert!(check_decision(0.0, 1.0, 0.5).is_err());
    }
}
