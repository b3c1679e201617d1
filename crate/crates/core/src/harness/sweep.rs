//! Diffusion sweeps: equilibria along a decreasing sequence of rates,
//! compared against the matching limit profile.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::compare::{compare, Metrics};
use super::config::{ConfigError, Scenario};
use super::scenario::{equilibrium_of, fail};
use super::HarnessError;
use crate::asymptotics::{
    classify_di0_p1, limit_both_p1, limit_both_plt1, limit_di0_plt1, limit_ds0, LimitProfile, MarchOptions,
};
use crate::equilibrium::EquilibriumResult;
use crate::grid::DiscreteDomain;
use crate::spectral::compute_r0;

pub const SWEEP_HEADER: &str = "d_S,d_I,sigma,dist_S_sup,dist_I_sup,dist_S_L1,dist_I_L1,R0,gap,seconds";

/// Trend tolerance: each sup distance may exceed its predecessor by this
/// factor (plus [`TREND_ABS`]) before the sweep is flagged.
pub const TREND_SLACK: f64 = 1.1;
pub const TREND_ABS: f64 = 1e-7;

/// A node counts as infection-free when `I <= ZERO_INFECTION_REL * max I`.
pub const ZERO_INFECTION_REL: f64 = 1e-2;
/// Width of the collar around `{Lambda < h^(1/q)}` where disagreement is
/// tolerated.
pub const ZERO_SET_COLLAR: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "regime")]
pub enum SweepRegime {
    /// `d_I` takes the sweep values, `d_S` stays at its configured value.
    #[serde(rename = "dI")]
    DI,
    /// `d_S` takes the sweep values, `d_I` stays at its configured value.
    #[serde(rename = "dS")]
    DS,
    /// `d_I` takes the sweep values and `d_S = d_I / sigma`.
    #[serde(rename = "both")]
    Both { sigma: f64 },
}

impl SweepRegime {
    /// Parses `dI`, `dS` or `both`; the latter needs `sigma`.
    pub fn parse(tag: &str, sigma: Option<f64>) -> Result<Self, ConfigError> {
        match tag {
            "dI" | "di" | "dI_to_0" => Ok(SweepRegime::DI),
            "dS" | "ds" | "dS_to_0" => Ok(SweepRegime::DS),
            "both" | "both_to_0" => match sigma {
                Some(s) if s > 0.0 && s.is_finite() => Ok(SweepRegime::Both { sigma: s }),
                Some(s) => Err(ConfigError::Invalid(format!("sigma = {s}"))),
                None => Err(ConfigError::Invalid("regime 'both' needs --sigma".into())),
            },
            other => Err(ConfigError::Invalid(format!("regime '{other}' (expected dI, dS or both)"))),
        }
    }

    fn rates(self, sc: &Scenario, value: f64) -> (f64, f64) {
        match self {
            SweepRegime::DI => (sc.config.d_s, value),
            SweepRegime::DS => (value, sc.config.d_i),
            SweepRegime::Both { sigma } => (value / sigma, value),
        }
    }
}

impl FromStr for SweepRegime {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepRegime::parse(s, None)
    }
}

/// The limit profile a sweep in `regime` approaches. It does not depend on the
/// swept rate, so it is computed once from the configured coefficients.
pub fn limit_for(sc: &Scenario, regime: SweepRegime) -> Result<LimitProfile, HarnessError> {
    let c = &sc.coefficients;
    let opts = MarchOptions::default();
    let lp = match regime {
        SweepRegime::DI if c.p() == 1.0 => classify_di0_p1(c),
        SweepRegime::DI => limit_di0_plt1(c, &opts),
        SweepRegime::DS => limit_ds0(c, &opts),
        SweepRegime::Both { sigma } if c.p() == 1.0 => limit_both_p1(c, sigma),
        SweepRegime::Both { sigma } => limit_both_plt1(c, sigma),
    };
    lp.map_err(|e| fail(sc, "limit profile")(e.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub d_s: f64,
    pub d_i: f64,
    pub sigma: f64,
    pub dist_s_sup: Option<f64>,
    pub dist_i_sup: Option<f64>,
    pub dist_s_l1: Option<f64>,
    pub dist_i_l1: Option<f64>,
    pub r0: Option<f64>,
    pub gap: Option<f64>,
    pub endemic: Option<bool>,
    pub seconds: f64,
    pub error: Option<String>,
}

impl SweepRecord {
    /// The larger of the two sup distances, when the row succeeded.
    pub fn sup(&self) -> Option<f64> {
        Some(self.dist_s_sup?.max(self.dist_i_sup?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendCheck {
    pub slack: f64,
    pub passed: bool,
    /// Rows whose sup distance broke the trend, or that failed.
    pub violations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroSetReport {
    pub threshold: f64,
    pub collar: usize,
    pub predicted_zero: usize,
    pub computed_zero: usize,
    pub mismatches: usize,
    pub mismatches_outside_collar: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub regime: SweepRegime,
    pub records: Vec<SweepRecord>,
    pub trend: TrendCheck,
    /// R0 never decreases as `d_I` decreases (p = 1, `d_I`-varying regimes).
    pub r0_monotone: Option<bool>,
    pub zero_set: Option<ZeroSetReport>,
    pub note: &'static str,
    #[serde(skip)]
    pub last: Option<EquilibriumResult>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.records {
            writeln!(
                out,
                "{:e},{:e},{:e},{},{},{},{},{},{},{:e}",
                r.d_s,
                r.d_i,
                r.sigma,
                opt(r.dist_s_sup),
                opt(r.dist_i_sup),
                opt(r.dist_s_l1),
                opt(r.dist_i_l1),
                opt(r.r0),
                opt(r.gap),
                r.seconds
            )
            .expect("writing to a string");
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.trend.passed && self.r0_monotone.unwrap_or(true) && self.zero_set.as_ref().is_none_or(|z| z.mismatches_outside_collar == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub struct SweepOptions {
    /// Record wall time per row. Off by default so tables are reproducible.
    pub timing: bool,
}


fn check_values(values: &[f64]) -> Result<(), ConfigError> {
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(ConfigError::Invalid(format!("sweep value {v} (must be positive)")));
    }
    if values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ConfigError::Invalid("sweep values must be strictly decreasing".into()));
    }
    Ok(())
}

/// `d_{k+1} <= slack * d_k + TREND_ABS` for consecutive successful rows.
pub fn trend_check(records: &[SweepRecord], slack: f64) -> TrendCheck {
    let mut violations = Vec::new();
    let mut prev: Option<f64> = None;
    for (k, r) in records.iter().enumerate() {
        match r.sup() {
            None => violations.push(k),
            Some(d) => {
                if let Some(p) = prev {
                    if d > slack * p + TREND_ABS {
                        violations.push(k);
                    }
                }
                prev = Some(d);
            }
        }
    }
    TrendCheck {
        slack,
        passed: violations.is_empty(),
        violations,
    }
}

/// Compares the infection-free node set of `i` with the predicted
/// `{Lambda < h^(1/q)}` and counts disagreements away from the set's collar.
pub fn zero_set_agreement(sc: &Scenario, i: &[f64]) -> ZeroSetReport {
    let dom: &DiscreteDomain = &sc.domain;
    let c = &sc.coefficients;
    let ceiling = c.h_root();
    let predicted: Vec<bool> = c.lambda().values().iter().zip(ceiling.values()).map(|(l, t)| l < t).collect();
    let i_max = i.iter().copied().fold(0.0, f64::max);
    let threshold = ZERO_INFECTION_REL * i_max;
    let computed: Vec<bool> = i.iter().map(|&v| v <= threshold).collect();
    let collar = dom.mask_collar(&predicted, ZERO_SET_COLLAR);
    let mut mismatches = 0;
    let mut outside = 0;
    for k in 0..dom.len() {
        if predicted[k] != computed[k] {
            mismatches += 1;
            if !collar[k] {
                outside += 1;
            }
        }
    }
    ZeroSetReport {
        threshold,
        collar: ZERO_SET_COLLAR,
        predicted_zero: predicted.iter().filter(|&&b| b).count(),
        computed_zero: computed.iter().filter(|&&b| b).count(),
        mismatches,
        mismatches_outside_collar: outside,
    }
}

fn run_row(
    sc: &Scenario,
    regime: SweepRegime,
    value: f64,
    lp: &LimitProfile,
    opts: &SweepOptions,
) -> (SweepRecord, Option<EquilibriumResult>) {
    let start = Instant::now();
    let (d_s, d_i) = regime.rates(sc, value);
    let mut record = SweepRecord {
        d_s,
        d_i,
        sigma: d_i / d_s,
        dist_s_sup: None,
        dist_i_sup: None,
        dist_s_l1: None,
        dist_i_l1: None,
        r0: None,
        gap: None,
        endemic: None,
        seconds: 0.0,
        error: None,
    };
    let outcome = (|| -> Result<(Metrics, Option<f64>, EquilibriumResult), HarnessError> {
        let row = sc.with_diffusion(d_s, d_i)?;
        let ee = equilibrium_of(&row)?;
        let metrics = compare(&row.domain, &ee.s, &ee.i, lp).map_err(|e| fail(&row, "compare")(e.into()))?;
        let r0 = if row.coefficients.p() == 1.0 {
            Some(compute_r0(&row.coefficients).map_err(|e| fail(&row, "R0")(e.into()))?.eigenvalue)
        } else {
            None
        };
        Ok((metrics, r0, ee))
    })();
    let ee = match outcome {
        Ok((m, r0, ee)) => {
            record.dist_s_sup = Some(m.dist_s_sup);
            record.dist_i_sup = Some(m.dist_i_sup);
            record.dist_s_l1 = Some(m.dist_s_l1);
            record.dist_i_l1 = Some(m.dist_i_l1);
            record.r0 = r0;
            record.gap = Some(ee.conservation_gap);
            record.endemic = Some(ee.endemic);
            Some(ee)
        }
        Err(e) => {
            record.error = Some(e.to_string());
            None
        }
    };
    if opts.timing {
        record.seconds = start.elapsed().as_secs_f64();
    }
    (record, ee)
}

/// Runs one equilibrium per value (concurrently) and assembles the table in
/// input order.
pub fn sweep(sc: &Scenario, regime: SweepRegime, values: &[f64], opts: &SweepOptions) -> Result<SweepTable, HarnessError> {
    check_values(values)?;
    let lp = if values.is_empty() { None } else { Some(limit_for(sc, regime)?) };
    let rows: Vec<(SweepRecord, Option<EquilibriumResult>)> = match &lp {
        None => Vec::new(),
        Some(lp) => values.par_iter().map(|&v| run_row(sc, regime, v, lp, opts)).collect(),
    };
    let last = rows.last().and_then(|(_, ee)| ee.clone());
    let records: Vec<SweepRecord> = rows.into_iter().map(|(r, _)| r).collect();
    let trend = trend_check(&records, TREND_SLACK);
    let p1 = sc.coefficients.p() == 1.0;
    let r0_monotone = match regime {
        SweepRegime::DS => None,
        _ if !p1 => None,
        _ => Some(
            records
                .windows(2)
                .all(|w| match (w[0].r0, w[1].r0) {
                    (Some(a), Some(b)) => b >= a - 1e-9 * a.abs().max(1.0),
                    _ => true,
                }),
        ),
    };
    let zero_set = match (regime, &last) {
        (SweepRegime::Both { sigma }, Some(ee)) if p1 && sigma >= sc.coefficients.eta().max() => {
            Some(zero_set_agreement(sc, ee.i.values()))
        }
        _ => None,
    };
    Ok(SweepTable {
        regime,
        records,
        trend,
        r0_monotone,
        zero_set,
        note: super::scenario::DESK_SCALE_NOTE,
        last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(d: Option<f64>) -> SweepRecord {
        SweepRecord {
            d_s: 1.0,
            d_i: 1.0,
            sigma: 1.0,
            dist_s_sup: d,
            dist_i_sup: d.map(|x| x / 2.0),
            dist_s_l1: d,
            dist_i_l1: d,
            r0: None,
            gap: Some(0.0),
            endemic: Some(true),
            seconds: 0.0,
            error: None,
        }
    }

    #[test]
    fn trend_allows_slack() {
        let recs: Vec<_> = [1.0, 0.5, 0.54, 0.1].iter().map(|&d| record(Some(d))).collect();
        assert!(trend_check(&recs, TREND_SLACK).passed);
        let recs: Vec<_> = [1.0, 0.5, 0.6].iter().map(|&d| record(Some(d))).collect();
        assert_eq!(trend_check(&recs, TREND_SLACK).violations, vec![2]);
        let recs = vec![record(Some(1.0)), record(None)];
        assert!(!trend_check(&recs, TREND_SLACK).passed);
    }

    #[test]
    fn values_must_decrease() {
        assert!(check_values(&[]).is_ok());
        assert!(check_values(&[1e-1, 1e-2]).is_ok());
        assert!(check_values(&[1e-2, 1e-1]).is_err());
        assert!(check_values(&[1e-1, -1.0]).is_err());
    }

    #[test]
    fn regime_tags() {
        assert_eq!(SweepRegime::parse("dI", None).unwrap(), SweepRegime::DI);
        assert_eq!("dS".parse::<SweepRegime>().unwrap(), SweepRegime::DS);
        assert_eq!(SweepRegime::parse("both", Some(2.0)).unwrap(), SweepRegime::Both { sigma: 2.0 });
        assert!(SweepRegime::parse("both", None).is_err());
        assert!(SweepRegime::parse("sideways", None).is_err());
    }

    #[test]
    fn csv_header_and_blanks() {
        let mut r = record(Some(0.25));
        r.error = Some("boom".into());
        let t = SweepTable {
            regime: SweepRegime::DI,
            records: vec![r, record(None)],
            trend: trend_check(&[], TREND_SLACK),
            r0_monotone: None,
            zero_set: None,
            note: "",
            last: None,
        };
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SWEEP_HEADER);
        assert_eq!(lines[1], "1e0,1e0,1e0,2.5e-1,1.25e-1,2.5e-1,2.5e-1,,0e0,0e0");
        assert_eq!(lines[2], "1e0,1e0,1e0,,,,,,0e0,0e0");
    }
}
