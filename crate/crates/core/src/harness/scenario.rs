//! Full scenario runs: equilibrium, spectral quantities, audits and masks.

use serde::Serialize;

use super::config::Scenario;
use super::output::{delta_tag, Bundle};
use super::{ComputeError, HarnessError};
use crate::asymptotics::{bounds_audit, classify_di0_p1, coincidence_mask, indicator_mask, mu_density};
use crate::dynamics::{run_observed, Snapshot};
use crate::equilibrium::{diagnostics, find_ee, EquilibriumResult};
use crate::grid::{DomainSpec, ScalarField};
use crate::spectral::{compute_lambda0, compute_r0};

pub const DESK_SCALE_NOTE: &str =
    "desk-scale grid; diffusion rates are kept above the resolved scale (down to 1e-4), so small-d profiles are resolution-limited";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainReport {
    pub kind: &'static str,
    pub nodes: usize,
    pub mesh_size: f64,
    pub measure: f64,
}

impl DomainReport {
    pub fn of(sc: &Scenario) -> Self {
        let kind = match sc.config.domain {
            DomainSpec::Interval { .. } => "interval",
            DomainSpec::Rectangle { .. } => "rectangle",
            DomainSpec::Disk { .. } => "disk",
        };
        DomainReport {
            kind,
            nodes: sc.domain.len(),
            mesh_size: sc.domain.mesh_size(),
            measure: sc.domain.total_measure(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Parameters {
    pub d_s: f64,
    pub d_i: f64,
    pub p: f64,
    pub q: f64,
}

impl Parameters {
    pub fn of(sc: &Scenario) -> Self {
        let c = &sc.coefficients;
        Parameters {
            d_s: c.d_s(),
            d_i: c.d_i(),
            p: c.p(),
            q: c.q(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extrema {
    pub s_min: f64,
    pub s_max: f64,
    pub i_min: f64,
    pub i_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarchReport {
    pub steps: usize,
    pub rejected: usize,
    pub t_end: f64,
    pub final_rate: f64,
    pub newton_applied: bool,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: &'static str,
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub tol: f64,
    pub c0: Option<f64>,
    pub all_pass: bool,
    pub checks: Vec<CheckReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub endemic_nodes: usize,
    pub vanishing_nodes: usize,
    /// No high-risk node at this `d_S`: no endemic equilibrium for small `d_I`.
    pub predicts_extinction_for_small_d_i: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskReport {
    pub delta: f64,
    pub file: String,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub schema_version: u32,
    pub domain: DomainReport,
    pub parameters: Parameters,
    pub outcome: &'static str,
    pub r0: Option<f64>,
    pub lambda0: f64,
    pub residual_s: f64,
    pub residual_i: f64,
    pub conservation_gap: f64,
    pub infected_mass: f64,
    pub extrema: Extrema,
    pub march: MarchReport,
    pub sign_checks: Vec<CheckReport>,
    pub bounds_audit: Option<AuditReport>,
    pub classification: Option<ClassificationReport>,
    pub indicator_masks: Vec<MaskReport>,
    pub coincidence_masks: Vec<MaskReport>,
    pub mu_density: Option<String>,
    pub notes: Vec<&'static str>,
}

/// Result of [`run_scenario`]: the equilibrium, its summary and the files.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub equilibrium: EquilibriumResult,
    pub summary: ScenarioSummary,
    pub bundle: Bundle,
}

pub(crate) fn context(sc: &Scenario, stage: &str) -> String {
    let name = if sc.config.name.is_empty() { "unnamed" } else { &sc.config.name };
    format!("scenario '{name}' ({stage})")
}

pub(crate) fn fail(sc: &Scenario, stage: &str) -> impl Fn(ComputeError) -> HarnessError {
    let ctx = context(sc, stage);
    move |source| HarnessError::Compute {
        context: ctx.clone(),
        source,
    }
}

pub fn equilibrium_of(sc: &Scenario) -> Result<EquilibriumResult, HarnessError> {
    find_ee(&sc.coefficients, sc.initial.clone(), &sc.config.ee_options()).map_err(|e| fail(sc, "equilibrium")(e.into()))
}

/// Computes the endemic (or disease-free) equilibrium and everything reported
/// about it. Nothing is written; see [`Bundle::write`].
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioOutput, HarnessError> {
    let c = &sc.coefficients;
    let dom = &sc.domain;
    let ee = equilibrium_of(sc)?;
    let r0 = if c.p() == 1.0 {
        Some(compute_r0(c).map_err(|e| fail(sc, "R0")(e.into()))?.eigenvalue)
    } else {
        None
    };
    let lambda0 = compute_lambda0(c).map_err(|e| fail(sc, "lambda0")(e.into()))?.eigenvalue;
    let diag = diagnostics(c, &ee).map_err(|e| fail(sc, "diagnostics")(e.into()))?;
    let bounds = if ee.endemic {
        let rep = bounds_audit(c, &ee).map_err(|e| fail(sc, "bounds audit")(e.into()))?;
        Some(AuditReport {
            tol: rep.tol,
            c0: rep.c0,
            all_pass: rep.all_pass(),
            checks: rep
                .checks
                .iter()
                .map(|k| CheckReport {
                    name: k.name,
                    margin: k.margin,
                    passed: k.passed,
                })
                .collect(),
        })
    } else {
        None
    };
    let classification = if c.p() == 1.0 {
        let lp = classify_di0_p1(c).map_err(|e| fail(sc, "classification")(e.into()))?;
        lp.classification.map(|cl| ClassificationReport {
            endemic_nodes: cl.endemic_set.iter().filter(|&&b| b).count(),
            vanishing_nodes: cl.vanishing_set.iter().filter(|&&b| b).count(),
            predicts_extinction_for_small_d_i: cl.predicts_extinction(),
        })
    } else {
        None
    };

    let mut bundle = Bundle::new();
    bundle.add_field("S.csv", dom, ee.s.values());
    bundle.add_field("I.csv", dom, ee.i.values());
    let mass: Vec<f64> = ee.i.values().iter().zip(dom.cell_measures()).map(|(v, w)| v * w).collect();
    bundle.add_field("infected_mass.csv", dom, &mass);

    let ceiling = c.h_root();
    let mut indicator_masks = Vec::new();
    let mut coincidence_masks = Vec::new();
    for &delta in &sc.config.toggles.mask_deltas {
        let tag = delta_tag(delta);
        let ind = indicator_mask(&ee.s, &ceiling, delta).map_err(|e| fail(sc, "masks")(e.into()))?;
        let file = format!("indicator_{tag}.csv");
        bundle.add_mask(file.clone(), dom, &ind);
        indicator_masks.push(MaskReport {
            delta,
            file,
            nodes: ind.iter().filter(|&&b| b).count(),
        });
        let co = coincidence_mask(&ee.s, &ceiling, delta).map_err(|e| fail(sc, "masks")(e.into()))?;
        let file = format!("coincidence_{tag}.csv");
        bundle.add_mask(file.clone(), dom, &co);
        coincidence_masks.push(MaskReport {
            delta,
            file,
            nodes: co.iter().filter(|&&b| b).count(),
        });
    }
    let mu = if sc.formulas.coefficients_twice_differentiable() {
        bundle.add_field("mu_density.csv", dom, mu_density(c).values());
        Some("mu_density.csv".to_string())
    } else {
        None
    };

    let summary = ScenarioSummary {
        name: sc.config.name.clone(),
        schema_version: sc.config.schema_version,
        domain: DomainReport::of(sc),
        parameters: Parameters::of(sc),
        outcome: if ee.endemic { "endemic" } else { "disease_free" },
        r0,
        lambda0,
        residual_s: ee.residual_s,
        residual_i: ee.residual_i,
        conservation_gap: ee.conservation_gap,
        infected_mass: mass.iter().sum(),
        extrema: extrema(&ee.s, &ee.i),
        march: MarchReport {
            steps: ee.method.time_steps,
            rejected: ee.method.rejected_steps,
            t_end: ee.method.t_end,
            final_rate: ee.method.final_rate,
            newton_applied: ee.method.newton_applied,
            newton_iterations: ee.method.newton_iterations,
        },
        sign_checks: diag
            .sign_checks
            .iter()
            .map(|k| CheckReport {
                name: k.name,
                margin: k.margin,
                passed: k.passed,
            })
            .collect(),
        bounds_audit: bounds,
        classification,
        indicator_masks,
        coincidence_masks,
        mu_density: mu,
        notes: vec![DESK_SCALE_NOTE],
    };
    bundle.add_json("summary.json", &summary);
    Ok(ScenarioOutput {
        equilibrium: ee,
        summary,
        bundle,
    })
}

fn extrema(s: &ScalarField, i: &ScalarField) -> Extrema {
    Extrema {
        s_min: s.min(),
        s_max: s.max(),
        i_min: i.min(),
        i_max: i.max(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotReport {
    pub step: usize,
    pub t: f64,
    pub mass: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub min_i: f64,
    pub max_i: f64,
}

impl From<&Snapshot> for SnapshotReport {
    fn from(s: &Snapshot) -> Self {
        SnapshotReport {
            step: s.step,
            t: s.t,
            mass: s.mass,
            min_s: s.min_s,
            max_s: s.max_s,
            min_i: s.min_i,
            max_i: s.max_i,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub name: String,
    pub domain: DomainReport,
    pub parameters: Parameters,
    pub t_end: f64,
    pub steps: usize,
    pub rejected: usize,
    pub reached_steady: bool,
    pub final_rate: f64,
    pub max_mass_defect: f64,
    pub extrema: Extrema,
    pub snapshots: Vec<SnapshotReport>,
}

/// Time-marches the configured initial state under the configured stopping
/// rule and returns the final fields plus a trajectory summary.
pub fn simulate(sc: &Scenario) -> Result<(SimulationSummary, Bundle), HarnessError> {
    let (state, summary) = run_observed(sc.initial.clone(), &sc.coefficients, &sc.config.run_config(), |_, _| {})
        .map_err(|e| fail(sc, "simulation")(e.into()))?;
    let report = SimulationSummary {
        name: sc.config.name.clone(),
        domain: DomainReport::of(sc),
        parameters: Parameters::of(sc),
        t_end: state.t,
        steps: summary.steps,
        rejected: summary.rejected,
        reached_steady: summary.reached_steady,
        final_rate: summary.rate,
        max_mass_defect: summary.max_mass_defect,
        extrema: extrema(&state.s, &state.i),
        snapshots: summary.snapshots.iter().map(SnapshotReport::from).collect(),
    };
    let mut bundle = Bundle::new();
    bundle.add_field("S.csv", &sc.domain, state.s.values());
    bundle.add_field("I.csv", &sc.domain, state.i.values());
    bundle.add_json("trajectory.json", &report);
    Ok((report, bundle))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub name: &'static str,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileSummary {
    pub name: String,
    pub regime: &'static str,
    pub method: &'static str,
    pub sigma: Option<f64>,
    pub parameters: Parameters,
    pub steps: usize,
    pub residual: f64,
    pub fields: Vec<String>,
    pub classification: Option<ClassificationReport>,
    pub envelopes: Vec<EnvelopeReport>,
}

/// Limit profile of `regime` as CSV fields, masks and a JSON summary.
pub fn asymptotics_report(
    sc: &Scenario,
    regime: super::SweepRegime,
) -> Result<(ProfileSummary, crate::asymptotics::LimitProfile, Bundle), HarnessError> {
    let lp = super::sweep::limit_for(sc, regime)?;
    let dom = &sc.domain;
    let mut bundle = Bundle::new();
    let mut fields = Vec::new();
    if let (Some(s), Some(i)) = (&lp.s, &lp.i) {
        bundle.add_field("S_limit.csv", dom, s.values());
        bundle.add_field("I_limit.csv", dom, i.values());
        fields.extend(["S_limit.csv".to_string(), "I_limit.csv".to_string()]);
    }
    let classification = lp.classification.as_ref().map(|cl| {
        bundle.add_field("dfe.csv", dom, cl.dfe.values());
        bundle.add_field("ceiling.csv", dom, cl.ceiling.values());
        bundle.add_mask("endemic_set.csv", dom, &cl.endemic_set);
        bundle.add_mask("vanishing_set.csv", dom, &cl.vanishing_set);
        fields.extend(["dfe.csv", "ceiling.csv", "endemic_set.csv", "vanishing_set.csv"].map(String::from));
        ClassificationReport {
            endemic_nodes: cl.endemic_set.iter().filter(|&&b| b).count(),
            vanishing_nodes: cl.vanishing_set.iter().filter(|&&b| b).count(),
            predicts_extinction_for_small_d_i: cl.predicts_extinction(),
        }
    });
    let envelopes = lp
        .envelopes
        .iter()
        .enumerate()
        .map(|(k, env)| {
            let file = format!("envelope_{k}.csv");
            bundle.add_field(file.clone(), dom, env.field.values());
            EnvelopeReport { name: env.name, file }
        })
        .collect();
    let summary = ProfileSummary {
        name: sc.config.name.clone(),
        regime: lp.regime.tag(),
        method: lp.method,
        sigma: lp.sigma,
        parameters: Parameters::of(sc),
        steps: lp.steps,
        residual: lp.residual,
        fields,
        classification,
        envelopes,
    };
    bundle.add_json("profile.json", &summary);
    Ok((summary, lp, bundle))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSummary {
    pub name: String,
    pub parameters: Parameters,
    pub outcome: &'static str,
    pub conservation_gap: f64,
    pub residual_s: f64,
    pub residual_i: f64,
    pub sign_checks: Vec<CheckReport>,
    pub bounds_audit: Option<AuditReport>,
    pub all_pass: bool,
}

/// Equilibrium diagnostics and the a priori bounds, without writing fields.
pub fn audit_report(sc: &Scenario) -> Result<AuditSummary, HarnessError> {
    let out = run_scenario(sc)?;
    let s = out.summary;
    let all_pass = s.sign_checks.iter().all(|k| k.passed) && s.bounds_audit.as_ref().is_none_or(|b| b.all_pass);
    Ok(AuditSummary {
        name: s.name,
        parameters: s.parameters,
        outcome: s.outcome,
        conservation_gap: s.conservation_gap,
        residual_s: s.residual_s,
        residual_i: s.residual_i,
        sign_checks: s.sign_checks,
        bounds_audit: s.bounds_audit,
        all_pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSummary {
    pub name: String,
    pub regime: &'static str,
    pub sigma: Option<f64>,
    pub parameters: Parameters,
    pub outcome: &'static str,
    pub metrics: super::Metrics,
}

/// The configured equilibrium measured against the limit profile of `regime`.
pub fn compare_report(sc: &Scenario, regime: super::SweepRegime) -> Result<CompareSummary, HarnessError> {
    let lp = super::sweep::limit_for(sc, regime)?;
    let ee = equilibrium_of(sc)?;
    let metrics = super::compare(&sc.domain, &ee.s, &ee.i, &lp).map_err(|e| fail(sc, "compare")(e.into()))?;
    Ok(CompareSummary {
        name: sc.config.name.clone(),
        regime: lp.regime.tag(),
        sigma: lp.sigma,
        parameters: Parameters::of(sc),
        outcome: if ee.endemic { "endemic" } else { "disease_free" },
        metrics,
    })
}
