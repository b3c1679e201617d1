//! Distances between a computed equilibrium and a predicted limit profile.

use serde::Serialize;

use crate::asymptotics::{LimitProfile, Side};
use crate::grid::{DiscreteDomain, GridError, ScalarField};

/// Cells between a predicted set's boundary and the nodes it is judged on.
pub const INTERIOR_CELLS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeViolation {
    pub name: &'static str,
    /// Largest amount by which the field crosses the bound (0 when it holds).
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub dist_s_sup: f64,
    pub dist_i_sup: f64,
    pub dist_s_l1: f64,
    pub dist_i_l1: f64,
    /// Max I over the interior of the predicted vanishing set, for
    /// classification profiles.
    pub vanishing_max_i: Option<f64>,
    pub vanishing_nodes: Option<usize>,
    pub envelopes: Vec<EnvelopeViolation>,
}

impl Metrics {
    /// The larger of the two sup distances.
    pub fn sup(&self) -> f64 {
        self.dist_s_sup.max(self.dist_i_sup)
    }
}

fn distances(dom: &DiscreteDomain, diff: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut sup = 0.0f64;
    let mut l1 = 0.0;
    for (d, w) in diff.zip(dom.cell_measures()) {
        sup = sup.max(d.abs());
        l1 += w * d.abs();
    }
    (sup, l1)
}

/// Compares fields `(s, i)` with a limit profile.
///
/// Profiles with limit fields give sup and L1 distances per component. A
/// classification profile (`d_I -> 0`, `p = 1`) has no S or I limit, so the S
/// distances measure how far S exceeds the ceiling `h^(1/q)` and the I
/// distances measure I on the interior of the vanishing set, both of which
/// tend to zero in the limit. Envelope-only profiles report zero distances
/// and their envelope violations.
pub fn compare(
    domain: &DiscreteDomain,
    s: &ScalarField,
    i: &ScalarField,
    lp: &LimitProfile,
) -> Result<Metrics, GridError> {
    s.check_same(i)?;
    if s.domain_id() != domain.id() {
        return Err(GridError::DomainMismatch);
    }
    let dom = lp
        .s
        .as_ref()
        .map(|f| f.domain_id())
        .or(lp.classification.as_ref().map(|c| c.dfe.domain_id()))
        .or(lp.envelopes.first().map(|e| e.field.domain_id()));
    if let Some(id) = dom {
        if id != s.domain_id() {
            return Err(GridError::DomainMismatch);
        }
    }
    let mut metrics = Metrics {
        dist_s_sup: 0.0,
        dist_i_sup: 0.0,
        dist_s_l1: 0.0,
        dist_i_l1: 0.0,
        vanishing_max_i: None,
        vanishing_nodes: None,
        envelopes: Vec::new(),
    };
    if let (Some(ls), Some(li)) = (&lp.s, &lp.i) {
        let (a, b) = distances(domain, s.values().iter().zip(ls.values()).map(|(x, y)| x - y));
        let (c, d) = distances(domain, i.values().iter().zip(li.values()).map(|(x, y)| x - y));
        metrics.dist_s_sup = a;
        metrics.dist_s_l1 = b;
        metrics.dist_i_sup = c;
        metrics.dist_i_l1 = d;
    }
    if let Some(cl) = &lp.classification {
        let (a, b) = distances(
            domain,
            s.values().iter().zip(cl.ceiling.values()).map(|(x, t)| (x - t).max(0.0)),
        );
        metrics.dist_s_sup = a;
        metrics.dist_s_l1 = b;
        let interior = domain.mask_interior(&cl.vanishing_set, INTERIOR_CELLS);
        let restricted = i.values().iter().zip(&interior).map(|(v, &inside)| if inside { *v } else { 0.0 });
        let (c, d) = distances(domain, restricted);
        metrics.dist_i_sup = c;
        metrics.dist_i_l1 = d;
        metrics.vanishing_max_i = Some(c);
        metrics.vanishing_nodes = Some(interior.iter().filter(|&&b| b).count());
    }
    for env in &lp.envelopes {
        let field = match env.component {
            crate::asymptotics::Component::S => s,
            crate::asymptotics::Component::I => i,
        };
        let violation = field
            .values()
            .iter()
            .zip(env.field.values())
            .map(|(v, b)| match env.side {
                Side::Lower => b - v,
                Side::Upper => v - b,
            })
            .fold(0.0, f64::max);
        metrics.envelopes.push(EnvelopeViolation {
            name: env.name,
            violation,
        });
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::{classify_di0_p1, limit_both_p1};
    use crate::dynamics::CoefficientSet;
    use crate::grid::{build_domain, DomainSpec};
    use std::sync::Arc;

    #[test]
    fn identical_fields_have_zero_distance() {
        let dom = Arc::new(build_domain(&DomainSpec::unit_square(6, 6)).unwrap());
        let c = CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let lp = limit_both_p1(&c, 1.0).unwrap();
        let m = compare(&dom, lp.s.as_ref().unwrap(), lp.i.as_ref().unwrap(), &lp).unwrap();
        assert_eq!(m.sup(), 0.0);
        assert_eq!((m.dist_s_l1, m.dist_i_l1), (0.0, 0.0));
        assert!(m.envelopes.iter().all(|e| e.violation <= 1e-12));

        let s = ScalarField::constant(&dom, 1.0);
        let i = ScalarField::constant(&dom, 2.5);
        let m = compare(&dom, &s, &i, &lp).unwrap();
        assert!((m.dist_i_sup - 0.5).abs() < 1e-15);
        assert!((m.dist_i_l1 - 0.5).abs() < 1e-12);

        let other = Arc::new(build_domain(&DomainSpec::unit_square(7, 7)).unwrap());
        let s = ScalarField::constant(&other, 1.0);
        assert!(compare(&other, &s, &s, &lp).is_err());
    }

    #[test]
    fn classification_metrics() {
        let dom = Arc::new(build_domain(&DomainSpec::unit_interval(41)).unwrap());
        let beta = ScalarField::from_fn(&dom, |x, _| 0.5 + 2.0 * x).unwrap();
        let one = ScalarField::constant(&dom, 1.0);
        let half = ScalarField::constant(&dom, 0.5);
        let c = CoefficientSet::new(dom.clone(), beta, half.clone(), half, one, 1.0, 0.01, 1.0, 1.0).unwrap();
        let lp = classify_di0_p1(&c).unwrap();
        let s = ScalarField::constant(&dom, 1.0);
        let i = ScalarField::from_fn(&dom, |x, _| if x < 0.2 { 0.3 } else { 0.0 }).unwrap();
        let m = compare(&dom, &s, &i, &lp).unwrap();
        // The vanishing set is x < 0.25 and its interior excludes the last two
        // cells before the boundary.
        assert_eq!(m.vanishing_max_i, Some(0.3));
        assert_eq!(m.vanishing_nodes, Some(8));
        assert!(m.dist_s_sup > 0.0);
    }
}
