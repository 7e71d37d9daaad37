//! Measurement math: stiffness regression, twist-bend ratios, nesting
//! efficiency and bend-angle efficiency curves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Variant;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CharacterizationError {
    #[error("need at least two distinct abscissae")]
    DegenerateAbscissae,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("bending stiffness must be positive, got {0}")]
    NonPositiveBend(f64),
    #[error("radii must satisfy 0 <= r_free <= r_total, r_total > 0 (got {r_free}, {r_total})")]
    InvalidRadii { r_free: f64, r_total: f64 },
    #[error("bend angle {angle} deg outside [{lo}, {hi}] for {kind:?}")]
    OutOfRange { angle: f64, lo: f64, hi: f64, kind: CouplingKind },
    #[error("malformed sample file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StiffnessMode {
    Twist,
    Bend,
    Extension,
}

impl std::str::FromStr for StiffnessMode {
    type Err = CharacterizationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "twist" => Ok(StiffnessMode::Twist),
            "bend" => Ok(StiffnessMode::Bend),
            "extension" => Ok(StiffnessMode::Extension),
            other => Err(CharacterizationError::Parse(format!("unknown mode {other:?}"))),
        }
    }
}

/// Fitted load-deflection record. Rotations are rad and moments N·mm for
/// twist/bend; displacements are mm and forces N for extension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiffnessRecord {
    pub mode: StiffnessMode,
    pub samples: Vec<(f64, f64)>,
    pub fitted_stiffness: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares with a fitted intercept; the slope is the stiffness.
pub fn fit_stiffness(mode: StiffnessMode, samples: &[(f64, f64)]) -> Result<StiffnessRecord, CharacterizationError> {
    if let Some(i) = samples.iter().position(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(CharacterizationError::NonFinite(i));
    }
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return Err(CharacterizationError::DegenerateAbscissae);
    }
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CharacterizationError::DegenerateAbscissae);
    }
    let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = samples.iter().map(|s| (s.1 - my).powi(2)).sum();
    let ss_res: f64 = samples.iter().map(|s| (s.1 - intercept - slope * s.0).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(StiffnessRecord { mode, samples: samples.to_vec(), fitted_stiffness: slope, intercept, r_squared })
}

/// `GJ/EI` expressed through the fitted stiffnesses.
pub fn twist_bend_ratio(k_twist: f64, k_bend: f64) -> Result<f64, CharacterizationError> {
    if !(k_bend > 0.0) {
        return Err(CharacterizationError::NonPositiveBend(k_bend));
    }
    Ok(k_twist / k_bend)
}

/// Parses `angle_or_disp,load` CSV text with a header row.
pub fn parse_samples(text: &str) -> Result<Vec<(f64, f64)>, CharacterizationError> {
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r')).filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| CharacterizationError::Parse("empty input".into()))?;
    if header.split(',').count() != 2 || header.split(',').any(|h| h.trim().parse::<f64>().is_ok()) {
        return Err(CharacterizationError::Parse(format!("expected a two-column header, got {header:?}")));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let mut it = l.split(',');
            let mut field = || {
                it.next()
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| CharacterizationError::Parse(format!("row {}: {l:?}", i + 1)))
            };
            let x = field()?;
            let y = field()?;
            Ok((x, y))
        })
        .collect()
}

/// Digitised moment-rotation traces bundled with the crate. Approximate:
/// regenerated to reproduce the published ratios, not raw instrument output.
pub mod fixtures {
    pub const EQUATORIAL_TWIST: &str = include_str!("../data/equatorial_twist.csv");
    pub const EQUATORIAL_BEND: &str = include_str!("../data/equatorial_bend.csv");
    pub const TRUSS_TWIST: &str = include_str!("../data/truss_twist.csv");
    pub const TRUSS_BEND: &str = include_str!("../data/truss_bend.csv");
}

/// Twist-bend ratio of a variant computed from the bundled fixtures.
pub fn fixture_ratio(variant: Variant) -> Result<f64, CharacterizationError> {
    let (t, b) = match variant {
        Variant::Equatorial => (fixtures::EQUATORIAL_TWIST, fixtures::EQUATORIAL_BEND),
        Variant::Truss => (fixtures::TRUSS_TWIST, fixtures::TRUSS_BEND),
    };
    let kt = fit_stiffness(StiffnessMode::Twist, &parse_samples(t)?)?;
    let kb = fit_stiffness(StiffnessMode::Bend, &parse_samples(b)?)?;
    twist_bend_ratio(kt.fitted_stiffness, kb.fitted_stiffness)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NestShape {
    Cylinder,
    Sphere,
}

/// Unoccupied fraction of a hollow cylinder or sphere.
pub fn nesting_efficiency(shape: NestShape, r_free: f64, r_total: f64) -> Result<f64, CharacterizationError> {
    if !(r_total > 0.0 && r_free >= 0.0 && r_free <= r_total && r_total.is_finite()) {
        return Err(CharacterizationError::InvalidRadii { r_free, r_total });
    }
    let f = r_free / r_total;
    Ok(match shape {
        NestShape::Cylinder => f * f,
        NestShape::Sphere => f * f * f,
    })
}

/// Cross-sectional radii taken from the CAD models, mm.
pub mod cad {
    /// Truss cell shell: 56 mm mold, 1.4 mm of link and fastener stack.
    pub const TRUNC_R_TOTAL: f64 = 28.0;
    pub const TRUNC_R_FREE: f64 = 26.6;
    /// Rubber bellows: 32 mm outer diameter, 18 mm bore.
    pub const BELLOWS_R_TOTAL: f64 = 16.0;
    pub const BELLOWS_R_FREE: f64 = 9.0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    Trunc,
    SteelBellows,
    RubberBellows,
}

/// Energy efficiency against bend angle (deg), linear between anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCurve {
    pub kind: CouplingKind,
    pub anchors: Vec<(f64, f64)>,
}

impl EfficiencyCurve {
    pub fn bundled(kind: CouplingKind) -> Self {
        let anchors = match kind {
            CouplingKind::Trunc => vec![(10.0, 0.965), (45.0, 0.857)],
            CouplingKind::SteelBellows => vec![(10.0, 0.988)],
            CouplingKind::RubberBellows => vec![(10.0, 0.975), (45.0, 0.942)],
        };
        EfficiencyCurve { kind, anchors }
    }
}

/// Interpolated efficiency. Angles outside the anchors are refused.
pub fn efficiency_at(curve: &EfficiencyCurve, bend_angle: f64) -> Result<f64, CharacterizationError> {
    let (lo, hi) = match (curve.anchors.first(), curve.anchors.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(CharacterizationError::Parse("curve has no anchors".into())),
    };
    let out = || CharacterizationError::OutOfRange { angle: bend_angle, lo, hi, kind: curve.kind };
    if !(bend_angle >= lo && bend_angle <= hi) {
        return Err(out());
    }
    for &(a, eta) in &curve.anchors {
        if a == bend_angle {
            return Ok(eta);
        }
    }
    for w in curve.anchors.windows(2) {
        let ((a0, e0), (a1, e1)) = (w[0], w[1]);
        if bend_angle < a1 {
            return Ok(e0 + (e1 - e0) * (bend_angle - a0) / (a1 - a0));
        }
    }
    Err(out())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_curves_are_well_formed() {
        for kind in [CouplingKind::Trunc, CouplingKind::SteelBellows, CouplingKind::RubberBellows] {
            let c = EfficiencyCurve::bundled(kind);
            assert!(c.anchors.windows(2).all(|w| w[1].0 > w[0].0));
            assert!(c.anchors.iter().all(|a| a.1 > 0.0 && a.1 <= 1.0));
        }
    }

    #[test]
    fn header_is_required() {
        assert!(parse_samples("0.1,2\n0.2,3\n").is_err());
    }
}
