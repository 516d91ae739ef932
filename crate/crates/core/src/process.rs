//! Closed-form nosing-process formulas and limit checks.
//!
//! Covers the quantities a process engineer derives before any simulation:
//! degree of deformation, diameter ratio, forming-zone length, buckling and
//! fold limits, and the four wall-thickness predictors (Haarscheidt,
//! Ebertshäuser, Albert, Storoschew). Everything here is a pure function of
//! millimeter/degree inputs; the synthetic generator reuses the Storoschew
//! law ring-wise as its thickening oracle.
//!
//! Angles are degrees at every interface and converted to radians only for
//! trigonometric evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Derived process quantities for one nosing configuration. All lengths mm,
/// angles degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessParams {
    pub outer_diameter_initial: f64,
    pub outer_diameter_final: f64,
    pub die_reduction_diameter: f64,
    pub wall_thickness_initial: f64,
    /// Final wall thickness per the Storoschew law.
    pub wall_thickness_final: f64,
    pub half_angle_deg: f64,
    pub friction: f64,
    pub deformation_degree: f64,
    pub diameter_ratio: f64,
    pub retraction_ratio: f64,
    pub forming_zone_length: f64,
    pub dimensional_deviation: f64,
}

impl ProcessParams {
    /// Derive every quantity from the independent inputs. The die reduction
    /// diameter is taken equal to the final outer diameter (no springback in
    /// the kinematic model), so `dimensional_deviation` is zero here.
    pub fn derive(
        d_a0: f64,
        d_a1: f64,
        s0: f64,
        half_angle_deg: f64,
        friction: f64,
    ) -> Result<Self> {
        if friction < 0.0 || !friction.is_finite() {
            return Err(Error::invalid(format!("friction must be >= 0, got {friction}")));
        }
        let phi = deformation_degree(d_a0, d_a1)?;
        let d_i0 = d_a0 - 2.0 * s0;
        if d_i0 <= 0.0 {
            return Err(Error::invalid(format!(
                "wall thickness {s0} mm leaves no bore in a {d_a0} mm tube"
            )));
        }
        let q = diameter_ratio(d_i0, d_a0)?;
        let l_f = forming_zone_length(d_a0 / 2.0, d_a1 / 2.0, half_angle_deg)?;
        Ok(ProcessParams {
            outer_diameter_initial: d_a0,
            outer_diameter_final: d_a1,
            die_reduction_diameter: d_a1,
            wall_thickness_initial: s0,
            wall_thickness_final: predict_storoschew(s0, d_a0, d_a1)?,
            half_angle_deg,
            friction,
            deformation_degree: phi,
            diameter_ratio: q,
            retraction_ratio: retraction_ratio(d_a0, d_a1)?,
            forming_zone_length: l_f,
            dimensional_deviation: dimensional_deviation(d_a1, d_a1),
        })
    }
}

/// Material constants of the workpiece alloy, in MPa where dimensional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialCard {
    pub young_modulus: f64,
    /// Strength coefficient `C` of the Hollomon power law.
    pub strength_coefficient: f64,
    /// Strain-hardening exponent `n` of the Hollomon power law.
    pub hardening_exponent: f64,
    pub tensile_strength: f64,
}

impl MaterialCard {
    /// CuZn39Pb2 (CW612N), the copper-zinc-lead alloy of the reference
    /// simulations.
    pub fn cuzn39pb2() -> Self {
        MaterialCard {
            young_modulus: 105_000.0,
            strength_coefficient: 794.965,
            hardening_exponent: 0.334,
            tensile_strength: 395.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.young_modulus <= 0.0 || self.strength_coefficient <= 0.0 {
            return Err(Error::invalid("moduli must be positive"));
        }
        if !(0.0..1.0).contains(&self.hardening_exponent) {
            return Err(Error::invalid(format!(
                "hardening exponent must lie in (0, 1), got {}",
                self.hardening_exponent
            )));
        }
        Ok(())
    }
}

/// Wall classification by diameter ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WallClass {
    Thin,
    Thick,
}

/// Fold/upsetting risk regime from the diameter-to-thickness ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldRisk {
    /// d/s above 60: prone to longitudinal folding.
    LongitudinalFold,
    /// 4 < d/s < 10: thick-walled, least fold-prone.
    ThickWall,
    Intermediate,
}

/// Degree of deformation `phi = 2 ln(d_a0 / d_a1)`.
pub fn deformation_degree(d_a0: f64, d_a1: f64) -> Result<f64> {
    if !(d_a0 > 0.0 && d_a1 > 0.0) {
        return Err(Error::invalid(format!("diameters must be positive ({d_a0}, {d_a1})")));
    }
    if d_a1 > d_a0 {
        return Err(Error::invalid(format!(
            "final diameter {d_a1} exceeds initial {d_a0}; nosing only reduces"
        )));
    }
    Ok(2.0 * (d_a0 / d_a1).ln())
}

/// Diameter ratio `Q = d_i0 / d_a0`.
pub fn diameter_ratio(d_i0: f64, d_a0: f64) -> Result<f64> {
    if !(0.0 < d_i0 && d_i0 < d_a0) {
        return Err(Error::invalid(format!(
            "inner diameter must satisfy 0 < d_i0 < d_a0, got ({d_i0}, {d_a0})"
        )));
    }
    Ok(d_i0 / d_a0)
}

/// Thin-walled iff Q strictly exceeds 0.8; the boundary counts as thick.
pub fn classify_wall(q: f64) -> WallClass {
    if q > 0.8 {
        WallClass::Thin
    } else {
        WallClass::Thick
    }
}

/// Absolute and relative (percent) wall-thickness change.
pub fn thickness_changes(s0: f64, s1: f64) -> Result<(f64, f64)> {
    if s0 <= 0.0 {
        return Err(Error::invalid(format!("initial thickness must be positive, got {s0}")));
    }
    let ds = s1 - s0;
    Ok((ds, 100.0 * ds / s0))
}

/// Axial length of the conical forming zone, `(r_ex0 - r_red) / tan(alpha)`.
pub fn forming_zone_length(r_ex0: f64, r_red: f64, half_angle_deg: f64) -> Result<f64> {
    check_half_angle(half_angle_deg)?;
    if r_ex0 < r_red {
        return Err(Error::invalid(format!(
            "entry radius {r_ex0} below reduction radius {r_red}"
        )));
    }
    Ok((r_ex0 - r_red) / half_angle_deg.to_radians().tan())
}

/// Slenderness ratio `lambda = l_K / sqrt(I / A_o)`.
pub fn slenderness(buckling_length: f64, second_moment: f64, cross_section: f64) -> Result<f64> {
    if buckling_length <= 0.0 || second_moment <= 0.0 || cross_section <= 0.0 {
        return Err(Error::invalid("slenderness inputs must be positive"));
    }
    Ok(buckling_length / (second_moment / cross_section).sqrt())
}

/// Euler critical buckling stress `sigma_k = pi^2 E / lambda^2`.
pub fn euler_buckling_stress(young_modulus: f64, lambda: f64) -> Result<f64> {
    if young_modulus <= 0.0 || lambda <= 0.0 {
        return Err(Error::invalid("Euler inputs must be positive"));
    }
    Ok(std::f64::consts::PI.powi(2) * young_modulus / (lambda * lambda))
}

/// Hollomon flow stress `k_f = C * phi^n`.
pub fn hollomon_flow_stress(strength_coefficient: f64, hardening_exponent: f64, phi: f64) -> Result<f64> {
    if phi < 0.0 {
        return Err(Error::domain(format!("strain must be non-negative, got {phi}")));
    }
    Ok(strength_coefficient * phi.powf(hardening_exponent))
}

/// Tresca flow criterion: failure imminent once the principal stress
/// difference reaches the initial flow stress.
pub fn tresca_buckle_check(sigma_max: f64, sigma_min: f64, k_f0: f64) -> bool {
    sigma_max - sigma_min >= k_f0
}

/// Fold-risk regime from d_a0 / s0.
pub fn fold_risk(d_a0: f64, s0: f64) -> Result<FoldRisk> {
    if s0 <= 0.0 {
        return Err(Error::invalid(format!("thickness must be positive, got {s0}")));
    }
    let ratio = d_a0 / s0;
    Ok(if ratio > 60.0 {
        FoldRisk::LongitudinalFold
    } else if ratio > 4.0 && ratio < 10.0 {
        FoldRisk::ThickWall
    } else {
        FoldRisk::Intermediate
    })
}

/// Haarscheidt's empirical thickness increase
/// `ds = sqrt(d_a0/d_a1 - 1) * ln((d_a0/s0)/0.6)^2.5 * 0.2 * sqrt(sin 2a)`.
pub fn predict_haarscheidt(d_a0: f64, d_a1: f64, s0: f64, half_angle_deg: f64) -> Result<f64> {
    if !(d_a0 >= d_a1 && d_a1 > 0.0) {
        return Err(Error::domain(format!(
            "requires d_a0 >= d_a1 > 0, got ({d_a0}, {d_a1})"
        )));
    }
    let double_angle = 2.0 * half_angle_deg;
    if !(0.0 < double_angle && double_angle < 180.0) {
        return Err(Error::domain(format!("2*alpha must lie in (0, 180) deg, got {double_angle}")));
    }
    let slimness = d_a0 / s0;
    if slimness <= 0.6 {
        return Err(Error::domain(format!("d_a0/s0 must exceed 0.6, got {slimness}")));
    }
    Ok((d_a0 / d_a1 - 1.0).sqrt()
        * (slimness / 0.6).ln().powf(2.5)
        * 0.2
        * double_angle.to_radians().sin().sqrt())
}

/// Retraction ratio `beta_e = d_a0 / d_a1`.
pub fn retraction_ratio(d_a0: f64, d_a1: f64) -> Result<f64> {
    if d_a1 <= 0.0 {
        return Err(Error::invalid(format!("final diameter must be positive, got {d_a1}")));
    }
    Ok(d_a0 / d_a1)
}

/// Ebertshäuser's thickness increase `ds = 62 / (d_a0/s0) * (beta_e - 1)`.
pub fn predict_ebertshauser(d_a0: f64, d_a1: f64, s0: f64) -> Result<f64> {
    if s0 <= 0.0 {
        return Err(Error::invalid(format!("thickness must be positive, got {s0}")));
    }
    let beta_e = retraction_ratio(d_a0, d_a1)?;
    Ok(62.0 / (d_a0 / s0) * (beta_e - 1.0))
}

/// Albert's fitted final thickness. Raw affine output, returned even when
/// outside the fitted range; callers range-check. Alpha is per-degree.
pub fn predict_albert(phi: f64, s0: f64, d_a0: f64, half_angle_deg: f64) -> f64 {
    -0.741 + 2.734 * phi + 1.216 * s0 - 2.394e-3 * d_a0 + 1.336e-2 * half_angle_deg
}

/// Storoschew/Popov final thickness `s1 = s0 * sqrt(d_a0 / d_a1)`.
pub fn predict_storoschew(s0: f64, d_a0: f64, d_a1: f64) -> Result<f64> {
    if d_a1 <= 0.0 {
        return Err(Error::invalid(format!("final diameter must be positive, got {d_a1}")));
    }
    Ok(s0 * (d_a0 / d_a1).sqrt())
}

/// Dimensional deviation `dR = d_a1 - d_red` (signed; negative = undershoot).
pub fn dimensional_deviation(d_a1: f64, d_red: f64) -> f64 {
    d_a1 - d_red
}

pub(crate) fn check_half_angle(half_angle_deg: f64) -> Result<()> {
    if !(0.0 < half_angle_deg && half_angle_deg < 90.0) {
        return Err(Error::invalid(format!(
            "half angle must lie in (0, 90) deg, got {half_angle_deg}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Frozen from a 40-digit mpmath evaluation of each formula; asserted to
    // relative 1e-9.
    const PHI_30_27: f64 = 0.2107210313156526;
    const DA1_PHI_03: f64 = 25.821239292751734;
    const HAARSCHEIDT_30_27: f64 = 0.8977121812535555;
    const EBERTSHAUSER_30_27: f64 = 0.34444444444444444;
    const EBERTSHAUSER_S3: f64 = 0.6888888888888889;
    const ALBERT_PHI_30_27: f64 = 1.7208912996169943;
    const ALBERT_PHI_03: f64 = 1.96498;
    const STOROSCHEW_30_27: f64 = 1.5811388300841898;
    const STOROSCHEW_PHI_03: f64 = 3.2336524526538946;
    const EULER_LAMBDA_100: f64 = 103.63084621143827;
    const EULER_LAMBDA_200: f64 = 25.907711552859567;
    const HOLLOMON_03: f64 = 531.7487864429994;
    const FORMING_ZONE_10DEG: f64 = 8.506922729426565;

    fn assert_rel(actual: f64, expected: f64) {
        let denom = expected.abs().max(1e-300);
        assert!(
            (actual - expected).abs() / denom < 1e-9,
            "got {actual}, expected {expected}"
        );
    }

    #[test]
    fn deformation_degree_matches_oracle() {
        assert_eq!(deformation_degree(30.0, 30.0).unwrap(), 0.0);
        assert_rel(deformation_degree(30.0, 27.0).unwrap(), PHI_30_27);
        // Inverting phi = 0.3 recovers the final diameter.
        let d_a1 = 30.0 * (-0.3f64 / 2.0).exp();
        assert_rel(d_a1, DA1_PHI_03);
        assert_rel(deformation_degree(30.0, d_a1).unwrap(), 0.3);
    }

    #[test]
    fn deformation_degree_rejects_bad_diameters() {
        assert!(deformation_degree(0.0, 0.0).is_err());
        assert!(deformation_degree(-30.0, -27.0).is_err());
        assert!(deformation_degree(27.0, 30.0).is_err());
    }

    #[test]
    fn diameter_ratio_and_classification() {
        let q = diameter_ratio(27.0, 30.0).unwrap();
        assert_rel(q, 0.9);
        assert_eq!(classify_wall(q), WallClass::Thin);
        // Q = 0.8 is the boundary and counts as thick.
        assert_eq!(classify_wall(diameter_ratio(24.0, 30.0).unwrap()), WallClass::Thick);
        assert_eq!(classify_wall(diameter_ratio(15.0, 30.0).unwrap()), WallClass::Thick);
        assert!(diameter_ratio(30.0, 27.0).is_err());
    }

    #[test]
    fn thickness_change_arithmetic() {
        let (ds, ds_rel) = thickness_changes(1.5, 1.56).unwrap();
        assert_rel(ds, 0.06);
        assert_rel(ds_rel, 4.0);
        assert_eq!(thickness_changes(2.0, 2.0).unwrap(), (0.0, 0.0));
        let (ds, ds_rel) = thickness_changes(2.0, 1.9).unwrap();
        assert_rel(ds, -0.1);
        assert_rel(ds_rel, -5.0);
    }

    #[test]
    fn forming_zone_length_matches_oracle() {
        assert_rel(forming_zone_length(15.0, 13.5, 10.0).unwrap(), FORMING_ZONE_10DEG);
        assert_eq!(forming_zone_length(15.0, 15.0, 10.0).unwrap(), 0.0);
        assert_rel(forming_zone_length(15.0, 13.5, 45.0).unwrap(), 1.5);
        assert!(forming_zone_length(15.0, 13.5, 90.0).is_err());
        assert!(forming_zone_length(15.0, 13.5, 0.0).is_err());
    }

    #[test]
    fn euler_stress_matches_oracle() {
        assert_rel(euler_buckling_stress(105_000.0, 100.0).unwrap(), EULER_LAMBDA_100);
        assert_rel(euler_buckling_stress(105_000.0, 200.0).unwrap(), EULER_LAMBDA_200);
        assert_rel(slenderness(100.0, 100.0, 4.0).unwrap(), 20.0);
        assert!(euler_buckling_stress(105_000.0, 0.0).is_err());
        assert!(slenderness(100.0, -1.0, 4.0).is_err());
    }

    #[test]
    fn hollomon_matches_oracle() {
        let card = MaterialCard::cuzn39pb2();
        card.validate().unwrap();
        assert_rel(
            hollomon_flow_stress(card.strength_coefficient, card.hardening_exponent, 1.0).unwrap(),
            794.965,
        );
        assert_rel(
            hollomon_flow_stress(card.strength_coefficient, card.hardening_exponent, 0.3).unwrap(),
            HOLLOMON_03,
        );
        assert_eq!(
            hollomon_flow_stress(card.strength_coefficient, card.hardening_exponent, 0.0).unwrap(),
            0.0
        );
        assert!(hollomon_flow_stress(794.965, 0.334, -0.1).is_err());
    }

    #[test]
    fn tresca_threshold() {
        assert!(!tresca_buckle_check(400.0, 0.0, 485.0));
        assert!(tresca_buckle_check(485.0, 0.0, 485.0));
        assert!(tresca_buckle_check(951.0, 0.0, 485.0));
    }

    #[test]
    fn fold_risk_regimes() {
        assert_eq!(fold_risk(30.0, 0.4).unwrap(), FoldRisk::LongitudinalFold);
        assert_eq!(fold_risk(30.0, 5.0).unwrap(), FoldRisk::ThickWall);
        assert_eq!(fold_risk(30.0, 1.5).unwrap(), FoldRisk::Intermediate);
        assert!(fold_risk(30.0, 0.0).is_err());
    }

    #[test]
    fn haarscheidt_matches_oracle() {
        assert_rel(predict_haarscheidt(30.0, 27.0, 1.5, 10.0).unwrap(), HAARSCHEIDT_30_27);
        assert_eq!(predict_haarscheidt(30.0, 30.0, 1.5, 10.0).unwrap(), 0.0);
        // Opening the die further increases thickening (sin 40 > sin 20).
        let narrow = predict_haarscheidt(30.0, 27.0, 1.5, 10.0).unwrap();
        let wide = predict_haarscheidt(30.0, 27.0, 1.5, 20.0).unwrap();
        assert!(wide > narrow);
        assert!(predict_haarscheidt(27.0, 30.0, 1.5, 10.0).is_err());
        assert!(predict_haarscheidt(30.0, 27.0, 1.5, 90.0).is_err());
    }

    #[test]
    fn ebertshauser_matches_oracle() {
        assert_rel(retraction_ratio(30.0, 27.0).unwrap(), 30.0 / 27.0);
        assert_rel(predict_ebertshauser(30.0, 27.0, 1.5).unwrap(), EBERTSHAUSER_30_27);
        assert_eq!(predict_ebertshauser(30.0, 30.0, 1.5).unwrap(), 0.0);
        assert_rel(predict_ebertshauser(30.0, 27.0, 3.0).unwrap(), EBERTSHAUSER_S3);
    }

    #[test]
    fn albert_matches_oracle() {
        assert_rel(predict_albert(PHI_30_27, 1.5, 30.0, 10.0), ALBERT_PHI_30_27);
        assert_rel(predict_albert(0.3, 1.5, 30.0, 10.0), ALBERT_PHI_03);
        // Intercept only; non-physical outputs are returned raw.
        assert_rel(predict_albert(0.0, 0.0, 0.0, 0.0), -0.741);
    }

    #[test]
    fn storoschew_matches_oracle() {
        assert_eq!(predict_storoschew(1.5, 30.0, 30.0).unwrap(), 1.5);
        assert_rel(predict_storoschew(1.5, 30.0, 27.0).unwrap(), STOROSCHEW_30_27);
        assert_rel(
            predict_storoschew(3.0, 30.0, 30.0 * (-0.15f64).exp()).unwrap(),
            STOROSCHEW_PHI_03,
        );
    }

    #[test]
    fn dimensional_deviation_is_signed() {
        assert_rel(dimensional_deviation(27.3, 27.0), 0.3);
        assert_eq!(dimensional_deviation(27.0, 27.0), 0.0);
        assert_rel(dimensional_deviation(26.8, 27.0), -0.2);
    }

    #[test]
    fn derive_populates_consistent_params() {
        let p = ProcessParams::derive(30.0, 27.0, 1.5, 10.0, 0.05).unwrap();
        assert_rel(p.deformation_degree, PHI_30_27);
        assert_rel(p.diameter_ratio, 0.9);
        assert_rel(p.wall_thickness_final, STOROSCHEW_30_27);
        assert_eq!(p.dimensional_deviation, 0.0);
        assert!(ProcessParams::derive(30.0, 27.0, 15.0, 10.0, 0.05).is_err());
        assert!(ProcessParams::derive(30.0, 27.0, 1.5, 10.0, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn phi_identity_and_monotone(d in 1.0f64..500.0, shrink in 0.01f64..0.9, shrink2 in 0.01f64..0.9) {
            prop_assert_eq!(deformation_degree(d, d).unwrap(), 0.0);
            let (lo, hi) = if shrink < shrink2 { (shrink, shrink2) } else { (shrink2, shrink) };
            prop_assume!(lo < hi);
            // Smaller final diameter, larger phi.
            let phi_hi = deformation_degree(d, d * (1.0 - hi)).unwrap();
            let phi_lo = deformation_degree(d, d * (1.0 - lo)).unwrap();
            prop_assert!(phi_hi > phi_lo);
        }

        #[test]
        fn storoschew_thickens(s0 in 0.1f64..20.0, d_a0 in 10.0f64..200.0, shrink in 1e-6f64..0.5) {
            let d_a1 = d_a0 * (1.0 - shrink);
            prop_assert!(predict_storoschew(s0, d_a0, d_a1).unwrap() > s0);
        }

        #[test]
        fn haarscheidt_monotone_in_angle(
            alpha_lo in 1.0f64..44.0,
            bump in 0.1f64..1.0,
            shrink in 0.01f64..0.4,
        ) {
            let alpha_hi = (alpha_lo + bump).min(44.9);
            let d_a1 = 30.0 * (1.0 - shrink);
            let lo = predict_haarscheidt(30.0, d_a1, 1.5, alpha_lo).unwrap();
            let hi = predict_haarscheidt(30.0, d_a1, 1.5, alpha_hi).unwrap();
            prop_assert!(hi > lo);
        }

        #[test]
        fn ebertshauser_linear_in_s0(s0 in 0.1f64..10.0, scale in 1.5f64..4.0) {
            let base = predict_ebertshauser(30.0, 27.0, s0).unwrap();
            let scaled = predict_ebertshauser(30.0, 27.0, s0 * scale).unwrap();
            prop_assert!((scaled - base * scale).abs() <= 1e-12 * scaled.abs());
        }

        #[test]
        fn predictors_agree_on_zero(d in 5.0f64..100.0, s0 in 0.5f64..2.0, alpha in 1.0f64..44.0) {
            prop_assert_eq!(predict_haarscheidt(d, d, s0, alpha).unwrap(), 0.0);
            prop_assert_eq!(predict_ebertshauser(d, d, s0).unwrap(), 0.0);
            prop_assert_eq!(predict_storoschew(s0, d, d).unwrap(), s0);
        }

        #[test]
        fn hollomon_at_unit_strain_is_c(c in 1.0f64..2000.0, n in 0.01f64..0.99) {
            prop_assert_eq!(hollomon_flow_stress(c, n, 1.0).unwrap(), c);
        }
    }
}
