//! Signatures of compact orientable orbisurfaces and the invariants that
//! follow from them: Euler characteristic, area, Weyl asymptote and the
//! elementary isospectrality obstructions.

use std::f64::consts::PI;
use std::fmt;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rational = Ratio<i64>;

/// Genus of the underlying surface plus the cone-point orders.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub genus: u32,
    #[serde(rename = "cones")]
    cone_orders: Vec<u32>,
}

impl Signature {
    /// Sorts the cone orders; each must be at least 2.
    pub fn new(genus: u32, mut cone_orders: Vec<u32>) -> Result<Self> {
        if let Some(&m) = cone_orders.iter().find(|&&m| m < 2) {
            return Err(Error::InvalidInput(format!("cone order {m} < 2")));
        }
        cone_orders.sort_unstable();
        Ok(Signature { genus, cone_orders })
    }

    pub fn surface(genus: u32) -> Self {
        Signature {
            genus,
            cone_orders: Vec::new(),
        }
    }

    pub fn cone_orders(&self) -> &[u32] {
        &self.cone_orders
    }

    pub fn has_cones(&self) -> bool {
        !self.cone_orders.is_empty()
    }

    /// Re-validates after deserialization.
    pub fn validated(self) -> Result<Self> {
        Signature::new(self.genus, self.cone_orders)
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(g={}, {:?})", self.genus, self.cone_orders)
    }
}

/// `χ = 2 - 2g - Σ (1 - 1/m_j)`, exactly.
pub fn euler_characteristic(sig: &Signature) -> Rational {
    let mut chi = Rational::from_integer(2 - 2 * sig.genus as i64);
    for &m in &sig.cone_orders {
        chi -= Rational::new(m as i64 - 1, m as i64);
    }
    chi
}

/// `-2πχ`; fails unless `χ < 0`.
pub fn hyperbolic_area(sig: &Signature) -> Result<f64> {
    let chi = euler_characteristic(sig);
    if chi >= Rational::zero() {
        return Err(Error::NotHyperbolic(format!(
            "signature {sig} has Euler characteristic {chi} >= 0"
        )));
    }
    Ok(-2.0 * PI * chi.to_f64().unwrap())
}

/// Leading Weyl term `area · λ / 4π` of the eigenvalue counting function.
pub fn weyl_count_asymptote(sig: &Signature, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda = {lambda} must be >= 0")));
    }
    Ok(hyperbolic_area(sig)? * lambda / (4.0 * PI))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObstructionRule {
    WeylAreaMismatch,
    ConeVsManifold,
    OneConePoint,
    GenusConeCount,
}

impl ObstructionRule {
    pub fn name(&self) -> &'static str {
        match self {
            ObstructionRule::WeylAreaMismatch => "WeylAreaMismatch",
            ObstructionRule::ConeVsManifold => "ConeVsManifold",
            ObstructionRule::OneConePoint => "OneConePoint",
            ObstructionRule::GenusConeCount => "GenusConeCount",
        }
    }
}

/// `NoObstructionFound` only means none of the implemented rules applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObstructionVerdict {
    Obstructed(ObstructionRule),
    NoObstructionFound,
}

impl ObstructionVerdict {
    pub fn rule(&self) -> Option<ObstructionRule> {
        match self {
            ObstructionVerdict::Obstructed(r) => Some(*r),
            ObstructionVerdict::NoObstructionFound => None,
        }
    }
}

impl Serialize for ObstructionVerdict {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("ObstructionVerdict", 2)?;
        st.serialize_field("obstructed", &self.rule().is_some())?;
        st.serialize_field("rule", &self.rule().map(|r| r.name()))?;
        st.end()
    }
}

/// Order in which the rules are tried; the first that fires is reported.
pub const RULE_ORDER: [ObstructionRule; 4] = [
    ObstructionRule::ConeVsManifold,
    ObstructionRule::OneConePoint,
    ObstructionRule::GenusConeCount,
    ObstructionRule::WeylAreaMismatch,
];

/// Decides whether one of the elementary obstructions rules out
/// isospectrality of two hyperbolic orbisurfaces.
pub fn obstruction_check(a: &Signature, b: &Signature) -> Result<ObstructionVerdict> {
    hyperbolic_area(a)?;
    hyperbolic_area(b)?;
    for rule in RULE_ORDER {
        if rule_fires(rule, a, b) {
            return Ok(ObstructionVerdict::Obstructed(rule));
        }
    }
    Ok(ObstructionVerdict::NoObstructionFound)
}

/// Whether a single rule applies, independent of the others.
pub fn rule_fires(rule: ObstructionRule, a: &Signature, b: &Signature) -> bool {
    match rule {
        ObstructionRule::WeylAreaMismatch => euler_characteristic(a) != euler_characteristic(b),
        ObstructionRule::ConeVsManifold => a.has_cones() != b.has_cones(),
        ObstructionRule::OneConePoint => one_cone_point(a, b) || one_cone_point(b, a),
        ObstructionRule::GenusConeCount => {
            if a.genus == b.genus {
                genus_cone_count(a, b) || genus_cone_count(b, a)
            } else if a.genus < b.genus {
                genus_cone_count(a, b)
            } else {
                genus_cone_count(b, a)
            }
        }
    }
}

// `o` has genus g >= 1 and a single cone point; `other` has the same genus
// and a different cone multiset.
fn one_cone_point(o: &Signature, other: &Signature) -> bool {
    o.genus >= 1
        && o.genus == other.genus
        && o.cone_orders.len() == 1
        && other.cone_orders != o.cone_orders
}

// genus(low) <= genus(high); k, l cone counts; h = 2(g_low - g_high).
// The contradiction needs k >= 1 (a positive sum of unit fractions) and
// l >= 1 (the partner must carry a cone point).
fn genus_cone_count(low: &Signature, high: &Signature) -> bool {
    let k = low.cone_orders.len() as i64;
    let l = high.cone_orders.len() as i64;
    let h = 2 * (low.genus as i64 - high.genus as i64);
    k >= 1 && l >= 1 && l >= 2 * (k + h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(g: u32, c: &[u32]) -> Signature {
        Signature::new(g, c.to_vec()).unwrap()
    }

    #[test]
    fn euler_characteristic_examples() {
        assert_eq!(euler_characteristic(&sig(2, &[])), Rational::from_integer(-2));
        assert_eq!(euler_characteristic(&sig(0, &[3])), Rational::new(4, 3));
        assert_eq!(euler_characteristic(&sig(0, &[2, 3, 7])), Rational::new(-1, 42));
    }

    #[test]
    fn area_examples() {
        assert!((hyperbolic_area(&sig(2, &[])).unwrap() - 4.0 * PI).abs() < 1e-14);
        assert!((hyperbolic_area(&sig(0, &[2, 3, 7])).unwrap() - PI / 21.0).abs() < 1e-15);
        assert!(matches!(hyperbolic_area(&sig(0, &[3])), Err(Error::NotHyperbolic(_))));
        assert!(hyperbolic_area(&sig(1, &[])).is_err());
    }

    #[test]
    fn weyl_examples() {
        assert_eq!(weyl_count_asymptote(&sig(2, &[]), 0.0).unwrap(), 0.0);
        assert!((weyl_count_asymptote(&sig(2, &[]), 4.0 * PI).unwrap() - 4.0 * PI).abs() < 1e-12);
        assert!((weyl_count_asymptote(&sig(0, &[2, 3, 7]), 42.0).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn obstruction_examples() {
        let v = obstruction_check(&sig(1, &[5]), &sig(1, &[2, 2])).unwrap();
        assert_eq!(v, ObstructionVerdict::Obstructed(ObstructionRule::OneConePoint));
        let v = obstruction_check(&sig(2, &[]), &sig(1, &[2, 2, 2, 2])).unwrap();
        assert_eq!(v, ObstructionVerdict::Obstructed(ObstructionRule::ConeVsManifold));
        let v = obstruction_check(&sig(1, &[7]), &sig(1, &[7])).unwrap();
        assert_eq!(v, ObstructionVerdict::NoObstructionFound);
        assert!(obstruction_check(&sig(0, &[3]), &sig(2, &[])).is_err());
    }

    #[test]
    fn identical_surfaces_are_not_obstructed() {
        let v = obstruction_check(&sig(3, &[]), &sig(3, &[])).unwrap();
        assert_eq!(v, ObstructionVerdict::NoObstructionFound);
    }

    #[test]
    fn verdict_json() {
        let v = ObstructionVerdict::Obstructed(ObstructionRule::OneConePoint);
        assert_eq!(
            serde_json::to_string(&v).unwrap(),
            r#"{"obstructed":true,"rule":"OneConePoint"}"#
        );
        assert_eq!(
            serde_json::to_string(&ObstructionVerdict::NoObstructionFound).unwrap(),
            r#"{"obstructed":false,"rule":null}"#
        );
        let s: Signature = serde_json::from_str(r#"{"genus":0,"cones":[7,2,3]}"#).unwrap();
        assert_eq!(s.validated().unwrap(), sig(0, &[2, 3, 7]));
    }

    #[test]
    fn rejects_order_one_cone() {
        assert!(Signature::new(1, vec![1]).is_err());
    }

    fn hyperbolic_sig() -> impl Strategy<Value = Signature> {
        (0u32..3, proptest::collection::vec(2u32..10, 0..5)).prop_filter_map("not hyperbolic", |(g, c)| {
            let s = Signature::new(g, c).ok()?;
            hyperbolic_area(&s).ok().map(|_| s)
        })
    }

    proptest! {
        #[test]
        fn chi_denominator_divides_lcm(s in hyperbolic_sig()) {
            let l = s.cone_orders().iter().fold(1i64, |acc, &m| num_integer::lcm(acc, m as i64));
            prop_assert_eq!(l % euler_characteristic(&s).denom(), 0);
        }

        #[test]
        fn area_increases_with_cone_order(s in hyperbolic_sig(), idx in 0usize..4) {
            prop_assume!(s.has_cones());
            let i = idx % s.cone_orders().len();
            let mut bigger = s.cone_orders().to_vec();
            bigger[i] += 1;
            let t = Signature::new(s.genus, bigger).unwrap();
            let a0 = hyperbolic_area(&s).unwrap();
            let a1 = hyperbolic_area(&t).unwrap();
            prop_assert!(a0 > 0.0 && a1 > a0);
        }

        #[test]
        fn obstruction_is_symmetric(a in hyperbolic_sig(), b in hyperbolic_sig()) {
            prop_assert_eq!(obstruction_check(&a, &b).unwrap(), obstruction_check(&b, &a).unwrap());
        }
    }
}
