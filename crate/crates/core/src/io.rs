//! Number formatting shared by the JSON and CSV writers.
//!
//! Every float leaves the crate with 17 significant digits, enough for an
//! exact `f64` round trip.

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

/// `x` with 17 significant digits in exponent notation. Non-finite values
/// print as `NaN`/`inf` (only ever seen in CSV diagnostics).
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x)
    } else {
        format!("{x}")
    }
}

/// Serializes an `f64` as a bare JSON number with 17 significant digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F17(pub f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return serializer.serialize_none();
        }
        let raw = RawValue::from_string(fmt17(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

/// `serialize_with` adaptor for plain `f64` fields.
pub fn ser_f17<S: Serializer>(x: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    F17(*x).serialize(serializer)
}

/// `serialize_with` adaptor for `Option<f64>` fields.
pub fn ser_opt_f17<S: Serializer>(x: &Option<f64>, serializer: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => F17(*v).serialize(serializer),
        None => serializer.serialize_none(),
    }
}

/// `serialize_with` adaptor for `Vec<f64>` fields.
pub fn ser_vec_f17<S: Serializer>(xs: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = serializer.serialize_seq(Some(xs.len()))?;
    for x in xs {
        seq.serialize_element(&F17(*x))?;
    }
    seq.end()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [std::f64::consts::PI, 0.1, -1e-300, 4.0f64.ln(), 1.0 / 3.0] {
            let s = fmt17(x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn json_numbers_are_bare() {
        let s = serde_json::to_string(&vec![F17(0.5), F17(-2.0)]).unwrap();
        assert_eq!(s, "[5.0000000000000000e-1,-2.0000000000000000e0]");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.5, -2.0]);
    }
}
