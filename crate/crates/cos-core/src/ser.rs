//! Serde helpers for score fields.
//!
//! Trace and report files carry scores as decimal values with six fractional
//! digits. In-memory values keep full `f64` precision; rounding happens only
//! at the serialization boundary so metric arithmetic stays exact.

/// Rounds to six fractional digits.
pub fn round6(value: f64) -> f64 {
    (value * 1e6).round() / 1e6
}

/// `serialize_with` target for plain score fields.
pub mod f6 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(super::round6(*value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        f64::deserialize(deserializer)
    }
}

/// `serialize_with` target for optional score fields.
pub mod f6_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<f64>, serializer: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) => serializer.serialize_some(&super::round6(*v)),
            None => serializer.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<Option<f64>, D::Error> {
        Option::<f64>::deserialize(deserializer)
    }
}

#[cfg(test)]
mod tests {
    use super::round6;

    #[test]
    fn rounds_to_six_digits() {
        assert_eq!(round6(2.0 / 3.0), 0.666667);
        assert_eq!(round6(0.5), 0.5);
        assert_eq!(round6(0.0), 0.0);
    }
}
