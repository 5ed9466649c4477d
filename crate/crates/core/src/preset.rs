//! Component switches for the recalibration/converter ablation.
//!
//! | preset | recalibration | ℓ2 norm | residual weight source | converter |
//! |--------|---------------|---------|------------------------|-----------|
//! | #1     | yes           |         | none (raw map)         |           |
//! | #2     | yes           |         | none (raw map)         | yes       |
//! | #3     | yes           |         | neural map             | yes       |
//! | #4     | yes           |         | feature map            | yes       |
//! | #5     | yes           | yes     | neural map             | yes       |
//! | #6     | yes           | yes     | feature map            | yes       |
//!
//! `full` is #5.

use alloc::format;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// What produces the weight of the residual recalibration `f ⊙ W + f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ResidualSource {
    /// `W = softmax(N / ‖N‖)` (or `softmax(N)` without the norm).
    NeuralMap,
    /// `W = softmax(f / ‖f‖)` (or `softmax(f)`): feature self-weighting.
    FeatureMap,
}

/// Serialized as `"#n"` for table rows and as the switch struct otherwise;
/// `"full"`, `"5"` and `"#5"` all parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "repr::PresetRepr"))]
pub struct AblationPreset {
    pub use_gfr: bool,
    pub use_norm: bool,
    /// `None` multiplies features by the raw map with no residual path.
    pub gfr_residual_source: Option<ResidualSource>,
    /// Without the converter the satellite maps are free parameters.
    pub use_nec: bool,
}

impl AblationPreset {
    pub const P1: Self = Self::row(false, None, false);
    pub const P2: Self = Self::row(false, None, true);
    pub const P3: Self = Self::row(false, Some(ResidualSource::NeuralMap), true);
    pub const P4: Self = Self::row(false, Some(ResidualSource::FeatureMap), true);
    pub const P5: Self = Self::row(true, Some(ResidualSource::NeuralMap), true);
    pub const P6: Self = Self::row(true, Some(ResidualSource::FeatureMap), true);
    pub const FULL: Self = Self::P5;

    const fn row(use_norm: bool, residual: Option<ResidualSource>, use_nec: bool) -> Self {
        AblationPreset {
            use_gfr: true,
            use_norm,
            gfr_residual_source: residual,
            use_nec,
        }
    }

    /// Preset by table row number, 1..=6.
    pub fn numbered(n: u8) -> Result<Self> {
        Ok(match n {
            1 => Self::P1,
            2 => Self::P2,
            3 => Self::P3,
            4 => Self::P4,
            5 => Self::P5,
            6 => Self::P6,
            _ => return Err(Error::parameter(format!("preset {n} is not one of 1..=6"))),
        })
    }

    /// Row number when the switches match a table row.
    pub fn number(&self) -> Option<u8> {
        (1..=6).find(|&n| Self::numbered(n).ok() == Some(*self))
    }

    /// Whether the satellite branch uses its own neural maps at all.
    pub fn uses_neural_maps(&self) -> bool {
        self.use_gfr && self.gfr_residual_source != Some(ResidualSource::FeatureMap)
    }

    /// Whether features are multiplied by the map as stored, with no softmax and no residual.
    pub fn multiplies_raw_map(&self) -> bool {
        self.use_gfr && self.gfr_residual_source.is_none() && !self.use_norm
    }
}

impl Default for AblationPreset {
    fn default() -> Self {
        Self::FULL
    }
}

impl fmt::Display for AblationPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.number() {
            Some(n) => write!(f, "#{n}"),
            None => write!(f, "{self:?}"),
        }
    }
}

impl FromStr for AblationPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('#');
        if t.eq_ignore_ascii_case("full") {
            return Ok(Self::FULL);
        }
        let n: u8 = t
            .parse()
            .map_err(|_| Error::parameter(format!("unknown preset `{s}` (expected 1..=6 or full)")))?;
        Self::numbered(n)
    }
}

#[cfg(feature = "serde")]
mod repr {
    use super::*;
    use alloc::string::{String, ToString};

    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    pub enum PresetRepr {
        Name(String),
        Switches {
            use_gfr: bool,
            use_norm: bool,
            gfr_residual_source: Option<ResidualSource>,
            use_nec: bool,
        },
    }

    impl TryFrom<PresetRepr> for AblationPreset {
        type Error = String;
        fn try_from(r: PresetRepr) -> core::result::Result<Self, String> {
            match r {
                PresetRepr::Name(s) => s.parse().map_err(|e: Error| e.to_string()),
                PresetRepr::Switches {
                    use_gfr,
                    use_norm,
                    gfr_residual_source,
                    use_nec,
                } => Ok(AblationPreset {
                    use_gfr,
                    use_norm,
                    gfr_residual_source,
                    use_nec,
                }),
            }
        }
    }

    impl serde::Serialize for AblationPreset {
        fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
            use serde::ser::SerializeStruct;
            if let Some(n) = self.number() {
                return s.collect_str(&format_args!("#{n}"));
            }
            let mut st = s.serialize_struct("AblationPreset", 4)?;
            st.serialize_field("use_gfr", &self.use_gfr)?;
            st.serialize_field("use_norm", &self.use_norm)?;
            st.serialize_field("gfr_residual_source", &self.gfr_residual_source)?;
            st.serialize_field("use_nec", &self.use_nec)?;
            st.end()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_is_five() {
        assert_eq!(AblationPreset::FULL.number(), Some(5));
        assert_eq!("full".parse::<AblationPreset>().unwrap(), AblationPreset::P5);
        assert_eq!("#3".parse::<AblationPreset>().unwrap(), AblationPreset::P3);
    }

    #[test]
    fn rows_are_distinct() {
        for a in 1..=6u8 {
            for b in 1..=6u8 {
                let same = AblationPreset::numbered(a).unwrap() == AblationPreset::numbered(b).unwrap();
                assert_eq!(same, a == b);
            }
        }
        assert!("7".parse::<AblationPreset>().is_err());
        assert!(AblationPreset::numbered(0).is_err());
    }

    #[test]
    fn only_preset_one_skips_converter() {
        for n in 1..=6u8 {
            assert_eq!(AblationPreset::numbered(n).unwrap().use_nec, n != 1);
        }
    }
}
