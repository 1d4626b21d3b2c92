use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A value in [0, 1] stored in fixed point (1/10000 steps) so affect updates
/// are exact and replay bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Intensity(u16);

impl Intensity {
    pub const SCALE: u16 = 10_000;
    pub const ZERO: Intensity = Intensity(0);
    pub const ONE: Intensity = Intensity(Self::SCALE);

    /// Clamps into range.
    pub fn from_units(units: i64) -> Self {
        Intensity(units.clamp(0, i64::from(Self::SCALE)) as u16)
    }

    /// Const constructor; panics at compile time when `units` exceeds the scale.
    pub const fn from_units_const(units: u16) -> Self {
        assert!(units <= Self::SCALE);
        Intensity(units)
    }

    /// Rounds to the nearest 1/10000 and clamps.
    pub fn from_f64(v: f64) -> Self {
        if v.is_nan() {
            return Intensity::ZERO;
        }
        Self::from_units((v * f64::from(Self::SCALE)).round() as i64)
    }

    pub fn units(self) -> u16 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / f64::from(Self::SCALE)
    }
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.as_f64())
    }
}

impl Serialize for Intensity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Intensity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(Intensity::from_f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffectDimension {
    Anxiety,
    Anger,
    Trust,
    Confusion,
    Grief,
}

impl AffectDimension {
    // Extension point: adding a dimension here and to AffectiveState keeps
    // every consumer exhaustive.
    pub const ALL: [AffectDimension; 5] = [
        AffectDimension::Anxiety,
        AffectDimension::Anger,
        AffectDimension::Trust,
        AffectDimension::Confusion,
        AffectDimension::Grief,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AffectDimension::Anxiety => "anxiety",
            AffectDimension::Anger => "anger",
            AffectDimension::Trust => "trust",
            AffectDimension::Confusion => "confusion",
            AffectDimension::Grief => "grief",
        }
    }
}

/// The patient's emotional dimensions. All five are always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffectiveState {
    pub anxiety: Intensity,
    pub anger: Intensity,
    pub trust: Intensity,
    pub confusion: Intensity,
    pub grief: Intensity,
}

impl Default for AffectiveState {
    /// Every dimension at 0.5 except trust at 0.6.
    fn default() -> Self {
        let half = Intensity::from_units(5_000);
        AffectiveState {
            anxiety: half,
            anger: half,
            trust: Intensity::from_units(6_000),
            confusion: half,
            grief: half,
        }
    }
}

impl AffectiveState {
    pub fn uniform(v: Intensity) -> Self {
        AffectiveState {
            anxiety: v,
            anger: v,
            trust: v,
            confusion: v,
            grief: v,
        }
    }

    pub fn get(&self, dim: AffectDimension) -> Intensity {
        match dim {
            AffectDimension::Anxiety => self.anxiety,
            AffectDimension::Anger => self.anger,
            AffectDimension::Trust => self.trust,
            AffectDimension::Confusion => self.confusion,
            AffectDimension::Grief => self.grief,
        }
    }

    pub fn set(&mut self, dim: AffectDimension, v: Intensity) {
        let slot = match dim {
            AffectDimension::Anxiety => &mut self.anxiety,
            AffectDimension::Anger => &mut self.anger,
            AffectDimension::Trust => &mut self.trust,
            AffectDimension::Confusion => &mut self.confusion,
            AffectDimension::Grief => &mut self.grief,
        };
        *slot = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = (AffectDimension, Intensity)> + '_ {
        AffectDimension::ALL.into_iter().map(|d| (d, self.get(d)))
    }
}
