use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An exact score in [0, 5].
///
/// Serialized as `{"numer": n, "denom": d, "display": "x.y"}`; `display`
/// is informational and ignored on input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Score(Ratio<u64>);

impl Score {
    pub const MAX: u64 = 5;

    pub fn new(numer: u64, denom: u64) -> Option<Self> {
        if denom == 0 {
            return None;
        }
        let r = Ratio::new(numer, denom);
        (r <= Ratio::from_integer(Self::MAX)).then_some(Score(r))
    }

    pub fn integer(v: u8) -> Option<Self> {
        Self::new(u64::from(v), 1)
    }

    /// Arithmetic mean of integer criterion scores; `None` when empty.
    pub fn mean<I: IntoIterator<Item = u8>>(scores: I) -> Option<Self> {
        let (sum, n) = scores
            .into_iter()
            .fold((0u64, 0u64), |(s, n), v| (s + u64::from(v), n + 1));
        if n == 0 {
            None
        } else {
            Self::new(sum, n)
        }
    }

    /// Nearest tenth of a finite value in [0, 5].
    pub fn from_decimal(v: f64) -> Option<Self> {
        if !v.is_finite() || v < 0.0 {
            return None;
        }
        Self::new((v * 10.0).round() as u64, 10)
    }

    pub fn ratio(&self) -> Ratio<u64> {
        self.0
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    /// Value rounded half-up to tenths.
    pub fn tenths(&self) -> u64 {
        (20 * self.numer() + self.denom()) / (2 * self.denom())
    }

    pub fn display(&self) -> String {
        let t = self.tenths();
        format!("{}.{}", t / 10, t % 10)
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

#[derive(Serialize, Deserialize)]
struct ScoreRepr {
    numer: u64,
    denom: u64,
    #[serde(default, skip_deserializing)]
    display: String,
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ScoreRepr {
            numer: self.numer(),
            denom: self.denom(),
            display: self.display(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = ScoreRepr::deserialize(d)?;
        Score::new(r.numer, r.denom)
            .ok_or_else(|| serde::de::Error::custom("score must be a fraction in [0, 5]"))
    }
}
