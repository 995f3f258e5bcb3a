//! Score fusion for hybrid retrieval.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Constant in `1 / (k + rank)`.
pub const RRF_K: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FusionMethod {
    Rrf,
    CombSum,
    CombMnz,
    CombMed,
    CombAnz,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 5] = [
        FusionMethod::Rrf,
        FusionMethod::CombSum,
        FusionMethod::CombMnz,
        FusionMethod::CombMed,
        FusionMethod::CombAnz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMethod::Rrf => "RRF",
            FusionMethod::CombSum => "COMBSUM",
            FusionMethod::CombMnz => "COMBMNZ",
            FusionMethod::CombMed => "COMBMED",
            FusionMethod::CombAnz => "COMBANZ",
        }
    }

    /// SQL function name of the explicit variant.
    pub fn function_name(self) -> &'static str {
        match self {
            FusionMethod::Rrf => "fusion_rrf",
            FusionMethod::CombSum => "fusion_combsum",
            FusionMethod::CombMnz => "fusion_combmnz",
            FusionMethod::CombMed => "fusion_combmed",
            FusionMethod::CombAnz => "fusion_combanz",
        }
    }

    pub fn from_function_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.function_name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMethod {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| FusionError::UnknownMethod(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("unknown fusion method '{0}'")]
    UnknownMethod(alloc::string::String),
    #[error("RRF ranks must be at least 1, got {0}")]
    InvalidRank(f64),
    #[error("fusion score is not finite: {0}")]
    NotFinite(f64),
}

/// Fuses one document's scores from several retrievers. `None` entries are
/// missing scores. For RRF the inputs are 1-based ranks.
///
/// RRF, COMBMED and COMBANZ ignore missing scores; COMBSUM and COMBMNZ count
/// them as 0. COMBMNZ multiplies the sum by the number of positive scores.
/// Returns `None` when every input is missing.
pub fn fuse(method: FusionMethod, scores: &[Option<f64>]) -> Result<Option<f64>, FusionError> {
    let mut present: Vec<f64> = Vec::with_capacity(scores.len());
    for s in scores.iter().flatten() {
        if !s.is_finite() {
            return Err(FusionError::NotFinite(*s));
        }
        present.push(*s);
    }
    if present.is_empty() {
        return Ok(None);
    }
    // Summing in sorted order makes the result independent of argument order.
    present.sort_by(f64::total_cmp);
    let sum = |xs: &[f64]| xs.iter().fold(0.0, |acc, x| acc + x);
    let value = match method {
        FusionMethod::Rrf => {
            let mut terms = Vec::with_capacity(present.len());
            for &r in &present {
                if r < 1.0 {
                    return Err(FusionError::InvalidRank(r));
                }
                terms.push(1.0 / (RRF_K + r));
            }
            terms.sort_by(f64::total_cmp);
            sum(&terms)
        }
        FusionMethod::CombSum => sum(&present),
        FusionMethod::CombMnz => {
            let positive = present.iter().filter(|s| **s > 0.0).count();
            sum(&present) * positive as f64
        }
        FusionMethod::CombMed => {
            let n = present.len();
            if n % 2 == 1 {
                present[n / 2]
            } else {
                (present[n / 2 - 1] + present[n / 2]) / 2.0
            }
        }
        FusionMethod::CombAnz => sum(&present) / present.len() as f64,
    };
    Ok(Some(value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rrf_of_ranks() {
        let v = fuse(FusionMethod::Rrf, &[Some(1.0), Some(3.0)])
            .unwrap()
            .unwrap();
        assert!((v - (1.0 / 61.0 + 1.0 / 63.0)).abs() < 1e-15);
        assert_eq!(
            fuse(FusionMethod::Rrf, &[Some(0.0)]),
            Err(FusionError::InvalidRank(0.0))
        );
    }

    #[test]
    fn null_handling_differs_by_method() {
        let s = [Some(0.4), None, Some(0.2)];
        assert_eq!(fuse(FusionMethod::CombSum, &s).unwrap(), Some(0.2 + 0.4));
        assert_eq!(
            fuse(FusionMethod::CombMnz, &s).unwrap(),
            Some((0.2 + 0.4) * 2.0)
        );
        assert_eq!(
            fuse(FusionMethod::CombAnz, &s).unwrap(),
            Some((0.2 + 0.4) / 2.0)
        );
        assert_eq!(
            fuse(FusionMethod::CombMed, &s).unwrap(),
            Some((0.2 + 0.4) / 2.0)
        );
        assert_eq!(fuse(FusionMethod::CombSum, &[None, None]).unwrap(), None);
    }

    #[test]
    fn combmnz_counts_positive_scores() {
        assert_eq!(
            fuse(FusionMethod::CombMnz, &[Some(0.0), Some(0.5), Some(0.25)]).unwrap(),
            Some(0.75 * 2.0)
        );
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("rrf".parse::<FusionMethod>().unwrap(), FusionMethod::Rrf);
        assert_eq!(
            FusionMethod::from_function_name("FUSION_COMBMED"),
            Some(FusionMethod::CombMed)
        );
        assert!("borda".parse::<FusionMethod>().is_err());
    }
}
