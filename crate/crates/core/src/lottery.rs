//! Finitely supported lotteries and recorded pairwise choices.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Tolerance on the total probability mass of a lottery.
pub const PROB_TOLERANCE: f64 = 1e-12;

/// A single payoff and the probability of receiving it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub payoff: f64,
    pub prob: f64,
}

#[derive(Serialize, Deserialize)]
struct RawLottery {
    outcomes: Vec<Outcome>,
}

/// A probability distribution over finitely many monetary payoffs.
///
/// Outcomes are kept sorted by payoff with no duplicates. Probabilities lie
/// in `[0, 1]` and sum to one; a total within [`PROB_TOLERANCE`] of one is
/// renormalised on construction, anything further away is rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLottery", into = "RawLottery")]
pub struct Lottery {
    outcomes: Vec<Outcome>,
}

impl Lottery {
    pub fn new(mut outcomes: Vec<Outcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(domain("lottery needs at least one outcome"));
        }
        for o in &outcomes {
            if !o.payoff.is_finite() || o.payoff < 0.0 {
                return Err(domain(alloc::format!("payoff {} is not a non-negative amount", o.payoff)));
            }
            if !(0.0..=1.0).contains(&o.prob) {
                return Err(domain(alloc::format!("probability {} outside [0, 1]", o.prob)));
            }
        }
        outcomes.sort_by(|a, b| a.payoff.total_cmp(&b.payoff));
        let mut merged: Vec<Outcome> = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            match merged.last_mut() {
                Some(last) if last.payoff == o.payoff => last.prob += o.prob,
                _ => merged.push(o),
            }
        }
        let total: f64 = merged.iter().map(|o| o.prob).sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(domain(alloc::format!("probabilities sum to {total}, not 1")));
        }
        if total != 1.0 {
            for o in &mut merged {
                o.prob /= total;
            }
        }
        Ok(Self { outcomes: merged })
    }

    /// Builds a lottery from `(payoff, prob)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(payoff, prob)| Outcome { payoff, prob }).collect())
    }

    /// The degenerate lottery paying `payoff` for sure.
    pub fn dirac(payoff: f64) -> Result<Self> {
        Self::new(alloc::vec![Outcome { payoff, prob: 1.0 }])
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    /// Payoffs carrying positive probability.
    pub fn support(&self) -> impl Iterator<Item = f64> + '_ {
        self.outcomes.iter().filter(|o| o.prob > 0.0).map(|o| o.payoff)
    }

    pub fn max_payoff(&self) -> f64 {
        self.outcomes.last().map_or(0.0, |o| o.payoff)
    }
}

impl TryFrom<RawLottery> for Lottery {
    type Error = Error;

    fn try_from(raw: RawLottery) -> Result<Self> {
        Lottery::new(raw.outcomes)
    }
}

impl From<Lottery> for RawLottery {
    fn from(l: Lottery) -> Self {
        RawLottery { outcomes: l.outcomes }
    }
}

/// The option a decision maker picked from a query pair.
///
/// Serialised as the indicator `+1` (first lottery) or `-1` (second).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Choice {
    First,
    Second,
}

impl Choice {
    pub fn sign(self) -> f64 {
        match self {
            Choice::First => 1.0,
            Choice::Second => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Choice::First => Choice::Second,
            Choice::Second => Choice::First,
        }
    }
}

impl TryFrom<i8> for Choice {
    type Error = Error;

    fn try_from(z: i8) -> Result<Self> {
        match z {
            1 => Ok(Choice::First),
            -1 => Ok(Choice::Second),
            other => Err(domain(alloc::format!("choice indicator must be +1 or -1, got {other}"))),
        }
    }
}

impl From<Choice> for i8 {
    fn from(c: Choice) -> i8 {
        match c {
            Choice::First => 1,
            Choice::Second => -1,
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", i8::from(*self))
    }
}

/// A query pair together with the observed answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub w: Lottery,
    pub y: Lottery,
    pub z: Choice,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merges_and_sorts_outcomes() {
        let l = Lottery::from_pairs(&[(5.0, 0.25), (1.0, 0.5), (5.0, 0.25)]).unwrap();
        assert_eq!(l.outcomes().len(), 2);
        assert_eq!(l.outcomes()[0], Outcome { payoff: 1.0, prob: 0.5 });
        assert_eq!(l.outcomes()[1], Outcome { payoff: 5.0, prob: 0.5 });
    }

    #[test]
    fn renormalises_within_tolerance_only() {
        let l = Lottery::from_pairs(&[(0.0, 0.5), (1.0, 0.5 + 5e-13)]).unwrap();
        let total: f64 = l.outcomes().iter().map(|o| o.prob).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!(Lottery::from_pairs(&[(0.0, 0.5), (1.0, 0.4)]).is_err());
    }

    #[test]
    fn rejects_bad_outcomes() {
        assert!(Lottery::new(Vec::new()).is_err());
        assert!(Lottery::from_pairs(&[(-1.0, 1.0)]).is_err());
        assert!(Lottery::from_pairs(&[(f64::NAN, 1.0)]).is_err());
        assert!(Lottery::from_pairs(&[(1.0, 1.5), (2.0, -0.5)]).is_err());
    }

    #[test]
    fn choice_indicator_conversions() {
        assert_eq!(Choice::try_from(1).unwrap(), Choice::First);
        assert_eq!(Choice::try_from(-1).unwrap(), Choice::Second);
        assert!(Choice::try_from(0).is_err());
        assert_eq!(Choice::First.flipped(), Choice::Second);
        assert_eq!(Choice::Second.sign(), -1.0);
    }
}
