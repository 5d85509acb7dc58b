//! Outcome record shared by every inequality check.

use serde::{Deserialize, Serialize};

/// One certified inequality `lhs <= rhs`, accepted when
/// `rhs - lhs >= -(slack + rel_tol * |rhs|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub margin: f64,
    pub pass: bool,
}

impl CheckOutcome {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, slack: f64, rel_tol: f64) -> Self {
        let margin = rhs - lhs;
        let pass = margin.is_finite() && margin >= -(slack + rel_tol * rhs.abs());
        CheckOutcome {
            name: name.into(),
            lhs,
            rhs,
            slack,
            margin,
            pass,
        }
    }

    /// A pass/fail record that is not an inequality (monotonicity, ratios).
    pub fn flag(name: impl Into<String>, lhs: f64, rhs: f64, pass: bool) -> Self {
        CheckOutcome {
            name: name.into(),
            lhs,
            rhs,
            slack: 0.0,
            margin: rhs - lhs,
            pass,
        }
    }

    /// Margin relative to the allowed slack; negative means failure.
    pub fn headroom(&self) -> f64 {
        self.margin + self.slack
    }
}

/// Picks the outcome with the smallest headroom.
pub fn worst<I: IntoIterator<Item = CheckOutcome>>(outcomes: I) -> Option<CheckOutcome> {
    outcomes.into_iter().fold(None, |acc, o| match acc {
        None => Some(o),
        Some(a) => {
            let a_bad = !a.pass;
            let o_bad = !o.pass;
            if (o_bad && !a_bad) || (o_bad == a_bad && o.headroom() < a.headroom()) {
                Some(o)
            } else {
                Some(a)
            }
        }
    })
}
