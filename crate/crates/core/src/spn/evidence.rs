use crate::error::{Error, Result};

/// State of one variable in a partial observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvidenceState {
    /// Reliable component, evaluated with the density.
    Observed(f64),
    /// Unreliable component integrated over `(-∞, ∞)`.
    Missing,
    /// Unreliable component integrated over `(-∞, value]`.
    UpperBounded(f64),
}

impl EvidenceState {
    pub fn is_observed(&self) -> bool {
        matches!(self, EvidenceState::Observed(_))
    }
}

/// Per-variable evidence vector. Values are guaranteed finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    states: Vec<EvidenceState>,
}

impl Evidence {
    pub fn new(states: Vec<EvidenceState>) -> Result<Self> {
        for (i, s) in states.iter().enumerate() {
            match *s {
                EvidenceState::Observed(v) | EvidenceState::UpperBounded(v) if !v.is_finite() => {
                    return Err(Error::Input(format!(
                        "evidence component {i} has non-finite value {v}"
                    )));
                }
                _ => {}
            }
        }
        Ok(Evidence { states })
    }

    /// Fully observed evidence.
    pub fn observed(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| EvidenceState::Observed(v)).collect())
    }

    /// Evidence with every variable missing.
    pub fn all_missing(len: usize) -> Self {
        Evidence {
            states: vec![EvidenceState::Missing; len],
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[EvidenceState] {
        &self.states
    }

    #[inline]
    pub fn get(&self, var: usize) -> EvidenceState {
        self.states[var]
    }

    pub(crate) fn check_len(&self, expected: usize) -> Result<()> {
        if self.states.len() != expected {
            return Err(Error::Input(format!(
                "evidence has {} components, model expects {expected}",
                self.states.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_values() {
        assert!(Evidence::observed(&[0.0, f64::NAN]).is_err());
        assert!(Evidence::new(vec![EvidenceState::UpperBounded(f64::INFINITY)]).is_err());
        assert!(Evidence::new(vec![EvidenceState::Missing, EvidenceState::Observed(1.0)]).is_ok());
    }
}
