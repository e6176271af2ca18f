use crate::error::Result;
use crate::gaussian::{dimension_log_term, log_sum_exp};

use super::{Evidence, GaussianLeaf, SpnGraph, SpnNode};

impl GaussianLeaf {
    /// Log value of the leaf under partial evidence.
    ///
    /// Observed dimensions contribute the log-density, upper-bounded ones the
    /// log-CDF at the bound, missing ones nothing; a leaf whose dimensions are
    /// all missing therefore evaluates to `ln 1 = 0`.
    pub fn log_value(&self, evidence: &Evidence) -> f64 {
        self.dims()
            .map(|(v, m, s)| dimension_log_term(evidence.get(v), m, s))
            .sum()
    }
}

impl SpnGraph {
    /// Log density of the root under partial evidence.
    ///
    /// One bottom-up pass in the log domain: products add child values, sums
    /// combine `ln w + ln S_child` with log-sum-exp. The graph must be
    /// structurally valid; with normalised weights and all-missing evidence
    /// the result is exactly zero.
    pub fn log_density(&self, evidence: &Evidence) -> Result<f64> {
        evidence.check_len(self.num_variables())?;
        let plan = self.plan()?;
        let mut values = vec![0.0f64; self.nodes().len()];
        for &n in &plan.order {
            values[n] = match &self.nodes()[n] {
                SpnNode::Leaf(leaf) => leaf.log_value(evidence),
                SpnNode::Product { children } => {
                    children.iter().map(|c| values[c.0]).sum()
                }
                SpnNode::Sum { children, weights } => {
                    // Exactly-zero weights drop out instead of producing ln 0 + (-∞).
                    let terms = children
                        .iter()
                        .zip(weights)
                        .filter(|(_, &w)| w > 0.0)
                        .map(|(c, &w)| w.ln() + values[c.0]);
                    log_sum_exp(terms)
                }
            };
        }
        Ok(values[self.root().0])
    }

    /// Sum of per-frame log densities.
    pub fn log_density_sum(&self, frames: &[Evidence]) -> Result<f64> {
        frames.iter().map(|e| self.log_density(e)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spn::{EvidenceState, NodeId};
    use crate::Error;

    fn uni(v: usize, m: f64, s: f64) -> GaussianLeaf {
        GaussianLeaf::univariate(v, m, s).unwrap()
    }

    #[test]
    fn standard_normal_leaf_at_mode() {
        let e = Evidence::observed(&[0.0]).unwrap();
        assert!((uni(0, 0.0, 1.0).log_value(&e) + 0.918_938_5).abs() < 1e-7);
    }

    #[test]
    fn upper_bound_at_mean_is_half() {
        let e = Evidence::new(vec![EvidenceState::UpperBounded(0.0)]).unwrap();
        assert!((uni(0, 0.0, 1.0).log_value(&e) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn all_missing_leaf_is_one() {
        let leaf = GaussianLeaf::new(vec![0, 1], vec![0.3, -2.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(leaf.log_value(&Evidence::all_missing(2)), 0.0);
    }

    fn fixture() -> SpnGraph {
        let nodes = vec![
            SpnNode::Sum {
                children: vec![NodeId(1), NodeId(2)],
                weights: vec![0.3, 0.7],
            },
            SpnNode::Product {
                children: vec![NodeId(3), NodeId(4)],
            },
            SpnNode::Product {
                children: vec![NodeId(5), NodeId(6)],
            },
            SpnNode::Leaf(uni(0, 0.0, 1.0)),
            SpnNode::Leaf(uni(1, 1.0, 4.0)),
            SpnNode::Leaf(uni(0, 2.0, 0.25)),
            SpnNode::Leaf(uni(1, -1.0, 1.0)),
        ];
        SpnGraph::new(nodes, NodeId(0), 2).unwrap()
    }

    #[test]
    fn hand_expanded_mixture() {
        // 0.3·N(0.5;0,1)·N(1.5;1,4) + 0.7·N(0.5;2,0.25)·N(1.5;-1,1), expanded by hand.
        let pdf = |x: f64, m: f64, s: f64| {
            (-(x - m) * (x - m) / (2.0 * s)).exp() / (2.0 * std::f64::consts::PI * s).sqrt()
        };
        let expected = (0.3 * pdf(0.5, 0.0, 1.0) * pdf(1.5, 1.0, 4.0)
            + 0.7 * pdf(0.5, 2.0, 0.25) * pdf(1.5, -1.0, 1.0))
        .ln();
        let got = fixture().log_density(&Evidence::observed(&[0.5, 1.5]).unwrap()).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn all_missing_is_zero() {
        let v = fixture().log_density(&Evidence::all_missing(2)).unwrap();
        assert!(v.abs() < 1e-15, "{v}");
    }

    #[test]
    fn evidence_length_mismatch() {
        assert!(matches!(
            fixture().log_density(&Evidence::all_missing(3)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn zero_weight_everywhere_gives_neg_infinity() {
        let nodes = vec![
            SpnNode::Sum {
                children: vec![NodeId(1)],
                weights: vec![0.0],
            },
            SpnNode::Leaf(uni(0, 0.0, 1.0)),
        ];
        let g = SpnGraph::new(nodes, NodeId(0), 1).unwrap();
        assert_eq!(
            g.log_density(&Evidence::observed(&[0.0]).unwrap()).unwrap(),
            f64::NEG_INFINITY
        );
    }
}
