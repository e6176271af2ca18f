//! Diagonal-covariance Gaussian mixture baseline.
//!
//! Training is EM from k-means++ seeded means, global per-column initial
//! variances and uniform weights. Scoring uses exactly the same per-dimension
//! evidence semantics as SPN leaves, so a GMM and its depth-2 SPN rewrite
//! (see [`DiagonalGmm::to_spn`]) agree on every evidence vector.

use log::debug;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{dimension_log_term, log_pdf, log_sum_exp};
use crate::learn::{kmeans, DataMatrix};
use crate::spn::{Evidence, GaussianLeaf, NodeId, SpnGraph, SpnNode};
use crate::{seed, VARIANCE_FLOOR};

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGmm {
    weights: Vec<f64>,
    means: Array2<f64>,
    variances: Array2<f64>,
}

impl DiagonalGmm {
    /// `means` and `variances` are K × B; weights must sum to one.
    pub fn new(weights: Vec<f64>, means: Array2<f64>, variances: Array2<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Input("GMM needs at least one component".into()));
        }
        if means.nrows() != k || variances.dim() != means.dim() || means.ncols() == 0 {
            return Err(Error::Input(format!(
                "GMM shapes disagree: {k} weights, means {:?}, variances {:?}",
                means.dim(),
                variances.dim()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Input("GMM weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("GMM weights sum to {total}, not 1")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Input("GMM means must be finite".into()));
        }
        if let Some(v) = variances.iter().find(|&&v| !(v.is_finite() && v >= VARIANCE_FLOOR)) {
            return Err(Error::Input(format!(
                "GMM variance {v} is below the floor {VARIANCE_FLOOR} or not finite"
            )));
        }
        Ok(DiagonalGmm {
            weights,
            means,
            variances,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn num_variables(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn variances(&self) -> &Array2<f64> {
        &self.variances
    }

    /// `K + 2·K·B`: weights, means and variances.
    pub fn parameter_count(&self) -> usize {
        let (k, b) = self.means.dim();
        k + 2 * k * b
    }

    fn component_log_term(&self, k: usize, evidence: &Evidence) -> f64 {
        self.means
            .row(k)
            .iter()
            .zip(self.variances.row(k))
            .zip(evidence.states())
            .map(|((&m, &v), &s)| dimension_log_term(s, m, v))
            .sum()
    }

    /// Log density under partial evidence (observed / missing / upper-bounded).
    pub fn log_density(&self, evidence: &Evidence) -> Result<f64> {
        evidence.check_len(self.num_variables())?;
        let terms = (0..self.num_components())
            .filter(|&k| self.weights[k] > 0.0)
            .map(|k| self.weights[k].ln() + self.component_log_term(k, evidence));
        Ok(log_sum_exp(terms))
    }

    /// The same density as an SPN: a sum over K products of B univariate leaves.
    pub fn to_spn(&self) -> Result<SpnGraph> {
        let (k, b) = self.means.dim();
        let mut nodes = Vec::with_capacity(1 + k * (b + 1));
        nodes.push(SpnNode::Sum {
            children: Vec::new(),
            weights: self.weights.clone(),
        });
        let mut products = Vec::with_capacity(k);
        for c in 0..k {
            let pid = NodeId(nodes.len());
            products.push(pid);
            let children = (0..b).map(|d| NodeId(pid.0 + 1 + d)).collect();
            nodes.push(SpnNode::Product { children });
            for d in 0..b {
                nodes.push(SpnNode::Leaf(GaussianLeaf::univariate(
                    d,
                    self.means[[c, d]],
                    self.variances[[c, d]],
                )?));
            }
        }
        nodes[0] = SpnNode::Sum {
            children: products,
            weights: self.weights.clone(),
        };
        SpnGraph::new(nodes, NodeId(0), b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmParams {
    pub components: usize,
    pub max_iter: usize,
    /// Stop once the mean log-likelihood changes by less than this.
    pub tol: f64,
    /// Set programmatically; configuration files drive seeds through the global seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EmParams {
    fn default() -> Self {
        EmParams {
            components: 48,
            max_iter: 200,
            tol: 1e-5,
            seed: 0,
        }
    }
}

/// Trained model plus the per-iteration mean log-likelihood.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: DiagonalGmm,
    /// `trace[i]` is the mean log-likelihood of the parameters after `i` M-steps.
    pub trace: Vec<f64>,
    /// Indices `i` whose M-step re-seeded an empty component; the
    /// `trace[i] → trace[i+1]` step is exempt from monotonicity.
    pub rescue_iterations: Vec<usize>,
}

fn column_variances(data: ArrayView2<f64>) -> Array1<f64> {
    let n = data.nrows() as f64;
    let mean = data.sum_axis(Axis(0)) / n;
    let mut var = Array1::zeros(data.ncols());
    for row in data.rows() {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.mapv(|v: f64| (v / n).max(VARIANCE_FLOOR))
}

/// Responsibilities (n × K) and per-row log-likelihoods.
fn e_step(
    data: ArrayView2<f64>,
    weights: &[f64],
    means: &Array2<f64>,
    variances: &Array2<f64>,
) -> (Array2<f64>, Vec<f64>) {
    let k = weights.len();
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let rows: Vec<(Vec<f64>, f64)> = (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            let lp: Vec<f64> = (0..k)
                .map(|c| {
                    log_w[c]
                        + x.iter()
                            .zip(means.row(c))
                            .zip(variances.row(c))
                            .map(|((&xv, &m), &v)| log_pdf(xv, m, v))
                            .sum::<f64>()
                })
                .collect();
            let ll = log_sum_exp(lp.iter().copied());
            (lp.into_iter().map(|l| (l - ll).exp()).collect(), ll)
        })
        .collect();
    let mut resp = Array2::zeros((data.nrows(), k));
    let mut ll = Vec::with_capacity(data.nrows());
    for (i, (r, l)) in rows.into_iter().enumerate() {
        resp.row_mut(i).assign(&Array1::from(r));
        ll.push(l);
    }
    (resp, ll)
}

/// Fits a K-component diagonal GMM with EM.
pub fn fit_em(data: &DataMatrix, params: &EmParams) -> Result<EmFit> {
    let k = params.components;
    if k == 0 {
        return Err(Error::Input("GMM needs at least one component".into()));
    }
    if data.rows() < k {
        return Err(Error::Input(format!(
            "{} rows are too few for {k} mixture components",
            data.rows()
        )));
    }
    let x = data.view();
    let (n, b) = x.dim();
    let global_var = column_variances(x);

    let mut rng = seed::rng(seed::derive_str(params.seed, "em-init"));
    let seeds = kmeans::plus_plus(x, k, &mut rng);
    let mut means = x.select(Axis(0), &seeds);
    let mut variances = Array2::from_shape_fn((k, b), |(_, d)| global_var[d]);
    let mut weights = vec![1.0 / k as f64; k];

    let mut trace = Vec::new();
    let mut rescue_iterations = Vec::new();
    for iter in 0..=params.max_iter {
        let (resp, row_ll) = e_step(x, &weights, &means, &variances);
        let mean_ll = row_ll.iter().sum::<f64>() / n as f64;
        trace.push(mean_ll);
        if iter == params.max_iter {
            break;
        }
        if let [.., prev, last] = trace[..] {
            if (last - prev).abs() < params.tol {
                break;
            }
        }

        // M-step, one component per task; sums run in row order for determinism.
        let nk: Vec<f64> = resp.sum_axis(Axis(0)).to_vec();
        let updated: Vec<Option<(Array1<f64>, Array1<f64>)>> = (0..k)
            .into_par_iter()
            .map(|c| {
                if nk[c] < 1e-10 {
                    return None;
                }
                let r = resp.column(c);
                let mut mu = Array1::zeros(b);
                for (row, &w) in x.rows().into_iter().zip(r) {
                    mu.scaled_add(w, &row);
                }
                mu /= nk[c];
                let mut var = Array1::<f64>::zeros(b);
                for (row, &w) in x.rows().into_iter().zip(r) {
                    for ((v, &xv), &m) in var.iter_mut().zip(row).zip(&mu) {
                        *v += w * (xv - m) * (xv - m);
                    }
                }
                let var = var.mapv(|v| (v / nk[c]).max(VARIANCE_FLOOR));
                Some((mu, var))
            })
            .collect();

        let mut taken = Vec::new();
        let mut rescued = false;
        for (c, upd) in updated.into_iter().enumerate() {
            match upd {
                Some((mu, var)) => {
                    weights[c] = nk[c] / n as f64;
                    means.row_mut(c).assign(&mu);
                    variances.row_mut(c).assign(&var);
                }
                None => {
                    // Re-seed at the least likely instance not already used this round.
                    let i = (0..n)
                        .filter(|i| !taken.contains(i))
                        .min_by(|&a, &b| row_ll[a].total_cmp(&row_ll[b]))
                        .unwrap_or(0);
                    taken.push(i);
                    weights[c] = 1.0 / n as f64;
                    means.row_mut(c).assign(&x.row(i));
                    variances.row_mut(c).assign(&global_var);
                    rescued = true;
                }
            }
        }
        if rescued {
            debug!("EM iteration {iter}: re-seeded empty component(s) at {taken:?}");
            rescue_iterations.push(iter);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }

    Ok(EmFit {
        model: DiagonalGmm::new(weights, means, variances)?,
        trace,
        rescue_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spn::EvidenceState;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> DataMatrix {
        let mut rng = crate::seed::rng(seed);
        let e = Normal::new(0.0, 0.5).unwrap();
        DataMatrix::new(Array2::from_shape_fn((n, 2), |(i, _)| {
            let c = if i % 2 == 0 { -5.0 } else { 5.0 };
            c + e.sample(&mut rng)
        }))
        .unwrap()
    }

    #[test]
    fn standard_normal_single_component() {
        let g = DiagonalGmm::new(vec![1.0], array![[0.0]], array![[1.0]]).unwrap();
        let v = g.log_density(&Evidence::observed(&[0.0]).unwrap()).unwrap();
        assert!((v + 0.918_938_5).abs() < 1e-7);
    }

    #[test]
    fn all_missing_is_zero() {
        let g = DiagonalGmm::new(
            vec![0.25, 0.75],
            array![[0.0, 1.0], [2.0, -1.0]],
            array![[1.0, 2.0], [0.5, 0.5]],
        )
        .unwrap();
        assert!(g.log_density(&Evidence::all_missing(2)).unwrap().abs() < 1e-15);
    }

    #[test]
    fn parameter_counts() {
        let g = |k: usize, b: usize| {
            DiagonalGmm::new(vec![1.0 / k as f64; k], Array2::zeros((k, b)), Array2::ones((k, b)))
                .unwrap()
                .parameter_count()
        };
        assert_eq!(g(48, 26), 2544);
        assert_eq!(g(1, 1), 3);
        assert_eq!(g(2, 3), 14);
    }

    #[test]
    fn two_blobs_recovered() {
        let fit = fit_em(&blobs(400, 1), &EmParams { components: 2, seed: 3, ..Default::default() })
            .unwrap();
        let mut centres: Vec<f64> = fit.model.means().column(0).to_vec();
        centres.sort_by(f64::total_cmp);
        assert!((centres[0] + 5.0).abs() < 0.1 && (centres[1] - 5.0).abs() < 0.1, "{centres:?}");
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0] - 1e-8));
    }

    #[test]
    fn single_component_is_mle() {
        let data = DataMatrix::new(array![[0.0, 1.0], [2.0, 1.0], [4.0, 4.0]]).unwrap();
        let fit = fit_em(&data, &EmParams { components: 1, ..Default::default() }).unwrap();
        let m = &fit.model;
        assert!((m.means()[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((m.means()[[0, 1]] - 2.0).abs() < 1e-12);
        assert!((m.variances()[[0, 0]] - 8.0 / 3.0).abs() < 1e-12);
        assert!((m.variances()[[0, 1]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_rows() {
        let data = DataMatrix::new(Array2::zeros((10, 2))).unwrap();
        assert!(matches!(fit_em(&data, &EmParams::default()), Err(Error::Input(_))));
    }

    #[test]
    fn spn_rewrite_agrees() {
        let g = DiagonalGmm::new(
            vec![0.4, 0.6],
            array![[0.0, 1.0], [2.0, -1.0]],
            array![[1.0, 2.0], [0.5, 0.7]],
        )
        .unwrap();
        let spn = g.to_spn().unwrap();
        assert_eq!(spn.parameter_count(), g.parameter_count());
        let e = Evidence::new(vec![EvidenceState::Observed(0.3), EvidenceState::UpperBounded(-0.2)])
            .unwrap();
        let a = g.log_density(&e).unwrap();
        let b = spn.log_density(&e).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }
}
