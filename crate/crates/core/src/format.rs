//! Structured-text model files.
//!
//! One model per JSON document. The document starts with a `magic` tag and a
//! format `version`; `kind` selects the payload:
//!
//! ```json
//! {
//!   "magic": "spn-asi-model",
//!   "version": 1,
//!   "kind": "spn",
//!   "num_variables": 2,
//!   "root": 0,
//!   "nodes": [
//!     { "id": 0, "type": "sum", "children": [1, 2], "weights": ["5.0000000000000000e-1", "5.0000000000000000e-1"] },
//!     { "id": 1, "type": "product", "children": [3, 4] },
//!     { "id": 3, "type": "leaf", "var_indices": [0], "means": ["0.0000000000000000e0"], "variances": ["1.0000000000000000e0"] }
//!   ]
//! }
//! ```
//!
//! GMM documents use `"kind": "gmm"` and a `components` list of
//! `{ "weight", "means", "variances" }`. Every real number is a decimal string
//! with 17 significant digits, which round-trips `f64` exactly. Node `id`s must
//! equal their position in the list.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::DiagonalGmm;
use crate::spn::{GaussianLeaf, NodeId, SpnGraph, SpnNode};

pub const MODEL_MAGIC: &str = "spn-asi-model";
pub const MODEL_VERSION: u32 = 1;

/// Exact decimal representation of an `f64` (17 significant digits).
pub fn encode_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn decode_real(s: &str, ctx: &dyn Fn() -> String) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{}: `{s}` is not a decimal number", ctx())))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("{}: value `{s}` is not finite", ctx())));
    }
    Ok(v)
}

fn decode_reals(xs: &[String], ctx: &dyn Fn() -> String) -> Result<Vec<f64>> {
    xs.iter().map(|s| decode_real(s, ctx)).collect()
}

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    kind: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpnDocument {
    magic: String,
    version: u32,
    kind: String,
    num_variables: usize,
    root: usize,
    nodes: Vec<NodeDocument>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDocument {
    id: usize,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    children: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    var_indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    means: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variances: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmDocument {
    magic: String,
    version: u32,
    kind: String,
    num_variables: usize,
    components: Vec<ComponentDocument>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentDocument {
    weight: String,
    means: Vec<String>,
    variances: Vec<String>,
}

fn to_text<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("model documents serialise");
    s.push('\n');
    s
}

pub fn spn_to_string(graph: &SpnGraph) -> String {
    let nodes = graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(id, node)| {
            let mut doc = NodeDocument {
                id,
                kind: node.kind_name().to_string(),
                children: None,
                weights: None,
                var_indices: None,
                means: None,
                variances: None,
            };
            match node {
                SpnNode::Sum { children, weights } => {
                    doc.children = Some(children.iter().map(|c| c.0).collect());
                    doc.weights = Some(weights.iter().map(|&w| encode_real(w)).collect());
                }
                SpnNode::Product { children } => {
                    doc.children = Some(children.iter().map(|c| c.0).collect());
                }
                SpnNode::Leaf(leaf) => {
                    doc.var_indices = Some(leaf.var_indices().to_vec());
                    doc.means = Some(leaf.means().iter().map(|&m| encode_real(m)).collect());
                    doc.variances = Some(leaf.variances().iter().map(|&v| encode_real(v)).collect());
                }
            }
            doc
        })
        .collect();
    to_text(&SpnDocument {
        magic: MODEL_MAGIC.into(),
        version: MODEL_VERSION,
        kind: "spn".into(),
        num_variables: graph.num_variables(),
        root: graph.root().0,
        nodes,
    })
}

pub fn gmm_to_string(model: &DiagonalGmm) -> String {
    let components = (0..model.num_components())
        .map(|k| ComponentDocument {
            weight: encode_real(model.weights()[k]),
            means: model.means().row(k).iter().map(|&m| encode_real(m)).collect(),
            variances: model.variances().row(k).iter().map(|&v| encode_real(v)).collect(),
        })
        .collect();
    to_text(&GmmDocument {
        magic: MODEL_MAGIC.into(),
        version: MODEL_VERSION,
        kind: "gmm".into(),
        num_variables: model.num_variables(),
        components,
    })
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Parse(format!("malformed model document: {e}"))
}

fn read_header(text: &str) -> Result<Header> {
    let header: Header = serde_json::from_str(text).map_err(json_err)?;
    if header.magic != MODEL_MAGIC {
        return Err(Error::Parse(format!(
            "not a model file: magic is `{}`, expected `{MODEL_MAGIC}`",
            header.magic
        )));
    }
    if header.version != MODEL_VERSION {
        return Err(Error::Parse(format!(
            "model format version {} is not supported (this build reads version {MODEL_VERSION})",
            header.version
        )));
    }
    Ok(header)
}

fn node_from_doc(doc: NodeDocument, count: usize) -> Result<SpnNode> {
    let id = doc.id;
    let ctx = || format!("node {id}");
    let need = |field: &'static str, present: bool| {
        if present {
            Ok(())
        } else {
            Err(Error::Parse(format!("node {id}: missing field `{field}`")))
        }
    };
    let children = |c: Option<Vec<usize>>| -> Result<Vec<NodeId>> {
        let c = c.ok_or_else(|| Error::Parse(format!("node {id}: missing field `children`")))?;
        if let Some(bad) = c.iter().find(|&&c| c >= count) {
            return Err(Error::Parse(format!(
                "node {id}: child {bad} does not exist ({count} nodes)"
            )));
        }
        Ok(c.into_iter().map(NodeId).collect())
    };
    match doc.kind.as_str() {
        "sum" => {
            let children = children(doc.children)?;
            let weights = decode_reals(
                &doc.weights
                    .ok_or_else(|| Error::Parse(format!("node {id}: missing field `weights`")))?,
                &ctx,
            )?;
            if weights.len() != children.len() {
                return Err(Error::Parse(format!(
                    "node {id}: {} children but {} weights",
                    children.len(),
                    weights.len()
                )));
            }
            if let Some(w) = weights.iter().find(|&&w| w < 0.0) {
                return Err(Error::Parse(format!("node {id}: negative weight {w}")));
            }
            Ok(SpnNode::Sum { children, weights })
        }
        "product" => Ok(SpnNode::Product {
            children: children(doc.children)?,
        }),
        "leaf" => {
            need("var_indices", doc.var_indices.is_some())?;
            need("means", doc.means.is_some())?;
            need("variances", doc.variances.is_some())?;
            let means = decode_reals(&doc.means.unwrap_or_default(), &ctx)?;
            let variances = decode_reals(&doc.variances.unwrap_or_default(), &ctx)?;
            if let Some(v) = variances.iter().find(|&&v| v <= 0.0) {
                return Err(Error::Parse(format!("node {id}: non-positive variance {v}")));
            }
            GaussianLeaf::new(doc.var_indices.unwrap_or_default(), means, variances)
                .map(SpnNode::Leaf)
                .map_err(|e| Error::Parse(format!("node {id}: {e}")))
        }
        other => Err(Error::Parse(format!("node {id}: unknown node type `{other}`"))),
    }
}

fn spn_from_text(text: &str) -> Result<SpnGraph> {
    let doc: SpnDocument = serde_json::from_str(text).map_err(json_err)?;
    let count = doc.nodes.len();
    let mut nodes = Vec::with_capacity(count);
    for (pos, node) in doc.nodes.into_iter().enumerate() {
        if node.id != pos {
            return Err(Error::Parse(format!(
                "node {} listed at position {pos}; ids must equal their position",
                node.id
            )));
        }
        nodes.push(node_from_doc(node, count)?);
    }
    if doc.root >= count {
        return Err(Error::Parse(format!("root {} does not exist ({count} nodes)", doc.root)));
    }
    SpnGraph::new(nodes, NodeId(doc.root), doc.num_variables)
        .map_err(|e| Error::Parse(e.to_string()))
}

fn gmm_from_text(text: &str) -> Result<DiagonalGmm> {
    let doc: GmmDocument = serde_json::from_str(text).map_err(json_err)?;
    let k = doc.components.len();
    let b = doc.num_variables;
    let mut weights = Vec::with_capacity(k);
    let mut means = Array2::zeros((k, b));
    let mut variances = Array2::zeros((k, b));
    for (c, comp) in doc.components.iter().enumerate() {
        let ctx = || format!("component {c}");
        if comp.means.len() != b || comp.variances.len() != b {
            return Err(Error::Parse(format!(
                "component {c}: expected {b} means and variances"
            )));
        }
        weights.push(decode_real(&comp.weight, &ctx)?);
        for (d, (m, v)) in comp.means.iter().zip(&comp.variances).enumerate() {
            means[[c, d]] = decode_real(m, &ctx)?;
            variances[[c, d]] = decode_real(v, &ctx)?;
        }
    }
    DiagonalGmm::new(weights, means, variances).map_err(|e| Error::Parse(e.to_string()))
}

/// A speaker model of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum SpeakerModel {
    Spn(SpnGraph),
    Gmm(DiagonalGmm),
}

impl SpeakerModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SpeakerModel::Spn(_) => "spn",
            SpeakerModel::Gmm(_) => "gmm",
        }
    }

    pub fn num_variables(&self) -> usize {
        match self {
            SpeakerModel::Spn(g) => g.num_variables(),
            SpeakerModel::Gmm(g) => g.num_variables(),
        }
    }

    pub fn log_density(&self, evidence: &crate::Evidence) -> Result<f64> {
        match self {
            SpeakerModel::Spn(g) => g.log_density(evidence),
            SpeakerModel::Gmm(g) => g.log_density(evidence),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            SpeakerModel::Spn(g) => g.parameter_count(),
            SpeakerModel::Gmm(g) => g.parameter_count(),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            SpeakerModel::Spn(g) => spn_to_string(g),
            SpeakerModel::Gmm(g) => gmm_to_string(g),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        match read_header(text)?.kind.as_str() {
            "spn" => spn_from_text(text).map(SpeakerModel::Spn),
            "gmm" => gmm_from_text(text).map(SpeakerModel::Gmm),
            other => Err(Error::Parse(format!("unknown model kind `{other}`"))),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> SpnGraph {
        let leaf = |v, m, s| SpnNode::Leaf(GaussianLeaf::univariate(v, m, s).unwrap());
        SpnGraph::new(
            vec![
                SpnNode::Sum {
                    children: vec![NodeId(1), NodeId(2)],
                    weights: vec![0.1 + 0.2, 0.7],
                },
                SpnNode::Product {
                    children: vec![NodeId(3), NodeId(4)],
                },
                SpnNode::Product {
                    children: vec![NodeId(5), NodeId(6)],
                },
                leaf(0, std::f64::consts::PI, 1.0 / 3.0),
                leaf(1, -1e-300, 2.0),
                leaf(0, 1e10, 0.5),
                leaf(1, 0.0, 7.25),
            ],
            NodeId(0),
            2,
        )
        .unwrap()
    }

    #[test]
    fn spn_round_trip_is_exact() {
        let g = fixture();
        let text = spn_to_string(&g);
        assert!(text.starts_with("{\n  \"magic\": \"spn-asi-model\""));
        let back = SpeakerModel::from_text(&text).unwrap();
        assert_eq!(back, SpeakerModel::Spn(g));
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn real_encoding_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-308, 1.7976931348623157e308, 123456.789] {
            assert_eq!(encode_real(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(encode_real(0.5), "5.0000000000000000e-1");
    }

    fn edit(text: &str, from: &str, to: &str) -> String {
        assert!(text.contains(from), "fixture text lacks {from}");
        text.replacen(from, to, 1)
    }

    #[test]
    fn dangling_child_names_the_node() {
        let text = spn_to_string(&fixture());
        let bad = edit(&text, "\"children\": [\n        3,", "\"children\": [\n        9,");
        let err = SpeakerModel::from_text(&bad).unwrap_err().to_string();
        assert!(err.contains("node 1") && err.contains("child 9"), "{err}");
    }

    #[test]
    fn negative_variance_is_rejected() {
        let text = spn_to_string(&fixture());
        let bad = edit(&text, "\"7.2500000000000000e0\"", "\"-7.2500000000000000e0\"");
        let err = SpeakerModel::from_text(&bad).unwrap_err().to_string();
        assert!(err.contains("node 6") && err.contains("variance"), "{err}");
    }

    #[test]
    fn unknown_kind_and_version_are_rejected() {
        let text = spn_to_string(&fixture());
        let bad = edit(&text, "\"type\": \"product\"", "\"type\": \"max\"");
        let err = SpeakerModel::from_text(&bad).unwrap_err().to_string();
        assert!(err.contains("node 1") && err.contains("max"), "{err}");
        let bad = edit(&text, "\"version\": 1", "\"version\": 2");
        assert!(SpeakerModel::from_text(&bad).unwrap_err().to_string().contains("version 2"));
        let bad = edit(&text, "spn-asi-model", "something-else");
        assert!(SpeakerModel::from_text(&bad).is_err());
        assert!(SpeakerModel::from_text(&text[..text.len() / 2]).is_err());
    }

    #[test]
    fn gmm_round_trip() {
        let g = DiagonalGmm::new(
            vec![0.3, 0.7],
            ndarray::array![[0.1, -2.0], [3.0, 1e-7]],
            ndarray::array![[1.0, 0.25], [2.0, 1e-4]],
        )
        .unwrap();
        let text = gmm_to_string(&g);
        let back = SpeakerModel::from_text(&text).unwrap();
        assert_eq!(back, SpeakerModel::Gmm(g));
        assert_eq!(back.kind(), "gmm");
    }
}
