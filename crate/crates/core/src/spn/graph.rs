use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::VARIANCE_FLOOR;

/// Index into an [`SpnGraph`]'s node table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Diagonal Gaussian over a subset of the variables.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLeaf {
    var_indices: Vec<usize>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianLeaf {
    /// `var_indices` must be strictly increasing; every variance must be
    /// finite and at least [`VARIANCE_FLOOR`].
    pub fn new(var_indices: Vec<usize>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if var_indices.is_empty() {
            return Err(Error::Input("leaf has an empty variable set".into()));
        }
        if means.len() != var_indices.len() || variances.len() != var_indices.len() {
            return Err(Error::Input(format!(
                "leaf over {} variables has {} means and {} variances",
                var_indices.len(),
                means.len(),
                variances.len()
            )));
        }
        if var_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input(format!(
                "leaf variable indices {var_indices:?} are not strictly increasing"
            )));
        }
        if let Some(m) = means.iter().find(|m| !m.is_finite()) {
            return Err(Error::Input(format!("leaf mean {m} is not finite")));
        }
        if let Some(v) = variances.iter().find(|&&v| !(v.is_finite() && v >= VARIANCE_FLOOR)) {
            return Err(Error::Input(format!(
                "leaf variance {v} is below the floor {VARIANCE_FLOOR} or not finite"
            )));
        }
        Ok(GaussianLeaf {
            var_indices,
            means,
            variances,
        })
    }

    pub fn univariate(var: usize, mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![var], vec![mean], vec![variance])
    }

    pub fn var_indices(&self) -> &[usize] {
        &self.var_indices
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Iterates `(variable, mean, variance)` triples.
    pub fn dims(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.var_indices
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((&v, &m), &s)| (v, m, s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpnNode {
    Sum { children: Vec<NodeId>, weights: Vec<f64> },
    Product { children: Vec<NodeId> },
    Leaf(GaussianLeaf),
}

impl SpnNode {
    pub fn children(&self) -> &[NodeId] {
        match self {
            SpnNode::Sum { children, .. } | SpnNode::Product { children } => children,
            SpnNode::Leaf(_) => &[],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SpnNode::Sum { .. } => "sum",
            SpnNode::Product { .. } => "product",
            SpnNode::Leaf(_) => "leaf",
        }
    }
}

/// Outcome of [`SpnGraph::validate`]. Defects are collected, never thrown.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityReport {
    pub is_acyclic: bool,
    /// Every node is reachable from the root.
    pub is_connected: bool,
    pub is_complete: bool,
    pub is_decomposable: bool,
    /// The root's scope is `{0..num_variables-1}`.
    pub root_scope_full: bool,
    pub weights_nonneg: bool,
    pub weights_normalized: bool,
    pub offending_nodes: Vec<(NodeId, String)>,
}

impl ValidityReport {
    /// Structurally valid for inference. Unnormalised weights are allowed.
    pub fn is_valid(&self) -> bool {
        self.is_acyclic
            && self.is_connected
            && self.is_complete
            && self.is_decomposable
            && self.root_scope_full
            && self.weights_nonneg
    }

    fn flag(&mut self, node: NodeId, reason: String) {
        self.offending_nodes.push((node, reason));
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "acyclic:            {}", self.is_acyclic)?;
        writeln!(f, "connected:          {}", self.is_connected)?;
        writeln!(f, "complete:           {}", self.is_complete)?;
        writeln!(f, "decomposable:       {}", self.is_decomposable)?;
        writeln!(f, "root scope full:    {}", self.root_scope_full)?;
        writeln!(f, "weights nonneg:     {}", self.weights_nonneg)?;
        write!(f, "weights normalized: {}", self.weights_normalized)?;
        for (id, reason) in &self.offending_nodes {
            write!(f, "\n  node {id}: {reason}")?;
        }
        Ok(())
    }
}

/// Children-before-parents order over the nodes reachable from the root.
#[derive(Debug)]
pub(crate) struct EvalPlan {
    pub(crate) order: Vec<usize>,
}

/// A rooted DAG of sum, product and Gaussian leaf nodes.
///
/// The node table is immutable once built; derived graphs (e.g. after
/// [`normalize_weights`](SpnGraph::normalize_weights)) are new values. The
/// evaluation plan is computed and validated on first use and cached.
#[derive(Debug, Clone)]
pub struct SpnGraph {
    nodes: Vec<SpnNode>,
    root: NodeId,
    num_variables: usize,
    plan: OnceLock<std::result::Result<Arc<EvalPlan>, String>>,
}

impl PartialEq for SpnGraph {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
            && self.num_variables == other.num_variables
            && self.nodes == other.nodes
    }
}

const UNVISITED: u8 = 0;
const ON_STACK: u8 = 1;
const DONE: u8 = 2;

impl SpnGraph {
    /// Builds a graph after checking referential integrity: the root and
    /// every child id must exist, sum nodes need one weight per child, and
    /// leaf variables must be `< num_variables`. Semantic defects (cycles,
    /// scope violations) are left for [`validate`](Self::validate).
    pub fn new(nodes: Vec<SpnNode>, root: NodeId, num_variables: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Structure("node table is empty".into()));
        }
        if num_variables == 0 {
            return Err(Error::Structure("graph has no variables".into()));
        }
        if root.0 >= nodes.len() {
            return Err(Error::Structure(format!(
                "root {root} out of range ({} nodes)",
                nodes.len()
            )));
        }
        for (i, node) in nodes.iter().enumerate() {
            if let Some(c) = node.children().iter().find(|c| c.0 >= nodes.len()) {
                return Err(Error::Structure(format!(
                    "node #{i} references missing child {c}"
                )));
            }
            match node {
                SpnNode::Sum { children, weights } => {
                    if children.is_empty() || children.len() != weights.len() {
                        return Err(Error::Structure(format!(
                            "sum node #{i} has {} children and {} weights",
                            children.len(),
                            weights.len()
                        )));
                    }
                    if weights.iter().any(|w| !w.is_finite()) {
                        return Err(Error::Structure(format!(
                            "sum node #{i} has a non-finite weight"
                        )));
                    }
                }
                SpnNode::Product { children } if children.is_empty() => {
                    return Err(Error::Structure(format!("product node #{i} has no children")));
                }
                SpnNode::Leaf(leaf) => {
                    if let Some(v) = leaf.var_indices().iter().find(|&&v| v >= num_variables) {
                        return Err(Error::Structure(format!(
                            "leaf #{i} uses variable {v} but the graph has {num_variables}"
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(SpnGraph {
            nodes,
            root,
            num_variables,
            plan: OnceLock::new(),
        })
    }

    pub fn nodes(&self) -> &[SpnNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &SpnNode {
        &self.nodes[id.0]
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn num_variables(&self) -> usize {
        self.num_variables
    }

    /// Post-order DFS from the root. Returns the order or the first node
    /// found on a cycle.
    fn reachable_post_order(&self) -> std::result::Result<Vec<usize>, NodeId> {
        let mut state = vec![UNVISITED; self.nodes.len()];
        let mut order = Vec::with_capacity(self.nodes.len());
        // (node, next child index)
        let mut stack = vec![(self.root.0, 0usize)];
        state[self.root.0] = ON_STACK;
        while let Some(&mut (n, ref mut next)) = stack.last_mut() {
            let children = self.nodes[n].children();
            if *next < children.len() {
                let c = children[*next].0;
                *next += 1;
                match state[c] {
                    UNVISITED => {
                        state[c] = ON_STACK;
                        stack.push((c, 0));
                    }
                    ON_STACK => return Err(NodeId(c)),
                    _ => {}
                }
            } else {
                state[n] = DONE;
                order.push(n);
                stack.pop();
            }
        }
        Ok(order)
    }

    /// Nodes lying on a cycle anywhere in the table (reachable or not).
    fn nodes_on_cycles(&self) -> Vec<NodeId> {
        let n = self.nodes.len();
        let mut state = vec![UNVISITED; n];
        let mut flagged = vec![false; n];
        for start in 0..n {
            if state[start] != UNVISITED {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            state[start] = ON_STACK;
            while let Some(&mut (v, ref mut next)) = stack.last_mut() {
                let children = self.nodes[v].children();
                if *next < children.len() {
                    let c = children[*next].0;
                    *next += 1;
                    match state[c] {
                        UNVISITED => {
                            state[c] = ON_STACK;
                            stack.push((c, 0));
                        }
                        ON_STACK => {
                            // Everything on the stack from `c` upwards forms the cycle.
                            let pos = stack.iter().position(|&(s, _)| s == c).unwrap_or(0);
                            for &(s, _) in &stack[pos..] {
                                flagged[s] = true;
                            }
                        }
                        _ => {}
                    }
                } else {
                    state[v] = DONE;
                    stack.pop();
                }
            }
        }
        (0..n).filter(|&i| flagged[i]).map(NodeId).collect()
    }

    /// Scopes of every node, indexed by node id. Requires an acyclic table.
    fn all_scopes(&self) -> Result<Vec<Vec<usize>>> {
        let cyc = self.nodes_on_cycles();
        if let Some(c) = cyc.first() {
            return Err(Error::Structure(format!("cycle through node {c}")));
        }
        let mut scopes: Vec<Option<Vec<usize>>> = vec![None; self.nodes.len()];
        // Any acyclic table can be processed by repeated post-order from each node.
        for start in 0..self.nodes.len() {
            if scopes[start].is_some() {
                continue;
            }
            let mut stack = vec![(start, false)];
            while let Some((n, expanded)) = stack.pop() {
                if scopes[n].is_some() {
                    continue;
                }
                if expanded {
                    let scope = match &self.nodes[n] {
                        SpnNode::Leaf(leaf) => leaf.var_indices().to_vec(),
                        node => {
                            let mut s: Vec<usize> = node
                                .children()
                                .iter()
                                .flat_map(|c| scopes[c.0].as_deref().unwrap_or(&[]).iter().copied())
                                .collect();
                            s.sort_unstable();
                            s.dedup();
                            s
                        }
                    };
                    scopes[n] = Some(scope);
                } else {
                    stack.push((n, true));
                    for c in self.nodes[n].children() {
                        if scopes[c.0].is_none() {
                            stack.push((c.0, false));
                        }
                    }
                }
            }
        }
        Ok(scopes.into_iter().map(|s| s.unwrap_or_default()).collect())
    }

    /// Sorted set of variables below `node`.
    pub fn scope(&self, node: NodeId) -> Result<Vec<usize>> {
        if node.0 >= self.nodes.len() {
            return Err(Error::Input(format!("node {node} out of range")));
        }
        Ok(self.all_scopes()?.swap_remove(node.0))
    }

    /// Checks every structural property and lists each offending node.
    pub fn validate(&self) -> ValidityReport {
        let mut report = ValidityReport {
            is_acyclic: true,
            is_connected: true,
            is_complete: true,
            is_decomposable: true,
            root_scope_full: true,
            weights_nonneg: true,
            weights_normalized: true,
            offending_nodes: Vec::new(),
        };

        let cyc = self.nodes_on_cycles();
        if !cyc.is_empty() {
            report.is_acyclic = false;
            for id in cyc {
                report.flag(id, "lies on a cycle".into());
            }
        }

        // Reachability ignores cycles: plain flood fill from the root.
        let mut reached = vec![false; self.nodes.len()];
        let mut stack = vec![self.root.0];
        reached[self.root.0] = true;
        while let Some(n) = stack.pop() {
            for c in self.nodes[n].children() {
                if !reached[c.0] {
                    reached[c.0] = true;
                    stack.push(c.0);
                }
            }
        }
        for (i, r) in reached.iter().enumerate() {
            if !r {
                report.is_connected = false;
                report.flag(NodeId(i), "unreachable from the root".into());
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if let SpnNode::Sum { weights, .. } = node {
                if weights.iter().any(|&w| w < 0.0) {
                    report.weights_nonneg = false;
                    report.flag(NodeId(i), format!("negative weight in {weights:?}"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    report.weights_normalized = false;
                }
            }
        }

        if report.is_acyclic {
            let scopes = self.all_scopes().expect("acyclic table");
            for (i, node) in self.nodes.iter().enumerate() {
                match node {
                    SpnNode::Sum { children, .. } => {
                        let first = &scopes[children[0].0];
                        if let Some(c) = children.iter().find(|c| &scopes[c.0] != first) {
                            report.is_complete = false;
                            report.flag(
                                NodeId(i),
                                format!(
                                    "incomplete sum: child {} has scope {:?}, child {} has scope {:?}",
                                    children[0], first, c, scopes[c.0]
                                ),
                            );
                        }
                    }
                    SpnNode::Product { children } => {
                        let mut seen = vec![false; self.num_variables];
                        let mut overlap = Vec::new();
                        for c in children {
                            for &v in &scopes[c.0] {
                                if std::mem::replace(&mut seen[v], true) {
                                    overlap.push(v);
                                }
                            }
                        }
                        if !overlap.is_empty() {
                            overlap.sort_unstable();
                            overlap.dedup();
                            report.is_decomposable = false;
                            report.flag(
                                NodeId(i),
                                format!("non-decomposable product: children share variables {overlap:?}"),
                            );
                        }
                    }
                    SpnNode::Leaf(_) => {}
                }
            }
            let root_scope = &scopes[self.root.0];
            if root_scope.len() != self.num_variables {
                report.root_scope_full = false;
                report.flag(
                    self.root,
                    format!(
                        "root scope covers {} of {} variables",
                        root_scope.len(),
                        self.num_variables
                    ),
                );
            }
        } else {
            report.is_complete = false;
            report.is_decomposable = false;
            report.root_scope_full = false;
        }

        report
    }

    /// Validated evaluation order, computed once per graph.
    pub(crate) fn plan(&self) -> Result<Arc<EvalPlan>> {
        self.plan
            .get_or_init(|| {
                let report = self.validate();
                if !report.is_valid() {
                    let reasons: Vec<String> = report
                        .offending_nodes
                        .iter()
                        .map(|(id, r)| format!("{id}: {r}"))
                        .collect();
                    return Err(reasons.join("; "));
                }
                self.reachable_post_order()
                    .map(|order| Arc::new(EvalPlan { order }))
                    .map_err(|c| format!("cycle through node {c}"))
            })
            .clone()
            .map_err(Error::Structure)
    }

    /// Rescales every sum node's weights to sum to one.
    pub fn normalize_weights(&self) -> Result<SpnGraph> {
        let mut nodes = self.nodes.clone();
        for (i, node) in nodes.iter_mut().enumerate() {
            if let SpnNode::Sum { weights, .. } = node {
                if weights.iter().any(|&w| w < 0.0) {
                    return Err(Error::Input(format!("sum node #{i} has a negative weight")));
                }
                let total: f64 = weights.iter().sum();
                if total <= 0.0 {
                    return Err(Error::Degenerate(format!(
                        "model: sum node #{i} has all-zero weights"
                    )));
                }
                weights.iter_mut().for_each(|w| *w /= total);
            }
        }
        SpnGraph::new(nodes, self.root, self.num_variables)
    }

    /// Sum-node weights plus one mean and one variance per leaf dimension.
    pub fn parameter_count(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                SpnNode::Sum { weights, .. } => weights.len(),
                SpnNode::Product { .. } => 0,
                SpnNode::Leaf(leaf) => 2 * leaf.var_indices().len(),
            })
            .sum()
    }

    /// Node counts as `(sums, products, leaves)`.
    pub fn node_counts(&self) -> (usize, usize, usize) {
        self.nodes.iter().fold((0, 0, 0), |(s, p, l), n| match n {
            SpnNode::Sum { .. } => (s + 1, p, l),
            SpnNode::Product { .. } => (s, p + 1, l),
            SpnNode::Leaf(_) => (s, p, l + 1),
        })
    }

    /// Longest root-to-leaf path, counted in edges.
    pub fn depth(&self) -> Result<usize> {
        let plan = self.plan()?;
        let mut depth = vec![0usize; self.nodes.len()];
        for &n in &plan.order {
            depth[n] = self.nodes[n]
                .children()
                .iter()
                .map(|c| depth[c.0] + 1)
                .max()
                .unwrap_or(0);
        }
        Ok(depth[self.root.0])
    }
}
