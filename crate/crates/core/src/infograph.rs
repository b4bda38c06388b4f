//! Information graph over reachable sets, label sets and noise information sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::blockmat::NodeSet;
use crate::netgraph::DelayMatrix;

/// A primitive random vector: `x0^node` when `step == -1`, otherwise `w_step^node`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NoiseSymbol {
    pub step: i64,
    pub node: usize,
}

impl NoiseSymbol {
    pub fn initial(node: usize) -> Self {
        NoiseSymbol { step: -1, node }
    }

    pub fn label(&self, ids: &[u32]) -> String {
        let id = ids.get(self.node).copied().unwrap_or(self.node as u32);
        if self.step < 0 {
            format!("x0^{id}")
        } else {
            format!("w{}^{id}", self.step)
        }
    }
}

pub type SymbolSet = BTreeSet<NoiseSymbol>;

/// Nodes `s_k^j`, their unique descendants, and where each noise enters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InfoGraph {
    plant_nodes: usize,
    nodes: Vec<NodeSet>,
    descendant: Vec<usize>,
    roots: Vec<usize>,
}

impl InfoGraph {
    /// Enumerate `s_k^j = {i : D^{ij} <= k}` for every `j` until the chain stalls.
    pub fn build(delays: &DelayMatrix) -> Self {
        let n = delays.size();
        let reach = |j: usize, k: u32| -> NodeSet {
            (0..n).filter(|&i| delays.get(i, j).within(k)).collect()
        };
        let mut edges: BTreeMap<NodeSet, NodeSet> = BTreeMap::new();
        let mut root_sets = Vec::with_capacity(n);
        for j in 0..n {
            let mut k = 0;
            let mut cur = reach(j, 0);
            root_sets.push(cur.clone());
            loop {
                let next = reach(j, k + 1);
                let done = next == cur;
                edges.insert(cur, next.clone());
                if done {
                    break;
                }
                cur = next;
                k += 1;
            }
        }
        let nodes: Vec<NodeSet> = edges.keys().cloned().collect();
        let index = |s: &NodeSet| nodes.binary_search(s).expect("descendant is a node");
        let descendant = edges.values().map(index).collect();
        let roots = root_sets.iter().map(index).collect();
        InfoGraph {
            plant_nodes: n,
            nodes,
            descendant,
            roots,
        }
    }

    pub fn plant_nodes(&self) -> usize {
        self.plant_nodes
    }

    /// Nodes in canonical order; indices into this slice identify info nodes.
    pub fn nodes(&self) -> &[NodeSet] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, r: usize) -> &NodeSet {
        &self.nodes[r]
    }

    pub fn index_of(&self, set: &NodeSet) -> Option<usize> {
        self.nodes.binary_search(set).ok()
    }

    pub fn descendant(&self, r: usize) -> usize {
        self.descendant[r]
    }

    pub fn is_self_loop(&self, r: usize) -> bool {
        self.descendant[r] == r
    }

    pub fn self_loops(&self) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.is_self_loop(r)).collect()
    }

    /// All `r` with `r -> s`, including `s` itself when it has a self-loop.
    pub fn predecessors(&self, s: usize) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.descendant[r] == s).collect()
    }

    /// The node `s_0^i` that plant noise `w^i` enters.
    pub fn root(&self, i: usize) -> usize {
        self.roots[i]
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    /// Plant nodes `i` with `w^i -> s`.
    pub fn rooted_at(&self, s: usize) -> Vec<usize> {
        (0..self.plant_nodes).filter(|&i| self.roots[i] == s).collect()
    }

    pub fn is_root(&self, s: usize) -> bool {
        self.roots.contains(&s)
    }

    /// Info nodes containing plant node `i`.
    pub fn containing(&self, i: usize) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.nodes[r].contains(i)).collect()
    }

    pub fn labels(&self, ids: &[u32]) -> Vec<String> {
        self.nodes.iter().map(|s| s.label(ids)).collect()
    }

    pub fn to_dot(&self, ids: &[u32]) -> String {
        let labels = self.labels(ids);
        let mut out = String::from("digraph info {\n  rankdir=LR;\n");
        for (r, l) in labels.iter().enumerate() {
            let _ = writeln!(out, "  s{r} [label=\"{l}\"];");
        }
        for i in 0..self.plant_nodes {
            let id = ids.get(i).copied().unwrap_or(i as u32);
            let _ = writeln!(out, "  w{i} [label=\"w{id}\", shape=plaintext];");
            let _ = writeln!(out, "  w{i} -> s{};", self.roots[i]);
        }
        for (r, &s) in self.descendant.iter().enumerate() {
            let _ = writeln!(out, "  s{r} -> s{s};");
        }
        out.push_str("}\n");
        out
    }

    pub fn dump(&self, ids: &[u32]) -> InfoGraphDump {
        let to_ids = |s: &NodeSet| s.iter().map(|i| ids[i]).collect::<Vec<_>>();
        InfoGraphDump {
            nodes: self.nodes.iter().map(to_ids).collect(),
            edges: self
                .descendant
                .iter()
                .enumerate()
                .map(|(r, &s)| DumpEdge {
                    from: to_ids(&self.nodes[r]),
                    to: to_ids(&self.nodes[s]),
                })
                .collect(),
            roots: (0..self.plant_nodes)
                .map(|i| (ids[i].to_string(), to_ids(&self.nodes[self.roots[i]])))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DumpEdge {
    pub from: Vec<u32>,
    pub to: Vec<u32>,
}

/// Serializable form with user-facing node ids.
#[derive(Clone, Debug, Serialize)]
pub struct InfoGraphDump {
    pub nodes: Vec<Vec<u32>>,
    pub edges: Vec<DumpEdge>,
    pub roots: BTreeMap<String, Vec<u32>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PropertyReport {
    pub node_count: usize,
    pub lower_bound: usize,
    pub upper_bound: usize,
    pub violations: Vec<String>,
}

impl PropertyReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} info nodes (bounds {}..={})",
            self.node_count, self.lower_bound, self.upper_bound
        )?;
        for v in &self.violations {
            write!(f, "\n  violation: {v}")?;
        }
        Ok(())
    }
}

/// Check the unique-descendant, self-loop reachability and size-bound properties.
pub fn check_properties(ig: &InfoGraph, n: usize) -> PropertyReport {
    let m = ig.len();
    let mut violations = Vec::new();
    if ig.descendant.len() != m {
        violations.push(format!(
            "{} descendant entries for {m} nodes",
            ig.descendant.len()
        ));
    }
    for r in 0..m.min(ig.descendant.len()) {
        let mut cur = r;
        let mut steps = 0;
        while !ig.is_self_loop(cur) && steps < m {
            cur = ig.descendant[cur];
            steps += 1;
        }
        if !ig.is_self_loop(cur) || steps >= m.max(1) {
            violations.push(format!("node {r} does not reach a self-loop in fewer than {m} steps"));
        }
        if !ig.nodes[r].is_subset(&ig.nodes[ig.descendant[r]]) {
            violations.push(format!("node {r} is not contained in its descendant"));
        }
    }
    let upper = (n * n).saturating_sub(n) + 1;
    if m < n || m > upper {
        violations.push(format!("{m} nodes outside bounds {n}..={upper}"));
    }
    for i in 0..n.min(ig.roots.len()) {
        if !ig.nodes[ig.roots[i]].contains(i) {
            violations.push(format!("root of w^{i} does not contain node {i}"));
        }
    }
    PropertyReport {
        node_count: m,
        lower_bound: n,
        upper_bound: upper,
        violations,
    }
}

/// Label sets `L_t^s` for every info node, by the forward recursion.
pub fn label_sets(ig: &InfoGraph, t: usize) -> Vec<SymbolSet> {
    let mut cur: Vec<SymbolSet> = vec![SymbolSet::new(); ig.len()];
    for i in 0..ig.plant_nodes {
        cur[ig.root(i)].insert(NoiseSymbol::initial(i));
    }
    for step in 0..t {
        let mut next: Vec<SymbolSet> = vec![SymbolSet::new(); ig.len()];
        for i in 0..ig.plant_nodes {
            next[ig.root(i)].insert(NoiseSymbol {
                step: step as i64,
                node: i,
            });
        }
        for (r, set) in cur.into_iter().enumerate() {
            next[ig.descendant(r)].extend(set);
        }
        cur = next;
    }
    cur
}

/// `Î_t^i = {w_{k-1}^j : 0 <= k <= t - D^{ij}}` for every plant node `i`.
pub fn noise_info_sets(delays: &DelayMatrix, t: usize) -> Vec<SymbolSet> {
    let n = delays.size();
    (0..n)
        .map(|i| {
            let mut set = SymbolSet::new();
            for j in 0..n {
                if let Some(d) = delays.get(i, j).finite() {
                    let d = d as i64;
                    for k in 0..=(t as i64 - d) {
                        set.insert(NoiseSymbol { step: k - 1, node: j });
                    }
                }
            }
            set
        })
        .collect()
}

/// The same sets built by `Î_t^i = {w_{t-1}^j : D^{ij}=0} ∪ ⋃_{D^{ij}<=1} Î_{t-1}^j`.
pub fn noise_info_sets_recursive(delays: &DelayMatrix, t: usize) -> Vec<SymbolSet> {
    let n = delays.size();
    let mut cur: Vec<SymbolSet> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| delays.get(i, j).within(0))
                .map(NoiseSymbol::initial)
                .collect()
        })
        .collect();
    for step in 1..=t {
        cur = (0..n)
            .map(|i| {
                let mut set = SymbolSet::new();
                for (j, prev) in cur.iter().enumerate() {
                    let d = delays.get(i, j);
                    if d.within(0) {
                        set.insert(NoiseSymbol {
                            step: step as i64 - 1,
                            node: j,
                        });
                    }
                    if d.within(1) {
                        set.extend(prev.iter().copied());
                    }
                }
                set
            })
            .collect();
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::netgraph::{delay_matrix, Edge, NetworkGraph};

    fn labels_of(ig: &InfoGraph) -> Vec<String> {
        ig.labels(&[1, 2, 3, 4])
    }

    fn sym(step: i64, id: usize) -> NoiseSymbol {
        NoiseSymbol { step, node: id - 1 }
    }

    #[test]
    fn example1_info_graph() {
        let ig = InfoGraph::build(&delay_matrix(&fixtures::example1_graph()).unwrap());
        assert_eq!(labels_of(&ig), ["{1}", "{1,2,3}", "{2,3}", "{3}"]);
        let desc: Vec<_> = (0..4).map(|r| ig.descendant(r)).collect();
        assert_eq!(desc, [1, 1, 1, 3]);
        assert_eq!(ig.roots(), &[0, 2, 3]);
        assert_eq!(ig.self_loops(), [1, 3]);
    }

    #[test]
    fn example8_info_graph() {
        let ig = InfoGraph::build(&delay_matrix(&fixtures::example8_graph()).unwrap());
        assert_eq!(
            labels_of(&ig),
            ["{1}", "{1,2,3}", "{1,2,3,4}", "{2}", "{2,3,4}", "{3}", "{3,4}"]
        );
        let desc: Vec<_> = (0..7).map(|r| ig.descendant(r)).collect();
        assert_eq!(desc, [1, 2, 2, 4, 4, 6, 6]);
        assert_eq!(ig.roots(), &[0, 3, 5, 6]);
    }

    #[test]
    fn single_node_info_graph() {
        let g = NetworkGraph::new(vec![1], vec![]);
        let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
        assert_eq!(labels_of(&ig), ["{1}"]);
        assert!(ig.is_self_loop(0));
        assert_eq!(ig.roots(), &[0]);
    }

    #[test]
    fn three_cycle_attains_upper_bound() {
        let e = |from, to| Edge { from, to, delay: 1 };
        let g = NetworkGraph::new(vec![1, 2, 3], vec![e(1, 2), e(2, 3), e(3, 1)]);
        let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
        let report = check_properties(&ig, 3);
        assert!(report.is_ok(), "{report}");
        assert_eq!(ig.len(), 7);
    }

    #[test]
    fn zero_delay_pair_attains_lower_bound() {
        let g = NetworkGraph::new(vec![1, 2], vec![Edge { from: 1, to: 2, delay: 0 }]);
        let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
        assert_eq!(ig.labels(&[1, 2]), ["{1,2}", "{2}"]);
        assert!(check_properties(&ig, 2).is_ok());
    }

    #[test]
    fn example1_label_sets() {
        let ig = InfoGraph::build(&delay_matrix(&fixtures::example1_graph()).unwrap());
        let l0 = label_sets(&ig, 0);
        assert_eq!(l0[0], SymbolSet::from([sym(-1, 1)]));
        assert!(l0[1].is_empty());
        assert_eq!(l0[2], SymbolSet::from([sym(-1, 2)]));
        assert_eq!(l0[3], SymbolSet::from([sym(-1, 3)]));
        for t in 2..5i64 {
            let l = label_sets(&ig, t as usize);
            assert_eq!(l[0], SymbolSet::from([sym(t - 1, 1)]));
            assert_eq!(l[2], SymbolSet::from([sym(t - 1, 2)]));
            let own: SymbolSet = (-1..t).map(|k| sym(k, 3)).collect();
            assert_eq!(l[3], own);
            assert_eq!(l[1].len(), 3 * (t as usize + 1) - 2 - own.len());
        }
    }

    #[test]
    fn single_node_label_set_is_whole_history() {
        let g = NetworkGraph::new(vec![1], vec![]);
        let ig = InfoGraph::build(&delay_matrix(&g).unwrap());
        let l = label_sets(&ig, 3);
        assert_eq!(l[0], (-1..3).map(|k| sym(k, 1)).collect());
    }

    #[test]
    fn example1_noise_info_sets() {
        let d = delay_matrix(&fixtures::example1_graph()).unwrap();
        let i1 = noise_info_sets(&d, 1);
        assert_eq!(i1[0], SymbolSet::from([sym(-1, 1), sym(0, 1), sym(-1, 2)]));
        assert_eq!(
            i1[2],
            SymbolSet::from([sym(-1, 1), sym(-1, 2), sym(0, 2), sym(-1, 3), sym(0, 3)])
        );
        let i0 = noise_info_sets(&d, 0);
        assert_eq!(i0[1], SymbolSet::from([sym(-1, 2)]));
        assert_eq!(i0[2], SymbolSet::from([sym(-1, 2), sym(-1, 3)]));
    }
}
