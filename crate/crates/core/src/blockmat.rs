//! Node-partitioned vectors and matrices.
//!
//! Every system matrix is split into blocks indexed by plant nodes. Nodes are
//! addressed by their *position* in the partition (`0..n`), which follows the
//! ascending order of the user-facing node ids. Subsets of nodes are always
//! stacked in that order.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A non-empty or empty set of node positions, kept sorted and deduplicated.
///
/// The ordering used for collections of sets is: smallest element first, then
/// size, then lexicographic. Information-graph nodes are enumerated in this
/// order throughout the crate.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct NodeSet(Vec<usize>);

impl NodeSet {
    pub fn new(members: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = members.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        NodeSet(v)
    }

    pub fn singleton(i: usize) -> Self {
        NodeSet(vec![i])
    }

    /// All of `0..n`.
    pub fn full(n: usize) -> Self {
        NodeSet((0..n).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    /// Position of node `i` inside the stacked set, if present.
    pub fn position(&self, i: usize) -> Option<usize> {
        self.0.binary_search(&i).ok()
    }

    pub fn is_subset(&self, other: &NodeSet) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    pub fn without(&self, i: usize) -> NodeSet {
        NodeSet(self.0.iter().copied().filter(|&j| j != i).collect())
    }

    /// Render with user-facing ids, e.g. `{1,2,3}`.
    pub fn label(&self, ids: &[u32]) -> String {
        let mut out = String::from("{");
        for (k, &i) in self.0.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", ids.get(i).copied().unwrap_or(i as u32));
        }
        out.push('}');
        out
    }
}

impl Ord for NodeSet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .first()
            .cmp(&other.0.first())
            .then(self.0.len().cmp(&other.0.len()))
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for NodeSet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl FromIterator<usize> for NodeSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        NodeSet::new(iter)
    }
}

/// Per-node block sizes along one matrix axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Blocking {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl Blocking {
    pub fn new(dims: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        for &d in &dims {
            offsets.push(acc);
            acc += d;
        }
        offsets.push(acc);
        Blocking { dims, offsets }
    }

    pub fn node_count(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, i: usize) -> usize {
        self.dims[i]
    }

    pub fn total(&self) -> usize {
        self.offsets[self.dims.len()]
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    fn check(&self, set: &NodeSet) -> Result<()> {
        match set.iter().find(|&i| i >= self.dims.len()) {
            Some(bad) => Err(Error::InvalidSubset(format!(
                "node position {bad} outside partition of {} nodes",
                self.dims.len()
            ))),
            None => Ok(()),
        }
    }

    /// Total dimension of the stacked subset.
    pub fn subset_dim(&self, set: &NodeSet) -> usize {
        set.iter().map(|i| self.dims[i]).sum()
    }

    /// Scalar indices of the stacked subset, in partition order.
    pub fn indices(&self, set: &NodeSet) -> Result<Vec<usize>> {
        self.check(set)?;
        Ok(set.iter().flat_map(|i| self.range(i)).collect())
    }

    /// Offset of node `i`'s block inside the stacked vector of `set`.
    pub fn offset_within(&self, set: &NodeSet, i: usize) -> Option<usize> {
        let pos = set.position(i)?;
        Some(set.as_slice()[..pos].iter().map(|&j| self.dims[j]).sum())
    }
}

/// Plant nodes with their state and input dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPartition {
    node_ids: Vec<u32>,
    states: Blocking,
    inputs: Blocking,
}

impl BlockPartition {
    /// `node_ids` must be strictly increasing; every dimension must be positive.
    pub fn new(node_ids: Vec<u32>, state_dims: Vec<usize>, input_dims: Vec<usize>) -> Result<Self> {
        if node_ids.is_empty() {
            return Err(Error::Dimension("partition has no nodes".into()));
        }
        if state_dims.len() != node_ids.len() || input_dims.len() != node_ids.len() {
            return Err(Error::Dimension(format!(
                "{} node ids but {} state dims and {} input dims",
                node_ids.len(),
                state_dims.len(),
                input_dims.len()
            )));
        }
        if node_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Dimension(
                "node ids must be unique and listed in increasing order".into(),
            ));
        }
        if let Some(k) = state_dims.iter().chain(&input_dims).position(|&d| d == 0) {
            let node = node_ids[k % node_ids.len()];
            return Err(Error::Dimension(format!("node {node} has a zero dimension")));
        }
        Ok(BlockPartition {
            node_ids,
            states: Blocking::new(state_dims),
            inputs: Blocking::new(input_dims),
        })
    }

    /// Scalar state and input per node, ids `1..=n`.
    pub fn scalar(n: usize) -> Self {
        BlockPartition::new((1..=n as u32).collect(), vec![1; n], vec![1; n])
            .expect("scalar partition is valid")
    }

    pub fn node_ids(&self) -> &[u32] {
        &self.node_ids
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.node_ids.binary_search(&id).ok()
    }

    pub fn states(&self) -> &Blocking {
        &self.states
    }

    pub fn inputs(&self) -> &Blocking {
        &self.inputs
    }

    pub fn all_nodes(&self) -> NodeSet {
        NodeSet::full(self.node_count())
    }
}

/// A dense matrix with node blocking on both axes.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    rows: Blocking,
    cols: Blocking,
    entries: DMatrix<f64>,
}

impl BlockMatrix {
    pub fn new(rows: Blocking, cols: Blocking, entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != rows.total() || entries.ncols() != cols.total() {
            return Err(Error::Dimension(format!(
                "matrix is {}x{} but blocking expects {}x{}",
                entries.nrows(),
                entries.ncols(),
                rows.total(),
                cols.total()
            )));
        }
        Ok(BlockMatrix { rows, cols, entries })
    }

    pub fn zeros(rows: Blocking, cols: Blocking) -> Self {
        let entries = DMatrix::zeros(rows.total(), cols.total());
        BlockMatrix { rows, cols, entries }
    }

    pub fn rows(&self) -> &Blocking {
        &self.rows
    }

    pub fn cols(&self) -> &Blocking {
        &self.cols
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    /// Block `(i, j)` as an owned matrix.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let (r, c) = (self.rows.range(i), self.cols.range(j));
        self.entries
            .view((r.start, c.start), (r.len(), c.len()))
            .into_owned()
    }

    pub fn set_block(&mut self, i: usize, j: usize, value: &DMatrix<f64>) -> Result<()> {
        let (r, c) = (self.rows.range(i), self.cols.range(j));
        if value.shape() != (r.len(), c.len()) {
            return Err(Error::Dimension(format!(
                "block ({i},{j}) is {}x{}, got {}x{}",
                r.len(),
                c.len(),
                value.nrows(),
                value.ncols()
            )));
        }
        self.entries
            .view_mut((r.start, c.start), (r.len(), c.len()))
            .copy_from(value);
        Ok(())
    }

    /// The stacked block `[M^{ij}]` for `i` in `rows`, `j` in `cols`.
    pub fn submatrix(&self, rows: &NodeSet, cols: &NodeSet) -> Result<DMatrix<f64>> {
        let ri = self.rows.indices(rows)?;
        let ci = self.cols.indices(cols)?;
        Ok(self.entries.select_rows(&ri).select_columns(&ci))
    }
}

/// The 0/1 block matrix `I^{target,source}`.
///
/// One of the two sets must contain the other, so the selector either embeds
/// a subvector into a larger stack or extracts one.
pub fn selector(target: &NodeSet, source: &NodeSet, blocking: &Blocking) -> Result<DMatrix<f64>> {
    blocking.check(target)?;
    blocking.check(source)?;
    if !target.is_subset(source) && !source.is_subset(target) {
        return Err(Error::InvalidSelector(format!(
            "sets {:?} and {:?} are not nested",
            target.as_slice(),
            source.as_slice()
        )));
    }
    let mut out = DMatrix::zeros(blocking.subset_dim(target), blocking.subset_dim(source));
    for i in target.iter().filter(|&i| source.contains(i)) {
        let r = blocking.offset_within(target, i).unwrap();
        let c = blocking.offset_within(source, i).unwrap();
        for k in 0..blocking.dim(i) {
            out[(r + k, c + k)] = 1.0;
        }
    }
    Ok(out)
}

/// Extract the stacked subvector of `set` from a full vector.
pub fn extract(full: &DVector<f64>, blocking: &Blocking, set: &NodeSet) -> Result<DVector<f64>> {
    let idx = blocking.indices(set)?;
    Ok(DVector::from_iterator(idx.len(), idx.iter().map(|&k| full[k])))
}

/// Add the stacked subvector of `set` into a full vector.
pub fn embed_add(
    full: &mut DVector<f64>,
    blocking: &Blocking,
    set: &NodeSet,
    sub: &DVector<f64>,
) -> Result<()> {
    let idx = blocking.indices(set)?;
    if idx.len() != sub.len() {
        return Err(Error::Dimension(format!(
            "subvector has length {}, set needs {}",
            sub.len(),
            idx.len()
        )));
    }
    for (k, &g) in idx.iter().enumerate() {
        full[g] += sub[k];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_scalar() -> Blocking {
        Blocking::new(vec![1, 1, 1])
    }

    #[test]
    fn submatrix_picks_row_three_cols_two_three() {
        let a = DMatrix::from_row_slice(3, 3, &[1., 2., 0., 3., 4., 0., 5., 6., 7.]);
        let m = BlockMatrix::new(three_scalar(), three_scalar(), a.clone()).unwrap();
        let sub = m
            .submatrix(&NodeSet::singleton(2), &NodeSet::new([1, 2]))
            .unwrap();
        assert_eq!(sub, DMatrix::from_row_slice(1, 2, &[6., 7.]));
        assert_eq!(m.submatrix(&NodeSet::full(3), &NodeSet::full(3)).unwrap(), a);
    }

    #[test]
    fn submatrix_rejects_unknown_node() {
        let m = BlockMatrix::zeros(three_scalar(), three_scalar());
        let err = m.submatrix(&NodeSet::singleton(3), &NodeSet::singleton(0));
        assert!(matches!(err, Err(Error::InvalidSubset(_))));
    }

    #[test]
    fn selector_column_for_third_node() {
        let s = selector(&NodeSet::full(3), &NodeSet::singleton(2), &three_scalar()).unwrap();
        assert_eq!(s, DMatrix::from_column_slice(3, 1, &[0., 0., 1.]));
    }

    #[test]
    fn selector_same_set_is_identity() {
        let b = Blocking::new(vec![2, 3]);
        let s = selector(&NodeSet::singleton(1), &NodeSet::singleton(1), &b).unwrap();
        assert_eq!(s, DMatrix::identity(3, 3));
    }

    #[test]
    fn selector_incomparable_is_error() {
        let err = selector(&NodeSet::new([0, 1]), &NodeSet::new([1, 2]), &three_scalar());
        assert!(matches!(err, Err(Error::InvalidSelector(_))));
    }

    #[test]
    fn selector_commutes_with_block_lower_triangular_matrix() {
        // A^{13} = A^{23} = 0, so column 3 of A only feeds node 3.
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 1.0, 0., 2.0, -1.0, 0., 0.3, 0.7, 1.5]);
        let all = NodeSet::full(3);
        let three = NodeSet::singleton(2);
        let sel = selector(&all, &three, &three_scalar()).unwrap();
        let a33 = DMatrix::from_element(1, 1, 1.5);
        assert_eq!(&a * &sel, &sel * a33);
    }

    #[test]
    fn node_set_order_is_min_then_size_then_lex() {
        let mut sets = [NodeSet::new([0, 1, 2, 3]),
            NodeSet::new([2, 3]),
            NodeSet::new([0]),
            NodeSet::new([1, 2, 3]),
            NodeSet::new([0, 1, 2]),
            NodeSet::new([2]),
            NodeSet::new([1])];
        sets.sort();
        let got: Vec<_> = sets.iter().map(|s| s.label(&[1, 2, 3, 4])).collect();
        assert_eq!(
            got,
            ["{1}", "{1,2,3}", "{1,2,3,4}", "{2}", "{2,3,4}", "{3}", "{3,4}"]
        );
    }

    #[test]
    fn partition_rejects_zero_dims_and_unsorted_ids() {
        assert!(BlockPartition::new(vec![1, 2], vec![1, 0], vec![1, 1]).is_err());
        assert!(BlockPartition::new(vec![2, 1], vec![1, 1], vec![1, 1]).is_err());
        assert!(BlockPartition::new(vec![1, 1], vec![1, 1], vec![1, 1]).is_err());
    }

    #[test]
    fn extract_then_embed_restores_subvector() {
        let b = Blocking::new(vec![2, 1, 2]);
        let v = DVector::from_vec(vec![1., 2., 3., 4., 5.]);
        let set = NodeSet::new([0, 2]);
        let sub = extract(&v, &b, &set).unwrap();
        assert_eq!(sub.as_slice(), &[1., 2., 4., 5.]);
        let mut w = DVector::zeros(5);
        embed_add(&mut w, &b, &set, &sub).unwrap();
        assert_eq!(w.as_slice(), &[1., 2., 0., 4., 5.]);
    }
}
