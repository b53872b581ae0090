//! Categorical distribution plumbing.
//!
//! A factorial categorical distribution over `K` variables with `C`
//! categories each is stored as a `K × C` table, either of logits
//! ([`CategoricalParams`]) or of probabilities ([`ProbTable`]). Besides the
//! usual softmax / score / sampling helpers this module holds the two binary
//! reparameterizations used by the coupled estimators:
//!
//! - **stick-breaking**: `z = min{i : b_i = 1}` with
//!   `b_i ~ Bernoulli(q_i / Σ_{j≥i} q_j)` and an implicit terminal bit, stored
//!   as `K × (C−1)` stick logits `ln(q_i / Σ_{j>i} q_j)` in a chosen category
//!   order;
//! - **balanced tree**: `C − 1` routing bits laid out root first, then the
//!   left subtree block, then the right subtree block; node logits are
//!   `ln(right mass / left mass)`.
//!
//! [`sb_vjp`] and [`tree_vjp`] pull gradients with respect to those binary
//! logits back to categorical logits.

use ndarray::{Array2, ArrayView1};
use rand::Rng;

use crate::numeric::{is_power_of_two, sigmoid};
use crate::{Error, Result};

/// Floor applied to probabilities before building stick or tree logits.
pub const PROB_FLOOR: f64 = 1e-12;

const ROW_SUM_TOL: f64 = 1e-12;

/// Per-variable, per-category logits (`K × C`).
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalParams {
    logits: Array2<f64>,
}

impl CategoricalParams {
    pub fn new(logits: Array2<f64>) -> Result<Self> {
        let (k, c) = logits.dim();
        if k == 0 || c < 2 {
            return Err(Error::Shape(format!("need K >= 1 and C >= 2, got {k}x{c}")));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(Self { logits })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows_to_array(rows)?)
    }

    pub fn dims(&self) -> usize {
        self.logits.nrows()
    }

    pub fn categories(&self) -> usize {
        self.logits.ncols()
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn row(&self, k: usize) -> ArrayView1<'_, f64> {
        self.logits.row(k)
    }
}

/// Row-stochastic `K × C` probability table.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbTable {
    probs: Array2<f64>,
}

impl ProbTable {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        let (k, c) = probs.dim();
        if k == 0 || c < 2 {
            return Err(Error::Shape(format!("need K >= 1 and C >= 2, got {k}x{c}")));
        }
        for row in probs.rows() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidArgument(format!("invalid probability row {row}")));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!("row sums to {s}, not 1")));
            }
        }
        Ok(Self { probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows_to_array(rows)?)
    }

    /// Build from non-negative weights, normalizing each row.
    pub fn normalized(mut weights: Array2<f64>) -> Result<Self> {
        for mut row in weights.rows_mut() {
            let s: f64 = row.sum();
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("cannot normalize row {row}")));
            }
            row.mapv_inplace(|w| w / s);
        }
        Self::new(weights)
    }

    pub fn dims(&self) -> usize {
        self.probs.nrows()
    }

    pub fn categories(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn row(&self, k: usize) -> ArrayView1<'_, f64> {
        self.probs.row(k)
    }

    pub fn get(&self, k: usize, c: usize) -> f64 {
        self.probs[[k, c]]
    }

    /// Probability of a joint configuration.
    pub fn joint_prob(&self, z: &[usize]) -> f64 {
        z.iter().enumerate().map(|(k, &c)| self.probs[[k, c]]).product()
    }

    /// Entries floored at [`PROB_FLOOR`], rows renormalized.
    pub fn clamped(&self) -> ProbTable {
        let mut p = self.probs.mapv(|x| x.max(PROB_FLOOR));
        for mut row in p.rows_mut() {
            let s: f64 = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        ProbTable { probs: p }
    }
}

fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let k = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::Shape("ragged rows".into()));
    }
    Array2::from_shape_vec((k, c), rows.concat()).map_err(|e| Error::Shape(e.to_string()))
}

/// One category index per variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CategoricalSample(pub Vec<usize>);

impl CategoricalSample {
    pub fn validate(&self, categories: usize) -> Result<()> {
        for (dim, &value) in self.0.iter().enumerate() {
            if value >= categories {
                return Err(Error::CategoryOutOfRange { dim, value, categories });
            }
        }
        Ok(())
    }
}

impl std::ops::Deref for CategoricalSample {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

/// Gradient in categorical-logit space, optionally with the raw gradient in
/// the binary-logit space it was computed in.
#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate {
    pub cat: Array2<f64>,
    pub bin: Option<Array2<f64>>,
}

impl GradEstimate {
    pub fn zeros(k: usize, c: usize) -> Self {
        Self { cat: Array2::zeros((k, c)), bin: None }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_probs(params: &CategoricalParams) -> ProbTable {
    let mut probs = params.logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let s: f64 = row.sum();
        row.mapv_inplace(|x| x / s);
    }
    ProbTable { probs }
}

/// `∂ log q(z) / ∂ α_{k,c} = 1{z_k = c} − q_{k,c}`.
pub fn score_grad(probs: &ProbTable, z: &CategoricalSample) -> Result<GradEstimate> {
    check_sample(probs, z)?;
    let mut cat = probs.probs.mapv(|p| -p);
    for (k, &zk) in z.iter().enumerate() {
        cat[[k, zk]] += 1.0;
    }
    Ok(GradEstimate { cat, bin: None })
}

pub(crate) fn check_sample(probs: &ProbTable, z: &CategoricalSample) -> Result<()> {
    if z.len() != probs.dims() {
        return Err(Error::Shape(format!("sample has {} entries, table has {} rows", z.len(), probs.dims())));
    }
    z.validate(probs.categories())
}

/// Inverse-CDF sampling: the smallest `c` whose cumulative mass exceeds `u`.
pub fn sample_categorical_with_uniforms(probs: &ProbTable, uniforms: &[f64]) -> CategoricalSample {
    assert_eq!(uniforms.len(), probs.dims(), "one uniform per dimension");
    let c_max = probs.categories() - 1;
    let z = probs
        .probs
        .rows()
        .into_iter()
        .zip(uniforms)
        .map(|(row, &u)| {
            let mut cum = 0.0;
            for (c, &p) in row.iter().enumerate() {
                cum += p;
                if cum > u {
                    return c;
                }
            }
            // Rounding left the cumulative sum just below u: take the last
            // category with positive mass.
            row.iter().rposition(|&p| p > 0.0).unwrap_or(c_max)
        })
        .collect();
    CategoricalSample(z)
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &ProbTable, rng: &mut R) -> CategoricalSample {
    let us: Vec<f64> = (0..probs.dims()).map(|_| rng.random::<f64>()).collect();
    sample_categorical_with_uniforms(probs, &us)
}

/// Category ordering used by the stick-breaking construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoryOrder {
    /// Ascending probability; required for bounded importance weights.
    #[default]
    Ascending,
    Descending,
    /// The order in which the categories come.
    Default,
}

impl std::str::FromStr for CategoryOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascending" | "asc" => Ok(Self::Ascending),
            "descending" | "desc" => Ok(Self::Descending),
            "default" | "identity" => Ok(Self::Default),
            other => Err(Error::InvalidArgument(format!("unknown ordering {other:?}"))),
        }
    }
}

/// Result of relabeling categories. `perm[k][new] = original`.
#[derive(Clone, Debug)]
pub struct Relabel {
    pub perm: Vec<Vec<usize>>,
    pub probs: ProbTable,
}

/// Stable sort of every row by the given order.
pub fn relabel(probs: &ProbTable, order: CategoryOrder) -> Relabel {
    let (k, c) = probs.probs.dim();
    let mut perm = Vec::with_capacity(k);
    let mut out = Array2::zeros((k, c));
    for (kk, row) in probs.probs.rows().into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..c).collect();
        match order {
            CategoryOrder::Ascending => idx.sort_by(|&a, &b| row[a].total_cmp(&row[b])),
            CategoryOrder::Descending => idx.sort_by(|&a, &b| row[b].total_cmp(&row[a])),
            CategoryOrder::Default => {}
        }
        for (new, &orig) in idx.iter().enumerate() {
            out[[kk, new]] = row[orig];
        }
        perm.push(idx);
    }
    Relabel { perm, probs: ProbTable { probs: out } }
}

pub fn ascending_relabel(probs: &ProbTable) -> Relabel {
    relabel(probs, CategoryOrder::Ascending)
}

/// Stick-breaking logits in a relabeled category order.
///
/// `logits[[k, i]] = ln(r_i / Σ_{j>i} r_j)` where `r = probs[k, perm[k][·]]`
/// (after flooring). `σ(logits[[k, i]])` is the probability that stick `i`
/// breaks given that none of the earlier ones did.
#[derive(Clone, Debug)]
pub struct StickParams {
    logits: Array2<f64>,
    perm: Vec<Vec<usize>>,
    /// Floored, relabeled probabilities the logits were built from.
    relabeled: ProbTable,
}

impl StickParams {
    pub fn new(probs: &ProbTable, order: CategoryOrder) -> Result<Self> {
        let Relabel { perm, probs: relabeled } = relabel(&probs.clamped(), order);
        Self::from_relabeled(relabeled, perm)
    }

    /// Relabel with an explicit permutation (`perm[k][new] = original`).
    pub fn with_perm(probs: &ProbTable, perm: Vec<Vec<usize>>) -> Result<Self> {
        let clamped = probs.clamped();
        let (k, c) = clamped.probs.dim();
        if perm.len() != k {
            return Err(Error::Shape("one permutation per dimension".into()));
        }
        let mut out = Array2::zeros((k, c));
        for (kk, p) in perm.iter().enumerate() {
            let mut seen = vec![false; c];
            if p.len() != c || p.iter().any(|&i| i >= c || std::mem::replace(&mut seen[i], true)) {
                return Err(Error::InvalidArgument(format!("not a permutation: {p:?}")));
            }
            for (new, &orig) in p.iter().enumerate() {
                out[[kk, new]] = clamped.probs[[kk, orig]];
            }
        }
        Self::from_relabeled(ProbTable { probs: out }, perm)
    }

    fn from_relabeled(relabeled: ProbTable, perm: Vec<Vec<usize>>) -> Result<Self> {
        let (k, c) = relabeled.probs.dim();
        let mut logits = Array2::zeros((k, c - 1));
        for kk in 0..k {
            let row = relabeled.probs.row(kk);
            let tails = tail_sums(row);
            for i in 0..c - 1 {
                if tails[i + 1] <= 0.0 {
                    return Err(Error::ZeroTailMass(i));
                }
                logits[[kk, i]] = row[i].ln() - tails[i + 1].ln();
            }
        }
        Ok(Self { logits, perm, relabeled })
    }

    pub fn dims(&self) -> usize {
        self.logits.nrows()
    }

    pub fn categories(&self) -> usize {
        self.logits.ncols() + 1
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn perm(&self) -> &[Vec<usize>] {
        &self.perm
    }

    pub fn relabeled_probs(&self) -> &ProbTable {
        &self.relabeled
    }

    /// Break probability of stick `i` in dimension `k`.
    pub fn break_prob(&self, k: usize, i: usize) -> f64 {
        sigmoid(self.logits[[k, i]])
    }

    /// First stick (if any) in dimension `k` whose break probability exceeds
    /// one half.
    pub fn first_non_ascending(&self, k: usize) -> Option<(usize, f64)> {
        (0..self.logits.ncols()).map(|i| (i, self.break_prob(k, i))).find(|&(_, p)| p > 0.5)
    }

    pub fn is_ascending(&self) -> bool {
        (0..self.dims()).all(|k| self.first_non_ascending(k).is_none())
    }

    /// Map a relabeled category back to its original label.
    pub fn original_label(&self, k: usize, relabeled: usize) -> usize {
        self.perm[k][relabeled]
    }
}

/// Stick logits in the given (identity) order.
pub fn stick_logits(probs: &ProbTable) -> Result<StickParams> {
    StickParams::new(probs, CategoryOrder::Default)
}

fn tail_sums(row: ArrayView1<'_, f64>) -> Vec<f64> {
    let c = row.len();
    let mut tails = vec![0.0; c + 1];
    for i in (0..c).rev() {
        tails[i] = tails[i + 1] + row[i];
    }
    tails
}

/// `K × (C−1)` table of bits. For stick-breaking there is an implicit
/// terminal bit equal to one.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinarySeqSample {
    pub bits: Array2<u8>,
}

impl BinarySeqSample {
    pub fn new(bits: Array2<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("bits must be 0 or 1".into()));
        }
        Ok(Self { bits })
    }

    pub fn dims(&self) -> usize {
        self.bits.nrows()
    }

    pub fn categories(&self) -> usize {
        self.bits.ncols() + 1
    }
}

/// Index of the first set bit, or `C − 1` when none is set.
pub fn sb_decode_row(bits: &[u8]) -> usize {
    bits.iter().position(|&b| b == 1).unwrap_or(bits.len())
}

/// Decode in the stick's own (relabeled) index space.
pub fn sb_decode(sample: &BinarySeqSample) -> CategoricalSample {
    CategoricalSample(
        sample.bits.rows().into_iter().map(|r| sb_decode_row(r.as_slice().expect("standard layout"))).collect(),
    )
}

/// Internal node of a balanced tree in root-first block layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub index: usize,
    /// Leaves of the left subtree are `lo..mid`, of the right one `mid..hi`.
    pub lo: usize,
    pub mid: usize,
    pub hi: usize,
}

/// All internal nodes for `C` leaves, in index order.
pub fn tree_nodes(categories: usize) -> Result<Vec<TreeNode>> {
    if !is_power_of_two(categories) || categories < 2 {
        return Err(Error::NotPowerOfTwo(categories));
    }
    let mut nodes = Vec::with_capacity(categories - 1);
    fn walk(offset: usize, lo: usize, n: usize, out: &mut Vec<TreeNode>) {
        if n < 2 {
            return;
        }
        let half = n / 2;
        out.push(TreeNode { index: offset, lo, mid: lo + half, hi: lo + n });
        walk(offset + 1, lo, half, out);
        walk(offset + half, lo + half, half, out);
    }
    walk(0, 0, categories, &mut nodes);
    nodes.sort_by_key(|n| n.index);
    Ok(nodes)
}

/// Tree routing logits `ln(right mass / left mass)` per internal node.
#[derive(Clone, Debug)]
pub struct TreeParams {
    logits: Array2<f64>,
    nodes: Vec<TreeNode>,
    clamped: ProbTable,
}

impl TreeParams {
    pub fn new(probs: &ProbTable) -> Result<Self> {
        let nodes = tree_nodes(probs.categories())?;
        let clamped = probs.clamped();
        let k = clamped.dims();
        let mut logits = Array2::zeros((k, nodes.len()));
        for kk in 0..k {
            let row = clamped.probs.row(kk);
            for node in &nodes {
                let left: f64 = (node.lo..node.mid).map(|c| row[c]).sum();
                let right: f64 = (node.mid..node.hi).map(|c| row[c]).sum();
                logits[[kk, node.index]] = right.ln() - left.ln();
            }
        }
        Ok(Self { logits, nodes, clamped })
    }

    pub fn dims(&self) -> usize {
        self.logits.nrows()
    }

    pub fn categories(&self) -> usize {
        self.logits.ncols() + 1
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Probability of routing right at `node` in dimension `k`.
    pub fn right_prob(&self, k: usize, node: usize) -> f64 {
        sigmoid(self.logits[[k, node]])
    }

    pub fn clamped_probs(&self) -> &ProbTable {
        &self.clamped
    }
}

pub fn tree_logits(probs: &ProbTable) -> Result<TreeParams> {
    TreeParams::new(probs)
}

/// Follow the routing bits from the root; returns the leaf and the visited
/// nodes.
fn tree_walk(bits: &[u8]) -> (usize, Vec<usize>) {
    let mut node = 0;
    let mut lo = 0;
    let mut n = bits.len() + 1;
    let mut visited = Vec::new();
    while n > 1 {
        let half = n / 2;
        visited.push(node);
        if bits[node] == 0 {
            node += 1;
        } else {
            node += half;
            lo += half;
        }
        n = half;
    }
    (lo, visited)
}

pub fn tree_decode_row(bits: &[u8]) -> usize {
    tree_walk(bits).0
}

/// Nodes consulted on the way to the leaf (`log2 C` of them).
pub fn routing_set_row(bits: &[u8]) -> Vec<usize> {
    tree_walk(bits).1
}

pub fn tree_decode(sample: &BinarySeqSample) -> Result<CategoricalSample> {
    if !is_power_of_two(sample.categories()) {
        return Err(Error::NotPowerOfTwo(sample.categories()));
    }
    Ok(CategoricalSample(
        sample.bits.rows().into_iter().map(|r| tree_decode_row(r.as_slice().expect("standard layout"))).collect(),
    ))
}

pub fn routing_set(sample: &BinarySeqSample) -> Result<Vec<Vec<usize>>> {
    if !is_power_of_two(sample.categories()) {
        return Err(Error::NotPowerOfTwo(sample.categories()));
    }
    Ok(sample.bits.rows().into_iter().map(|r| routing_set_row(r.as_slice().expect("standard layout"))).collect())
}

fn check_bin_grad(bin_grad: &Array2<f64>, k: usize, c: usize) -> Result<()> {
    if bin_grad.dim() != (k, c - 1) {
        return Err(Error::Shape(format!("binary gradient is {:?}, expected ({k}, {})", bin_grad.dim(), c - 1)));
    }
    if bin_grad.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("binary gradient"));
    }
    Ok(())
}

/// Pull a stick-logit gradient back to categorical logits.
///
/// With `r` the relabeled probabilities and `T_i = Σ_{j≥i} r_j`,
/// `∂ stick_i / ∂ α_d = 1{perm(i) = d} − 1{d ∈ perm(i+1..)} q_d / T_{i+1}`.
pub fn sb_vjp(stick: &StickParams, bin_grad: &Array2<f64>) -> Result<GradEstimate> {
    let (k, c) = (stick.dims(), stick.categories());
    check_bin_grad(bin_grad, k, c)?;
    let mut cat = Array2::zeros((k, c));
    for kk in 0..k {
        let r = stick.relabeled.probs.row(kk);
        let tails = tail_sums(r);
        let perm = &stick.perm[kk];
        let mut acc = 0.0;
        for j in 0..c {
            // acc = Σ_{i<j} g_i / T_{i+1}
            cat[[kk, perm[j]]] -= r[j] * acc;
            if j < c - 1 {
                let g = bin_grad[[kk, j]];
                cat[[kk, perm[j]]] += g;
                acc += g / tails[j + 1];
            }
        }
    }
    Ok(GradEstimate { cat, bin: Some(bin_grad.clone()) })
}

/// Pull a tree-logit gradient back to categorical logits:
/// `∂ node / ∂ α_d = 1{d ∈ right} q_d / R − 1{d ∈ left} q_d / L`.
pub fn tree_vjp(tree: &TreeParams, bin_grad: &Array2<f64>) -> Result<GradEstimate> {
    let (k, c) = (tree.dims(), tree.categories());
    check_bin_grad(bin_grad, k, c)?;
    let mut cat = Array2::zeros((k, c));
    for kk in 0..k {
        let q = tree.clamped.probs.row(kk);
        for node in &tree.nodes {
            let g = bin_grad[[kk, node.index]];
            if g == 0.0 {
                continue;
            }
            let left: f64 = (node.lo..node.mid).map(|d| q[d]).sum();
            let right: f64 = (node.mid..node.hi).map(|d| q[d]).sum();
            for d in node.lo..node.mid {
                cat[[kk, d]] -= g * q[d] / left;
            }
            for d in node.mid..node.hi {
                cat[[kk, d]] += g * q[d] / right;
            }
        }
    }
    Ok(GradEstimate { cat, bin: Some(bin_grad.clone()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn probs(rows: &[&[f64]]) -> ProbTable {
        ProbTable::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_probs(&CategoricalParams::new(array![[0.0, 0.0, 0.0]]).unwrap());
        for c in 0..3 {
            assert!((p.get(0, c) - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_probs(&CategoricalParams::new(array![[2f64.ln(), 0.0, 0.0]]).unwrap());
        assert!((p.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((p.get(0, 1) - 0.25).abs() < 1e-15);
        let a = array![[0.3, -1.2, 2.0], [5.0, 5.0, -3.0]];
        let p1 = softmax_probs(&CategoricalParams::new(a.clone()).unwrap());
        let p2 = softmax_probs(&CategoricalParams::new(a + 7.0).unwrap());
        for (x, y) in p1.probs().iter().zip(p2.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(matches!(CategoricalParams::new(array![[0.0, f64::NAN]]), Err(Error::NonFinite(_))));
        assert!(CategoricalParams::new(array![[0.0]]).is_err());
    }

    #[test]
    fn score_examples() {
        let p = probs(&[&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]);
        let g = score_grad(&p, &CategoricalSample(vec![1])).unwrap().cat;
        assert!((g[[0, 0]] + 1.0 / 3.0).abs() < 1e-15);
        assert!((g[[0, 1]] - 2.0 / 3.0).abs() < 1e-15);
        let p = probs(&[&[0.5, 0.25, 0.25]]);
        let g = score_grad(&p, &CategoricalSample(vec![0])).unwrap().cat;
        assert_eq!(g.row(0).to_vec(), vec![0.5, -0.25, -0.25]);
        assert!(score_grad(&p, &CategoricalSample(vec![3])).is_err());
    }

    #[test]
    fn inverse_cdf_convention() {
        let p = probs(&[&[1.0, 0.0], &[0.5, 0.5]]);
        let z = sample_categorical_with_uniforms(&p, &[0.999, 0.3]);
        assert_eq!(z.0, vec![0, 0]);
        let z = sample_categorical_with_uniforms(&p, &[0.0, 0.5]);
        assert_eq!(z.0, vec![0, 1]);
    }

    #[test]
    fn relabel_examples() {
        let r = ascending_relabel(&probs(&[&[0.5, 0.2, 0.3]]));
        assert_eq!(r.perm[0], vec![1, 2, 0]);
        assert_eq!(r.probs.row(0).to_vec(), vec![0.2, 0.3, 0.5]);
        let r = ascending_relabel(&probs(&[&[0.2, 0.3, 0.5]]));
        assert_eq!(r.perm[0], vec![0, 1, 2]);
        let r = ascending_relabel(&probs(&[&[0.4, 0.4, 0.2]]));
        assert_eq!(r.perm[0], vec![2, 0, 1]);
    }

    #[test]
    fn stick_logit_examples() {
        let s = stick_logits(&probs(&[&[0.5, 0.5]])).unwrap();
        assert!(s.logits()[[0, 0]].abs() < 1e-12);
        let s = stick_logits(&probs(&[&[0.2, 0.3, 0.5]])).unwrap();
        assert!((s.logits()[[0, 0]] - 0.25f64.ln()).abs() < 1e-12);
        assert!((s.logits()[[0, 1]] - 0.6f64.ln()).abs() < 1e-12);
        assert!((s.logits()[[0, 0]] + 1.3863).abs() < 1e-4);
        assert!((s.logits()[[0, 1]] + 0.5108).abs() < 1e-4);
    }

    #[test]
    fn sb_decode_examples() {
        assert_eq!(sb_decode_row(&[1, 0]), 0);
        assert_eq!(sb_decode_row(&[1, 1]), 0);
        assert_eq!(sb_decode_row(&[0, 1]), 1);
        assert_eq!(sb_decode_row(&[0, 0]), 2);
    }

    #[test]
    fn tree_logit_examples() {
        let t = tree_logits(&probs(&[&[0.1, 0.2, 0.3, 0.4]])).unwrap();
        let l = t.logits();
        assert!((l[[0, 0]] - (0.7f64 / 0.3).ln()).abs() < 1e-12);
        assert!((l[[0, 1]] - 2f64.ln()).abs() < 1e-12);
        assert!((l[[0, 2]] - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((l[[0, 0]] - 0.8473).abs() < 1e-4);
        let t = tree_logits(&probs(&[&[0.125; 8]])).unwrap();
        assert!(t.logits().iter().all(|x| x.abs() < 1e-12));
        assert!(matches!(tree_logits(&probs(&[&[0.2, 0.3, 0.5]])), Err(Error::NotPowerOfTwo(3))));
    }

    #[test]
    fn tree_decode_examples() {
        for x in [0, 1] {
            assert_eq!(tree_decode_row(&[0, 0, x]), 0);
            assert_eq!(tree_decode_row(&[0, 1, x]), 1);
            assert_eq!(tree_decode_row(&[1, x, 0]), 2);
            assert_eq!(tree_decode_row(&[1, x, 1]), 3);
        }
        assert_eq!(routing_set_row(&[0, 1, 1]), vec![0, 1]);
        assert_eq!(routing_set_row(&[1, 0, 0]), vec![0, 2]);
        assert_eq!(routing_set_row(&[1]), vec![0]);
        assert_eq!(routing_set_row(&[0]), vec![0]);
    }

    /// Direct transcription of the recursive routing function
    /// (`half = len // 2 + 1`, 1-based leaves).
    fn recursive_t(b: &[u8]) -> usize {
        let half = b.len() / 2 + 1;
        if b.is_empty() {
            1
        } else if b[0] == 0 {
            recursive_t(&b[1..half])
        } else {
            half + recursive_t(&b[half..])
        }
    }

    #[test]
    fn tree_decode_matches_recursive_definition() {
        for c in [2usize, 4, 8, 16] {
            for pattern in 0u32..(1 << (c - 1)) {
                let bits: Vec<u8> = (0..c - 1).map(|i| ((pattern >> i) & 1) as u8).collect();
                assert_eq!(tree_decode_row(&bits) + 1, recursive_t(&bits), "C={c} bits={bits:?}");
                let set = routing_set_row(&bits);
                assert_eq!(set.len(), c.trailing_zeros() as usize);
                // Flipping a bit outside the routing set never changes the leaf.
                for i in (0..c - 1).filter(|i| !set.contains(i)) {
                    let mut flipped = bits.clone();
                    flipped[i] ^= 1;
                    assert_eq!(tree_decode_row(&flipped), tree_decode_row(&bits));
                }
            }
        }
    }

    #[test]
    fn tree_layout_is_root_first_blocks() {
        let nodes = tree_nodes(8).unwrap();
        let got: Vec<_> = nodes.iter().map(|n| (n.index, n.lo, n.mid, n.hi)).collect();
        assert_eq!(
            got,
            vec![(0, 0, 4, 8), (1, 0, 2, 4), (2, 0, 1, 2), (3, 2, 3, 4), (4, 4, 6, 8), (5, 4, 5, 6), (6, 6, 7, 8),]
        );
    }

    #[test]
    fn vjp_zero_in_zero_out() {
        let p = probs(&[&[0.1, 0.2, 0.3, 0.4], &[0.25; 4]]);
        let s = StickParams::new(&p, CategoryOrder::Ascending).unwrap();
        let g = sb_vjp(&s, &Array2::zeros((2, 3))).unwrap();
        assert!(g.cat.iter().all(|&x| x == 0.0));
        let t = tree_logits(&p).unwrap();
        let g = tree_vjp(&t, &Array2::zeros((2, 3))).unwrap();
        assert!(g.cat.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ascending_bound_holds() {
        let p = probs(&[&[0.05, 0.6, 0.1, 0.25]]);
        let s = StickParams::new(&p, CategoryOrder::Ascending).unwrap();
        assert!(s.is_ascending());
        for i in 0..2 {
            assert!(s.break_prob(0, i) <= 1.0 / 3.0 + 1e-15);
        }
        let s = StickParams::new(&p, CategoryOrder::Descending).unwrap();
        assert!(!s.is_ascending());
    }

    #[test]
    fn explicit_permutation_validated() {
        let p = probs(&[&[0.2, 0.3, 0.5]]);
        assert!(StickParams::with_perm(&p, vec![vec![0, 0, 1]]).is_err());
        let s = StickParams::with_perm(&p, vec![vec![2, 0, 1]]).unwrap();
        assert_eq!(s.original_label(0, 0), 2);
    }
}
