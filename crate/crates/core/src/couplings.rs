//! Per-dimension couplings of two categorical draws.
//!
//! Each coupling is built from antithetic Bernoulli pairs `b = 1{u < p}`,
//! `b~ = 1{1 − u < p}` with one fresh uniform per binary variable. Pushing the
//! two bit sequences through the stick-breaking or tree decoder gives a pair
//! `(z, z~)` whose marginals are both `q`, while `z = z~` is made unlikely.
//!
//! [`CouplingJoint`] holds the exact per-dimension pmf of `(z_k, z~_k)`; it is
//! what the importance weights and the enumeration oracle are checked
//! against.

use ndarray::Array2;
use rand::Rng;

use crate::dist::{
    routing_set_row, sb_decode_row, tree_decode_row, BinarySeqSample, CategoricalSample, ProbTable, StickParams,
    TreeParams,
};
use crate::{Error, Result};

/// Largest category count [`sb_coupling_joint`] accepts.
pub const MAX_JOINT_CATEGORIES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AntitheticPair {
    pub b: u8,
    pub b_tilde: u8,
    pub u: f64,
}

pub fn antithetic_bernoulli(p: f64, u: f64) -> AntitheticPair {
    AntitheticPair { b: u8::from(u < p), b_tilde: u8::from(1.0 - u < p), u }
}

/// Joint pmf of an antithetic pair, indexed `[b][b~]`.
pub fn antithetic_joint_pmf(p: f64) -> [[f64; 2]; 2] {
    let off = p.min(1.0 - p);
    [[(1.0 - 2.0 * p).max(0.0), off], [off, (2.0 * p - 1.0).max(0.0)]]
}

/// A coupled pair of categorical draws.
///
/// `z` and `z_tilde` carry original category labels; `bits` and
/// `bits_tilde` are the underlying binary draws in the construction's own
/// index space (relabeled sticks or tree nodes).
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledCatPair {
    pub z: CategoricalSample,
    pub z_tilde: CategoricalSample,
    /// `q(z_k) q(z~_k) / p(z_k, z~_k)` where `z_k ≠ z~_k`, 0 on the diagonal.
    /// Empty for tree pairs.
    pub weights: Vec<f64>,
    pub bits: BinarySeqSample,
    pub bits_tilde: BinarySeqSample,
    /// Routing sets `I(b)`, `I(b~)` per dimension (tree pairs only).
    pub routing: Option<(Vec<Vec<usize>>, Vec<Vec<usize>>)>,
}

/// Exact per-dimension joint pmf of `(z_k, z~_k)` in original labels.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingJoint {
    pub tables: Vec<Array2<f64>>,
}

impl CouplingJoint {
    pub fn dims(&self) -> usize {
        self.tables.len()
    }

    /// Row and column marginals of dimension `k`.
    pub fn marginals(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let t = &self.tables[k];
        (t.rows().into_iter().map(|r| r.sum()).collect(), t.columns().into_iter().map(|c| c.sum()).collect())
    }

    /// Largest deviation of either marginal from `probs`.
    pub fn max_marginal_error(&self, probs: &ProbTable) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.dims() {
            let (a, b) = self.marginals(k);
            for c in 0..a.len() {
                let q = probs.get(k, c);
                worst = worst.max((a[c] - q).abs()).max((b[c] - q).abs());
            }
        }
        worst
    }
}

/// `q ⊗ q` in every dimension.
pub fn independent_joint(probs: &ProbTable) -> CouplingJoint {
    CouplingJoint {
        tables: probs
            .probs()
            .rows()
            .into_iter()
            .map(|r| {
                let c = r.len();
                Array2::from_shape_fn((c, c), |(i, j)| r[i] * r[j])
            })
            .collect(),
    }
}

/// True iff every off-diagonal cell has positive mass.
pub fn support_check(joint: &CouplingJoint) -> bool {
    joint.tables.iter().all(|t| t.indexed_iter().all(|((i, j), &p)| i == j || p > 0.0))
}

fn draw_antithetic_bits<R: Rng + ?Sized>(
    probs: impl Fn(usize, usize) -> f64,
    k: usize,
    n: usize,
    rng: &mut R,
) -> (BinarySeqSample, BinarySeqSample) {
    let mut b = Array2::zeros((k, n));
    let mut bt = Array2::zeros((k, n));
    for kk in 0..k {
        for i in 0..n {
            let pair = antithetic_bernoulli(probs(kk, i), rng.random::<f64>());
            b[[kk, i]] = pair.b;
            bt[[kk, i]] = pair.b_tilde;
        }
    }
    (BinarySeqSample { bits: b }, BinarySeqSample { bits: bt })
}

/// Importance weight `q(z) q(z~) / p(z, z~)` of the ascending stick-breaking
/// coupling, for `z ≠ z~` given in the stick's (relabeled) index space:
///
/// `Π_{i < m} σ(−α_i)² / (1 − 2σ(α_i)) · σ(−α_m)` with `m = min(z, z~)`.
pub fn sb_importance_weight(stick: &StickParams, k: usize, z: usize, z_tilde: usize) -> Result<f64> {
    if z == z_tilde {
        return Err(Error::DiagonalWeight(z));
    }
    if let Some((i, p)) = stick.first_non_ascending(k) {
        return Err(Error::NotAscending { stick: i, prob: p });
    }
    let m = z.min(z_tilde);
    let mut w = 1.0;
    for i in 0..m {
        let s = stick.break_prob(k, i);
        w *= (1.0 - s) * (1.0 - s) / (1.0 - 2.0 * s);
    }
    Ok(w * (1.0 - stick.break_prob(k, m)))
}

/// Same ratio for an arbitrary stick order, from the closed-form pair
/// probability. `None` when the pair has zero probability under the
/// coupling.
pub fn sb_pair_weight_general(stick: &StickParams, k: usize, z: usize, z_tilde: usize) -> Option<f64> {
    if z == z_tilde {
        return None;
    }
    let (lo, hi) = (z.min(z_tilde), z.max(z_tilde));
    let c = stick.categories();
    let s = |i: usize| if i == c - 1 { 1.0 } else { stick.break_prob(k, i) };
    let q = |i: usize| (0..i).map(|j| 1.0 - s(j)).product::<f64>() * s(i);
    let mut p = 1.0;
    for i in 0..lo {
        p *= antithetic_joint_pmf(s(i))[0][0];
    }
    p *= antithetic_joint_pmf(s(lo))[1][0];
    for j in lo + 1..hi {
        p *= 1.0 - s(j);
    }
    p *= s(hi);
    (p > 0.0).then(|| q(lo) * q(hi) / p)
}

/// Assemble a stick-breaking pair from its bit draws.
pub fn sb_pair_from_bits(stick: &StickParams, bits: BinarySeqSample, bits_tilde: BinarySeqSample) -> CoupledCatPair {
    let k = stick.dims();
    let ascending = stick.is_ascending();
    let mut z = Vec::with_capacity(k);
    let mut zt = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for kk in 0..k {
        let r = sb_decode_row(bits.bits.row(kk).as_slice().expect("standard layout"));
        let rt = sb_decode_row(bits_tilde.bits.row(kk).as_slice().expect("standard layout"));
        let w = if r == rt {
            0.0
        } else if ascending {
            sb_importance_weight(stick, kk, r, rt).expect("ascending and off-diagonal")
        } else {
            sb_pair_weight_general(stick, kk, r, rt).unwrap_or(0.0)
        };
        z.push(stick.original_label(kk, r));
        zt.push(stick.original_label(kk, rt));
        weights.push(w);
    }
    CoupledCatPair { z: CategoricalSample(z), z_tilde: CategoricalSample(zt), weights, bits, bits_tilde, routing: None }
}

/// Draw from the stick-breaking coupling: one uniform per `(k, stick)`.
pub fn sb_coupling_sample<R: Rng + ?Sized>(stick: &StickParams, rng: &mut R) -> CoupledCatPair {
    let (bits, bits_tilde) =
        draw_antithetic_bits(|k, i| stick.break_prob(k, i), stick.dims(), stick.categories() - 1, rng);
    sb_pair_from_bits(stick, bits, bits_tilde)
}

/// Exact joint of the stick-breaking coupling.
///
/// Sweeps the sticks in order, tracking the mass of every
/// (decided-or-not, decided-or-not) state; this is the enumeration of all
/// antithetic bit-pair outcomes with common prefixes merged.
pub fn sb_coupling_joint(stick: &StickParams) -> Result<CouplingJoint> {
    let c = stick.categories();
    if c > MAX_JOINT_CATEGORIES {
        return Err(Error::TooLarge { size: c as u128, limit: MAX_JOINT_CATEGORIES as u128 });
    }
    let undecided = c;
    let mut tables = Vec::with_capacity(stick.dims());
    for k in 0..stick.dims() {
        let mut mass = Array2::<f64>::zeros((c + 1, c + 1));
        mass[[undecided, undecided]] = 1.0;
        for i in 0..c - 1 {
            let pmf = antithetic_joint_pmf(stick.break_prob(k, i));
            let mut next = Array2::<f64>::zeros((c + 1, c + 1));
            for ((s, t), &m) in mass.indexed_iter() {
                if m == 0.0 {
                    continue;
                }
                for (b, row) in pmf.iter().enumerate() {
                    for (bt, &p) in row.iter().enumerate() {
                        let s2 = if s == undecided && b == 1 { i } else { s };
                        let t2 = if t == undecided && bt == 1 { i } else { t };
                        next[[s2, t2]] += m * p;
                    }
                }
            }
            mass = next;
        }
        let mut table = Array2::zeros((c, c));
        for ((s, t), &m) in mass.indexed_iter() {
            let s = if s == undecided { c - 1 } else { s };
            let t = if t == undecided { c - 1 } else { t };
            table[[stick.original_label(k, s), stick.original_label(k, t)]] += m;
        }
        tables.push(table);
    }
    Ok(CouplingJoint { tables })
}

pub fn tree_pair_from_bits(bits: BinarySeqSample, bits_tilde: BinarySeqSample) -> CoupledCatPair {
    let mut z = Vec::new();
    let mut zt = Vec::new();
    let mut routes = Vec::new();
    let mut routes_t = Vec::new();
    for (row, row_t) in bits.bits.rows().into_iter().zip(bits_tilde.bits.rows()) {
        let (row, row_t) = (row.as_slice().expect("layout"), row_t.as_slice().expect("layout"));
        z.push(tree_decode_row(row));
        zt.push(tree_decode_row(row_t));
        routes.push(routing_set_row(row));
        routes_t.push(routing_set_row(row_t));
    }
    CoupledCatPair {
        z: CategoricalSample(z),
        z_tilde: CategoricalSample(zt),
        weights: Vec::new(),
        bits,
        bits_tilde,
        routing: Some((routes, routes_t)),
    }
}

/// Draw from the tree coupling: one uniform per `(k, node)`.
pub fn tree_coupling_sample<R: Rng + ?Sized>(tree: &TreeParams, rng: &mut R) -> CoupledCatPair {
    let (bits, bits_tilde) =
        draw_antithetic_bits(|k, i| tree.right_prob(k, i), tree.dims(), tree.categories() - 1, rng);
    tree_pair_from_bits(bits, bits_tilde)
}

/// Exact joint of the tree coupling, by recursion over subtrees: when the
/// two walks split at a node, the rest of each walk uses disjoint,
/// independent routing variables.
pub fn tree_coupling_joint(tree: &TreeParams) -> CouplingJoint {
    let c = tree.categories();

    fn leaf_marginal(tree: &TreeParams, k: usize, node: usize, lo: usize, n: usize, out: &mut [f64], scale: f64) {
        if n == 1 {
            out[lo] += scale;
            return;
        }
        let half = n / 2;
        let p = tree.right_prob(k, node);
        leaf_marginal(tree, k, node + 1, lo, half, out, scale * (1.0 - p));
        leaf_marginal(tree, k, node + half, lo + half, half, out, scale * p);
    }

    #[allow(clippy::too_many_arguments)]
    fn joint(
        tree: &TreeParams,
        k: usize,
        node: usize,
        lo: usize,
        n: usize,
        c: usize,
        out: &mut Array2<f64>,
        scale: f64,
    ) {
        if n == 1 {
            out[[lo, lo]] += scale;
            return;
        }
        let half = n / 2;
        let pmf = antithetic_joint_pmf(tree.right_prob(k, node));
        let (left, right) = ((node + 1, lo), (node + half, lo + half));
        joint(tree, k, left.0, left.1, half, c, out, scale * pmf[0][0]);
        joint(tree, k, right.0, right.1, half, c, out, scale * pmf[1][1]);
        for (b, bt) in [(0usize, 1usize), (1, 0)] {
            let w = scale * pmf[b][bt];
            if w == 0.0 {
                continue;
            }
            let (zn, zlo) = if b == 0 { left } else { right };
            let (tn, tlo) = if bt == 0 { left } else { right };
            let mut mz = vec![0.0; c];
            let mut mt = vec![0.0; c];
            leaf_marginal(tree, k, zn, zlo, half, &mut mz, 1.0);
            leaf_marginal(tree, k, tn, tlo, half, &mut mt, 1.0);
            for i in zlo..zlo + half {
                for j in tlo..tlo + half {
                    out[[i, j]] += w * mz[i] * mt[j];
                }
            }
        }
    }

    let tables = (0..tree.dims())
        .map(|k| {
            let mut t = Array2::zeros((c, c));
            joint(tree, k, 0, 0, c, c, &mut t, 1.0);
            t
        })
        .collect();
    CouplingJoint { tables }
}
