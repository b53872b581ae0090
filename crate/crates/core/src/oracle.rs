//! Ground truth for the estimators.
//!
//! - [`exact_objective_grad`] sums over every configuration.
//! - [`exact_estimator_expectation`] sums an estimator's output over every
//!   outcome of its finite randomness, weighted by the exact probability.
//! - [`mc_estimator_mean`] is the statistical fallback for the
//!   Dirichlet-augmented estimators.
//! - [`rejection_conditional_mean`] checks the ARS+ conditional interval.
//! - [`finite_diff_check`] checks the chain-rule adapters and the gradient
//!   oracle itself.
//!
//! Coupled estimators are enumerated one output row at a time. Row `k` of a
//! coupled estimate depends on dimension `k` only through its own bit pairs,
//! and on every other dimension only through the decoded pair
//! `(z_j, z~_j)`. So row `k` is summed over the antithetic outcomes of
//! dimension `k`'s bits times the exact pair pmf of the other dimensions,
//! which is far smaller than the full bit-level product space.

use ndarray::{Array2, Zip};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ars::{argmin_config, sample_dirichlet_uniform, swapped_row};
use crate::couplings::{
    antithetic_joint_pmf, sb_coupling_joint, sb_pair_from_bits, tree_coupling_joint, tree_pair_from_bits,
    CoupledCatPair, CouplingJoint,
};
use crate::dist::{
    sb_vjp, softmax_probs, tree_vjp, BinarySeqSample, CategoricalParams, CategoricalSample, CategoryOrder,
    GradEstimate, ProbTable, StickParams, TreeParams,
};
use crate::estimators::{disarm_iw, disarm_sb, disarm_tree, reinforce, rloo, Objective};
use crate::numeric::KahanSum;
use crate::registry::EstimatorId;
use crate::rng::stream;
use crate::{Error, Result};

/// Largest configuration space [`exact_objective_grad`] will sum over.
pub const MAX_OBJECTIVE_CONFIGS: u128 = 1_000_000;
/// Largest outcome space [`exact_estimator_expectation`] will sum over.
pub const MAX_ESTIMATOR_OUTCOMES: u128 = 10_000_000;

fn config_count(k: usize, c: usize) -> u128 {
    (c as u128).checked_pow(k as u32).unwrap_or(u128::MAX)
}

/// Visits every configuration in lexicographic order (last dimension
/// fastest).
pub fn for_each_config(k: usize, c: usize, mut visit: impl FnMut(&[usize])) {
    let mut z = vec![0usize; k];
    loop {
        visit(&z);
        let mut d = k;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            z[d] += 1;
            if z[d] < c {
                break;
            }
            z[d] = 0;
        }
    }
}

fn guard(size: u128, limit: u128) -> Result<()> {
    if size > limit {
        return Err(Error::TooLarge { size, limit });
    }
    Ok(())
}

/// Accumulates a probability-weighted sum of gradient tables.
struct WeightedSum {
    cells: Vec<KahanSum>,
    mass: KahanSum,
    shape: (usize, usize),
}

impl WeightedSum {
    fn new(shape: (usize, usize)) -> Self {
        Self { cells: vec![KahanSum::new(); shape.0 * shape.1], mass: KahanSum::new(), shape }
    }

    fn add(&mut self, p: f64, g: &Array2<f64>) {
        self.mass.add(p);
        for (cell, &v) in self.cells.iter_mut().zip(g.iter()) {
            cell.add(p * v);
        }
    }

    fn add_row(&mut self, p: f64, g: &Array2<f64>, row: usize) {
        self.mass.add(p);
        let c = self.shape.1;
        for (cell, &v) in self.cells[row * c..(row + 1) * c].iter_mut().zip(g.row(row).iter()) {
            cell.add(p * v);
        }
    }

    fn table(&self) -> Array2<f64> {
        Array2::from_shape_vec(self.shape, self.cells.iter().map(KahanSum::value).collect()).expect("shape")
    }
}

fn check_mass(mass: f64) -> Result<()> {
    if (mass - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("enumerated probabilities sum to {mass}")));
    }
    Ok(())
}

/// `E_q[f]` by enumeration.
pub fn exact_objective<O: Objective + ?Sized>(probs: &ProbTable, f: &O) -> Result<f64> {
    let (k, c) = (probs.dims(), probs.categories());
    guard(config_count(k, c), MAX_OBJECTIVE_CONFIGS)?;
    let mut total = KahanSum::new();
    for_each_config(k, c, |z| total.add(probs.joint_prob(z) * f.eval(z)));
    Ok(total.value())
}

/// `∇_α E_q[f]` with `grad[k, c] = Σ_z q(z) f(z) (1{z_k = c} − q_{k,c})`.
pub fn exact_objective_grad<O: Objective + ?Sized>(params: &CategoricalParams, f: &O) -> Result<GradEstimate> {
    let probs = softmax_probs(params);
    let (k, c) = (params.dims(), params.categories());
    guard(config_count(k, c), MAX_OBJECTIVE_CONFIGS)?;
    let mut onehot = WeightedSum::new((k, c));
    let mut mean = KahanSum::new();
    let mut g = Array2::zeros((k, c));
    for_each_config(k, c, |z| {
        let w = probs.joint_prob(z) * f.eval(z);
        mean.add(w);
        g.fill(0.0);
        for (kk, &zk) in z.iter().enumerate() {
            g[[kk, zk]] = 1.0;
        }
        onehot.add(w, &g);
    });
    let cat = onehot.table() - probs.probs() * mean.value();
    Ok(GradEstimate { cat, bin: None })
}

/// Which binary construction a coupled estimator is built on.
#[derive(Clone, Copy, Debug)]
pub enum CouplingKind<'a> {
    StickBreaking(&'a StickParams),
    Tree(&'a TreeParams),
}

impl CouplingKind<'_> {
    fn dims(&self) -> usize {
        match self {
            Self::StickBreaking(s) => s.dims(),
            Self::Tree(t) => t.dims(),
        }
    }

    fn categories(&self) -> usize {
        match self {
            Self::StickBreaking(s) => s.categories(),
            Self::Tree(t) => t.categories(),
        }
    }

    fn bit_prob(&self, k: usize, i: usize) -> f64 {
        match self {
            Self::StickBreaking(s) => s.break_prob(k, i),
            Self::Tree(t) => t.right_prob(k, i),
        }
    }

    fn joint(&self) -> Result<CouplingJoint> {
        match self {
            Self::StickBreaking(s) => sb_coupling_joint(s),
            Self::Tree(t) => Ok(tree_coupling_joint(t)),
        }
    }

    /// Some bit row that decodes to the original label `label`.
    fn canonical_bits(&self, k: usize, label: usize) -> Vec<u8> {
        let c = self.categories();
        let mut bits = vec![0u8; c - 1];
        match self {
            Self::StickBreaking(s) => {
                let r = s.perm()[k].iter().position(|&o| o == label).expect("permutation");
                if r < c - 1 {
                    bits[r] = 1;
                }
            }
            Self::Tree(_) => {
                let (mut node, mut lo, mut n) = (0, 0, c);
                while n > 1 {
                    let half = n / 2;
                    if label >= lo + half {
                        bits[node] = 1;
                        node += half;
                        lo += half;
                    } else {
                        node += 1;
                    }
                    n = half;
                }
            }
        }
        bits
    }

    fn pair(&self, bits: Array2<u8>, bits_tilde: Array2<u8>) -> CoupledCatPair {
        let (b, bt) = (BinarySeqSample { bits }, BinarySeqSample { bits: bits_tilde });
        match self {
            Self::StickBreaking(s) => sb_pair_from_bits(s, b, bt),
            Self::Tree(_) => tree_pair_from_bits(b, bt),
        }
    }
}

/// Every antithetic outcome of one dimension's bit pairs with non-zero
/// probability.
fn bit_pair_outcomes(kind: &CouplingKind<'_>, k: usize) -> Vec<(Vec<u8>, Vec<u8>, f64)> {
    let n = kind.categories() - 1;
    let mut out = vec![(Vec::with_capacity(n), Vec::with_capacity(n), 1.0)];
    for i in 0..n {
        let pmf = antithetic_joint_pmf(kind.bit_prob(k, i));
        let mut next = Vec::with_capacity(out.len() * 3);
        for (b, bt, p) in &out {
            for (x, row) in pmf.iter().enumerate() {
                for (y, &q) in row.iter().enumerate() {
                    if q > 0.0 {
                        let (mut b2, mut bt2) = (b.clone(), bt.clone());
                        b2.push(x as u8);
                        bt2.push(y as u8);
                        next.push((b2, bt2, p * q));
                    }
                }
            }
        }
        out = next;
    }
    out
}

/// Exact expectation of a coupled estimator, given as a black box over pairs.
pub fn exact_coupled_expectation(
    kind: CouplingKind<'_>,
    estimator: impl Fn(&CoupledCatPair) -> Result<GradEstimate>,
) -> Result<GradEstimate> {
    let (k, c) = (kind.dims(), kind.categories());
    let joint = kind.joint()?;
    // Non-zero (z_j, z~_j) cells per dimension.
    let cells: Vec<Vec<(usize, usize, f64)>> = joint
        .tables
        .iter()
        .map(|t| t.indexed_iter().filter(|(_, &p)| p > 0.0).map(|((a, b), &p)| (a, b, p)).collect())
        .collect();
    let outcomes: Vec<_> = (0..k).map(|kk| bit_pair_outcomes(&kind, kk)).collect();
    let mut size: u128 = 0;
    for kk in 0..k {
        let others: u128 = (0..k).filter(|&j| j != kk).map(|j| cells[j].len() as u128).product();
        size = size.saturating_add(others.saturating_mul(outcomes[kk].len() as u128));
    }
    guard(size, MAX_ESTIMATOR_OUTCOMES)?;

    let mut acc = WeightedSum::new((k, c));
    for kk in 0..k {
        let mut row_mass = KahanSum::new();
        let others: Vec<usize> = (0..k).filter(|&j| j != kk).collect();
        let mut bits = Array2::<u8>::zeros((k, c - 1));
        let mut bits_t = Array2::<u8>::zeros((k, c - 1));
        let mut idx = vec![0usize; others.len()];
        loop {
            let mut p_rest = 1.0;
            for (slot, &j) in others.iter().enumerate() {
                let (a, b, p) = cells[j][idx[slot]];
                p_rest *= p;
                bits.row_mut(j).assign(&ndarray::Array1::from(kind.canonical_bits(j, a)));
                bits_t.row_mut(j).assign(&ndarray::Array1::from(kind.canonical_bits(j, b)));
            }
            for (b, bt, p) in &outcomes[kk] {
                bits.row_mut(kk).assign(&ndarray::ArrayView1::from(b.as_slice()));
                bits_t.row_mut(kk).assign(&ndarray::ArrayView1::from(bt.as_slice()));
                let pair = kind.pair(bits.clone(), bits_t.clone());
                let g = estimator(&pair)?;
                let w = p * p_rest;
                row_mass.add(w);
                acc.add_row(w, &g.cat, kk);
            }
            // Odometer over the other dimensions' cells.
            let mut d = others.len();
            loop {
                if d == 0 {
                    break;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < cells[others[d]].len() {
                    break;
                }
                idx[d] = 0;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
        }
        check_mass(row_mass.value())?;
    }
    Ok(GradEstimate { cat: acc.table(), bin: None })
}

/// Exact expectation of an estimator with finite randomness.
pub fn exact_estimator_expectation<O: Objective + ?Sized>(
    id: EstimatorId,
    params: &CategoricalParams,
    f: &O,
) -> Result<GradEstimate> {
    let probs = softmax_probs(params);
    let (k, c) = (params.dims(), params.categories());
    let configs = config_count(k, c);
    match id {
        EstimatorId::Reinforce => {
            guard(configs, MAX_ESTIMATOR_OUTCOMES)?;
            let mut acc = WeightedSum::new((k, c));
            let mut err = None;
            for_each_config(k, c, |z| match reinforce(&probs, &CategoricalSample(z.to_vec()), f) {
                Ok(out) => acc.add(probs.joint_prob(z), &out.grad.cat),
                Err(e) => err = Some(e),
            });
            if let Some(e) = err {
                return Err(e);
            }
            check_mass(acc.mass.value())?;
            Ok(GradEstimate { cat: acc.table(), bin: None })
        }
        EstimatorId::Rloo(n) => {
            let size = configs.checked_pow(n as u32).unwrap_or(u128::MAX);
            guard(size, MAX_ESTIMATOR_OUTCOMES)?;
            let mut all = Vec::with_capacity(configs as usize);
            for_each_config(k, c, |z| all.push((CategoricalSample(z.to_vec()), probs.joint_prob(z))));
            let mut acc = WeightedSum::new((k, c));
            let mut tuple = Vec::with_capacity(n);
            let mut result = Ok(());
            for_each_config(n, all.len(), |idx| {
                if result.is_err() {
                    return;
                }
                tuple.clear();
                let mut p = 1.0;
                for &i in idx {
                    tuple.push(all[i].0.clone());
                    p *= all[i].1;
                }
                match rloo(&probs, &tuple, f) {
                    Ok(out) => acc.add(p, &out.grad.cat),
                    Err(e) => result = Err(e),
                }
            });
            result?;
            check_mass(acc.mass.value())?;
            Ok(GradEstimate { cat: acc.table(), bin: None })
        }
        EstimatorId::DisarmIw => {
            let stick = StickParams::new(&probs, CategoryOrder::Ascending)?;
            exact_coupled_expectation(CouplingKind::StickBreaking(&stick), |pair| Ok(disarm_iw(&probs, pair, f)?.grad))
        }
        EstimatorId::DisarmSb(order) => {
            let stick = StickParams::new(&probs, order)?;
            exact_coupled_expectation(CouplingKind::StickBreaking(&stick), |pair| Ok(disarm_sb(&stick, pair, f)?.grad))
        }
        EstimatorId::DisarmTree => {
            let tree = TreeParams::new(&probs)?;
            exact_coupled_expectation(CouplingKind::Tree(&tree), |pair| Ok(disarm_tree(&tree, pair, f)?.grad))
        }
        other => Err(Error::NotEnumerable(other.to_string())),
    }
}

/// Per-coordinate Monte Carlo summary.
#[derive(Clone, Debug, PartialEq)]
pub struct McSummary {
    pub draws: usize,
    pub mean: Array2<f64>,
    pub stderr: Array2<f64>,
}

impl McSummary {
    /// `(mean − reference) / stderr`; a coordinate with zero spread scores 0
    /// when it matches to 1e-12 and infinity otherwise.
    pub fn z_scores(&self, reference: &Array2<f64>) -> Array2<f64> {
        let mut z = Array2::zeros(self.mean.dim());
        Zip::from(&mut z).and(&self.mean).and(&self.stderr).and(reference).for_each(|z, &m, &s, &r| {
            *z = if s > 0.0 {
                (m - r) / s
            } else if (m - r).abs() <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
        });
        z
    }

    pub fn max_abs_z(&self, reference: &Array2<f64>) -> f64 {
        self.z_scores(reference).iter().fold(0.0, |a, z| a.max(z.abs()))
    }
}

/// Running mean and sum of squared deviations (Chan et al. merge).
#[derive(Clone, Debug)]
struct Moments {
    n: usize,
    mean: Array2<f64>,
    m2: Array2<f64>,
}

impl Moments {
    fn new(shape: (usize, usize)) -> Self {
        Self { n: 0, mean: Array2::zeros(shape), m2: Array2::zeros(shape) }
    }

    fn push(&mut self, x: &Array2<f64>) {
        self.n += 1;
        let n = self.n as f64;
        Zip::from(&mut self.mean).and(&mut self.m2).and(x).for_each(|m, s, &v| {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        });
    }

    fn merge(mut self, other: &Moments) -> Moments {
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        if other.n == 0 {
            return self;
        }
        Zip::from(&mut self.mean).and(&mut self.m2).and(&other.mean).and(&other.m2).for_each(|m, s, &mb, &sb| {
            let d = mb - *m;
            *m += d * nb / n;
            *s += sb + d * d * na * nb / n;
        });
        self.n += other.n;
        self
    }

    fn summary(&self) -> McSummary {
        let n = self.n as f64;
        McSummary { draws: self.n, mean: self.mean.clone(), stderr: self.m2.mapv(|s| (s / (n - 1.0) / n).sqrt()) }
    }
}

const MC_CHUNK: usize = 10_000;

/// Monte Carlo mean of `draw` over `n` draws. Draws are split into fixed
/// chunks, each with its own named stream, and run in parallel; the result
/// depends only on `(seed, label, n)`.
pub fn mc_mean<F>(n: usize, shape: (usize, usize), seed: u64, label: &str, draw: F) -> Result<McSummary>
where
    F: Fn(&mut crate::rng::StreamRng) -> Result<Array2<f64>> + Sync,
{
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 draws".into()));
    }
    let chunks = n.div_ceil(MC_CHUNK);
    let parts: Vec<Result<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, "mc", label, i as u64);
            let mut m = Moments::new(shape);
            for _ in 0..MC_CHUNK.min(n - i * MC_CHUNK) {
                m.push(&draw(&mut rng)?);
            }
            Ok(m)
        })
        .collect();
    let mut total = Moments::new(shape);
    for p in parts {
        total = total.merge(&p?);
    }
    Ok(total.summary())
}

/// Monte Carlo mean of a registered estimator's categorical gradient.
pub fn mc_estimator_mean<O: Objective + Sync + ?Sized>(
    id: EstimatorId,
    params: &CategoricalParams,
    f: &O,
    n: usize,
    seed: u64,
) -> Result<McSummary> {
    if n < 1000 {
        return Err(Error::InvalidArgument(format!("Monte Carlo check needs at least 1000 draws, got {n}")));
    }
    let shape = params.logits().dim();
    mc_mean(n, shape, seed, &id.to_string(), |rng| Ok(id.estimate(params, f, rng)?.grad.cat))
}

/// Rejection-sampled conditional mean of `π_j`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RejectionSummary {
    pub mean: f64,
    pub stderr: f64,
    pub accepted: usize,
    pub proposed: usize,
}

impl RejectionSummary {
    /// Two-sided normal interval at 99%.
    pub fn ci99(&self) -> (f64, f64) {
        let h = 2.575_829_303_549 * self.stderr;
        (self.mean - h, self.mean + h)
    }
}

/// Settings for [`rejection_conditional_mean`].
#[derive(Clone, Copy, Debug)]
pub struct RejectionSettings {
    /// Half-width of the match band on `π_n`, `n ∉ {j, l}`.
    pub band: f64,
    pub accepted: usize,
    pub min_rate: f64,
    pub seed: u64,
}

impl Default for RejectionSettings {
    fn default() -> Self {
        Self { band: 2e-3, accepted: 10_000, min_rate: 1e-5, seed: 0 }
    }
}

/// `E[π_j | π_n ≈ target_n for n ∉ {j, l}, every swapped config matches]`
/// by rejection sampling uniform simplex rows.
pub fn rejection_conditional_mean(
    logits_row: &[f64],
    target: &[f64],
    configs: &[usize],
    j: usize,
    l: usize,
    settings: RejectionSettings,
) -> Result<RejectionSummary> {
    let c = target.len();
    if logits_row.len() != c || configs.len() != c || j >= c || l >= c || j == l {
        return Err(Error::InvalidArgument("inconsistent rejection-sampler inputs".into()));
    }
    let batch = 1 << 16;
    let batches_per_round = rayon::current_num_threads().max(1) * 2;
    let accept = |row: &[f64]| -> bool {
        for n in 0..c {
            if n != j && n != l && (row[n] - target[n]).abs() > settings.band {
                return false;
            }
        }
        (0..c).all(|m| argmin_config(&swapped_row(row, m, j), logits_row) == configs[m])
    };
    let mut values: Vec<f64> = Vec::new();
    let mut proposed = 0usize;
    let mut round = 0u64;
    while values.len() < settings.accepted {
        let found: Vec<Vec<f64>> = (0..batches_per_round as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream(settings.seed, "rejection", "pi", round * 1_000_000 + b);
                let mut hits = Vec::new();
                for _ in 0..batch {
                    let draw = sample_dirichlet_uniform(&mut rng, 1, c);
                    let row = draw.pi().row(0);
                    let row = row.as_slice().expect("layout");
                    if accept(row) {
                        hits.push(row[j]);
                    }
                }
                hits
            })
            .collect();
        proposed += batch * batches_per_round;
        values.extend(found.into_iter().flatten());
        round += 1;
        let rate = values.len() as f64 / proposed as f64;
        if proposed >= 1_000_000 && rate < settings.min_rate {
            return Err(Error::LowAcceptance { rate, accepted: values.len(), proposed });
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().copied().collect::<KahanSum>().value() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(RejectionSummary { mean, stderr: (var / n).sqrt(), accepted: values.len(), proposed })
}

/// A differentiable map checked by [`finite_diff_check`].
pub enum FdMap<'a> {
    /// `y = A x` on the flattened point, contracted with `cotangent`.
    Linear { matrix: &'a Array2<f64>, cotangent: &'a Array2<f64> },
    /// Categorical logits to stick logits under a fixed category order,
    /// contracted with `cotangent` (`K × (C−1)`).
    StickLogits { order: CategoryOrder, cotangent: &'a Array2<f64> },
    /// Categorical logits to tree node logits.
    TreeLogits { cotangent: &'a Array2<f64> },
    /// Categorical logits to `E_q[f]`.
    Objective(&'a dyn Objective),
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Relative error between the analytic directional derivative of `map` at
/// `point` along `direction` and a central difference with step `eps`.
pub fn finite_diff_check(map: &FdMap<'_>, point: &Array2<f64>, direction: &Array2<f64>, eps: f64) -> Result<f64> {
    if !(1e-8..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!("step {eps} outside [1e-8, 1e-4]")));
    }
    if point.dim() != direction.dim() {
        return Err(Error::Shape("point and direction differ in shape".into()));
    }
    let plus = point + &(direction * eps);
    let minus = point - &(direction * eps);
    let central = |fp: f64, fm: f64| (fp - fm) / (2.0 * eps);
    match map {
        FdMap::Linear { matrix, cotangent } => {
            let flat = |x: &Array2<f64>| x.iter().copied().collect::<ndarray::Array1<f64>>();
            if matrix.ncols() != point.len() || cotangent.len() != matrix.nrows() {
                return Err(Error::Shape("linear map shape mismatch".into()));
            }
            let v = flat(cotangent);
            let y = |x: &Array2<f64>| v.dot(&matrix.dot(&flat(x)));
            let analytic = v.dot(&matrix.dot(&flat(direction)));
            Ok(rel_error(analytic, central(y(&plus), y(&minus))))
        }
        FdMap::StickLogits { order, cotangent } => {
            let base = StickParams::new(&softmax_probs(&CategoricalParams::new(point.clone())?), *order)?;
            let perm = base.perm().to_vec();
            let y = |x: &Array2<f64>| -> Result<f64> {
                let probs = softmax_probs(&CategoricalParams::new(x.clone())?);
                Ok(dot(StickParams::with_perm(&probs, perm.clone())?.logits(), cotangent))
            };
            let analytic = dot(&sb_vjp(&base, cotangent)?.cat, direction);
            Ok(rel_error(analytic, central(y(&plus)?, y(&minus)?)))
        }
        FdMap::TreeLogits { cotangent } => {
            let base = TreeParams::new(&softmax_probs(&CategoricalParams::new(point.clone())?))?;
            let y = |x: &Array2<f64>| -> Result<f64> {
                let t = TreeParams::new(&softmax_probs(&CategoricalParams::new(x.clone())?))?;
                Ok(dot(t.logits(), cotangent))
            };
            let analytic = dot(&tree_vjp(&base, cotangent)?.cat, direction);
            Ok(rel_error(analytic, central(y(&plus)?, y(&minus)?)))
        }
        FdMap::Objective(f) => {
            let value = |x: &Array2<f64>| exact_objective(&softmax_probs(&CategoricalParams::new(x.clone())?), *f);
            let analytic = dot(&exact_objective_grad(&CategoricalParams::new(point.clone())?, *f)?.cat, direction);
            Ok(rel_error(analytic, central(value(&plus)?, value(&minus)?)))
        }
    }
}

/// One pass/fail line of the verification report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub check: String,
    pub estimator: Option<String>,
    pub dims: usize,
    pub categories: usize,
    pub seed: u64,
    /// The recorded error: an absolute difference, a relative error or a
    /// largest `|z|`, depending on the check.
    pub error: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn new(
        check: &str,
        estimator: Option<EstimatorId>,
        (dims, categories, seed): (usize, usize, u64),
        error: f64,
        threshold: f64,
    ) -> Self {
        Self {
            check: check.to_string(),
            estimator: estimator.map(|e| e.to_string()),
            dims,
            categories,
            seed,
            error,
            threshold,
            pass: error <= threshold,
        }
    }
}

/// Largest absolute entrywise difference.
pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Random logits with entries uniform in `[-scale, scale]`.
pub fn random_params<R: Rng + ?Sized>(rng: &mut R, k: usize, c: usize, scale: f64) -> CategoricalParams {
    let logits = Array2::from_shape_fn((k, c), |_| rng.random_range(-scale..=scale));
    CategoricalParams::new(logits).expect("finite logits")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table_f(table: Vec<f64>, c: usize) -> impl Fn(&[usize]) -> f64 + Sync {
        move |z: &[usize]| table[z.iter().fold(0, |acc, &v| acc * c + v)]
    }

    fn from_probs(rows: &[&[f64]]) -> CategoricalParams {
        CategoricalParams::from_rows(&rows.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect::<Vec<_>>())
            .unwrap()
    }

    #[test]
    fn lexicographic_enumeration() {
        let mut seen = Vec::new();
        for_each_config(2, 3, |z| seen.push(z.to_vec()));
        assert_eq!(seen.len(), 9);
        assert_eq!(seen[0], vec![0, 0]);
        assert_eq!(seen[1], vec![0, 1]);
        assert_eq!(seen[8], vec![2, 2]);
    }

    #[test]
    fn objective_grad_examples() {
        let p = from_probs(&[&[0.5, 0.5]]);
        let f = table_f(vec![1.0, 0.0], 2);
        let g = exact_objective_grad(&p, &f).unwrap();
        assert!(max_abs_diff(&g.cat, &array![[0.25, -0.25]]) < 1e-15);
        let constant = |_: &[usize]| 4.0;
        let p = from_probs(&[&[0.2, 0.3, 0.5], &[0.6, 0.3, 0.1]]);
        assert!(exact_objective_grad(&p, &constant).unwrap().cat.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn objective_grad_guard() {
        let p = CategoricalParams::new(Array2::zeros((7, 8))).unwrap();
        let f = |_: &[usize]| 0.0;
        assert!(matches!(exact_objective_grad(&p, &f), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn objective_grad_matches_finite_differences() {
        let mut rng = stream(1, "test", "oracle-fd", 0);
        for _ in 0..10 {
            let p = random_params(&mut rng, 2, 3, 1.5);
            let table: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = table_f(table, 3);
            let d = Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0));
            let err = finite_diff_check(&FdMap::Objective(&f), p.logits(), &d, 1e-5).unwrap();
            assert!(err < 1e-7, "{err}");
        }
    }

    #[test]
    fn reinforce_expectation_is_the_objective_gradient() {
        let mut rng = stream(2, "test", "oracle-reinforce", 0);
        for _ in 0..5 {
            let p = random_params(&mut rng, 2, 4, 2.0);
            let table: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = table_f(table, 4);
            let a = exact_estimator_expectation(EstimatorId::Reinforce, &p, &f).unwrap();
            let b = exact_objective_grad(&p, &f).unwrap();
            assert!(max_abs_diff(&a.cat, &b.cat) < 1e-12);
        }
    }

    #[test]
    fn coupled_estimators_are_unbiased_on_spec_instances() {
        let mut rng = stream(3, "test", "oracle-coupled", 0);
        let p = from_probs(&[&[0.2, 0.3, 0.5]]);
        let f = table_f((0..3).map(|_| rng.random_range(-1.0..1.0)).collect(), 3);
        let truth = exact_objective_grad(&p, &f).unwrap().cat;
        let g = exact_estimator_expectation(EstimatorId::DisarmIw, &p, &f).unwrap();
        assert!(max_abs_diff(&g.cat, &truth) < 1e-10);
        let p = random_params(&mut rng, 2, 4, 1.0);
        let f = table_f((0..16).map(|_| rng.random_range(-1.0..1.0)).collect(), 4);
        let truth = exact_objective_grad(&p, &f).unwrap().cat;
        for id in [
            EstimatorId::DisarmTree,
            EstimatorId::DisarmSb(CategoryOrder::Ascending),
            EstimatorId::DisarmSb(CategoryOrder::Descending),
            EstimatorId::DisarmSb(CategoryOrder::Default),
            EstimatorId::DisarmIw,
            EstimatorId::Rloo(2),
        ] {
            let g = exact_estimator_expectation(id, &p, &f).unwrap();
            assert!(max_abs_diff(&g.cat, &truth) < 1e-10, "{id}");
        }
    }

    #[test]
    fn mutated_sb_is_caught() {
        let p = from_probs(&[&[0.1, 0.2, 0.3, 0.4], &[0.25, 0.25, 0.2, 0.3]]);
        let f = |z: &[usize]| (z[0] as f64 - 1.0).powi(2) + 0.5 * (z[1] * z[0]) as f64;
        let probs = softmax_probs(&p);
        let stick = StickParams::new(&probs, CategoryOrder::Ascending).unwrap();
        let bad = exact_coupled_expectation(CouplingKind::StickBreaking(&stick), |pair| {
            Ok(crate::estimators::mutation::disarm_sb_negated_case2(&stick, pair, &f)?.grad)
        })
        .unwrap();
        let truth = exact_objective_grad(&p, &f).unwrap();
        assert!(max_abs_diff(&bad.cat, &truth.cat) > 1e-3);
    }

    #[test]
    fn ars_is_not_enumerable() {
        let p = from_probs(&[&[0.5, 0.5]]);
        let f = |_: &[usize]| 0.0;
        assert!(matches!(exact_estimator_expectation(EstimatorId::Ars, &p, &f), Err(Error::NotEnumerable(_))));
    }

    #[test]
    fn monte_carlo_harness_passes_rloo_and_flags_bias() {
        let p = from_probs(&[&[0.2, 0.3, 0.5]]);
        let f = table_f(vec![0.3, -0.8, 1.1], 3);
        let truth = exact_objective_grad(&p, &f).unwrap().cat;
        let mc = mc_estimator_mean(EstimatorId::Rloo(2), &p, &f, 100_000, 5).unwrap();
        assert!(mc.max_abs_z(&truth) < 4.0);
        let probs = softmax_probs(&p);
        let biased = mc_mean(100_000, (1, 3), 5, "biased", |rng| {
            let z = crate::dist::sample_categorical(&probs, rng);
            let mut g = reinforce(&probs, &z, &f)?.grad.cat;
            g.mapv_inplace(|v| v + 0.05);
            Ok(g)
        })
        .unwrap();
        assert!(biased.max_abs_z(&truth) > 4.0);
    }

    #[test]
    fn mc_mean_is_reproducible() {
        let p = from_probs(&[&[0.2, 0.8]]);
        let f = table_f(vec![1.0, 0.0], 2);
        let a = mc_estimator_mean(EstimatorId::Ars, &p, &f, 25_000, 9).unwrap();
        let b = mc_estimator_mean(EstimatorId::Ars, &p, &f, 25_000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejection_two_category_example() {
        let s = rejection_conditional_mean(
            &[0.0, 0.0],
            &[0.0, 0.0],
            &[0, 1],
            0,
            1,
            RejectionSettings { accepted: 20_000, ..Default::default() },
        )
        .unwrap();
        let (lo, hi) = s.ci99();
        assert!(lo <= 0.25 && 0.25 <= hi, "{s:?}");
    }

    #[test]
    fn finite_difference_examples() {
        let m = array![[1.0, 2.0], [-0.5, 3.0]];
        let v = array![[0.7, -1.2]];
        let x = array![[0.3, -0.1]];
        let d = array![[1.0, 0.5]];
        let err = finite_diff_check(&FdMap::Linear { matrix: &m, cotangent: &v }, &x, &d, 1e-4).unwrap();
        assert!(err < 1e-10);
        let mut rng = stream(4, "test", "oracle-vjp", 0);
        let point = Array2::from_shape_fn((2, 8), |_| rng.random_range(-1.0..1.0));
        let dir = Array2::from_shape_fn((2, 8), |_| rng.random_range(-1.0..1.0));
        let cot = Array2::from_shape_fn((2, 7), |_| rng.random_range(-1.0..1.0));
        for order in [CategoryOrder::Ascending, CategoryOrder::Default] {
            let err = finite_diff_check(&FdMap::StickLogits { order, cotangent: &cot }, &point, &dir, 1e-6).unwrap();
            assert!(err < 1e-5, "{err}");
        }
        let err = finite_diff_check(&FdMap::TreeLogits { cotangent: &cot }, &point, &dir, 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
        assert!(finite_diff_check(&FdMap::TreeLogits { cotangent: &cot }, &point, &dir, 1e-2).is_err());
    }
}
