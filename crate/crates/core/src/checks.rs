//! The verification suite: each check draws its own random instances,
//! compares an estimator or adapter with an independent oracle, and returns
//! one [`OracleReport`] per instance.
//!
//! Instance `i` of check `name` under master seed `s` uses the seed
//! [`instance_seed`]`(s, name, i)`, which is what the report records; rerun
//! a single instance by passing that seed to [`instance_rng`].

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::Serialize;

use crate::ars::{ars, ars_plus, arsm, arsm_plus, pi_conditional_interval, sample_dirichlet_uniform, swap_configs};
use crate::bench::VerifyConfig;
use crate::couplings::{
    antithetic_joint_pmf, sb_coupling_joint, sb_importance_weight, sb_pair_from_bits, support_check,
    tree_pair_from_bits, AntitheticPair,
};
use crate::dist::{
    sb_decode_row, softmax_probs, BinarySeqSample, CategoricalParams, CategoryOrder, ProbTable, StickParams, TreeParams,
};
use crate::estimators::{disarm_binary, disarm_iw, disarm_sb, disarm_tree, mutation, Objective};
use crate::numeric::{sigmoid, KahanSum};
use crate::oracle::{
    exact_coupled_expectation, exact_estimator_expectation, exact_objective_grad, finite_diff_check, for_each_config,
    max_abs_diff, mc_estimator_mean, random_params, rejection_conditional_mean, CouplingKind, FdMap, OracleReport,
    RejectionSettings,
};
use crate::registry::EstimatorId;
use crate::rng::{stream, stream_id, StreamRng};
use crate::toy::LookupObjective;
use crate::{Error, Result};

pub const UNBIASED_TOL: f64 = 1e-9;
pub const MARGINAL_TOL: f64 = 1e-12;
pub const WEIGHT_TOL: f64 = 1e-10;
pub const COLLAPSE_TOL: f64 = 1e-12;
pub const VJP_TOL: f64 = 1e-5;
pub const Z_LIMIT: f64 = 4.0;
pub const CONTAINMENT_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-5;
const LOGIT_SCALE: f64 = 2.0;

pub const ORDERS: [CategoryOrder; 3] = [CategoryOrder::Ascending, CategoryOrder::Descending, CategoryOrder::Default];

pub fn instance_seed(master: u64, check: &str, i: usize) -> u64 {
    master ^ stream_id("instance", check, i as u64)
}

pub fn instance_rng(seed: u64) -> StreamRng {
    stream(seed, "instance", "", 0)
}

/// `(K, C)` with `K ≤ 3`, `C ≤ 8` and `C^K ≤ 215`, so that three-sample
/// RLOO stays within the enumeration budget. With `tree`, `C` is a power of
/// two.
fn enumerable_shape<R: Rng + ?Sized>(rng: &mut R, tree: bool) -> (usize, usize) {
    let mut shapes = Vec::new();
    for k in 1..=3u32 {
        for c in 2..=8usize {
            if c.pow(k) <= 215 && (!tree || c.is_power_of_two()) {
                shapes.push((k as usize, c));
            }
        }
    }
    *shapes.choose(rng).expect("non-empty")
}

fn with_estimator(mut r: OracleReport, name: &str) -> OracleReport {
    r.estimator = Some(name.to_string());
    r
}

/// Exact `∇_θ E[f(b)]` for independent `b_k ~ Bernoulli(σ(θ_k))`.
pub fn exact_bernoulli_grad(logits: &[f64], f: impl Fn(&[u8]) -> f64) -> Vec<f64> {
    let k = logits.len();
    let p: Vec<f64> = logits.iter().map(|&a| sigmoid(a)).collect();
    let mut grad = vec![KahanSum::new(); k];
    for_each_config(k, 2, |z| {
        let b: Vec<u8> = z.iter().map(|&v| v as u8).collect();
        let prob: f64 = b.iter().zip(&p).map(|(&bi, &pi)| if bi == 1 { pi } else { 1.0 - pi }).product();
        let fb = f(&b);
        for kk in 0..k {
            grad[kk].add(prob * fb * (f64::from(b[kk]) - p[kk]));
        }
    });
    grad.iter().map(KahanSum::value).collect()
}

/// Exact expectation of binary DisARM over every antithetic outcome.
pub fn exact_disarm_binary(logits: &[f64], f: impl Fn(&[u8]) -> f64) -> Result<Vec<f64>> {
    let k = logits.len();
    let pmfs: Vec<_> = logits.iter().map(|&a| antithetic_joint_pmf(sigmoid(a))).collect();
    let mut acc = vec![KahanSum::new(); k];
    let mut result = Ok(());
    for_each_config(k, 4, |cells| {
        if result.is_err() {
            return;
        }
        let mut prob = 1.0;
        let pairs: Vec<AntitheticPair> = cells
            .iter()
            .enumerate()
            .map(|(kk, &cell)| {
                let (b, bt) = ((cell / 2) as u8, (cell % 2) as u8);
                prob *= pmfs[kk][b as usize][bt as usize];
                AntitheticPair { b, b_tilde: bt, u: f64::NAN }
            })
            .collect();
        if prob == 0.0 {
            return;
        }
        match disarm_binary(logits, &pairs, &f) {
            Ok(out) => out.grad.iter().zip(acc.iter_mut()).for_each(|(g, a)| a.add(prob * g)),
            Err(e) => result = Err(e),
        }
    });
    result?;
    Ok(acc.iter().map(KahanSum::value).collect())
}

fn random_bits_objective<R: Rng + ?Sized>(rng: &mut R, k: usize) -> impl Fn(&[u8]) -> f64 {
    let table: Vec<f64> = (0..1usize << k).map(|_| rng.random_range(-1.0..=1.0)).collect();
    move |b: &[u8]| table[b.iter().fold(0usize, |acc, &v| acc * 2 + v as usize)]
}

/// Enumerated expectation of every enumerable estimator against
/// `exact_objective_grad`.
pub fn exact_unbiasedness(instances: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let name = "exact-unbiasedness";
    let mut reports = Vec::new();
    let ids = [
        EstimatorId::Reinforce,
        EstimatorId::Rloo(2),
        EstimatorId::Rloo(3),
        EstimatorId::DisarmIw,
        EstimatorId::DisarmSb(CategoryOrder::Ascending),
        EstimatorId::DisarmSb(CategoryOrder::Descending),
        EstimatorId::DisarmSb(CategoryOrder::Default),
    ];
    for i in 0..instances {
        let s = instance_seed(seed, name, i);
        let mut rng = instance_rng(s);

        let (k, c) = enumerable_shape(&mut rng, false);
        let params = random_params(&mut rng, k, c, LOGIT_SCALE);
        let f = LookupObjective::random_dense(&mut rng, k, c)?;
        let exact = exact_objective_grad(&params, &f)?;
        for id in ids {
            let got = exact_estimator_expectation(id, &params, &f)?;
            reports.push(OracleReport::new(
                name,
                Some(id),
                (k, c, s),
                max_abs_diff(&got.cat, &exact.cat),
                UNBIASED_TOL,
            ));
        }

        let (k, c) = enumerable_shape(&mut rng, true);
        let params = random_params(&mut rng, k, c, LOGIT_SCALE);
        let f = LookupObjective::random_dense(&mut rng, k, c)?;
        let exact = exact_objective_grad(&params, &f)?;
        let got = exact_estimator_expectation(EstimatorId::DisarmTree, &params, &f)?;
        let err = max_abs_diff(&got.cat, &exact.cat);
        reports.push(OracleReport::new(name, Some(EstimatorId::DisarmTree), (k, c, s), err, UNBIASED_TOL));

        let k = rng.random_range(1..=6);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-LOGIT_SCALE..=LOGIT_SCALE)).collect();
        let f = random_bits_objective(&mut rng, k);
        let exact = exact_bernoulli_grad(&logits, &f);
        let got = exact_disarm_binary(&logits, &f)?;
        let err = exact.iter().zip(&got).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        reports.push(with_estimator(OracleReport::new(name, None, (k, 2, s), err, UNBIASED_TOL), "disarm-binary"));
    }
    Ok(reports)
}

/// The DisARM-SB variant with a flipped case-2 sign must be caught as
/// biased on at least one instance.
pub fn mutation_detected(instances: usize, seed: u64) -> Result<OracleReport> {
    let name = "mutation-disarm-sb-case2";
    let mut worst = 0.0_f64;
    for i in 0..instances {
        let mut rng = instance_rng(instance_seed(seed, name, i));
        let k = rng.random_range(1..=2);
        let c = rng.random_range(3..=6);
        let params = random_params(&mut rng, k, c, LOGIT_SCALE);
        let f = LookupObjective::random_dense(&mut rng, k, c)?;
        let exact = exact_objective_grad(&params, &f)?;
        let stick = StickParams::new(&softmax_probs(&params), ORDERS[i % 3])?;
        let got = exact_coupled_expectation(CouplingKind::StickBreaking(&stick), |pair| {
            Ok(mutation::disarm_sb_negated_case2(&stick, pair, &f)?.grad)
        })?;
        worst = worst.max(max_abs_diff(&got.cat, &exact.cat));
    }
    let mut report = OracleReport::new(name, None, (0, 0, seed), worst, UNBIASED_TOL);
    report.estimator = Some("disarm-sb-mutant".into());
    // Passes when the bias is detected.
    report.pass = worst > UNBIASED_TOL;
    Ok(report)
}

/// `(z, z~) → probability` of the stick-breaking coupling in relabeled
/// indices, by listing every antithetic bit outcome.
fn enumerate_stick_pairs(stick: &StickParams, k: usize) -> Array2<f64> {
    let c = stick.categories();
    let pmfs: Vec<_> = (0..c - 1).map(|i| antithetic_joint_pmf(stick.break_prob(k, i))).collect();
    let mut table = Array2::zeros((c, c));
    for_each_config(c - 1, 4, |cells| {
        let mut p = 1.0;
        let mut b = Vec::with_capacity(c - 1);
        let mut bt = Vec::with_capacity(c - 1);
        for (i, &cell) in cells.iter().enumerate() {
            let (x, y) = (cell / 2, cell % 2);
            p *= pmfs[i][x][y];
            b.push(x as u8);
            bt.push(y as u8);
        }
        if p > 0.0 {
            table[[sb_decode_row(&b), sb_decode_row(&bt)]] += p;
        }
    });
    table
}

fn importance_weight_error(stick: &StickParams) -> Result<f64> {
    let q = stick.relabeled_probs();
    let mut worst = 0.0_f64;
    for k in 0..stick.dims() {
        let table = enumerate_stick_pairs(stick, k);
        for ((z, zt), &p) in table.indexed_iter() {
            if z != zt && p > 0.0 {
                let ratio = q.get(k, z) * q.get(k, zt) / p;
                worst = worst.max((sb_importance_weight(stick, k, z, zt)? - ratio).abs());
            }
        }
    }
    Ok(worst)
}

/// Marginal preservation, support and importance weights of the ascending
/// stick-breaking coupling on random strictly positive `q`.
pub fn coupling_correctness(instances: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let name = "coupling";
    let mut reports = Vec::new();
    for i in 0..instances {
        let s = instance_seed(seed, name, i);
        let mut rng = instance_rng(s);
        let c = rng.random_range(2..=8);
        let weights = Array2::from_shape_fn((1, c), |_| rng.random_range(0.05..1.0));
        let probs = ProbTable::normalized(weights)?;
        let stick = StickParams::new(&probs, CategoryOrder::Ascending)?;
        let joint = sb_coupling_joint(&stick)?;
        let id = Some(EstimatorId::DisarmIw);
        reports.push(OracleReport::new(
            "coupling-marginals",
            id,
            (1, c, s),
            joint.max_marginal_error(&probs),
            MARGINAL_TOL,
        ));
        let support = if support_check(&joint) { 0.0 } else { 1.0 };
        reports.push(OracleReport::new("coupling-support", id, (1, c, s), support, 0.0));
        reports.push(OracleReport::new(
            "coupling-weights",
            id,
            (1, c, s),
            importance_weight_error(&stick)?,
            WEIGHT_TOL,
        ));
    }
    let probs = ProbTable::from_rows(&[vec![0.2, 0.3, 0.5]])?;
    let stick = StickParams::new(&probs, CategoryOrder::Ascending)?;
    let w = sb_importance_weight(&stick, 0, 1, 2)?;
    reports.push(OracleReport::new("coupling-weight-example", None, (1, 3, 0), (w - 2.0 / 3.0).abs(), WEIGHT_TOL));
    Ok(reports)
}

/// Per-draw equality of the categorical estimators with binary DisARM at
/// `C = 2`, over every bit outcome. The binary variable is `1{z = 1}` with
/// logit `α_1 − α_0`, so a binary gradient `g` maps to the row `(−g, g)`.
pub fn binary_collapse(instances: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let name = "binary-collapse";
    let mut reports = Vec::new();
    for i in 0..instances {
        let s = instance_seed(seed, name, i);
        let mut rng = instance_rng(s);
        let k = rng.random_range(1..=4);
        let params = random_params(&mut rng, k, 2, LOGIT_SCALE);
        let f = LookupObjective::random_dense(&mut rng, k, 2)?;
        let probs = softmax_probs(&params);
        let theta: Vec<f64> = (0..k).map(|kk| params.logits()[[kk, 1]] - params.logits()[[kk, 0]]).collect();
        let f_bin = |b: &[u8]| f.eval(&b.iter().map(|&v| usize::from(v)).collect::<Vec<_>>());
        let binary = |b: &[u8], bt: &[u8]| -> Result<Array2<f64>> {
            let pairs: Vec<_> =
                b.iter().zip(bt).map(|(&x, &y)| AntitheticPair { b: x, b_tilde: y, u: f64::NAN }).collect();
            let g = disarm_binary(&theta, &pairs, f_bin)?.grad;
            Ok(Array2::from_shape_fn((k, 2), |(kk, c)| if c == 1 { g[kk] } else { -g[kk] }))
        };
        let sticks: Vec<StickParams> = ORDERS.iter().map(|&o| StickParams::new(&probs, o)).collect::<Result<_>>()?;
        let tree = TreeParams::new(&probs)?;
        let mut worst = [0.0_f64; 5];
        let mut failure = None;
        for_each_config(k, 4, |cells| {
            if failure.is_some() {
                return;
            }
            let raw = Array2::from_shape_fn((k, 1), |(kk, _)| (cells[kk] / 2) as u8);
            let raw_t = Array2::from_shape_fn((k, 1), |(kk, _)| (cells[kk] % 2) as u8);
            let run = || -> Result<[f64; 5]> {
                let mut errs = [0.0; 5];
                for (slot, stick) in sticks.iter().enumerate() {
                    // Bit 1 on the single stick selects relabeled category 0.
                    let flip = |v: u8, kk: usize| if stick.perm()[kk][0] == 1 { v } else { 1 - v };
                    let b: Vec<u8> = (0..k).map(|kk| flip(raw[[kk, 0]], kk)).collect();
                    let bt: Vec<u8> = (0..k).map(|kk| flip(raw_t[[kk, 0]], kk)).collect();
                    let expected = binary(&b, &bt)?;
                    let pair = sb_pair_from_bits(
                        stick,
                        BinarySeqSample::new(raw.clone())?,
                        BinarySeqSample::new(raw_t.clone())?,
                    );
                    errs[slot] = max_abs_diff(&disarm_sb(stick, &pair, &f)?.grad.cat, &expected);
                    if slot == 0 {
                        errs[3] = max_abs_diff(&disarm_iw(&probs, &pair, &f)?.grad.cat, &expected);
                    }
                }
                let b: Vec<u8> = raw.iter().copied().collect();
                let bt: Vec<u8> = raw_t.iter().copied().collect();
                let pair =
                    tree_pair_from_bits(BinarySeqSample::new(raw.clone())?, BinarySeqSample::new(raw_t.clone())?);
                errs[4] = max_abs_diff(&disarm_tree(&tree, &pair, &f)?.grad.cat, &binary(&b, &bt)?);
                Ok(errs)
            };
            match run() {
                Ok(errs) => worst.iter_mut().zip(errs).for_each(|(w, e)| *w = w.max(e)),
                Err(e) => failure = Some(e),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let ids = [
            EstimatorId::DisarmSb(CategoryOrder::Ascending),
            EstimatorId::DisarmSb(CategoryOrder::Descending),
            EstimatorId::DisarmSb(CategoryOrder::Default),
            EstimatorId::DisarmIw,
            EstimatorId::DisarmTree,
        ];
        for (id, err) in ids.into_iter().zip(worst) {
            reports.push(OracleReport::new(name, Some(id), (k, 2, s), err, COLLAPSE_TOL));
        }
    }
    Ok(reports)
}

fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..=1.0))
}

/// `sb_vjp` and `tree_vjp` against central differences of the forward
/// logit maps.
pub fn vjp_finite_differences(instances: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let name = "vjp-finite-difference";
    let mut reports = Vec::new();
    for i in 0..instances {
        let s = instance_seed(seed, name, i);
        let mut rng = instance_rng(s);
        let k = rng.random_range(1..=3);
        let c = rng.random_range(2..=8);
        let point = uniform_matrix(&mut rng, (k, c)) * LOGIT_SCALE;
        let direction = uniform_matrix(&mut rng, (k, c));
        let cotangent = uniform_matrix(&mut rng, (k, c - 1));
        let order = ORDERS[i % 3];
        let err = finite_diff_check(&FdMap::StickLogits { order, cotangent: &cotangent }, &point, &direction, FD_STEP)?;
        reports.push(with_estimator(
            OracleReport::new(name, None, (k, c, s), err, VJP_TOL),
            &format!("sb-vjp-{order:?}").to_lowercase(),
        ));

        let c = *[2, 4, 8].choose(&mut rng).expect("non-empty");
        let point = uniform_matrix(&mut rng, (k, c)) * LOGIT_SCALE;
        let direction = uniform_matrix(&mut rng, (k, c));
        let cotangent = uniform_matrix(&mut rng, (k, c - 1));
        let err = finite_diff_check(&FdMap::TreeLogits { cotangent: &cotangent }, &point, &direction, FD_STEP)?;
        reports.push(with_estimator(OracleReport::new(name, None, (k, c, s), err, VJP_TOL), "tree-vjp"));
    }
    Ok(reports)
}

pub const ARS_FAMILY: [EstimatorId; 4] =
    [EstimatorId::Ars, EstimatorId::Arsm, EstimatorId::ArsPlus, EstimatorId::ArsmPlus];

/// Monte Carlo z-scores of the ARS family against the exact gradient.
pub fn ars_family_unbiasedness(instances: usize, draws: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let name = "ars-family-monte-carlo";
    let mut reports = Vec::new();
    for i in 0..instances {
        let s = instance_seed(seed, name, i);
        let mut rng = instance_rng(s);
        let k = rng.random_range(1..=2);
        let c = rng.random_range(2..=4);
        let params = random_params(&mut rng, k, c, LOGIT_SCALE);
        let f = LookupObjective::random_dense(&mut rng, k, c)?;
        let exact = exact_objective_grad(&params, &f)?;
        for id in ARS_FAMILY {
            let mc = mc_estimator_mean(id, &params, &f, draws, s)?;
            reports.push(OracleReport::new(name, Some(id), (k, c, s), mc.max_abs_z(&exact.cat), Z_LIMIT));
        }
    }
    Ok(reports)
}

/// Upper `level` percentile bootstrap bound of `stat` over resampled
/// indices `0..n`.
pub fn bootstrap_upper<R: Rng + ?Sized>(
    n: usize,
    resamples: usize,
    level: f64,
    rng: &mut R,
    mut stat: impl FnMut(&[usize]) -> f64,
) -> f64 {
    let mut idx = vec![0; n];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            idx.iter_mut().for_each(|v| *v = rng.random_range(0..n));
            stat(&idx)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let pos = ((level * resamples as f64).ceil() as usize).clamp(1, resamples) - 1;
    stats[pos]
}

const BOOTSTRAP_BLOCKS: usize = 1000;

/// Per-block `(draws, Σ(a² − b²))` over contiguous blocks.
fn block_sums(a: &[f64], b: &[f64]) -> Vec<(f64, f64)> {
    let size = a.len().div_ceil(BOOTSTRAP_BLOCKS).max(1);
    a.chunks(size)
        .zip(b.chunks(size))
        .map(|(x, y)| (x.len() as f64, x.iter().zip(y).map(|(u, v)| u * u - v * v).sum()))
        .collect()
}

/// Largest over coordinates of the one-sided 95% bootstrap upper bound on
/// `Var(plus) − Var(base)` from paired draws (`draws × coords`).
///
/// Both estimators have the same mean, so the difference equals
/// `E[plus²] − E[base²]`, which is estimated from the paired per-draw
/// differences without the noise of two estimated means. Draws are
/// resampled in contiguous blocks, which keeps the cost independent of the
/// number of draws. A coordinate on which the two agree on every draw
/// contributes 0.
pub fn paired_variance_bound<R: Rng + ?Sized>(
    plus: &Array2<f64>,
    base: &Array2<f64>,
    resamples: usize,
    rng: &mut R,
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for col in 0..plus.ncols() {
        let a = plus.column(col).to_vec();
        let b = base.column(col).to_vec();
        let bound = if a == b {
            0.0
        } else {
            let blocks = block_sums(&a, &b);
            bootstrap_upper(blocks.len(), resamples, 0.95, rng, |idx| {
                let (n, s) = idx.iter().fold((0.0, 0.0), |(n, s), &i| (n + blocks[i].0, s + blocks[i].1));
                s / n
            })
        };
        worst = worst.max(bound);
    }
    worst
}

/// Paired variance comparison of ARS+ against ARS and ARSM+ against ARSM,
/// sharing `π`, the reference index and `f` on every draw.
pub fn rao_blackwell_dominance(
    instances: usize,
    draws: usize,
    resamples: usize,
    seed: u64,
) -> Result<Vec<OracleReport>> {
    let name = "rao-blackwell";
    let mut reports = Vec::new();
    for i in 0..instances {
        let s = instance_seed(seed, name, i);
        let mut rng = instance_rng(s);
        let k = rng.random_range(1..=2);
        let c = rng.random_range(2..=4);
        let params = random_params(&mut rng, k, c, LOGIT_SCALE);
        let f = LookupObjective::random_dense(&mut rng, k, c)?;
        let mut rows = [(); 4].map(|_| Array2::zeros((draws, k * c)));
        for d in 0..draws {
            let pi = sample_dirichlet_uniform(&mut rng, k, c);
            let j = rng.random_range(0..c);
            let outs = [
                ars(&pi, &swap_configs(&pi, &params, j)?, &f)?,
                ars_plus(&pi, &params, &f, j, &mut rng)?,
                arsm(&pi, &params, &f)?,
                arsm_plus(&pi, &params, &f)?,
            ];
            for (table, out) in rows.iter_mut().zip(outs) {
                table.row_mut(d).assign(&ndarray::Array1::from_iter(out.grad.cat.iter().copied()));
            }
        }
        let plus = paired_variance_bound(&rows[1], &rows[0], resamples, &mut rng);
        reports.push(OracleReport::new(name, Some(EstimatorId::ArsPlus), (k, c, s), plus, 0.0));
        let plus = paired_variance_bound(&rows[3], &rows[2], resamples, &mut rng);
        reports.push(OracleReport::new(name, Some(EstimatorId::ArsmPlus), (k, c, s), plus, 0.0));
    }
    Ok(reports)
}

/// Midpoints of `pi_conditional_interval` against rejection-sampled
/// conditional means: the error is `|midpoint − mean|` and the threshold
/// the 99% half-width.
pub fn interval_vs_rejection(instances: usize, accepted: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let name = "interval-vs-rejection";
    let mut reports = Vec::new();
    for i in 0..instances {
        let s = instance_seed(seed, name, i);
        let mut rng = instance_rng(s);
        let c = rng.random_range(2..=3);
        let params = random_params(&mut rng, 1, c, 1.0);
        let pi = sample_dirichlet_uniform(&mut rng, 1, c);
        let j = rng.random_range(0..c);
        let l = (j + rng.random_range(1..c)) % c;
        let state = swap_configs(&pi, &params, j)?;
        let logits = params.logits().row(0).to_vec();
        let row = pi.pi().row(0).to_vec();
        let configs = state.configs.row(0).to_vec();
        let (lo, hi) = pi_conditional_interval(&row, &logits, &configs, j, l)?;
        let settings = RejectionSettings { accepted, seed: s, ..Default::default() };
        let report = match rejection_conditional_mean(&logits, &row, &configs, j, l, settings) {
            Ok(rej) => {
                let (a, b) = rej.ci99();
                OracleReport::new(
                    name,
                    Some(EstimatorId::ArsPlus),
                    (1, c, s),
                    (0.5 * (lo + hi) - rej.mean).abs(),
                    0.5 * (b - a),
                )
            }
            Err(Error::LowAcceptance { .. }) => {
                OracleReport::new(name, Some(EstimatorId::ArsPlus), (1, c, s), f64::INFINITY, 0.0)
            }
            Err(e) => return Err(e),
        };
        reports.push(report);
    }
    Ok(reports)
}

/// Largest amount by which a drawn `π_j` falls outside its interval.
pub fn interval_containment(draws: usize, seed: u64) -> Result<OracleReport> {
    let name = "interval-containment";
    let mut rng = instance_rng(instance_seed(seed, name, 0));
    let mut worst = 0.0_f64;
    for _ in 0..draws {
        let k = rng.random_range(1..=3);
        let c = rng.random_range(2..=8);
        let params: CategoricalParams = random_params(&mut rng, k, c, LOGIT_SCALE);
        let pi = sample_dirichlet_uniform(&mut rng, k, c);
        let j = rng.random_range(0..c);
        let state = swap_configs(&pi, &params, j)?;
        for kk in 0..k {
            let l = (j + rng.random_range(1..c)) % c;
            let row = pi.pi().row(kk).to_vec();
            let (lo, hi) = pi_conditional_interval(
                &row,
                &params.logits().row(kk).to_vec(),
                &state.configs.row(kk).to_vec(),
                j,
                l,
            )?;
            worst = worst.max(lo - row[j]).max(row[j] - hi);
        }
    }
    Ok(OracleReport::new(name, Some(EstimatorId::ArsPlus), (0, 0, seed), worst, CONTAINMENT_TOL))
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub pass: bool,
    pub instances: usize,
    pub failures: usize,
    /// Set when the check could not run.
    pub error: Option<String>,
    pub reports: Vec<OracleReport>,
}

impl CheckSummary {
    pub fn from_reports(name: &str, reports: Result<Vec<OracleReport>>) -> Self {
        match reports {
            Ok(reports) => {
                let failures = reports.iter().filter(|r| !r.pass).count();
                Self {
                    name: name.into(),
                    pass: failures == 0,
                    instances: reports.len(),
                    failures,
                    error: None,
                    reports,
                }
            }
            Err(e) => Self {
                name: name.into(),
                pass: false,
                instances: 0,
                failures: 0,
                error: Some(e.to_string()),
                reports: vec![],
            },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub build: String,
    pub seed: u64,
    pub pass: bool,
    pub checks: Vec<CheckSummary>,
}

/// Every check at the sizes in `config`.
pub fn run_suite(config: &VerifyConfig, seed: u64) -> Result<VerifyReport> {
    let n = config.instances;
    let checks = vec![
        CheckSummary::from_reports("exact-unbiasedness", exact_unbiasedness(n, seed)),
        CheckSummary::from_reports("mutation", mutation_detected(n.max(1), seed).map(|r| vec![r])),
        CheckSummary::from_reports("coupling", coupling_correctness(n, seed)),
        CheckSummary::from_reports("binary-collapse", binary_collapse(n, seed)),
        CheckSummary::from_reports("vjp-finite-difference", vjp_finite_differences(n, seed)),
        CheckSummary::from_reports(
            "ars-family-monte-carlo",
            ars_family_unbiasedness(config.mc_instances, config.mc_draws, seed),
        ),
        CheckSummary::from_reports(
            "rao-blackwell",
            rao_blackwell_dominance(config.mc_instances, config.rao_blackwell_draws, 1000, seed),
        ),
        CheckSummary::from_reports(
            "interval-vs-rejection",
            interval_vs_rejection(config.rejection_instances, config.rejection_samples, seed),
        ),
        CheckSummary::from_reports(
            "interval-containment",
            interval_containment(config.mc_draws / 2, seed).map(|r| vec![r]),
        ),
    ];
    Ok(VerifyReport { build: String::new(), seed, pass: checks.iter().all(|c| c.pass), checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_pass(reports: &[OracleReport]) {
        for r in reports {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn small_suites_pass() {
        all_pass(&exact_unbiasedness(3, 1).unwrap());
        all_pass(&coupling_correctness(5, 1).unwrap());
        all_pass(&binary_collapse(3, 1).unwrap());
        all_pass(&vjp_finite_differences(5, 1).unwrap());
        all_pass(&[interval_containment(500, 1).unwrap()]);
    }

    #[test]
    fn mutant_is_caught() {
        assert!(mutation_detected(5, 3).unwrap().pass);
    }

    #[test]
    fn bernoulli_oracle_matches_closed_form() {
        // E[b0 + 2 b1] has gradient (σ'(θ0), 2σ'(θ1)).
        let logits = [0.3, -1.2];
        let g = exact_bernoulli_grad(&logits, |b| f64::from(b[0]) + 2.0 * f64::from(b[1]));
        let d = |a: f64| sigmoid(a) * (1.0 - sigmoid(a));
        assert!((g[0] - d(0.3)).abs() < 1e-15);
        assert!((g[1] - 2.0 * d(-1.2)).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_bound_orders_variances() {
        let mut rng = stream(0, "test", "bootstrap", 0);
        let base = Array2::from_shape_fn((2000, 1), |_| rng.random_range(-2.0..2.0));
        let plus = base.mapv(|v| 0.5 * v);
        let noise = Array2::from_shape_fn((2000, 1), |_| rng.random_range(-0.1..0.1));
        let plus = plus + noise;
        assert!(paired_variance_bound(&plus, &base, 200, &mut rng) < 0.0);
        assert!(paired_variance_bound(&base, &plus, 200, &mut rng) > 0.0);
        assert_eq!(paired_variance_bound(&base, &base, 200, &mut rng), 0.0);
    }
}
