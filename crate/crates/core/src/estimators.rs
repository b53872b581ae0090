//! Score-function estimators: REINFORCE, RLOO, binary DisARM and the three
//! coupled categorical estimators DisARM-IW, DisARM-SB and DisARM-Tree.
//!
//! Every estimator here returns a gradient of `E_q[f(z)]` with respect to
//! the `K × C` categorical logits. The binary-reparameterized estimators also
//! keep their raw gradient with respect to the stick or tree logits in
//! [`GradEstimate::bin`].
//!
//! `f` is memoized within one estimate, so a configuration that appears
//! twice is evaluated once and [`EstimatorOutput::f_evals`] counts distinct
//! calls.

use ndarray::Array2;

use crate::couplings::{AntitheticPair, CoupledCatPair};
use crate::dist::{
    check_sample, sb_decode_row, sb_vjp, tree_vjp, CategoricalSample, GradEstimate, ProbTable, StickParams, TreeParams,
};
use crate::numeric::sigmoid;
use crate::{Error, Result};

/// A cost function over joint configurations `z ∈ {0..C-1}^K`.
pub trait Objective {
    fn eval(&self, z: &[usize]) -> f64;
}

impl<F: Fn(&[usize]) -> f64> Objective for F {
    fn eval(&self, z: &[usize]) -> f64 {
        self(z)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorOutput {
    pub grad: GradEstimate,
    /// Distinct evaluations of `f` made for this estimate.
    pub f_evals: usize,
    /// The distinct values in call order; the first one is always at a
    /// configuration distributed as `q`.
    pub values: Vec<f64>,
    /// Configurations distributed as `q` whose average gives the pathwise
    /// term of a parameter-dependent `f`.
    pub samples: Vec<Vec<usize>>,
}

/// Memoizes `f` over the handful of configurations one estimate touches.
pub(crate) struct EvalCache<'a, O: Objective + ?Sized> {
    f: &'a O,
    seen: Vec<(Vec<usize>, f64)>,
}

impl<'a, O: Objective + ?Sized> EvalCache<'a, O> {
    pub(crate) fn new(f: &'a O) -> Self {
        Self { f, seen: Vec::new() }
    }

    pub(crate) fn eval(&mut self, z: &[usize]) -> f64 {
        if let Some((_, v)) = self.seen.iter().find(|(c, _)| c == z) {
            return *v;
        }
        let v = self.f.eval(z);
        self.seen.push((z.to_vec(), v));
        v
    }

    pub(crate) fn finish(self, grad: GradEstimate, samples: Vec<Vec<usize>>) -> EstimatorOutput {
        EstimatorOutput {
            grad,
            samples,
            f_evals: self.seen.len(),
            values: self.seen.into_iter().map(|(_, v)| v).collect(),
        }
    }
}

/// `f(z) · ∇ log q(z)`.
pub fn reinforce<O: Objective + ?Sized>(probs: &ProbTable, z: &CategoricalSample, f: &O) -> Result<EstimatorOutput> {
    check_sample(probs, z)?;
    let mut cache = EvalCache::new(f);
    let fz = cache.eval(z);
    let mut grad = crate::dist::score_grad(probs, z)?;
    grad.cat.mapv_inplace(|g| g * fz);
    Ok(cache.finish(grad, vec![z.to_vec()]))
}

/// REINFORCE with a leave-one-out baseline over `n ≥ 2` independent samples:
/// `(1/n) Σ_i (f(z_i) − mean_{j≠i} f(z_j)) ∇ log q(z_i)`.
pub fn rloo<O: Objective + ?Sized>(probs: &ProbTable, samples: &[CategoricalSample], f: &O) -> Result<EstimatorOutput> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("RLOO needs at least 2 samples, got {n}")));
    }
    for z in samples {
        check_sample(probs, z)?;
    }
    let mut cache = EvalCache::new(f);
    let values: Vec<f64> = samples.iter().map(|z| cache.eval(z)).collect();
    let total: f64 = values.iter().sum();
    let nf = n as f64;
    let mut cat = Array2::zeros(probs.probs().dim());
    for (z, &fz) in samples.iter().zip(&values) {
        let centred = (fz - (total - fz) / (nf - 1.0)) / nf;
        cat.scaled_add(-centred, probs.probs());
        for (k, &zk) in z.iter().enumerate() {
            cat[[k, zk]] += centred;
        }
    }
    let drawn = samples.iter().map(|z| z.to_vec()).collect();
    Ok(cache.finish(GradEstimate { cat, bin: None }, drawn))
}

/// Output of [`disarm_binary`]: one entry per Bernoulli logit.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryOutput {
    pub grad: Vec<f64>,
    pub f_evals: usize,
    pub values: Vec<f64>,
}

/// DisARM for factorized Bernoulli variables with logits `logits` and one
/// antithetic pair per dimension.
pub fn disarm_binary(logits: &[f64], pairs: &[AntitheticPair], f: impl Fn(&[u8]) -> f64) -> Result<BinaryOutput> {
    if logits.len() != pairs.len() {
        return Err(Error::Shape(format!("{} logits, {} pairs", logits.len(), pairs.len())));
    }
    let b: Vec<u8> = pairs.iter().map(|p| p.b).collect();
    let bt: Vec<u8> = pairs.iter().map(|p| p.b_tilde).collect();
    let fb = f(&b);
    let (values, fbt) = if b == bt {
        (vec![fb], fb)
    } else {
        let v = f(&bt);
        (vec![fb, v], v)
    };
    let half_diff = 0.5 * (fb - fbt);
    let grad = logits
        .iter()
        .zip(pairs)
        .map(|(&a, p)| {
            if p.b == p.b_tilde {
                0.0
            } else {
                let sign = if p.b_tilde == 1 { -1.0 } else { 1.0 };
                half_diff * sign * sigmoid(a.abs())
            }
        })
        .collect();
    Ok(BinaryOutput { grad, f_evals: values.len(), values })
}

/// Importance-weighted two-sample estimator over a marginal-preserving
/// coupling: `½ w_k (f(z) − f(z~)) (∇_k log q(z_k) − ∇_k log q(z~_k))`.
pub fn disarm_iw<O: Objective + ?Sized>(probs: &ProbTable, pair: &CoupledCatPair, f: &O) -> Result<EstimatorOutput> {
    check_sample(probs, &pair.z)?;
    check_sample(probs, &pair.z_tilde)?;
    let mut cache = EvalCache::new(f);
    let fz = cache.eval(&pair.z);
    let fzt = cache.eval(&pair.z_tilde);
    let mut cat = Array2::zeros(probs.probs().dim());
    for (k, (&a, &b)) in pair.z.iter().zip(pair.z_tilde.iter()).enumerate() {
        if a == b {
            continue;
        }
        let w = pair.weights.get(k).copied().unwrap_or(0.0);
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::MissingWeight(k));
        }
        // The probability parts of the two scores cancel.
        let g = 0.5 * w * (fz - fzt);
        cat[[k, a]] += g;
        cat[[k, b]] -= g;
    }
    Ok(cache.finish(GradEstimate { cat, bin: None }, pair_samples(pair)))
}

fn pair_samples(pair: &CoupledCatPair) -> Vec<Vec<usize>> {
    vec![pair.z.to_vec(), pair.z_tilde.to_vec()]
}

fn check_pair_shape(pair: &CoupledCatPair, k: usize, c: usize) -> Result<()> {
    let want = (k, c - 1);
    if pair.bits.bits.dim() != want || pair.bits_tilde.bits.dim() != want {
        return Err(Error::Shape(format!("bit tables must be {want:?}")));
    }
    Ok(())
}

/// Stick-breaking DisARM. Per dimension, with `r`, `r~` the decoded indices in
/// stick order and `Δ = f(z) − f(z~)`, stick `c` contributes
///
/// - `½ Δ (−1)^{b~_c} 1{b_c ≠ b~_c} σ(|α_c|)` for `c ≤ min(r, r~)`,
/// - `−½ Δ (b~_c − σ(α_c))` for `r < c ≤ r~`,
/// - `½ Δ (b_c − σ(α_c))` for `r~ < c ≤ r`,
/// - nothing beyond `max(r, r~)`.
pub fn disarm_sb<O: Objective + ?Sized>(stick: &StickParams, pair: &CoupledCatPair, f: &O) -> Result<EstimatorOutput> {
    disarm_sb_impl(stick, pair, f, 1.0)
}

fn disarm_sb_impl<O: Objective + ?Sized>(
    stick: &StickParams,
    pair: &CoupledCatPair,
    f: &O,
    case2_sign: f64,
) -> Result<EstimatorOutput> {
    let (k, c) = (stick.dims(), stick.categories());
    check_pair_shape(pair, k, c)?;
    let mut cache = EvalCache::new(f);
    let fz = cache.eval(&pair.z);
    let fzt = cache.eval(&pair.z_tilde);
    let half_diff = 0.5 * (fz - fzt);
    let mut bin = Array2::zeros((k, c - 1));
    for kk in 0..k {
        let b = pair.bits.bits.row(kk);
        let bt = pair.bits_tilde.bits.row(kk);
        let r = sb_decode_row(b.as_slice().expect("layout"));
        let rt = sb_decode_row(bt.as_slice().expect("layout"));
        let alpha = stick.logits().row(kk);
        for i in 0..=r.max(rt).min(c - 2) {
            let s = sigmoid(alpha[i]);
            bin[[kk, i]] = if i <= r.min(rt) {
                if b[i] == bt[i] {
                    0.0
                } else {
                    let sign = if bt[i] == 1 { -1.0 } else { 1.0 };
                    half_diff * sign * sigmoid(alpha[i].abs())
                }
            } else if r < i {
                // r < i <= r~: only z~ still depends on stick i.
                -half_diff * case2_sign * (f64::from(bt[i]) - s)
            } else {
                half_diff * (f64::from(b[i]) - s)
            };
        }
    }
    let grad = sb_vjp(stick, &bin)?;
    Ok(cache.finish(grad, pair_samples(pair)))
}

/// Tree DisARM: the DisARM term on `I(b) ∩ I(b~)`, one-sided score terms on
/// the symmetric difference, zero elsewhere.
pub fn disarm_tree<O: Objective + ?Sized>(tree: &TreeParams, pair: &CoupledCatPair, f: &O) -> Result<EstimatorOutput> {
    let (k, c) = (tree.dims(), tree.categories());
    check_pair_shape(pair, k, c)?;
    let mut cache = EvalCache::new(f);
    let fz = cache.eval(&pair.z);
    let fzt = cache.eval(&pair.z_tilde);
    let half_diff = 0.5 * (fz - fzt);
    let mut bin = Array2::zeros((k, c - 1));
    for kk in 0..k {
        let b = pair.bits.bits.row(kk);
        let bt = pair.bits_tilde.bits.row(kk);
        let route = crate::dist::routing_set_row(b.as_slice().expect("layout"));
        let route_t = crate::dist::routing_set_row(bt.as_slice().expect("layout"));
        let alpha = tree.logits().row(kk);
        for node in 0..c - 1 {
            let (in_b, in_bt) = (route.contains(&node), route_t.contains(&node));
            let s = sigmoid(alpha[node]);
            bin[[kk, node]] = match (in_b, in_bt) {
                (true, true) if b[node] != bt[node] => {
                    let sign = if bt[node] == 1 { -1.0 } else { 1.0 };
                    half_diff * sign * sigmoid(alpha[node].abs())
                }
                (false, true) => -half_diff * (f64::from(bt[node]) - s),
                (true, false) => half_diff * (f64::from(b[node]) - s),
                _ => 0.0,
            };
        }
    }
    let grad = tree_vjp(tree, &bin)?;
    Ok(cache.finish(grad, pair_samples(pair)))
}

/// Deliberately broken estimator variants, used to check that the
/// verification suite notices bias.
#[doc(hidden)]
pub mod mutation {
    use super::*;

    /// [`disarm_sb`] with the sign of the `r < c ≤ r~` case flipped.
    pub fn disarm_sb_negated_case2<O: Objective + ?Sized>(
        stick: &StickParams,
        pair: &CoupledCatPair,
        f: &O,
    ) -> Result<EstimatorOutput> {
        disarm_sb_impl(stick, pair, f, -1.0)
    }
}
