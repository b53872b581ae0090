//! Dirichlet-augmentation estimators.
//!
//! A categorical row with logits `α` is reparameterized as
//! `z = argmin_i π_i e^{−α_i}` with `π ~ Dirichlet(1_C)`. Exchanging two
//! coordinates `m` and `j` of `π` in every row and recomputing the argmin
//! gives the swapped configuration `z^{m⇄j}`. ARS uses one reference `j`,
//! ARSM averages over all of them, and the `+` variants zero dimensions where
//! all swapped configurations agree. ARS+ additionally integrates `π_j` over
//! its conditional interval.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::dist::{CategoricalParams, GradEstimate};
use crate::estimators::{EstimatorOutput, EvalCache, Objective};
use crate::{Error, Result};

/// One `Dirichlet(1_C)` draw per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletDraw {
    pi: Array2<f64>,
}

impl DirichletDraw {
    pub fn new(pi: Array2<f64>) -> Result<Self> {
        if pi.nrows() == 0 || pi.ncols() == 0 {
            return Err(Error::Shape("empty Dirichlet draw".into()));
        }
        for row in pi.rows() {
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::InvalidArgument("Dirichlet rows must be non-negative".into()));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("Dirichlet row sums to {s}")));
            }
        }
        Ok(Self { pi })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let pi = Array2::from_shape_vec((rows.len(), c), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(pi)
    }

    pub fn pi(&self) -> &Array2<f64> {
        &self.pi
    }

    pub fn dims(&self) -> usize {
        self.pi.nrows()
    }

    pub fn categories(&self) -> usize {
        self.pi.ncols()
    }
}

/// Uniform simplex rows via normalized standard exponentials.
pub fn sample_dirichlet_uniform<R: Rng + ?Sized>(rng: &mut R, dims: usize, categories: usize) -> DirichletDraw {
    let mut pi = Array2::zeros((dims, categories));
    for mut row in pi.rows_mut() {
        for p in row.iter_mut() {
            *p = Exp1.sample(rng);
        }
        let s: f64 = row.sum();
        row.mapv_inplace(|e: f64| e / s);
    }
    DirichletDraw { pi }
}

/// `row` with entries `m` and `j` exchanged.
pub fn swapped_row(row: &[f64], m: usize, j: usize) -> Vec<f64> {
    let mut out = row.to_vec();
    out.swap(m, j);
    out
}

/// `argmin_i π_i e^{−α_i}`, ties to the smallest index.
pub fn argmin_config(pi_row: &[f64], logits_row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (i, (&p, &a)) in pi_row.iter().zip(logits_row).enumerate() {
        let s = p.ln() - a;
        if s < best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Swapped configurations for one reference index `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SwapState {
    pub reference: usize,
    /// `configs[[k, m]] = z^{m⇄j}_k`.
    pub configs: Array2<usize>,
    /// `delta[k]` is true when every `z^{m⇄j}_k` is the same.
    pub delta: Vec<bool>,
}

impl SwapState {
    /// The joint configuration `z^{m⇄j}`.
    pub fn config(&self, m: usize) -> Vec<usize> {
        self.configs.column(m).to_vec()
    }
}

fn check_shapes(pi: &DirichletDraw, params: &CategoricalParams) -> Result<()> {
    if pi.pi.dim() != params.logits().dim() {
        return Err(Error::Shape(format!(
            "Dirichlet draw is {:?} but logits are {:?}",
            pi.pi.dim(),
            params.logits().dim()
        )));
    }
    Ok(())
}

fn check_index(name: &str, i: usize, c: usize) -> Result<()> {
    if i >= c {
        return Err(Error::InvalidArgument(format!("{name} = {i} out of range for {c} categories")));
    }
    Ok(())
}

pub fn swap_configs(pi: &DirichletDraw, params: &CategoricalParams, j: usize) -> Result<SwapState> {
    check_shapes(pi, params)?;
    let (k, c) = pi.pi.dim();
    check_index("j", j, c)?;
    let mut configs = Array2::zeros((k, c));
    let mut delta = vec![true; k];
    for kk in 0..k {
        let row = pi.pi.row(kk).to_vec();
        let alpha = params.logits().row(kk).to_vec();
        for m in 0..c {
            configs[[kk, m]] = argmin_config(&swapped_row(&row, m, j), &alpha);
        }
        delta[kk] = configs.row(kk).iter().all(|&z| z == configs[[kk, 0]]);
    }
    Ok(SwapState { reference: j, configs, delta })
}

/// `f(z^{m⇄j})` for every `m`, evaluating the unswapped configuration first.
fn swap_values<O: Objective + ?Sized>(state: &SwapState, cache: &mut EvalCache<'_, O>) -> Vec<f64> {
    let c = state.configs.ncols();
    cache.eval(&state.config(state.reference));
    (0..c).map(|m| cache.eval(&state.config(m))).collect()
}

fn ars_grad(values: &[f64], factors: impl Fn(usize) -> f64, k: usize) -> Array2<f64> {
    let c = values.len();
    let mean = values.iter().sum::<f64>() / c as f64;
    Array2::from_shape_fn((k, c), |(kk, cc)| (values[cc] - mean) * factors(kk))
}

/// `g_{k,c} = [f(z^{c⇄j}) − (1/C) Σ_m f(z^{m⇄j})] (1 − C π_{k,j})`.
pub fn ars<O: Objective + ?Sized>(pi: &DirichletDraw, state: &SwapState, f: &O) -> Result<EstimatorOutput> {
    if state.configs.dim() != pi.pi.dim() {
        return Err(Error::Shape("swap state does not match the Dirichlet draw".into()));
    }
    let (k, c) = pi.pi.dim();
    let j = state.reference;
    let mut cache = EvalCache::new(f);
    let values = swap_values(state, &mut cache);
    let cat = ars_grad(&values, |kk| 1.0 - c as f64 * pi.pi[[kk, j]], k);
    Ok(cache.finish(GradEstimate { cat, bin: None }, vec![state.config(j)]))
}

fn arsm_core<O: Objective + ?Sized>(
    pi: &DirichletDraw,
    params: &CategoricalParams,
    f: &O,
) -> Result<(EstimatorOutput, Vec<bool>)> {
    check_shapes(pi, params)?;
    let (k, c) = pi.pi.dim();
    let mut cache = EvalCache::new(f);
    let mut cat = Array2::zeros((k, c));
    let mut delta_all = vec![true; k];
    let base: Vec<usize> =
        (0..k).map(|kk| argmin_config(&pi.pi.row(kk).to_vec(), &params.logits().row(kk).to_vec())).collect();
    for j in 0..c {
        let state = swap_configs(pi, params, j)?;
        for (kk, d) in delta_all.iter_mut().enumerate() {
            *d &= state.configs.row(kk).iter().all(|&z| z == base[kk]);
        }
        let values = swap_values(&state, &mut cache);
        cat.scaled_add(1.0 / c as f64, &ars_grad(&values, |kk| 1.0 - c as f64 * pi.pi[[kk, j]], k));
    }
    Ok((cache.finish(GradEstimate { cat, bin: None }, vec![base]), delta_all))
}

/// ARS averaged over every reference index, with `f` deduplicated across
/// references (`z^{c⇄j} = z^{j⇄c}`).
pub fn arsm<O: Objective + ?Sized>(pi: &DirichletDraw, params: &CategoricalParams, f: &O) -> Result<EstimatorOutput> {
    Ok(arsm_core(pi, params, f)?.0)
}

/// ARSM with dimension `k` zeroed whenever every swapped configuration, over
/// all references and all swaps, agrees in that dimension.
pub fn arsm_plus<O: Objective + ?Sized>(
    pi: &DirichletDraw,
    params: &CategoricalParams,
    f: &O,
) -> Result<EstimatorOutput> {
    let (mut out, delta_all) = arsm_core(pi, params, f)?;
    for (kk, &d) in delta_all.iter().enumerate() {
        if d {
            out.grad.cat.row_mut(kk).fill(0.0);
        }
    }
    Ok(out)
}

/// The set of `π_j` values that, with every coordinate other than `j` and `l`
/// held fixed and `π_l = 1 − Σ_{n≠j,l} π_n − π_j`, reproduce every swapped
/// configuration in `configs` (indexed by `m`). Entries `j` and `l` of
/// `pi_row` are ignored.
pub fn pi_conditional_interval(
    pi_row: &[f64],
    logits_row: &[f64],
    configs: &[usize],
    j: usize,
    l: usize,
) -> Result<(f64, f64)> {
    let c = pi_row.len();
    if logits_row.len() != c || configs.len() != c {
        return Err(Error::Shape("row, logits and configs must have equal length".into()));
    }
    check_index("j", j, c)?;
    check_index("l", l, c)?;
    if j == l {
        return Err(Error::InvalidArgument("l must differ from j".into()));
    }
    let rest: f64 = (0..c).filter(|&n| n != j && n != l).map(|n| pi_row[n]).sum();
    let total = (1.0 - rest).max(0.0);
    // π_x = a + b t, with t = π_j.
    let affine = |x: usize| -> (f64, f64) {
        if x == j {
            (0.0, 1.0)
        } else if x == l {
            (total, -1.0)
        } else {
            (pi_row[x], 0.0)
        }
    };
    let (mut lo, mut hi) = (0.0_f64, total);
    for (m, &z) in configs.iter().enumerate() {
        check_index("config", z, c)?;
        // Position i of the swapped row holds π_{σ(i)}.
        let source = |i: usize| {
            if i == m {
                j
            } else if i == j {
                m
            } else {
                i
            }
        };
        let (az, bz) = affine(source(z));
        for i in (0..c).filter(|&i| i != z) {
            let (ai, bi) = affine(source(i));
            // (az + bz t) e^{−α_z} ≤ (ai + bi t) e^{−α_i}
            let rho = (logits_row[i] - logits_row[z]).exp();
            let slope = bz * rho - bi;
            let bound = ai - az * rho;
            if slope > 0.0 {
                hi = hi.min(bound / slope);
            } else if slope < 0.0 {
                lo = lo.max(bound / slope);
            } else if bound < -1e-12 {
                return Err(Error::EmptyInterval { lo, hi: bound });
            }
        }
    }
    if hi < lo {
        if lo - hi > 1e-12 {
            return Err(Error::EmptyInterval { lo, hi });
        }
        hi = lo;
    }
    Ok((lo, hi))
}

/// ARS+ with a fixed redundant index `l[k]` per dimension.
pub fn ars_plus_with_redundant<O: Objective + ?Sized>(
    pi: &DirichletDraw,
    params: &CategoricalParams,
    f: &O,
    j: usize,
    l: &[usize],
) -> Result<EstimatorOutput> {
    let state = swap_configs(pi, params, j)?;
    let (k, c) = pi.pi.dim();
    if l.len() != k {
        return Err(Error::Shape(format!("need {k} redundant indices, got {}", l.len())));
    }
    let mut factors = vec![0.0; k];
    for kk in 0..k {
        if state.delta[kk] {
            continue;
        }
        let row = pi.pi.row(kk).to_vec();
        let configs = state.configs.row(kk).to_vec();
        let (lo, hi) = pi_conditional_interval(&row, &params.logits().row(kk).to_vec(), &configs, j, l[kk])?;
        factors[kk] = 1.0 - c as f64 * 0.5 * (lo + hi);
    }
    let mut cache = EvalCache::new(f);
    let values = swap_values(&state, &mut cache);
    let cat = ars_grad(&values, |kk| factors[kk], k);
    Ok(cache.finish(GradEstimate { cat, bin: None }, vec![state.config(j)]))
}

/// ARS+ with the redundant index drawn uniformly from `{0..C-1} \ {j}` for
/// each dimension.
pub fn ars_plus<O: Objective + ?Sized, R: Rng + ?Sized>(
    pi: &DirichletDraw,
    params: &CategoricalParams,
    f: &O,
    j: usize,
    rng: &mut R,
) -> Result<EstimatorOutput> {
    let c = pi.categories();
    check_index("j", j, c)?;
    if c < 2 {
        return Err(Error::InvalidArgument("ARS+ needs at least 2 categories".into()));
    }
    let l: Vec<usize> = (0..pi.dims())
        .map(|_| {
            let r = rng.random_range(0..c - 1);
            if r >= j {
                r + 1
            } else {
                r
            }
        })
        .collect();
    ars_plus_with_redundant(pi, params, f, j, &l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    fn params(rows: &[&[f64]]) -> CategoricalParams {
        CategoricalParams::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn dirichlet_rows_sum_to_one_and_means_match() {
        let mut rng = stream(7, "test", "dirichlet", 0);
        let n = 20_000;
        let mut mean = Array2::<f64>::zeros((2, 4));
        for _ in 0..n {
            let d = sample_dirichlet_uniform(&mut rng, 2, 4);
            for row in d.pi().rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
            mean.scaled_add(1.0 / n as f64, d.pi());
        }
        // Var(π_i) = 3/80 for Dirichlet(1,1,1,1).
        let se = (3.0 / 80.0 / n as f64).sqrt();
        assert!(mean.iter().all(|&m| (m - 0.25).abs() < 4.0 * se));
    }

    #[test]
    fn dirichlet_two_categories_is_uniform() {
        let mut rng = stream(11, "test", "dirichlet-ks", 0);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sample_dirichlet_uniform(&mut rng, 1, 2).pi()[[0, 0]]).collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - x).abs()))
            .fold(0.0, f64::max);
        // 1% critical value of the KS statistic.
        assert!(d < 1.63 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn swap_examples() {
        assert_eq!(swapped_row(&[0.2, 0.3, 0.5], 0, 2), vec![0.5, 0.3, 0.2]);
        let pi = DirichletDraw::from_rows(&[vec![0.3, 0.1, 0.6]]).unwrap();
        let p = params(&[&[0.0, 0.0, 0.0]]);
        for j in 0..3 {
            let s = swap_configs(&pi, &p, j).unwrap();
            assert_eq!(s.configs[[0, j]], 1);
        }
        let s = swap_configs(&pi, &p, 0).unwrap();
        assert_eq!(s.configs, array![[1, 0, 1]]);
        assert!(!s.delta[0]);
    }

    #[test]
    fn ars_zero_cases() {
        let pi = DirichletDraw::from_rows(&[vec![0.3, 0.1, 0.6], vec![1.0 / 3.0, 0.5, 1.0 / 6.0]]).unwrap();
        let p = params(&[&[0.2, -0.1, 0.4], &[0.0, 1.0, -1.0]]);
        let constant = |_: &[usize]| 2.5;
        let state = swap_configs(&pi, &p, 0).unwrap();
        assert!(ars(&pi, &state, &constant).unwrap().grad.cat.iter().all(|&g| g == 0.0));
        assert!(arsm(&pi, &p, &constant).unwrap().grad.cat.iter().all(|g| g.abs() < 1e-15));
        let f = |z: &[usize]| (z[0] * 3 + z[1]) as f64;
        let out = ars(&pi, &state, &f).unwrap();
        // π_{1,0} = 1/3 makes the factor vanish in the second dimension.
        assert!(out.grad.cat.row(1).iter().all(|g| g.abs() < 1e-15));
        assert!(out.f_evals <= 3);
    }

    #[test]
    fn arsm_dedup_bound() {
        let mut rng = stream(3, "test", "arsm-dedup", 0);
        let p = params(&[&[0.3, -0.2, 0.1, 0.9, -1.0], &[0.0, 0.5, 0.2, -0.3, 0.1]]);
        let f = |z: &[usize]| (z[0] * 5 + z[1]) as f64;
        for _ in 0..200 {
            let pi = sample_dirichlet_uniform(&mut rng, 2, 5);
            let out = arsm(&pi, &p, &f).unwrap();
            assert!(out.f_evals <= 5 * 4 / 2 + 1);
        }
    }

    #[test]
    fn arsm_plus_mask_identities() {
        let mut rng = stream(5, "test", "arsm-mask", 0);
        let p = params(&[&[0.3, -0.2, 0.1], &[2.0, -1.0, 0.0]]);
        let f = |z: &[usize]| ((z[0] + 1) * (z[1] + 2)) as f64;
        let (mut saw_zero, mut saw_same) = (false, false);
        for _ in 0..500 {
            let pi = sample_dirichlet_uniform(&mut rng, 2, 3);
            let (base, delta) = arsm_core(&pi, &p, &f).unwrap();
            let plus = arsm_plus(&pi, &p, &f).unwrap();
            for kk in 0..2 {
                if delta[kk] {
                    saw_zero = true;
                    assert!(plus.grad.cat.row(kk).iter().all(|&g| g == 0.0));
                } else {
                    saw_same = true;
                    assert_eq!(plus.grad.cat.row(kk), base.grad.cat.row(kk));
                }
            }
        }
        assert!(saw_zero && saw_same);
    }

    #[test]
    fn interval_examples() {
        let (lo, hi) = pi_conditional_interval(&[0.0, 0.0], &[0.0, 0.0], &[0, 1], 0, 1).unwrap();
        assert_eq!((lo, hi), (0.0, 0.5));
        // Unconstrained: a dominant third category fixes every config.
        let (lo, hi) = pi_conditional_interval(&[0.0, 0.0, 0.4], &[0.0, 0.0, 50.0], &[2, 2, 2], 0, 1).unwrap();
        assert!(lo < 1e-20);
        assert!((hi - 0.6).abs() < 1e-15);
        assert!(pi_conditional_interval(&[0.0, 0.0], &[0.0, 0.0], &[0, 1], 0, 0).is_err());
        // Needs π_0 ≤ 1/(1+e) and π_0 ≥ e/(1+e) at once.
        assert!(matches!(
            pi_conditional_interval(&[0.0, 0.0], &[0.0, 1.0], &[0, 0], 0, 1),
            Err(Error::EmptyInterval { .. })
        ));
    }

    #[test]
    fn ars_plus_two_category_example() {
        // π = (0.2, 0.8), α = 0: configs (0, 1) so π_0 ∈ [0, 0.5] and the factor is 0.5.
        let pi = DirichletDraw::from_rows(&[vec![0.2, 0.8]]).unwrap();
        let p = params(&[&[0.0, 0.0]]);
        let f = |z: &[usize]| if z[0] == 0 { 1.0 } else { 0.0 };
        let out = ars_plus_with_redundant(&pi, &p, &f, 0, &[1]).unwrap();
        assert_eq!(out.grad.cat, array![[0.25, -0.25]]);
        let state = swap_configs(&pi, &p, 0).unwrap();
        let raw = ars(&pi, &state, &f).unwrap();
        assert_eq!(raw.f_evals, out.f_evals);
    }

    #[test]
    fn interval_contains_the_drawn_coordinate() {
        let mut rng = stream(9, "test", "interval", 0);
        let p = params(&[&[0.4, -0.7, 1.1, 0.0]]);
        for _ in 0..2_000 {
            let pi = sample_dirichlet_uniform(&mut rng, 1, 4);
            let j = rng.random_range(0..4);
            let l = (j + 1 + rng.random_range(0..3)) % 4;
            let state = swap_configs(&pi, &p, j).unwrap();
            let row = pi.pi().row(0).to_vec();
            let (lo, hi) =
                pi_conditional_interval(&row, &p.logits().row(0).to_vec(), &state.configs.row(0).to_vec(), j, l)
                    .unwrap();
            assert!(lo <= row[j] && row[j] <= hi, "{lo} {} {hi}", row[j]);
        }
    }

    #[test]
    fn ars_plus_masks_agreeing_dimensions() {
        let mut rng = stream(13, "test", "ars-plus-mask", 0);
        let p = params(&[&[3.0, -2.0, -2.0], &[0.0, 0.1, -0.1]]);
        let f = |z: &[usize]| (z[0] * 3 + z[1]) as f64;
        for _ in 0..300 {
            let pi = sample_dirichlet_uniform(&mut rng, 2, 3);
            let state = swap_configs(&pi, &p, 1).unwrap();
            let out = ars_plus(&pi, &p, &f, 1, &mut rng).unwrap();
            for kk in 0..2 {
                if state.delta[kk] {
                    assert!(out.grad.cat.row(kk).iter().all(|&g| g == 0.0));
                }
            }
        }
    }
}
