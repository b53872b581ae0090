//! String-addressable estimators that draw their own randomness.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ars::{ars, ars_plus, arsm, arsm_plus, sample_dirichlet_uniform, swap_configs};
use crate::couplings::{sb_coupling_sample, tree_coupling_sample};
use crate::dist::{sample_categorical, softmax_probs, CategoricalParams, CategoryOrder, StickParams, TreeParams};
use crate::estimators::{disarm_iw, disarm_sb, disarm_tree, reinforce, rloo, EstimatorOutput, Objective};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EstimatorId {
    Reinforce,
    Rloo(usize),
    DisarmIw,
    DisarmSb(CategoryOrder),
    DisarmTree,
    Ars,
    Arsm,
    ArsPlus,
    ArsmPlus,
}

impl EstimatorId {
    /// The set compared by the variance replay.
    pub fn replay_defaults() -> Vec<EstimatorId> {
        use EstimatorId::*;
        vec![
            Rloo(2),
            DisarmIw,
            DisarmSb(CategoryOrder::Ascending),
            DisarmTree,
            Rloo(4),
            Ars,
            Arsm,
            Rloo(7),
            ArsPlus,
            ArsmPlus,
        ]
    }

    /// False for the Dirichlet-augmented estimators, whose randomness is
    /// continuous.
    pub fn is_enumerable(self) -> bool {
        !matches!(self, Self::Ars | Self::Arsm | Self::ArsPlus | Self::ArsmPlus)
    }

    /// Upper bound on distinct `f` evaluations per estimate.
    pub fn max_f_evals(self, categories: usize) -> usize {
        match self {
            Self::Reinforce => 1,
            Self::Rloo(n) => n,
            Self::DisarmIw | Self::DisarmSb(_) | Self::DisarmTree => 2,
            Self::Ars | Self::ArsPlus => categories,
            Self::Arsm | Self::ArsmPlus => categories * (categories - 1) / 2 + 1,
        }
    }

    /// One estimate of `∇_α E_q[f]` at `params`.
    pub fn estimate<O, R>(self, params: &CategoricalParams, f: &O, rng: &mut R) -> Result<EstimatorOutput>
    where
        O: Objective + ?Sized,
        R: Rng + ?Sized,
    {
        let probs = softmax_probs(params);
        let (k, c) = (params.dims(), params.categories());
        match self {
            Self::Reinforce => reinforce(&probs, &sample_categorical(&probs, rng), f),
            Self::Rloo(n) => {
                let samples: Vec<_> = (0..n).map(|_| sample_categorical(&probs, rng)).collect();
                rloo(&probs, &samples, f)
            }
            Self::DisarmIw => {
                let stick = StickParams::new(&probs, CategoryOrder::Ascending)?;
                disarm_iw(&probs, &sb_coupling_sample(&stick, rng), f)
            }
            Self::DisarmSb(order) => {
                let stick = StickParams::new(&probs, order)?;
                disarm_sb(&stick, &sb_coupling_sample(&stick, rng), f)
            }
            Self::DisarmTree => {
                let tree = TreeParams::new(&probs)?;
                disarm_tree(&tree, &tree_coupling_sample(&tree, rng), f)
            }
            Self::Ars => {
                let pi = sample_dirichlet_uniform(rng, k, c);
                let j = rng.random_range(0..c);
                ars(&pi, &swap_configs(&pi, params, j)?, f)
            }
            Self::ArsPlus => {
                let pi = sample_dirichlet_uniform(rng, k, c);
                let j = rng.random_range(0..c);
                ars_plus(&pi, params, f, j, rng)
            }
            Self::Arsm => arsm(&sample_dirichlet_uniform(rng, k, c), params, f),
            Self::ArsmPlus => arsm_plus(&sample_dirichlet_uniform(rng, k, c), params, f),
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Reinforce => write!(out, "reinforce"),
            Self::Rloo(n) => write!(out, "rloo-{n}"),
            Self::DisarmIw => write!(out, "disarm-iw"),
            Self::DisarmSb(CategoryOrder::Ascending) => write!(out, "disarm-sb"),
            Self::DisarmSb(CategoryOrder::Descending) => write!(out, "disarm-sb-desc"),
            Self::DisarmSb(CategoryOrder::Default) => write!(out, "disarm-sb-default"),
            Self::DisarmTree => write!(out, "disarm-tree"),
            Self::Ars => write!(out, "ars"),
            Self::Arsm => write!(out, "arsm"),
            Self::ArsPlus => write!(out, "ars-plus"),
            Self::ArsmPlus => write!(out, "arsm-plus"),
        }
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let id = match s.trim().to_ascii_lowercase().as_str() {
            "reinforce" => Self::Reinforce,
            "disarm-iw" => Self::DisarmIw,
            "disarm-sb" | "disarm-sb-asc" => Self::DisarmSb(CategoryOrder::Ascending),
            "disarm-sb-desc" => Self::DisarmSb(CategoryOrder::Descending),
            "disarm-sb-default" => Self::DisarmSb(CategoryOrder::Default),
            "disarm-tree" => Self::DisarmTree,
            "ars" => Self::Ars,
            "arsm" => Self::Arsm,
            "ars-plus" | "ars+" => Self::ArsPlus,
            "arsm-plus" | "arsm+" => Self::ArsmPlus,
            other => match other.strip_prefix("rloo-").map(str::parse::<usize>) {
                Some(Ok(n)) if n >= 2 => Self::Rloo(n),
                _ => return Err(Error::UnknownEstimator(s.to_string())),
            },
        };
        Ok(id)
    }
}

impl TryFrom<String> for EstimatorId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EstimatorId> for String {
    fn from(id: EstimatorId) -> String {
        id.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn names_round_trip() {
        let mut all = EstimatorId::replay_defaults();
        all.extend([
            EstimatorId::Reinforce,
            EstimatorId::DisarmSb(CategoryOrder::Descending),
            EstimatorId::DisarmSb(CategoryOrder::Default),
        ]);
        for id in all {
            assert_eq!(id.to_string().parse::<EstimatorId>().unwrap(), id);
        }
        assert!("rloo-1".parse::<EstimatorId>().is_err());
        assert!("nope".parse::<EstimatorId>().is_err());
    }

    #[test]
    fn every_estimator_runs_within_its_budget() {
        let params = CategoricalParams::from_rows(&[vec![0.1, -0.3, 0.7, 0.0], vec![1.0, 0.2, -0.5, 0.3]]).unwrap();
        let f = |z: &[usize]| (z[0] as f64 - 1.5).powi(2) + z[1] as f64;
        let mut rng = stream(1, "test", "registry", 0);
        let mut ids = EstimatorId::replay_defaults();
        ids.push(EstimatorId::Reinforce);
        for id in ids {
            for _ in 0..50 {
                let out = id.estimate(&params, &f, &mut rng).unwrap();
                assert_eq!(out.grad.cat.dim(), (2, 4));
                assert!(out.f_evals >= 1 && out.f_evals <= id.max_f_evals(4), "{id}: {}", out.f_evals);
                assert!(out.grad.cat.iter().all(|g| g.is_finite()));
            }
        }
    }

    #[test]
    fn tree_rejects_non_power_of_two() {
        let params = CategoricalParams::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        let f = |z: &[usize]| z[0] as f64;
        let mut rng = stream(1, "test", "registry-tree", 0);
        assert!(matches!(EstimatorId::DisarmTree.estimate(&params, &f, &mut rng), Err(Error::NotPowerOfTwo(3))));
    }
}
