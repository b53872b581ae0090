//! Small objectives: lookup tables for the oracle checks and a linear
//! categorical VAE for training runs.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dist::{sample_categorical, softmax_probs, CategoricalParams, CategoricalSample};
use crate::estimators::Objective;
use crate::numeric::{log_sigmoid, log_sum_exp, sigmoid};
use crate::{Error, Result};

/// Largest table [`LookupObjective::random_dense`] builds.
pub const MAX_DENSE_TABLE: usize = 100_000;

/// `f` given by a table, either over every joint configuration or as a sum
/// of per-dimension tables.
#[derive(Clone, Debug, PartialEq)]
pub enum LookupObjective {
    Dense { dims: usize, categories: usize, table: Vec<f64> },
    Separable(Array2<f64>),
}

impl LookupObjective {
    pub fn dense(dims: usize, categories: usize, table: Vec<f64>) -> Result<Self> {
        let size = categories.checked_pow(dims as u32).filter(|&s| s <= MAX_DENSE_TABLE);
        if size != Some(table.len()) {
            return Err(Error::Shape(format!(
                "dense table for {dims} dims and {categories} categories needs C^K <= {MAX_DENSE_TABLE} entries, got {}",
                table.len()
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lookup table"));
        }
        Ok(Self::Dense { dims, categories, table })
    }

    pub fn separable(tables: Array2<f64>) -> Result<Self> {
        if tables.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lookup table"));
        }
        Ok(Self::Separable(tables))
    }

    /// Entries uniform in `[-1, 1]`.
    pub fn random_dense<R: Rng + ?Sized>(rng: &mut R, dims: usize, categories: usize) -> Result<Self> {
        let n = categories.checked_pow(dims as u32).unwrap_or(usize::MAX);
        if n > MAX_DENSE_TABLE {
            return Err(Error::TooLarge { size: n as u128, limit: MAX_DENSE_TABLE as u128 });
        }
        Self::dense(dims, categories, (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect())
    }

    fn index(categories: usize, z: &[usize]) -> usize {
        z.iter().fold(0, |acc, &v| acc * categories + v)
    }
}

impl Objective for LookupObjective {
    fn eval(&self, z: &[usize]) -> f64 {
        match self {
            Self::Dense { categories, table, .. } => table[Self::index(*categories, z)],
            Self::Separable(t) => z.iter().enumerate().map(|(k, &c)| t[[k, c]]).sum(),
        }
    }
}

/// Parameter gradients (or any per-parameter quantity) of [`LinearToyVae`].
#[derive(Clone, Debug, PartialEq)]
pub struct VaeGrads {
    pub enc_w: Array2<f64>,
    pub enc_b: Array1<f64>,
    pub dec_w: Array2<f64>,
    pub dec_b: Array1<f64>,
}

impl VaeGrads {
    pub fn scaled_add(&mut self, a: f64, other: &VaeGrads) {
        self.enc_w.scaled_add(a, &other.enc_w);
        self.enc_b.scaled_add(a, &other.enc_b);
        self.dec_w.scaled_add(a, &other.dec_w);
        self.dec_b.scaled_add(a, &other.dec_b);
    }

    /// Encoder weights then encoder biases, row-major.
    pub fn encoder_flat(&self) -> Vec<f64> {
        self.enc_w.iter().chain(self.enc_b.iter()).copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.enc_w.iter().chain(&self.enc_b).chain(&self.dec_w).chain(&self.dec_b)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.enc_w.iter_mut().chain(self.enc_b.iter_mut()).chain(self.dec_w.iter_mut()).chain(self.dec_b.iter_mut())
    }
}

/// Linear encoder `x ↦ W_e x + b_e` (reshaped to `K × C` logits), linear
/// decoder from the concatenated one-hot code to `D` Bernoulli logits, and a
/// uniform prior over each latent.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearToyVae {
    pub data_dim: usize,
    pub dims: usize,
    pub categories: usize,
    pub params: VaeGrads,
}

impl LinearToyVae {
    pub fn zeros(data_dim: usize, dims: usize, categories: usize) -> Result<Self> {
        if data_dim == 0 || dims == 0 || categories < 2 {
            return Err(Error::InvalidArgument(format!(
                "need D >= 1, K >= 1, C >= 2 (got {data_dim}, {dims}, {categories})"
            )));
        }
        let h = dims * categories;
        Ok(Self {
            data_dim,
            dims,
            categories,
            params: VaeGrads {
                enc_w: Array2::zeros((h, data_dim)),
                enc_b: Array1::zeros(h),
                dec_w: Array2::zeros((data_dim, h)),
                dec_b: Array1::zeros(data_dim),
            },
        })
    }

    /// Weights drawn from `N(0, scale²)`, biases zero.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        data_dim: usize,
        dims: usize,
        categories: usize,
        scale: f64,
    ) -> Result<Self> {
        let mut m = Self::zeros(data_dim, dims, categories)?;
        let normal = Normal::new(0.0, scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        m.params.enc_w.mapv_inplace(|_| normal.sample(rng));
        m.params.dec_w.mapv_inplace(|_| normal.sample(rng));
        Ok(m)
    }

    fn check_x(&self, x: &[u8]) -> Result<()> {
        if x.len() != self.data_dim {
            return Err(Error::Shape(format!("x has {} pixels, model expects {}", x.len(), self.data_dim)));
        }
        Ok(())
    }

    fn check_z(&self, z: &[usize]) -> Result<()> {
        CategoricalSample(z.to_vec()).validate(self.categories)?;
        if z.len() != self.dims {
            return Err(Error::Shape(format!("z has {} dims, model expects {}", z.len(), self.dims)));
        }
        Ok(())
    }

    pub fn encoder_logits(&self, x: &[u8]) -> Result<CategoricalParams> {
        self.check_x(x)?;
        let xf = Array1::from_iter(x.iter().map(|&v| f64::from(v)));
        let h = self.params.enc_w.dot(&xf) + &self.params.enc_b;
        let logits = h.into_shape_with_order((self.dims, self.categories)).map_err(|e| Error::Shape(e.to_string()))?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder logits"));
        }
        CategoricalParams::new(logits)
    }

    pub fn decoder_logits(&self, z: &[usize]) -> Array1<f64> {
        let mut eta = self.params.dec_b.clone();
        for (k, &zk) in z.iter().enumerate() {
            eta += &self.params.dec_w.column(k * self.categories + zk);
        }
        eta
    }

    /// `log p(x | z)`.
    pub fn log_likelihood(&self, x: &[u8], z: &[usize]) -> f64 {
        self.decoder_logits(z)
            .iter()
            .zip(x)
            .map(|(&eta, &xd)| if xd == 1 { log_sigmoid(eta) } else { log_sigmoid(-eta) })
            .sum()
    }

    /// `log p(x|z) + Σ_k [log(1/C) − log q(z_k|x)]` given the encoder logits.
    pub fn elbo_with_logits(&self, x: &[u8], logits: &CategoricalParams, z: &[usize]) -> f64 {
        let log_c = (self.categories as f64).ln();
        let mut kl_part = 0.0;
        for (k, &zk) in z.iter().enumerate() {
            let row = logits.row(k);
            let lse = log_sum_exp(row.as_slice().expect("layout"));
            kl_part += -log_c - (row[zk] - lse);
        }
        self.log_likelihood(x, z) + kl_part
    }

    /// The instantaneous ELBO at `z`.
    pub fn elbo_eval(&self, x: &[u8], z: &[usize]) -> Result<f64> {
        self.check_z(z)?;
        let logits = self.encoder_logits(x)?;
        Ok(self.elbo_with_logits(x, &logits, z))
    }

    /// Chains a gradient with respect to the encoder logits back to the
    /// encoder parameters; decoder entries are zero.
    pub fn encoder_backprop(&self, x: &[u8], logit_grad: &Array2<f64>) -> VaeGrads {
        let mut g = self.zero_grads();
        let flat = Array1::from_iter(logit_grad.iter().copied());
        for (h, &gh) in flat.iter().enumerate() {
            if gh == 0.0 {
                continue;
            }
            g.enc_b[h] = gh;
            for (d, &xd) in x.iter().enumerate() {
                g.enc_w[[h, d]] = gh * f64::from(xd);
            }
        }
        g
    }

    pub fn zero_grads(&self) -> VaeGrads {
        VaeGrads {
            enc_w: Array2::zeros(self.params.enc_w.dim()),
            enc_b: Array1::zeros(self.params.enc_b.len()),
            dec_w: Array2::zeros(self.params.dec_w.dim()),
            dec_b: Array1::zeros(self.params.dec_b.len()),
        }
    }

    /// Gradient of the ELBO with `z` held fixed: the decoder term and the
    /// explicit `−log q(z|x)` term. The score-function part is left to the
    /// estimators.
    pub fn pathwise_grads(&self, x: &[u8], z: &[usize]) -> Result<VaeGrads> {
        self.check_z(z)?;
        let logits = self.encoder_logits(x)?;
        let zero = Array2::zeros((self.dims, self.categories));
        Ok(self.training_grads(x, &logits, &zero, &[z.to_vec()]))
    }

    /// Full gradient of `E_q[ELBO]` at one `x`: `score` (a gradient with
    /// respect to the encoder logits from some estimator) plus the pathwise
    /// term averaged over `samples`.
    pub fn training_grads(
        &self,
        x: &[u8],
        logits: &CategoricalParams,
        score: &Array2<f64>,
        samples: &[Vec<usize>],
    ) -> VaeGrads {
        let probs = softmax_probs(logits);
        let weight = 1.0 / samples.len().max(1) as f64;
        // d(−log q(z|x))/dα = q − onehot(z).
        let mut dlogits = score.clone();
        for z in samples {
            dlogits.scaled_add(weight, probs.probs());
            for (k, &zk) in z.iter().enumerate() {
                dlogits[[k, zk]] -= weight;
            }
        }
        let mut g = self.encoder_backprop(x, &dlogits);
        for z in samples {
            let eta = self.decoder_logits(z);
            for (d, (&e, &xd)) in eta.iter().zip(x).enumerate() {
                let r = weight * (f64::from(xd) - sigmoid(e));
                g.dec_b[d] += r;
                for (k, &zk) in z.iter().enumerate() {
                    g.dec_w[[d, k * self.categories + zk]] += r;
                }
            }
        }
        g
    }

    /// `log (1/S) Σ_s exp(ELBO(z_s))` with `z_s ~ q(·|x)`.
    pub fn multi_sample_bound<R: Rng + ?Sized>(&self, x: &[u8], samples: usize, rng: &mut R) -> Result<f64> {
        if samples == 0 {
            return Err(Error::InvalidArgument("need at least one sample".into()));
        }
        let logits = self.encoder_logits(x)?;
        let probs = softmax_probs(&logits);
        let w: Vec<f64> =
            (0..samples).map(|_| self.elbo_with_logits(x, &logits, &sample_categorical(&probs, rng))).collect();
        Ok(log_sum_exp(&w) - (samples as f64).ln())
    }

    /// `log p(x)` by enumerating every code.
    pub fn log_marginal(&self, x: &[u8]) -> Result<f64> {
        self.check_x(x)?;
        let n = (self.categories as u128).checked_pow(self.dims as u32).unwrap_or(u128::MAX);
        let limit = crate::oracle::MAX_OBJECTIVE_CONFIGS;
        if n > limit {
            return Err(Error::TooLarge { size: n, limit });
        }
        let log_prior = -(self.dims as f64) * (self.categories as f64).ln();
        let mut terms = Vec::with_capacity(n as usize);
        crate::oracle::for_each_config(self.dims, self.categories, |z| {
            terms.push(log_prior + self.log_likelihood(x, z))
        });
        Ok(log_sum_exp(&terms))
    }

    /// `∇_θ E_q[ELBO]` at one `x`, by enumeration. Reference for the
    /// training gradient.
    pub fn exact_expected_elbo_grads(&self, x: &[u8]) -> Result<VaeGrads> {
        let logits = self.encoder_logits(x)?;
        let probs = softmax_probs(&logits);
        let f = |z: &[usize]| self.elbo_with_logits(x, &logits, z);
        let score = crate::oracle::exact_objective_grad(&logits, &f)?;
        let mut total = self.encoder_backprop(x, &score.cat);
        let mut err = None;
        crate::oracle::for_each_config(self.dims, self.categories, |z| match self.pathwise_grads(x, z) {
            Ok(g) => total.scaled_add(probs.joint_prob(z), &g),
            Err(e) => err = Some(e),
        });
        match err {
            Some(e) => Err(e),
            None => Ok(total),
        }
    }
}

/// Binary data as gray levels in `0..=255`; a binary example is drawn by
/// thresholding each pixel against a fresh uniform every time it is used.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub len: usize,
    pub data_dim: usize,
    pub pixels: Vec<u8>,
}

const DATASET_MAGIC: &[u8; 4] = b"CGDS";
const DATASET_VERSION: u32 = 1;

impl Dataset {
    pub fn example(&self, i: usize) -> &[u8] {
        &self.pixels[i * self.data_dim..(i + 1) * self.data_dim]
    }

    /// Dynamic binarization of example `i`.
    pub fn binarize<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Vec<u8> {
        self.example(i).iter().map(|&g| u8::from(rng.random::<f64>() * 255.0 < f64::from(g))).collect()
    }

    /// Writes the 16-byte header (`"CGDS"`, version, N, D as little-endian
    /// `u32`) followed by the `N × D` gray levels.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        out.write_all(DATASET_MAGIC)?;
        for v in [DATASET_VERSION, self.len as u32, self.data_dim as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        input.read_exact(&mut header)?;
        if &header[..4] != DATASET_MAGIC {
            return Err(Error::InvalidArgument("not a dataset file".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
        if word(4) != DATASET_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported dataset version {}", word(4))));
        }
        let (len, data_dim) = (word(8) as usize, word(12) as usize);
        let mut pixels = vec![0u8; len * data_dim];
        input.read_exact(&mut pixels)?;
        Ok(Self { len, data_dim, pixels })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// A mixture of independent-Bernoulli templates.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateMixture {
    pub weights: Vec<f64>,
    /// `T × D` pixel-on probabilities, quantized to multiples of 1/255.
    pub templates: Array2<f64>,
}

impl TemplateMixture {
    /// Equal weights; each template pixel is mostly on or mostly off.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, count: usize, data_dim: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("need at least one template".into()));
        }
        let templates = Array2::from_shape_fn((count, data_dim), |_| {
            let p: f64 = if rng.random_bool(0.5) { rng.random_range(0.7..1.0) } else { rng.random_range(0.0..0.3) };
            (p * 255.0).round() / 255.0
        });
        Ok(Self { weights: vec![1.0 / count as f64; count], templates })
    }

    pub fn mean(&self) -> Array1<f64> {
        self.weights
            .iter()
            .zip(self.templates.rows())
            .fold(Array1::zeros(self.templates.ncols()), |acc, (&w, row)| acc + &row.mapv(|p| p * w))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, len: usize) -> Dataset {
        let d = self.templates.ncols();
        let mut pixels = Vec::with_capacity(len * d);
        for _ in 0..len {
            let mut u: f64 = rng.random();
            let mut t = self.weights.len() - 1;
            for (i, &w) in self.weights.iter().enumerate() {
                if u < w {
                    t = i;
                    break;
                }
                u -= w;
            }
            pixels.extend(self.templates.row(t).iter().map(|&p| (p * 255.0).round() as u8));
        }
        Dataset { len, data_dim: d, pixels }
    }
}

/// `len` examples of dimension `data_dim ≤ 64` from a random mixture of
/// `templates` Bernoulli templates.
pub fn synth_data<R: Rng + ?Sized>(rng: &mut R, len: usize, data_dim: usize, templates: usize) -> Result<Dataset> {
    if data_dim == 0 || data_dim > 64 {
        return Err(Error::InvalidArgument(format!("data dimension {data_dim} outside 1..=64")));
    }
    Ok(TemplateMixture::random(rng, templates, data_dim)?.sample(rng, len))
}
