//! Conditional variational autoencoder over coefficient-matrix columns.
//!
//! One model per column `c` of `X(p)`: the encoder maps `[x_norm; p_norm]` to
//! the mean and log-variance of a `J`-dimensional Gaussian, the decoder maps
//! `[z; p_norm]` back to `x_norm = ln(x + 2)`.

pub mod network;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::orthonormalize;
pub use network::{Activation, Adam, AdamSettings, DenseLayer, Gradients, Mlp};

const SHIFT: f64 = 2.0;
const LOGVAR_BOUND: f64 = 10.0;
const MIN_SCALE: f64 = 1e-8;

pub fn normalize_column(x: &[f64]) -> Result<Vec<f64>> {
    x.iter()
        .map(|&v| {
            if !(v > -SHIFT) {
                return Err(Error::invalid(format!("coefficient {v} must exceed -2 for log normalization")));
            }
            Ok((v + SHIFT).ln())
        })
        .collect()
}

pub fn denormalize_column(x_norm: &[f64]) -> Vec<f64> {
    x_norm.iter().map(|v| v.exp() - SHIFT).collect()
}

/// `z = μ + η ⊙ σ`.
pub fn reparameterize(mu: &DVector<f64>, sigma: &DVector<f64>, eta: &DVector<f64>) -> DVector<f64> {
    mu + eta.component_mul(sigma)
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_term(mu: &[f64], log_var: &[f64]) -> f64 {
    -0.5 * mu.iter().zip(log_var).map(|(m, lv)| 1.0 + lv - m * m - lv.exp()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Latent draws per datum.
    pub n_latent_samples: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            n_latent_samples: 1,
            hidden: vec![32, 32],
            latent_dim: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.n_latent_samples == 0 || self.latent_dim == 0 {
            return Err(Error::config("epochs, batch_size, n_latent_samples and latent_dim must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub latent_dim: usize,
    pub column_index: usize,
    pub data_dim: usize,
    pub param_dim: usize,
    /// Per-entry affine map applied to `x_norm` before the networks see it.
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
    pub trained: bool,
    /// Epoch-averaged training loss.
    pub loss_trace: Vec<f64>,
}

/// Everything but the network weights, for persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeArchitecture {
    pub data_dim: usize,
    pub param_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub column_index: usize,
    pub trained: bool,
    pub loss_trace: Vec<f64>,
}

/// Loss value and gradients for a batch.
#[derive(Debug, Clone)]
pub struct ElboEvaluation {
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub encoder: Gradients,
    pub decoder: Gradients,
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

impl CvaeModel {
    pub fn new(data_dim: usize, param_dim: usize, column_index: usize, config: &TrainConfig, rng: &mut impl Rng) -> Self {
        let j = config.latent_dim;
        let mut enc = vec![data_dim + param_dim];
        enc.extend(&config.hidden);
        enc.push(2 * j);
        let mut dec = vec![j + param_dim];
        dec.extend(&config.hidden);
        dec.push(data_dim);
        Self {
            encoder: Mlp::new(&enc, Activation::Tanh, Activation::Identity, rng),
            decoder: Mlp::new(&dec, Activation::Tanh, Activation::Identity, rng),
            latent_dim: j,
            column_index,
            data_dim,
            param_dim,
            offset: vec![0.0; data_dim],
            scale: vec![1.0; data_dim],
            trained: false,
            loss_trace: Vec::new(),
        }
    }

    pub fn architecture(&self) -> CvaeArchitecture {
        let hidden = self.decoder.layers[..self.decoder.layers.len() - 1].iter().map(|l| l.outputs()).collect();
        CvaeArchitecture {
            data_dim: self.data_dim,
            param_dim: self.param_dim,
            latent_dim: self.latent_dim,
            hidden,
            column_index: self.column_index,
            trained: self.trained,
            loss_trace: self.loss_trace.clone(),
        }
    }

    /// `[offset; scale; encoder parameters; decoder parameters]`.
    pub fn state_vector(&self) -> Vec<f64> {
        let mut v = self.offset.clone();
        v.extend(&self.scale);
        v.extend(self.encoder.parameters());
        v.extend(self.decoder.parameters());
        v
    }

    /// Inverse of [`CvaeModel::architecture`] plus [`CvaeModel::state_vector`].
    pub fn from_parts(arch: &CvaeArchitecture, state: &[f64]) -> Result<Self> {
        let cfg = TrainConfig { hidden: arch.hidden.clone(), latent_dim: arch.latent_dim, ..TrainConfig::default() };
        let mut m = Self::new(arch.data_dim, arch.param_dim, arch.column_index, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let d = arch.data_dim;
        let (ne, nd) = (m.encoder.n_params(), m.decoder.n_params());
        if state.len() != 2 * d + ne + nd {
            return Err(Error::shape(format!("state vector has {} entries, expected {}", state.len(), 2 * d + ne + nd)));
        }
        m.offset = state[..d].to_vec();
        m.scale = state[d..2 * d].to_vec();
        m.encoder.set_parameters(&state[2 * d..2 * d + ne])?;
        m.decoder.set_parameters(&state[2 * d + ne..])?;
        m.trained = arch.trained;
        m.loss_trace = arch.loss_trace.clone();
        Ok(m)
    }

    fn standardize(&self, x_norm: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_norm.nrows() != self.data_dim {
            return Err(Error::shape(format!("expected {} coefficients, got {}", self.data_dim, x_norm.nrows())));
        }
        Ok(DMatrix::from_fn(x_norm.nrows(), x_norm.ncols(), |i, c| (x_norm[(i, c)] - self.offset[i]) / self.scale[i]))
    }

    /// Posterior mean and (clamped) log-variance for column-stacked inputs.
    pub fn encode(&self, x_norm: &DMatrix<f64>, p_norm: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let out = self.encoder.forward(&stack(&self.standardize(x_norm)?, p_norm))?;
        let o = out.output();
        let j = self.latent_dim;
        let mu = o.rows(0, j).into_owned();
        let lv = o.rows(j, j).map(|v| v.clamp(-LOGVAR_BOUND, LOGVAR_BOUND));
        Ok((mu, lv))
    }

    /// Decoded `x_norm`.
    pub fn decode(&self, z: &DMatrix<f64>, p_norm: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut y = self.decoder.forward(&stack(z, p_norm))?.output().clone();
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row.apply(|v| *v = *v * self.scale[i] + self.offset[i]);
        }
        Ok(y)
    }

    /// Negative ELBO on a batch (columns are data points) with latent noise
    /// `eta[k]` (`J × B`) for each of the `N_v` draws: mean-squared
    /// reconstruction error averaged over draws plus the KL term, both averaged
    /// over the batch. The reconstruction is measured in standardized units.
    pub fn elbo(&self, x_norm: &DMatrix<f64>, p_norm: &DMatrix<f64>, eta: &[DMatrix<f64>]) -> Result<ElboEvaluation> {
        let b = x_norm.ncols();
        let j = self.latent_dim;
        if x_norm.nrows() != self.data_dim || p_norm.nrows() != self.param_dim || p_norm.ncols() != b {
            return Err(Error::shape("batch does not match the model dimensions"));
        }
        if eta.is_empty() || eta.iter().any(|e| e.shape() != (j, b)) {
            return Err(Error::shape(format!("latent noise must be {j} x {b} per draw")));
        }
        let x_norm = &self.standardize(x_norm)?;
        let enc_tape = self.encoder.forward(&stack(x_norm, p_norm))?;
        let out = enc_tape.output();
        let mu = out.rows(0, j).into_owned();
        let raw_lv = out.rows(j, j).into_owned();
        let lv = raw_lv.map(|v| v.clamp(-LOGVAR_BOUND, LOGVAR_BOUND));
        let sigma = lv.map(|v| (0.5 * v).exp());

        let nv = eta.len() as f64;
        let scale = 1.0 / (b as f64);
        let mut rec = 0.0;
        let mut dec_grads = Gradients::zeros_like(&self.decoder);
        let mut d_mu = DMatrix::zeros(j, b);
        let mut d_lv = DMatrix::zeros(j, b);
        for e in eta {
            let z = &mu + e.component_mul(&sigma);
            let tape = self.decoder.forward(&stack(&z, p_norm))?;
            let diff = tape.output() - x_norm;
            rec += diff.norm_squared() / (self.data_dim as f64) * scale / nv;
            let upstream = diff * (2.0 / self.data_dim as f64 * scale / nv);
            let (g, d_in) = self.decoder.backward(&tape, &upstream)?;
            for (acc, gi) in dec_grads.weights.iter_mut().zip(&g.weights) {
                *acc += gi;
            }
            for (acc, gi) in dec_grads.bias.iter_mut().zip(&g.bias) {
                *acc += gi;
            }
            let dz = d_in.rows(0, j);
            d_mu += dz;
            // ∂z/∂lv = ½ η σ
            d_lv += dz.component_mul(&e.component_mul(&sigma)) * 0.5;
        }
        let kl: f64 = (0..b)
            .map(|c| {
                let m: Vec<f64> = mu.column(c).iter().copied().collect();
                let l: Vec<f64> = lv.column(c).iter().copied().collect();
                kl_term(&m, &l)
            })
            .sum::<f64>()
            * scale;
        d_mu += &mu * scale;
        d_lv += lv.map(|v| 0.5 * (v.exp() - 1.0)) * scale;
        // The clamp blocks gradients outside its range.
        d_lv.zip_apply(&raw_lv, |g, r| {
            if r.abs() > LOGVAR_BOUND {
                *g = 0.0;
            }
        });
        let upstream = stack(&d_mu, &d_lv);
        let (enc_grads, _) = self.encoder.backward(&enc_tape, &upstream)?;
        Ok(ElboEvaluation { loss: rec + kl, reconstruction: rec, kl, encoder: enc_grads, decoder: dec_grads })
    }
}

/// Trains one column model on `(p_norm, x_norm)` pairs with Adam.
pub fn train(pairs: &[(Vec<f64>, Vec<f64>)], column_index: usize, config: &TrainConfig) -> Result<CvaeModel> {
    config.validate()?;
    let (p0, x0) = pairs.first().ok_or_else(|| Error::invalid("training needs at least one pair"))?;
    let (pd, xd) = (p0.len(), x0.len());
    if pairs.iter().any(|(p, x)| p.len() != pd || x.len() != xd) {
        return Err(Error::shape("inconsistent training pair dimensions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = CvaeModel::new(xd, pd, column_index, config, &mut rng);
    // Entries that barely move across samples keep their spread after decoding.
    let n = pairs.len() as f64;
    for i in 0..xd {
        let mean = pairs.iter().map(|(_, x)| x[i]).sum::<f64>() / n;
        let var = pairs.iter().map(|(_, x)| (x[i] - mean).powi(2)).sum::<f64>() / n;
        model.offset[i] = mean;
        model.scale[i] = var.sqrt().max(MIN_SCALE);
    }
    let settings = AdamSettings { learning_rate: config.learning_rate, ..AdamSettings::default() };
    let mut enc_opt = Adam::new(&model.encoder, settings);
    let mut dec_opt = Adam::new(&model.decoder, settings);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let j = model.latent_dim;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = DMatrix::from_fn(xd, chunk.len(), |r, c| pairs[chunk[c]].1[r]);
            let p = DMatrix::from_fn(pd, chunk.len(), |r, c| pairs[chunk[c]].0[r]);
            let eta: Vec<DMatrix<f64>> = (0..config.n_latent_samples)
                .map(|_| DMatrix::from_fn(j, chunk.len(), |_, _| StandardNormal.sample(&mut rng)))
                .collect();
            let ev = model.elbo(&x, &p, &eta)?;
            if !ev.loss.is_finite() || ev.loss > 1e6 {
                return Err(Error::Divergence { epoch, batch: bi, loss: ev.loss });
            }
            total += ev.loss * chunk.len() as f64;
            enc_opt.step(&mut model.encoder, &ev.encoder);
            dec_opt.step(&mut model.decoder, &ev.decoder);
        }
        model.loss_trace.push(total / pairs.len() as f64);
    }
    model.trained = true;
    Ok(model)
}

/// Independent sub-seed for column `c` derived from a master seed.
pub fn column_seed(master: u64, column: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(column as u64 + 1);
    rng.random()
}

/// Trains one model per column of the coefficient matrices.
///
/// `coefficients[i]` is `X(p_i)` (`r̃ × r`); `params[i]` the normalized
/// parameters. Columns are trained in parallel on the current rayon pool.
pub fn train_columns(params: &[Vec<f64>], coefficients: &[DMatrix<f64>], config: &TrainConfig) -> Result<Vec<CvaeModel>> {
    use rayon::prelude::*;
    if params.len() != coefficients.len() || params.is_empty() {
        return Err(Error::shape("need one coefficient matrix per parameter sample"));
    }
    let r = coefficients[0].ncols();
    if coefficients.iter().any(|x| x.shape() != coefficients[0].shape()) {
        return Err(Error::shape("coefficient matrices differ in shape"));
    }
    (0..r)
        .into_par_iter()
        .map(|c| {
            let pairs = params
                .iter()
                .zip(coefficients)
                .map(|(p, x)| {
                    let col: Vec<f64> = x.column(c).iter().copied().collect();
                    Ok((p.clone(), normalize_column(&col)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let cfg = TrainConfig { seed: column_seed(config.seed, c), ..config.clone() };
            train(&pairs, c, &cfg)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerationMode {
    /// Decode at the latent prior mean `z = 0`.
    Mean,
    /// Decode at `z ~ N(0, I)` drawn from the given seed.
    Sampled(u64),
}

/// Decoded coefficient matrix `X(p)` (`r̃ × r`) before orthonormalization.
pub fn generate_coefficients(models: &[CvaeModel], p_norm: &[f64], mode: GenerationMode) -> Result<DMatrix<f64>> {
    let first = models.first().ok_or_else(|| Error::Untrained("no column models".into()))?;
    let mut x = DMatrix::zeros(first.data_dim, models.len());
    let mut rng = match mode {
        GenerationMode::Sampled(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        GenerationMode::Mean => None,
    };
    let p = DMatrix::from_column_slice(p_norm.len(), 1, p_norm);
    for (c, m) in models.iter().enumerate() {
        if !m.trained {
            return Err(Error::Untrained(format!("column model {c}")));
        }
        if m.param_dim != p_norm.len() || m.data_dim != first.data_dim {
            return Err(Error::shape(format!("column model {c} does not match the query")));
        }
        let z = match rng.as_mut() {
            Some(r) => DMatrix::from_fn(m.latent_dim, 1, |_, _| StandardNormal.sample(r)),
            None => DMatrix::zeros(m.latent_dim, 1),
        };
        let xn: Vec<f64> = m.decode(&z, &p)?.iter().copied().collect();
        x.set_column(c, &DVector::from_vec(denormalize_column(&xn)));
    }
    Ok(x)
}

/// `V(p) = orth(V_global · X(p))`.
pub fn generate_basis(models: &[CvaeModel], v_global: &DMatrix<f64>, p_norm: &[f64], mode: GenerationMode) -> Result<DMatrix<f64>> {
    let x = generate_coefficients(models, p_norm, mode)?;
    if x.nrows() != v_global.ncols() {
        return Err(Error::shape(format!("models produce {} coefficients, global basis has {} modes", x.nrows(), v_global.ncols())));
    }
    Ok(orthonormalize(&(v_global * x)))
}

/// Response spread obtained by propagating sampled bases.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub mean_basis: DMatrix<f64>,
    pub draws: Vec<DMatrix<f64>>,
    /// Trajectory (`N_t × n`) of the mean basis.
    pub mean: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    /// Draw index and error message of failed propagations.
    pub failures: Vec<(usize, String)>,
}

impl Envelope {
    /// Fraction of time steps at which the mean trajectory lies inside the
    /// envelope, for one DOF or for all DOFs at once.
    pub fn containment(&self, dof: Option<usize>, slack: f64) -> f64 {
        let nt = self.mean.nrows();
        let inside = |i: usize, d: usize| {
            let m = self.mean[(i, d)];
            m >= self.lower[(i, d)] - slack && m <= self.upper[(i, d)] + slack
        };
        let hits = (0..nt)
            .filter(|&i| match dof {
                Some(d) => inside(i, d),
                None => (0..self.mean.ncols()).all(|d| inside(i, d)),
            })
            .count();
        hits as f64 / nt as f64
    }
}

/// Propagates `n_draws` sampled bases through `simulate` (basis → `N_t × n`
/// trajectory) and records the per-step min/max. At least 80 % of the draws
/// must succeed.
pub fn uncertainty_envelope<F>(
    models: &[CvaeModel],
    v_global: &DMatrix<f64>,
    p_norm: &[f64],
    n_draws: usize,
    seed: u64,
    simulate: F,
) -> Result<Envelope>
where
    F: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>> + Sync,
{
    use rayon::prelude::*;
    if n_draws == 0 {
        return Err(Error::invalid("n_draws must be at least 1"));
    }
    let mean_basis = generate_basis(models, v_global, p_norm, GenerationMode::Mean)?;
    let mean = simulate(&mean_basis)?;
    let draws = (0..n_draws)
        .map(|k| generate_basis(models, v_global, p_norm, GenerationMode::Sampled(column_seed(seed, k))))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<Result<DMatrix<f64>>> = draws.par_iter().map(&simulate).collect();
    let mut lower = DMatrix::from_element(mean.nrows(), mean.ncols(), f64::INFINITY);
    let mut upper = DMatrix::from_element(mean.nrows(), mean.ncols(), f64::NEG_INFINITY);
    let mut failures = Vec::new();
    for (k, run) in runs.into_iter().enumerate() {
        match run {
            Ok(u) if u.shape() == mean.shape() => {
                lower.zip_apply(&u, |l, v| *l = l.min(v));
                upper.zip_apply(&u, |h, v| *h = h.max(v));
            }
            Ok(u) => failures.push((k, format!("trajectory shape {:?}", u.shape()))),
            Err(e) => failures.push((k, e.to_string())),
        }
    }
    if failures.len() * 5 > n_draws {
        return Err(Error::Envelope { failed: failures.len(), total: n_draws });
    }
    for (k, msg) in &failures {
        tracing::warn!(draw = k, error = %msg, "envelope draw failed");
    }
    Ok(Envelope { mean_basis, draws, mean, lower, upper, failures })
}
