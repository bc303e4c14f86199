use std::marker::PhantomData;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Linear, Mlp2, ParamId, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MddcConfig {
    /// Shared latent width `d`; also the condition width.
    pub latent_dim: usize,
    /// Hidden width of the per-modality autoencoders.
    pub hidden_dim: usize,
    /// Width of the sinusoidal timestep embedding.
    pub time_dim: usize,
}

impl Default for MddcConfig {
    fn default() -> Self {
        Self { latent_dim: 128, hidden_dim: 128, time_dim: 64 }
    }
}

/// Which `(item, modality)` cells can feed a condition: observed cells,
/// plus imputed ones once a generation pass has filled them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Availability {
    n_modalities: usize,
    cells: Vec<bool>,
}

impl Availability {
    pub fn new(n_items: usize, n_modalities: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != n_items * n_modalities {
            return Err(Error::Shape(format!("{} cells for {n_items}×{n_modalities}", cells.len())));
        }
        Ok(Self { n_modalities, cells })
    }

    pub fn all(n_items: usize, n_modalities: usize) -> Self {
        Self { n_modalities, cells: vec![true; n_items * n_modalities] }
    }

    pub fn from_indicator(indicator: &crate::dataset::IndicatorMatrix, imputed_ready: bool) -> Self {
        let cells = if imputed_ready {
            vec![true; indicator.entries().len()]
        } else {
            indicator.entries().to_vec()
        };
        Self { n_modalities: indicator.n_modalities(), cells }
    }

    pub fn is_available(&self, item: usize, modality: usize) -> bool {
        self.cells[item * self.n_modalities + modality]
    }
}

/// Per-modality latent encoder/decoder pair. Inputs are standardised with
/// frozen observed-set statistics; the decoder maps back to raw scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub mean: ParamId,
    pub std: ParamId,
    pub encoder: Mlp2,
    pub decoder: Mlp2,
    pub dim: usize,
}

impl Autoencoder {
    fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, name: &str, dim: usize, cfg: &MddcConfig, rng: &mut R) -> Self {
        Self {
            mean: store.add_buffer(format!("{name}.mean"), Tensor::zeros(&[1, dim])),
            std: store.add_buffer(format!("{name}.std"), Tensor::full(&[1, dim], S::one())),
            encoder: Mlp2::new(store, &format!("{name}.enc"), (dim, cfg.hidden_dim, cfg.latent_dim), rng),
            decoder: Mlp2::new(store, &format!("{name}.dec"), (cfg.latent_dim, cfg.hidden_dim, dim), rng),
            dim,
        }
    }

    pub fn encode<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let mean = g.param(store, self.mean);
        let inv = g.constant(store.get(self.std).map(|s| S::one() / s));
        let centred = g.sub(x, mean)?;
        let z = g.mul(centred, inv)?;
        self.encoder.forward(g, store, z)
    }

    pub fn decode<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, v: Var) -> Result<Var> {
        let y = self.decoder.forward(g, store, v)?;
        let std = g.param(store, self.std);
        let mean = g.param(store, self.mean);
        let y = g.mul(y, std)?;
        g.add(y, mean)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = self.encoder.param_ids();
        v.extend(self.decoder.param_ids());
        v
    }
}

/// Condition extractor for one target modality: per-source projection,
/// mean over the available sources, output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionNet {
    pub target: usize,
    pub proj: Vec<Option<Linear>>,
    pub out: Linear,
}

impl FusionNet {
    fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        target: usize,
        n_modalities: usize,
        d: usize,
        rng: &mut R,
    ) -> Self {
        let proj = (0..n_modalities)
            .map(|j| (j != target).then(|| Linear::new(store, &format!("{name}.proj{j}"), d, d, true, rng)))
            .collect();
        Self { target, proj, out: Linear::new(store, &format!("{name}.out"), d, d, true, rng) }
    }

    /// `latents[j]` holds the batch rows of modality `j`; `weights[j]` is a
    /// `B × 1` column of `1/|available|` (or 0 where `j` is unavailable).
    /// Rows without any source get the zero condition.
    fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        latents: &[Var],
        weights: &[Option<Tensor<S>>],
        has_any: Tensor<S>,
    ) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (j, proj) in self.proj.iter().enumerate() {
            let (Some(proj), Some(w)) = (proj, &weights[j]) else { continue };
            let h = proj.forward(g, store, latents[j])?;
            let h = g.leaky_relu(h);
            let w = g.constant(w.clone());
            let h = g.scale_rows(h, w)?;
            acc = Some(match acc {
                Some(a) => g.add(a, h)?,
                None => h,
            });
        }
        let acc = acc.ok_or_else(|| Error::InvalidArgument("no source modality for the condition".into()))?;
        let out = self.out.forward(g, store, acc)?;
        let mask = g.constant(has_any);
        g.scale_rows(out, mask)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self.proj.iter().flatten().flat_map(Linear::param_ids).collect();
        v.extend(self.out.param_ids());
        v
    }
}

/// Cross-attention block of one denoiser level.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLevel {
    pub time: Linear,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub width: usize,
}

impl AttentionLevel {
    fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, name: &str, width: usize, cfg: &MddcConfig, rng: &mut R) -> Self {
        let d = cfg.latent_dim;
        Self {
            time: Linear::new(store, &format!("{name}.time"), cfg.time_dim, width, true, rng),
            query: Linear::new(store, &format!("{name}.wq"), width, width, false, rng),
            key: Linear::new(store, &format!("{name}.wk"), d, width, false, rng),
            value: Linear::new(store, &format!("{name}.wv"), d, width, false, rng),
            width,
        }
    }

    /// Adds the timestep embedding, then lets the state token attend over
    /// the condition token: `h + softmax((hW_Q)(cW_K)ᵀ/√width)·(cW_V)`.
    /// Returns the new state and the attention weights.
    fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, h: Var, temb: Var, cond: Var) -> Result<(Var, Var)> {
        let te = self.time.forward(g, store, temb)?;
        let h = g.add(h, te)?;
        let q = self.query.forward(g, store, h)?;
        let k = self.key.forward(g, store, cond)?;
        let v = self.value.forward(g, store, cond)?;
        let scale = S::lit(1.0 / (self.width as f64).sqrt());
        let (fused, w) = cross_attention(g, q, &[k], &[v], scale)?;
        Ok((g.add(h, fused)?, w))
    }

    fn param_ids(&self) -> Vec<ParamId> {
        [&self.time, &self.query, &self.key, &self.value].iter().flat_map(|l| l.param_ids()).collect()
    }
}

/// One query token per row attending over `keys.len()` tokens:
/// `out = Σ_j softmax_j(scale·⟨q, k_j⟩)·v_j`. Returns `out` and the
/// `[rows, tokens]` weight matrix.
pub fn cross_attention<S: Scalar>(g: &mut Graph<S>, q: Var, keys: &[Var], values: &[Var], scale: S) -> Result<(Var, Var)> {
    if keys.is_empty() || keys.len() != values.len() {
        return Err(Error::Shape(format!("{} keys for {} values", keys.len(), values.len())));
    }
    let scores: Vec<Var> = keys.iter().map(|&k| g.row_dot(q, k)).collect::<Result<_>>()?;
    let scores = g.concat(&scores, 1)?;
    let scores = g.scale(scores, scale);
    let w = g.softmax_rows(scores)?;
    let mut out: Option<Var> = None;
    for (j, &v) in values.iter().enumerate() {
        let wj = g.slice_cols(w, j, j + 1)?;
        let term = g.scale_rows(v, wj)?;
        out = Some(match out {
            Some(o) => g.add(o, term)?,
            None => term,
        });
    }
    Ok((out.expect("non-empty"), w))
}

/// MLP U-Net noise predictor over flat latents: widths `[h, h/2, h/4]`
/// for hidden width `h`, concatenating skips on the way up.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub input: Linear,
    pub down: [Linear; 2],
    pub levels: [AttentionLevel; 3],
    pub up: [Linear; 2],
    pub output: Linear,
    pub widths: [usize; 3],
}

impl Denoiser {
    fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, name: &str, cfg: &MddcConfig, rng: &mut R) -> Self {
        let d = cfg.latent_dim;
        let h = cfg.hidden_dim;
        let w = [h, (h / 2).max(1), (h / 4).max(1)];
        let input = Linear::new(store, &format!("{name}.in"), d, w[0], true, rng);
        let down = [
            Linear::new(store, &format!("{name}.down1"), w[0], w[1], true, rng),
            Linear::new(store, &format!("{name}.down2"), w[1], w[2], true, rng),
        ];
        let levels = [
            AttentionLevel::new(store, &format!("{name}.l0"), w[0], cfg, rng),
            AttentionLevel::new(store, &format!("{name}.l1"), w[1], cfg, rng),
            AttentionLevel::new(store, &format!("{name}.l2"), w[2], cfg, rng),
        ];
        let up = [
            Linear::new(store, &format!("{name}.up1"), w[2] + w[1], w[1], true, rng),
            Linear::new(store, &format!("{name}.up0"), w[1] + w[0], w[0], true, rng),
        ];
        let output = Linear::new(store, &format!("{name}.out"), w[0], d, true, rng);
        Self { input, down, levels, up, output, widths: w }
    }

    fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        v_t: Var,
        cond: Var,
        temb: Var,
    ) -> Result<(Var, [Var; 3])> {
        let h0 = self.input.forward(g, store, v_t)?;
        let h0 = g.leaky_relu(h0);
        let (h0, a0) = self.levels[0].forward(g, store, h0, temb, cond)?;
        let h1 = self.down[0].forward(g, store, h0)?;
        let h1 = g.leaky_relu(h1);
        let (h1, a1) = self.levels[1].forward(g, store, h1, temb, cond)?;
        let h2 = self.down[1].forward(g, store, h1)?;
        let h2 = g.leaky_relu(h2);
        let (h2, a2) = self.levels[2].forward(g, store, h2, temb, cond)?;
        let u1 = g.concat(&[h2, h1], 1)?;
        let u1 = self.up[0].forward(g, store, u1)?;
        let u1 = g.leaky_relu(u1);
        let u0 = g.concat(&[u1, h0], 1)?;
        let u0 = self.up[1].forward(g, store, u0)?;
        let u0 = g.leaky_relu(u0);
        Ok((self.output.forward(g, store, u0)?, [a0, a1, a2]))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = self.input.param_ids();
        for l in &self.down {
            v.extend(l.param_ids());
        }
        for l in &self.levels {
            v.extend(l.param_ids());
        }
        for l in &self.up {
            v.extend(l.param_ids());
        }
        v.extend(self.output.param_ids());
        v
    }
}

/// Sinusoidal embedding of each step, one row per entry of `steps`.
pub fn timestep_embedding<S: Scalar>(steps: &[usize], dim: usize) -> Tensor<S> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(steps.len() * dim);
    for &t in steps {
        let mut row = vec![S::zero(); dim];
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let a = t as f64 * freq;
            row[i] = S::lit(a.sin());
            row[half + i] = S::lit(a.cos());
        }
        data.extend(row);
    }
    Tensor::matrix(steps.len(), dim, data).expect("sized")
}

/// Modality-diffused data completion: autoencoders, condition extractors
/// and conditioned denoisers, one of each per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct MddcModel<S> {
    pub config: MddcConfig,
    pub dims: Vec<usize>,
    pub autoencoders: Vec<Autoencoder>,
    pub fusion: Vec<FusionNet>,
    pub denoisers: Vec<Denoiser>,
    /// When false every condition is the zero vector.
    pub conditioning: bool,
    _scalar: PhantomData<fn() -> S>,
}

impl<S: Scalar> MddcModel<S> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        dims: &[usize],
        config: MddcConfig,
        conditioning: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) || config.latent_dim == 0 || config.time_dim < 2 {
            return Err(Error::InvalidArgument(format!("bad MDDC shape: dims {dims:?}, {config:?}")));
        }
        let m = dims.len();
        let autoencoders = dims
            .iter()
            .enumerate()
            .map(|(j, &dim)| Autoencoder::new(store, &format!("mddc.ae{j}"), dim, &config, rng))
            .collect();
        let fusion = (0..m)
            .map(|j| FusionNet::new(store, &format!("mddc.cond{j}"), j, m, config.latent_dim, rng))
            .collect();
        let denoisers = (0..m).map(|j| Denoiser::new(store, &format!("mddc.eps{j}"), &config, rng)).collect();
        Ok(Self { config, dims: dims.to_vec(), autoencoders, fusion, denoisers, conditioning, _scalar: PhantomData })
    }

    pub fn n_modalities(&self) -> usize {
        self.dims.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Freezes per-dimension feature statistics from observed rows.
    pub fn fit_standardization(
        &self,
        store: &mut ParamStore<S>,
        features: &[Tensor<S>],
        indicator: &crate::dataset::IndicatorMatrix,
    ) -> Result<()> {
        for (m, ae) in self.autoencoders.iter().enumerate() {
            let rows = indicator.observed_set(m);
            let dim = ae.dim;
            let mut mean = vec![0.0; dim];
            let mut sq = vec![0.0; dim];
            for &i in &rows {
                for (k, &x) in features[m].row(i).iter().enumerate() {
                    mean[k] += x.as_f64();
                    sq[k] += x.as_f64() * x.as_f64();
                }
            }
            let n = rows.len().max(1) as f64;
            let mut std = vec![1.0; dim];
            for k in 0..dim {
                mean[k] /= n;
                let var = sq[k] / n - mean[k] * mean[k];
                if var > 1e-12 {
                    std[k] = var.sqrt();
                }
            }
            store.set(ae.mean, Tensor::matrix(1, dim, mean.into_iter().map(S::lit).collect())?)?;
            store.set(ae.std, Tensor::matrix(1, dim, std.into_iter().map(S::lit).collect())?)?;
        }
        Ok(())
    }

    /// Latents of `x` (rows of modality `m`) without recording gradients.
    pub fn encode_rows(&self, store: &ParamStore<S>, m: usize, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let z = self.autoencoders[m].encode(&mut g, store, xv)?;
        Ok(g.value(z).clone())
    }

    pub fn decode_rows(&self, store: &ParamStore<S>, m: usize, v: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let vv = g.constant(v.clone());
        let x = self.autoencoders[m].decode(&mut g, store, vv)?;
        Ok(g.value(x).clone())
    }

    /// Latents of every item and modality under the current features.
    pub fn encode_all(&self, store: &ParamStore<S>, features: &[Tensor<S>]) -> Result<Vec<Tensor<S>>> {
        features.iter().enumerate().map(|(m, x)| self.encode_rows(store, m, x)).collect()
    }

    /// Conditions for target modality `m` over a batch. `latents[j]` holds
    /// the batch rows of modality `j` (rows of `m` itself are never read).
    pub fn condition(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        m: usize,
        items: &[usize],
        latents: &[Var],
        avail: &Availability,
    ) -> Result<Var> {
        let b = items.len();
        let d = self.config.latent_dim;
        if !self.conditioning || self.n_modalities() == 1 {
            return Ok(g.constant(Tensor::zeros(&[b, d])));
        }
        let counts: Vec<usize> = items
            .iter()
            .map(|&i| (0..self.n_modalities()).filter(|&j| j != m && avail.is_available(i, j)).count())
            .collect();
        let weights: Vec<Option<Tensor<S>>> = (0..self.n_modalities())
            .map(|j| {
                (j != m).then(|| {
                    let w = items
                        .iter()
                        .zip(&counts)
                        .map(|(&i, &c)| {
                            if c > 0 && avail.is_available(i, j) {
                                S::one() / S::lit(c as f64)
                            } else {
                                S::zero()
                            }
                        })
                        .collect();
                    Tensor::matrix(b, 1, w).expect("sized")
                })
            })
            .collect();
        let has_any = Tensor::matrix(b, 1, counts.iter().map(|&c| if c > 0 { S::one() } else { S::zero() }).collect())?;
        self.fusion[m].forward(g, store, latents, &weights, has_any)
    }

    /// Condition from an explicit list of `(modality, latent)` sources.
    pub fn fuse_conditions(&self, store: &ParamStore<S>, target: usize, sources: &[(usize, Vec<S>)]) -> Result<Vec<S>> {
        if sources.is_empty() {
            return Err(Error::InvalidArgument("condition needs at least one available modality".into()));
        }
        let d = self.config.latent_dim;
        let m = self.n_modalities();
        let mut rows = vec![vec![S::zero(); d]; m];
        let mut cells = vec![false; m];
        for (j, v) in sources {
            if *j == target || *j >= m || v.len() != d {
                return Err(Error::InvalidArgument(format!("bad condition source {j} for target {target}")));
            }
            rows[*j].clone_from(v);
            cells[*j] = true;
        }
        let avail = Availability::new(1, m, cells)?;
        let mut g = Graph::new();
        let latents: Vec<Var> = rows
            .into_iter()
            .map(|r| g.constant(Tensor::matrix(1, d, r).expect("sized")))
            .collect();
        let c = self.condition(&mut g, store, target, &[0], &latents, &avail)?;
        Ok(g.value(c).data().to_vec())
    }

    /// `ε_cn(v_t, c, t)` for a batch with per-row steps.
    pub fn predict_noise(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        m: usize,
        v_t: Var,
        cond: Var,
        steps: &[usize],
    ) -> Result<Var> {
        Ok(self.predict_noise_traced(g, store, m, v_t, cond, steps)?.0)
    }

    /// As [`Self::predict_noise`], also returning the attention nodes of the three levels.
    pub fn predict_noise_traced(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        m: usize,
        v_t: Var,
        cond: Var,
        steps: &[usize],
    ) -> Result<(Var, [Var; 3])> {
        if g.shape(v_t).len() != 2 || g.shape(v_t)[0] != steps.len() {
            return Err(Error::Shape(format!("v_t {:?} for {} steps", g.shape(v_t), steps.len())));
        }
        let temb = g.constant(timestep_embedding(steps, self.config.time_dim));
        self.denoisers[m].forward(g, store, v_t, cond, temb)
    }

    /// Noise prediction for plain tensors, outside any training graph.
    pub fn predict_noise_rows(
        &self,
        store: &ParamStore<S>,
        m: usize,
        v_t: &Tensor<S>,
        cond: &Tensor<S>,
        steps: &[usize],
    ) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let v = g.constant(v_t.clone());
        let c = g.constant(cond.clone());
        let e = self.predict_noise(&mut g, store, m, v, c, steps)?;
        Ok(g.value(e).clone())
    }

    /// Every trainable parameter of the module.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        for ae in &self.autoencoders {
            v.extend(ae.param_ids());
        }
        for f in &self.fusion {
            v.extend(f.param_ids());
        }
        for d in &self.denoisers {
            v.extend(d.param_ids());
        }
        v
    }
}
