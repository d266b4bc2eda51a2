use std::io::BufWriter;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::decoder::{decoder_backward, token_logits, DecoderCache, DecoderParams, Heatmap, Upsample};
use super::encoder::{encoder_backward, encoder_forward, EncoderCache, EncoderParams};
use super::tokens::{select_bag, tokenize, BagIndex, TokenGrid, DEFAULT_PATCH};
use crate::datamodel::io::write_f32_matrix;
use crate::error::{Error, Result};
use crate::nn::archive;
use crate::nn::interp::Resampler;
use crate::nn::{
    abmil_backward, abmil_forward, AttentionPoolParams, ParamSet, PoolCache, PoolDims, TensorMut, TensorRef,
    DEFAULT_ATTENTION_DIM, DEFAULT_PROJECTION_DIM,
};
use crate::rng::SeedTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentConfig {
    pub patch: usize,
    pub embed_dim: usize,
    pub mixer_hidden: usize,
    pub adapter_dim: usize,
    pub decoder_hidden: usize,
    /// Must equal the teacher bank width.
    pub projection_dim: usize,
    pub attention_dim: usize,
    pub upsample: Upsample,
    /// Seed of the frozen backbone, shared by every run.
    pub backbone_seed: u64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            patch: DEFAULT_PATCH,
            embed_dim: 64,
            mixer_hidden: 128,
            adapter_dim: 16,
            decoder_hidden: 32,
            projection_dim: DEFAULT_PROJECTION_DIM,
            attention_dim: DEFAULT_ATTENTION_DIM,
            upsample: Upsample::Bilinear,
            backbone_seed: 0x00c0_ffee,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("patch", self.patch),
            ("embed_dim", self.embed_dim),
            ("mixer_hidden", self.mixer_hidden),
            ("adapter_dim", self.adapter_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("projection_dim", self.projection_dim),
            ("attention_dim", self.attention_dim),
        ];
        match dims.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("student.{name} must be positive"))),
            None => Ok(()),
        }
    }

    pub fn pool_dims(&self) -> PoolDims {
        PoolDims {
            input: self.embed_dim,
            projection: self.projection_dim,
            attention: self.attention_dim,
        }
    }
}

/// Every student weight. Backbone tensors carry `trainable = false`.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentParams {
    pub encoder: EncoderParams,
    pub pool: AttentionPoolParams,
    pub decoder: DecoderParams,
}

impl StudentParams {
    /// The backbone depends only on `config.backbone_seed`; `seed` drives the
    /// adapters, pool and decoder.
    pub fn init(config: &StudentConfig, seed: SeedTree) -> Self {
        let mut backbone_rng = SeedTree::new(config.backbone_seed).child("backbone").rng();
        let encoder = EncoderParams::init(
            config.patch,
            config.embed_dim,
            config.mixer_hidden,
            config.adapter_dim,
            &mut backbone_rng,
            &mut seed.child("adapters").rng(),
        );
        let pool = AttentionPoolParams::init(config.pool_dims(), &mut seed.child("pool").rng());
        let decoder = DecoderParams::init(config.embed_dim, config.decoder_hidden, &mut seed.child("decoder").rng());
        StudentParams { encoder, pool, decoder }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        archive::write(path, &self.tensors())
    }

    /// Loads into a template of the right shape.
    pub fn load(path: &Path, config: &StudentConfig) -> Result<Self> {
        let mut p = StudentParams::init(config, SeedTree::new(0));
        let arch = archive::read(path)?;
        archive::load_into(p.tensors_mut(), &arch, path)?;
        Ok(p)
    }
}

impl ParamSet for StudentParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = self.encoder.tensors();
        v.extend(self.pool.tensors());
        v.extend(self.decoder.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.pool.tensors_mut());
        v.extend(self.decoder.tensors_mut());
        v
    }
}

/// Tokenizes and encodes an image; the returned grid holds feature vectors.
pub fn encode(image: ArrayView2<f64>, params: &EncoderParams, patch: usize) -> Result<TokenGrid> {
    let grid = tokenize(image, patch)?;
    if grid.tokens.ncols() * 3 != params.patch_embed.ncols() {
        return Err(Error::Shape(format!(
            "patch {patch} does not match encoder input width {}",
            params.patch_embed.ncols()
        )));
    }
    let (features, _) = encoder_forward(grid.tokens.view(), params);
    Ok(grid.with_tokens(features))
}

fn gather_rows(m: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    m.select(Axis(0), idx)
}

/// Attention-pools the bag's token features and normalizes to unit length.
pub fn student_embed(grid: &TokenGrid, bag: &BagIndex, pool: &AttentionPoolParams) -> Result<Array1<f64>> {
    if bag.is_empty() {
        return Err(Error::Empty("token bag".into()));
    }
    let cache = abmil_forward(gather_rows(&grid.tokens, &bag.indices).view(), pool)?;
    let n = cache.z.dot(&cache.z).sqrt();
    if !(n > 0.0) {
        return Err(Error::InvalidInput("bag pools to a zero vector".into()));
    }
    Ok(cache.z / n)
}

/// Everything the backward pass needs from one core's forward pass.
pub struct CoreTrace {
    enc: EncoderCache,
    features: Array2<f64>,
    dec: DecoderCache,
    token_logits: Array1<f64>,
    grid_shape: (usize, usize),
    resampler: Resampler,
    /// Needle-mask pixels in row-major order.
    pub mask_pixels: Vec<(usize, usize)>,
    /// Logits at `mask_pixels`.
    pub pixel_logits: Vec<f64>,
    pub bag: BagIndex,
    bag_features: Array2<f64>,
    pool: PoolCache,
    z_norm: f64,
    /// Unit-norm bag embedding.
    pub embedding: Array1<f64>,
}

impl CoreTrace {
    pub fn token_logit_grid(&self) -> Array2<f64> {
        self.token_logits
            .clone()
            .into_shape_with_order(self.grid_shape)
            .expect("grid size")
    }

    pub fn heatmap(&self) -> Heatmap {
        Heatmap::from_logits(&self.resampler.apply(self.token_logit_grid().view()))
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }
}

/// A student network plus its architecture settings.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentModel {
    pub config: StudentConfig,
    pub params: StudentParams,
}

impl StudentModel {
    pub fn new(config: StudentConfig, seed: SeedTree) -> Result<Self> {
        config.validate()?;
        let params = StudentParams::init(&config, seed);
        Ok(StudentModel { config, params })
    }

    pub fn encode(&self, image: ArrayView2<f64>) -> Result<TokenGrid> {
        encode(image, &self.params.encoder, self.config.patch)
    }

    pub fn heatmap(&self, image: ArrayView2<f64>) -> Result<Heatmap> {
        let grid = self.encode(image)?;
        super::decoder::decode(&grid, &self.params.decoder, self.config.upsample)
    }

    pub fn embed(&self, image: ArrayView2<f64>, needle_mask: ArrayView2<bool>) -> Result<Array1<f64>> {
        let grid = self.encode(image)?;
        let bag = select_bag(&grid, needle_mask)?;
        student_embed(&grid, &bag, &self.params.pool)
    }

    pub fn forward(&self, image: ArrayView2<f64>, needle_mask: ArrayView2<bool>) -> Result<CoreTrace> {
        let raw = tokenize(image, self.config.patch)?;
        let bag = select_bag(&raw, needle_mask)?;
        let (features, enc) = encoder_forward(raw.tokens.view(), &self.params.encoder);
        let (logits, dec) = token_logits(features.view(), &self.params.decoder);
        let grid_shape = (raw.rows, raw.cols);
        let resampler = self.config.upsample.resampler(grid_shape, image.dim());
        let grid = logits.view().into_shape_with_order(grid_shape).expect("grid size");
        let mut mask_pixels = Vec::new();
        let mut pixel_logits = Vec::new();
        for ((y, x), &m) in needle_mask.indexed_iter() {
            if m {
                mask_pixels.push((y, x));
                pixel_logits.push(resampler.sample(&grid, y, x));
            }
        }
        let bag_features = gather_rows(&features, &bag.indices);
        let pool = abmil_forward(bag_features.view(), &self.params.pool)?;
        let z_norm = pool.z.dot(&pool.z).sqrt();
        if !(z_norm > 0.0 && z_norm.is_finite()) {
            return Err(Error::NonFinite(format!("student bag embedding norm {z_norm}")));
        }
        let embedding = &pool.z / z_norm;
        Ok(CoreTrace {
            enc,
            features,
            dec,
            token_logits: logits,
            grid_shape,
            resampler,
            mask_pixels,
            pixel_logits,
            bag,
            bag_features,
            pool,
            z_norm,
            embedding,
        })
    }

    /// Accumulates gradients given `dL/d pixel_logits` and optionally
    /// `dL/d embedding`.
    pub fn backward(
        &self,
        trace: &CoreTrace,
        d_pixel_logits: &[f64],
        d_embedding: Option<ArrayView1<f64>>,
        grads: &mut StudentParams,
    ) {
        debug_assert_eq!(d_pixel_logits.len(), trace.mask_pixels.len());
        let mut dgrid = Array2::<f64>::zeros(trace.grid_shape);
        for (&(y, x), &g) in trace.mask_pixels.iter().zip(d_pixel_logits) {
            if g != 0.0 {
                trace.resampler.scatter(g, y, x, &mut dgrid);
            }
        }
        let dlogits = dgrid.into_shape_with_order(trace.token_logits.len()).expect("grid size");
        let mut dfeat = decoder_backward(
            trace.features.view(),
            &self.params.decoder,
            &trace.dec,
            &dlogits,
            &mut grads.decoder,
        );
        if let Some(du) = d_embedding {
            let u = &trace.embedding;
            let dz = (&du - &(u * u.dot(&du))) / trace.z_norm;
            let dbag = abmil_backward(
                trace.bag_features.view(),
                &self.params.pool,
                &trace.pool,
                dz.view(),
                &mut grads.pool,
            );
            for (row, &t) in dbag.rows().into_iter().zip(&trace.bag.indices) {
                let mut dst = dfeat.row_mut(t);
                dst += &row;
            }
        }
        encoder_backward(&self.params.encoder, &trace.enc, dfeat, &mut grads.encoder);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)
    }

    pub fn load(path: &Path, config: StudentConfig) -> Result<Self> {
        config.validate()?;
        let params = StudentParams::load(path, &config)?;
        Ok(StudentModel { config, params })
    }
}


/// Writes `<stem>.png` (8-bit, probability × 255) and `<stem>.f32`
/// (headerless little-endian float32, row-major, same shape as the PNG).
pub fn write_heatmap(dir: &Path, stem: &str, heatmap: &Heatmap) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = heatmap.shape();
    let png = dir.join(format!("{stem}.png"));
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([(heatmap.probs[[y as usize, x as usize]] * 255.0).round() as u8])
    });
    img.save(&png).map_err(|e| Error::Image { path: png.clone(), source: e })?;
    let raw = dir.join(format!("{stem}.f32"));
    let f = std::fs::File::create(&raw).map_err(|e| Error::io(&raw, e))?;
    let mut bw = BufWriter::new(f);
    write_f32_matrix(&mut bw, heatmap.probs.iter().map(|&p| p as f32)).map_err(|e| Error::io(&raw, e))?;
    Ok(())
}

/// Reads the raw float32 half of a heatmap export.
pub fn read_heatmap_raw(path: &Path, shape: (usize, usize)) -> Result<Array2<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != shape.0 * shape.1 * 4 {
        return Err(Error::format(path, format!("expected {} bytes, found {}", shape.0 * shape.1 * 4, bytes.len())));
    }
    let v: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Array2::from_shape_vec(shape, v).expect("length checked"))
}
