//! Stage-1 histopathology teacher: attention pooling over embedding bags,
//! an MLP grade classifier, and export of the frozen embedding bank.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{assign_bin, BinEdges, EmbeddingBag, IsupGrade, TeacherBank, TeacherBankEntry};
use crate::error::{Error, Result};
use crate::nn::{
    abmil_backward, abmil_forward, archive, init_matrix, softmax, tmut1, tmut2, tref1, tref2, AttentionPoolParams,
    ParamSet, PoolDims, TensorMut, TensorRef, DEFAULT_ATTENTION_DIM, DEFAULT_PROJECTION_DIM,
};
use crate::rng::SeedTree;
use crate::trainloop::{optimizer_step, AdamWState, OptimConfig};

pub const DEFAULT_HIDDEN: usize = 256;

/// One-hidden-layer tanh MLP from the pooled embedding to six grade logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ClassifierParams {
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        ClassifierParams {
            w1: init_matrix(hidden, input, 1.0, rng),
            b1: Array1::zeros(hidden),
            w2: init_matrix(IsupGrade::COUNT, hidden, 1.0, rng),
            b2: Array1::zeros(IsupGrade::COUNT),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        ClassifierParams {
            w1: Array2::zeros((hidden, input)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((IsupGrade::COUNT, hidden)),
            b2: Array1::zeros(IsupGrade::COUNT),
        }
    }
}

impl ParamSet for ClassifierParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            tref2("clf.w1", &self.w1, true),
            tref1("clf.b1", &self.b1, true),
            tref2("clf.w2", &self.w2, true),
            tref1("clf.b2", &self.b2, true),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        vec![
            tmut2("clf.w1", &mut self.w1, true),
            tmut1("clf.b1", &mut self.b1, true),
            tmut2("clf.w2", &mut self.w2, true),
            tmut1("clf.b2", &mut self.b2, true),
        ]
    }
}

struct ClassifierCache {
    hidden: Array1<f64>,
    probs: Array1<f64>,
}

fn classifier_forward(z: ArrayView1<f64>, params: &ClassifierParams) -> ClassifierCache {
    let hidden = (params.w1.dot(&z) + &params.b1).mapv(f64::tanh);
    let logits = params.w2.dot(&hidden) + &params.b2;
    ClassifierCache {
        probs: softmax(logits.view()),
        hidden,
    }
}

/// Class probabilities for a pooled embedding.
pub fn classify(z: ArrayView1<f64>, params: &ClassifierParams) -> Array1<f64> {
    classifier_forward(z, params).probs
}

fn classifier_backward(
    z: ArrayView1<f64>,
    params: &ClassifierParams,
    cache: &ClassifierCache,
    dlogits: ArrayView1<f64>,
    grads: &mut ClassifierParams,
) -> Array1<f64> {
    let dl = dlogits.to_owned().insert_axis(ndarray::Axis(1));
    let h = cache.hidden.view().insert_axis(ndarray::Axis(0));
    grads.w2 += &dl.dot(&h);
    grads.b2 += &dlogits;
    let dpre = params.w2.t().dot(&dlogits) * cache.hidden.mapv(|v| 1.0 - v * v);
    let dp = dpre.view().insert_axis(ndarray::Axis(1));
    grads.w1 += &dp.dot(&z.insert_axis(ndarray::Axis(0)));
    grads.b1 += &dpre;
    params.w1.t().dot(&dpre)
}

/// Pooling and classifier weights of the teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel {
    pub pool: AttentionPoolParams,
    pub classifier: ClassifierParams,
}

impl TeacherModel {
    pub fn init(dims: PoolDims, hidden: usize, seed: SeedTree) -> Self {
        let mut rng = seed.rng();
        let pool = AttentionPoolParams::init(dims, &mut rng);
        let classifier = ClassifierParams::init(dims.projection, hidden, &mut rng);
        TeacherModel { pool, classifier }
    }

    pub fn predict(&self, bag: &EmbeddingBag) -> Result<Array1<f64>> {
        let c = abmil_forward(bag.instances.view(), &self.pool)?;
        Ok(classify(c.z.view(), &self.classifier))
    }

    /// Cross-entropy of one bag, weighted, with gradients accumulated.
    pub fn loss_and_grad(
        &self,
        bag: &EmbeddingBag,
        weight: f64,
        grads: Option<&mut TeacherModel>,
    ) -> Result<f64> {
        let pc = abmil_forward(bag.instances.view(), &self.pool)?;
        let cc = classifier_forward(pc.z.view(), &self.classifier);
        let y = bag.grade.index();
        let loss = -weight * cc.probs[y].max(f64::MIN_POSITIVE).ln();
        if let Some(g) = grads {
            let mut dlogits = cc.probs.clone() * weight;
            dlogits[y] -= weight;
            let dz = classifier_backward(pc.z.view(), &self.classifier, &cc, dlogits.view(), &mut g.classifier);
            abmil_backward(bag.instances.view(), &self.pool, &pc, dz.view(), &mut g.pool);
        }
        Ok(loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        archive::write(path, &self.tensors())
    }

    pub fn load(path: &Path, dims: PoolDims, hidden: usize) -> Result<Self> {
        let mut m = TeacherModel {
            pool: AttentionPoolParams {
                proj: Array2::zeros((dims.projection, dims.input)),
                attn_hidden: Array2::zeros((dims.attention, dims.projection)),
                attn_out: Array1::zeros(dims.attention),
                trainable: true,
            },
            classifier: ClassifierParams::zeros(dims.projection, hidden),
        };
        let arch = archive::read(path)?;
        archive::load_into(m.tensors_mut(), &arch, path)?;
        Ok(m)
    }

    /// Marks every tensor frozen; used once Stage 1 is done.
    pub fn freeze(&mut self) {
        self.pool.trainable = false;
    }
}

impl ParamSet for TeacherModel {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = self.pool.tensors();
        v.extend(self.classifier.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut v = self.pool.tensors_mut();
        v.extend(self.classifier.tensors_mut());
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub projection_dim: usize,
    pub attention_dim: usize,
    pub hidden: usize,
    pub optim: OptimConfig,
    /// Weight each bag by inverse grade frequency.
    pub class_weighting: bool,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            projection_dim: DEFAULT_PROJECTION_DIM,
            attention_dim: DEFAULT_ATTENTION_DIM,
            hidden: DEFAULT_HIDDEN,
            optim: OptimConfig::default(),
            class_weighting: false,
        }
    }
}

impl TeacherConfig {
    pub fn dims(&self, input: usize) -> PoolDims {
        PoolDims {
            input,
            projection: self.projection_dim,
            attention: self.attention_dim,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TeacherHistory {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
}

pub fn accuracy(model: &TeacherModel, bags: &[EmbeddingBag]) -> Result<f64> {
    if bags.is_empty() {
        return Err(Error::Empty("bag list".into()));
    }
    let mut correct = 0usize;
    for b in bags {
        let p = model.predict(b)?;
        let arg = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        correct += (arg == b.grade.index()) as usize;
    }
    Ok(correct as f64 / bags.len() as f64)
}

/// Minimizes mean (optionally class-weighted) cross-entropy with minibatch AdamW.
pub fn train_teacher(
    bags: &[EmbeddingBag],
    config: &TeacherConfig,
    seed: u64,
) -> Result<(TeacherModel, TeacherHistory)> {
    config.optim.validate()?;
    let first = bags.first().ok_or_else(|| Error::Empty("teacher training set".into()))?;
    let d = first.dim();
    if let Some(b) = bags.iter().find(|b| b.dim() != d) {
        return Err(Error::Shape(format!("bag {} has width {}, expected {d}", b.sample_id, b.dim())));
    }
    let mut counts = [0usize; IsupGrade::COUNT];
    for b in bags {
        counts[b.grade.index()] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::InvalidInput("teacher training needs at least two grades".into()));
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    let weight_of = |g: IsupGrade| {
        if config.class_weighting {
            bags.len() as f64 / (present * counts[g.index()] as f64)
        } else {
            1.0
        }
    };

    let seeds = SeedTree::new(seed).child("teacher");
    let mut model = TeacherModel::init(config.dims(d), config.hidden, seeds.child("init"));
    let mut state = AdamWState::new(&model);
    let mut order: Vec<usize> = (0..bags.len()).collect();
    let mut rng = seeds.child("order").rng();
    let mut history = TeacherHistory::default();
    for epoch in 0..config.optim.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.optim.batch_size) {
            let mut grads = model.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += model.loss_and_grad(&bags[i], weight_of(bags[i].grade), Some(&mut grads))?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("teacher batch loss {batch_loss}"),
                });
            }
            let scale = 1.0 / batch.len() as f64;
            for t in grads.tensors_mut() {
                t.data.iter_mut().for_each(|v| *v *= scale);
            }
            optimizer_step(&mut model, &grads, &mut state, &config.optim).map_err(|e| Error::Diverged {
                epoch,
                detail: e.to_string(),
            })?;
            total += batch_loss;
        }
        history.epoch_loss.push(total / bags.len() as f64);
        history.epoch_accuracy.push(accuracy(&model, bags)?);
        log::debug!(
            "teacher epoch {epoch}: loss {:.4} acc {:.3}",
            history.epoch_loss[epoch],
            history.epoch_accuracy[epoch]
        );
    }
    model.freeze();
    Ok((model, history))
}

/// Pools every bag with the frozen teacher, normalizes, and indexes the
/// result by `(grade, involvement bin)`.
pub fn export_bank(bags: &[EmbeddingBag], pool: &AttentionPoolParams, edges: &BinEdges) -> Result<TeacherBank> {
    if bags.is_empty() {
        return Err(Error::Empty("bag list for bank export".into()));
    }
    let p = pool.proj.nrows();
    let mut emb = Array2::<f32>::zeros((bags.len(), p));
    let mut entries = Vec::with_capacity(bags.len());
    for (i, b) in bags.iter().enumerate() {
        let c = abmil_forward(b.instances.view(), pool)?;
        let norm = c.z.dot(&c.z).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidInput(format!("bag {} pools to a zero embedding", b.sample_id)));
        }
        for (dst, v) in emb.row_mut(i).iter_mut().zip(c.z.iter()) {
            *dst = (v / norm) as f32;
        }
        entries.push(TeacherBankEntry {
            sample_id: b.sample_id.clone(),
            grade: b.grade,
            bin: assign_bin(b.involvement, edges).0,
        });
    }
    TeacherBank::new(edges.clone(), entries, emb)
}
