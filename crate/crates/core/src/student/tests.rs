use ndarray::{array, Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::datamodel::{Involvement, IsupGrade};
use crate::distill::triplet_loss_grad;
use crate::nn::gradcheck::{check_params, DEFAULT_STEP};
use crate::nn::{ParamSet, PoolDims};
use crate::rng::SeedTree;

fn toy_config() -> StudentConfig {
    StudentConfig {
        patch: 16,
        embed_dim: 6,
        mixer_hidden: 8,
        adapter_dim: 3,
        decoder_hidden: 5,
        projection_dim: 5,
        attention_dim: 4,
        upsample: Upsample::Bilinear,
        backbone_seed: 9,
    }
}

fn diag_mask(n: usize, width: i64) -> Array2<bool> {
    Array2::from_shape_fn((n, n), |(y, x)| (y as i64 - x as i64).abs() <= width)
}

#[test]
fn zero_image_zero_bias_gives_zero_features() {
    let mut m = StudentModel::new(toy_config(), SeedTree::new(1)).unwrap();
    for b in &mut m.params.encoder.mix {
        b.b1.fill(0.0);
    }
    let g = m.encode(Array2::zeros((32, 32)).view()).unwrap();
    assert_eq!(g.len(), 4);
    assert!(g.tokens.iter().all(|&v| v == 0.0));
}

/// With inert mixing blocks and zero adapters the encoder is the patch map.
#[test]
fn straight_line_patch_map() {
    let mut p = EncoderParams::init(2, 2, 3, 2, &mut SeedTree::new(1).rng(), &mut SeedTree::new(2).rng());
    p.patch_embed = Array2::from_shape_fn((2, 12), |(i, j)| (i as f64 + 1.0) * 0.1 * j as f64 - 0.3);
    p.patch_bias = array![0.5, -0.5];
    for b in &mut p.mix {
        b.w2.fill(0.0);
    }
    let image = Array2::from_shape_fn((2, 4), |(y, x)| (y * 4 + x) as f64 / 8.0);
    let g = encode(image.view(), &p, 2).unwrap();
    for (t, c0) in [0usize, 2].iter().enumerate() {
        let px = [image[[0, *c0]], image[[0, c0 + 1]], image[[1, *c0]], image[[1, c0 + 1]]];
        for i in 0..2 {
            let mut want = p.patch_bias[i];
            for rep in 0..3 {
                for (k, v) in px.iter().enumerate() {
                    want += p.patch_embed[[i, rep * 4 + k]] * v;
                }
            }
            assert!((g.tokens[[t, i]] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_logits_give_half() {
    let h = logits_to_heatmap(Array2::zeros((2, 2)).view(), (32, 32), Upsample::Bilinear);
    assert!(h.probs.iter().all(|&p| p == 0.5));
}

#[test]
fn saturated_token_fills_its_footprint() {
    let mut l = Array2::from_elem((4, 4), -50.0);
    l[[1, 2]] = 50.0;
    let h = logits_to_heatmap(l.view(), (64, 64), Upsample::Nearest);
    for ((y, x), &p) in h.probs.indexed_iter() {
        let inside = (16..32).contains(&y) && (32..48).contains(&x);
        assert_eq!(p > 1.0 - 1e-9, inside);
        assert!(p > 0.0 && p < 1.0);
    }
}

#[test]
fn bilinear_two_by_two_matches_oracle() {
    let l = array![[0.0, 1.0], [2.0, 3.0]];
    let n = 8;
    let h = logits_to_heatmap(l.view(), (n, n), Upsample::Bilinear);
    // half-pixel centers, clamped at the border
    let coord = |i: usize| ((i as f64 + 0.5) * 2.0 / n as f64 - 0.5).clamp(0.0, 1.0);
    for y in 0..n {
        for x in 0..n {
            let (fy, fx) = (coord(y), coord(x));
            let v = (1.0 - fy) * ((1.0 - fx) * 0.0 + fx * 1.0) + fy * ((1.0 - fx) * 2.0 + fx * 3.0);
            let p = 1.0 / (1.0 + (-v).exp());
            assert!((h.probs[[y, x]] - p).abs() < 1e-12);
        }
    }
}

#[test]
fn embedding_is_unit_and_order_invariant() {
    let m = StudentModel::new(toy_config(), SeedTree::new(4)).unwrap();
    let mut rng = SeedTree::new(5).rng();
    let image = Array2::from_shape_fn((64, 64), |_| rng.random::<f64>());
    let grid = m.encode(image.view()).unwrap();
    let bag = select_bag(&grid, diag_mask(64, 3).view()).unwrap();
    let z = student_embed(&grid, &bag, &m.params.pool).unwrap();
    assert!((z.dot(&z).sqrt() - 1.0).abs() < 1e-6);
    let mut rev = bag.clone();
    rev.indices.reverse();
    let z2 = student_embed(&grid, &rev, &m.params.pool).unwrap();
    for (a, b) in z.iter().zip(z2.iter()) {
        assert!((a - b).abs() < 1e-10);
    }
    // tokens outside the bag do not matter
    let mut other = grid.clone();
    for t in 0..other.len() {
        if !bag.indices.contains(&t) {
            other.tokens.row_mut(t).fill(7.0);
        }
    }
    assert_eq!(student_embed(&other, &bag, &m.params.pool).unwrap(), z);
    let single = BagIndex { indices: vec![bag.indices[0]] };
    let zs = student_embed(&grid, &single, &m.params.pool).unwrap();
    let proj = m.params.pool.proj.dot(&grid.tokens.row(bag.indices[0]));
    let proj = &proj / proj.dot(&proj).sqrt();
    for (a, b) in zs.iter().zip(proj.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn forward_matches_standalone_paths() {
    let m = StudentModel::new(toy_config(), SeedTree::new(4)).unwrap();
    let mut rng = SeedTree::new(6).rng();
    let image = Array2::from_shape_fn((64, 64), |_| rng.random::<f64>());
    let mask = diag_mask(64, 2);
    let tr = m.forward(image.view(), mask.view()).unwrap();
    let hm = m.heatmap(image.view()).unwrap();
    assert_eq!(hm.shape(), (64, 64));
    assert_eq!(tr.heatmap(), hm);
    assert_eq!(tr.embedding, m.embed(image.view(), mask.view()).unwrap());
    for (&(y, x), &u) in tr.mask_pixels.iter().zip(&tr.pixel_logits) {
        let p = 1.0 / (1.0 + (-u).exp());
        assert!((hm.probs[[y, x]] - p).abs() < 1e-12);
    }
}

fn random_unit(d: usize, rng: &mut impl Rng) -> Array1<f64> {
    let v: Array1<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    &v / v.dot(&v).sqrt()
}

/// Combined loss of one core: seg on pixel logits plus a triplet term on the
/// bag embedding against fixed positive/negative vectors.
fn combined(model: &StudentModel, image: &Array2<f64>, mask: &Array2<bool>, t: &ToyTarget) -> f64 {
    let tr = model.forward(image.view(), mask.view()).unwrap();
    let (seg, _) = seg_loss_logits(&tr.pixel_logits, t.grade, t.involvement).unwrap();
    let tg = triplet_loss_grad(tr.embedding.view(), t.pos.view(), t.neg.view(), t.margin);
    seg + t.lambda * tg.loss
}

struct ToyTarget {
    grade: IsupGrade,
    involvement: Involvement,
    pos: Array1<f64>,
    neg: Array1<f64>,
    margin: f64,
    lambda: f64,
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for inst in 0..20u64 {
        let seeds = SeedTree::new(100 + inst);
        let mut rng = seeds.child("data").rng();
        let mut cfg = toy_config();
        cfg.upsample = if inst % 2 == 0 { Upsample::Bilinear } else { Upsample::Nearest };
        let mut model = StudentModel::new(cfg, seeds.child("model")).unwrap();
        // nonzero adapters so every trainable path carries signal
        for a in &mut model.params.encoder.adapters {
            a.up.mapv_inplace(|_| 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        }
        let image = Array2::from_shape_fn((64, 64), |_| rng.random::<f64>());
        let mask = diag_mask(64, 1 + (inst % 3) as i64);
        let grade = IsupGrade::new((inst % 6) as u8).unwrap();
        let involvement = if grade.is_cancer() {
            Involvement::new(0.2 + 0.1 * (inst % 5) as f64).unwrap()
        } else {
            Involvement::NONE
        };
        let d = model.config.projection_dim;
        let t = ToyTarget {
            grade,
            involvement,
            pos: random_unit(d, &mut rng),
            neg: random_unit(d, &mut rng),
            margin: 2.5,
            lambda: 0.5 + inst as f64 * 0.1,
        };
        let tr = model.forward(image.view(), mask.view()).unwrap();
        let (_, dseg) = seg_loss_logits(&tr.pixel_logits, grade, involvement).unwrap();
        let tg = triplet_loss_grad(tr.embedding.view(), t.pos.view(), t.neg.view(), t.margin);
        assert!(tg.loss > 0.0);
        let du = tg.anchor * t.lambda;
        let mut grads = model.params.zeros_like();
        model.backward(&tr, &dseg, Some(du.view()), &mut grads);
        let cfg = model.config.clone();
        let report = check_params(&model.params, &grads, DEFAULT_STEP, 1e-6, |p| {
            let m = StudentModel {
                config: cfg.clone(),
                params: p.clone(),
            };
            combined(&m, &image, &mask, &t)
        });
        assert!(report.checked > 100);
        assert!(report.max_rel_err < 1e-3, "instance {inst}: {}", report.worst);
        worst = worst.max(report.max_rel_err);
    }
    assert!(worst < 1e-3);
}

#[test]
fn frozen_tensors_are_flagged() {
    let m = StudentModel::new(toy_config(), SeedTree::new(1)).unwrap();
    let flags: Vec<(String, bool)> = m.params.tensors().iter().map(|t| (t.name.clone(), t.trainable)).collect();
    for (name, tr) in flags {
        assert_eq!(tr, !name.starts_with("enc.patch") && !name.starts_with("enc.mix"), "{name}");
    }
    assert_eq!(
        m.params.pool.dims(),
        PoolDims {
            input: 6,
            projection: 5,
            attention: 4
        }
    );
}

#[test]
fn backbone_shared_across_run_seeds() {
    let a = StudentParams::init(&toy_config(), SeedTree::new(1));
    let b = StudentParams::init(&toy_config(), SeedTree::new(2));
    assert_eq!(a.frozen_checksum(), b.frozen_checksum());
    assert_ne!(a.checksum(), b.checksum());
}

#[test]
fn checkpoint_and_heatmap_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = StudentModel::new(toy_config(), SeedTree::new(3)).unwrap();
    let ck = dir.path().join("student.ckpt");
    m.save(&ck).unwrap();
    let back = StudentModel::load(&ck, toy_config()).unwrap();
    assert_eq!(back, m);

    let hm = m.heatmap(Array2::from_elem((32, 32), 0.3).view()).unwrap();
    write_heatmap(dir.path(), "C00001", &hm).unwrap();
    let raw = read_heatmap_raw(&dir.path().join("C00001.f32"), (32, 32)).unwrap();
    for (a, b) in raw.iter().zip(hm.probs.iter()) {
        assert_eq!(*a, *b as f32);
    }
    let png = image::open(dir.path().join("C00001.png")).unwrap().to_luma8();
    assert_eq!(png.dimensions(), (32, 32));
}
