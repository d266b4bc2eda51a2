//! Attention pooling over one bag: weights sum to one, permuting the bag
//! permutes the weights and leaves the pooled vector unchanged.

use histodistill::nn::{abmil_pool, AttentionPoolParams, PoolDims};
use histodistill::rng::SeedTree;
use ndarray::{Array2, Axis};
use rand::Rng;

fn main() -> histodistill::Result<()> {
    let mut rng = SeedTree::new(2).rng();
    let dims = PoolDims {
        input: 8,
        projection: 6,
        attention: 4,
    };
    let params = AttentionPoolParams::init(dims, &mut rng);
    let bag = Array2::from_shape_fn((5, 8), |_| rng.random_range(-1.0..1.0));
    let (z, a) = abmil_pool(bag.view(), &params)?;
    println!("attention {:.3} (sum {:.6})", a, a.sum());
    println!("pooled    {:.3}", z);

    let order = [3, 0, 4, 1, 2];
    let shuffled = bag.select(Axis(0), &order);
    let (z2, a2) = abmil_pool(shuffled.view(), &params)?;
    let drift = (&z - &z2).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("after permutation: attention {:.3}, max pooled drift {drift:.1e}", a2);
    Ok(())
}
