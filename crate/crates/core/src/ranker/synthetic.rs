use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{length_norm, PinFeatures, QueryFeatures, RankerTriplet};
use crate::model::seed::{stage_rng, Stage};

#[derive(Debug, Clone)]
pub struct SyntheticTriplets {
    pub train: Vec<RankerTriplet>,
    pub eval: Vec<RankerTriplet>,
}

fn gaussian_unit(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Unit vector near `proto`: prototype plus isotropic noise of expected norm
/// `noise`, renormalized.
fn jitter(proto: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let s = noise / (proto.len() as f64).sqrt();
    let v: Vec<f64> = proto
        .iter()
        .map(|&p| {
            let z: f64 = StandardNormal.sample(rng);
            p + s * z
        })
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

struct Cluster {
    visual: Vec<f64>,
    text: Vec<f64>,
    query: Vec<f64>,
}

/// Triplets drawn from `clusters` latent topics. A pin's features sit near
/// its topic's prototypes; the positive query sits near the same topic's
/// query prototype and the negative near another topic's. Topics are
/// linearly separable in both towers' inputs.
pub fn separable_triplets(
    visual_dim: usize,
    text_dim: usize,
    clusters: usize,
    train: usize,
    eval: usize,
    seed: u64,
) -> SyntheticTriplets {
    assert!(clusters >= 2, "need at least two topics for negatives");
    let mut rng = stage_rng(seed, Stage::Eval);
    let protos: Vec<Cluster> = (0..clusters)
        .map(|_| Cluster {
            visual: gaussian_unit(visual_dim, &mut rng),
            text: gaussian_unit(text_dim, &mut rng),
            query: gaussian_unit(text_dim, &mut rng),
        })
        .collect();
    let draw = |rng: &mut ChaCha8Rng| {
        let k = rng.random_range(0..clusters);
        let mut j = rng.random_range(0..clusters - 1);
        if j >= k {
            j += 1;
        }
        let query = |c: &Cluster, rng: &mut ChaCha8Rng| QueryFeatures {
            text: jitter(&c.query, 0.8, rng),
            length_norm: length_norm(rng.random_range(1..=20)),
        };
        RankerTriplet {
            pin: PinFeatures {
                visual: jitter(&protos[k].visual, 1.0, rng),
                text: jitter(&protos[k].text, 0.8, rng),
                perception: rng.random::<f32>(),
            },
            positive: query(&protos[k], rng),
            negative: query(&protos[j], rng),
        }
    };
    let train = (0..train).map(|_| draw(&mut rng)).collect();
    let eval = (0..eval).map(|_| draw(&mut rng)).collect();
    SyntheticTriplets { train, eval }
}
