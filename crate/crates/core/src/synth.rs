//! Seeded retrieval sets with planted nearest neighbors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::store::FloatDb;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub docs: usize,
    pub queries: usize,
    pub dim: usize,
    /// Norm of the perturbation added to the planted document, relative to its unit norm.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            docs: 1024,
            queries: 100,
            dim: 128,
            noise: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub docs: FloatDb,
    pub queries: FloatDb,
    pub qrels: Qrels,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Unit-norm Gaussian documents with ids `1..=docs`; query `j` (id `j + 1`) is
/// a noisy copy of one randomly chosen document, which is its only relevant doc.
pub fn generate(p: &SynthParams) -> Result<SynthDataset> {
    if p.docs == 0 || p.queries == 0 || p.dim == 0 {
        return Err(Error::InvalidInput("docs, queries and dim must be positive".into()));
    }
    if !(p.noise.is_finite() && p.noise >= 0.0) {
        return Err(Error::InvalidInput("noise must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let docs: Vec<Vec<f64>> = (0..p.docs).map(|_| unit_gaussian(&mut rng, p.dim)).collect();
    let mut qrels = Qrels::new();
    let mut qvecs = Vec::with_capacity(p.queries * p.dim);
    for j in 0..p.queries {
        let target = rng.random_range(0..p.docs);
        let dir = unit_gaussian(&mut rng, p.dim);
        qvecs.extend(docs[target].iter().zip(&dir).map(|(d, e)| (d + p.noise * e) as f32));
        qrels.insert(j as u64 + 1, target as u64 + 1, 1);
    }
    let flat: Vec<f32> = docs.iter().flatten().map(|&x| x as f32).collect();
    Ok(SynthDataset {
        docs: FloatDb::new(p.dim, (1..=p.docs as u64).collect(), flat)?,
        queries: FloatDb::new(p.dim, (1..=p.queries as u64).collect(), qvecs)?,
        qrels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_replay() {
        let p = SynthParams {
            docs: 50,
            queries: 10,
            dim: 64,
            noise: 0.1,
            seed: 3,
        };
        let a = generate(&p).unwrap();
        assert_eq!(a, generate(&p).unwrap());
        assert_eq!(a.docs.len(), 50);
        assert_eq!(a.queries.len(), 10);
        assert_eq!(a.qrels.len(), 10);
        assert_ne!(a, generate(&SynthParams { seed: 4, ..p }).unwrap());
    }

    #[test]
    fn low_noise_neighbor_is_planted_doc() {
        let a = generate(&SynthParams {
            noise: 0.05,
            ..Default::default()
        })
        .unwrap();
        for (qid, q) in a.queries.iter() {
            let best = a
                .docs
                .iter()
                .max_by(|x, y| {
                    let dot = |v: &[f32]| v.iter().zip(q).map(|(a, b)| (a * b) as f64).sum::<f64>();
                    dot(x.1).total_cmp(&dot(y.1))
                })
                .unwrap()
                .0;
            assert!(a.qrels.is_relevant(qid, best));
        }
    }
}
