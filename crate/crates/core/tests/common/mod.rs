#![allow(dead_code)]

use peg_core::{Dataset, SessionRow, Subject};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Random longitudinal data: intercept plus `k - 1` normal covariates,
/// logistic treatment, linear outcome with a blip and exchangeable noise.
pub fn random_dataset(n: usize, k: usize, j: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = (0..n)
        .map(|i| {
            let shared: f64 = StandardNormal.sample(&mut rng);
            let rows: Vec<SessionRow> = (0..j)
                .map(|_| {
                    let mut h = vec![1.0];
                    h.extend((1..k).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
                    let eta: f64 = 0.2 + 0.5 * h.get(1).copied().unwrap_or(0.0);
                    let a = if rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()) { 1.0 } else { 0.0 };
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let delta: f64 = h.iter().enumerate().map(|(c, v)| v / (1.0 + c as f64)).sum();
                    let blip = h[0] + if k > 1 { 0.8 * h[1] } else { 0.0 };
                    SessionRow {
                        y: delta + a * blip + 0.6 * shared + 0.8 * noise,
                        a,
                        h,
                    }
                })
                .collect();
            Subject::new(format!("s{i}"), &rows).unwrap()
        })
        .collect();
    Dataset::from_subjects(subjects).unwrap()
}
