use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
    /// Non-fatal notes, e.g. a split that came out empty.
    pub warnings: Vec<String>,
}

/// Seeded shuffle followed by a train/valid/test cut. Sizes are rounded
/// from the ratios; the test split takes the remainder.
pub fn split<T: Clone>(items: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<Split<T>> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "split ratios must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_valid = ((b * n as f64).round() as usize).min(n - n_train);
    let pick = |r: std::ops::Range<usize>| order[r].iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    let out = Split {
        train: pick(0..n_train),
        valid: pick(n_train..n_train + n_valid),
        test: pick(n_train + n_valid..n),
        warnings: Vec::new(),
    };
    let mut warnings = Vec::new();
    for (name, len) in [
        ("train", out.train.len()),
        ("valid", out.valid.len()),
        ("test", out.test.len()),
    ] {
        if len == 0 {
            log::warn!("{name} split is empty ({n} items, ratios {ratios:?})");
            warnings.push(format!("{name} split is empty"));
        }
    }
    Ok(Split { warnings, ..out })
}
