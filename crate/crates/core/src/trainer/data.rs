use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Four Gaussian clusters in 16 dimensions, two per class in XOR layout.
    Blobs,
    /// Noisy, shifted 8x8 renderings of the ten digits.
    Digits,
}

/// Row-major samples with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: usize,
    pub classes: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.x[i * self.features..(i + 1) * self.features]
    }

    pub fn validate(&self) -> Result<()> {
        if self.features == 0 || self.classes < 2 || self.is_empty() {
            return Err(Error::InvalidConfig(
                "dataset needs features, two classes and samples".into(),
            ));
        }
        if self.x.len() != self.len() * self.features {
            return Err(Error::DimensionMismatch {
                what: "dataset values",
                expected: self.len() * self.features,
                got: self.x.len(),
            });
        }
        if let Some(&bad) = self.y.iter().find(|&&c| c >= self.classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} outside {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features,
            classes: self.classes,
            x: idx
                .iter()
                .flat_map(|&i| self.sample(i).iter().copied())
                .collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

pub const BLOB_FEATURES: usize = 16;
/// Distance of each cluster centre from the origin along both of its axes.
pub const BLOB_SEPARATION: f64 = 2.5;

/// Two classes in 16 dimensions arranged as an XOR of four Gaussian clusters:
/// centres at `(+-s) u + (+-s) v` for random orthonormal `u, v`, unit noise,
/// label = whether the two signs differ. The classes are not linearly
/// separable; the Bayes accuracy is `p^2 + (1-p)^2` with `p = Phi(s)`, about
/// 98.8%.
pub fn blobs(samples: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss =
        |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let mut u = gauss(BLOB_FEATURES);
    let mut v = gauss(BLOB_FEATURES);
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    u.iter_mut().for_each(|a| *a /= nu);
    let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(&u).for_each(|(b, a)| *b -= proj * a);
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= nv);
    let mut x = Vec::with_capacity(samples * BLOB_FEATURES);
    let mut y = Vec::with_capacity(samples);
    for i in 0..samples {
        let cluster = i % 4;
        let su = if cluster & 1 == 0 {
            -BLOB_SEPARATION
        } else {
            BLOB_SEPARATION
        };
        let sv = if cluster & 2 == 0 {
            -BLOB_SEPARATION
        } else {
            BLOB_SEPARATION
        };
        let noise = gauss(BLOB_FEATURES);
        x.extend((0..BLOB_FEATURES).map(|k| su * u[k] + sv * v[k] + noise[k]));
        y.push(usize::from((su > 0.0) != (sv > 0.0)));
    }
    Dataset {
        features: BLOB_FEATURES,
        classes: 2,
        x,
        y,
    }
}

const GLYPHS: [[&str; 7]; 10] = [
    [
        ".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###.",
    ],
    [
        "..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###.",
    ],
    [
        ".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####",
    ],
    [
        "####.", "....#", "....#", ".###.", "....#", "....#", "####.",
    ],
    [
        "...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#.",
    ],
    [
        "#####", "#....", "####.", "....#", "....#", "#...#", ".###.",
    ],
    [
        ".###.", "#....", "#....", "####.", "#...#", "#...#", ".###.",
    ],
    [
        "#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#...",
    ],
    [
        ".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###.",
    ],
    [
        ".###.", "#...#", "#...#", ".####", "....#", "....#", ".###.",
    ],
];

pub const DIGIT_SIDE: usize = 8;

/// 5x7 glyphs placed at a random offset inside an 8x8 frame, with 5% of the
/// pixels flipped and additive Gaussian noise (sd 0.1).
pub fn digits(samples: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = DIGIT_SIDE * DIGIT_SIDE;
    let mut x = Vec::with_capacity(samples * features);
    let mut y = Vec::with_capacity(samples);
    for i in 0..samples {
        let class = i % 10;
        let dx = rng.random_range(0..=DIGIT_SIDE - 5);
        let dy = rng.random_range(0..=DIGIT_SIDE - 7);
        let mut img = vec![0.0; features];
        for (r, line) in GLYPHS[class].iter().enumerate() {
            for (c, ch) in line.bytes().enumerate() {
                if ch == b'#' {
                    img[(r + dy) * DIGIT_SIDE + c + dx] = 1.0;
                }
            }
        }
        for v in &mut img {
            if rng.random_bool(0.05) {
                *v = 1.0 - *v;
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            *v += 0.1 * noise;
        }
        x.extend(img);
        y.push(class);
    }
    Dataset {
        features,
        classes: 10,
        x,
        y,
    }
}

/// Seeded train/test split of the chosen toy dataset.
pub fn make_split(kind: DatasetKind, seed: u64) -> (Dataset, Dataset) {
    let (full, train_len) = match kind {
        DatasetKind::Blobs => (blobs(2560, seed), 512),
        DatasetKind::Digits => (digits(1500, seed), 1000),
    };
    let mut idx: Vec<usize> = (0..full.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    (
        full.subset(&idx[..train_len]),
        full.subset(&idx[train_len..]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_seeded_and_balanced() {
        let a = blobs(100, 3);
        a.validate().unwrap();
        assert_eq!(a, blobs(100, 3));
        assert_ne!(a, blobs(100, 4));
        assert_eq!(a.y.iter().filter(|&&c| c == 1).count(), 50);
    }

    #[test]
    fn digit_glyphs_are_distinct() {
        for (i, a) in GLYPHS.iter().enumerate() {
            assert!(a.iter().all(|l| l.len() == 5));
            for b in &GLYPHS[i + 1..] {
                assert_ne!(a, b);
            }
        }
        let d = digits(50, 1);
        d.validate().unwrap();
        assert_eq!(d.features, 64);
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = make_split(DatasetKind::Blobs, 9);
        assert_eq!((tr.len(), te.len()), (512, 2048));
        let (tr, te) = make_split(DatasetKind::Digits, 9);
        assert_eq!((tr.len(), te.len()), (1000, 500));
    }
}
