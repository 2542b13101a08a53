//! Seeded inputs shared by the benchmarks.

use taxaug::pipeline::fixture::{build_fixture, FixtureSpec};
use taxaug::rng::Rng;
use taxaug::{FeatureTable, FeatureVector, Matrix, RasterImage, SampleLabel};

/// Training rows of the standard fixture (originals, rotations, GAN rows).
pub fn fixture_table() -> FeatureTable {
    build_fixture(&FixtureSpec::standard()).table
}

/// `n` gaussian rows in `d` dimensions.
pub fn gaussian(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = Rng::seed_from(seed);
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect())
}

/// Two shifted gaussian classes with labels `+1` / `-1`.
pub fn binary_problem(n: usize, d: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut x = gaussian(n, d, seed);
    let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    for (i, yi) in y.iter().enumerate() {
        x.row_mut(i)[0] += yi;
    }
    (x, y)
}

/// `classes` classes of sizes 2, 3, ... in `d` dimensions.
pub fn imbalanced(classes: usize, d: usize, seed: u64) -> FeatureTable {
    let mut rng = Rng::seed_from(seed);
    let mut rows = Vec::new();
    for s in 0..classes {
        for i in 0..2 + s {
            let v = (0..d).map(|j| if j == s % d { 3.0 } else { 0.0 } + rng.normal()).collect();
            rows.push(FeatureVector::new(format!("c{s}_{i}"), SampleLabel::new(s, format!("c{s}")), v));
        }
    }
    FeatureTable::new(d, rows).expect("valid table")
}

/// A textured `size x size` gray image.
pub fn textured_image(size: usize) -> RasterImage {
    RasterImage::from_fn_gray(size, size, |x, y| {
        let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
        0.5 + 0.3 * (12.0 * u).sin() * (7.0 * v).cos() + 0.1 * u
    })
}
