//! Seeded synthetic datasets.
//!
//! [`build_fixture`] produces a small, imbalanced, few-shot problem in
//! feature space. Every sample lives in a low-dimensional latent space that
//! is embedded in `dims` coordinates by a random orthonormal map:
//!
//! - `signal` latent coordinates carry class means (drawn once per class
//!   with scale `separation`) plus unit noise;
//! - `nuisance` latent coordinates are class-independent noise with scale
//!   `nuisance_scale`.
//!
//! Rotated records are their parent plus latent jitter scaled by
//! `|angle| / 20`. GAN records are fresh draws from their class with noise
//! inflated by `gan_spread`. Keeping the data low-rank keeps per-split PCA
//! cheap.
//!
//! [`write_image_fixture`] renders a tiny image dataset instead, for the
//! mock-extractor and heatmap paths.

use std::path::{Path, PathBuf};

use crate::augment::rotated_id;
use crate::dataset::{write_manifest, DatasetManifest, Payload, Provenance, SampleLabel, SampleRecord};
use crate::features::{write_feature_table, FeatureTable, FeatureVector};
use crate::linalg::householder_basis;
use crate::raster::RasterImage;
use crate::rng::{derive_seed, Rng};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub n_species: usize,
    /// originals per species run linearly from `min_count` to `max_count`
    pub min_count: usize,
    pub max_count: usize,
    pub dims: usize,
    pub signal: usize,
    pub nuisance: usize,
    pub separation: f64,
    pub nuisance_scale: f64,
    pub rotation_angles: Vec<f64>,
    pub rotation_jitter: f64,
    pub gan_per_class: usize,
    pub gan_spread: f64,
    pub seed: u64,
}

impl FixtureSpec {
    /// 20 species with 2 to 7 originals each in 512 dimensions, eight
    /// rotations per original and ten GAN records per species.
    pub fn standard() -> Self {
        Self {
            n_species: 20,
            min_count: 2,
            max_count: 7,
            dims: 512,
            signal: 8,
            nuisance: 8,
            separation: 1.0,
            nuisance_scale: 1.5,
            rotation_angles: vec![-20.0, -15.0, -10.0, -5.0, 5.0, 10.0, 15.0, 20.0],
            rotation_jitter: 0.5,
            gan_per_class: 10,
            gan_spread: 1.2,
            seed: 7,
        }
    }

    /// A 5-species, 32-dimensional variant for quick tests.
    pub fn small() -> Self {
        Self {
            n_species: 5,
            min_count: 2,
            max_count: 4,
            dims: 32,
            signal: 4,
            nuisance: 2,
            rotation_angles: vec![-10.0, 10.0],
            gan_per_class: 3,
            ..Self::standard()
        }
    }

    /// Originals of species `s`.
    pub fn count(&self, s: usize) -> usize {
        let span = self.max_count - self.min_count + 1;
        self.min_count + (s * span) / self.n_species
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub manifest: DatasetManifest,
    /// one row per manifest record, same order
    pub table: FeatureTable,
}

pub fn species_name(s: usize) -> String {
    format!("species_{s:02}")
}

pub fn build_fixture(spec: &FixtureSpec) -> Fixture {
    assert!(spec.n_species >= 2 && spec.min_count >= 1 && spec.max_count >= spec.min_count);
    let latent = spec.signal + spec.nuisance;
    assert!(latent >= 1 && latent <= spec.dims);

    let mut rng = Rng::seed_from(derive_seed(spec.seed, &[0]));
    let raw: Vec<Vec<f64>> = (0..latent).map(|_| (0..spec.dims).map(|_| rng.normal()).collect()).collect();
    let basis = householder_basis(&raw, spec.dims);
    let embed = |z: &[f64]| -> Vec<f64> {
        (0..spec.dims)
            .map(|i| (0..latent).map(|j| basis[(i, j)] * z[j]).sum())
            .collect()
    };
    let means: Vec<Vec<f64>> = (0..spec.n_species)
        .map(|_| (0..spec.signal).map(|_| spec.separation * rng.normal()).collect())
        .collect();
    let draw = |rng: &mut Rng, s: usize, spread: f64| -> Vec<f64> {
        let mut z: Vec<f64> = means[s].iter().map(|m| m + spread * rng.normal()).collect();
        z.extend((0..spec.nuisance).map(|_| spread * spec.nuisance_scale * rng.normal()));
        z
    };

    let mut records = Vec::new();
    let mut rows = Vec::new();
    let push = |records: &mut Vec<SampleRecord>, rows: &mut Vec<FeatureVector>, id: String, s: usize, payload, prov: Provenance, z: &[f64]| {
        let label = SampleLabel::new(s, species_name(s));
        rows.push(FeatureVector::new(id.clone(), label.clone(), embed(z)).with_provenance(prov.clone()));
        records.push(SampleRecord {
            sample_id: id,
            label,
            payload,
            provenance: prov,
        });
    };
    let file = || Payload::File(PathBuf::from("fixture.fvec"));

    let mut originals: Vec<(String, usize, Vec<f64>)> = Vec::new();
    for s in 0..spec.n_species {
        let mut r = Rng::seed_from(derive_seed(spec.seed, &[1, s as u64]));
        for i in 0..spec.count(s) {
            let z = draw(&mut r, s, 1.0);
            let id = format!("{}_{i:02}", species_name(s));
            push(&mut records, &mut rows, id.clone(), s, file(), Provenance::Original, &z);
            originals.push((id, s, z));
        }
    }
    for (k, (parent, s, z)) in originals.iter().enumerate() {
        let mut r = Rng::seed_from(derive_seed(spec.seed, &[2, k as u64]));
        for &angle in &spec.rotation_angles {
            let scale = spec.rotation_jitter * angle.abs() / 20.0;
            let zr: Vec<f64> = z.iter().map(|v| v + scale * r.normal()).collect();
            let prov = Provenance::Rotated {
                parent: parent.clone(),
                angle_deg: angle,
            };
            push(&mut records, &mut rows, rotated_id(parent, angle), *s, Payload::Derived, prov, &zr);
        }
    }
    for s in 0..spec.n_species {
        let mut r = Rng::seed_from(derive_seed(spec.seed, &[3, s as u64]));
        for g in 0..spec.gan_per_class {
            let z = draw(&mut r, s, spec.gan_spread);
            let id = format!("{}_gan{g:02}", species_name(s));
            push(&mut records, &mut rows, id, s, file(), Provenance::GanIngested, &z);
        }
    }
    let manifest = DatasetManifest::from_records(records).expect("fixture records are valid");
    let table = FeatureTable::new(spec.dims, rows).expect("fixture rows are valid");
    Fixture { manifest, table }
}

/// Writes `manifest.csv` and `fixture.fvec` into `dir`.
pub fn write_fixture(fx: &Fixture, dir: &Path) -> Result<(PathBuf, PathBuf), PipelineError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Output { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let manifest = dir.join("manifest.csv");
    let table = dir.join("fixture.fvec");
    write_manifest(&fx.manifest, &manifest).map_err(io(&manifest))?;
    write_feature_table(&fx.table, &table).map_err(|e| PipelineError::stage("fixture", e))?;
    Ok((manifest, table))
}

/// Renders `per_class` gray `size x size` PNGs for each of `n_species`
/// species into `dir/images` and writes `dir/manifest.csv` listing them.
///
/// Species differ in stripe orientation and frequency and in the position
/// of a bright blob; every image adds its own phase shift and noise.
pub fn write_image_fixture(dir: &Path, n_species: usize, per_class: usize, size: usize, seed: u64) -> Result<PathBuf, PipelineError> {
    use std::f64::consts::PI;
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|source| PipelineError::Output {
        path: images.clone(),
        source,
    })?;
    let mut csv = String::from("sample_id,species_name,kind,path,parent_id,angle_deg\n");
    for s in 0..n_species {
        let theta = s as f64 * PI / n_species as f64;
        let freq = 0.15 + 0.1 * (s % 3) as f64;
        let (bx, by) = (0.3 + 0.4 * ((s * 7) % 5) as f64 / 4.0, 0.3 + 0.4 * ((s * 3) % 5) as f64 / 4.0);
        for i in 0..per_class {
            let mut rng = Rng::seed_from(derive_seed(seed, &[s as u64, i as u64]));
            let phase = 2.0 * PI * rng.uniform();
            let noise: Vec<f64> = (0..size * size).map(|_| 0.05 * rng.normal()).collect();
            let n = size as f64;
            let img = RasterImage::from_fn_gray(size, size, |x, y| {
                let (xf, yf) = (x as f64, y as f64);
                let u = xf * theta.cos() + yf * theta.sin();
                let stripes = 0.25 * (freq * u + phase).sin();
                let d2 = (xf / n - bx).powi(2) + (yf / n - by).powi(2);
                let blob = 0.35 * (-d2 / 0.01).exp();
                0.4 + stripes + blob + noise[y * size + x]
            });
            let id = format!("{}_{i:02}", species_name(s));
            let rel = format!("images/{id}.png");
            img.save_png(dir.join(&rel)).map_err(|e| PipelineError::stage("fixture", e))?;
            csv.push_str(&format!("{id},{},original,{rel},,\n", species_name(s)));
        }
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, csv).map_err(|source| PipelineError::Output { path: path.clone(), source })?;
    Ok(path)
}
