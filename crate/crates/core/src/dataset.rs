//! Sample catalog, labels, provenance and stratified repeated k-fold planning.
//!
//! Manifest CSV layout (UTF-8, header required):
//!
//! ```text
//! sample_id,species_name,kind,path,parent_id,angle_deg
//! P01,Genus_a,original,img/P01.png,,
//! P01@rot+5,Genus_a,rotated,,P01,5
//! G01,Genus_a,gan,gan/G01.png,,
//! ```
//!
//! `kind` is one of `original`, `rotated`, `gan`. Relative paths are resolved
//! against the manifest's directory. A rotated row with an empty `path` is
//! rendered on demand by rotating its parent's image.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::rng::Rng;

/// Largest rotation magnitude accepted anywhere in the crate, in degrees.
pub const MAX_ROTATION_DEG: f64 = 20.0;

const MANIFEST_HEADER: [&str; 6] = [
    "sample_id",
    "species_name",
    "kind",
    "path",
    "parent_id",
    "angle_deg",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("duplicate sample_id {sample_id:?} at line {line}")]
    DuplicateId { sample_id: String, line: u64 },
    #[error("species {species:?} has no original sample")]
    NoOriginal { species: String },
    #[error("rotated sample {sample_id:?} references {parent:?}, which is not an original sample")]
    BadParent { sample_id: String, parent: String },
    #[error("dataset unusable: {remaining} species remain, at least 2 are required")]
    Unusable { remaining: usize },
    #[error("species {species:?} has {count} eligible samples, fewer than k = {k}")]
    Stratification {
        species: String,
        count: usize,
        k: usize,
    },
    #[error("invalid fold parameters: {0}")]
    FoldParams(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SampleLabel {
    pub species_id: usize,
    pub species_name: String,
}

impl SampleLabel {
    pub fn new(species_id: usize, species_name: impl Into<String>) -> Self {
        Self {
            species_id,
            species_name: species_name.into(),
        }
    }
}

/// Origin of a sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Rotated { parent: String, angle_deg: f64 },
    GanIngested,
    SmoteSynthetic,
}

impl Provenance {
    pub fn kind(&self) -> ProvenanceKind {
        match self {
            Provenance::Original => ProvenanceKind::Original,
            Provenance::Rotated { .. } => ProvenanceKind::Rotated,
            Provenance::GanIngested => ProvenanceKind::Gan,
            Provenance::SmoteSynthetic => ProvenanceKind::Smote,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceKind {
    Original,
    Rotated,
    Gan,
    Smote,
}

impl fmt::Display for ProvenanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProvenanceKind::Original => "original",
            ProvenanceKind::Rotated => "rotated",
            ProvenanceKind::Gan => "gan",
            ProvenanceKind::Smote => "smote",
        })
    }
}

/// Where a sample's data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Image file (PNG/PGM) or `.fvec` feature file holding the sample.
    File(PathBuf),
    /// Rendered by rotating the parent sample's image.
    Derived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub label: SampleLabel,
    pub payload: Payload,
    pub provenance: Provenance,
}

impl SampleRecord {
    pub fn parent_id(&self) -> Option<&str> {
        match &self.provenance {
            Provenance::Rotated { parent, .. } => Some(parent),
            _ => None,
        }
    }
}

/// Validated, immutable sample index.
///
/// `class_counts[s]` counts the *original* records of species `s`; use
/// [`DatasetManifest::count_kind`] for the other provenances.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    records: Vec<SampleRecord>,
    species: Vec<String>,
    class_counts: Vec<usize>,
    index: HashMap<String, usize>,
}

impl DatasetManifest {
    /// Validates records and assigns dense species ids in first-appearance
    /// order. Any `species_id` already present on the records is ignored.
    pub fn from_records(mut records: Vec<SampleRecord>) -> Result<Self, DatasetError> {
        let mut species: Vec<String> = Vec::new();
        let mut species_ids: HashMap<String, usize> = HashMap::new();
        let mut index = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter_mut().enumerate() {
            if index.insert(rec.sample_id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateId {
                    sample_id: rec.sample_id.clone(),
                    line: i as u64 + 2,
                });
            }
            let next = species.len();
            let id = *species_ids
                .entry(rec.label.species_name.clone())
                .or_insert_with(|| {
                    species.push(rec.label.species_name.clone());
                    next
                });
            rec.label.species_id = id;
        }
        let mut class_counts = vec![0usize; species.len()];
        for rec in &records {
            if rec.provenance == Provenance::Original {
                class_counts[rec.label.species_id] += 1;
            }
            if let Provenance::Rotated { parent, .. } = &rec.provenance {
                let ok = index
                    .get(parent)
                    .map(|&p| records_is_original(&records, p))
                    .unwrap_or(false);
                if !ok {
                    return Err(DatasetError::BadParent {
                        sample_id: rec.sample_id.clone(),
                        parent: parent.clone(),
                    });
                }
            }
        }
        if let Some(s) = class_counts.iter().position(|&c| c == 0) {
            return Err(DatasetError::NoOriginal {
                species: species[s].clone(),
            });
        }
        Ok(Self {
            records,
            species,
            class_counts,
            index,
        })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn label(&self, species_id: usize) -> SampleLabel {
        SampleLabel::new(species_id, self.species[species_id].clone())
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn position(&self, sample_id: &str) -> Option<usize> {
        self.index.get(sample_id).copied()
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.position(sample_id).map(|i| &self.records[i])
    }

    pub fn count_kind(&self, kind: ProvenanceKind) -> usize {
        self.records
            .iter()
            .filter(|r| r.provenance.kind() == kind)
            .count()
    }

    /// Per-species counts of records with the given provenance.
    pub fn class_counts_of(&self, kind: ProvenanceKind) -> Vec<usize> {
        let mut counts = vec![0; self.species.len()];
        for r in &self.records {
            if r.provenance.kind() == kind {
                counts[r.label.species_id] += 1;
            }
        }
        counts
    }

    /// Keeps only the records accepted by `keep`, re-densifying species ids.
    pub fn retain<F: FnMut(&SampleRecord) -> bool>(&self, mut keep: F) -> Result<Self, DatasetError> {
        Self::from_records(self.records.iter().filter(|r| keep(r)).cloned().collect())
    }

    /// Returns a manifest with `extra` appended after the existing records.
    pub fn extended(&self, extra: Vec<SampleRecord>) -> Result<Self, DatasetError> {
        let mut records = self.records.clone();
        records.extend(extra);
        Self::from_records(records)
    }
}

fn records_is_original(records: &[SampleRecord], i: usize) -> bool {
    records[i].provenance == Provenance::Original
}

/// Reads and validates a manifest CSV.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, base)
}

/// Parses manifest text; relative paths are joined onto `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<DatasetManifest, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = reader.records();

    let header = match rows.next() {
        Some(h) => h.map_err(|e| csv_error(e, 1))?,
        None => {
            return Err(DatasetError::Parse {
                line: 1,
                message: "empty manifest, expected header".into(),
            })
        }
    };
    let found: Vec<&str> = header.iter().collect();
    if found != MANIFEST_HEADER {
        return Err(DatasetError::Parse {
            line: 1,
            message: format!("expected header {:?}, found {:?}", MANIFEST_HEADER.join(","), found.join(",")),
        });
    }

    let mut records = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for row in rows {
        let row = row.map_err(|e| csv_error(e, 0))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() == 1 && row.get(0) == Some("") {
            continue;
        }
        if row.len() != MANIFEST_HEADER.len() {
            return Err(DatasetError::Parse {
                line,
                message: format!("expected {} fields, found {}", MANIFEST_HEADER.len(), row.len()),
            });
        }
        let field = |i: usize| row.get(i).unwrap_or("");
        let sample_id = field(0);
        let species_name = field(1);
        if sample_id.is_empty() {
            return Err(parse_err(line, "empty sample_id"));
        }
        if species_name.is_empty() {
            return Err(parse_err(line, "empty species_name"));
        }
        if seen.insert(sample_id.to_string(), line).is_some() {
            return Err(DatasetError::DuplicateId {
                sample_id: sample_id.to_string(),
                line,
            });
        }
        let path = field(3);
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let (payload, provenance) = match field(2) {
            "original" | "gan" => {
                if path.is_empty() {
                    return Err(parse_err(line, "missing path"));
                }
                let prov = if field(2) == "original" {
                    Provenance::Original
                } else {
                    Provenance::GanIngested
                };
                (Payload::File(resolve(path)), prov)
            }
            "rotated" => {
                let parent = field(4);
                if parent.is_empty() {
                    return Err(parse_err(line, "rotated row without parent_id"));
                }
                let angle: f64 = field(5)
                    .parse()
                    .map_err(|_| parse_err(line, &format!("invalid angle_deg {:?}", field(5))))?;
                if !angle.is_finite() || angle.abs() > MAX_ROTATION_DEG {
                    return Err(parse_err(line, &format!("angle {angle} outside [-20, 20]")));
                }
                let payload = if path.is_empty() {
                    Payload::Derived
                } else {
                    Payload::File(resolve(path))
                };
                (
                    payload,
                    Provenance::Rotated {
                        parent: parent.to_string(),
                        angle_deg: angle,
                    },
                )
            }
            other => return Err(parse_err(line, &format!("unknown kind {other:?}"))),
        };
        records.push(SampleRecord {
            sample_id: sample_id.to_string(),
            label: SampleLabel::new(0, species_name),
            payload,
            provenance,
        });
    }
    if records.is_empty() {
        return Err(parse_err(1, "manifest has no records"));
    }
    DatasetManifest::from_records(records)
}

fn parse_err(line: u64, message: &str) -> DatasetError {
    DatasetError::Parse {
        line,
        message: message.to_string(),
    }
}

fn csv_error(e: csv::Error, fallback_line: u64) -> DatasetError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    DatasetError::Parse {
        line,
        message: e.to_string(),
    }
}

/// Renders a manifest as CSV. Paths under `base` are written relative to it.
pub fn manifest_to_csv(m: &DatasetManifest, base: &Path) -> String {
    let mut out = MANIFEST_HEADER.join(",");
    out.push('\n');
    for r in m.records() {
        let path = match &r.payload {
            Payload::File(p) => p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/"),
            Payload::Derived => String::new(),
        };
        let (kind, parent, angle) = match &r.provenance {
            Provenance::Original => ("original", String::new(), String::new()),
            Provenance::GanIngested => ("gan", String::new(), String::new()),
            Provenance::Rotated { parent, angle_deg } => ("rotated", parent.clone(), format!("{angle_deg}")),
            Provenance::SmoteSynthetic => continue,
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.sample_id, r.label.species_name, kind, path, parent, angle
        ));
    }
    out
}

/// Writes a manifest CSV; paths are made relative to the file's directory.
pub fn write_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> std::io::Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    std::fs::write(path, manifest_to_csv(m, base))
}

/// Drops every species with fewer than `min_per_class` original records.
pub fn filter_min_count(m: &DatasetManifest, min_per_class: usize) -> Result<DatasetManifest, DatasetError> {
    if min_per_class == 0 {
        return Err(DatasetError::FoldParams("min_per_class must be at least 1".into()));
    }
    let counts = m.class_counts();
    let keep: HashSet<usize> = (0..m.n_species()).filter(|&s| counts[s] >= min_per_class).collect();
    if keep.len() < 2 {
        return Err(DatasetError::Unusable { remaining: keep.len() });
    }
    m.retain(|r| keep.contains(&r.label.species_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldOptions {
    pub repeats: usize,
    pub k: usize,
    pub seed: u64,
    /// Deal GAN-ingested records into folds instead of keeping them in every
    /// training set. They are still never evaluated.
    pub gan_in_folds: bool,
}

impl Default for FoldOptions {
    fn default() -> Self {
        Self {
            repeats: 10,
            k: 2,
            seed: 0,
            gan_in_folds: false,
        }
    }
}

/// Stratified fold assignments for every repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub repeats: usize,
    pub k: usize,
    pub seed: u64,
    pub gan_in_folds: bool,
    /// `assignments[repeat][sample_id] = fold`
    pub assignments: Vec<BTreeMap<String, usize>>,
}

/// Record indices (into the manifest) of one train/test evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Plans `repeats` stratified `k`-fold partitions.
///
/// Per repeat and species, eligible records are shuffled with one seeded
/// generator (consumed in repeat, then species, order) and dealt round-robin
/// into folds `0, 1, ..., k-1, 0, ...`. Originals and GAN records form separate
/// strata.
pub fn plan_folds(m: &DatasetManifest, opts: FoldOptions) -> Result<FoldPlan, DatasetError> {
    if opts.k < 2 {
        return Err(DatasetError::FoldParams(format!("k must be at least 2, got {}", opts.k)));
    }
    if opts.repeats == 0 {
        return Err(DatasetError::FoldParams("repeats must be at least 1".into()));
    }
    let n_species = m.n_species();
    let mut strata: Vec<Vec<Vec<&str>>> = vec![vec![Vec::new(); n_species]; 2];
    for r in m.records() {
        match r.provenance {
            Provenance::Original => strata[0][r.label.species_id].push(&r.sample_id),
            Provenance::GanIngested if opts.gan_in_folds => strata[1][r.label.species_id].push(&r.sample_id),
            _ => {}
        }
    }
    for (s, ids) in strata[0].iter().enumerate() {
        if ids.len() < opts.k {
            return Err(DatasetError::Stratification {
                species: m.species()[s].clone(),
                count: ids.len(),
                k: opts.k,
            });
        }
    }

    let mut rng = Rng::seed_from(opts.seed);
    let mut assignments = Vec::with_capacity(opts.repeats);
    for _ in 0..opts.repeats {
        let mut map = BTreeMap::new();
        for stratum in &strata {
            for ids in stratum {
                let mut order = ids.clone();
                rng.shuffle(&mut order);
                for (i, id) in order.into_iter().enumerate() {
                    map.insert(id.to_string(), i % opts.k);
                }
            }
        }
        assignments.push(map);
    }
    Ok(FoldPlan {
        repeats: opts.repeats,
        k: opts.k,
        seed: opts.seed,
        gan_in_folds: opts.gan_in_folds,
        assignments,
    })
}

impl FoldPlan {
    pub fn n_splits(&self) -> usize {
        self.repeats * self.k
    }

    pub fn fold_of(&self, repeat: usize, sample_id: &str) -> Option<usize> {
        self.assignments[repeat].get(sample_id).copied()
    }

    /// Train/test record indices for one evaluation.
    ///
    /// Test: originals assigned to `fold`. Train: originals of other folds,
    /// rotations whose parent trains, and GAN records that are either
    /// unassigned or assigned to another fold.
    pub fn split(&self, m: &DatasetManifest, repeat: usize, fold: usize) -> Split {
        let folds = &self.assignments[repeat];
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, r) in m.records().iter().enumerate() {
            match &r.provenance {
                Provenance::Original => match folds.get(&r.sample_id) {
                    Some(&f) if f == fold => test.push(i),
                    Some(_) => train.push(i),
                    None => {}
                },
                Provenance::Rotated { parent, .. } => {
                    if folds.get(parent).is_some_and(|&f| f != fold) {
                        train.push(i);
                    }
                }
                Provenance::GanIngested => match folds.get(&r.sample_id) {
                    Some(&f) if f == fold => {}
                    _ => train.push(i),
                },
                Provenance::SmoteSynthetic => {}
            }
        }
        Split {
            repeat,
            fold,
            train,
            test,
        }
    }

    /// All `repeats * k` splits, repeat-major.
    pub fn splits(&self, m: &DatasetManifest) -> Vec<Split> {
        (0..self.repeats)
            .flat_map(|r| (0..self.k).map(move |f| (r, f)))
            .map(|(r, f)| self.split(m, r, f))
            .collect()
    }
}
