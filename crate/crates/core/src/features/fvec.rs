//! `.fvec` binary feature tables and the CSV fallback.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! "FVEC1\n"                  6-byte magic
//! u32 dims, u32 rows
//! per row:
//!   u16 id_len,    id_len bytes UTF-8 sample_id
//!   u16 label_len, label_len bytes UTF-8 species_name
//!   dims x f64 values
//! ```
//!
//! CSV fallback: `sample_id,species_name,v0,...,v{dims-1}` with a header row;
//! values use the shortest representation that round-trips exactly.
//!
//! Species ids are assigned on read in first-appearance order.

use std::collections::HashMap;
use std::path::Path;

use super::{FeatureError, FeatureTable, FeatureVector};
use crate::dataset::SampleLabel;

pub const FVEC_MAGIC: &[u8; 6] = b"FVEC1\n";

pub fn write_feature_table(t: &FeatureTable, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(14 + t.len() * (t.dims() * 8 + 32));
    out.extend_from_slice(FVEC_MAGIC);
    out.extend_from_slice(&(t.dims() as u32).to_le_bytes());
    out.extend_from_slice(&(t.len() as u32).to_le_bytes());
    for row in t.rows() {
        for text in [&row.sample_id, &row.label.species_name] {
            let len = u16::try_from(text.len()).map_err(|_| FeatureError::Table(format!("string too long: {text:?}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        for v in &row.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FeatureError> {
        if self.bytes.len() - self.pos < n {
            return Err(FeatureError::Format {
                path: self.path.to_path_buf(),
                message: format!("truncated while reading {what} at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, FeatureError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String, FeatureError> {
        let len = u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()) as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| FeatureError::Format {
            path: self.path.to_path_buf(),
            message: format!("{what} is not valid UTF-8"),
        })
    }
}

pub fn read_feature_table(path: impl AsRef<Path>) -> Result<FeatureTable, FeatureError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    if cur.take(FVEC_MAGIC.len(), "magic")? != FVEC_MAGIC {
        return Err(FeatureError::Format {
            path: path.to_path_buf(),
            message: "bad magic".into(),
        });
    }
    let dims = cur.u32("dims")? as usize;
    let n_rows = cur.u32("row count")? as usize;
    let mut labels = LabelAssigner::default();
    let mut rows = Vec::with_capacity(n_rows.min(1 << 20));
    for r in 0..n_rows {
        let sample_id = cur.string("sample_id")?;
        let species = cur.string("species_name")?;
        let raw = cur.take(dims * 8, "values")?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(FeatureError::Data {
                path: path.to_path_buf(),
                message: format!("row {r} ({sample_id:?}) holds non-finite value {v}"),
            });
        }
        rows.push(FeatureVector::new(sample_id, labels.label(&species), values));
    }
    if cur.pos != bytes.len() {
        return Err(FeatureError::Format {
            path: path.to_path_buf(),
            message: format!(
                "{} trailing bytes: header dims/rows ({dims}, {n_rows}) do not match the payload",
                bytes.len() - cur.pos
            ),
        });
    }
    FeatureTable::new(dims, rows).map_err(|e| FeatureError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Default)]
struct LabelAssigner {
    ids: HashMap<String, usize>,
}

impl LabelAssigner {
    fn label(&mut self, species: &str) -> SampleLabel {
        let next = self.ids.len();
        let id = *self.ids.entry(species.to_string()).or_insert(next);
        SampleLabel::new(id, species)
    }
}

pub fn write_feature_csv(t: &FeatureTable, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let io_err = |e: csv::Error| FeatureError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    let mut header = vec!["sample_id".to_string(), "species_name".to_string()];
    header.extend((0..t.dims()).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(io_err)?;
    for row in t.rows() {
        let mut rec = vec![row.sample_id.clone(), row.label.species_name.clone()];
        rec.extend(row.values.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<FeatureTable, FeatureError> {
    let path = path.as_ref();
    let fmt_err = |message: String| FeatureError::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| fmt_err(e.to_string()))?;
    let header = reader.headers().map_err(|e| fmt_err(e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "species_name" {
        return Err(fmt_err("expected header sample_id,species_name,v0,...".into()));
    }
    let dims = header.len() - 2;
    let mut labels = LabelAssigner::default();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| fmt_err(e.to_string()))?;
        if rec.len() != dims + 2 {
            return Err(fmt_err(format!("row with {} values, header declares {dims}", rec.len() - 2)));
        }
        let mut values = Vec::with_capacity(dims);
        for field in rec.iter().skip(2) {
            let v: f64 = field.parse().map_err(|_| fmt_err(format!("invalid number {field:?}")))?;
            if !v.is_finite() {
                return Err(FeatureError::Data {
                    path: path.to_path_buf(),
                    message: format!("non-finite value in row {:?}", &rec[0]),
                });
            }
            values.push(v);
        }
        rows.push(FeatureVector::new(&rec[0], labels.label(&rec[1]), values));
    }
    FeatureTable::new(dims, rows).map_err(|e| fmt_err(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(dims: usize, n: usize) -> FeatureTable {
        let rows = (0..n)
            .map(|i| {
                let label = SampleLabel::new(i % 3, format!("sp{}", i % 3));
                let values = (0..dims).map(|d| ((i * 31 + d) as f64).sin() * 1e3).collect();
                FeatureVector::new(format!("id{i}"), label, values)
            })
            .collect();
        FeatureTable::new(dims, rows).unwrap()
    }

    #[test]
    fn header_reports_dims_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.fvec");
        write_feature_table(&table(512, 112), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..6], FVEC_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 512);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 112);
        let back = read_feature_table(&p).unwrap();
        assert_eq!((back.dims(), back.len()), (512, 112));
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.fvec");
        write_feature_table(&table(4, 3), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(read_feature_table(&p), Err(FeatureError::Format { .. })));
        std::fs::write(&p, &bytes[..3]).unwrap();
        assert!(matches!(read_feature_table(&p), Err(FeatureError::Format { .. })));
    }

    #[test]
    fn dims_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.fvec");
        write_feature_table(&table(4, 3), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[6..10].copy_from_slice(&3u32.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_feature_table(&p), Err(FeatureError::Format { .. })));
    }

    #[test]
    fn non_finite_value_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.fvec");
        write_feature_table(&table(2, 1), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_feature_table(&p), Err(FeatureError::Data { .. })));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let t = table(5, 7);
        write_feature_csv(&t, &p).unwrap();
        assert_eq!(read_feature_csv(&p).unwrap(), t);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn binary_round_trip_is_bit_exact(
            dims in 1usize..6,
            raw in prop::collection::vec((any::<u64>(), 0usize..4), 1..8),
        ) {
            let rows: Vec<FeatureVector> = raw
                .iter()
                .enumerate()
                .map(|(i, &(bits, sp))| {
                    let values = (0..dims)
                        .map(|d| {
                            let v = f64::from_bits(bits.rotate_left(d as u32 * 7));
                            if v.is_finite() { v } else { d as f64 }
                        })
                        .collect();
                    FeatureVector::new(format!("s{i}"), SampleLabel::new(0, format!("é{sp}")), values)
                })
                .collect();
            // ids follow first appearance
            let mut assigner = LabelAssigner::default();
            let rows: Vec<FeatureVector> = rows
                .into_iter()
                .map(|mut r| { r.label = assigner.label(&r.label.species_name); r })
                .collect();
            let t = FeatureTable::new(dims, rows).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("t.fvec");
            write_feature_table(&t, &p).unwrap();
            let back = read_feature_table(&p).unwrap();
            prop_assert_eq!(back.len(), t.len());
            for (a, b) in back.rows().iter().zip(t.rows()) {
                prop_assert_eq!(&a.sample_id, &b.sample_id);
                prop_assert_eq!(&a.label, &b.label);
                let abits: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
                let bbits: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(abits, bbits);
            }
        }
    }
}
