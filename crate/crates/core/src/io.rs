//! On-disk formats.
//!
//! - `*.seq.jsonl`: one [`SequenceRecord`] per line.
//! - `*.gal.jsonl`: one [`GalleryItem`] per line.
//! - `*.proto.jsonl`: one [`Prototype`] per line (synthetic oracle sidecar).
//! - `*.ckpt`: binary weights. Layout, all integers little-endian:
//!
//! ```text
//! "SEAMCKPT"            8 bytes
//! version               u32 (= 1)
//! section count         u32
//! per section, sorted by name:
//!   name length         u32
//!   name                UTF-8 bytes
//!   rows, cols          u32, u32
//!   values              rows*cols f32, row-major
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor2};
use crate::types::{GalleryItem, Ranking, SequenceRecord};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEAMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hidden latent vector of a synthetic gallery item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub item_id: String,
    pub prototype: Vec<f64>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, offset: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        offset,
        message: message.into(),
    }
}

/// Parses one JSON value per non-blank line. Each value comes back with its
/// 1-based line number and the byte offset of the line start.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, u64, T)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let start = offset;
        offset += line.len() as u64;
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if trimmed.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(trimmed) {
            Ok(v) => out.push((i + 1, start, v)),
            Err(e) => {
                let col = e.column().saturating_sub(1) as u64;
                return Err(parse_error(path, i + 1, start + col, format!("record {}: {e}", i + 1)));
            }
        }
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads and validates a `.seq.jsonl` file. All detections must share one
/// feature dimension.
pub fn load_dataset(path: &Path) -> Result<Vec<SequenceRecord>> {
    let rows: Vec<(usize, u64, SequenceRecord)> = read_jsonl(path)?;
    let mut dim = None;
    let mut out = Vec::with_capacity(rows.len());
    for (line, offset, rec) in rows {
        if dim.is_none() {
            dim = rec.frames.iter().flatten().next().map(|d| d.conv_feature.len());
        }
        rec.validate(dim).map_err(|e| {
            parse_error(path, line, offset, format!("sequence {}: {e}", rec.sequence_id))
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, records: &[SequenceRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Loads a `.gal.jsonl` file; item ids must be unique and feature dimensions
/// consistent. An empty file is an empty gallery.
pub fn load_gallery(path: &Path) -> Result<Vec<GalleryItem>> {
    let rows: Vec<(usize, u64, GalleryItem)> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut dim = None;
    let mut out = Vec::with_capacity(rows.len());
    for (line, offset, item) in rows {
        let d = *dim.get_or_insert(item.conv_feature.len());
        if item.conv_feature.len() != d {
            return Err(parse_error(
                path,
                line,
                offset,
                format!("item {}: feature dimension {} (expected {d})", item.item_id, item.conv_feature.len()),
            ));
        }
        if item.conv_feature.iter().any(|v| !v.is_finite()) {
            return Err(parse_error(path, line, offset, format!("item {}: non-finite feature", item.item_id)));
        }
        if !seen.insert(item.item_id.clone()) {
            return Err(parse_error(path, line, offset, format!("duplicate item id {}", item.item_id)));
        }
        out.push(item);
    }
    Ok(out)
}

pub fn save_gallery(path: &Path, items: &[GalleryItem]) -> Result<()> {
    write_jsonl(path, items)
}

/// Every paired item id of every record must exist in the gallery.
pub fn check_pairings(records: &[SequenceRecord], gallery: &[GalleryItem]) -> Result<()> {
    let ids: HashSet<&str> = gallery.iter().map(|g| g.item_id.as_str()).collect();
    for rec in records {
        if let Some(missing) = rec.paired_item_ids.iter().find(|id| !ids.contains(id.as_str())) {
            return Err(Error::invalid(format!(
                "sequence {} is paired with unknown item {missing}",
                rec.sequence_id
            )));
        }
    }
    Ok(())
}

pub fn load_prototypes(path: &Path) -> Result<Vec<Prototype>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, _, p)| p).collect())
}

pub fn save_prototypes(path: &Path, protos: &[Prototype]) -> Result<()> {
    write_jsonl(path, protos)
}

pub fn save_rankings(path: &Path, rankings: &[Ranking]) -> Result<()> {
    write_jsonl(path, rankings)
}

pub fn load_rankings(path: &Path) -> Result<Vec<Ranking>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, _, r)| r).collect())
}

/// Serialises parameters in the checkpoint layout. Values are narrowed to
/// `f32`.
pub fn encode_checkpoint(params: &ParamStore) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + params.num_values() * 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for v in p.value.data() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    label: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                path: self.label.to_string(),
                line: 0,
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_checkpoint(bytes: &[u8], label: &str) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0, label };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            path: label.to_string(),
            line: 0,
            offset: 0,
            message: "not a checkpoint (bad magic)".into(),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: label.to_string(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = r.u32("section count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let at = r.pos as u64;
        let name_len = r.u32("section name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "section name")?).map_err(|_| Error::Parse {
            path: label.to_string(),
            line: 0,
            offset: at,
            message: "section name is not UTF-8".into(),
        })?;
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let raw = r.take(rows * cols * 4, name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t = Tensor2::from_vec(rows, cols, data).map_err(|e| Error::Parse {
            path: label.to_string(),
            line: 0,
            offset: at,
            message: format!("section {name}: {e}"),
        })?;
        store.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            path: label.to_string(),
            line: 0,
            offset: r.pos as u64,
            message: "trailing bytes after last section".into(),
        });
    }
    Ok(store)
}

pub fn save_checkpoint(path: &Path, params: &ParamStore) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BBox, ClothingClass, Detection, Tracklet};
    use proptest::prelude::*;

    fn det(frame: usize, k: usize, feat: Vec<f32>) -> Detection {
        Detection {
            frame_index: frame,
            det_index: k,
            bbox: BBox::new(1.5, 2.0, 30.25, 40.0).unwrap(),
            confidence: 0.8125,
            conv_feature: feat,
        }
    }

    fn record() -> SequenceRecord {
        let d0 = det(0, 0, vec![0.1, -0.2, 3.5e-8]);
        let d2 = det(2, 1, vec![1.0, 0.333_333_34, -7.25]);
        SequenceRecord {
            sequence_id: "seq-1".into(),
            paired_item_ids: vec!["item-3".into()],
            frames: vec![vec![d0.clone()], vec![], vec![det(2, 0, vec![0.0; 3]), d2.clone()]],
            gt_tracklet: Some(Tracklet::new(0, vec![d0, d2], 1).unwrap()),
        }
    }

    #[test]
    fn dataset_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.seq.jsonl");
        save_dataset(&p, &[record(), record()]).unwrap();
        let loaded = load_dataset(&p).unwrap();
        assert_eq!(loaded, vec![record(), record()]);
        let q = dir.path().join("b.seq.jsonl");
        save_dataset(&q, &loaded).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
    }

    #[test]
    fn empty_gallery_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.gal.jsonl");
        fs::write(&p, "").unwrap();
        assert!(load_gallery(&p).unwrap().is_empty());
    }

    #[test]
    fn truncated_dataset_reports_line_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.seq.jsonl");
        save_dataset(&p, &[record(), record()]).unwrap();
        let bytes = fs::read(&p).unwrap();
        let first_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        let cut = first_len + 40;
        fs::write(&p, &bytes[..cut]).unwrap();
        match load_dataset(&p) {
            Err(Error::Parse { line, offset, .. }) => {
                assert_eq!(line, 2);
                assert!(offset >= first_len as u64 && offset <= cut as u64, "offset {offset}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_record_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.seq.jsonl");
        let mut bad = record();
        bad.sequence_id = "broken".into();
        bad.frames[0][0].confidence = 1.5;
        save_dataset(&p, &[record(), bad]).unwrap();
        let err = load_dataset(&p).unwrap_err().to_string();
        assert!(err.contains("broken") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn gallery_rejects_duplicates_and_checks_pairings() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.gal.jsonl");
        let item = GalleryItem {
            item_id: "item-3".into(),
            class_label: ClothingClass::Vest,
            conv_feature: vec![1.0, 2.0, 3.0],
        };
        save_gallery(&p, &[item.clone(), item.clone()]).unwrap();
        assert!(load_gallery(&p).is_err());
        save_gallery(&p, &[item.clone()]).unwrap();
        let g = load_gallery(&p).unwrap();
        assert!(check_pairings(&[record()], &g).is_ok());
        let mut r = record();
        r.paired_item_ids.push("nope".into());
        assert!(check_pairings(&[r], &g).is_err());
    }

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("sf.embed.W", Tensor2::from_vec(2, 3, vec![0.5, -1.25, 3.0, 0.125, 0.0, 7.0]).unwrap());
        s.insert("sf.match.b", Tensor2::scalar(-0.75));
        s
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &store()).unwrap();
        let loaded = load_checkpoint(&p).unwrap();
        // all values are exactly representable in f32
        assert_eq!(loaded, store());
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"SEAMCKPT");

        let cut = bytes.len() - 3;
        match decode_checkpoint(&bytes[..cut], "m") {
            Err(Error::Parse { offset, message, .. }) => {
                assert!(offset as usize <= cut);
                assert!(message.contains("truncated"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let mut v2 = bytes.clone();
        v2[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_checkpoint(&v2, "m"), Err(Error::Version { found: 2, .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, "m").is_err());
    }

    proptest! {
        #[test]
        fn rankings_round_trip_every_f64(scores in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..20)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.rank.jsonl");
            let r = Ranking::from_scores("q", scores.iter().enumerate().map(|(i, &s)| (format!("i{i}"), s)).collect());
            save_rankings(&p, std::slice::from_ref(&r)).unwrap();
            prop_assert_eq!(load_rankings(&p).unwrap(), vec![r]);
        }

        #[test]
        fn checkpoint_round_trips_f32_values(
            vals in proptest::collection::vec(-1e6f32..1e6f32, 1..48),
            cols in 1usize..5,
        ) {
            let rows = vals.len() / cols;
            prop_assume!(rows > 0);
            let data: Vec<f64> = vals[..rows * cols].iter().map(|&v| v as f64).collect();
            let mut s = ParamStore::new();
            s.insert("mf.attn.w", Tensor2::from_vec(rows, cols, data).unwrap());
            s.insert("mf.attn.b", Tensor2::scalar(vals[0] as f64));
            let bytes = encode_checkpoint(&s);
            let back = decode_checkpoint(&bytes, "p").unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(encode_checkpoint(&back), bytes);
        }

        #[test]
        fn gallery_round_trips(feats in proptest::collection::vec(proptest::collection::vec(-1e3f32..1e3f32, 4), 0..6)) {
            let items: Vec<GalleryItem> = feats
                .into_iter()
                .enumerate()
                .map(|(i, f)| GalleryItem {
                    item_id: format!("g{i}"),
                    class_label: ClothingClass::ALL[i % 13],
                    conv_feature: f,
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("g.gal.jsonl");
            save_gallery(&p, &items).unwrap();
            prop_assert_eq!(load_gallery(&p).unwrap(), items);
        }
    }
}
