//! On-disk formats: embeddings (binary and CSV), annotations, pairs,
//! annotator validation tables and projection coordinates.
//!
//! Row numbers in errors count data rows from 1, header excluded.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use fairaudit_core::{AgeBin, EmbeddingSet, Gender, Race, SampleAnnotation, VerificationPair};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FAEM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Binary,
    Csv,
}

impl EmbeddingFormat {
    /// `.csv` means CSV, anything else the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EmbeddingFormat::Csv,
            _ => EmbeddingFormat::Binary,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_embeddings(path: &Path, format: Option<EmbeddingFormat>) -> Result<EmbeddingSet> {
    let bytes = read(path)?;
    match format.unwrap_or_else(|| EmbeddingFormat::from_path(path)) {
        EmbeddingFormat::Binary => decode_embeddings_binary(&bytes, path),
        EmbeddingFormat::Csv => decode_embeddings_csv(&bytes, path),
    }
}

pub fn write_embeddings(path: &Path, e: &EmbeddingSet, format: EmbeddingFormat) -> Result<()> {
    let bytes = match format {
        EmbeddingFormat::Binary => encode_embeddings_binary(e).map_err(|m| Error::format(path, None, m))?,
        EmbeddingFormat::Csv => encode_embeddings_csv(e).into_bytes(),
    };
    write_atomic(path, &bytes)
}

/// Values are narrowed to `f32`; a value that overflows `f32` is refused.
pub fn encode_embeddings_binary(e: &EmbeddingSet) -> std::result::Result<Vec<u8>, String> {
    let count = u32::try_from(e.len()).map_err(|_| "too many rows for the binary format".to_string())?;
    let dim = u32::try_from(e.dim()).map_err(|_| "dimension too large for the binary format".to_string())?;
    let mut out = Vec::with_capacity(16 + e.len() * (8 + 4 * e.dim()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for (i, (id, row)) in e.ids().iter().zip(e.rows()).enumerate() {
        let len = u16::try_from(id.len()).map_err(|_| format!("row {}: id longer than 65535 bytes", i + 1))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for &v in row {
            let f = v as f32;
            if !f.is_finite() {
                return Err(format!("row {}: value {v} does not fit in f32", i + 1));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_embeddings_binary(bytes: &[u8], path: &Path) -> Result<EmbeddingSet> {
    let header = |m: &str| Error::format(path, None, format!("malformed header: {m}"));
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4) != Some(MAGIC.as_slice()) {
        return Err(header("missing FAEM magic"));
    }
    let version = c.u32().ok_or_else(|| header("truncated"))?;
    if version != VERSION {
        return Err(header(&format!("unsupported version {version}")));
    }
    let count = c.u32().ok_or_else(|| header("truncated"))? as usize;
    let dim = c.u32().ok_or_else(|| header("truncated"))? as usize;
    if dim == 0 {
        return Err(header("dimension is zero"));
    }
    // Every record needs at least 2 + 4·dim bytes; reject absurd counts before allocating.
    let min_record = 2 + 4 * dim;
    if count.saturating_mul(min_record) > bytes.len() - c.pos {
        return Err(header(&format!("count {count} exceeds the file size")));
    }
    let mut ids = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    let mut seen = HashSet::with_capacity(count);
    for row in 1..=count {
        let truncated = || Error::format(path, Some(row), "truncated record");
        let len = c.u16().ok_or_else(truncated)? as usize;
        let raw = c.take(len).ok_or_else(truncated)?;
        let id = std::str::from_utf8(raw)
            .map_err(|_| Error::format(path, Some(row), "id is not valid UTF-8"))?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::format(path, Some(row), format!("duplicate sample id `{id}`")));
        }
        let payload = c.take(4 * dim).ok_or_else(truncated)?;
        for (column, b) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(Error::format(path, Some(row), format!("non-finite value in column {column}")));
            }
            data.push(v as f64);
        }
        ids.push(id);
    }
    if c.pos != bytes.len() {
        return Err(Error::format(path, None, format!("{} trailing bytes after the last record", bytes.len() - c.pos)));
    }
    EmbeddingSet::new(dim, ids, data).map_err(|e| core_format(path, e))
}

fn core_format(path: &Path, e: fairaudit_core::Error) -> Error {
    use fairaudit_core::Error as E;
    let row = match &e {
        E::DimensionMismatch { row, .. } | E::DuplicateId { row, .. } | E::NonFinite { row, .. } => Some(row + 1),
        _ => None,
    };
    let message = match e {
        E::DimensionMismatch { expected, found, .. } => {
            format!("dimension mismatch: expected {expected} values, found {found}")
        }
        E::DuplicateId { id, .. } => format!("duplicate sample id `{id}`"),
        E::NonFinite { column, .. } => format!("non-finite value in column {column}"),
        other => other.to_string(),
    };
    Error::format(path, row, message)
}

fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes)
}

fn csv_error(path: &Path, row: Option<usize>, e: csv::Error) -> Error {
    Error::format(path, row, format!("unreadable CSV: {e}"))
}

fn header_of(path: &Path, r: &mut csv::Reader<&[u8]>) -> Result<Vec<String>> {
    let h = r.headers().map_err(|e| csv_error(path, None, e))?;
    Ok(h.iter().map(str::to_string).collect())
}

fn expect_header(path: &Path, r: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let h = header_of(path, r)?;
    if h.len() != expected.len() || h.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::format(
            path,
            None,
            format!("malformed header: expected `{}`, found `{}`", expected.join(","), h.join(",")),
        ));
    }
    Ok(())
}

fn records<'a, 'b: 'a>(path: &'a Path, r: &'a mut csv::Reader<&'b [u8]>) -> impl Iterator<Item = Result<(usize, csv::StringRecord)>> + use<'a, 'b> {
    r.records()
        .enumerate()
        .map(move |(k, rec)| rec.map(|rec| (k + 1, rec)).map_err(|e| csv_error(path, Some(k + 1), e)))
}

fn parse_f64(path: &Path, row: usize, field: &str, what: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::format(path, Some(row), format!("{what}: `{field}` is not a number")))
}

pub fn decode_embeddings_csv(bytes: &[u8], path: &Path) -> Result<EmbeddingSet> {
    let mut r = csv_reader(bytes);
    let h = header_of(path, &mut r)?;
    let well_formed = h.len() >= 2 && h[0] == "sample_id" && h[1..].iter().enumerate().all(|(k, name)| *name == format!("v{k}"));
    if !well_formed {
        return Err(Error::format(path, None, "malformed header: expected `sample_id,v0,...,v{dim-1}`"));
    }
    let dim = h.len() - 1;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut seen = HashSet::new();
    for item in records(path, &mut r) {
        let (row, rec) = item?;
        if rec.len() != dim + 1 {
            return Err(Error::format(
                path,
                Some(row),
                format!("dimension mismatch: expected {dim} values, found {}", rec.len().saturating_sub(1)),
            ));
        }
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::format(path, Some(row), format!("duplicate sample id `{id}`")));
        }
        for column in 0..dim {
            let v = parse_f64(path, row, &rec[column + 1], &format!("v{column}"))?;
            if !v.is_finite() {
                return Err(Error::format(path, Some(row), format!("non-finite value in column {column}")));
            }
            data.push(v);
        }
        ids.push(id);
    }
    EmbeddingSet::new(dim, ids, data).map_err(|e| core_format(path, e))
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV built from UTF-8")
}

/// Floats use the shortest representation that parses back to the same bits.
pub fn encode_embeddings_csv(e: &EmbeddingSet) -> String {
    let mut w = csv_writer();
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..e.dim()).map(|k| format!("v{k}")));
    w.write_record(&header).expect("in-memory write");
    for (id, row) in e.ids().iter().zip(e.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    finish(w)
}

pub const ANNOTATION_HEADER: [&str; 5] = ["sample_id", "identity_id", "race", "gender", "age_bin"];

pub fn load_annotations(path: &Path) -> Result<Vec<SampleAnnotation>> {
    decode_annotations(&read(path)?, path)
}

pub fn decode_annotations(bytes: &[u8], path: &Path) -> Result<Vec<SampleAnnotation>> {
    let mut r = csv_reader(bytes);
    expect_header(path, &mut r, &ANNOTATION_HEADER)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for item in records(path, &mut r) {
        let (row, rec) = item?;
        if rec.len() != 5 {
            return Err(Error::format(path, Some(row), format!("expected 5 fields, found {}", rec.len())));
        }
        let bad = |e: fairaudit_core::Error| Error::format(path, Some(row), e.to_string());
        let race: Race = rec[2].parse().map_err(bad)?;
        let gender: Gender = rec[3].parse().map_err(bad)?;
        let bin: u32 = rec[4]
            .parse()
            .map_err(|_| Error::format(path, Some(row), format!("age_bin `{}` is not an integer", &rec[4])))?;
        let age_bin = AgeBin::new(bin).map_err(bad)?;
        if !seen.insert(rec[0].to_string()) {
            return Err(Error::format(path, Some(row), format!("duplicate sample id `{}`", &rec[0])));
        }
        out.push(SampleAnnotation {
            sample_id: rec[0].to_string(),
            identity_id: rec[1].to_string(),
            race,
            gender,
            age_bin,
        });
    }
    Ok(out)
}

pub fn encode_annotations(annotations: &[SampleAnnotation]) -> String {
    let mut w = csv_writer();
    w.write_record(ANNOTATION_HEADER).expect("in-memory write");
    for a in annotations {
        w.write_record([
            a.sample_id.as_str(),
            a.identity_id.as_str(),
            a.race.as_str(),
            a.gender.as_str(),
            &a.age_bin.index().to_string(),
        ])
        .expect("in-memory write");
    }
    finish(w)
}

pub const PAIR_HEADER: [&str; 4] = ["sample_a", "sample_b", "genuine", "fold"];

/// Parses a pair list. Consistency with a cohort is checked separately by
/// `protocol::validate_pairs`.
pub fn load_pairs(path: &Path) -> Result<Vec<VerificationPair>> {
    decode_pairs(&read(path)?, path)
}

pub fn decode_pairs(bytes: &[u8], path: &Path) -> Result<Vec<VerificationPair>> {
    let mut r = csv_reader(bytes);
    expect_header(path, &mut r, &PAIR_HEADER)?;
    let mut out = Vec::new();
    for item in records(path, &mut r) {
        let (row, rec) = item?;
        if rec.len() != 4 {
            return Err(Error::format(path, Some(row), format!("expected 4 fields, found {}", rec.len())));
        }
        let genuine = match &rec[2] {
            "1" => true,
            "0" => false,
            other => return Err(Error::format(path, Some(row), format!("genuine must be 0 or 1, found `{other}`"))),
        };
        let fold: u32 = rec[3]
            .parse()
            .map_err(|_| Error::format(path, Some(row), format!("fold `{}` is not a non-negative integer", &rec[3])))?;
        out.push(VerificationPair {
            a: rec[0].to_string(),
            b: rec[1].to_string(),
            genuine,
            fold,
        });
    }
    Ok(out)
}

pub fn encode_pairs(pairs: &[VerificationPair]) -> String {
    let mut w = csv_writer();
    w.write_record(PAIR_HEADER).expect("in-memory write");
    for p in pairs {
        w.write_record([p.a.as_str(), p.b.as_str(), if p.genuine { "1" } else { "0" }, &p.fold.to_string()])
            .expect("in-memory write");
    }
    finish(w)
}

/// Columns of an annotator validation file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotatorTable {
    pub sample_ids: Vec<String>,
    pub groups: Vec<String>,
    pub truth: Vec<String>,
    pub predicted: Vec<String>,
}

pub fn load_annotator_table(path: &Path) -> Result<AnnotatorTable> {
    let bytes = read(path)?;
    let mut r = csv_reader(&bytes);
    expect_header(path, &mut r, &["sample_id", "group", "true_label", "pred_label"])?;
    let mut t = AnnotatorTable::default();
    for item in records(path, &mut r) {
        let (row, rec) = item?;
        if rec.len() != 4 {
            return Err(Error::format(path, Some(row), format!("expected 4 fields, found {}", rec.len())));
        }
        t.sample_ids.push(rec[0].to_string());
        t.groups.push(rec[1].to_string());
        t.truth.push(rec[2].to_string());
        t.predicted.push(rec[3].to_string());
    }
    Ok(t)
}

/// `sample_id,x,y,<attribute>` with one label per row.
pub fn encode_coordinates(ids: &[String], coords: &[[f64; 2]], attribute: &str, labels: &[String]) -> String {
    let mut w = csv_writer();
    w.write_record(["sample_id", "x", "y", attribute]).expect("in-memory write");
    for ((id, c), label) in ids.iter().zip(coords).zip(labels) {
        w.write_record([id.as_str(), &c[0].to_string(), &c[1].to_string(), label.as_str()])
            .expect("in-memory write");
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn minimal_binary_file() {
        let mut b = Vec::new();
        b.extend_from_slice(b"FAEM");
        for v in [1u32, 2, 3] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for (id, row) in [("a", [1f32, 0., 0.]), ("b", [0., 1., 0.])] {
            b.extend_from_slice(&(id.len() as u16).to_le_bytes());
            b.extend_from_slice(id.as_bytes());
            for v in row {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let e = decode_embeddings_binary(&b, p()).unwrap();
        assert_eq!((e.len(), e.dim()), (2, 3));
        assert_eq!(e.row(1), [0.0, 1.0, 0.0]);
        assert!(decode_embeddings_binary(&b[..b.len() - 1], p()).is_err());
        b[0] = b'X';
        assert!(decode_embeddings_binary(&b, p()).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn ragged_csv_names_row_two() {
        let text = "sample_id,v0,v1\na,1,2\nb,3\n";
        let err = decode_embeddings_csv(text.as_bytes(), p()).unwrap_err();
        match err {
            Error::Format { row, message, .. } => {
                assert_eq!(row, Some(2));
                assert!(message.contains("dimension mismatch"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn pair_flags_are_strict() {
        let ok = "sample_a,sample_b,genuine,fold\nx,y,1,0\n";
        assert_eq!(decode_pairs(ok.as_bytes(), p()).unwrap().len(), 1);
        let bad = "sample_a,sample_b,genuine,fold\nx,y,2,0\n";
        assert!(decode_pairs(bad.as_bytes(), p()).is_err());
        let neg = "sample_a,sample_b,genuine,fold\nx,y,0,-1\n";
        assert!(decode_pairs(neg.as_bytes(), p()).is_err());
    }
}
