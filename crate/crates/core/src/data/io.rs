//! On-disk formats.
//!
//! `RPFM` (features) and `RPCM` (concepts) are little-endian with a 4-byte magic
//! and a `u32` version. Features are also readable from headerless CSV; concepts
//! from a CSV with a header row of concept names plus a JSON sidecar holding the
//! group table.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{validate_groups, ConceptGroup, ConceptMatrix, FeatureMatrix};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"RPFM";
pub const CONCEPT_MAGIC: &[u8; 4] = b"RPCM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Binary,
    Csv,
}

impl FeatureFormat {
    /// `.csv` means CSV, anything else the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConceptFormat {
    Binary,
    Csv,
}

impl ConceptFormat {
    pub fn from_path(path: &Path) -> Self {
        match FeatureFormat::from_path(path) {
            FeatureFormat::Csv => ConceptFormat::Csv,
            FeatureFormat::Binary => ConceptFormat::Binary,
        }
    }
}

/// Little-endian cursor over an in-memory file.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Format(format!(
                "{}: truncated at byte {} (wanted {n} more)",
                self.what, self.pos
            ))),
        }
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported version {version}",
                self.what
            )));
        }
        Ok(())
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("{}: count {v} too large", self.what)))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Format(format!("{}: name is not valid UTF-8", self.what)))
    }

    /// Byte length `count * width`, failing on overflow.
    pub(crate) fn sized(&self, count: usize, width: usize) -> Result<usize> {
        count
            .checked_mul(width)
            .ok_or_else(|| Error::Format(format!("{}: payload size overflows", self.what)))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::Argument(format!("name longer than 65535 bytes: {s:.32}...")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serialize features as `RPFM`. Values are stored as 32-bit floats.
pub fn write_features<W: Write>(m: &FeatureMatrix, mut w: W) -> std::io::Result<()> {
    let mut out = Vec::with_capacity(24 + 4 * m.values().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.n_samples() as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u64).to_le_bytes());
    for &v in m.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&out)
}

pub fn read_features<R: Read>(mut r: R, source_tag: &str) -> Result<FeatureMatrix> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::io(source_tag, e))?;
    parse_features(&buf, source_tag)
}

fn parse_features(buf: &[u8], source_tag: &str) -> Result<FeatureMatrix> {
    let mut rd = ByteReader::new(buf, "RPFM");
    rd.magic(FEATURE_MAGIC)?;
    let n = rd.usize()?;
    let d = rd.usize()?;
    if n == 0 || d == 0 {
        return Err(Error::Format(format!(
            "RPFM: empty matrix {n}x{d} in header"
        )));
    }
    let len = rd.sized(rd.sized(n, d)?, 4)?;
    let payload = rd.take(len)?;
    rd.finish()?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    FeatureMatrix::new(n, d, values, source_tag)
}

fn parse_features_csv(text: &str, source_tag: &str) -> Result<FeatureMatrix> {
    let mut values = Vec::new();
    let mut dim = None;
    let mut n = 0;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "line {}: cannot parse {:?} as a number",
                    line_no + 1,
                    field.trim()
                ))
            })?;
            values.push(v);
            count += 1;
        }
        match dim {
            None => dim = Some(count),
            Some(d) if d != count => {
                return Err(Error::Data(format!(
                    "line {}: {count} columns, expected {d}",
                    line_no + 1
                )))
            }
            _ => {}
        }
        n += 1;
    }
    FeatureMatrix::new(n, dim.unwrap_or(0), values, source_tag)
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<FeatureMatrix> {
    let tag = path.display().to_string();
    let bytes = read_file(path)?;
    match format {
        FeatureFormat::Binary => parse_features(&bytes, &tag),
        FeatureFormat::Csv => {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Format(format!("{tag}: CSV is not valid UTF-8")))?;
            parse_features_csv(&text, &tag)
        }
    }
}

pub fn save_features(m: &FeatureMatrix, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    write_features(m, &mut out).map_err(|e| Error::io(path, e))?;
    write_file(path, &out)
}

/// Headerless CSV with 17 significant digits per value.
pub fn save_features_csv(m: &FeatureMatrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn write_concepts<W: Write>(c: &ConceptMatrix, mut w: W) -> Result<()> {
    let mut out = Vec::with_capacity(32 + c.packed().len());
    out.extend_from_slice(CONCEPT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(c.n_samples() as u64).to_le_bytes());
    out.extend_from_slice(&(c.n_concepts() as u64).to_le_bytes());
    out.extend_from_slice(&(c.groups().len() as u32).to_le_bytes());
    for g in c.groups() {
        put_string(&mut out, &g.name)?;
        out.extend_from_slice(&(g.start as u64).to_le_bytes());
        out.extend_from_slice(&(g.len as u64).to_le_bytes());
    }
    for name in c.concept_names() {
        put_string(&mut out, name)?;
    }
    out.extend_from_slice(c.packed());
    w.write_all(&out).map_err(|e| Error::io("<writer>", e))
}

pub fn read_concepts<R: Read>(mut r: R) -> Result<ConceptMatrix> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::io("<reader>", e))?;
    parse_concepts(&buf)
}

fn parse_concepts(buf: &[u8]) -> Result<ConceptMatrix> {
    let mut rd = ByteReader::new(buf, "RPCM");
    rd.magic(CONCEPT_MAGIC)?;
    let n = rd.usize()?;
    let m = rd.usize()?;
    if n == 0 || m == 0 {
        return Err(Error::Format(format!(
            "RPCM: empty matrix {n}x{m} in header"
        )));
    }
    let n_groups = rd.u32()? as usize;
    let mut groups = Vec::with_capacity(n_groups.min(1 << 16));
    for _ in 0..n_groups {
        let name = rd.string()?;
        let start = rd.usize()?;
        let len = rd.usize()?;
        groups.push(ConceptGroup { name, start, len });
    }
    validate_groups(&groups, m)?;
    let mut names = Vec::with_capacity(m.min(1 << 20));
    for _ in 0..m {
        names.push(rd.string()?);
    }
    let len = rd.sized(n, m.div_ceil(8))?;
    let bits = rd.take(len)?.to_vec();
    rd.finish()?;
    ConceptMatrix::from_packed(n, m, bits, names, groups)
}

pub fn load_concepts(path: &Path) -> Result<ConceptMatrix> {
    parse_concepts(&read_file(path)?)
}

pub fn save_concepts(c: &ConceptMatrix, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    write_concepts(c, &mut out)?;
    write_file(path, &out)
}

/// Sidecar holding the group table of a concepts CSV: `concepts.csv` → `concepts.groups.json`.
pub fn groups_sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("groups.json")
}

/// Load concepts from CSV. With `groups_path` absent the sidecar next to the CSV
/// is used; if that does not exist either, all columns form one group `all`.
pub fn load_concepts_csv(path: &Path, groups_path: Option<&Path>) -> Result<ConceptMatrix> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::Format(format!("{}: CSV is not valid UTF-8", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: missing header row", path.display())))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let m = names.len();
    let mut dense = Vec::new();
    let mut n = 0;
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != m {
            return Err(Error::Data(format!(
                "row {row}: {} columns, expected {m}",
                fields.len()
            )));
        }
        for f in fields {
            dense.push(match f {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Data(format!(
                        "row {row}: non-binary concept value {other:?}"
                    )))
                }
            });
        }
        n += 1;
    }
    let sidecar = groups_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| groups_sidecar_path(path));
    let groups: Vec<ConceptGroup> = if groups_path.is_some() || sidecar.exists() {
        serde_json::from_slice(&read_file(&sidecar)?)?
    } else {
        vec![ConceptGroup::new("all", 0, m)]
    };
    validate_groups(&groups, m)?;
    ConceptMatrix::from_dense(n, m, &dense, names, groups)
}

/// Write concepts as CSV plus the `.groups.json` sidecar.
pub fn save_concepts_csv(c: &ConceptMatrix, path: &Path) -> Result<()> {
    let mut out = c.concept_names().join(",");
    out.push('\n');
    for i in 0..c.n_samples() {
        let row: Vec<&str> = (0..c.n_concepts())
            .map(|j| if c.get(i, j) { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())?;
    let groups = serde_json::to_vec_pretty(c.groups())?;
    write_file(&groups_sidecar_path(path), &groups)
}
