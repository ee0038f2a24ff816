//! Output formats: column tables (CSV or JSON with one array per column)
//! and the framed binary sequence format.
//!
//! Binary layout (`LLA1`), all integers little-endian u64, all floats
//! little-endian f64:
//!
//! ```text
//! magic "LLA1" | version=1 | L | d | segment size S | seed | sample
//! L x u64  segment ids (1-based)
//! L x d f64 keys (row-major)
//! L x d f64 values (row-major)
//! ```

use std::fmt::Write as _;
use std::io::{self, Read, Write};

use anyhow::{bail, Context, Result};
use lla_core::datagen::SequenceSample;
use lla_core::tensor::Matrix;

/// One table cell. Floats print with Rust's shortest round-trip formatting,
/// so identical values always serialize to identical bytes.
#[derive(Debug, Clone)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Str(String),
    /// Rendered as an empty CSV field / JSON null (used when a measurement
    /// is unavailable).
    Missing,
}

impl Cell {
    fn write_csv(&self, out: &mut String) {
        match self {
            Cell::Int(v) => {
                let _ = write!(out, "{v}");
            }
            Cell::Float(v) => {
                let _ = write!(out, "{v}");
            }
            Cell::Str(s) => out.push_str(s),
            Cell::Missing => {}
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            Cell::Int(v) => serde_json::json!(v),
            Cell::Float(v) => serde_json::json!(v),
            Cell::Str(s) => serde_json::json!(s),
            Cell::Missing => serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: Vec<S>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                cell.write_csv(&mut out);
            }
            out.push('\n');
        }
        out
    }

    /// Columns mirrored as arrays, in schema order.
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        for (c, name) in self.columns.iter().enumerate() {
            let col: Vec<serde_json::Value> = self.rows.iter().map(|r| r[c].to_json()).collect();
            obj.insert(name.clone(), serde_json::Value::Array(col));
        }
        serde_json::Value::Object(obj)
    }

    pub fn write(&self, path: Option<&std::path::Path>, format: OutputFormat) -> Result<()> {
        let body = match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => {
                let mut s = serde_json::to_string_pretty(&self.to_json())?;
                s.push('\n');
                s
            }
        };
        match path {
            Some(p) => {
                std::fs::write(p, body).with_context(|| format!("writing {}", p.display()))?
            }
            None => io::stdout().write_all(body.as_bytes())?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => bail!("unknown format {other:?} (expected csv or json)"),
        }
    }
}

/// Columnar CSV for one generated sequence:
/// `position,segment,k_0..k_{d-1},v_0..v_{d-1}`, position 1-based.
pub fn sequence_to_csv(s: &SequenceSample) -> String {
    let d = s.keys.cols();
    let mut cols = vec!["position".to_string(), "segment".to_string()];
    for c in 0..d {
        cols.push(format!("k_{c}"));
    }
    for c in 0..d {
        cols.push(format!("v_{c}"));
    }
    let mut out = String::new();
    out.push_str(&cols.join(","));
    out.push('\n');
    for i in 0..s.keys.rows() {
        let _ = write!(out, "{},{}", i + 1, s.segment_ids[i]);
        for c in 0..d {
            let _ = write!(out, ",{}", s.keys.get(i, c));
        }
        for c in 0..d {
            let _ = write!(out, ",{}", s.values.get(i, c));
        }
        out.push('\n');
    }
    out
}

pub const SEQUENCE_MAGIC: &[u8; 4] = b"LLA1";
const SEQUENCE_VERSION: u64 = 1;

pub fn write_sequence_binary(
    out: &mut impl Write,
    s: &SequenceSample,
    segment_size: usize,
    seed: u64,
    sample: u64,
) -> Result<()> {
    let l = s.keys.rows() as u64;
    let d = s.keys.cols() as u64;
    out.write_all(SEQUENCE_MAGIC)?;
    for v in [SEQUENCE_VERSION, l, d, segment_size as u64, seed, sample] {
        out.write_all(&v.to_le_bytes())?;
    }
    for &id in &s.segment_ids {
        out.write_all(&(id as u64).to_le_bytes())?;
    }
    for m in [&s.keys, &s.values] {
        for v in m.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub struct BinarySequence {
    pub sample: SequenceSample,
    pub segment_size: usize,
    pub seed: u64,
    pub sample_index: u64,
}

pub fn read_sequence_binary(input: &mut impl Read) -> Result<BinarySequence> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != SEQUENCE_MAGIC {
        bail!("bad magic: {magic:?}");
    }
    let mut u64buf = [0u8; 8];
    let mut next_u64 = |input: &mut dyn Read| -> Result<u64> {
        input.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let version = next_u64(input)?;
    if version != SEQUENCE_VERSION {
        bail!("unsupported version {version}");
    }
    let l = next_u64(input)? as usize;
    let d = next_u64(input)? as usize;
    let segment_size = next_u64(input)? as usize;
    let seed = next_u64(input)?;
    let sample_index = next_u64(input)?;
    let mut segment_ids = Vec::with_capacity(l);
    for _ in 0..l {
        segment_ids.push(next_u64(input)? as usize);
    }
    let read_matrix = |input: &mut dyn Read| -> Result<Matrix> {
        let mut data = vec![0.0f64; l * d];
        let mut fbuf = [0u8; 8];
        for v in data.iter_mut() {
            input.read_exact(&mut fbuf)?;
            *v = f64::from_le_bytes(fbuf);
        }
        Ok(Matrix::from_vec(l, d, data)?)
    };
    let keys = read_matrix(input)?;
    let values = read_matrix(input)?;
    Ok(BinarySequence {
        sample: SequenceSample {
            keys,
            values,
            segment_ids,
            maps: Vec::new(),
        },
        segment_size,
        seed,
        sample_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lla_core::datagen::{gen_sequence, PiecewiseLinearTask};

    #[test]
    fn binary_round_trip() {
        let task = PiecewiseLinearTask::new(16, 4, 3, 0.1, 77).unwrap();
        let s = gen_sequence(&task, 2).unwrap();
        let mut buf = Vec::new();
        write_sequence_binary(&mut buf, &s, task.segment, task.seed, 2).unwrap();
        let back = read_sequence_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.sample.keys, s.keys);
        assert_eq!(back.sample.values, s.values);
        assert_eq!(back.sample.segment_ids, s.segment_ids);
        assert_eq!(back.segment_size, 4);
        assert_eq!(back.seed, 77);
        assert_eq!(back.sample_index, 2);
    }

    #[test]
    fn csv_layout() {
        let task = PiecewiseLinearTask::new(4, 2, 2, 0.0, 1).unwrap();
        let s = gen_sequence(&task, 0).unwrap();
        let csv = sequence_to_csv(&s);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "position,segment,k_0,k_1,v_0,v_1");
        assert_eq!(csv.lines().count(), 5);
        let first = lines.next().unwrap();
        assert!(first.starts_with("1,1,"));
    }

    #[test]
    fn table_json_mirrors_columns() {
        let mut t = Table::new(vec!["a", "b"]);
        t.push(vec![Cell::Int(1), Cell::Float(0.5)]);
        t.push(vec![Cell::Int(2), Cell::Missing]);
        let j = t.to_json();
        assert_eq!(j["a"], serde_json::json!([1, 2]));
        assert_eq!(j["b"][1], serde_json::Value::Null);
        assert_eq!(t.to_csv(), "a,b\n1,0.5\n2,\n");
    }
}
