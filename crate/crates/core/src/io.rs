//! File formats. CSV files open with a `# format_version: N` comment line,
//! JSON documents carry a `format_version` field. Indices are 0-based.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::histogram::Histogram;
use crate::optics::ModeQuad;
use crate::sampling::{output_pairs, CountsRecord};
use crate::tomography::dataset::{RecordFlag, VisibilityDataset, VisibilityRecord};

pub const FORMAT_VERSION: u32 = 1;

pub fn format_version() -> u32 {
    FORMAT_VERSION
}

const VERSION_PREFIX: &str = "# format_version:";

fn check_version_line(text: &str) -> Result<()> {
    let Some(first) = text.lines().next() else {
        return Ok(());
    };
    if let Some(rest) = first.trim().strip_prefix(VERSION_PREFIX) {
        let v: u32 = rest
            .trim()
            .parse()
            .map_err(|_| Error::InvalidData(format!("bad format_version line '{first}'")))?;
        if v != FORMAT_VERSION {
            return Err(Error::InvalidData(format!("unsupported format_version {v}")));
        }
    }
    Ok(())
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn expect_headers(rdr: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let got = rdr.headers()?.clone();
    let ok = got.len() >= expected.len() && expected.iter().zip(got.iter()).all(|(a, b)| *a == b);
    if !ok {
        return Err(Error::InvalidData(format!(
            "expected columns {}, got {}",
            expected.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<T> {
    rec.get(idx)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::InvalidData(format!("line {line}: bad or missing '{name}'")))
}

fn read_text<R: Read>(mut r: R) -> Result<String> {
    let mut s = String::new();
    r.read_to_string(&mut s)?;
    Ok(s)
}

fn writer<W: Write>(mut w: W) -> Result<csv::Writer<W>> {
    writeln!(w, "{VERSION_PREFIX} {FORMAT_VERSION}")?;
    Ok(csv::Writer::from_writer(w))
}

// ---- visibilities ----

pub fn write_visibilities<W: Write>(w: W, records: &[VisibilityRecord]) -> Result<()> {
    let mut wr = writer(w)?;
    wr.write_record(["i", "j", "k", "l", "V", "sigma", "flag"])?;
    for r in records {
        let q = r.quad;
        wr.write_record([
            q.i.to_string(),
            q.j.to_string(),
            q.k.to_string(),
            q.l.to_string(),
            r.value.to_string(),
            r.sigma.to_string(),
            r.flag.as_str().to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_visibilities<R: Read>(r: R) -> Result<Vec<VisibilityRecord>> {
    let text = read_text(r)?;
    check_version_line(&text)?;
    let mut rdr = csv_reader(&text);
    expect_headers(&mut rdr, &["i", "j", "k", "l", "V", "sigma", "flag"])?;
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let flag = match rec.get(6) {
            Some(s) if !s.is_empty() => RecordFlag::parse(s)?,
            _ => RecordFlag::Valid,
        };
        let quad = ModeQuad::new(
            field(&rec, 0, "i", line)?,
            field(&rec, 1, "j", line)?,
            field(&rec, 2, "k", line)?,
            field(&rec, 3, "l", line)?,
        )?;
        out.push(VisibilityRecord {
            quad,
            value: field(&rec, 4, "V", line)?,
            sigma: field(&rec, 5, "sigma", line)?,
            flag,
        });
    }
    Ok(out)
}

// ---- power matrix ----

pub fn write_power<W: Write>(w: W, power: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<()> {
    let mut wr = writer(w)?;
    wr.write_record(["row", "col", "R", "sigma"])?;
    for row in 0..power.nrows() {
        for col in 0..power.ncols() {
            wr.write_record([
                row.to_string(),
                col.to_string(),
                power[(row, col)].to_string(),
                sigma[(row, col)].to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads a power matrix; its dimension is the largest index plus one and
/// every entry must be present exactly once.
pub fn read_power<R: Read>(r: R) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let text = read_text(r)?;
    check_version_line(&text)?;
    let mut rdr = csv_reader(&text);
    expect_headers(&mut rdr, &["row", "col", "R", "sigma"])?;
    let mut entries = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let row: usize = field(&rec, 0, "row", line)?;
        let col: usize = field(&rec, 1, "col", line)?;
        let value: f64 = field(&rec, 2, "R", line)?;
        let sigma: f64 = match rec.get(3) {
            Some(s) if !s.is_empty() => field(&rec, 3, "sigma", line)?,
            _ => 0.0,
        };
        entries.push((row, col, value, sigma));
    }
    let dim = entries.iter().map(|e| e.0.max(e.1) + 1).max().unwrap_or(0);
    if dim == 0 || entries.len() != dim * dim {
        return Err(Error::InvalidData(format!(
            "power matrix needs {} entries for dim {dim}, got {}",
            dim * dim,
            entries.len()
        )));
    }
    let mut power = DMatrix::from_element(dim, dim, f64::NAN);
    let mut sigma = DMatrix::zeros(dim, dim);
    for (row, col, v, s) in entries {
        if !power[(row, col)].is_nan() {
            return Err(Error::InvalidData(format!("duplicate power entry ({row}, {col})")));
        }
        power[(row, col)] = v;
        sigma[(row, col)] = s;
    }
    Ok((power, sigma))
}

pub fn save_dataset(data_path: &Path, power_path: &Path, ds: &VisibilityDataset) -> Result<()> {
    write_visibilities(fs::File::create(data_path)?, &ds.records)?;
    write_power(fs::File::create(power_path)?, &ds.power, &ds.power_sigma)
}

pub fn load_dataset(data_path: &Path, power_path: &Path) -> Result<VisibilityDataset> {
    let records = read_visibilities(fs::File::open(data_path)?)?;
    let (power, sigma) = read_power(fs::File::open(power_path)?)?;
    VisibilityDataset::new(power.nrows(), records, power, sigma)
}

// ---- counts ----

pub fn write_counts<W: Write>(w: W, records: &[CountsRecord]) -> Result<()> {
    let mut wr = writer(w)?;
    wr.write_record(["input_i", "input_j", "kind", "k", "l", "value"])?;
    for r in records {
        let (i, j) = r.input_pair;
        for (k, v) in r.singles.iter().enumerate() {
            wr.write_record([i.to_string(), j.to_string(), "single".into(), k.to_string(), String::new(), v.to_string()])?;
        }
        for ((k, l), v) in output_pairs(r.dim()).into_iter().zip(&r.coincidences) {
            wr.write_record([i.to_string(), j.to_string(), "coinc".into(), k.to_string(), l.to_string(), v.to_string()])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads counts; the dimension is the largest mode index plus one. Missing
/// entries are zero. Records come back in first-appearance order.
pub fn read_counts<R: Read>(r: R) -> Result<Vec<CountsRecord>> {
    let text = read_text(r)?;
    check_version_line(&text)?;
    let mut rdr = csv_reader(&text);
    expect_headers(&mut rdr, &["input_i", "input_j", "kind", "k", "l", "value"])?;
    enum Entry {
        Single(usize),
        Coinc(usize, usize),
    }
    let mut rows = Vec::new();
    let mut dim = 0;
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let i: usize = field(&rec, 0, "input_i", line)?;
        let j: usize = field(&rec, 1, "input_j", line)?;
        let k: usize = field(&rec, 3, "k", line)?;
        let value: f64 = field(&rec, 5, "value", line)?;
        let entry = match rec.get(2) {
            Some("single") => Entry::Single(k),
            Some("coinc") => {
                let l: usize = field(&rec, 4, "l", line)?;
                if k == l {
                    return Err(Error::InvalidData(format!("line {line}: coincidence needs k != l")));
                }
                dim = dim.max(l + 1);
                Entry::Coinc(k.min(l), k.max(l))
            }
            other => return Err(Error::InvalidData(format!("line {line}: unknown kind {other:?}"))),
        };
        dim = dim.max(i + 1).max(j + 1).max(k + 1);
        rows.push(((i, j), entry, value));
    }
    let pairs = output_pairs(dim);
    let mut out: Vec<CountsRecord> = Vec::new();
    for (input_pair, entry, value) in rows {
        let idx = match out.iter().position(|r| r.input_pair == input_pair) {
            Some(p) => p,
            None => {
                out.push(CountsRecord {
                    input_pair,
                    singles: vec![0.0; dim],
                    coincidences: vec![0.0; pairs.len()],
                });
                out.len() - 1
            }
        };
        match entry {
            Entry::Single(k) => out[idx].singles[k] = value,
            Entry::Coinc(k, l) => {
                let p = pairs.iter().position(|&q| q == (k, l)).expect("pair in range");
                out[idx].coincidences[p] = value;
            }
        }
    }
    for r in &out {
        r.validate()?;
    }
    Ok(out)
}

// ---- histograms ----

#[derive(serde::Serialize, serde::Deserialize)]
struct HistogramMeta {
    #[serde(default = "format_version")]
    format_version: u32,
    bin_width: f64,
    pump_period: f64,
    t0_offset: f64,
}

pub fn write_histogram(csv_path: &Path, meta_path: &Path, h: &Histogram) -> Result<()> {
    let mut wr = writer(fs::File::create(csv_path)?)?;
    wr.write_record(["bin_index", "count"])?;
    for (b, c) in h.counts.iter().enumerate() {
        wr.write_record([b.to_string(), c.to_string()])?;
    }
    wr.flush()?;
    let meta = HistogramMeta {
        format_version: FORMAT_VERSION,
        bin_width: h.bin_width,
        pump_period: h.pump_period,
        t0_offset: h.t0_offset,
    };
    fs::write(meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Bins absent from the CSV count as zero.
pub fn read_histogram(csv_path: &Path, meta_path: &Path) -> Result<Histogram> {
    let meta: HistogramMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::InvalidData(format!("unsupported format_version {}", meta.format_version)));
    }
    let text = fs::read_to_string(csv_path)?;
    check_version_line(&text)?;
    let mut rdr = csv_reader(&text);
    expect_headers(&mut rdr, &["bin_index", "count"])?;
    let mut counts = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let b: usize = field(&rec, 0, "bin_index", n + 2)?;
        let c: u64 = field(&rec, 1, "count", n + 2)?;
        if counts.len() <= b {
            counts.resize(b + 1, 0);
        }
        counts[b] = c;
    }
    let h = Histogram {
        bin_width: meta.bin_width,
        counts,
        t0_offset: meta.t0_offset,
        pump_period: meta.pump_period,
    };
    h.validate()?;
    Ok(h)
}

// ---- JSON documents ----

/// Serializes `value` with a top-level `format_version` field (objects only).
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("format_version".into(), FORMAT_VERSION.into());
    }
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut v: serde_json::Value = serde_json::from_str(text)?;
    if let serde_json::Value::Object(map) = &mut v {
        if let Some(ver) = map.get("format_version") {
            if ver.as_u64() != Some(FORMAT_VERSION as u64) {
                return Err(Error::InvalidData(format!("unsupported format_version {ver}")));
            }
        }
    }
    Ok(serde_json::from_value(v)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_json(&fs::read_to_string(path)?)
}
