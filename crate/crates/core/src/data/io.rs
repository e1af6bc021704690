//! Line-delimited `.gad` dataset files: one JSON object per clip.
//!
//! Reals are written in scientific notation with 17 significant digits.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::Formatter;

use crate::data::SequenceSample;
use crate::error::{Error, Result};

struct SeventeenDigits;

impl Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

fn encode_line(sample: &SequenceSample) -> Result<Vec<u8>> {
    if let Some(bad) = sample
        .persons
        .iter()
        .flat_map(|p| p.feats.iter().flatten().chain(p.boxes.iter().flat_map(|b| [&b.cx, &b.cy, &b.w, &b.h])))
        .find(|v| !v.is_finite())
    {
        return Err(Error::Validation {
            clip_id: sample.clip_id.clone(),
            message: format!("cannot serialize non-finite value {bad}"),
        });
    }
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits);
    sample
        .serialize(&mut ser)
        .map_err(|e| Error::Io(io::Error::other(e)))?;
    Ok(buf)
}

pub fn write_dataset_to<W: Write>(data: &[SequenceSample], mut out: W) -> Result<()> {
    for s in data {
        out.write_all(&encode_line(s)?)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_dataset(data: &[SequenceSample], path: impl AsRef<Path>) -> Result<()> {
    let f = fs::File::create(path)?;
    write_dataset_to(data, BufWriter::new(f))
}

/// Parses a dataset; blank lines are skipped, every clip is validated.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<SequenceSample>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: SequenceSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: k + 1,
            message: e.to_string(),
        })?;
        sample.validate()?;
        out.push(sample);
    }
    Ok(out)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<SequenceSample>> {
    let f = fs::File::open(path)?;
    parse_dataset(BufReader::new(f))
}
