//! Dataset files.
//!
//! CSV: an optional `# frame_ms=<ms> provenance=<synthetic|external>` line,
//! then a header `ch1,..,chN,vel1,..,velK` and one row per frame.
//!
//! Binary (all little endian):
//!
//! ```text
//! "SBPF"  u32 version  u32 channels  u32 outputs  u64 frames  f32 frame_ms  u8 provenance
//! frames x (channels + outputs) f32, row-major, features before velocities
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, DatasetMeta, Provenance};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"SBPF";
pub const BINARY_VERSION: u32 = 1;
const DEFAULT_FRAME_MS: f32 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Binary,
}

impl FileFormat {
    /// `.csv` is CSV; anything else is the binary container.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Binary,
        }
    }
}

pub fn load_frames(path: &Path, format: FileFormat) -> Result<(Dataset, DatasetMeta)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let data = match format {
        FileFormat::Csv => read_csv(path, BufReader::new(file))?,
        FileFormat::Binary => read_binary(path, BufReader::new(file))?,
    };
    let meta = data.meta();
    Ok((data, meta))
}

pub fn save_frames(path: &Path, data: &Dataset, format: FileFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        FileFormat::Csv => write_csv(&mut w, data),
        FileFormat::Binary => write_binary(&mut w, data),
    }
    .and_then(|_| w.flush())
    .map_err(|e| Error::io(path, e))
}

fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Synthetic => "synthetic",
        Provenance::External => "external",
    }
}

fn write_csv(w: &mut impl Write, data: &Dataset) -> std::io::Result<()> {
    writeln!(
        w,
        "# frame_ms={} provenance={}",
        data.frame_ms,
        provenance_name(data.provenance)
    )?;
    let mut csv = csv::Writer::from_writer(w);
    let header = (1..=data.channel_count())
        .map(|i| format!("ch{i}"))
        .chain((1..=data.output_count()).map(|i| format!("vel{i}")));
    csv.write_record(header)?;
    for (f, v) in data.features.rows().into_iter().zip(data.velocities.rows()) {
        // `{}` on f32 prints the shortest string that parses back to the same value
        csv.write_record(f.iter().chain(v.iter()).map(|x| x.to_string()))?;
    }
    csv.flush()
}

fn parse_meta_line(path: &Path, line: &str) -> Result<(f32, Provenance)> {
    let mut frame_ms = DEFAULT_FRAME_MS;
    let mut provenance = Provenance::External;
    for item in line.trim_start_matches('#').split_whitespace() {
        let bad = |message: String| Error::Parse {
            path: path.into(),
            line: 1,
            message,
        };
        match item.split_once('=') {
            Some(("frame_ms", v)) => frame_ms = v.parse().map_err(|_| bad(format!("bad frame_ms {v:?}")))?,
            Some(("provenance", "synthetic")) => provenance = Provenance::Synthetic,
            Some(("provenance", "external")) => provenance = Provenance::External,
            _ => return Err(bad(format!("unknown metadata item {item:?}"))),
        }
    }
    Ok((frame_ms, provenance))
}

fn read_csv(path: &Path, mut r: impl BufRead) -> Result<Dataset> {
    let mut first = String::new();
    r.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let (frame_ms, provenance, header_line, rest): (f32, Provenance, u64, Box<dyn Read + '_>) =
        if first.starts_with('#') {
            let (ms, p) = parse_meta_line(path, &first)?;
            (ms, p, 2, Box::new(r))
        } else {
            (
                DEFAULT_FRAME_MS,
                Provenance::External,
                1,
                Box::new(std::io::Cursor::new(first.into_bytes()).chain(r)),
            )
        };
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(rest);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.into(),
        line: line + header_line - 1,
        message,
    };
    let header = csv.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let channels = header.iter().take_while(|h| h.starts_with("ch")).count();
    let outputs = header.len() - channels;
    let header_ok = header.iter().enumerate().all(|(i, h)| {
        if i < channels {
            h == format!("ch{}", i + 1)
        } else {
            h == format!("vel{}", i - channels + 1)
        }
    });
    if !header_ok || channels == 0 || outputs == 0 {
        return Err(parse_err(1, "header must be ch1..chN followed by vel1..velK".into()));
    }
    let width = channels + outputs;
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in csv.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} columns, found {}", rec.len()),
            ));
        }
        for (j, field) in rec.iter().enumerate() {
            let x: f32 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("column {}: {field:?} is not a number", j + 1)))?;
            if !x.is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite value", j + 1)));
            }
            values.push(x);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Format {
            path: path.into(),
            message: "no frames".into(),
        });
    }
    split_columns(values, rows, channels, outputs, frame_ms, provenance)
}

fn split_columns(
    values: Vec<f32>,
    rows: usize,
    channels: usize,
    outputs: usize,
    frame_ms: f32,
    provenance: Provenance,
) -> Result<Dataset> {
    let all = Array2::from_shape_vec((rows, channels + outputs), values).expect("row count tracked");
    let features = all.slice(ndarray::s![.., ..channels]).to_owned();
    let velocities = all.slice(ndarray::s![.., channels..]).to_owned();
    Dataset::new(features, velocities, frame_ms, provenance)
}

fn write_binary(w: &mut impl Write, data: &Dataset) -> std::io::Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&(data.channel_count() as u32).to_le_bytes())?;
    w.write_all(&(data.output_count() as u32).to_le_bytes())?;
    w.write_all(&(data.len() as u64).to_le_bytes())?;
    w.write_all(&data.frame_ms.to_le_bytes())?;
    w.write_all(&[match data.provenance {
        Provenance::Synthetic => 0u8,
        Provenance::External => 1u8,
    }])?;
    for (f, v) in data.features.rows().into_iter().zip(data.velocities.rows()) {
        for x in f.iter().chain(v.iter()) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_binary(path: &Path, mut r: impl Read) -> Result<Dataset> {
    let format_err = |message: String| Error::Format {
        path: path.into(),
        message,
    };
    let mut header = [0u8; 29];
    r.read_exact(&mut header)
        .map_err(|_| format_err("truncated header".into()))?;
    if &header[..4] != BINARY_MAGIC {
        return Err(format_err("not a frame file (bad magic)".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != BINARY_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let channels = u32_at(8) as usize;
    let outputs = u32_at(12) as usize;
    let rows = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    let frame_ms = f32::from_le_bytes(header[24..28].try_into().unwrap());
    let provenance = match header[28] {
        0 => Provenance::Synthetic,
        1 => Provenance::External,
        p => return Err(format_err(format!("unknown provenance tag {p}"))),
    };
    if channels == 0 || outputs == 0 || rows == 0 {
        return Err(format_err("empty dimensions".into()));
    }
    let count = rows
        .checked_mul(channels + outputs)
        .ok_or_else(|| format_err("dimensions overflow".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != count * 4 {
        return Err(format_err(format!(
            "expected {} payload bytes, found {}",
            count * 4,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    split_columns(values, rows, channels, outputs, frame_ms, provenance).map_err(|e| match e {
        Error::NonFinite { context } => format_err(format!("non-finite value in {context}")),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> Dataset {
        Dataset::new(
            array![[0.1f32, 2.5, -3.0], [1e-7, 4.0, 5.5], [6.25, -0.0, 1.0 / 3.0]],
            array![[0.5f32, -0.5], [1.0, 2.0], [-1.5, 3.25]],
            32.0,
            Provenance::Synthetic,
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        save_frames(&p, &sample(), FileFormat::Csv).unwrap();
        let (d, meta) = load_frames(&p, FileFormat::Csv).unwrap();
        assert_eq!(d, sample());
        assert_eq!(meta.sample_count, 3);
        assert_eq!(meta.channel_count, 3);
        assert_eq!(meta.frame_ms, 32.0);
    }

    #[test]
    fn hand_written_csv_without_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "ch1,ch2,vel1,vel2\n1,2,3,4\n5,6,7,8\n9,10,11,12\n").unwrap();
        let (d, meta) = load_frames(&p, FileFormat::Csv).unwrap();
        assert_eq!(d.features, array![[1.0f32, 2.0], [5.0, 6.0], [9.0, 10.0]]);
        assert_eq!(d.velocities, array![[3.0f32, 4.0], [7.0, 8.0], [11.0, 12.0]]);
        assert_eq!(meta.provenance, Provenance::External);
        assert_eq!(meta.frame_ms, 50.0);
    }

    #[test]
    fn short_row_names_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(
            &p,
            "# frame_ms=50 provenance=external\nch1,ch2,vel1,vel2\n1,2,3,4\n5,6,7\n",
        )
        .unwrap();
        let err = load_frames(&p, FileFormat::Csv).unwrap_err();
        match err {
            Error::Parse { line, ref message, .. } => {
                assert_eq!(line, 4, "{err}");
                assert!(message.contains("expected 4 columns, found 3"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_value_names_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "ch1,vel1\n1,2\nx,3\n").unwrap();
        let err = load_frames(&p, FileFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn binary_round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        save_frames(&p, &sample(), FileFormat::Binary).unwrap();
        assert_eq!(load_frames(&p, FileFormat::Binary).unwrap().0, sample());

        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_frames(&p, FileFormat::Binary), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(load_frames(&p, FileFormat::Binary), Err(Error::Format { .. })));
    }

    #[test]
    fn format_follows_extension() {
        assert_eq!(FileFormat::from_path(Path::new("a/b.CSV")), FileFormat::Csv);
        assert_eq!(FileFormat::from_path(Path::new("a/b.sbpf")), FileFormat::Binary);
    }
}
