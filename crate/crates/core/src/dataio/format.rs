//! Binary dataset files.
//!
//! Layout (little-endian): magic `b"PDPD"`, `u32` version, `u32` sensors,
//! `u32` time samples, `u64` sample count, `f64` sample period, then per
//! sample `sensors * time_samples` `f32` powers followed by two `f32` label
//! coordinates.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::PdpMatrix;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PDPD";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_dataset(path: impl AsRef<Path>, samples: &[PdpMatrix]) -> Result<()> {
    let path = path.as_ref();
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let (sensors, n_ts, period) = (first.sensors(), first.time_samples(), first.sample_period);
    if let Some(bad) = samples
        .iter()
        .position(|s| s.sensors() != sensors || s.time_samples() != n_ts || s.sample_period != period)
    {
        return Err(Error::shape(
            "write_dataset",
            format!("sample {bad} does not match the {sensors}x{n_ts} shape of sample 0"),
        ));
    }
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    encode(&mut w, samples, sensors, n_ts, period).map_err(io)?;
    w.flush().map_err(io)
}

fn encode(w: &mut impl Write, samples: &[PdpMatrix], sensors: usize, n_ts: usize, period: f64) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(sensors as u32)?;
    w.write_u32::<LittleEndian>(n_ts as u32)?;
    w.write_u64::<LittleEndian>(samples.len() as u64)?;
    w.write_f64::<LittleEndian>(period)?;
    for s in samples {
        for &p in s.powers() {
            w.write_f32::<LittleEndian>(p as f32)?;
        }
        w.write_f32::<LittleEndian>(s.label[0] as f32)?;
        w.write_f32::<LittleEndian>(s.label[1] as f32)?;
    }
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<PdpMatrix>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode(&mut BufReader::new(file))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated dataset file".into())
    } else {
        Error::Format(e.to_string())
    }
}

fn decode(r: &mut impl Read) -> Result<Vec<PdpMatrix>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let sensors = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let n_ts = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let count = r.read_u64::<LittleEndian>().map_err(truncated)?;
    let period = r.read_f64::<LittleEndian>().map_err(truncated)?;
    if sensors == 0 || n_ts == 0 {
        return Err(Error::Format(format!("invalid shape {sensors}x{n_ts}")));
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut buf = vec![0f32; sensors * n_ts + 2];
    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        r.read_f32_into::<LittleEndian>(&mut buf).map_err(truncated)?;
        let powers = buf[..sensors * n_ts].iter().map(|&v| v as f64).collect();
        let label = [buf[sensors * n_ts] as f64, buf[sensors * n_ts + 1] as f64];
        out.push(PdpMatrix::new(sensors, n_ts, powers, label, period).map_err(|e| Error::Format(e.to_string()))?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after last sample".into()));
    }
    Ok(out)
}

/// `sample_id,x,y` for quick inspection of the label distribution.
pub fn write_labels_csv(path: impl AsRef<Path>, samples: &[PdpMatrix]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "sample_id,x,y").map_err(io)?;
    for (i, s) in samples.iter().enumerate() {
        writeln!(w, "{i},{},{}", s.label[0], s.label[1]).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_dataset, GeneratorConfig, SensorLayout};

    fn sample_set(n: usize) -> Vec<PdpMatrix> {
        generate_dataset(&SensorLayout::default(), &GeneratorConfig { rng_seed: 11, ..Default::default() }, n).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let data = sample_set(10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pdpd");
        write_dataset(&path, &data).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 32 + 10 * (18 * 128 + 2) * 4);
        assert_eq!(&bytes[..4], b"PDPD");
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let data = sample_set(2);
        let mut bytes = Vec::new();
        encode(&mut bytes, &data, 18, 128, data[0].sample_period).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&mut bad.as_slice()), Err(Error::Format(m)) if m.contains("magic")));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode(&mut bad.as_slice()), Err(Error::Format(m)) if m.contains("version")));

        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode(&mut &cut[..]), Err(Error::Format(m)) if m.contains("truncated")));
    }

    #[test]
    fn write_rejects_mixed_shapes_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pdpd");
        assert!(matches!(write_dataset(&path, &[]), Err(Error::EmptyDataset)));
        let a = PdpMatrix::new(1, 2, vec![0.0; 2], [0.0; 2], 1.0).unwrap();
        let b = PdpMatrix::new(2, 1, vec![0.0; 2], [0.0; 2], 1.0).unwrap();
        assert!(matches!(write_dataset(&path, &[a, b]), Err(Error::Shape { .. })));
    }
}
