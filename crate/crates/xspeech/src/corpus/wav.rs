//! 16-bit PCM mono RIFF/WAVE read and write.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::CorpusError;

pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    let data_len = (samples.len() * 2) as u32;
    w.write_all(b"RIFF")?;
    w.write_u32::<LittleEndian>(36 + data_len)?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_u32::<LittleEndian>(16)?;
    w.write_u16::<LittleEndian>(1)?; // PCM
    w.write_u16::<LittleEndian>(1)?; // mono
    w.write_u32::<LittleEndian>(sample_rate)?;
    w.write_u32::<LittleEndian>(sample_rate * 2)?;
    w.write_u16::<LittleEndian>(2)?;
    w.write_u16::<LittleEndian>(16)?;
    w.write_all(b"data")?;
    w.write_u32::<LittleEndian>(data_len)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_i16::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32), CorpusError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut tag = [0u8; 4];
    r.read_exact(&mut tag)?;
    if &tag != b"RIFF" {
        return Err(CorpusError::BadWav("missing RIFF tag".into()));
    }
    let _size = r.read_u32::<LittleEndian>()?;
    r.read_exact(&mut tag)?;
    if &tag != b"WAVE" {
        return Err(CorpusError::BadWav("missing WAVE tag".into()));
    }
    let mut sample_rate = 0u32;
    let mut data: Option<Vec<f64>> = None;
    loop {
        if r.read_exact(&mut tag).is_err() {
            break;
        }
        let chunk_len = r.read_u32::<LittleEndian>()?;
        match &tag {
            b"fmt " => {
                let fmt = r.read_u16::<LittleEndian>()?;
                let channels = r.read_u16::<LittleEndian>()?;
                sample_rate = r.read_u32::<LittleEndian>()?;
                let _byte_rate = r.read_u32::<LittleEndian>()?;
                let _align = r.read_u16::<LittleEndian>()?;
                let bits = r.read_u16::<LittleEndian>()?;
                if fmt != 1 || channels != 1 || bits != 16 {
                    return Err(CorpusError::BadWav(format!(
                        "expected 16-bit PCM mono, got fmt={fmt} ch={channels} bits={bits}"
                    )));
                }
                let extra = chunk_len.saturating_sub(16);
                std::io::copy(&mut r.by_ref().take(extra as u64), &mut std::io::sink())?;
            }
            b"data" => {
                let n = (chunk_len / 2) as usize;
                let mut samples = Vec::with_capacity(n);
                for _ in 0..n {
                    samples.push(r.read_i16::<LittleEndian>()? as f64 / 32767.0);
                }
                data = Some(samples);
            }
            _ => {
                std::io::copy(&mut r.by_ref().take(chunk_len as u64), &mut std::io::sink())?;
            }
        }
    }
    match data {
        Some(d) if sample_rate > 0 => Ok((d, sample_rate)),
        _ => Err(CorpusError::BadWav("missing fmt or data chunk".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f64> = (0..200)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 8000.0).sin())
            .collect();
        write_wav(&path, &samples, 8000).unwrap();
        let (back, sr) = read_wav(&path).unwrap();
        assert_eq!(sr, 8000);
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }
}
