//! Binary dataset file format. Little-endian throughout; round trips are
//! bit-exact.
//!
//! Layout: magic `MMSDDATA`, version u32 = 1, sample count u32, then per
//! sample: label u8, video tensor (L u32, d u32, L*d f64), audio tensor
//! (same layout), token list (count u32, ids u32).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::binio::{self, CountingReader};
use crate::data::synth::Dataset;
use crate::error::{Error, Result};
use crate::model::features::ModalityFeatures;
use crate::numerics::tensor::Tensor;

const DATA_MAGIC: &[u8; 8] = b"MMSDDATA";
const DATA_VERSION: u32 = 1;

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    binio::write_u32(w, t.shape()[0] as u32)?;
    binio::write_u32(w, t.shape()[1] as u32)?;
    for &v in t.data() {
        binio::write_f64(w, v)?;
    }
    Ok(())
}

/// Write the dataset; returns each sample record's byte offset.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<Vec<u64>> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATA_MAGIC)?;
    binio::write_u32(&mut w, DATA_VERSION)?;
    binio::write_u32(&mut w, dataset.samples.len() as u32)?;
    let mut offset: u64 = 16;
    let mut offsets = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        offsets.push(offset);
        binio::write_u8(&mut w, s.label)?;
        write_tensor(&mut w, &s.video)?;
        write_tensor(&mut w, &s.audio)?;
        binio::write_u32(&mut w, s.text_tokens.len() as u32)?;
        for &t in &s.text_tokens {
            binio::write_u32(&mut w, t)?;
        }
        offset += 1
            + 8
            + 8 * (s.video.len() as u64)
            + 8
            + 8 * (s.audio.len() as u64)
            + 4
            + 4 * (s.text_tokens.len() as u64);
    }
    w.flush()?;
    Ok(offsets)
}

fn read_tensor<R: std::io::Read>(r: &mut CountingReader<R>, what: &str) -> Result<Tensor> {
    let l = r.read_u32(&format!("{what} length"))? as usize;
    let d = r.read_u32(&format!("{what} width"))? as usize;
    if l == 0 || d == 0 {
        return Err(Error::Format {
            offset: r.offset().saturating_sub(8),
            msg: format!("{what} tensor has zero extent {l}x{d}"),
        });
    }
    let mut data = Vec::with_capacity(l * d);
    for _ in 0..l * d {
        let at = r.offset();
        let v = r.read_f64(what)?;
        if !v.is_finite() {
            return Err(Error::Format {
                offset: at,
                msg: format!("non-finite {what} value {v}"),
            });
        }
        data.push(v);
    }
    Ok(Tensor::from_parts(vec![l, d], data))
}

/// Read a dataset, validating labels and the token range `[0, vocab)`.
pub fn read_dataset(path: &Path, vocab: usize) -> Result<Dataset> {
    let mut r = CountingReader::new(BufReader::new(File::open(path)?));
    let magic = r.read_bytes(8, "magic")?;
    if magic != DATA_MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad dataset magic".into() });
    }
    let version = r.read_u32("version")?;
    if version != DATA_VERSION {
        return Err(Error::Format {
            offset: 8,
            msg: format!("unsupported dataset version {version}"),
        });
    }
    let count = r.read_u32("sample count")?;
    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = r.offset();
        let label = r.read_u8("label")?;
        if label > 1 {
            return Err(Error::Format {
                offset: at,
                msg: format!("label {label} outside {{0, 1}}"),
            });
        }
        let video = read_tensor(&mut r, "video")?;
        let audio = read_tensor(&mut r, "audio")?;
        let n_tokens = r.read_u32("token count")? as usize;
        let mut text_tokens = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            let at = r.offset();
            let t = r.read_u32("token")?;
            if t as usize >= vocab {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("token id {t} out of range [0, {vocab})"),
                });
            }
            text_tokens.push(t);
        }
        samples.push(ModalityFeatures { video, audio, text_tokens, label });
    }
    Ok(Dataset { vocab, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate, SynthSpec};
    use tempfile::TempDir;

    fn small_dataset() -> Dataset {
        generate(&SynthSpec { n_samples: 10, ..SynthSpec::default() }).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("ds.bin");
        let ds = small_dataset();
        let offsets = write_dataset(&ds, &path).unwrap();
        assert_eq!(offsets.len(), 10);
        assert!(offsets.windows(2).all(|w| w[0] < w[1]));
        let loaded = read_dataset(&path, ds.vocab).unwrap();
        assert_eq!(ds, loaded);

        // Writing the loaded copy reproduces the file byte for byte.
        let path2 = dir.path().join("ds2.bin");
        write_dataset(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("ds.bin");
        write_dataset(&small_dataset(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[3] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        match read_dataset(&path, 32) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_token_reports_its_offset() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("ds.bin");
        let ds = small_dataset();
        write_dataset(&ds, &path).unwrap();
        // Reading with a vocabulary bound of 1 must trip on some token.
        match read_dataset(&path, 1) {
            Err(Error::Format { offset, msg }) => {
                assert!(offset > 16);
                assert!(msg.contains("out of range"), "message was: {msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("ds.bin");
        write_dataset(&small_dataset(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        match read_dataset(&path, 32) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
