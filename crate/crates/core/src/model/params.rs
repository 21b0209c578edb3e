//! Path-keyed parameter storage, seeded initialization, and the binary
//! checkpoint format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, CountingReader};
use crate::error::{Error, Result};
use crate::model::config::{Init, ModelConfig};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;

const CKPT_MAGIC: &[u8; 8] = b"MMSDPARM";
const CKPT_VERSION: u32 = 1;

/// Default initialization seed used by the CLI and presets.
pub const DEFAULT_INIT_SEED: u64 = 3;

/// Every learnable weight, keyed by stable path names.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    tensors: BTreeMap<String, Tensor>,
}

/// Parameter vars bound onto one graph, keyed by path.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Wrap an externally bound path -> var map (e.g. from a gradient check).
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        BoundParams { vars }
    }

    pub fn get(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unbound parameter {path}")))
    }
}

impl ParameterStore {
    /// Seed-deterministic initialization: uniform `+/- sqrt(6/(fan_in+fan_out))`
    /// for weight matrices, zeros for biases, ones for layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for spec in config.param_specs() {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Uniform { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
                }
                Init::Zero => vec![0.0; n],
                Init::One => vec![1.0; n],
            };
            tensors.insert(spec.path, Tensor::from_parts(spec.shape, data));
        }
        Ok(ParameterStore { tensors })
    }

    /// Check that exactly the declared paths exist, with matching shapes.
    pub fn validate_against(&self, config: &ModelConfig) -> Result<()> {
        let specs = config.param_specs();
        if specs.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "parameter count {} does not match config ({} declared)",
                self.tensors.len(),
                specs.len()
            )));
        }
        for spec in specs {
            let t = self.tensors.get(&spec.path).ok_or_else(|| {
                Error::Config(format!("missing parameter {}", spec.path))
            })?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.path,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.tensors
            .get(path)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {path}")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(path)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {path}")))
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar coordinate count.
    pub fn coord_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Bind every parameter onto `g` in sorted path order.
    pub fn bind(&self, g: &mut Graph) -> Result<BoundParams> {
        let mut vars = BTreeMap::new();
        for (path, t) in &self.tensors {
            vars.insert(path.clone(), g.param(path, t.clone())?);
        }
        Ok(BoundParams { vars })
    }

    /// Write the checkpoint file. Round trips are bit-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CKPT_MAGIC)?;
        binio::write_u32(&mut w, CKPT_VERSION)?;
        binio::write_u32(&mut w, self.tensors.len() as u32)?;
        for (name, t) in &self.tensors {
            let bytes = name.as_bytes();
            binio::write_u16(&mut w, bytes.len() as u16)?;
            w.write_all(bytes)?;
            binio::write_u8(&mut w, t.rank() as u8)?;
            for &e in t.shape() {
                binio::write_u32(&mut w, e as u32)?;
            }
            for &v in t.data() {
                binio::write_f64(&mut w, v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = CountingReader::new(BufReader::new(File::open(path)?));
        let magic = r.read_bytes(8, "magic")?;
        if magic != CKPT_MAGIC {
            return Err(Error::Format { offset: 0, msg: "bad checkpoint magic".into() });
        }
        let version = r.read_u32("version")?;
        if version != CKPT_VERSION {
            return Err(Error::Format {
                offset: 8,
                msg: format!("unsupported checkpoint version {version}"),
            });
        }
        let count = r.read_u32("entry count")?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.read_u16("path length")? as usize;
            let at = r.offset();
            let name_bytes = r.read_bytes(name_len, "path")?;
            let name = String::from_utf8(name_bytes).map_err(|_| Error::Format {
                offset: at,
                msg: "parameter path is not UTF-8".into(),
            })?;
            let rank = r.read_u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u32("extent")? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let at = r.offset();
                let v = r.read_f64("value")?;
                if !v.is_finite() {
                    return Err(Error::Format {
                        offset: at,
                        msg: format!("non-finite value in parameter {name}"),
                    });
                }
                data.push(v);
            }
            if tensors.insert(name.clone(), Tensor::from_parts(shape, data)).is_some() {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("duplicate parameter {name}"),
                });
            }
        }
        Ok(ParameterStore { tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let cfg = ModelConfig::toy();
        let a = ParameterStore::init(&cfg, 9).unwrap();
        let b = ParameterStore::init(&cfg, 9).unwrap();
        assert_eq!(a, b);
        let c = ParameterStore::init(&cfg, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn biases_start_at_zero_and_gains_at_one() {
        let cfg = ModelConfig::toy();
        let store = ParameterStore::init(&cfg, 1).unwrap();
        assert!(store.get("head.b").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(store.get("dec.0.ff.b1").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(store.get("dec.0.ln1.gain").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn weight_means_are_statistically_centered() {
        let cfg = ModelConfig::default();
        let store = ParameterStore::init(&cfg, 4).unwrap();
        for spec in cfg.param_specs() {
            if let Init::Uniform { fan_in, fan_out } = spec.init {
                let t = store.get(&spec.path).unwrap();
                let n = t.len() as f64;
                let mean = t.data().iter().sum::<f64>() / n;
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let sigma = limit / 3f64.sqrt();
                assert!(
                    mean.abs() < 3.0 * sigma / n.sqrt(),
                    "{}: mean {mean} vs bound {}",
                    spec.path,
                    3.0 * sigma / n.sqrt()
                );
            }
        }
    }

    #[test]
    fn store_validates_against_its_config() {
        let cfg = ModelConfig::toy();
        let store = ParameterStore::init(&cfg, 1).unwrap();
        store.validate_against(&cfg).unwrap();
        let other = ModelConfig::default();
        assert!(store.validate_against(&other).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("params.bin");
        let cfg = ModelConfig::toy();
        let store = ParameterStore::init(&cfg, 3).unwrap();
        store.save(&path).unwrap();
        let loaded = ParameterStore::load(&path).unwrap();
        assert_eq!(store, loaded);
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("params.bin");
        let store = ParameterStore::init(&ModelConfig::toy(), 3).unwrap();
        store.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match ParameterStore::load(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_checkpoint_reports_offset() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("params.bin");
        let store = ParameterStore::init(&ModelConfig::toy(), 3).unwrap();
        store.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match ParameterStore::load(&path) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
