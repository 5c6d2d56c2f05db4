//! Binary checkpoint: fixed little-endian header, layer layout table, then
//! the parameter vector and the physical-parameter vector as `f64` LE.
//! A `.txt` sidecar next to the binary file repeats the network layout as key=value.

use std::fs;
use std::path::{Path, PathBuf};

use super::{NetworkParams, NetworkSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NSCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingPhase {
    Initialized,
    Discovery,
    Pretrained,
    Finetuned,
}

impl TrainingPhase {
    fn tag(self) -> u8 {
        match self {
            TrainingPhase::Initialized => 0,
            TrainingPhase::Discovery => 1,
            TrainingPhase::Pretrained => 2,
            TrainingPhase::Finetuned => 3,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => TrainingPhase::Initialized,
            1 => TrainingPhase::Discovery,
            2 => TrainingPhase::Pretrained,
            3 => TrainingPhase::Finetuned,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainingPhase::Initialized => "initialized",
            TrainingPhase::Discovery => "discovery",
            TrainingPhase::Pretrained => "pretrained",
            TrainingPhase::Finetuned => "finetuned",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    pub physical: Vec<f64>,
    pub phase: TrainingPhase,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".txt");
    PathBuf::from(name)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.spec;
        let layout = s.layout();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [s.input_dim, s.output_dim, s.hidden_layers, s.hidden_width] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(s.skip_connection as u8);
        out.push(self.phase.tag());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.params.values().len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.physical.len() as u64).to_le_bytes());
        out.extend_from_slice(&(layout.len() as u32).to_le_bytes());
        for layer in &layout {
            out.extend_from_slice(&(layer.fan_in as u32).to_le_bytes());
            out.extend_from_slice(&(layer.fan_out as u32).to_le_bytes());
            out.extend_from_slice(&(layer.weights.start as u64).to_le_bytes());
            out.extend_from_slice(&(layer.bias.start as u64).to_le_bytes());
        }
        for v in self.params.values().iter().chain(&self.physical) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |detail: &str| Error::Format {
            path: origin.to_string(),
            detail: detail.to_string(),
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated magic"))? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        }
        let skip = r.u8().ok_or_else(|| bad("truncated header"))? != 0;
        let phase = TrainingPhase::from_tag(r.u8().ok_or_else(|| bad("truncated header"))?)
            .ok_or_else(|| bad("unknown phase tag"))?;
        r.take(2).ok_or_else(|| bad("truncated header"))?;
        let n_params = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let n_physical = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let spec = NetworkSpec::new(dims[0], dims[1], dims[2], dims[3], skip)?;
        let layout = spec.layout();
        let n_layers = r.u32().ok_or_else(|| bad("truncated layout"))? as usize;
        if n_layers != layout.len() || n_params != spec.param_count() {
            return Err(bad("layout does not match the network spec"));
        }
        for layer in &layout {
            let fan_in = r.u32().ok_or_else(|| bad("truncated layout"))? as usize;
            let fan_out = r.u32().ok_or_else(|| bad("truncated layout"))? as usize;
            let w = r.u64().ok_or_else(|| bad("truncated layout"))? as usize;
            let b = r.u64().ok_or_else(|| bad("truncated layout"))? as usize;
            if (fan_in, fan_out, w, b) != (layer.fan_in, layer.fan_out, layer.weights.start, layer.bias.start) {
                return Err(bad("layout does not match the network spec"));
            }
        }
        let mut values = Vec::with_capacity(n_params + n_physical);
        for _ in 0..n_params + n_physical {
            values.push(r.f64().ok_or_else(|| bad("truncated parameter block"))?);
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let physical = values.split_off(n_params);
        Ok(Self {
            params: NetworkParams::from_values(&spec, values)?,
            spec,
            physical,
            phase,
        })
    }

    pub fn sidecar_text(&self) -> String {
        let s = &self.spec;
        let physical: Vec<String> = self.physical.iter().map(|v| v.to_string()).collect();
        format!(
            "network.input_dim = {}\nnetwork.output_dim = {}\nnetwork.hidden_layers = {}\nnetwork.hidden_width = {}\nnetwork.skip = {}\nparams.count = {}\nphase = {}\nphysical = {}\n",
            s.input_dim,
            s.output_dim,
            s.hidden_layers,
            s.hidden_width,
            s.skip_connection,
            s.param_count(),
            self.phase.name(),
            physical.join(",")
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        fs::write(sidecar_path(path), self.sidecar_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_network;

    #[test]
    fn save_and_load() {
        let spec = NetworkSpec::new(1, 2, 2, 4, true).unwrap();
        let ck = Checkpoint {
            params: init_network(&spec, 9),
            spec,
            physical: vec![0.7, 12.5],
            phase: TrainingPhase::Pretrained,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        let text = fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(text.contains("phase = pretrained"));
    }

    #[test]
    fn rejects_corrupt_bytes() {
        let spec = NetworkSpec::new(2, 2, 1, 3, false).unwrap();
        let ck = Checkpoint {
            params: init_network(&spec, 1),
            spec,
            physical: vec![],
            phase: TrainingPhase::Discovery,
        };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], "x").is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong, "x").is_err());
        // little-endian layout: input_dim lives at offset 8
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
    }
}
