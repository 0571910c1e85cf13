//! Binary model checkpoints: magic, a length-prefixed JSON header, then every
//! parameter block as little-endian f64 in registration order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodel::{GenSr, Mode, ModelConfig, Vocabulary};
use crate::params::ParamSet;
use crate::tensor::Mat;
use crate::training::{DiscConfig, DiscModel, TrainConfig};

const MODEL_MAGIC: &[u8; 8] = b"GSRMD001";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "paradigm", rename_all = "lowercase")]
pub enum Architecture {
    Gensr { model: ModelConfig, mode: Mode },
    Discriminative { model: DiscConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub cf_dim: usize,
    pub train: TrainConfig,
    pub vocab_tokens: Vec<String>,
    pub vocab_items: Vec<u64>,
    /// `(name, rows, cols)` per parameter block.
    pub blocks: Vec<(String, usize, usize)>,
}

pub enum Model {
    Gensr(GenSr),
    Disc(DiscModel),
}

impl Model {
    pub fn params(&self) -> &ParamSet {
        match self {
            Model::Gensr(m) => &m.params,
            Model::Disc(m) => &m.params,
        }
    }

    pub fn paradigm(&self) -> &'static str {
        match self {
            Model::Gensr(_) => "gensr",
            Model::Disc(_) => "discriminative",
        }
    }
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, train: &TrainConfig, vocab: &Vocabulary) -> Self {
        let (architecture, cf_dim) = match &model {
            Model::Gensr(m) => (Architecture::Gensr { model: m.cfg.clone(), mode: m.mode }, m.cf_dim),
            Model::Disc(m) => (Architecture::Discriminative { model: m.cfg.clone() }, m.cf_dim),
        };
        let blocks = model.params().iter().map(|(_, n, v)| (n.to_string(), v.rows(), v.cols())).collect();
        let header = CheckpointHeader {
            architecture,
            cf_dim,
            train: train.clone(),
            vocab_tokens: vocab.tokens().to_vec(),
            vocab_items: vocab.item_ids().to_vec(),
            blocks,
        };
        Self { header, model }
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_parts(self.header.vocab_tokens.clone(), self.header.vocab_items.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut w = Vec::with_capacity(16 + header.len() + 8 * self.model.params().scalar_count());
        w.extend_from_slice(MODEL_MAGIC);
        w.extend_from_slice(&(header.len() as u64).to_le_bytes());
        w.extend_from_slice(&header);
        for (_, _, v) in self.model.params().iter() {
            for x in v.data() {
                w.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(w)
    }

    /// Rebuilds the architecture from the header, then overwrites its freshly
    /// initialised parameters with the stored values.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.get(..8) != Some(MODEL_MAGIC.as_slice()) {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        let len = buf.get(8..16).ok_or_else(|| Error::Checkpoint("truncated header length".into()))?;
        let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
        let end = 16usize.checked_add(len).filter(|&e| e <= buf.len()).ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&buf[16..end])?;
        let body = &buf[end..];
        let scalars: usize = header.blocks.iter().map(|b| b.1 * b.2).sum();
        if body.len() != 8 * scalars {
            return Err(Error::Checkpoint(format!("body has {} bytes, header implies {}", body.len(), 8 * scalars)));
        }
        let mut floats = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut stored = ParamSet::new();
        for (name, r, c) in &header.blocks {
            stored.add(name.clone(), Mat::from_vec(*r, *c, floats.by_ref().take(r * c).collect()));
        }
        let vocab_size = header.vocab_tokens.len();
        let mut model = match &header.architecture {
            Architecture::Gensr { model, mode } => Model::Gensr(GenSr::new(model.clone(), *mode, vocab_size, header.cf_dim, 0)?),
            Architecture::Discriminative { model } => Model::Disc(DiscModel::new(model.clone(), vocab_size, header.cf_dim, 0)?),
        };
        let params = match &mut model {
            Model::Gensr(m) => &mut m.params,
            Model::Disc(m) => &mut m.params,
        };
        params.load_from(&stored).map_err(Error::Checkpoint)?;
        Ok(Self { header, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { width: 8, heads: 2, ffn: 16, enc_layers: 1, dec_layers: 1, max_history: 4, max_input: 96, positional: true }
    }

    #[test]
    fn gensr_and_disc_round_trip_exactly() {
        let vocab = Vocabulary::from_parts((0..30).map(|i| format!("t{i}")).collect(), vec![1, 2]);
        let g = GenSr::new(tiny(), Mode::Rerank, vocab.len(), 8, 7).unwrap();
        let d = DiscModel::new(DiscConfig::matched(&tiny(), vocab.len(), 8, 5000).unwrap(), vocab.len(), 8, 7).unwrap();
        for m in [Model::Gensr(g), Model::Disc(d)] {
            let ck = Checkpoint::new(m, &TrainConfig::default(), &vocab);
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back.header, ck.header);
            assert_eq!(back.model.params().iter().map(|p| p.2.clone()).collect::<Vec<_>>(), ck.model.params().iter().map(|p| p.2.clone()).collect::<Vec<_>>());
            assert_eq!(back.vocabulary(), vocab);
            assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        }
        assert!(Checkpoint::from_bytes(b"GSRCF001").is_err());
    }
}
