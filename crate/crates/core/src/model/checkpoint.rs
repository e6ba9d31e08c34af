//! Checkpoint directories.
//!
//! `model.ckpt` layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "WLACCKPT"
//! version      u32       currently 1
//! header_len   u32       byte length of the JSON header
//! header       JSON      config, has_mt, vocabulary hashes, tensor table
//! data         f64 LE    tensors back to back, in table order
//! ```
//!
//! Next to it live `vocab.txt` and, for sub-word models, `bpe.merges` and
//! `bpe.vocab`. Loading recomputes the vocabulary hashes and refuses files
//! that do not match the header.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{BpeModel, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tensor};

use super::config::ModelConfig;
use super::input::Codec;
use super::joint::JointModel;

const MAGIC: &[u8; 8] = b"WLACCKPT";
const VERSION: u32 = 1;

pub const MODEL_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const MERGES_FILE: &str = "bpe.merges";
pub const PIECES_FILE: &str = "bpe.vocab";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    has_mt: bool,
    vocab_hash: String,
    bpe_hash: Option<String>,
    tensors: Vec<TensorEntry>,
}

/// A model with the vocabularies it was trained on.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub model: JointModel,
    pub codec: Codec,
}

fn bpe_hash(bpe: &BpeModel) -> String {
    let mut h = Sha256::new();
    h.update(bpe.merges_text().as_bytes());
    h.update(bpe.vocab().hash().as_bytes());
    hex::encode(h.finalize())
}

/// SHA-256 of a file, hex encoded.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn encode_checkpoint(model: &JointModel, codec: &Codec) -> Result<Vec<u8>> {
    let params = model.params();
    let header = Header {
        config: model.config().clone(),
        has_mt: model.has_mt(),
        vocab_hash: codec.vocab.hash(),
        bpe_hash: codec.bpe.as_ref().map(bpe_hash),
        tensors: params
            .iter()
            .map(|(_, name, t)| TensorEntry {
                name: name.to_owned(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header.len() + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, _, t) in params.iter() {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("file is truncated".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().expect("4 bytes")))
}

fn decode_checkpoint(mut bytes: &[u8]) -> Result<(Header, ParamStore)> {
    if take(&mut bytes, 8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut bytes)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let header_len = read_u32(&mut bytes)? as usize;
    let header: Header = serde_json::from_slice(take(&mut bytes, header_len)?)?;
    let mut store = ParamStore::new();
    for entry in &header.tensors {
        let raw = take(&mut bytes, entry.rows * entry.cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.add(entry.name.clone(), Tensor::from_vec(entry.rows, entry.cols, data));
    }
    if !bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len())));
    }
    Ok((header, store))
}

impl ModelBundle {
    pub fn new(model: JointModel, codec: Codec) -> Self {
        Self { model, codec }
    }

    pub fn model_path(dir: impl AsRef<Path>) -> PathBuf {
        dir.as_ref().join(MODEL_FILE)
    }

    /// Writes the checkpoint and vocabularies; returns the model file hash.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<String> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.codec.vocab.save(dir.join(VOCAB_FILE))?;
        if let Some(bpe) = &self.codec.bpe {
            bpe.save(dir.join(MERGES_FILE), dir.join(PIECES_FILE))?;
        }
        let bytes = encode_checkpoint(&self.model, &self.codec)?;
        let path = Self::model_path(dir);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = Self::model_path(dir);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (header, store) = decode_checkpoint(&bytes)?;
        let vocab = Vocabulary::load(dir.join(VOCAB_FILE))?;
        if vocab.hash() != header.vocab_hash {
            return Err(Error::Integrity(format!(
                "{} does not match the vocabulary the checkpoint was trained with",
                dir.join(VOCAB_FILE).display()
            )));
        }
        let bpe = match &header.bpe_hash {
            Some(expected) => {
                let bpe = BpeModel::load(dir.join(MERGES_FILE), dir.join(PIECES_FILE))?;
                if &bpe_hash(&bpe) != expected {
                    return Err(Error::Integrity(format!(
                        "sub-word model in {} does not match the checkpoint",
                        dir.display()
                    )));
                }
                Some(bpe)
            }
            None => None,
        };
        if header.config.vocab_size != vocab.len() {
            return Err(Error::Integrity(format!(
                "checkpoint expects {} vocabulary entries, found {}",
                header.config.vocab_size,
                vocab.len()
            )));
        }
        let mut model = JointModel::new(header.config, 0, header.has_mt)?;
        if model.params().len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                store.len(),
                model.params().len()
            )));
        }
        model.load_params_from(&store)?;
        Ok(Self {
            model,
            codec: Codec::new(vocab, bpe),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encode_input, Arch};

    fn bundle(arch: Arch) -> ModelBundle {
        let vocab = Vocabulary::new(["ab", "cd", "step"], "abcdepst".chars());
        let bpe = (arch == Arch::AioeBpe).then(|| crate::corpus::learn_bpe(&crate::corpus::count_words(["step", "ab", "cd"]), 3));
        let pieces = bpe.as_ref().map_or(0, |b| b.vocab().len());
        let model = JointModel::new(ModelConfig::micro(arch, vocab.len(), pieces), 5, true).unwrap();
        ModelBundle::new(model, Codec::new(vocab, bpe))
    }

    #[test]
    fn round_trip_preserves_parameters() {
        for arch in [Arch::Aioe, Arch::AioeBpe] {
            let dir = tempfile::tempdir().unwrap();
            let b = bundle(arch);
            let hash = b.save(dir.path()).unwrap();
            assert_eq!(hash, file_hash(dir.path().join(MODEL_FILE)).unwrap());
            let loaded = ModelBundle::load(dir.path()).unwrap();
            assert_eq!(loaded.model.params().checksum(), b.model.params().checksum());
            assert_eq!(loaded.model.config(), b.model.config());
            assert!(loaded.model.has_mt());
        }
    }

    #[test]
    fn stripped_checkpoint_is_smaller_and_equivalent() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle(Arch::Aioe);
        b.save(dir.path().join("full")).unwrap();
        let stripped = ModelBundle::new(b.model.strip_decoder(), b.codec.clone());
        stripped.save(dir.path().join("stripped")).unwrap();
        let size = |d: &str| fs::metadata(dir.path().join(d).join(MODEL_FILE)).unwrap().len();
        assert!(size("stripped") < size("full"));
        let loaded = ModelBundle::load(dir.path().join("stripped")).unwrap();
        assert!(!loaded.model.has_mt());
        let ex = crate::datagen::WlacExample {
            source: vec!["ab".into()],
            left_context: vec![],
            right_context: vec!["cd".into()],
            typed: "s".into(),
            label: "step".into(),
            full_target: vec!["step".into(), "cd".into()],
            pair_id: "1".into(),
        };
        let x = encode_input(&ex, &b.codec.vocab, 32).unwrap();
        assert_eq!(loaded.model.forward_wlac(&x), b.model.forward_wlac(&x));
    }

    #[test]
    fn vocabulary_mismatch_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        bundle(Arch::Aioe).save(dir.path()).unwrap();
        Vocabulary::new(["ab", "cd", "stop"], "abcdepst".chars())
            .save(dir.path().join(VOCAB_FILE))
            .unwrap();
        assert!(matches!(ModelBundle::load(dir.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        bundle(Arch::Aioe).save(dir.path()).unwrap();
        let path = dir.path().join(MODEL_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(ModelBundle::load(dir.path()), Err(Error::Checkpoint(_))));
        fs::write(&path, b"NOTACKPTxxxxxxxx").unwrap();
        assert!(matches!(ModelBundle::load(dir.path()), Err(Error::Checkpoint(_))));
    }
}
