//! Versioned binary model artifacts.
//!
//! Both model kinds serialize to one self-describing container so the
//! trainer, the reload endpoint, and on-disk storage all speak the same
//! format. A pad-to-size knob inflates the artifact with trailing zeros
//! without touching the parameters, which lets experiments scale transfer
//! and load cost independently of compute cost.
//!
//! Little-endian byte layout:
//!   magic      7 bytes  "ESBMDL1"
//!   version    u64
//!   kind       u8       0 = classifier, 1 = preference
//!   header     classifier: bucket_count u64, embedding_dim u64,
//!              category_count u64, ngram_order u64
//!              preference: layer_count u64, then each layer size u64
//!   params     f32 * N  classifier: embedding table then output layer
//!              preference: per layer, weights row-major then biases
//!   checksum   u64      FNV-1a over every byte above
//!   padding    zeros up to pad_to (checksum does not cover padding)

use crate::error::CoreError;
use crate::hash::fnv1a64;
use crate::model::classifier::{ClassifierConfig, TextClassifierModel};
use crate::model::preference::PreferenceNet;

pub const ARTIFACT_MAGIC: &[u8; 7] = b"ESBMDL1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Classifier,
    Preference,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Classifier => "classifier",
            ModelKind::Preference => "preference",
        }
    }

    fn tag(self) -> u8 {
        match self {
            ModelKind::Classifier => 0,
            ModelKind::Preference => 1,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classifier" => Ok(ModelKind::Classifier),
            "preference" => Ok(ModelKind::Preference),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

/// A parsed model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Classifier(TextClassifierModel),
    Preference(PreferenceNet),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Classifier(_) => ModelKind::Classifier,
            AnyModel::Preference(_) => ModelKind::Preference,
        }
    }
}

/// A serialized model: the full artifact bytes plus the parsed header
/// fields. `payload` includes any trailing padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub version: u64,
    pub kind: ModelKind,
    pub pad_to: usize,
    pub checksum: u64,
    payload: Vec<u8>,
}

impl ModelArtifact {
    pub fn bytes(&self) -> &[u8] {
        &self.payload
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.payload
    }

    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }
}

fn finish(mut buf: Vec<u8>, version: u64, kind: ModelKind, pad_to: usize) -> ModelArtifact {
    let checksum = fnv1a64(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    if buf.len() < pad_to {
        buf.resize(pad_to, 0);
    }
    ModelArtifact {
        version,
        kind,
        pad_to,
        checksum,
        payload: buf,
    }
}

/// Serialize a classifier. The artifact is `max(natural_size, pad_to)`
/// bytes long.
pub fn serialize_classifier(
    model: &TextClassifierModel,
    version: u64,
    pad_to: usize,
) -> ModelArtifact {
    let cfg = model.config;
    let mut buf = Vec::with_capacity(
        ARTIFACT_MAGIC.len()
            + 8
            + 1
            + 32
            + 4 * (model.embedding().len() + model.output().len())
            + 8,
    );
    buf.extend_from_slice(ARTIFACT_MAGIC);
    buf.extend_from_slice(&version.to_le_bytes());
    buf.push(ModelKind::Classifier.tag());
    for dim in [
        cfg.bucket_count,
        cfg.embedding_dim,
        cfg.category_count,
        cfg.ngram_order,
    ] {
        buf.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for &v in model.embedding().iter().chain(model.output()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    finish(buf, version, ModelKind::Classifier, pad_to)
}

/// Serialize a preference network. The artifact is `max(natural_size,
/// pad_to)` bytes long.
pub fn serialize_preference(net: &PreferenceNet, version: u64, pad_to: usize) -> ModelArtifact {
    let mut buf = Vec::with_capacity(
        ARTIFACT_MAGIC.len() + 8 + 1 + 8 * (net.sizes().len() + 1) + 4 * net.parameter_count() + 8,
    );
    buf.extend_from_slice(ARTIFACT_MAGIC);
    buf.extend_from_slice(&version.to_le_bytes());
    buf.push(ModelKind::Preference.tag());
    buf.extend_from_slice(&(net.sizes().len() as u64).to_le_bytes());
    for &s in net.sizes() {
        buf.extend_from_slice(&(s as u64).to_le_bytes());
    }
    for l in 0..net.sizes().len() - 1 {
        for &v in net.weights()[l].iter().chain(&net.biases()[l]) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    finish(buf, version, ModelKind::Preference, pad_to)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CoreError> {
        if self.pos + n > self.buf.len() {
            return Err(CoreError::Corrupt(format!(
                "artifact truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, CoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CoreError> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parse and checksum-verify an artifact. Trailing padding beyond the
/// checksum is ignored; it never alters the deserialized parameters.
pub fn deserialize(bytes: &[u8]) -> Result<(u64, AnyModel), CoreError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(ARTIFACT_MAGIC.len())? != ARTIFACT_MAGIC {
        return Err(CoreError::Corrupt("bad artifact magic".into()));
    }
    let version = c.u64()?;
    let kind_tag = c.take(1)?[0];

    let model = match kind_tag {
        0 => {
            let bucket_count = c.u64()? as usize;
            let embedding_dim = c.u64()? as usize;
            let category_count = c.u64()? as usize;
            let ngram_order = c.u64()? as usize;
            let config = ClassifierConfig {
                bucket_count,
                embedding_dim,
                category_count,
                ngram_order,
            };
            config
                .validate()
                .map_err(|e| CoreError::Corrupt(format!("classifier header: {e}")))?;
            let embedding = c.f32s(bucket_count * embedding_dim)?;
            let output = c.f32s(embedding_dim * category_count)?;
            AnyModel::Classifier(TextClassifierModel::from_parameters(
                config, embedding, output,
            )?)
        }
        1 => {
            let layer_count = c.u64()? as usize;
            if layer_count < 2 || layer_count > 64 {
                return Err(CoreError::Corrupt(format!(
                    "implausible layer count {layer_count}"
                )));
            }
            let mut sizes = Vec::with_capacity(layer_count);
            for _ in 0..layer_count {
                let s = c.u64()? as usize;
                if s == 0 || s > 1 << 24 {
                    return Err(CoreError::Corrupt(format!("implausible layer size {s}")));
                }
                sizes.push(s);
            }
            let mut weights = Vec::with_capacity(layer_count - 1);
            let mut biases = Vec::with_capacity(layer_count - 1);
            for l in 0..layer_count - 1 {
                weights.push(c.f32s(sizes[l + 1] * sizes[l])?);
                biases.push(c.f32s(sizes[l + 1])?);
            }
            AnyModel::Preference(PreferenceNet::from_parameters(sizes, weights, biases)?)
        }
        other => {
            return Err(CoreError::Corrupt(format!("unknown model kind tag {other}")));
        }
    };

    let content_end = c.pos;
    let stored = c.u64()?;
    let computed = fnv1a64(&bytes[..content_end]);
    if stored != computed {
        return Err(CoreError::Corrupt(format!(
            "checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"
        )));
    }
    // Anything after the checksum is padding and carries no information.
    Ok((version, model))
}
