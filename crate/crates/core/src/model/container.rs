//! CVW weight containers.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 0..4         | magic `CVW1`                              |
//! | 4..8         | u32 version, always 1                     |
//! | 8..12        | u32 metadata length `L`                   |
//! | 12..12+L     | UTF-8 JSON metadata                       |
//! | 12+L..       | tensor blobs, raw f32 LE, metadata order  |
//!
//! The metadata object carries `input_shape`, `layers`, `preprocessing`,
//! an optional `class_labels` and the `tensors` table of `{name, shape}`.
//! [`write_container`] always emits compact JSON with keys in that order, so
//! writing a parsed canonical file reproduces it byte for byte.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::arch::{ArchSpec, LayerKind, LayerSpec};
use crate::error::{ContainerError, Result};
use crate::imaging::Preprocessing;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CVW1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightContainer {
    pub version: u32,
    pub arch: ArchSpec,
    pub preprocessing: Preprocessing,
    /// Tensors in blob order.
    pub tensors: IndexMap<String, Tensor>,
}

impl WeightContainer {
    /// Assembles a container and checks that every bound tensor exists with
    /// the shape its layer requires.
    pub fn new(
        arch: ArchSpec,
        preprocessing: Preprocessing,
        tensors: IndexMap<String, Tensor>,
    ) -> Result<Self, ContainerError> {
        let c = Self {
            version: VERSION,
            arch,
            preprocessing,
            tensors,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ContainerError> {
        if self.version != VERSION {
            return Err(ContainerError::UnsupportedVersion(self.version));
        }
        self.preprocessing
            .validate()
            .map_err(|e| ContainerError::Schema(e.to_string()))?;
        let reqs = self
            .arch
            .tensor_requirements()
            .map_err(|e| ContainerError::Schema(e.to_string()))?;
        for req in reqs {
            let Some(t) = self.tensors.get(&req.name) else {
                return Err(ContainerError::Schema(format!(
                    "layer {} binds `{}` but the container has no such tensor",
                    req.layer, req.name
                )));
            };
            if t.shape() != req.shape.as_slice() {
                return Err(ContainerError::ShapeMismatch {
                    name: req.name,
                    layer: req.layer,
                    expected: req.shape,
                    actual: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Ok(parse_container(&bytes)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, write_container(self))?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    input_shape: [usize; 3],
    layers: Vec<RawLayer>,
    preprocessing: Preprocessing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_labels: Option<Vec<String>>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    kind: String,
    #[serde(default)]
    params: Map<String, Value>,
    #[serde(default)]
    weight_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl From<&LayerSpec> for RawLayer {
    fn from(layer: &LayerSpec) -> Self {
        let mut params = Map::new();
        match layer.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                params.insert("out_channels".into(), out_channels.into());
                params.insert("kernel".into(), kernel.into());
                params.insert("stride".into(), stride.into());
                params.insert("padding".into(), padding.into());
            }
            LayerKind::MaxPool => {
                params.insert("window".into(), 2.into());
                params.insert("stride".into(), 2.into());
            }
            LayerKind::Dense { out_features } => {
                params.insert("out_features".into(), out_features.into());
            }
            LayerKind::Relu | LayerKind::Flatten | LayerKind::Softmax => {}
        }
        RawLayer {
            kind: layer.kind.name().to_string(),
            params,
            weight_names: layer.weight_names.clone(),
        }
    }
}

impl TryFrom<RawLayer> for LayerSpec {
    type Error = ContainerError;

    fn try_from(raw: RawLayer) -> Result<Self, ContainerError> {
        let get = |key: &str| -> Result<usize, ContainerError> {
            raw.params
                .get(key)
                .and_then(Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| {
                    ContainerError::Schema(format!(
                        "{} layer needs a non-negative integer param `{key}`",
                        raw.kind
                    ))
                })
        };
        let allow = |keys: &[&str]| -> Result<(), ContainerError> {
            match raw.params.keys().find(|k| !keys.contains(&k.as_str())) {
                Some(k) => Err(ContainerError::Schema(format!(
                    "unknown param `{k}` on {} layer",
                    raw.kind
                ))),
                None => Ok(()),
            }
        };
        let kind = match raw.kind.as_str() {
            "conv" => {
                allow(&["out_channels", "kernel", "stride", "padding"])?;
                LayerKind::Conv {
                    out_channels: get("out_channels")?,
                    kernel: get("kernel")?,
                    stride: get("stride")?,
                    padding: get("padding")?,
                }
            }
            "maxpool" => {
                allow(&["window", "stride"])?;
                for key in ["window", "stride"] {
                    if raw.params.contains_key(key) && get(key)? != 2 {
                        return Err(ContainerError::Schema(format!(
                            "maxpool supports only window=2 stride=2 (got {key}={})",
                            raw.params[key]
                        )));
                    }
                }
                LayerKind::MaxPool
            }
            "dense" => {
                allow(&["out_features"])?;
                LayerKind::Dense {
                    out_features: get("out_features")?,
                }
            }
            "relu" => {
                allow(&[])?;
                LayerKind::Relu
            }
            "flatten" => {
                allow(&[])?;
                LayerKind::Flatten
            }
            "softmax" => {
                allow(&[])?;
                LayerKind::Softmax
            }
            other => {
                return Err(ContainerError::Schema(format!(
                    "unknown layer kind `{other}`"
                )));
            }
        };
        Ok(LayerSpec {
            kind,
            weight_names: raw.weight_names,
        })
    }
}

/// Decodes and fully validates a CVW v1 container.
pub fn parse_container(bytes: &[u8]) -> Result<WeightContainer, ContainerError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(ContainerError::Corrupt(format!(
            "header truncated at {} bytes",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let meta_end = HEADER_LEN
        .checked_add(meta_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| {
            ContainerError::Corrupt(format!(
                "metadata length {meta_len} runs past end of file ({} bytes)",
                bytes.len()
            ))
        })?;
    let meta_text = std::str::from_utf8(&bytes[HEADER_LEN..meta_end])
        .map_err(|e| ContainerError::Corrupt(format!("metadata is not UTF-8: {e}")))?;
    let meta: Metadata = serde_json::from_str(meta_text)
        .map_err(|e| ContainerError::Schema(format!("metadata: {e}")))?;

    let arch = ArchSpec {
        input_shape: meta.input_shape,
        layers: meta
            .layers
            .into_iter()
            .map(LayerSpec::try_from)
            .collect::<Result<_, _>>()?,
        class_labels: meta.class_labels,
    };

    let mut expected_bytes = 0usize;
    for entry in &meta.tensors {
        if entry.shape.is_empty()
            || entry.shape.len() > crate::tensor::MAX_RANK
            || entry.shape.contains(&0)
        {
            return Err(ContainerError::Schema(format!(
                "tensor `{}` has invalid shape {:?}",
                entry.name, entry.shape
            )));
        }
        let count = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| {
                ContainerError::Corrupt(format!("tensor `{}` is too large", entry.name))
            })?;
        expected_bytes = expected_bytes
            .checked_add(count)
            .ok_or_else(|| ContainerError::Corrupt("tensor table is too large".into()))?;
    }
    let blob = &bytes[meta_end..];
    if blob.len() != expected_bytes {
        return Err(ContainerError::Corrupt(format!(
            "tensor data is {} bytes, declared shapes need {expected_bytes}",
            blob.len()
        )));
    }

    let mut tensors = IndexMap::with_capacity(meta.tensors.len());
    let mut offset = 0;
    for entry in meta.tensors {
        let count: usize = entry.shape.iter().product();
        let raw = &blob[offset..offset + 4 * count];
        offset += 4 * count;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(ContainerError::Corrupt(format!(
                "tensor `{}` has a non-finite value at element {pos}",
                entry.name
            )));
        }
        let tensor =
            Tensor::new(entry.shape, data).map_err(|e| ContainerError::Corrupt(e.to_string()))?;
        if tensors.insert(entry.name.clone(), tensor).is_some() {
            return Err(ContainerError::Schema(format!(
                "tensor `{}` declared twice",
                entry.name
            )));
        }
    }

    let container = WeightContainer {
        version,
        arch,
        preprocessing: meta.preprocessing,
        tensors,
    };
    container.validate()?;
    Ok(container)
}

/// Canonical serialization: compact JSON metadata, blobs in table order.
pub fn write_container(container: &WeightContainer) -> Vec<u8> {
    let meta = Metadata {
        input_shape: container.arch.input_shape,
        layers: container.arch.layers.iter().map(RawLayer::from).collect(),
        preprocessing: container.preprocessing.clone(),
        class_labels: container.arch.class_labels.clone(),
        tensors: container
            .tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let blob_len: usize = container.tensors.values().map(|t| 4 * t.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + blob_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&container.version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in container.tensors.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ChannelOrder;

    fn two_layer() -> WeightContainer {
        let arch = ArchSpec {
            input_shape: [1, 2, 2],
            layers: vec![
                LayerSpec::conv("c1", 2, 1, 1, 0),
                LayerSpec::flatten(),
                LayerSpec::dense("fc", 2),
                LayerSpec::softmax(),
            ],
            class_labels: Some(vec!["left".into(), "right".into()]),
        };
        let mut tensors = IndexMap::new();
        tensors.insert(
            "c1.weight".into(),
            Tensor::new(vec![2, 1, 1, 1], vec![1.0, -1.0]).unwrap(),
        );
        tensors.insert(
            "c1.bias".into(),
            Tensor::new(vec![2], vec![0.5, 0.25]).unwrap(),
        );
        tensors.insert(
            "fc.weight".into(),
            Tensor::from_fn(vec![2, 8], |i| i as f32).unwrap(),
        );
        tensors.insert(
            "fc.bias".into(),
            Tensor::new(vec![2], vec![0.0, 1.0]).unwrap(),
        );
        WeightContainer::new(
            arch,
            Preprocessing::identity(2, 2, ChannelOrder::Rgb),
            tensors,
        )
        .unwrap()
    }

    #[test]
    fn layout_is_header_metadata_then_blobs() {
        let c = two_layer();
        let bytes = write_container(&c);
        assert_eq!(&bytes[..4], b"CVW1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let meta: Value = serde_json::from_slice(&bytes[12..12 + meta_len]).unwrap();
        let names: Vec<&str> = meta["tensors"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t["name"].as_str().unwrap())
            .collect();
        assert_eq!(names, ["c1.weight", "c1.bias", "fc.weight", "fc.bias"]);
        // 2 + 2 + 16 + 2 floats
        assert_eq!(bytes.len(), 12 + meta_len + 22 * 4);
        let blobs = &bytes[12 + meta_len..];
        assert_eq!(&blobs[..4], &1.0f32.to_le_bytes());
        assert_eq!(&blobs[4..8], &(-1.0f32).to_le_bytes());
        assert_eq!(&blobs[8..12], &0.5f32.to_le_bytes());
        assert_eq!(&blobs[20..24], &1.0f32.to_le_bytes()); // fc.weight[1]
        assert_eq!(&blobs[84..88], &1.0f32.to_le_bytes()); // fc.bias[1]
    }

    #[test]
    fn round_trips() {
        let c = two_layer();
        let bytes = write_container(&c);
        let parsed = parse_container(&bytes).unwrap();
        assert_eq!(parsed, c);
        assert_eq!(write_container(&parsed), bytes);
        assert_eq!(write_container(&c), bytes);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = write_container(&two_layer());
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            parse_container(&bad),
            Err(ContainerError::BadMagic)
        ));
        assert!(matches!(
            parse_container(b"CV"),
            Err(ContainerError::BadMagic)
        ));
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            parse_container(&bytes),
            Err(ContainerError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_corrupt() {
        let bytes = write_container(&two_layer());
        for cut in [5, 11, 20, bytes.len() - 1] {
            assert!(
                matches!(
                    parse_container(&bytes[..cut]),
                    Err(ContainerError::Corrupt(_))
                ),
                "cut at {cut}"
            );
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            parse_container(&longer),
            Err(ContainerError::Corrupt(_))
        ));
    }

    #[test]
    fn non_finite_weights_are_corrupt() {
        let mut bytes = write_container(&two_layer());
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            parse_container(&bytes),
            Err(ContainerError::Corrupt(_))
        ));
    }

    #[test]
    fn missing_tensor_is_schema_error() {
        let mut c = two_layer();
        c.tensors.shift_remove("fc.bias");
        let bytes = write_container(&c);
        match parse_container(&bytes) {
            Err(ContainerError::Schema(msg)) => assert!(msg.contains("fc.bias"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_shape_is_shape_mismatch() {
        let mut c = two_layer();
        c.tensors["fc.weight"] = Tensor::zeros(vec![8, 2]).unwrap();
        let bytes = write_container(&c);
        assert!(matches!(
            parse_container(&bytes),
            Err(ContainerError::ShapeMismatch { layer: 2, .. })
        ));
    }

    /// Builds a file the way an external exporter would: hand-written JSON
    /// with its own whitespace and key order.
    #[test]
    fn accepts_hand_assembled_file() {
        let meta = r#"{
            "tensors": [{"name": "k", "shape": [1, 1, 1, 1]}, {"name": "b", "shape": [1]},
                        {"name": "w", "shape": [2, 1]}, {"name": "v", "shape": [2]}],
            "input_shape": [1, 1, 1],
            "preprocessing": {"resize": [1, 1], "channel_order": "BGR",
                              "mean": [103.939, 116.779, 123.68], "scale": [1.0, 1.0, 1.0]},
            "layers": [
                {"kind": "conv", "params": {"out_channels": 1, "kernel": 1, "stride": 1, "padding": 0},
                 "weight_names": ["k", "b"]},
                {"kind": "relu", "params": {}, "weight_names": []},
                {"kind": "maxpool", "params": {"window": 2, "stride": 2}, "weight_names": []},
                {"kind": "flatten", "params": {}, "weight_names": []},
                {"kind": "dense", "params": {"out_features": 2}, "weight_names": ["w", "v"]},
                {"kind": "softmax", "params": {}, "weight_names": []}
            ]
        }"#;
        let floats = [2.0f32, 0.5, 1.0, -1.0, 0.0, 0.0];
        let mut bytes = b"CVW1".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        bytes.extend_from_slice(meta.as_bytes());
        for f in floats {
            bytes.extend_from_slice(&f.to_le_bytes());
        }
        // maxpool on a 1×1 map is rejected by the shape chain
        assert!(matches!(
            parse_container(&bytes),
            Err(ContainerError::Schema(_))
        ));

        let meta = meta.replace(
            r#"{"kind": "maxpool", "params": {"window": 2, "stride": 2}, "weight_names": []},"#,
            "",
        );
        let mut bytes = b"CVW1".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        bytes.extend_from_slice(meta.as_bytes());
        for f in floats {
            bytes.extend_from_slice(&f.to_le_bytes());
        }
        let c = parse_container(&bytes).unwrap();
        assert_eq!(c.preprocessing.channel_order, ChannelOrder::Bgr);
        assert_eq!(c.tensors["w"].data(), &[1.0, -1.0]);
        assert_eq!(c.arch.conv_count(), 1);
        // canonical rewrite is stable from then on
        let canonical = write_container(&c);
        assert_eq!(
            write_container(&parse_container(&canonical).unwrap()),
            canonical
        );
    }

    #[test]
    fn rejects_unknown_layer_kind_and_params() {
        let c = two_layer();
        let bytes = write_container(&c);
        let text = String::from_utf8_lossy(&bytes).into_owned();
        for (from, to) in [
            (r#""kind":"flatten""#, r#""kind":"reshape""#),
            (r#""out_features":2"#, r#""out_features":2,"dropout":1"#),
        ] {
            let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
            let meta = std::str::from_utf8(&bytes[12..12 + meta_len]).unwrap();
            assert!(text.contains(from));
            let new_meta = meta.replace(from, to);
            let mut out = bytes[..8].to_vec();
            out.extend_from_slice(&(new_meta.len() as u32).to_le_bytes());
            out.extend_from_slice(new_meta.as_bytes());
            out.extend_from_slice(&bytes[12 + meta_len..]);
            assert!(matches!(
                parse_container(&out),
                Err(ContainerError::Schema(_))
            ));
        }
    }
}
