//! Checkpoint archive: every parameter array keyed
//! `<network>/<layer>/<param>`, the architecture and training configuration
//! that produced them, and the latest class weights. Serialized as one JSON
//! document; `serde_json` round-trips `f64` exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use selrep_core::net::{ArchConfig, BackboneKind, NetworkBundle};
use selrep_core::select::ClassWeights;
use selrep_core::train::TrainConfig;

use crate::{io_err, json_err, CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arch: ArchConfig,
    pub in_shape: [usize; 3],
    pub n_classes: usize,
    pub train_config: TrainConfig,
    #[serde(default)]
    pub class_weights: Option<ClassWeights>,
    pub params: BTreeMap<String, ParamArray>,
}

impl Checkpoint {
    pub fn from_bundle(
        bundle: &NetworkBundle,
        train_config: &TrainConfig,
        class_weights: Option<&ClassWeights>,
    ) -> Self {
        let mut params = BTreeMap::new();
        for (name, shape, data) in bundle.export_params() {
            params.insert(name, ParamArray { shape, data });
        }
        Checkpoint {
            format_version: FORMAT_VERSION,
            arch: bundle.arch.clone(),
            in_shape: bundle.in_shape,
            n_classes: bundle.n_classes,
            train_config: train_config.clone(),
            class_weights: class_weights.cloned(),
            params,
        }
    }

    /// Rebuilds the network. Fails loudly on version, backbone-kind, or any
    /// parameter name/shape mismatch.
    pub fn into_bundle(&self) -> Result<NetworkBundle> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::Config(format!(
                "checkpoint format {} unsupported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.arch.backbone.kind == BackboneKind::ExternalPretrained {
            return Err(CliError::Config(
                "checkpoint uses an external backbone; reconstruct it with \
                 `NetworkBundle::with_external` and `import_params`"
                    .into(),
            ));
        }
        let mut bundle = NetworkBundle::new(&self.arch, self.in_shape, self.n_classes, 0)?;
        let entries: Vec<(String, Vec<usize>, Vec<f64>)> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v.shape.clone(), v.data.clone()))
            .collect();
        bundle.import_params(&entries)?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(json_err(path))?;
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(json_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use selrep_core::net::BackboneSpec;
    use selrep_core::Tensor;

    fn arch() -> ArchConfig {
        ArchConfig {
            backbone: BackboneSpec {
                kind: BackboneKind::ToyCnn,
                feature_dim: 6,
                conv_widths: vec![2, 3],
            },
            bottleneck_dim: 6,
            style_dim: 3,
            disc_hidden: 5,
        }
    }

    #[test]
    fn roundtrip_preserves_every_parameter_bit() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("checkpoint.json");
        let bundle = NetworkBundle::new(&arch(), [3, 16, 16], 4, 42).unwrap();
        let cfg = TrainConfig::default();
        Checkpoint::from_bundle(&bundle, &cfg, None).save(&path).unwrap();
        let restored = Checkpoint::load(&path).unwrap().into_bundle().unwrap();
        let mut probe = Tensor::zeros(&[2, 3, 16, 16]);
        probe
            .data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = ((i * 7) % 13) as f64 / 13.0);
        assert_eq!(
            bundle.predict_probs(&probe).unwrap().data(),
            restored.predict_probs(&probe).unwrap().data()
        );
    }

    #[test]
    fn shape_mismatch_fails_loudly() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("checkpoint.json");
        let bundle = NetworkBundle::new(&arch(), [3, 16, 16], 4, 1).unwrap();
        let mut ck = Checkpoint::from_bundle(&bundle, &TrainConfig::default(), None);
        let key = ck.params.keys().next().unwrap().clone();
        ck.params.get_mut(&key).unwrap().shape = vec![1];
        ck.params.get_mut(&key).unwrap().data = vec![0.0];
        ck.save(&path).unwrap();
        assert!(Checkpoint::load(&path).unwrap().into_bundle().is_err());
    }

    #[test]
    fn missing_parameter_fails_loudly() {
        let bundle = NetworkBundle::new(&arch(), [3, 16, 16], 4, 1).unwrap();
        let mut ck = Checkpoint::from_bundle(&bundle, &TrainConfig::default(), None);
        let key = ck.params.keys().next().unwrap().clone();
        ck.params.remove(&key);
        assert!(ck.into_bundle().is_err());
    }
}
