// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use super::adapter::{LoraAdapter, LoraConfig, LoraModel};
use crate::error::{Error, Result};
use crate::model::checkpoint::{decode, encode, read_bytes, write_bytes};
use crate::model::{MicroTransformer, Projection};
use crate::numcore::Tensor;

pub const LORA_KIND: &str = "lora";

impl LoraModel {
    /// Adapter-only container: the config plus `layers.{i}.{proj}.lora_a`
    /// and `.lora_b` per adapter.
    pub fn adapter_bytes(&self) -> Result<Vec<u8>> {
        let names: Vec<(String, &Tensor)> = self
            .adapters
            .iter()
            .flat_map(|ad| {
                [
                    (format!("{}.lora_a", ad.name()), &ad.a),
                    (format!("{}.lora_b", ad.name()), &ad.b),
                ]
            })
            .collect();
        encode(LORA_KIND, &self.config, &names)
    }

    /// Attaches adapters from a container to `base`, checking every shape
    /// against the base projection it names.
    pub fn from_adapter_bytes(base: &MicroTransformer, bytes: &[u8]) -> Result<Self> {
        let (config, tensors): (LoraConfig, Vec<(String, Tensor)>) = decode(bytes, LORA_KIND)?;
        config.validate()?;
        if tensors.len() % 2 != 0 {
            return Err(Error::Checkpoint {
                field: "tensors".into(),
                reason: "adapter tensors must come in lora_a/lora_b pairs".into(),
            });
        }
        let mut adapters = Vec::with_capacity(tensors.len() / 2);
        let mut it = tensors.into_iter();
        while let (Some((a_name, a)), Some((b_name, b))) = (it.next(), it.next()) {
            let (layer, projection) = parse_name(&a_name, "lora_a")?;
            if parse_name(&b_name, "lora_b")? != (layer, projection) {
                return Err(Error::Checkpoint {
                    field: b_name,
                    reason: format!("does not pair with {a_name}"),
                });
            }
            if layer >= base.config.n_layers {
                return Err(Error::Checkpoint {
                    field: a_name,
                    reason: format!(
                        "layer {layer} absent from a {}-layer base model",
                        base.config.n_layers
                    ),
                });
            }
            let w = base.blocks[layer].projection(projection);
            let r = config.rank;
            if a.shape() != [r, w.cols()] || b.shape() != [w.rows(), r] {
                return Err(Error::Checkpoint {
                    field: a_name,
                    reason: format!(
                        "adapter shapes {:?}/{:?} do not fit rank {r} on a {:?} projection",
                        a.shape(),
                        b.shape(),
                        w.shape()
                    ),
                });
            }
            adapters.push(LoraAdapter {
                a,
                b,
                scaling: config.scaling(),
                layer,
                projection,
            });
        }
        Ok(Self {
            base: base.clone(),
            config,
            adapters,
        })
    }

    pub fn save_adapters(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.adapter_bytes()?)
    }

    pub fn load_adapters(base: &MicroTransformer, path: &Path) -> Result<Self> {
        Self::from_adapter_bytes(base, &read_bytes(path)?)
    }
}

fn parse_name(name: &str, suffix: &str) -> Result<(usize, Projection)> {
    let bad = |reason: &str| Error::Checkpoint {
        field: name.to_string(),
        reason: reason.to_string(),
    };
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["layers", layer, proj, s] if *s == suffix => {
            let layer = layer
                .parse()
                .map_err(|_| bad("layer index is not an integer"))?;
            Ok((layer, Projection::from_name(proj)?))
        }
        _ => Err(bad(&format!("expected layers.<i>.<projection>.{suffix}"))),
    }
}
