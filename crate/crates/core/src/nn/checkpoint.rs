//! Versioned safetensors checkpoints. The header metadata carries the format
//! tag, version, model kind, the full config text and its hash.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype as StDtype, SafeTensors, TensorView};

use super::store::ParamStore;
use crate::config::TrainConfig;
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "lipdub-checkpoint";
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub config: TrainConfig,
    pub config_hash: String,
    pub tensors: HashMap<String, Tensor>,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    kind: &str,
    config: &TrainConfig,
    stores: &[&ParamStore],
) -> Result<()> {
    let path = path.as_ref();
    let mut named: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for store in stores {
        for (name, t) in store.tensors()? {
            let values = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            named.push((name, t.dims().to_vec(), bytes));
        }
    }
    let views = named
        .iter()
        .map(|(n, shape, bytes)| {
            TensorView::new(StDtype::F32, shape.clone(), bytes)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::format(path, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let metadata: HashMap<String, String> = [
        ("format", FORMAT_TAG.to_string()),
        ("version", FORMAT_VERSION.to_string()),
        ("kind", kind.to_string()),
        ("config", config.to_text()),
        ("config_hash", config.hash()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    safetensors::serialize_to_file(views, Some(metadata), path)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected_kind: &str) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::format(path, m);
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let meta = header
        .metadata()
        .clone()
        .ok_or_else(|| bad("missing checkpoint metadata".into()))?;
    let field = |k: &str| {
        meta.get(k)
            .cloned()
            .ok_or_else(|| bad(format!("missing `{k}` metadata")))
    };
    if field("format")? != FORMAT_TAG {
        return Err(bad("not a lipdub checkpoint".into()));
    }
    if field("version")? != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {}", field("version")?)));
    }
    let kind = field("kind")?;
    if kind != expected_kind {
        return Err(bad(format!(
            "expected a {expected_kind} checkpoint, found {kind}"
        )));
    }
    let config = TrainConfig::parse(&field("config")?)?;
    let config_hash = field("config_hash")?;
    if config.hash() != config_hash {
        return Err(bad("config hash does not match stored config".into()));
    }
    let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
    let mut tensors = HashMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != StDtype::F32 {
            return Err(bad(format!("{name}: expected f32")));
        }
        let values: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(name, Tensor::from_vec(values, view.shape(), &Device::Cpu)?);
    }
    Ok(Checkpoint {
        kind,
        config,
        config_hash,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::store::Init;

    #[test]
    fn round_trip_restores_params() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.safetensors");
        let mut cfg = TrainConfig::default();
        cfg.lambda_s = 0.5;
        let s = ParamStore::new(DType::F32, &Device::Cpu, 7);
        s.pp("a").get(&[3, 2], "w", Init::He(2)).unwrap();
        s.pp("b").get(&[4], "w", Init::Uniform(1.0)).unwrap();
        save_checkpoint(&p, "stage1", &cfg, &[&s]).unwrap();

        let ck = load_checkpoint(&p, "stage1").unwrap();
        assert_eq!(ck.config, cfg);
        let fresh = ParamStore::new(DType::F32, &Device::Cpu, 8);
        fresh.pp("a").get(&[3, 2], "w", Init::Zeros).unwrap();
        fresh.pp("b").get(&[4], "w", Init::Zeros).unwrap();
        fresh.load(&ck.tensors).unwrap();
        assert_eq!(fresh.checksum().unwrap(), s.checksum().unwrap());

        assert!(load_checkpoint(&p, "stage2")
            .unwrap_err()
            .to_string()
            .contains("stage2"));
    }
}
