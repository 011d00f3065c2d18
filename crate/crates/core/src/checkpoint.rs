//! Weight archives: named `f32` arrays plus the run configuration as TOML.

use std::collections::HashMap;
use std::path::Path;

use retinexdual_autograd::{Real, Tensor};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::retinex::RetinexDual;

pub const FORMAT: &str = "retinexdual";

/// Decode an `F32` or `F64` view.
pub fn view_to_tensor<T: Real>(view: &TensorView<'_>) -> std::result::Result<Tensor<T>, String> {
    let bytes = view.data();
    let data: Vec<T> = match view.dtype() {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect(),
        other => return Err(format!("unsupported dtype {other:?}")),
    };
    Ok(Tensor::new(view.shape().to_vec(), data))
}

/// Serialize parameters and configuration to bytes.
pub fn to_bytes(config: &RunConfig, store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = store
        .iter()
        .map(|(name, t)| (name.clone(), t.shape().to_vec(), t.data().iter().flat_map(|v| v.to_le_bytes()).collect()))
        .collect();
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes).map(|v| (name.clone(), v))
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Checkpoint { path: "<memory>".into(), message: e.to_string() })?;
    let metadata = HashMap::from([
        ("format".to_string(), FORMAT.to_string()),
        ("config".to_string(), config.to_toml()),
    ]);
    safetensors::serialize(views, Some(metadata))
        .map_err(|e| Error::Checkpoint { path: "<memory>".into(), message: e.to_string() })
}

/// Parse bytes produced by [`to_bytes`]; the weights are checked against the
/// model described by the embedded configuration.
pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<(RunConfig, ParamStore<f32>)> {
    let fail = |m: String| Error::Checkpoint { path: origin.to_path_buf(), message: m };
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| fail(e.to_string()))?;
    let meta = meta.metadata().clone().unwrap_or_default();
    if meta.get("format").map(String::as_str) != Some(FORMAT) {
        return Err(fail("not a retinexdual checkpoint".into()));
    }
    let text = meta.get("config").ok_or_else(|| fail("missing config header".into()))?;
    let config = RunConfig::from_toml(text)?;
    let st = SafeTensors::deserialize(bytes).map_err(|e| fail(e.to_string()))?;
    let mut store = ParamStore::new();
    for (name, view) in st.tensors() {
        store.insert(name.clone(), view_to_tensor(&view).map_err(|m| fail(format!("{name}: {m}")))?);
    }
    RetinexDual::new(&config.model).check_store(&store).map_err(|e| fail(e.to_string()))?;
    Ok((config, store))
}

pub fn save(path: &Path, config: &RunConfig, store: &ParamStore<f32>) -> Result<()> {
    let bytes = to_bytes(config, store)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load(path: &Path) -> Result<(RunConfig, ParamStore<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    from_bytes(&bytes, path)
}
