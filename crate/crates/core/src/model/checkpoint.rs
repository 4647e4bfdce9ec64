use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Dims, MagiNet, ModelConfig, ParamStore};
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::graph::{ChebyshevBasis, TrafficGraph};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "maginet-checkpoint";

/// Everything needed to rebuild a trained model, minus the graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub dims: Dims,
    pub seed: u64,
    pub normalizer: Normalizer,
    pub params: IndexMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(model: &MagiNet, normalizer: &Normalizer) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            dims: model.dims,
            seed: model.seed,
            normalizer: normalizer.clone(),
            params: model
                .params
                .iter()
                .map(|(k, v)| (k.to_string(), Tensor::new(v.shape().to_vec(), v.data().to_vec()).expect("same shape")))
                .collect(),
        }
    }

    /// Rebuilds the model on `graph`. Any tensor whose name or shape does not
    /// fit the stored configuration is reported by name.
    pub fn into_model(self, graph: &TrafficGraph) -> Result<(MagiNet, Normalizer)> {
        let params = ParamStore::from_tensors(&self.config, self.dims, self.params)?;
        let basis = ChebyshevBasis::for_graph(graph, self.config.cheb_order)?;
        let model = MagiNet::from_parts(self.config, self.dims, params, basis, self.seed)?;
        Ok((model, self.normalizer))
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut w, checkpoint).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: not a checkpoint: {e}", path.display())))?;
    if ck.format != FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Input(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            ck.format,
            ck.version
        )));
    }
    for (name, t) in &ck.params {
        Tensor::new(t.shape().to_vec(), t.data().to_vec())
            .map_err(|e| Error::Input(format!("{}: tensor {name}: {e}", path.display())))?;
    }
    Ok(ck)
}
