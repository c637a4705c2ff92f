//! Versioned JSON checkpoints: a header describing the architecture followed
//! by every weight as nested decimal arrays. `serde_json` writes the shortest
//! representation that parses back to the same `f64`, so round trips are
//! exact at double precision.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{GnnConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Layer, Mlp, Real};
use crate::training::AdamState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub bs_antennas: usize,
    pub ris_elements: usize,
    pub message_dim: usize,
    pub layers: usize,
    /// Boundary widths of each network: `[input, hidden…, output]`, in the
    /// order user message, RIS message, user update, RIS update.
    pub layer_sizes: [Vec<usize>; 4],
    pub activation: Activation,
    pub feature_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerWeights {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerDump {
    step: u64,
    first_moment: Vec<Vec<Vec<f64>>>,
    second_moment: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    networks: [Vec<LayerWeights>; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerDump>,
}

fn matrix_to_rows<T: Real>(a: &Array2<T>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.iter().map(|x| x.as_f64()).collect()).collect()
}

fn rows_to_matrix<T: Real>(rows: &[Vec<f64>], cols: usize) -> Result<Array2<T>> {
    let mut out = Array2::zeros((rows.len(), cols));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(Error::dimension("checkpoint matrix row", cols, r.len()));
        }
        for (j, &x) in r.iter().enumerate() {
            out[(i, j)] = T::lit(x);
        }
    }
    Ok(out)
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &ModelParams<T>, optimizer: Option<&AdamState<T>>) -> Self {
        let nets = model.networks();
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            bs_antennas: model.bs_antennas(),
            ris_elements: model.ris_elements(),
            message_dim: model.config.message_dim,
            layers: model.config.layers,
            layer_sizes: nets.map(|n| n.sizes()),
            activation: model.config.activation,
            feature_scale: model.feature_scale.as_f64(),
            seed: model.config.seed,
        };
        let networks = nets.map(|n| {
            n.layers()
                .iter()
                .map(|l| LayerWeights {
                    weight: matrix_to_rows(&l.weight),
                    bias: l.bias.iter().map(|x| x.as_f64()).collect(),
                })
                .collect()
        });
        let optimizer = optimizer.map(|s| OptimizerDump {
            step: s.step,
            first_moment: s.first.iter().map(matrix_to_rows).collect(),
            second_moment: s.second.iter().map(matrix_to_rows).collect(),
        });
        Self { header, networks, optimizer }
    }

    /// Rebuilds the model, validating every declared size against the data.
    pub fn to_model<T: Real>(&self) -> Result<(ModelParams<T>, Option<AdamState<T>>)> {
        let h = &self.header;
        if h.format_version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                expected: CHECKPOINT_VERSION,
                found: h.format_version,
            });
        }
        let mut nets = Vec::with_capacity(4);
        for (sizes, layers) in h.layer_sizes.iter().zip(&self.networks) {
            if sizes.len() != layers.len() + 1 {
                return Err(Error::Checkpoint(format!("declared {} layer boundaries for {} layers", sizes.len(), layers.len())));
            }
            let mut built = Vec::with_capacity(layers.len());
            for (i, l) in layers.iter().enumerate() {
                if l.weight.len() != sizes[i] {
                    return Err(Error::dimension("checkpoint weight rows", sizes[i], l.weight.len()));
                }
                let weight = rows_to_matrix::<T>(&l.weight, sizes[i + 1])?;
                if l.bias.len() != sizes[i + 1] {
                    return Err(Error::dimension("checkpoint bias length", sizes[i + 1], l.bias.len()));
                }
                let bias = Array2::from_shape_vec((1, l.bias.len()), l.bias.iter().map(|&x| T::lit(x)).collect()).unwrap();
                built.push(Layer { weight, bias });
            }
            nets.push(Mlp::from_layers(built, h.activation)?);
        }
        let hidden = h.layer_sizes[0][1..h.layer_sizes[0].len() - 1].to_vec();
        let config = GnnConfig {
            message_dim: h.message_dim,
            layers: h.layers,
            hidden,
            activation: h.activation,
            feature_scale: Some(h.feature_scale),
            seed: h.seed,
        };
        let nets: [Mlp<T>; 4] = nets.try_into().map_err(|_| Error::Checkpoint("expected four networks".into()))?;
        let model = ModelParams::from_networks(config, h.bs_antennas, h.ris_elements, nets)?;

        let optimizer = match &self.optimizer {
            None => None,
            Some(o) => {
                let shapes: Vec<(usize, usize)> = model.tensors().iter().map(|t| t.dim()).collect();
                if o.first_moment.len() != shapes.len() || o.second_moment.len() != shapes.len() {
                    return Err(Error::dimension("optimizer moment tensors", shapes.len(), o.first_moment.len()));
                }
                let load = |ms: &[Vec<Vec<f64>>]| -> Result<Vec<Array2<T>>> {
                    ms.iter()
                        .zip(&shapes)
                        .map(|(m, &(r, c))| {
                            if m.len() != r {
                                return Err(Error::dimension("optimizer moment rows", r, m.len()));
                            }
                            rows_to_matrix(m, c)
                        })
                        .collect()
                };
                Some(AdamState {
                    step: o.step,
                    first: load(&o.first_moment)?,
                    second: load(&o.second_moment)?,
                })
            }
        };
        Ok((model, optimizer))
    }
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, model: &ModelParams<T>, optimizer: Option<&AdamState<T>>) -> Result<()> {
    let ck = Checkpoint::from_model(model, optimizer);
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    // write-then-rename so a crash never leaves a truncated checkpoint
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(&ck)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint. Nothing is returned unless the whole file validates.
pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(ModelParams<T>, Option<AdamState<T>>)> {
    #[derive(Deserialize)]
    struct VersionProbe {
        header: VersionOnly,
    }
    #[derive(Deserialize)]
    struct VersionOnly {
        format_version: u32,
    }

    let bytes = fs::read(path)?;
    let probe: VersionProbe = serde_json::from_slice(&bytes)?;
    if probe.header.format_version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            expected: CHECKPOINT_VERSION,
            found: probe.header.format_version,
        });
    }
    let ck: Checkpoint = serde_json::from_slice(&bytes)?;
    ck.to_model()
}
