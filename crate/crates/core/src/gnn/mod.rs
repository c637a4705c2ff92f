//! Message-passing network over the user/RIS bipartite graph.
//!
//! One layer runs three phases in order:
//!
//! 1. every user `k` sends `m^u_{k,j} = f₁ᵘ(z_k, e_{j,k}, d_k, mean_j m^r_{j,k})`
//!    to each RIS, using the RIS messages of the previous layer;
//! 2. every RIS `j` sends `m^r_{j,k} = f₁ʳ(e_{j,k}, c_j, mean_k m^u_{k,j})`
//!    to each user, using the user messages just produced;
//! 3. `d_k ← f₂ᵘ(z_k, d_k, mean_j m^r_{j,k})` and `c_j ← f₂ʳ(c_j, mean_k m^u_{k,j})`.
//!
//! The four networks are shared by all nodes of a type and by all layers.
//! After the last layer `d_k` is mapped to a beamformer with power `P_t/K`
//! and `c_j` to unit-modulus reflection coefficients `e^{jc}`.

mod checkpoint;
mod loss;

use std::ops::Range;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use loss::{BatchChannels, SumRateLoss};

use crate::channel::ScenarioConfig;
use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::numerics::complex::elementwise_exp_i;
use crate::numerics::{Activation, CVector, GradTape, Mlp, MlpNodes, NodeId, Real};

/// Architecture choices that are not fixed by the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnnConfig {
    /// D_m, width of every message.
    pub message_dim: usize,
    /// T, message-passing layers.
    pub layers: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Multiplier applied to channel features before they enter the networks.
    /// `None` derives `sqrt(P_t / (K σ²))` from the training scenario.
    pub feature_scale: Option<f64>,
    pub seed: u64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            message_dim: 128,
            layers: 2,
            hidden: vec![512, 512],
            activation: Activation::Relu,
            feature_scale: None,
            seed: 0,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("at least one message-passing layer is required".into()));
        }
        if self.message_dim == 0 {
            return Err(Error::Config("message_dim must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if let Some(s) = self.feature_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("feature_scale must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// Column layout of the four network inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputLayout {
    pub bs_antennas: usize,
    pub ris_elements: usize,
    pub message_dim: usize,
}

impl InputLayout {
    fn z(&self) -> usize {
        2 * self.bs_antennas
    }

    fn e(&self) -> usize {
        2 * self.bs_antennas * self.ris_elements
    }

    /// `[z | e | d | mean m^r]`
    pub fn user_message(&self) -> [Range<usize>; 4] {
        let (z, e, m) = (self.z(), self.e(), self.message_dim);
        [0..z, z..z + e, z + e..2 * z + e, 2 * z + e..2 * z + e + m]
    }

    /// `[e | c | mean m^u]`
    pub fn ris_message(&self) -> [Range<usize>; 3] {
        let (e, c, m) = (self.e(), self.ris_elements, self.message_dim);
        [0..e, e..e + c, e + c..e + c + m]
    }

    /// `[z | d | mean m^r]`
    pub fn user_update(&self) -> [Range<usize>; 3] {
        let (z, m) = (self.z(), self.message_dim);
        [0..z, z..2 * z, 2 * z..2 * z + m]
    }

    /// `[c | mean m^u]`
    pub fn ris_update(&self) -> [Range<usize>; 2] {
        let (c, m) = (self.ris_elements, self.message_dim);
        [0..c, c..c + m]
    }
}

/// Weights of the four shared networks plus the fixed architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real> {
    pub config: GnnConfig,
    pub layout: InputLayout,
    pub feature_scale: T,
    /// f₁ᵘ
    pub user_message: Mlp<T>,
    /// f₁ʳ
    pub ris_message: Mlp<T>,
    /// f₂ᵘ
    pub user_update: Mlp<T>,
    /// f₂ʳ
    pub ris_update: Mlp<T>,
}

impl<T: Real> ModelParams<T> {
    /// Freshly initialised model for the antenna geometry of `scenario`.
    pub fn new(config: &GnnConfig, scenario: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        scenario.validate()?;
        let layout = InputLayout {
            bs_antennas: scenario.bs_antennas(),
            ris_elements: scenario.ris_elements(),
            message_dim: config.message_dim,
        };
        let scale = config
            .feature_scale
            .unwrap_or_else(|| (scenario.tx_power_w() / (scenario.users as f64 * scenario.noise_power_w())).sqrt());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h, act) = (&config.hidden, config.activation);
        let dm = config.message_dim;
        let user_message = Mlp::new(layout.user_message()[3].end, h, dm, act, &mut rng);
        let ris_message = Mlp::new(layout.ris_message()[2].end, h, dm, act, &mut rng);
        let user_update = Mlp::new(layout.user_update()[2].end, h, 2 * layout.bs_antennas, act, &mut rng);
        let ris_update = Mlp::new(layout.ris_update()[1].end, h, layout.ris_elements, act, &mut rng);
        Ok(Self {
            config: GnnConfig {
                feature_scale: Some(scale),
                ..config.clone()
            },
            layout,
            feature_scale: T::lit(scale),
            user_message,
            ris_message,
            user_update,
            ris_update,
        })
    }

    /// Rebuilds a model from explicit networks, checking every input/output width.
    pub fn from_networks(config: GnnConfig, bs_antennas: usize, ris_elements: usize, nets: [Mlp<T>; 4]) -> Result<Self> {
        config.validate()?;
        let layout = InputLayout {
            bs_antennas,
            ris_elements,
            message_dim: config.message_dim,
        };
        let [user_message, ris_message, user_update, ris_update] = nets;
        let expect = [
            ("user message", &user_message, layout.user_message()[3].end, config.message_dim),
            ("RIS message", &ris_message, layout.ris_message()[2].end, config.message_dim),
            ("user update", &user_update, layout.user_update()[2].end, 2 * bs_antennas),
            ("RIS update", &ris_update, layout.ris_update()[1].end, ris_elements),
        ];
        for (name, net, input, output) in expect {
            if net.input_dim() != input {
                return Err(Error::dimension(format!("{name} network input"), input, net.input_dim()));
            }
            if net.output_dim() != output {
                return Err(Error::dimension(format!("{name} network output"), output, net.output_dim()));
            }
        }
        let scale = config.feature_scale.unwrap_or(1.0);
        Ok(Self {
            config,
            layout,
            feature_scale: T::lit(scale),
            user_message,
            ris_message,
            user_update,
            ris_update,
        })
    }

    pub fn bs_antennas(&self) -> usize {
        self.layout.bs_antennas
    }

    pub fn ris_elements(&self) -> usize {
        self.layout.ris_elements
    }

    pub fn layers(&self) -> usize {
        self.config.layers
    }

    /// The model only depends on N and M; any K and J are accepted.
    pub fn check_scenario(&self, scenario: &ScenarioConfig) -> Result<()> {
        if scenario.bs_antennas() != self.bs_antennas() {
            return Err(Error::dimension("BS antennas (model vs scenario)", self.bs_antennas(), scenario.bs_antennas()));
        }
        if scenario.ris_elements() != self.ris_elements() {
            return Err(Error::dimension("RIS elements (model vs scenario)", self.ris_elements(), scenario.ris_elements()));
        }
        Ok(())
    }

    pub fn networks(&self) -> [&Mlp<T>; 4] {
        [&self.user_message, &self.ris_message, &self.user_update, &self.ris_update]
    }

    /// All parameter tensors in checkpoint/optimizer order.
    pub fn tensors(&self) -> Vec<&Array2<T>> {
        self.networks().into_iter().flat_map(|n| n.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        [&mut self.user_message, &mut self.ris_message, &mut self.user_update, &mut self.ris_update]
            .into_iter()
            .flat_map(|n| n.tensors_mut())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Registers all four networks on `tape`; parameter ids follow [`Self::tensors`].
    pub fn register<'a>(&'a self, tape: &mut GradTape<'a, T>) -> ModelNodes {
        let mut next = 0;
        let mut reg = |net: &'a Mlp<T>, tape: &mut GradTape<'a, T>| {
            let nodes = net.register(tape, next);
            next += net.tensor_count();
            nodes
        };
        ModelNodes {
            user_message: reg(&self.user_message, tape),
            ris_message: reg(&self.ris_message, tape),
            user_update: reg(&self.user_update, tape),
            ris_update: reg(&self.ris_update, tape),
        }
    }

    fn check_graph(&self, graph: &NetworkGraph<T>) -> Result<()> {
        if graph.bs_antennas() != self.bs_antennas() {
            return Err(Error::dimension("graph BS antennas", self.bs_antennas(), graph.bs_antennas()));
        }
        if graph.ris() > 0 && graph.ris_elements() != self.ris_elements() {
            return Err(Error::dimension("graph RIS elements", self.ris_elements(), graph.ris_elements()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ModelNodes {
    pub user_message: MlpNodes,
    pub ris_message: MlpNodes,
    pub user_update: MlpNodes,
    pub ris_update: MlpNodes,
}

/// Several graphs packed into one disjoint union so a whole mini-batch runs
/// through each network as a single matrix product. Means are taken per node
/// over its own neighbours, so packing does not mix samples.
#[derive(Debug, Clone)]
pub struct GraphBatch<T: Real> {
    /// Scaled `z`, one row per user of every graph.
    user_features: Array2<T>,
    /// Scaled `e`, one row per edge of every graph.
    edge_features: Array2<T>,
    edge_user: Vec<usize>,
    edge_ris: Vec<usize>,
    user_ranges: Vec<Range<usize>>,
    ris_ranges: Vec<Range<usize>>,
    ris_elements: usize,
}

impl<T: Real> GraphBatch<T> {
    pub fn new(graphs: &[&NetworkGraph<T>], params: &ModelParams<T>) -> Result<Self> {
        let (n, m) = (params.bs_antennas(), params.ris_elements());
        let mut user_ranges = Vec::with_capacity(graphs.len());
        let mut ris_ranges = Vec::with_capacity(graphs.len());
        let (mut users, mut ris) = (0, 0);
        let mut edge_user = Vec::new();
        let mut edge_ris = Vec::new();
        for g in graphs {
            params.check_graph(g)?;
            for (j, k) in g.edges() {
                edge_user.push(users + k);
                edge_ris.push(ris + j);
            }
            user_ranges.push(users..users + g.users());
            ris_ranges.push(ris..ris + g.ris());
            users += g.users();
            ris += g.ris();
        }
        let scale = params.feature_scale;
        let z_views: Vec<_> = graphs.iter().map(|g| g.user_features().view()).collect();
        let user_features = if z_views.is_empty() {
            Array2::zeros((0, 2 * n))
        } else {
            concatenate(Axis(0), &z_views).unwrap() * scale
        };
        let e_views: Vec<_> = graphs.iter().filter(|g| g.edge_count() > 0).map(|g| g.edge_features().view()).collect();
        let edge_features = if e_views.is_empty() {
            Array2::zeros((0, 2 * n * m))
        } else {
            concatenate(Axis(0), &e_views).unwrap() * scale
        };
        Ok(Self {
            user_features,
            edge_features,
            edge_user,
            edge_ris,
            user_ranges,
            ris_ranges,
            ris_elements: m,
        })
    }

    pub fn len(&self) -> usize {
        self.user_ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_ranges.is_empty()
    }

    pub fn total_users(&self) -> usize {
        self.user_features.nrows()
    }

    pub fn total_ris(&self) -> usize {
        self.ris_ranges.last().map_or(0, |r| r.end)
    }

    pub fn user_range(&self, sample: usize) -> Range<usize> {
        self.user_ranges[sample].clone()
    }

    pub fn ris_range(&self, sample: usize) -> Range<usize> {
        self.ris_ranges[sample].clone()
    }
}

/// Final representation nodes `d⁽ᵀ⁾` (users × 2N) and `c⁽ᵀ⁾` (RISs × M).
#[derive(Debug, Clone, Copy)]
pub struct Representations {
    pub users: NodeId,
    pub ris: NodeId,
}

/// Runs `layers` rounds of message passing on the tape.
pub fn forward_on_tape<'a, T: Real>(tape: &mut GradTape<'a, T>, nets: &ModelNodes, batch: &'a GraphBatch<T>, layout: &InputLayout, layers: usize) -> Representations {
    let (nu, nr) = (batch.total_users(), batch.total_ris());
    let um = layout.user_message();
    let rm = layout.ris_message();
    let uu = layout.user_update();
    let ru = layout.ris_update();

    let z = tape.constant_ref(&batch.user_features);
    let e = tape.constant_ref(&batch.edge_features);
    let mut d = tape.constant(Array2::zeros((nu, 2 * layout.bs_antennas)));
    let mut c = tape.constant(Array2::zeros((nr, batch.ris_elements)));
    let mut ris_to_user = tape.constant(Array2::zeros((nu, layout.message_dim)));

    // edge features do not change across layers: project them once
    let edge_user_part = nets.user_message.project_input(tape, &[(e, um[1].clone())]);
    let edge_ris_part = nets.ris_message.project_input(tape, &[(e, rm[0].clone())]);

    for _ in 0..layers {
        let per_user = nets
            .user_message
            .project_input(tape, &[(z, um[0].clone()), (d, um[2].clone()), (ris_to_user, um[3].clone())]);
        let per_user = tape.gather(per_user, batch.edge_user.clone());
        let pre = tape.add(per_user, edge_user_part);
        let user_msgs = nets.user_message.finish(tape, pre);
        let user_to_ris = tape.segment_mean(user_msgs, batch.edge_ris.clone(), nr);

        let per_ris = nets.ris_message.project_input(tape, &[(c, rm[1].clone()), (user_to_ris, rm[2].clone())]);
        let per_ris = tape.gather(per_ris, batch.edge_ris.clone());
        let pre = tape.add(per_ris, edge_ris_part);
        let ris_msgs = nets.ris_message.finish(tape, pre);
        ris_to_user = tape.segment_mean(ris_msgs, batch.edge_user.clone(), nu);

        let pre = nets
            .user_update
            .project_input(tape, &[(z, uu[0].clone()), (d, uu[1].clone()), (ris_to_user, uu[2].clone())]);
        let new_d = nets.user_update.finish(tape, pre);
        let pre = nets.ris_update.project_input(tape, &[(c, ru[0].clone()), (user_to_ris, ru[1].clone())]);
        c = nets.ris_update.finish(tape, pre);
        d = new_d;
    }
    Representations { users: d, ris: c }
}

/// Final representations `(d⁽ᵀ⁾, c⁽ᵀ⁾)` for each graph.
pub fn representations<T: Real>(graphs: &[&NetworkGraph<T>], params: &ModelParams<T>) -> Result<Vec<(Array2<T>, Array2<T>)>> {
    let batch = GraphBatch::new(graphs, params)?;
    let mut tape = GradTape::new();
    let nets = params.register(&mut tape);
    let reps = forward_on_tape(&mut tape, &nets, &batch, &params.layout, params.layers());
    let (d, c) = (tape.value(reps.users), tape.value(reps.ris));
    Ok((0..batch.len())
        .map(|s| {
            (
                d.slice(s![batch.user_range(s), ..]).to_owned(),
                c.slice(s![batch.ris_range(s), ..]).to_owned(),
            )
        })
        .collect())
}

/// Beamformers and RIS phases for each graph.
pub fn forward_batch<T: Real>(graphs: &[&NetworkGraph<T>], params: &ModelParams<T>, tx_power: T) -> Result<Vec<BeamformingSolution<T>>> {
    representations(graphs, params)?
        .into_iter()
        .map(|(d, c)| project(&d, &c, tx_power))
        .collect()
}

pub fn forward<T: Real>(graph: &NetworkGraph<T>, params: &ModelParams<T>, tx_power: T) -> Result<BeamformingSolution<T>> {
    Ok(forward_batch(&[graph], params, tx_power)?.remove(0))
}

/// `{w_k}` and `{v_j}` satisfying `‖w_k‖² = P_t/K` and `|v_{j,m}| = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSolution<T: Real> {
    pub beamformers: Vec<CVector<T>>,
    pub phases: Vec<CVector<T>>,
    /// Non-fatal events raised while producing the solution.
    pub diagnostics: Vec<String>,
}

impl<T: Real> BeamformingSolution<T> {
    pub fn total_power(&self) -> T {
        self.beamformers.iter().map(|w| w.iter().map(|z| z.norm_sqr()).sum::<T>()).sum()
    }

    /// Largest deviations `(max_k |‖w_k‖² − P_t/K|, max_{j,m} ||v_{j,m}| − 1|)`.
    pub fn constraint_violation(&self, tx_power: T) -> (T, T) {
        let per_user = tx_power / T::from_usize(self.beamformers.len().max(1)).unwrap();
        let power = self
            .beamformers
            .iter()
            .map(|w| (w.iter().map(|z| z.norm_sqr()).sum::<T>() - per_user).abs())
            .fold(T::zero(), T::max);
        let modulus = self
            .phases
            .iter()
            .flat_map(|v| v.iter())
            .map(|z| (z.norm() - T::one()).abs())
            .fold(T::zero(), T::max);
        (power, modulus)
    }
}

/// Maps `d` (2N reals) to `w = sqrt(P_t/K) · u/‖u‖` with `u = d[..N] + j·d[N..]`.
/// A zero `u` is replaced by the first unit vector. Returns the beamformer and
/// whether the fallback was used.
pub fn project_beam<T: Real>(d: ArrayView1<T>, tx_power: T, users: usize) -> (CVector<T>, bool) {
    let n = d.len() / 2;
    let u: CVector<T> = (0..n).map(|i| Complex::new(d[i], d[n + i])).collect();
    let norm = u.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
    let amp = (tx_power / T::from_usize(users).unwrap()).sqrt();
    if norm > T::zero() && norm.is_finite() {
        (u.mapv(|z| z * (amp / norm)), false)
    } else {
        let mut w = Array1::from_elem(n, Complex::new(T::zero(), T::zero()));
        if n > 0 {
            w[0] = Complex::new(amp, T::zero());
        }
        (w, true)
    }
}

/// Projects final representations of one graph (`K × 2N` and `J × M`).
pub fn project<T: Real>(d: &Array2<T>, c: &Array2<T>, tx_power: T) -> Result<BeamformingSolution<T>> {
    if d.ncols() % 2 != 0 {
        return Err(Error::Config("user representation width must be even".into()));
    }
    let k = d.nrows();
    let mut diagnostics = Vec::new();
    let beamformers = d
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let (w, fallback) = project_beam(row, tx_power, k);
            if fallback {
                let msg = format!("user {i}: zero representation, beamformer set to first antenna");
                log::warn!("{msg}");
                diagnostics.push(msg);
            }
            w
        })
        .collect();
    let phases = c.rows().into_iter().map(elementwise_exp_i).collect();
    Ok(BeamformingSolution {
        beamformers,
        phases,
        diagnostics,
    })
}

fn concat_inputs<T: Real>(parts: &[ArrayView1<T>]) -> Array1<T> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Element-wise mean of a set of messages; zero when the set is empty.
pub fn mean_message<T: Real>(messages: &[Array1<T>], dim: usize) -> Array1<T> {
    let mut acc = Array1::zeros(dim);
    for m in messages {
        acc += m;
    }
    if !messages.is_empty() {
        acc /= T::from_usize(messages.len()).unwrap();
    }
    acc
}

/// `f₁ᵘ(z_k, e_{j,k}, d_k, mean_j m^r_{j,k})` on already scaled features.
pub fn user_message<T: Real>(params: &ModelParams<T>, z: ArrayView1<T>, e: ArrayView1<T>, d: ArrayView1<T>, incoming: ArrayView1<T>) -> Result<Array1<T>> {
    params.user_message.forward(concat_inputs(&[z, e, d, incoming]).view())
}

/// `f₁ʳ(e_{j,k}, c_j, mean_k m^u_{k,j})`.
pub fn ris_message<T: Real>(params: &ModelParams<T>, e: ArrayView1<T>, c: ArrayView1<T>, incoming: ArrayView1<T>) -> Result<Array1<T>> {
    params.ris_message.forward(concat_inputs(&[e, c, incoming]).view())
}

/// `f₂ᵘ(z_k, d_k, mean_j m^r_{j,k})`.
pub fn update_user<T: Real>(params: &ModelParams<T>, z: ArrayView1<T>, d: ArrayView1<T>, incoming: ArrayView1<T>) -> Result<Array1<T>> {
    params.user_update.forward(concat_inputs(&[z, d, incoming]).view())
}

/// `f₂ʳ(c_j, mean_k m^u_{k,j})`.
pub fn update_ris<T: Real>(params: &ModelParams<T>, c: ArrayView1<T>, incoming: ArrayView1<T>) -> Result<Array1<T>> {
    params.ris_update.forward(concat_inputs(&[c, incoming]).view())
}

#[cfg(test)]
mod tests;
