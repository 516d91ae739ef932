//! Encode-process-decode graph network over the three edge populations.
//!
//! One node encoder and three edge encoders lift raw features to a shared
//! latent width; k message-passing blocks update edge latents from their
//! endpoints and node latents from per-set incoming-edge sums, with residual
//! connections on both; a decoder maps node latents to a normalized 2D
//! position delta. All parameters live in one flat f64 vector with a fixed
//! canonical layout, and gradients are hand-derived reverse-mode, exact up
//! to float rounding.
//!
//! Everything here is sequential and allocation-order deterministic: the
//! same parameters and batch produce bitwise-identical outputs.

use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::{Edge, EdgeSets, MeshState, NodeKind, Topology};

/// Node features: one-hot (tube, die, stamp) plus (x, z).
pub const NODE_FEATURE_DIM: usize = 5;
/// Tube mesh edge features: (dx, dz, dist).
pub const TUBE_EDGE_FEATURE_DIM: usize = 3;
/// Contact edge features: (dx, dz, dist, mu).
pub const CONTACT_EDGE_FEATURE_DIM: usize = 4;
/// Predicted values per node: (dx, dz).
pub const OUTPUT_DIM: usize = 2;

/// Variance stabilizer inside every LayerNorm.
pub const LAYERNORM_EPS: f64 = 1e-5;

const CHECKPOINT_VERSION: u32 = 1;

/// Shape of one multilayer perceptron: `n_hidden_layers` Linear+ReLU stages
/// at `hidden_dim`, a final Linear to `output_dim`, and optionally a
/// LayerNorm on the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_hidden_layers: usize,
    pub output_dim: usize,
    pub final_layernorm: bool,
}

impl MlpSpec {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        MlpSpec { input_dim, hidden_dim: 128, n_hidden_layers: 3, output_dim, final_layernorm: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || (self.n_hidden_layers > 0 && self.hidden_dim == 0) {
            return Err(Error::invalid(format!("degenerate MLP shape {self:?}")));
        }
        Ok(())
    }

    /// (input, output) size of each Linear layer, in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        if self.n_hidden_layers == 0 {
            return vec![(self.input_dim, self.output_dim)];
        }
        let mut dims = vec![(self.input_dim, self.hidden_dim)];
        for _ in 1..self.n_hidden_layers {
            dims.push((self.hidden_dim, self.hidden_dim));
        }
        dims.push((self.hidden_dim, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        let mut n: usize = self.layer_dims().iter().map(|&(i, o)| i * o + o).sum();
        if self.final_layernorm {
            n += 2 * self.output_dim;
        }
        n
    }
}

/// Network-level shape: shared latent width, number of message-passing
/// blocks, hidden-layer count of every MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub latent_dim: usize,
    pub n_blocks: usize,
    pub n_hidden_layers: usize,
}

impl NetSpec {
    /// Full-scale configuration: latent width 128, 15 blocks.
    pub fn full_scale() -> Self {
        NetSpec { latent_dim: 128, n_blocks: 15, n_hidden_layers: 3 }
    }

    /// Reduced configuration for desk-scale runs.
    pub fn desk(latent_dim: usize, n_blocks: usize) -> Self {
        NetSpec { latent_dim, n_blocks, n_hidden_layers: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.n_blocks == 0 || self.n_hidden_layers == 0 {
            return Err(Error::invalid(format!("degenerate network shape {self:?}")));
        }
        Ok(())
    }

    fn mlp(&self, input_dim: usize, output_dim: usize, final_layernorm: bool) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_dim: self.latent_dim,
            n_hidden_layers: self.n_hidden_layers,
            output_dim,
            final_layernorm,
        }
    }

    pub fn node_encoder(&self) -> MlpSpec {
        self.mlp(NODE_FEATURE_DIM, self.latent_dim, true)
    }

    pub fn tube_edge_encoder(&self) -> MlpSpec {
        self.mlp(TUBE_EDGE_FEATURE_DIM, self.latent_dim, true)
    }

    pub fn contact_edge_encoder(&self) -> MlpSpec {
        self.mlp(CONTACT_EDGE_FEATURE_DIM, self.latent_dim, true)
    }

    /// Edge update: (edge latent, src latent, dst latent) -> edge latent.
    pub fn edge_update(&self) -> MlpSpec {
        self.mlp(3 * self.latent_dim, self.latent_dim, true)
    }

    /// Node update: (node latent, die sum, tube sum, stamp sum) -> latent.
    pub fn node_update(&self) -> MlpSpec {
        self.mlp(4 * self.latent_dim, self.latent_dim, true)
    }

    pub fn decoder(&self) -> MlpSpec {
        self.mlp(self.latent_dim, OUTPUT_DIM, false)
    }

    /// All MLPs in canonical parameter order: the four encoders, then per
    /// block the die/tube/stamp edge updates and the node update, then the
    /// decoder.
    pub fn segments(&self) -> Vec<MlpSpec> {
        let mut segs = vec![
            self.node_encoder(),
            self.tube_edge_encoder(),
            self.contact_edge_encoder(),
            self.contact_edge_encoder(),
        ];
        for _ in 0..self.n_blocks {
            segs.push(self.edge_update());
            segs.push(self.edge_update());
            segs.push(self.edge_update());
            segs.push(self.node_update());
        }
        segs.push(self.decoder());
        segs
    }

    /// Start offset of each MLP inside the flat parameter vector, with the
    /// total count appended as a closing sentinel.
    pub fn offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::new();
        let mut at = 0;
        for seg in self.segments() {
            offsets.push(at);
            at += seg.param_count();
        }
        offsets.push(at);
        offsets
    }

    pub fn param_count(&self) -> usize {
        self.segments().iter().map(MlpSpec::param_count).sum()
    }
}

/// Index of an MLP segment inside the canonical layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    NodeEncoder,
    TubeEdgeEncoder,
    DieEdgeEncoder,
    StampEdgeEncoder,
    BlockDie(usize),
    BlockTube(usize),
    BlockStamp(usize),
    BlockNode(usize),
    Decoder,
}

impl NetSpec {
    fn segment_index(&self, seg: Segment) -> usize {
        match seg {
            Segment::NodeEncoder => 0,
            Segment::TubeEdgeEncoder => 1,
            Segment::DieEdgeEncoder => 2,
            Segment::StampEdgeEncoder => 3,
            Segment::BlockDie(b) => 4 + 4 * b,
            Segment::BlockTube(b) => 5 + 4 * b,
            Segment::BlockStamp(b) => 6 + 4 * b,
            Segment::BlockNode(b) => 7 + 4 * b,
            Segment::Decoder => 4 + 4 * self.n_blocks,
        }
    }

    /// Parameter-vector range occupied by one MLP segment.
    pub fn segment_range(&self, seg: Segment) -> std::ops::Range<usize> {
        let offsets = self.offsets();
        let i = self.segment_index(seg);
        offsets[i]..offsets[i + 1]
    }
}

/// Per-axis normalization statistics of the training targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl TargetStats {
    pub fn identity() -> Self {
        TargetStats { mean: [0.0, 0.0], std: [1.0, 1.0] }
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..2 {
            if !(self.std[axis] > 0.0) || !self.mean[axis].is_finite() {
                return Err(Error::invalid(format!("bad target stats {self:?}")));
            }
        }
        Ok(())
    }
}

/// Per-column affine standardization for one feature matrix: a value x in
/// column j enters the network as (x - mean[j]) / std[j].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    /// Pass-through stats: mean 0, std 1 in every column.
    pub fn identity(dim: usize) -> Self {
        ColumnStats { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.mean.len() != dim || self.std.len() != dim {
            return Err(Error::invalid(format!(
                "column stats carry {}/{} entries, feature width is {dim}",
                self.mean.len(),
                self.std.len()
            )));
        }
        for j in 0..dim {
            if !(self.std[j] > 0.0) || !self.mean[j].is_finite() {
                return Err(Error::invalid(format!(
                    "bad column stats at {j}: mean {}, std {}",
                    self.mean[j], self.std[j]
                )));
            }
        }
        Ok(())
    }

    fn apply(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut out = features.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

/// Standardization of the four raw feature matrices a batch feeds into the
/// encoders. Identity by default; training replaces it with statistics of
/// the training set so feature scale never dictates the optimizer's path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputStats {
    pub node: ColumnStats,
    pub tube: ColumnStats,
    pub die: ColumnStats,
    pub stamp: ColumnStats,
}

impl InputStats {
    pub fn identity() -> Self {
        InputStats {
            node: ColumnStats::identity(NODE_FEATURE_DIM),
            tube: ColumnStats::identity(TUBE_EDGE_FEATURE_DIM),
            die: ColumnStats::identity(CONTACT_EDGE_FEATURE_DIM),
            stamp: ColumnStats::identity(CONTACT_EDGE_FEATURE_DIM),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.node.validate(NODE_FEATURE_DIM)?;
        self.tube.validate(TUBE_EDGE_FEATURE_DIM)?;
        self.die.validate(CONTACT_EDGE_FEATURE_DIM)?;
        self.stamp.validate(CONTACT_EDGE_FEATURE_DIM)?;
        Ok(())
    }
}

/// Complete trainable state: shape, flat parameters, input and target
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub spec: NetSpec,
    pub params: Vec<f64>,
    pub input_stats: InputStats,
    pub target_stats: TargetStats,
}

impl ModelParameters {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.input_stats.validate()?;
        self.target_stats.validate()?;
        if self.params.len() != self.spec.param_count() {
            return Err(Error::invalid(format!(
                "parameter vector holds {} values, spec needs {}",
                self.params.len(),
                self.spec.param_count()
            )));
        }
        Ok(())
    }
}

/// One graph (or a disjoint union of graphs) ready for the network: node
/// features, the three edge populations, and the deformable-node mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub node_features: Array2<f64>,
    pub edges: EdgeSets,
    pub tube_mask: Vec<bool>,
}

impl GraphBatch {
    pub fn node_count(&self) -> usize {
        self.node_features.nrows()
    }

    /// Assemble the batch for one scene snapshot: one-hot node kind plus
    /// raw position, tube edge features recomputed from current positions,
    /// contact edges rebuilt with the given radius.
    pub fn from_state(
        state: &MeshState,
        topology: &Topology,
        contact_radius: f64,
        mu: f64,
    ) -> Result<GraphBatch> {
        state.validate()?;
        if state.len() != topology.node_count {
            return Err(Error::InconsistentMesh(format!(
                "state has {} nodes, topology {}",
                state.len(),
                topology.node_count
            )));
        }
        let n = state.len();
        let mut node_features = Array2::zeros((n, NODE_FEATURE_DIM));
        for (i, (&kind, p)) in state.kinds.iter().zip(&state.positions).enumerate() {
            let hot = match kind {
                NodeKind::Tube => 0,
                NodeKind::Die => 1,
                NodeKind::Stamp => 2,
            };
            node_features[[i, hot]] = 1.0;
            node_features[[i, 3]] = p.x;
            node_features[[i, 4]] = p.z;
        }
        let edges = EdgeSets::build(state, topology, contact_radius, mu)?;
        let tube_mask = state.kinds.iter().map(|&k| k == NodeKind::Tube).collect();
        Ok(GraphBatch { node_features, edges, tube_mask })
    }

    /// Disjoint union of several graphs: node rows are stacked and edge
    /// indices shifted; no edges cross graph boundaries.
    pub fn concat(batches: &[GraphBatch]) -> Result<GraphBatch> {
        if batches.is_empty() {
            return Err(Error::invalid("cannot concatenate zero batches"));
        }
        let feature_rows: Vec<ArrayView2<f64>> =
            batches.iter().map(|b| b.node_features.view()).collect();
        let node_features = concatenate(Axis(0), &feature_rows)
            .map_err(|e| Error::invalid(format!("node feature widths disagree: {e}")))?;

        let shift = |set_of: fn(&EdgeSets) -> &crate::mesh::EdgeSet| -> Result<crate::mesh::EdgeSet> {
            let mut edges = Vec::new();
            let mut offset = 0u32;
            for b in batches {
                let set = set_of(&b.edges);
                edges.extend(
                    set.edges.iter().map(|e| Edge { src: e.src + offset, dst: e.dst + offset }),
                );
                offset += b.node_count() as u32;
            }
            let views: Vec<ArrayView2<f64>> =
                batches.iter().map(|b| set_of(&b.edges).features.view()).collect();
            let features = concatenate(Axis(0), &views)
                .map_err(|e| Error::invalid(format!("edge feature widths disagree: {e}")))?;
            Ok(crate::mesh::EdgeSet { edges, features })
        };

        let tube = shift(|e| &e.tube)?;
        let die = shift(|e| &e.die)?;
        let stamp = shift(|e| &e.stamp)?;
        let tube_mask = batches.iter().flat_map(|b| b.tube_mask.iter().copied()).collect();
        Ok(GraphBatch {
            node_features,
            edges: EdgeSets { tube, die, stamp },
            tube_mask,
        })
    }

    fn validate_for(&self, spec: &NetSpec) -> Result<()> {
        spec.validate()?;
        let n = self.node_count();
        if self.tube_mask.len() != n {
            return Err(Error::invalid("mask length does not match node count"));
        }
        if self.node_features.ncols() != NODE_FEATURE_DIM
            || self.edges.tube.features.ncols() != TUBE_EDGE_FEATURE_DIM
            || self.edges.die.features.ncols() != CONTACT_EDGE_FEATURE_DIM
            || self.edges.stamp.features.ncols() != CONTACT_EDGE_FEATURE_DIM
        {
            return Err(Error::invalid("batch feature widths do not match the network"));
        }
        for set in [&self.edges.tube, &self.edges.die, &self.edges.stamp] {
            if set.features.nrows() != set.edges.len() {
                return Err(Error::invalid("edge features not aligned with edge list"));
            }
            for e in &set.edges {
                if e.src as usize >= n || e.dst as usize >= n {
                    return Err(Error::invalid(format!(
                        "edge ({}, {}) outside {} nodes",
                        e.src, e.dst, n
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Latent graph state between processor blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub nodes: Array2<f64>,
    pub tube: Array2<f64>,
    pub die: Array2<f64>,
    pub stamp: Array2<f64>,
}

#[derive(Debug, Default)]
struct MlpCache {
    /// Input matrix of each Linear layer, post-activation of the previous.
    inputs: Vec<Array2<f64>>,
    /// Normalized pre-gain activations when a LayerNorm closes the MLP.
    xhat: Option<Array2<f64>>,
    inv_std: Option<Vec<f64>>,
}

fn mlp_forward_mat(
    spec: &MlpSpec,
    theta: &[f64],
    x: &Array2<f64>,
    mut cache: Option<&mut MlpCache>,
) -> Array2<f64> {
    let dims = spec.layer_dims();
    let mut at = 0usize;
    let mut h = x.clone();
    for (l, &(din, dout)) in dims.iter().enumerate() {
        if let Some(c) = cache.as_deref_mut() {
            c.inputs.push(h.clone());
        }
        let w = ArrayView2::from_shape((dout, din), &theta[at..at + din * dout]).unwrap();
        at += din * dout;
        let b = &theta[at..at + dout];
        at += dout;
        let mut y = h.dot(&w.t());
        let b = ArrayView2::from_shape((1, dout), b).unwrap();
        y += &b;
        if l + 1 < dims.len() {
            y.mapv_inplace(|v| v.max(0.0));
        }
        h = y;
    }
    if spec.final_layernorm {
        let dout = spec.output_dim;
        let gain = &theta[at..at + dout];
        let offset = &theta[at + dout..at + 2 * dout];
        let mut inv_std = Vec::with_capacity(h.nrows());
        for mut row in h.rows_mut() {
            let mean = row.sum() / dout as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dout as f64;
            let s = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std.push(s);
            for v in row.iter_mut() {
                *v = (*v - mean) * s;
            }
        }
        if let Some(c) = cache.as_deref_mut() {
            c.xhat = Some(h.clone());
            c.inv_std = Some(inv_std);
        }
        for mut row in h.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = gain[j] * *v + offset[j];
            }
        }
    }
    h
}

/// Backward pass of one MLP. `d_y` is the loss gradient at the output;
/// accumulates into `d_theta` and returns the gradient at the input.
fn mlp_backward_mat(
    spec: &MlpSpec,
    theta: &[f64],
    cache: &MlpCache,
    d_y: &Array2<f64>,
    d_theta: &mut [f64],
) -> Array2<f64> {
    let dims = spec.layer_dims();
    let mut dz = d_y.clone();

    let mut at_ln = spec.param_count();
    if spec.final_layernorm {
        let dout = spec.output_dim;
        at_ln -= 2 * dout;
        let gain = &theta[at_ln..at_ln + dout];
        let xhat = cache.xhat.as_ref().unwrap();
        let inv_std = cache.inv_std.as_ref().unwrap();
        let (d_gain, d_offset) = d_theta[at_ln..at_ln + 2 * dout].split_at_mut(dout);
        let mut dx = Array2::zeros(dz.raw_dim());
        for (r, dy_row) in dz.rows().into_iter().enumerate() {
            let xh = xhat.row(r);
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for j in 0..dout {
                let dxh = dy_row[j] * gain[j];
                m1 += dxh;
                m2 += dxh * xh[j];
                d_gain[j] += dy_row[j] * xh[j];
                d_offset[j] += dy_row[j];
            }
            m1 /= dout as f64;
            m2 /= dout as f64;
            for j in 0..dout {
                let dxh = dy_row[j] * gain[j];
                dx[[r, j]] = inv_std[r] * (dxh - m1 - xh[j] * m2);
            }
        }
        dz = dx;
    }

    let mut layer_offsets = Vec::with_capacity(dims.len());
    let mut at = 0usize;
    for &(din, dout) in &dims {
        layer_offsets.push(at);
        at += din * dout + dout;
    }

    for (l, &(din, dout)) in dims.iter().enumerate().rev() {
        let at = layer_offsets[l];
        let input = &cache.inputs[l];
        let w = ArrayView2::from_shape((dout, din), &theta[at..at + din * dout]).unwrap();

        let dw = dz.t().dot(input);
        for (flat, v) in d_theta[at..at + din * dout].iter_mut().zip(dw.iter()) {
            *flat += v;
        }
        let db = dz.sum_axis(Axis(0));
        for (flat, v) in d_theta[at + din * dout..at + din * dout + dout].iter_mut().zip(db.iter())
        {
            *flat += v;
        }

        let mut dx = dz.dot(&w);
        if l > 0 {
            // The input of this layer is the previous layer's ReLU output;
            // zero entries carry no gradient.
            for (dv, &v) in dx.iter_mut().zip(input.iter()) {
                if v <= 0.0 {
                    *dv = 0.0;
                }
            }
        }
        dz = dx;
    }
    dz
}

/// Apply one MLP to a single feature vector. `theta` must hold exactly the
/// MLP's parameters in canonical order (layer weights row-major, then
/// biases, then LayerNorm gain and offset when present).
pub fn mlp_forward(spec: &MlpSpec, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    if theta.len() != spec.param_count() {
        return Err(Error::invalid(format!(
            "theta holds {} values, spec needs {}",
            theta.len(),
            spec.param_count()
        )));
    }
    if x.len() != spec.input_dim {
        return Err(Error::invalid(format!(
            "input has {} values, spec expects {}",
            x.len(),
            spec.input_dim
        )));
    }
    let xm = Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
    let y = mlp_forward_mat(spec, theta, &xm, None);
    Ok(y.row(0).to_vec())
}

struct BlockCache {
    die: MlpCache,
    tube: MlpCache,
    stamp: MlpCache,
    node: MlpCache,
}

struct ForwardCache {
    enc_node: MlpCache,
    enc_tube: MlpCache,
    enc_die: MlpCache,
    enc_stamp: MlpCache,
    blocks: Vec<BlockCache>,
    decoder: MlpCache,
}

fn theta_of<'a>(model: &'a ModelParameters, seg: Segment) -> &'a [f64] {
    &model.params[model.spec.segment_range(seg)]
}

fn encode_impl(model: &ModelParameters, batch: &GraphBatch, cache: Option<&mut ForwardCache>) -> Latents {
    let spec = &model.spec;
    let stats = &model.input_stats;
    let (cn, ct, cd, cp) = match cache {
        Some(c) => (
            Some(&mut c.enc_node),
            Some(&mut c.enc_tube),
            Some(&mut c.enc_die),
            Some(&mut c.enc_stamp),
        ),
        None => (None, None, None, None),
    };
    // Standardization is a constant affine map, so the backward pass needs
    // no extra step; caches hold the standardized inputs.
    Latents {
        nodes: mlp_forward_mat(
            &spec.node_encoder(),
            theta_of(model, Segment::NodeEncoder),
            &stats.node.apply(&batch.node_features),
            cn,
        ),
        tube: mlp_forward_mat(
            &spec.tube_edge_encoder(),
            theta_of(model, Segment::TubeEdgeEncoder),
            &stats.tube.apply(&batch.edges.tube.features),
            ct,
        ),
        die: mlp_forward_mat(
            &spec.contact_edge_encoder(),
            theta_of(model, Segment::DieEdgeEncoder),
            &stats.die.apply(&batch.edges.die.features),
            cd,
        ),
        stamp: mlp_forward_mat(
            &spec.contact_edge_encoder(),
            theta_of(model, Segment::StampEdgeEncoder),
            &stats.stamp.apply(&batch.edges.stamp.features),
            cp,
        ),
    }
}

/// Concatenate (edge latent, src node latent, dst node latent) per edge.
fn edge_update_input(edge_latents: &Array2<f64>, nodes: &Array2<f64>, edges: &[Edge]) -> Array2<f64> {
    let latent = nodes.ncols();
    let mut u = Array2::zeros((edges.len(), 3 * latent));
    for (row, e) in edges.iter().enumerate() {
        let mut dst = u.row_mut(row);
        for j in 0..latent {
            dst[j] = edge_latents[[row, j]];
            dst[latent + j] = nodes[[e.src as usize, j]];
            dst[2 * latent + j] = nodes[[e.dst as usize, j]];
        }
    }
    u
}

/// Sum updated edge latents into their destination nodes, in edge order.
fn aggregate(edge_latents: &Array2<f64>, edges: &[Edge], n_nodes: usize) -> Array2<f64> {
    let latent = edge_latents.ncols();
    let mut s = Array2::zeros((n_nodes, latent));
    for (row, e) in edges.iter().enumerate() {
        let mut dst = s.row_mut(e.dst as usize);
        for j in 0..latent {
            dst[j] += edge_latents[[row, j]];
        }
    }
    s
}

fn block_impl(
    model: &ModelParameters,
    block: usize,
    batch: &GraphBatch,
    latents: &Latents,
    cache: Option<&mut BlockCache>,
) -> Latents {
    let spec = &model.spec;
    let n = batch.node_count();
    let mut cache = cache;

    let mut updated_edges = |seg: Segment, edge_latents: &Array2<f64>, edges: &[Edge], slot: usize| {
        let u = edge_update_input(edge_latents, &latents.nodes, edges);
        let c = cache.as_deref_mut().map(|c| match slot {
            0 => &mut c.die,
            1 => &mut c.tube,
            _ => &mut c.stamp,
        });
        let mut out = mlp_forward_mat(&spec.edge_update(), theta_of(model, seg), &u, c);
        out += edge_latents;
        out
    };

    let die = updated_edges(Segment::BlockDie(block), &latents.die, &batch.edges.die.edges, 0);
    let tube = updated_edges(Segment::BlockTube(block), &latents.tube, &batch.edges.tube.edges, 1);
    let stamp =
        updated_edges(Segment::BlockStamp(block), &latents.stamp, &batch.edges.stamp.edges, 2);

    let s_die = aggregate(&die, &batch.edges.die.edges, n);
    let s_tube = aggregate(&tube, &batch.edges.tube.edges, n);
    let s_stamp = aggregate(&stamp, &batch.edges.stamp.edges, n);
    let v = concatenate(
        Axis(1),
        &[latents.nodes.view(), s_die.view(), s_tube.view(), s_stamp.view()],
    )
    .unwrap();
    let mut nodes = mlp_forward_mat(
        &spec.node_update(),
        theta_of(model, Segment::BlockNode(block)),
        &v,
        cache.as_deref_mut().map(|c| &mut c.node),
    );
    nodes += &latents.nodes;

    Latents { nodes, tube, die, stamp }
}

fn run_forward(
    model: &ModelParameters,
    batch: &GraphBatch,
    with_cache: bool,
) -> (Array2<f64>, Option<ForwardCache>) {
    let mut cache = with_cache.then(|| ForwardCache {
        enc_node: MlpCache::default(),
        enc_tube: MlpCache::default(),
        enc_die: MlpCache::default(),
        enc_stamp: MlpCache::default(),
        blocks: Vec::with_capacity(model.spec.n_blocks),
        decoder: MlpCache::default(),
    });

    let mut latents = encode_impl(model, batch, cache.as_mut());
    for b in 0..model.spec.n_blocks {
        let block_cache = cache.as_mut().map(|c| {
            c.blocks.push(BlockCache {
                die: MlpCache::default(),
                tube: MlpCache::default(),
                stamp: MlpCache::default(),
                node: MlpCache::default(),
            });
            c.blocks.last_mut().unwrap()
        });
        latents = block_impl(model, b, batch, &latents, block_cache);
    }
    let out = mlp_forward_mat(
        &model.spec.decoder(),
        theta_of(model, Segment::Decoder),
        &latents.nodes,
        cache.as_mut().map(|c| &mut c.decoder),
    );
    (out, cache)
}

/// Encode raw features into the latent graph.
pub fn encode(model: &ModelParameters, batch: &GraphBatch) -> Result<Latents> {
    model.validate()?;
    batch.validate_for(&model.spec)?;
    Ok(encode_impl(model, batch, None))
}

/// Run one message-passing block over the latent graph.
pub fn process_step(
    model: &ModelParameters,
    batch: &GraphBatch,
    latents: &Latents,
    block: usize,
) -> Result<Latents> {
    model.validate()?;
    batch.validate_for(&model.spec)?;
    if block >= model.spec.n_blocks {
        return Err(Error::invalid(format!(
            "block {block} out of range for {} blocks",
            model.spec.n_blocks
        )));
    }
    Ok(block_impl(model, block, batch, latents, None))
}

/// Full forward pass: normalized position delta per node, shape [n, 2].
/// Rigid-node rows are computed but carry no meaning; they are masked out
/// of the loss and ignored by the rollout.
pub fn forward(model: &ModelParameters, batch: &GraphBatch) -> Result<Array2<f64>> {
    model.validate()?;
    batch.validate_for(&model.spec)?;
    Ok(run_forward(model, batch, false).0)
}

/// Forward pass denormalized to meters via the stored target statistics.
pub fn predict_delta(model: &ModelParameters, batch: &GraphBatch) -> Result<Array2<f64>> {
    let mut out = forward(model, batch)?;
    let stats = &model.target_stats;
    for mut row in out.rows_mut() {
        for axis in 0..OUTPUT_DIM {
            row[axis] = row[axis] * stats.std[axis] + stats.mean[axis];
        }
    }
    Ok(out)
}

/// Masked mean-squared-error loss and its exact parameter gradient.
///
/// L = sum over masked nodes and axes of (forward - target)^2, divided by
/// (masked nodes x 2). Targets are in normalized units.
pub fn gradients(
    model: &ModelParameters,
    batch: &GraphBatch,
    targets: &Array2<f64>,
    mask: &[bool],
) -> Result<(f64, Vec<f64>)> {
    model.validate()?;
    batch.validate_for(&model.spec)?;
    let n = batch.node_count();
    if targets.nrows() != n || targets.ncols() != OUTPUT_DIM {
        return Err(Error::invalid(format!(
            "targets shaped {:?}, expected [{n}, {OUTPUT_DIM}]",
            targets.dim()
        )));
    }
    if mask.len() != n {
        return Err(Error::invalid("mask length does not match node count"));
    }
    let n_masked = mask.iter().filter(|&&m| m).count();
    if n_masked == 0 {
        return Err(Error::invalid("empty mask: nothing contributes to the loss"));
    }

    let (out, cache) = run_forward(model, batch, true);
    let cache = cache.unwrap();
    let denom = (n_masked * OUTPUT_DIM) as f64;

    let mut loss = 0.0;
    let mut d_out = Array2::zeros(out.raw_dim());
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        for c in 0..OUTPUT_DIM {
            let r = out[[i, c]] - targets[[i, c]];
            loss += r * r;
            d_out[[i, c]] = 2.0 * r / denom;
        }
    }
    loss /= denom;

    let spec = &model.spec;
    let latent = spec.latent_dim;
    let mut grad = vec![0.0; model.params.len()];

    // Decoder.
    let range = spec.segment_range(Segment::Decoder);
    let mut d_nodes = mlp_backward_mat(
        &spec.decoder(),
        theta_of(model, Segment::Decoder),
        &cache.decoder,
        &d_out,
        &mut grad[range],
    );

    let mut d_tube: Array2<f64> = Array2::zeros((batch.edges.tube.edges.len(), latent));
    let mut d_die: Array2<f64> = Array2::zeros((batch.edges.die.edges.len(), latent));
    let mut d_stamp: Array2<f64> = Array2::zeros((batch.edges.stamp.edges.len(), latent));

    for b in (0..spec.n_blocks).rev() {
        let bc = &cache.blocks[b];

        // Node update backward. Residual feeds d_nodes through unchanged.
        let range = spec.segment_range(Segment::BlockNode(b));
        let dv = mlp_backward_mat(
            &spec.node_update(),
            theta_of(model, Segment::BlockNode(b)),
            &bc.node,
            &d_nodes,
            &mut grad[range],
        );
        let mut d_nodes_in = d_nodes;
        d_nodes_in += &dv.slice(ndarray::s![.., 0..latent]);
        let d_sum_die = dv.slice(ndarray::s![.., latent..2 * latent]);
        let d_sum_tube = dv.slice(ndarray::s![.., 2 * latent..3 * latent]);
        let d_sum_stamp = dv.slice(ndarray::s![.., 3 * latent..4 * latent]);

        // Aggregation backward: each edge receives its destination's sum
        // gradient on top of any gradient already flowing into the updated
        // edge latent.
        for (row, e) in batch.edges.die.edges.iter().enumerate() {
            let mut dst = d_die.row_mut(row);
            for j in 0..latent {
                dst[j] += d_sum_die[[e.dst as usize, j]];
            }
        }
        for (row, e) in batch.edges.tube.edges.iter().enumerate() {
            let mut dst = d_tube.row_mut(row);
            for j in 0..latent {
                dst[j] += d_sum_tube[[e.dst as usize, j]];
            }
        }
        for (row, e) in batch.edges.stamp.edges.iter().enumerate() {
            let mut dst = d_stamp.row_mut(row);
            for j in 0..latent {
                dst[j] += d_sum_stamp[[e.dst as usize, j]];
            }
        }

        // Edge update backward per set.
        let edge_back = |seg: Segment,
                             mlp_cache: &MlpCache,
                             d_edge_out: &mut Array2<f64>,
                             edges: &[Edge],
                             d_nodes_in: &mut Array2<f64>,
                             grad: &mut Vec<f64>| {
            let range = spec.segment_range(seg);
            let du = mlp_backward_mat(
                &spec.edge_update(),
                theta_of(model, seg),
                mlp_cache,
                d_edge_out,
                &mut grad[range],
            );
            // Residual: gradient at the incoming edge latent keeps the
            // full outgoing gradient plus the MLP's input slice.
            let mut d_edge_in = d_edge_out.clone();
            d_edge_in += &du.slice(ndarray::s![.., 0..latent]);
            for (row, e) in edges.iter().enumerate() {
                let mut src = d_nodes_in.row_mut(e.src as usize);
                for j in 0..latent {
                    src[j] += du[[row, latent + j]];
                }
                let mut dst = d_nodes_in.row_mut(e.dst as usize);
                for j in 0..latent {
                    dst[j] += du[[row, 2 * latent + j]];
                }
            }
            d_edge_in
        };

        d_die = edge_back(
            Segment::BlockDie(b),
            &bc.die,
            &mut d_die,
            &batch.edges.die.edges,
            &mut d_nodes_in,
            &mut grad,
        );
        d_tube = edge_back(
            Segment::BlockTube(b),
            &bc.tube,
            &mut d_tube,
            &batch.edges.tube.edges,
            &mut d_nodes_in,
            &mut grad,
        );
        d_stamp = edge_back(
            Segment::BlockStamp(b),
            &bc.stamp,
            &mut d_stamp,
            &batch.edges.stamp.edges,
            &mut d_nodes_in,
            &mut grad,
        );

        d_nodes = d_nodes_in;
    }

    // Encoders.
    let range = spec.segment_range(Segment::NodeEncoder);
    mlp_backward_mat(
        &spec.node_encoder(),
        theta_of(model, Segment::NodeEncoder),
        &cache.enc_node,
        &d_nodes,
        &mut grad[range],
    );
    let range = spec.segment_range(Segment::TubeEdgeEncoder);
    mlp_backward_mat(
        &spec.tube_edge_encoder(),
        theta_of(model, Segment::TubeEdgeEncoder),
        &cache.enc_tube,
        &d_tube,
        &mut grad[range],
    );
    let range = spec.segment_range(Segment::DieEdgeEncoder);
    mlp_backward_mat(
        &spec.contact_edge_encoder(),
        theta_of(model, Segment::DieEdgeEncoder),
        &cache.enc_die,
        &d_die,
        &mut grad[range],
    );
    let range = spec.segment_range(Segment::StampEdgeEncoder);
    mlp_backward_mat(
        &spec.contact_edge_encoder(),
        theta_of(model, Segment::StampEdgeEncoder),
        &cache.enc_stamp,
        &d_stamp,
        &mut grad[range],
    );

    Ok((loss, grad))
}

/// Fan-in-scaled uniform initialization; the decoder's final layer starts
/// at zero so an untrained model predicts the mean delta.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<ModelParameters> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params = vec![0.0; spec.param_count()];
    let segments = spec.segments();
    let offsets = spec.offsets();
    let decoder_index = segments.len() - 1;
    for (i, seg) in segments.iter().enumerate() {
        let theta = &mut params[offsets[i]..offsets[i + 1]];
        let dims = seg.layer_dims();
        let n_layers = dims.len();
        let mut at = 0usize;
        for (l, &(din, dout)) in dims.iter().enumerate() {
            let last_decoder_layer = i == decoder_index && l + 1 == n_layers;
            let bound = 1.0 / (din as f64).sqrt();
            for v in theta[at..at + din * dout + dout].iter_mut() {
                let draw = rng.gen_range(-bound..bound);
                *v = if last_decoder_layer { 0.0 } else { draw };
            }
            at += din * dout + dout;
        }
        if seg.final_layernorm {
            for v in theta[at..at + seg.output_dim].iter_mut() {
                *v = 1.0;
            }
        }
    }
    Ok(ModelParameters {
        spec: *spec,
        params,
        input_stats: InputStats::identity(),
        target_stats: TargetStats::identity(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureDims {
    node: usize,
    tube_edge: usize,
    contact_edge: usize,
    output: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    spec: NetSpec,
    feature_dims: FeatureDims,
    input_stats: InputStats,
    target_stats: TargetStats,
    param_count: usize,
    params_sha256: String,
}

fn params_bytes(params: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for v in params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        write!(hex, "{b:02x}").unwrap();
    }
    hex
}

/// Persist a model as `manifest.json` plus `params.bin` (little-endian
/// float64 in canonical order) inside `dir`.
pub fn save_checkpoint(model: &ModelParameters, dir: &Path) -> Result<()> {
    model.validate()?;
    std::fs::create_dir_all(dir)?;
    let bytes = params_bytes(&model.params);
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        spec: model.spec,
        feature_dims: FeatureDims {
            node: NODE_FEATURE_DIM,
            tube_edge: TUBE_EDGE_FEATURE_DIM,
            contact_edge: CONTACT_EDGE_FEATURE_DIM,
            output: OUTPUT_DIM,
        },
        input_stats: model.input_stats.clone(),
        target_stats: model.target_stats,
        param_count: model.params.len(),
        params_sha256: sha256_hex(&bytes),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    std::fs::write(dir.join("params.bin"), bytes)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelParameters> {
    let manifest_path = dir.join("manifest.json");
    let manifest: CheckpointManifest = serde_json::from_slice(&std::fs::read(&manifest_path)?)?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let dims = &manifest.feature_dims;
    if (dims.node, dims.tube_edge, dims.contact_edge, dims.output)
        != (NODE_FEATURE_DIM, TUBE_EDGE_FEATURE_DIM, CONTACT_EDGE_FEATURE_DIM, OUTPUT_DIM)
    {
        return Err(Error::CorruptArtifact {
            path: manifest_path.display().to_string(),
            reason: "feature layout does not match this build".into(),
        });
    }
    let bin_path = dir.join("params.bin");
    let bytes = std::fs::read(&bin_path)?;
    let corrupt = |reason: &str| Error::CorruptArtifact {
        path: bin_path.display().to_string(),
        reason: reason.into(),
    };
    if bytes.len() % 8 != 0 || bytes.len() / 8 != manifest.param_count {
        return Err(corrupt(&format!(
            "expected {} float64 values, file holds {} bytes",
            manifest.param_count,
            bytes.len()
        )));
    }
    if sha256_hex(&bytes) != manifest.params_sha256 {
        return Err(corrupt("checksum mismatch"));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = ModelParameters {
        spec: manifest.spec,
        params,
        input_stats: manifest.input_stats,
        target_stats: manifest.target_stats,
    };
    model.validate().map_err(|e| Error::CorruptArtifact {
        path: manifest_path.display().to_string(),
        reason: e.to_string(),
    })?;
    Ok(model)
}
