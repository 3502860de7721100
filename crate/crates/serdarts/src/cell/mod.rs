//! The cell DAG and network stacking.
//!
//! A cell has two input nodes (the outputs of the two preceding cells) and
//! `N` intermediate nodes; every intermediate node receives an edge from
//! both inputs and every earlier intermediate. Node outputs are the sum of
//! their incoming edge functions; the cell output is the channel
//! concatenation of all intermediate nodes. Reduction cells apply stride 2
//! on edges leaving the input nodes, halving the spatial extent; the network
//! doubles its channel width at each reduction cell to compensate.

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d};
use crate::rng::RngState;
use crate::search::{
    alpha_init, build_candidate, AlphaTable, CandidateOp, FactorizedReduce, MixedOp, ReluConvBn,
};
use crate::tensor::ops::{add, concat};
use crate::tensor::{Element, Tensor};

mod genotype;

pub use genotype::{derive_genotype, export_genotype, genotype_dot, import_genotype, Genotype};

/// Fixed wiring of a cell: 2 input nodes and `n` intermediate nodes, with an
/// edge into every intermediate from each earlier node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellTopology {
    pub num_intermediate: usize,
}

/// Input nodes per cell (the two predecessor cells).
pub const NUM_INPUT_NODES: usize = 2;

impl CellTopology {
    pub fn new(num_intermediate: usize) -> Self {
        CellTopology { num_intermediate }
    }

    /// Total edge count: sum over intermediate j of (2 + j).
    pub fn num_edges(&self) -> usize {
        (0..self.num_intermediate).map(|j| NUM_INPUT_NODES + j).sum()
    }

    /// Edges in canonical row order: grouped by destination node ascending,
    /// then by source node ascending. This order indexes alpha table rows.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for j in 0..self.num_intermediate {
            let to = NUM_INPUT_NODES + j;
            for from in 0..to {
                out.push((from, to));
            }
        }
        out
    }

    /// Alpha-table row of edge `(from, to)`.
    pub fn edge_row(&self, from: usize, to: usize) -> usize {
        let j = to - NUM_INPUT_NODES;
        (0..j).map(|i| NUM_INPUT_NODES + i).sum::<usize>() + from
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Normal,
    Reduction,
}

/// Architecture weights for the two cell kinds, shared across all cells of
/// each kind.
pub struct Alphas<S: Element> {
    pub normal: AlphaTable<S>,
    pub reduce: AlphaTable<S>,
}

impl<S: Element> Alphas<S> {
    pub fn init(topology: CellTopology, rng: &mut RngState) -> Result<Self> {
        Ok(Alphas {
            normal: alpha_init(rng, topology.num_edges())?,
            reduce: alpha_init(rng, topology.num_edges())?,
        })
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        vec![self.normal.table.clone(), self.reduce.table.clone()]
    }

    pub fn for_kind(&self, kind: CellKind) -> &AlphaTable<S> {
        match kind {
            CellKind::Normal => &self.normal,
            CellKind::Reduction => &self.reduce,
        }
    }
}

/// Input preprocessing: adapt a predecessor output to this cell's node
/// width (and spatial extent, when the predecessor precedes a reduction).
enum Preprocess<S: Element> {
    Conv(ReluConvBn<S>),
    Reduce(FactorizedReduce<S>),
}

impl<S: Element> Preprocess<S> {
    fn forward(&self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        match self {
            Preprocess::Conv(c) => c.forward(x, train),
            Preprocess::Reduce(r) => r.forward(x, train),
        }
    }

    fn params(&self) -> Vec<Tensor<S>> {
        match self {
            Preprocess::Conv(c) => c.params(),
            Preprocess::Reduce(r) => r.params(),
        }
    }

    fn named_state(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        match self {
            Preprocess::Conv(c) => c.named_state(prefix, out),
            Preprocess::Reduce(r) => r.named_state(prefix, out),
        }
    }
}

/// One edge of a cell: mixed during search, a single concrete op after
/// discretization.
enum EdgeOp<S: Element> {
    Mixed(MixedOp<S>),
    Concrete { from_node: usize, op: CandidateOp<S>, name: &'static str },
}

/// A cell instance. `node_width` is the channel width of every node; the
/// cell outputs `node_width * N` channels.
pub struct Cell<S: Element> {
    pub kind: CellKind,
    pub topology: CellTopology,
    pub node_width: usize,
    preprocess0: Preprocess<S>,
    preprocess1: ReluConvBn<S>,
    /// Edges grouped by destination node, in canonical order.
    edges: Vec<EdgeOp<S>>,
    /// edge index range per intermediate node (into `edges`)
    node_edges: Vec<(usize, usize)>,
    /// node ids whose outputs form the cell output
    concat: Vec<usize>,
}

impl<S: Element> Cell<S> {
    /// Search-phase cell: one mixed op per topology edge.
    #[allow(clippy::too_many_arguments)]
    pub fn search(
        kind: CellKind,
        topology: CellTopology,
        prev_prev_channels: usize,
        prev_channels: usize,
        node_width: usize,
        reduction_prev: bool,
        rng: &mut RngState,
    ) -> Result<Self> {
        let (preprocess0, preprocess1) =
            Self::preprocessing(prev_prev_channels, prev_channels, node_width, reduction_prev, rng)?;
        let mut edges = Vec::new();
        let mut node_edges = Vec::new();
        for j in 0..topology.num_intermediate {
            let to = NUM_INPUT_NODES + j;
            let start = edges.len();
            for from in 0..to {
                let stride = Self::edge_stride(kind, from);
                let row = topology.edge_row(from, to);
                edges.push(EdgeOp::Mixed(MixedOp::new(from, to, row, node_width, stride, rng)?));
            }
            node_edges.push((start, edges.len()));
        }
        let concat = (NUM_INPUT_NODES..NUM_INPUT_NODES + topology.num_intermediate).collect();
        Ok(Cell { kind, topology, node_width, preprocess0, preprocess1, edges, node_edges, concat })
    }

    /// Discrete cell: one concrete op per retained genotype edge.
    #[allow(clippy::too_many_arguments)]
    pub fn discrete(
        kind: CellKind,
        genotype: &Genotype,
        prev_prev_channels: usize,
        prev_channels: usize,
        node_width: usize,
        reduction_prev: bool,
        rng: &mut RngState,
    ) -> Result<Self> {
        genotype.validate()?;
        let topology = CellTopology::new(genotype.nodes);
        let (preprocess0, preprocess1) =
            Self::preprocessing(prev_prev_channels, prev_channels, node_width, reduction_prev, rng)?;
        let spec = match kind {
            CellKind::Normal => &genotype.normal,
            CellKind::Reduction => &genotype.reduce,
        };
        let mut edges = Vec::new();
        let mut node_edges = Vec::new();
        for j in 0..topology.num_intermediate {
            let to = NUM_INPUT_NODES + j;
            let start = edges.len();
            for &(op, from, edge_to) in spec.iter().filter(|&&(_, _, t)| t == to) {
                let _ = edge_to;
                let stride = Self::edge_stride(kind, from);
                edges.push(EdgeOp::Concrete {
                    from_node: from,
                    op: build_candidate(op, node_width, stride, rng)?,
                    name: op.name(),
                });
            }
            node_edges.push((start, edges.len()));
        }
        let concat = genotype.concat.clone();
        Ok(Cell { kind, topology, node_width, preprocess0, preprocess1, edges, node_edges, concat })
    }

    fn preprocessing(
        prev_prev_channels: usize,
        prev_channels: usize,
        node_width: usize,
        reduction_prev: bool,
        rng: &mut RngState,
    ) -> Result<(Preprocess<S>, ReluConvBn<S>)> {
        let p0 = if reduction_prev {
            Preprocess::Reduce(FactorizedReduce::new(prev_prev_channels, node_width, rng)?)
        } else {
            Preprocess::Conv(ReluConvBn::new(prev_prev_channels, node_width, 1, 1, 0, rng)?)
        };
        let p1 = ReluConvBn::new(prev_channels, node_width, 1, 1, 0, rng)?;
        Ok((p0, p1))
    }

    /// Stride 1 in normal cells; 2 on edges from input nodes in reduction
    /// cells.
    fn edge_stride(kind: CellKind, from: usize) -> usize {
        match kind {
            CellKind::Reduction if from < NUM_INPUT_NODES => 2,
            _ => 1,
        }
    }

    /// Output channel width: concatenation of the concat-set nodes.
    pub fn out_channels(&self) -> usize {
        self.node_width * self.concat.len()
    }

    /// Output of intermediate node `j` (zero-based): the sum over its
    /// incoming edges of the edge function applied to the source node state.
    /// `states` must hold the outputs of nodes `0..2+j`.
    pub fn node_output(
        &self,
        alphas: Option<&Alphas<S>>,
        j: usize,
        states: &[Tensor<S>],
        train: bool,
    ) -> Result<Tensor<S>> {
        let (start, end) = self.node_edges[j];
        let mut acc: Option<Tensor<S>> = None;
        let mut acc_shape: Option<Vec<usize>> = None;
        for edge in &self.edges[start..end] {
            let y = match edge {
                EdgeOp::Mixed(m) => {
                    let table = alphas
                        .ok_or_else(|| Error::invalid("cell_forward", "search cell needs alpha tables"))?
                        .for_kind(self.kind);
                    m.forward(table, &states[m.from_node], train)?
                }
                EdgeOp::Concrete { from_node, op, .. } => op.forward(&states[*from_node], train)?,
            };
            if let Some(shape) = &acc_shape {
                if shape != y.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "node_output",
                        lhs: shape.clone(),
                        rhs: y.shape().to_vec(),
                    });
                }
            } else {
                acc_shape = Some(y.shape().to_vec());
            }
            acc = Some(match acc {
                Some(a) => add(&a, &y)?,
                None => y,
            });
        }
        // a node with no retained edges cannot occur in a valid genotype;
        // mixed cells always have edges
        acc.ok_or_else(|| Error::invalid("node_output", format!("node {j} has no incoming edges")))
    }

    /// Run the cell on its two predecessor outputs: preprocess both to the
    /// node width, evaluate nodes in topological order, concatenate all
    /// intermediate outputs along the channel axis.
    pub fn forward(
        &self,
        alphas: Option<&Alphas<S>>,
        prev_prev: &Tensor<S>,
        prev: &Tensor<S>,
        train: bool,
    ) -> Result<Tensor<S>> {
        let s0 = self.preprocess0.forward(prev_prev, train)?;
        let s1 = self.preprocess1.forward(prev, train)?;
        let mut states = vec![s0, s1];
        for j in 0..self.topology.num_intermediate {
            let out = self.node_output(alphas, j, &states, train)?;
            states.push(out);
        }
        let outputs: Vec<Tensor<S>> = self.concat.iter().map(|&id| states[id].clone()).collect();
        concat(1, &outputs)
    }

    /// Retained edges of a discrete cell as (op name, from, to).
    pub fn concrete_edges(&self) -> Vec<(&'static str, usize, usize)> {
        let mut out = Vec::new();
        for (j, &(start, end)) in self.node_edges.iter().enumerate() {
            for e in &self.edges[start..end] {
                if let EdgeOp::Concrete { from_node, name, .. } = e {
                    out.push((*name, *from_node, NUM_INPUT_NODES + j));
                }
            }
        }
        out
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        let mut p = self.preprocess0.params();
        p.extend(self.preprocess1.params());
        for e in &self.edges {
            match e {
                EdgeOp::Mixed(m) => p.extend(m.params()),
                EdgeOp::Concrete { op, .. } => p.extend(op.params()),
            }
        }
        p
    }

    pub fn named_state(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        self.preprocess0.named_state(&format!("{prefix}.pre0"), out);
        self.preprocess1.named_state(&format!("{prefix}.pre1"), out);
        for (j, &(start, end)) in self.node_edges.iter().enumerate() {
            for (i, e) in self.edges[start..end].iter().enumerate() {
                match e {
                    EdgeOp::Mixed(m) => {
                        m.named_state(&format!("{prefix}.n{}.e{}", NUM_INPUT_NODES + j, i), out)
                    }
                    EdgeOp::Concrete { op, from_node, .. } => op.named_state(
                        &format!("{prefix}.n{}.from{}", NUM_INPUT_NODES + j, from_node),
                        out,
                    ),
                }
            }
        }
    }
}

/// Network-level configuration: cell count, width schedule, and stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Number of stacked cells (C).
    pub cells: usize,
    /// Channel width of the first cell's output; doubles at each reduction.
    pub init_channels: usize,
    /// Intermediate nodes per cell (N).
    pub nodes: usize,
    /// Stem output width multiplier over `init_channels`.
    pub stem_multiplier: usize,
    /// Input channels (1 for spectrograms).
    pub input_channels: usize,
    /// Expected spatial extent of inputs.
    pub input_hw: (usize, usize),
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            cells: 4,
            init_channels: 16,
            nodes: 4,
            stem_multiplier: 3,
            input_channels: 1,
            input_hw: (128, 128),
        }
    }
}

impl NetworkConfig {
    /// Zero-based reduction cell indices: floor(C/3) and floor(2C/3),
    /// deduplicated (C=1 places a single reduction at cell 0).
    pub fn reduction_positions(&self) -> Vec<usize> {
        let mut pos = vec![self.cells / 3, 2 * self.cells / 3];
        pos.dedup();
        pos.retain(|&p| p < self.cells);
        pos
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 || self.nodes == 0 {
            return Err(Error::invalid("network_config", "cells and nodes must be >= 1"));
        }
        if self.init_channels % self.nodes != 0 {
            return Err(Error::invalid(
                "network_config",
                format!("init_channels {} must be divisible by nodes {}", self.init_channels, self.nodes),
            ));
        }
        if self.init_channels / self.nodes < 2 {
            return Err(Error::invalid(
                "network_config",
                "node width below 2 cannot support factorized reduction",
            ));
        }
        Ok(())
    }

    /// Per-cell (is_reduction, cell output width).
    fn width_schedule(&self) -> Vec<(bool, usize)> {
        let positions = self.reduction_positions();
        let mut width = self.init_channels;
        (0..self.cells)
            .map(|t| {
                let red = positions.contains(&t);
                if red {
                    width *= 2;
                }
                (red, width)
            })
            .collect()
    }

    /// Analytic output feature shape `(channels, h, w)` for an input extent.
    pub fn feature_shape(&self, input_hw: (usize, usize)) -> (usize, usize, usize) {
        let schedule = self.width_schedule();
        let reductions = schedule.iter().filter(|(r, _)| *r).count() as u32;
        let c = schedule.last().map(|&(_, w)| w).unwrap_or(self.init_channels);
        (c, input_hw.0 >> reductions, input_hw.1 >> reductions)
    }
}

/// A stack of cells behind a stem convolution, per the two-predecessor
/// recurrence: the stem output seeds both inputs of the first cell.
pub struct Network<S: Element> {
    pub cfg: NetworkConfig,
    stem_conv: Conv2d<S>,
    stem_bn: BatchNorm2d<S>,
    cells: Vec<Cell<S>>,
    alphas: Option<Alphas<S>>,
}

impl<S: Element> Network<S> {
    /// Continuous (search) network with freshly initialized alpha tables.
    pub fn search(cfg: NetworkConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        let topology = CellTopology::new(cfg.nodes);
        let alphas = Alphas::init(topology, rng)?;
        Self::build(cfg, rng, Some(alphas), None)
    }

    /// Discrete network realizing a genotype. Output shapes match the
    /// search network of the same config.
    pub fn discrete(cfg: NetworkConfig, genotype: &Genotype, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        genotype.validate()?;
        if genotype.nodes != cfg.nodes {
            return Err(Error::InvalidGenotype(format!(
                "genotype has {} nodes but config expects {}",
                genotype.nodes, cfg.nodes
            )));
        }
        Self::build(cfg, rng, None, Some(genotype))
    }

    fn build(
        cfg: NetworkConfig,
        rng: &mut RngState,
        alphas: Option<Alphas<S>>,
        genotype: Option<&Genotype>,
    ) -> Result<Self> {
        let stem_out = cfg.stem_multiplier * cfg.init_channels;
        let stem_conv = Conv2d::new(
            cfg.input_channels,
            stem_out,
            (3, 3),
            (1, 1),
            (1, 1),
            (1, 1),
            1,
            false,
            rng,
        )?;
        let stem_bn = BatchNorm2d::new(stem_out);

        let topology = CellTopology::new(cfg.nodes);
        let mut cells = Vec::with_capacity(cfg.cells);
        let (mut ch_pp, mut ch_p) = (stem_out, stem_out);
        let mut reduction_prev = false;
        for (red, width) in cfg.width_schedule() {
            let kind = if red { CellKind::Reduction } else { CellKind::Normal };
            let node_w = width / cfg.nodes;
            let cell = match genotype {
                Some(g) => Cell::discrete(kind, g, ch_pp, ch_p, node_w, reduction_prev, rng)?,
                None => Cell::search(kind, topology, ch_pp, ch_p, node_w, reduction_prev, rng)?,
            };
            ch_pp = ch_p;
            ch_p = cell.out_channels();
            reduction_prev = red;
            cells.push(cell);
        }
        Ok(Network { cfg, stem_conv, stem_bn, cells, alphas })
    }

    /// Stem then cell stack; returns the final cell's feature map.
    pub fn forward(&self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        let shape = x.shape();
        if shape.len() != 4
            || shape[1] != self.cfg.input_channels
            || (shape[2], shape[3]) != self.cfg.input_hw
        {
            return Err(Error::ShapeMismatch {
                op: "network_forward",
                lhs: shape.to_vec(),
                rhs: vec![0, self.cfg.input_channels, self.cfg.input_hw.0, self.cfg.input_hw.1],
            });
        }
        let stem = self.stem_bn.forward(&self.stem_conv.forward(x)?, train)?;
        let (mut s0, mut s1) = (stem.clone(), stem);
        for cell in &self.cells {
            let next = cell.forward(self.alphas.as_ref(), &s0, &s1, train)?;
            s0 = s1;
            s1 = next;
        }
        Ok(s1)
    }

    pub fn cells(&self) -> &[Cell<S>] {
        &self.cells
    }

    pub fn alphas(&self) -> Option<&Alphas<S>> {
        self.alphas.as_ref()
    }

    /// Network weights (excluding alpha tables).
    pub fn weight_params(&self) -> Vec<Tensor<S>> {
        let mut p = self.stem_conv.params();
        p.extend(self.stem_bn.params());
        for c in &self.cells {
            p.extend(c.params());
        }
        p
    }

    /// Alpha tables (search networks only).
    pub fn alpha_params(&self) -> Vec<Tensor<S>> {
        self.alphas.as_ref().map(|a| a.params()).unwrap_or_default()
    }

    pub fn named_state(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        self.stem_conv.named_params(&format!("{prefix}.stem.conv"), out);
        self.stem_bn.named_state(&format!("{prefix}.stem.bn"), out);
        for (i, c) in self.cells.iter().enumerate() {
            c.named_state(&format!("{prefix}.cells.{i}"), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::OpKind;

    #[test]
    fn topology_edge_count_and_rows() {
        let t = CellTopology::new(4);
        assert_eq!(t.num_edges(), 14);
        let edges = t.edges();
        assert_eq!(edges.len(), 14);
        assert_eq!(edges[0], (0, 2));
        assert_eq!(edges[2], (0, 3));
        assert_eq!(edges[13], (4, 5));
        for (row, &(f, to)) in edges.iter().enumerate() {
            assert_eq!(t.edge_row(f, to), row);
        }
    }

    #[test]
    fn reduction_positions_by_cell_count() {
        let pos = |c: usize| NetworkConfig { cells: c, ..Default::default() }.reduction_positions();
        assert_eq!(pos(1), vec![0]);
        assert_eq!(pos(2), vec![0, 1]);
        assert_eq!(pos(3), vec![1, 2]);
        assert_eq!(pos(4), vec![1, 2]);
        assert_eq!(pos(5), vec![1, 3]);
        assert_eq!(pos(6), vec![2, 4]);
    }

    fn skip_genotype(nodes: usize) -> Genotype {
        let edges: Vec<(OpKind, usize, usize)> = (0..nodes)
            .flat_map(|j| {
                let to = NUM_INPUT_NODES + j;
                [(OpKind::SkipConnect, 0, to), (OpKind::SkipConnect, 1, to)]
            })
            .collect();
        Genotype {
            concat: (NUM_INPUT_NODES..NUM_INPUT_NODES + nodes).collect(),
            nodes,
            normal: edges.clone(),
            reduce: edges,
        }
    }

    #[test]
    fn node_output_identity_edges_sum_inputs() {
        // discrete cell with skip_connect on both retained edges of node 2:
        // preprocessed inputs a, b give node output a + b
        let mut rng = RngState::new(0);
        let g = skip_genotype(4);
        let cell = Cell::<f64>::discrete(CellKind::Normal, &g, 8, 8, 4, false, &mut rng).unwrap();
        let a = Tensor::<f64>::randn(&mut rng, &[1, 8, 6, 6], 1.0);
        let b = Tensor::<f64>::randn(&mut rng, &[1, 8, 6, 6], 1.0);
        // preprocess manually through the cell's own layers via forward of
        // node 0: emulate by running the full forward and checking the first
        // node slice equals p0 + p1
        let out = cell.forward(None, &a, &b, false).unwrap();
        assert_eq!(out.shape(), &[1, 16, 6, 6]);
        let p0 = cell.preprocess0.forward(&a, false).unwrap();
        let p1 = cell.preprocess1.forward(&b, false).unwrap();
        let want = add(&p0, &p1).unwrap();
        let got = out.narrow(1, 0, 4).unwrap();
        for (x, y) in got.to_vec().iter().zip(want.to_vec()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn node_output_equals_explicit_edge_sum() {
        let mut rng = RngState::new(1);
        let topology = CellTopology::new(3);
        let cell =
            Cell::<f64>::search(CellKind::Normal, topology, 8, 8, 4, false, &mut rng).unwrap();
        let alphas = Alphas::init(topology, &mut RngState::new(2)).unwrap();
        let s: Vec<Tensor<f64>> =
            (0..4).map(|_| Tensor::randn(&mut rng, &[1, 4, 5, 5], 1.0)).collect();

        // node j=2 has 4 incoming edges from nodes 0..4
        let got = cell.node_output(Some(&alphas), 2, &s, false).unwrap();

        let (start, end) = cell.node_edges[2];
        let mut want = Tensor::<f64>::zeros(&[1, 4, 5, 5]);
        for e in &cell.edges[start..end] {
            let EdgeOp::Mixed(m) = e else { unreachable!() };
            let y = m.forward(&alphas.normal, &s[m.from_node], false).unwrap();
            want = add(&want, &y).unwrap();
        }
        for (x, y) in got.to_vec().iter().zip(want.to_vec()) {
            assert!((x - y).abs() <= 1e-5);
        }
    }

    #[test]
    fn cell_output_shapes() {
        let mut rng = RngState::new(3);
        let topology = CellTopology::new(4);
        // normal cell with 16-wide nodes on 16ch 32x32 inputs: 64ch 32x32
        let cell = Cell::<f32>::search(CellKind::Normal, topology, 16, 16, 16, false, &mut rng).unwrap();
        let alphas = Alphas::init(topology, &mut RngState::new(4)).unwrap();
        let a = Tensor::<f32>::randn(&mut rng, &[1, 16, 32, 32], 1.0);
        let b = Tensor::<f32>::randn(&mut rng, &[1, 16, 32, 32], 1.0);
        let out = cell.forward(Some(&alphas), &a, &b, false).unwrap();
        assert_eq!(out.shape(), &[1, 64, 32, 32]);

        // reduction cell: spatial halves
        let cell = Cell::<f32>::search(CellKind::Reduction, topology, 16, 16, 16, false, &mut rng).unwrap();
        let out = cell.forward(Some(&alphas), &a, &b, false).unwrap();
        assert_eq!(out.shape(), &[1, 64, 16, 16]);
    }

    #[test]
    fn cell_forward_is_deterministic() {
        let build = || {
            let mut rng = RngState::new(7);
            let topology = CellTopology::new(2);
            let cell =
                Cell::<f32>::search(CellKind::Normal, topology, 4, 4, 2, false, &mut rng).unwrap();
            let alphas = Alphas::init(topology, &mut RngState::new(8)).unwrap();
            let a = Tensor::<f32>::randn(&mut rng, &[1, 4, 6, 6], 1.0);
            let b = Tensor::<f32>::randn(&mut rng, &[1, 4, 6, 6], 1.0);
            cell.forward(Some(&alphas), &a, &b, false).unwrap().to_vec()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn network_shapes_and_positions() {
        let mut rng = RngState::new(5);
        let cfg = NetworkConfig { input_hw: (128, 128), ..Default::default() };
        assert_eq!(cfg.feature_shape((128, 128)), (64, 32, 32));
        let net = Network::<f32>::search(cfg, &mut rng).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 1, 128, 128]);
        let y = net.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[1, 64, 32, 32]);
    }

    #[test]
    fn single_cell_network_reduces_once() {
        let mut rng = RngState::new(6);
        let cfg = NetworkConfig { cells: 1, init_channels: 8, input_hw: (128, 128), ..Default::default() };
        let net = Network::<f32>::search(cfg, &mut rng).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 1, 128, 128]);
        let y = net.forward(&x, false).unwrap();
        // cell 0 is a reduction: one spatial halving, width 16
        assert_eq!(y.shape(), &[1, 16, 64, 64]);
    }

    #[test]
    fn batch_dimension_is_preserved() {
        let mut rng = RngState::new(9);
        let cfg = NetworkConfig {
            cells: 2,
            init_channels: 8,
            input_hw: (32, 32),
            ..Default::default()
        };
        let net = Network::<f32>::search(cfg, &mut rng).unwrap();
        let x = Tensor::<f32>::zeros(&[2, 1, 32, 32]);
        assert_eq!(net.forward(&x, false).unwrap().shape()[0], 2);
    }

    #[test]
    fn discrete_matches_continuous_shape_for_all_cell_counts() {
        for c in 1..=6 {
            let cfg = NetworkConfig {
                cells: c,
                init_channels: 8,
                input_hw: (16, 16),
                ..Default::default()
            };
            let mut rng = RngState::new(100 + c as u64);
            let search = Network::<f32>::search(cfg.clone(), &mut rng).unwrap();
            let g = derive_genotype(search.alphas().unwrap()).unwrap();
            let discrete = Network::<f32>::discrete(cfg, &g, &mut rng).unwrap();
            let x = Tensor::<f32>::zeros(&[1, 1, 16, 16]);
            let ys = search.forward(&x, false).unwrap();
            let yd = discrete.forward(&x, false).unwrap();
            assert_eq!(ys.shape(), yd.shape(), "C = {c}");
        }
    }

    #[test]
    fn later_cells_depend_only_on_two_predecessors() {
        // y_t = f(y_{t-1}, y_{t-2}): replaying the last cell with the same
        // two inputs must give the same output regardless of earlier history
        let mut rng = RngState::new(10);
        let cfg = NetworkConfig {
            cells: 4,
            init_channels: 8,
            input_hw: (32, 32),
            ..Default::default()
        };
        let net = Network::<f32>::search(cfg, &mut rng).unwrap();
        let x = Tensor::<f32>::randn(&mut rng, &[1, 1, 32, 32], 1.0);

        let stem = net.stem_bn.forward(&net.stem_conv.forward(&x).unwrap(), false).unwrap();
        let (mut s0, mut s1) = (stem.clone(), stem);
        let mut outputs = Vec::new();
        for cell in &net.cells {
            let next = cell.forward(net.alphas(), &s0, &s1, false).unwrap();
            s0 = s1;
            s1 = next.clone();
            outputs.push(next);
        }
        // recompute y_3 from (y_1, y_2) alone, with y_0 perturbed into
        // irrelevance: identical inputs => identical output, exactly
        let y3_again = net.cells[3]
            .forward(net.alphas(), &outputs[1], &outputs[2], false)
            .unwrap();
        assert_eq!(outputs[3].to_vec(), y3_again.to_vec());
    }
}
