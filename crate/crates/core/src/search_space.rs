//! Continuous relaxation of a single cell and its discretization.
//!
//! A cell is a DAG over `node_count + 1` nodes: node 0 is the cell input and
//! every intermediate node `j` receives an edge from each `i < j`. Each edge
//! carries one logit per candidate operation; its output is the
//! softmax-weighted sum of the candidates applied to the source node.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::params::BoundParams;
use crate::rng::seeded;
use crate::tensor::{concat, Array, Var};

/// Candidate operation on an edge. All kinds preserve the input shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    /// ReLU followed by a 3x3 convolution (image inputs).
    Conv3x3,
    Identity,
    /// 3x3 average pooling (image inputs).
    AvgPool3x3,
    Zero,
    /// Square dense map (feature-vector inputs).
    Linear,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv3x3 => "conv3x3",
            OpKind::Identity => "identity",
            OpKind::AvgPool3x3 => "avg_pool3x3",
            OpKind::Zero => "zero",
            OpKind::Linear => "linear",
        }
    }

    pub fn is_parameterized(self) -> bool {
        matches!(self, OpKind::Conv3x3 | OpKind::Linear)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "conv3x3" => OpKind::Conv3x3,
            "identity" | "skip" => OpKind::Identity,
            "avg_pool3x3" => OpKind::AvgPool3x3,
            "zero" => OpKind::Zero,
            "linear" => OpKind::Linear,
            other => return Err(Error::InvalidConfig(format!("unknown operation `{other}`"))),
        })
    }
}

/// Ordered, nonempty list of candidate operations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpSet(Vec<OpKind>);

impl OpSet {
    pub fn new(ops: Vec<OpKind>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::InvalidConfig("operation set is empty".into()));
        }
        for (i, op) in ops.iter().enumerate() {
            if ops[..i].contains(op) {
                return Err(Error::InvalidConfig(format!("operation `{op}` listed twice")));
            }
        }
        Ok(OpSet(ops))
    }

    /// `{conv3x3, identity, avg_pool3x3, zero}`
    pub fn image_default() -> Self {
        OpSet(alloc::vec![OpKind::Conv3x3, OpKind::Identity, OpKind::AvgPool3x3, OpKind::Zero])
    }

    /// `{linear, identity}`
    pub fn linear_default() -> Self {
        OpSet(alloc::vec![OpKind::Linear, OpKind::Identity])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ops(&self) -> &[OpKind] {
        &self.0
    }

    pub fn index_of(&self, kind: OpKind) -> Option<usize> {
        self.0.iter().position(|&k| k == kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.src, self.dst)
    }
}

/// How intermediate node outputs are combined into the cell output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CellOutput {
    #[default]
    Sum,
    /// Concatenate along the channel/feature axis.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellSpec {
    pub node_count: usize,
    pub output: CellOutput,
}

impl Default for CellSpec {
    fn default() -> Self {
        CellSpec { node_count: 2, output: CellOutput::Sum }
    }
}

impl CellSpec {
    pub fn new(node_count: usize, output: CellOutput) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidConfig("a cell needs at least one intermediate node".into()));
        }
        Ok(CellSpec { node_count, output })
    }

    /// Edges in evaluation order: grouped by destination, then by source.
    pub fn edges(&self) -> Vec<Edge> {
        (1..=self.node_count).flat_map(|dst| (0..dst).map(move |src| Edge { src, dst })).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.node_count * (self.node_count + 1) / 2
    }

    /// Width multiplier of the cell output relative to its input.
    pub fn output_multiplier(&self) -> usize {
        match self.output {
            CellOutput::Sum => 1,
            CellOutput::Concat => self.node_count,
        }
    }
}

/// Per-edge operation logits, stored as an `(edges, ops)` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureParams {
    logits: Array,
}

impl ArchitectureParams {
    pub fn zeros(cell: &CellSpec, ops: &OpSet) -> Self {
        ArchitectureParams { logits: Array::zeros(&[cell.edge_count(), ops.len()]) }
    }

    /// Small random logits, `1e-3 * N(0, 1)`.
    pub fn random(cell: &CellSpec, ops: &OpSet, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let normal = Normal::new(0.0, 1e-3).expect("valid normal");
        let n = cell.edge_count() * ops.len();
        let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
        ArchitectureParams {
            logits: Array::new(&[cell.edge_count(), ops.len()], data).expect("consistent shape"),
        }
    }

    pub fn from_logits(logits: Array) -> Result<Self> {
        if logits.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "architecture",
                detail: format!("logits must be (edges, ops), got {:?}", logits.shape()),
            });
        }
        if !logits.is_finite() {
            return Err(Error::NonFinite { op: "architecture", node: 0 });
        }
        Ok(ArchitectureParams { logits })
    }

    pub fn logits(&self) -> &Array {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut Array {
        &mut self.logits
    }

    pub fn into_logits(self) -> Array {
        self.logits
    }

    pub fn edge_count(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn op_count(&self) -> usize {
        self.logits.shape()[1]
    }

    pub fn edge_logits(&self, edge: usize) -> &[f64] {
        self.logits.row(edge)
    }

    /// Softmax of one edge's logits.
    pub fn mixing_weights(&self, edge: usize) -> Vec<f64> {
        softmax_slice(self.edge_logits(edge))
    }

    /// Mean over edges of the entropy of the mixing weights (nats).
    pub fn entropy(&self) -> f64 {
        let total: f64 = (0..self.edge_count())
            .map(|e| {
                self.mixing_weights(e)
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| -p * libm::log(p))
                    .sum::<f64>()
            })
            .sum();
        total / self.edge_count() as f64
    }
}

fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| libm::exp(v - max)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Retained operation indices per edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteArchitecture {
    pub op_set: OpSet,
    pub edges: Vec<(Edge, Vec<usize>)>,
}

impl DiscreteArchitecture {
    pub fn retained(&self, edge: usize) -> &[usize] {
        &self.edges[edge].1
    }

    /// Parses the one-line-per-edge text form (`src->dst: op[,op]`).
    /// Operation names are resolved against `op_set`.
    pub fn parse(text: &str, op_set: &OpSet) -> Result<Self> {
        let mut edges = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let pos = offset;
            offset += line.len();
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| Error::Parse { position: pos, detail };
            let (edge, ops) = line.split_once(':').ok_or_else(|| err(format!("missing `:` in `{line}`")))?;
            let (src, dst) = edge
                .trim()
                .split_once("->")
                .ok_or_else(|| err(format!("missing `->` in `{edge}`")))?;
            let src: usize = src.trim().parse().map_err(|_| err(format!("bad source `{src}`")))?;
            let dst: usize = dst.trim().parse().map_err(|_| err(format!("bad destination `{dst}`")))?;
            let mut retained = Vec::new();
            for name in ops.split(',') {
                let kind: OpKind = name.trim().parse().map_err(|e: Error| err(e.to_string()))?;
                let idx = op_set
                    .index_of(kind)
                    .ok_or_else(|| err(format!("operation `{kind}` is not in the search space")))?;
                retained.push(idx);
            }
            retained.sort_unstable();
            edges.push((Edge { src, dst }, retained));
        }
        if edges.is_empty() {
            return Err(Error::Parse { position: 0, detail: "no edges".into() });
        }
        Ok(DiscreteArchitecture { op_set: op_set.clone(), edges })
    }

    /// Checks that the edges are exactly those of `cell`.
    pub fn validate(&self, cell: &CellSpec) -> Result<()> {
        let expected = cell.edges();
        let got: Vec<Edge> = self.edges.iter().map(|(e, _)| *e).collect();
        if expected != got {
            return Err(Error::InvalidConfig(format!(
                "architecture edges {got:?} do not match the cell {expected:?}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for DiscreteArchitecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (edge, ops) in &self.edges {
            write!(f, "{edge}: ")?;
            for (i, &o) in ops.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                f.write_str(self.op_set.ops()[o].name())?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Keeps the `k` largest logits on every edge; ties go to the lower index.
pub fn derive_architecture(
    arch: &ArchitectureParams,
    cell: &CellSpec,
    op_set: &OpSet,
    k: usize,
) -> Result<DiscreteArchitecture> {
    if k == 0 || k > op_set.len() || arch.op_count() != op_set.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot keep {k} of {} operations (logits have {})",
            op_set.len(),
            arch.op_count()
        )));
    }
    if arch.edge_count() != cell.edge_count() {
        return Err(Error::InvalidConfig(format!(
            "{} edge rows for a cell with {} edges",
            arch.edge_count(),
            cell.edge_count()
        )));
    }
    let edges = cell
        .edges()
        .into_iter()
        .enumerate()
        .map(|(e, edge)| {
            let row = arch.edge_logits(e);
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let mut keep = order[..k].to_vec();
            keep.sort_unstable();
            (edge, keep)
        })
        .collect();
    Ok(DiscreteArchitecture { op_set: op_set.clone(), edges })
}

/// Parameter name of a candidate operation on an edge.
pub fn op_param_name(edge: Edge, kind: OpKind) -> String {
    format!("cell.e{}_{}.{}", edge.src, edge.dst, kind.name())
}

fn apply_candidate<'t>(kind: OpKind, input: Var<'t>, param: Option<Var<'t>>) -> Result<Option<Var<'t>>> {
    let rank = input.value().rank();
    let missing = || Error::MissingParam(format!("weights for {kind}"));
    let wrong_rank = |need: usize| Error::ShapeMismatch {
        op: kind.name(),
        detail: format!("needs rank-{need} input, got {:?}", input.shape()),
    };
    Ok(match kind {
        OpKind::Zero => None,
        OpKind::Identity => Some(input),
        OpKind::AvgPool3x3 => {
            if rank != 4 {
                return Err(wrong_rank(4));
            }
            Some(input.avg_pool3()?)
        }
        OpKind::Conv3x3 => {
            if rank != 4 {
                return Err(wrong_rank(4));
            }
            Some(input.relu()?.conv2d(param.ok_or_else(missing)?)?)
        }
        OpKind::Linear => {
            if rank != 2 {
                return Err(wrong_rank(2));
            }
            Some(input.matmul(param.ok_or_else(missing)?)?)
        }
    })
}

/// `sum_o softmax(edge_logits)_o * op_o(input)`.
///
/// `op_params[o]` holds the weights of candidate `o` when it has any.
pub fn mixed_op_forward<'t>(
    edge_logits: Var<'t>,
    input: Var<'t>,
    op_set: &OpSet,
    op_params: &[Option<Var<'t>>],
) -> Result<Var<'t>> {
    if edge_logits.numel() != op_set.len() || op_params.len() != op_set.len() {
        return Err(Error::ShapeMismatch {
            op: "mixed_op",
            detail: format!(
                "{} logits / {} weight slots for {} operations",
                edge_logits.numel(),
                op_params.len(),
                op_set.len()
            ),
        });
    }
    let weights = edge_logits.reshape(&[op_set.len()])?.softmax(0)?;
    let mut acc: Option<Var<'t>> = None;
    for (o, &kind) in op_set.ops().iter().enumerate() {
        let Some(y) = apply_candidate(kind, input, op_params[o])? else { continue };
        if y.shape() != input.shape() {
            return Err(Error::ShapeMismatch {
                op: "mixed_op",
                detail: format!("{kind} produced {:?} from {:?}", y.shape(), input.shape()),
            });
        }
        let term = y.mul_scalar(weights.slice_axis(0, o, 1)?)?;
        acc = Some(match acc {
            Some(a) => a.add(term)?,
            None => term,
        });
    }
    match acc {
        Some(a) => Ok(a),
        None => Ok(input.tape().constant(Array::zeros(&input.shape()))),
    }
}

/// Source of per-edge mixing for [`cell_forward`].
#[derive(Clone, Copy, Debug)]
pub enum Mixing<'a, 't> {
    /// `(edges, ops)` logits on the tape.
    Continuous(Var<'t>),
    /// Fixed network: retained operations are summed with unit weight.
    Discrete(&'a DiscreteArchitecture),
}

/// Runs one cell. Node `j` is the sum over `i < j` of edge `i -> j`; the
/// cell output combines nodes `1..=node_count` per [`CellOutput`].
pub fn cell_forward<'t>(
    mixing: Mixing<'_, 't>,
    weights: &BoundParams<'_, 't>,
    cell: &CellSpec,
    op_set: &OpSet,
    input: Var<'t>,
) -> Result<Var<'t>> {
    let edges = cell.edges();
    match mixing {
        Mixing::Continuous(logits) => {
            let s = logits.shape();
            if s.len() != 2 || s[0] != edges.len() || s[1] != op_set.len() {
                return Err(Error::ShapeMismatch {
                    op: "cell",
                    detail: format!("logits {s:?} for {} edges x {} ops", edges.len(), op_set.len()),
                });
            }
        }
        Mixing::Discrete(arch) => {
            arch.validate(cell)?;
            if arch.op_set != *op_set {
                return Err(Error::InvalidConfig("architecture uses a different operation set".into()));
            }
        }
    }

    let mut nodes: Vec<Var<'t>> = alloc::vec![input];
    let mut e = 0;
    for _dst in 1..=cell.node_count {
        let mut acc: Option<Var<'t>> = None;
        for src in 0..nodes.len() {
            let edge = edges[e];
            debug_assert_eq!(edge.src, src);
            let x = nodes[src];
            let params: Vec<Option<Var<'t>>> = op_set
                .ops()
                .iter()
                .map(|&k| if k.is_parameterized() { weights.get(&op_param_name(edge, k)).map(Some) } else { Ok(None) })
                .collect::<Result<_>>()?;
            let y = match mixing {
                Mixing::Continuous(logits) => {
                    mixed_op_forward(logits.slice_axis(0, e, 1)?, x, op_set, &params)?
                }
                Mixing::Discrete(arch) => {
                    let mut sum: Option<Var<'t>> = None;
                    for &o in arch.retained(e) {
                        if let Some(y) = apply_candidate(op_set.ops()[o], x, params[o])? {
                            sum = Some(match sum {
                                Some(s) => s.add(y)?,
                                None => y,
                            });
                        }
                    }
                    match sum {
                        Some(s) => s,
                        None => x.tape().constant(Array::zeros(&x.shape())),
                    }
                }
            };
            acc = Some(match acc {
                Some(a) => a.add(y)?,
                None => y,
            });
            e += 1;
        }
        nodes.push(acc.expect("every intermediate node has an incoming edge"));
    }

    let inner = &nodes[1..];
    match cell.output {
        CellOutput::Sum => inner[1..].iter().try_fold(inner[0], |a, &n| a.add(n)),
        CellOutput::Concat => concat(inner, 1),
    }
}
