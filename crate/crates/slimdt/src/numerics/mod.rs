//! Dense `f64` tensor numerics with reverse-mode automatic differentiation.
//!
//! Deliberately small: row-major buffers, a single-owner [`Tape`] recording
//! primitive operations, and reverse-topological gradient accumulation.
//! Forward evaluation is bitwise deterministic for a fixed seed and
//! single-threaded use; dropout masks come from a counter-based stream, so
//! replaying an unchanged tape reproduces identical values and gradients.
//!
//! There is no broadcasting beyond what the sequence models need: binary
//! elementwise ops accept equal shapes or a right-hand side whose shape is a
//! suffix of the left's (the bias / per-feature-gain case).

pub mod fd;

mod backward;
mod kernels;
mod ops;

pub(crate) use ops::Op;

/// Handle to a tensor stored on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct TensorId(pub(crate) usize);

/// Dense row-major tensor value.
///
/// `grad` is populated by [`Tape::backward`] for every tensor that requires
/// gradients and is reachable from the loss; it always has the value's shape.
#[derive(Clone, Debug)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Gradient from the most recent backward pass, if any.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }
}

/// Cost-attribution scope for the multiply-add counters.
///
/// Model code tags each phase of a forward pass so instrumented FLOP counts
/// can be compared per component against the analytic accounting.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Scope {
    Other,
    Embed,
    AttnProj,
    AttnScore,
    AttnMix,
    Mlp,
    InjectLinear,
    InjectScore,
    InjectMix,
    Head,
}

pub const SCOPE_COUNT: usize = 10;

impl Scope {
    pub const ALL: [Scope; SCOPE_COUNT] = [
        Scope::Other,
        Scope::Embed,
        Scope::AttnProj,
        Scope::AttnScore,
        Scope::AttnMix,
        Scope::Mlp,
        Scope::InjectLinear,
        Scope::InjectScore,
        Scope::InjectMix,
        Scope::Head,
    ];

    fn index(self) -> usize {
        match self {
            Scope::Other => 0,
            Scope::Embed => 1,
            Scope::AttnProj => 2,
            Scope::AttnScore => 3,
            Scope::AttnMix => 4,
            Scope::Mlp => 5,
            Scope::InjectLinear => 6,
            Scope::InjectScore => 7,
            Scope::InjectMix => 8,
            Scope::Head => 9,
        }
    }
}

pub(crate) struct Node {
    pub(crate) tensor: Tensor,
    pub(crate) op: Op,
}

/// Single-owner record of primitive operations in topological order.
///
/// Values are immutable once recorded; only gradient accumulators mutate,
/// and only during [`Tape::backward`]. A second backward over an unchanged
/// tape yields bitwise-identical gradients.
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    seed: u64,
    dropout_calls: u64,
    scope: Scope,
    macs: [u64; SCOPE_COUNT],
    elementwise_flops: u64,
}

impl Tape {
    pub fn new(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            seed,
            dropout_calls: 0,
            scope: Scope::Other,
            macs: [0; SCOPE_COUNT],
            elementwise_flops: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].tensor.data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, id: TensorId) -> f64 {
        let t = self.tensor(id);
        assert_eq!(t.numel(), 1, "scalar: tensor has shape {:?}", t.shape);
        t.data[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad()
    }

    /// Sets the cost-attribution scope for subsequently recorded ops.
    pub fn set_scope(&mut self, scope: Scope) {
        self.scope = scope;
    }

    pub fn macs(&self, scope: Scope) -> u64 {
        self.macs[scope.index()]
    }

    pub fn total_macs(&self) -> u64 {
        self.macs.iter().sum()
    }

    /// Non-multiply-add scalar work (activations, normalizations, masks).
    pub fn elementwise_flops(&self) -> u64 {
        self.elementwise_flops
    }

    /// Registers an input tensor. `requires_grad` marks it for gradient
    /// accumulation during backward.
    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> TensorId {
        let numel: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            numel,
            "leaf: data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        self.push(data, shape.to_vec(), requires_grad, Op::Leaf)
    }

    /// Registers a constant (no gradient).
    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> TensorId {
        self.leaf(data, shape, false)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> TensorId {
        let numel: usize = shape.iter().product();
        self.constant(vec![0.0; numel], shape)
    }

    pub(crate) fn push(
        &mut self,
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        op: Op,
    ) -> TensorId {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            tensor: Tensor {
                shape,
                data,
                requires_grad,
                grad: None,
            },
            op,
        });
        id
    }

    pub(crate) fn count_macs(&mut self, n: u64) {
        self.macs[self.scope.index()] += n;
    }

    pub(crate) fn count_elementwise(&mut self, n: u64) {
        self.elementwise_flops += n;
    }

    pub(crate) fn next_dropout_stream(&mut self) -> (u64, u64) {
        let call = self.dropout_calls;
        self.dropout_calls += 1;
        (self.seed, call)
    }
}
