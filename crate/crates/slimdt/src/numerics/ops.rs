//! Forward primitives recorded on the tape.
//!
//! Shape violations are contract errors and panic with both shapes named.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{kernels, Tape, TensorId};

/// Recorded operation. Saved buffers (dropout masks, normalization stats)
/// make backward independent of anything outside the tape.
pub(crate) enum Op {
    Leaf,
    /// 2-D matrix product a[m,k] * b[k,n].
    Matmul { a: TensorId, b: TensorId },
    /// x[..., n] * w[n, p]; leading axes of x are flattened row-wise.
    LinearMap { x: TensorId, w: TensorId },
    /// Batched product over the last two axes of 3-D tensors.
    Bmm {
        a: TensorId,
        b: TensorId,
        transpose_b: bool,
    },
    /// Elementwise sum; `broadcast` marks a right operand whose shape is a
    /// suffix of the left's.
    Add {
        a: TensorId,
        b: TensorId,
        broadcast: bool,
    },
    Sub { a: TensorId, b: TensorId },
    /// Hadamard product with the same suffix-broadcast rule as Add.
    Mul {
        a: TensorId,
        b: TensorId,
        broadcast: bool,
    },
    MulScalar { a: TensorId, c: f64 },
    Relu { a: TensorId },
    Tanh { a: TensorId },
    /// Row softmax over the last axis; masked entries are exactly zero in
    /// the output (and so get zero gradients without saving the mask).
    SoftmaxRows { a: TensorId },
    /// Per-token normalization over the last axis (no learned affine).
    LayerNorm { a: TensorId, rstd: Vec<f64> },
    /// Inverted dropout; mask entries are 0.0 or 1/(1-p).
    Dropout { a: TensorId, mask: Vec<f64> },
    /// Row gather from a [rows, width] table.
    Embedding { table: TensorId, indices: Vec<usize> },
    ConcatLast { a: TensorId, b: TensorId },
    SliceLast {
        a: TensorId,
        start: usize,
        len: usize,
    },
    /// Interleaves n same-shape [b, k, w] tensors along axis 1 into
    /// [b, n*k, w]: output step t, slot j comes from parts[j] at step t.
    Interleave { parts: Vec<TensorId> },
    /// Gathers rows along axis 1 of a [b, l, w] tensor.
    GatherSeq { a: TensorId, positions: Vec<usize> },
    SumAll { a: TensorId },
    /// sum(weights * (pred - target)^2) / denom, with loss defined as 0
    /// when denom is 0.
    MseMasked {
        pred: TensorId,
        target: TensorId,
        weights: Vec<f64>,
        denom: f64,
    },
}

impl Tape {
    fn rg2(&self, a: TensorId, b: TensorId) -> bool {
        self.tensor(a).requires_grad || self.tensor(b).requires_grad
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, k, n) = {
            let ta = self.tensor(a);
            let tb = self.tensor(b);
            assert!(
                ta.shape.len() == 2 && tb.shape.len() == 2,
                "matmul: expected 2-D operands, got {:?} and {:?}",
                ta.shape,
                tb.shape
            );
            assert_eq!(
                ta.shape[1], tb.shape[0],
                "matmul: inner dimensions disagree: lhs {:?}, rhs {:?}",
                ta.shape, tb.shape
            );
            (ta.shape[0], ta.shape[1], tb.shape[1])
        };
        let mut out = vec![0.0; m * n];
        kernels::mm_acc(&mut out, self.data(a), self.data(b), m, k, n);
        self.count_macs((m * k * n) as u64);
        let rg = self.rg2(a, b);
        self.push(out, vec![m, n], rg, Op::Matmul { a, b })
    }

    /// Applies w[n, p] to the last axis of x[..., n].
    pub fn linear_map(&mut self, x: TensorId, w: TensorId) -> TensorId {
        let (rows, n, p, out_shape) = {
            let tx = self.tensor(x);
            let tw = self.tensor(w);
            assert!(
                tx.shape.len() >= 2 && tw.shape.len() == 2,
                "linear_map: expected x with >=2 axes and 2-D w, got {:?} and {:?}",
                tx.shape,
                tw.shape
            );
            let n = *tx.shape.last().unwrap();
            assert_eq!(
                n, tw.shape[0],
                "linear_map: last axis of x {:?} does not match w {:?}",
                tx.shape, tw.shape
            );
            let p = tw.shape[1];
            let rows = tx.numel() / n;
            let mut out_shape = tx.shape.clone();
            *out_shape.last_mut().unwrap() = p;
            (rows, n, p, out_shape)
        };
        let mut out = vec![0.0; rows * p];
        kernels::mm_acc(&mut out, self.data(x), self.data(w), rows, n, p);
        self.count_macs((rows * n * p) as u64);
        let rg = self.rg2(x, w);
        self.push(out, out_shape, rg, Op::LinearMap { x, w })
    }

    /// Batched matmul over 3-D tensors: a[b,m,k] * b[b,k,n], or
    /// a[b,m,k] * b[b,n,k]^T when `transpose_b`.
    pub fn bmm(&mut self, a: TensorId, b: TensorId, transpose_b: bool) -> TensorId {
        let (batch, m, k, n) = {
            let ta = self.tensor(a);
            let tb = self.tensor(b);
            assert!(
                ta.shape.len() == 3 && tb.shape.len() == 3,
                "bmm: expected 3-D operands, got {:?} and {:?}",
                ta.shape,
                tb.shape
            );
            assert_eq!(
                ta.shape[0], tb.shape[0],
                "bmm: batch dimensions disagree: lhs {:?}, rhs {:?}",
                ta.shape, tb.shape
            );
            let (m, k) = (ta.shape[1], ta.shape[2]);
            let (bk, n) = if transpose_b {
                (tb.shape[2], tb.shape[1])
            } else {
                (tb.shape[1], tb.shape[2])
            };
            assert_eq!(
                k, bk,
                "bmm: inner dimensions disagree: lhs {:?}, rhs {:?} (transpose_b={})",
                ta.shape, tb.shape, transpose_b
            );
            (ta.shape[0], m, k, n)
        };
        let mut out = vec![0.0; batch * m * n];
        {
            let da = self.data(a);
            let db = self.data(b);
            for bi in 0..batch {
                let a_s = &da[bi * m * k..(bi + 1) * m * k];
                let b_s = &db[bi * k * n..(bi + 1) * k * n];
                let c_s = &mut out[bi * m * n..(bi + 1) * m * n];
                if transpose_b {
                    kernels::mm_nt_acc(c_s, a_s, b_s, m, k, n);
                } else {
                    kernels::mm_acc(c_s, a_s, b_s, m, k, n);
                }
            }
        }
        self.count_macs((batch * m * k * n) as u64);
        let rg = self.rg2(a, b);
        self.push(
            out,
            vec![batch, m, n],
            rg,
            Op::Bmm { a, b, transpose_b },
        )
    }

    fn broadcast_kind(&self, a: TensorId, b: TensorId, what: &str) -> bool {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            false
        } else if sb.len() < sa.len() && sa[sa.len() - sb.len()..] == *sb {
            true
        } else {
            panic!(
                "{what}: shapes {:?} and {:?} are neither equal nor suffix-broadcastable",
                sa, sb
            );
        }
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let broadcast = self.broadcast_kind(a, b, "add");
        let (data, shape) = {
            let ta = self.tensor(a);
            let tb = self.tensor(b);
            let bn = tb.numel();
            let mut out = ta.data.clone();
            for (i, v) in out.iter_mut().enumerate() {
                *v += tb.data[i % bn];
            }
            (out, ta.shape.clone())
        };
        self.count_elementwise(data.len() as u64);
        let rg = self.rg2(a, b);
        self.push(data, shape, rg, Op::Add { a, b, broadcast })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let sa = self.shape(a).to_vec();
        assert_eq!(
            sa,
            self.shape(b),
            "sub: shapes disagree: lhs {:?}, rhs {:?}",
            sa,
            self.shape(b)
        );
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b).iter())
            .map(|(x, y)| x - y)
            .collect();
        self.count_elementwise(data.len() as u64);
        let rg = self.rg2(a, b);
        self.push(data, sa, rg, Op::Sub { a, b })
    }

    /// Hadamard product (same suffix-broadcast rule as `add`).
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let broadcast = self.broadcast_kind(a, b, "mul");
        let (data, shape) = {
            let ta = self.tensor(a);
            let tb = self.tensor(b);
            let bn = tb.numel();
            let mut out = ta.data.clone();
            for (i, v) in out.iter_mut().enumerate() {
                *v *= tb.data[i % bn];
            }
            (out, ta.shape.clone())
        };
        self.count_elementwise(data.len() as u64);
        let rg = self.rg2(a, b);
        self.push(data, shape, rg, Op::Mul { a, b, broadcast })
    }

    pub fn mul_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.count_elementwise(data.len() as u64);
        let rg = self.tensor(a).requires_grad;
        self.push(data, shape, rg, Op::MulScalar { a, c })
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.count_elementwise(data.len() as u64);
        let rg = self.tensor(a).requires_grad;
        self.push(data, shape, rg, Op::Relu { a })
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|&x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.count_elementwise(data.len() as u64);
        let rg = self.tensor(a).requires_grad;
        self.push(data, shape, rg, Op::Tanh { a })
    }

    /// Row softmax over the last axis, stabilized by per-row max subtraction.
    ///
    /// `mask` (true = keep) must match the input shape exactly; masked
    /// entries come out exactly 0.0 and a fully masked row is all zeros so
    /// padding never poisons gradients.
    pub fn softmax_rows(&mut self, a: TensorId, mask: Option<&[bool]>) -> TensorId {
        let shape = self.shape(a).to_vec();
        let width = *shape
            .last()
            .unwrap_or_else(|| panic!("softmax_rows: scalar input"));
        assert!(width >= 1, "softmax_rows: empty last axis in {:?}", shape);
        if let Some(m) = mask {
            assert_eq!(
                m.len(),
                self.tensor(a).numel(),
                "softmax_rows: mask length {} does not match input shape {:?}",
                m.len(),
                shape
            );
        }
        let n_rows = self.tensor(a).numel() / width;
        let mut out = vec![0.0; n_rows * width];
        {
            let x = self.data(a);
            for r in 0..n_rows {
                let row = &x[r * width..(r + 1) * width];
                let row_mask = mask.map(|m| &m[r * width..(r + 1) * width]);
                let keep = |j: usize| row_mask.map_or(true, |m| m[j]);
                let mut max = f64::NEG_INFINITY;
                for j in 0..width {
                    if keep(j) && row[j] > max {
                        max = row[j];
                    }
                }
                if max == f64::NEG_INFINITY {
                    // fully masked row stays zero
                    continue;
                }
                let o = &mut out[r * width..(r + 1) * width];
                let mut sum = 0.0;
                for j in 0..width {
                    if keep(j) {
                        o[j] = (row[j] - max).exp();
                        sum += o[j];
                    }
                }
                for v in o.iter_mut() {
                    *v /= sum;
                }
            }
        }
        self.count_elementwise(4 * (n_rows * width) as u64);
        let rg = self.tensor(a).requires_grad;
        self.push(out, shape, rg, Op::SoftmaxRows { a })
    }

    /// Normalizes the last axis of each token to mean 0, variance 1 (up to
    /// `eps`). Learned gains/biases are applied by the caller.
    pub fn layer_norm(&mut self, a: TensorId, eps: f64) -> TensorId {
        let shape = self.shape(a).to_vec();
        let width = *shape
            .last()
            .unwrap_or_else(|| panic!("layer_norm: scalar input"));
        assert!(width >= 1, "layer_norm: empty last axis in {:?}", shape);
        let n_rows = self.tensor(a).numel() / width;
        let mut out = vec![0.0; n_rows * width];
        let mut rstds = vec![0.0; n_rows];
        {
            let x = self.data(a);
            for r in 0..n_rows {
                let row = &x[r * width..(r + 1) * width];
                let mean = row.iter().sum::<f64>() / width as f64;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
                    / width as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                rstds[r] = rstd;
                for j in 0..width {
                    out[r * width + j] = (row[j] - mean) * rstd;
                }
            }
        }
        self.count_elementwise(6 * (n_rows * width) as u64);
        let rg = self.tensor(a).requires_grad;
        self.push(out, shape, rg, Op::LayerNorm { a, rstd: rstds })
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    /// Masks are drawn from a counter-based stream derived from the tape
    /// seed, so they are reproducible across runs and thread counts.
    pub fn dropout(&mut self, a: TensorId, p: f64, training: bool) -> TensorId {
        assert!((0.0..1.0).contains(&p), "dropout: p={p} outside [0,1)");
        if !training || p == 0.0 {
            return a;
        }
        let (seed, call) = self.next_dropout_stream();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(call);
        let keep_scale = 1.0 / (1.0 - p);
        let n = self.tensor(a).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(mask.iter())
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.shape(a).to_vec();
        self.count_elementwise(n as u64);
        let rg = self.tensor(a).requires_grad;
        self.push(data, shape, rg, Op::Dropout { a, mask })
    }

    /// x * w + b, with b broadcast over the leading axes.
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> TensorId {
        let y = self.linear_map(x, w);
        self.add(y, b)
    }

    /// Gathers rows of `table[rows, width]`; output shape is
    /// `prefix_shape + [width]` where `prefix_shape` must multiply to
    /// `indices.len()`.
    pub fn embedding_lookup(
        &mut self,
        table: TensorId,
        indices: &[usize],
        prefix_shape: &[usize],
    ) -> TensorId {
        let (rows, width) = {
            let tt = self.tensor(table);
            assert_eq!(
                tt.shape.len(),
                2,
                "embedding_lookup: table must be 2-D, got {:?}",
                tt.shape
            );
            (tt.shape[0], tt.shape[1])
        };
        let expected: usize = prefix_shape.iter().product();
        assert_eq!(
            indices.len(),
            expected,
            "embedding_lookup: {} indices do not fill prefix shape {:?}",
            indices.len(),
            prefix_shape
        );
        let mut out = vec![0.0; indices.len() * width];
        {
            let t = self.data(table);
            for (i, &idx) in indices.iter().enumerate() {
                assert!(
                    idx < rows,
                    "embedding_lookup: index {idx} out of range for table with {rows} rows"
                );
                out[i * width..(i + 1) * width]
                    .copy_from_slice(&t[idx * width..(idx + 1) * width]);
            }
        }
        let mut shape = prefix_shape.to_vec();
        shape.push(width);
        let rg = self.tensor(table).requires_grad;
        self.push(
            out,
            shape,
            rg,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    pub fn concat_last(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (rows, wa, wb, shape) = {
            let ta = self.tensor(a);
            let tb = self.tensor(b);
            assert_eq!(
                ta.shape[..ta.shape.len() - 1],
                tb.shape[..tb.shape.len() - 1],
                "concat_last: leading shapes disagree: lhs {:?}, rhs {:?}",
                ta.shape,
                tb.shape
            );
            let wa = *ta.shape.last().unwrap();
            let wb = *tb.shape.last().unwrap();
            let rows = ta.numel() / wa;
            let mut shape = ta.shape.clone();
            *shape.last_mut().unwrap() = wa + wb;
            (rows, wa, wb, shape)
        };
        let mut out = vec![0.0; rows * (wa + wb)];
        {
            let da = self.data(a);
            let db = self.data(b);
            for r in 0..rows {
                out[r * (wa + wb)..r * (wa + wb) + wa]
                    .copy_from_slice(&da[r * wa..(r + 1) * wa]);
                out[r * (wa + wb) + wa..(r + 1) * (wa + wb)]
                    .copy_from_slice(&db[r * wb..(r + 1) * wb]);
            }
        }
        let rg = self.rg2(a, b);
        self.push(out, shape, rg, Op::ConcatLast { a, b })
    }

    pub fn slice_last(&mut self, a: TensorId, start: usize, len: usize) -> TensorId {
        let (rows, width, shape) = {
            let ta = self.tensor(a);
            let width = *ta.shape.last().unwrap();
            assert!(
                start + len <= width,
                "slice_last: range {start}..{} exceeds last axis of {:?}",
                start + len,
                ta.shape
            );
            let rows = ta.numel() / width;
            let mut shape = ta.shape.clone();
            *shape.last_mut().unwrap() = len;
            (rows, width, shape)
        };
        let mut out = vec![0.0; rows * len];
        {
            let da = self.data(a);
            for r in 0..rows {
                out[r * len..(r + 1) * len]
                    .copy_from_slice(&da[r * width + start..r * width + start + len]);
            }
        }
        let rg = self.tensor(a).requires_grad;
        self.push(out, shape, rg, Op::SliceLast { a, start, len })
    }

    /// Interleaves same-shape [b, k, w] tensors along axis 1.
    pub fn interleave(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "interleave: no inputs");
        let shape0 = self.shape(parts[0]).to_vec();
        assert_eq!(shape0.len(), 3, "interleave: inputs must be 3-D, got {:?}", shape0);
        for &p in parts {
            assert_eq!(
                self.shape(p),
                &shape0[..],
                "interleave: shapes disagree: {:?} vs {:?}",
                self.shape(p),
                shape0
            );
        }
        let (b, k, w) = (shape0[0], shape0[1], shape0[2]);
        let n = parts.len();
        let mut out = vec![0.0; b * n * k * w];
        for (j, &p) in parts.iter().enumerate() {
            let dp = self.data(p);
            for bi in 0..b {
                for t in 0..k {
                    let src = &dp[(bi * k + t) * w..(bi * k + t + 1) * w];
                    let dst_row = bi * n * k + t * n + j;
                    out[dst_row * w..(dst_row + 1) * w].copy_from_slice(src);
                }
            }
        }
        let rg = parts.iter().any(|&p| self.tensor(p).requires_grad);
        self.push(
            out,
            vec![b, n * k, w],
            rg,
            Op::Interleave {
                parts: parts.to_vec(),
            },
        )
    }

    /// Gathers rows along axis 1 of a [b, l, w] tensor.
    pub fn gather_seq(&mut self, a: TensorId, positions: &[usize]) -> TensorId {
        let (b, l, w) = {
            let ta = self.tensor(a);
            assert_eq!(ta.shape.len(), 3, "gather_seq: input must be 3-D, got {:?}", ta.shape);
            (ta.shape[0], ta.shape[1], ta.shape[2])
        };
        for &p in positions {
            assert!(p < l, "gather_seq: position {p} out of range for length {l}");
        }
        let k = positions.len();
        let mut out = vec![0.0; b * k * w];
        {
            let da = self.data(a);
            for bi in 0..b {
                for (i, &p) in positions.iter().enumerate() {
                    out[(bi * k + i) * w..(bi * k + i + 1) * w]
                        .copy_from_slice(&da[(bi * l + p) * w..(bi * l + p + 1) * w]);
                }
            }
        }
        let rg = self.tensor(a).requires_grad;
        self.push(
            out,
            vec![b, k, w],
            rg,
            Op::GatherSeq {
                a,
                positions: positions.to_vec(),
            },
        )
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.data(a).iter().sum();
        self.count_elementwise(self.tensor(a).numel() as u64);
        let rg = self.tensor(a).requires_grad;
        self.push(vec![s], vec![1], rg, Op::SumAll { a })
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, pred: TensorId, target: TensorId) -> TensorId {
        let n = self.tensor(pred).numel();
        let weights = vec![1.0; n];
        self.mse_weighted(pred, target, &weights)
    }

    /// sum(w * (pred - target)^2) / sum(w); 0 when all weights are zero.
    pub fn mse_weighted(
        &mut self,
        pred: TensorId,
        target: TensorId,
        weights: &[f64],
    ) -> TensorId {
        {
            let tp = self.tensor(pred);
            let tt = self.tensor(target);
            assert_eq!(
                tp.shape, tt.shape,
                "mse: shapes disagree: pred {:?}, target {:?}",
                tp.shape, tt.shape
            );
            assert_eq!(
                weights.len(),
                tp.numel(),
                "mse: weight length {} does not match shape {:?}",
                weights.len(),
                tp.shape
            );
        }
        let denom: f64 = weights.iter().sum();
        let loss = if denom == 0.0 {
            0.0
        } else {
            let dp = self.data(pred);
            let dt = self.data(target);
            let mut s = 0.0;
            for i in 0..dp.len() {
                let d = dp[i] - dt[i];
                s += weights[i] * d * d;
            }
            s / denom
        };
        self.count_elementwise(3 * weights.len() as u64);
        let rg = self.rg2(pred, target);
        self.push(
            vec![loss],
            vec![1],
            rg,
            Op::MseMasked {
                pred,
                target,
                weights: weights.to_vec(),
                denom,
            },
        )
    }
}
