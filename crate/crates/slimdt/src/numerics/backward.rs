//! Reverse-topological gradient accumulation over a recorded tape.

use super::{kernels, Op, Tape, TensorId};

fn buf<'a>(grads: &'a mut [Option<Vec<f64>>], id: TensorId, numel: usize) -> &'a mut [f64] {
    grads[id.0].get_or_insert_with(|| vec![0.0; numel])
}

impl Tape {
    /// Populates `grad` for every tensor with `requires_grad`, accumulating
    /// in reverse topological order from a scalar loss. Tensors not reached
    /// from the loss get zero gradients. Each call overwrites the previous
    /// pass, so repeated backwards over an unchanged tape are identical.
    pub fn backward(&mut self, loss: TensorId) {
        {
            let t = self.tensor(loss);
            assert_eq!(
                t.numel(),
                1,
                "backward: loss must be a scalar, got shape {:?}",
                t.shape
            );
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            if grads[i].is_none() || !self.nodes[i].tensor.requires_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for i in 0..n {
            let node = &mut self.nodes[i];
            if node.tensor.requires_grad {
                let numel = node.tensor.numel();
                node.tensor.grad =
                    Some(grads[i].take().unwrap_or_else(|| vec![0.0; numel]));
            } else {
                node.tensor.grad = None;
            }
        }
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].tensor.requires_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let numel_of = |id: TensorId| self.nodes[id.0].tensor.numel();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = {
                    let s = self.shape(*a);
                    (s[0], s[1])
                };
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    let bd = self.data(*b);
                    kernels::mm_nt_acc(buf(grads, *a, m * k), g, bd, m, n, k);
                }
                if self.needs(*b) {
                    let ad = self.data(*a);
                    kernels::mm_tn_acc(buf(grads, *b, k * n), ad, g, k, m, n);
                }
            }
            Op::LinearMap { x, w } => {
                let (nn, p) = {
                    let s = self.shape(*w);
                    (s[0], s[1])
                };
                let rows = numel_of(*x) / nn;
                if self.needs(*x) {
                    let wd = self.data(*w);
                    kernels::mm_nt_acc(buf(grads, *x, rows * nn), g, wd, rows, p, nn);
                }
                if self.needs(*w) {
                    let xd = self.data(*x);
                    kernels::mm_tn_acc(buf(grads, *w, nn * p), xd, g, nn, rows, p);
                }
            }
            Op::Bmm { a, b, transpose_b } => {
                let (batch, m, k) = {
                    let s = self.shape(*a);
                    (s[0], s[1], s[2])
                };
                let n = if *transpose_b {
                    self.shape(*b)[1]
                } else {
                    self.shape(*b)[2]
                };
                let ad = self.data(*a);
                let bd = self.data(*b);
                if self.needs(*a) {
                    let ga = buf(grads, *a, batch * m * k);
                    for bi in 0..batch {
                        let g_s = &g[bi * m * n..(bi + 1) * m * n];
                        let b_s = &bd[bi * k * n..(bi + 1) * k * n];
                        let ga_s = &mut ga[bi * m * k..(bi + 1) * m * k];
                        if *transpose_b {
                            // c = a * b^T with b stored [n,k]: da = g * b
                            kernels::mm_acc(ga_s, g_s, b_s, m, n, k);
                        } else {
                            kernels::mm_nt_acc(ga_s, g_s, b_s, m, n, k);
                        }
                    }
                }
                if self.needs(*b) {
                    let gb = buf(grads, *b, batch * k * n);
                    for bi in 0..batch {
                        let g_s = &g[bi * m * n..(bi + 1) * m * n];
                        let a_s = &ad[bi * m * k..(bi + 1) * m * k];
                        let gb_s = &mut gb[bi * k * n..(bi + 1) * k * n];
                        if *transpose_b {
                            // db[n,k] = g^T * a
                            kernels::mm_tn_acc(gb_s, g_s, a_s, n, m, k);
                        } else {
                            kernels::mm_tn_acc(gb_s, a_s, g_s, k, m, n);
                        }
                    }
                }
            }
            Op::Add { a, b, broadcast } => {
                if self.needs(*a) {
                    let ga = buf(grads, *a, numel_of(*a));
                    for (gv, &gi) in ga.iter_mut().zip(g.iter()) {
                        *gv += gi;
                    }
                }
                if self.needs(*b) {
                    let bn = numel_of(*b);
                    let gb = buf(grads, *b, bn);
                    if *broadcast {
                        for (i, &gi) in g.iter().enumerate() {
                            gb[i % bn] += gi;
                        }
                    } else {
                        for (gv, &gi) in gb.iter_mut().zip(g.iter()) {
                            *gv += gi;
                        }
                    }
                }
            }
            Op::Sub { a, b } => {
                if self.needs(*a) {
                    let ga = buf(grads, *a, numel_of(*a));
                    for (gv, &gi) in ga.iter_mut().zip(g.iter()) {
                        *gv += gi;
                    }
                }
                if self.needs(*b) {
                    let gb = buf(grads, *b, numel_of(*b));
                    for (gv, &gi) in gb.iter_mut().zip(g.iter()) {
                        *gv -= gi;
                    }
                }
            }
            Op::Mul { a, b, broadcast } => {
                let bn = numel_of(*b);
                if self.needs(*a) {
                    let bd = self.data(*b);
                    let ga = buf(grads, *a, numel_of(*a));
                    for (i, &gi) in g.iter().enumerate() {
                        ga[i] += gi * bd[i % bn];
                    }
                }
                if self.needs(*b) {
                    let ad = self.data(*a);
                    let gb = buf(grads, *b, bn);
                    if *broadcast {
                        for (i, &gi) in g.iter().enumerate() {
                            gb[i % bn] += gi * ad[i];
                        }
                    } else {
                        for (i, &gi) in g.iter().enumerate() {
                            gb[i] += gi * ad[i];
                        }
                    }
                }
            }
            Op::MulScalar { a, c } => {
                if self.needs(*a) {
                    let ga = buf(grads, *a, numel_of(*a));
                    for (gv, &gi) in ga.iter_mut().zip(g.iter()) {
                        *gv += gi * c;
                    }
                }
            }
            Op::Relu { a } => {
                if self.needs(*a) {
                    let xd = self.data(*a);
                    let ga = buf(grads, *a, numel_of(*a));
                    for (i, &gi) in g.iter().enumerate() {
                        if xd[i] > 0.0 {
                            ga[i] += gi;
                        }
                    }
                }
            }
            Op::Tanh { a } => {
                if self.needs(*a) {
                    let yd = &self.nodes[i].tensor.data;
                    let ga = buf(grads, *a, numel_of(*a));
                    for (j, &gi) in g.iter().enumerate() {
                        ga[j] += gi * (1.0 - yd[j] * yd[j]);
                    }
                }
            }
            Op::SoftmaxRows { a } => {
                if self.needs(*a) {
                    let yd = &self.nodes[i].tensor.data;
                    let width = *self.nodes[i].tensor.shape.last().unwrap();
                    let ga = buf(grads, *a, numel_of(*a));
                    for r in 0..yd.len() / width {
                        let y = &yd[r * width..(r + 1) * width];
                        let gr = &g[r * width..(r + 1) * width];
                        let dot: f64 = y.iter().zip(gr.iter()).map(|(yi, gi)| yi * gi).sum();
                        let out = &mut ga[r * width..(r + 1) * width];
                        for j in 0..width {
                            out[j] += y[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { a, rstd } => {
                if self.needs(*a) {
                    let yd = &self.nodes[i].tensor.data;
                    let width = *self.nodes[i].tensor.shape.last().unwrap();
                    let d = width as f64;
                    let ga = buf(grads, *a, numel_of(*a));
                    for r in 0..yd.len() / width {
                        let y = &yd[r * width..(r + 1) * width];
                        let gr = &g[r * width..(r + 1) * width];
                        let g_mean: f64 = gr.iter().sum::<f64>() / d;
                        let gy_mean: f64 =
                            gr.iter().zip(y.iter()).map(|(gi, yi)| gi * yi).sum::<f64>() / d;
                        let out = &mut ga[r * width..(r + 1) * width];
                        for j in 0..width {
                            out[j] += rstd[r] * (gr[j] - g_mean - y[j] * gy_mean);
                        }
                    }
                }
            }
            Op::Dropout { a, mask } => {
                if self.needs(*a) {
                    let ga = buf(grads, *a, numel_of(*a));
                    for (j, &gi) in g.iter().enumerate() {
                        ga[j] += gi * mask[j];
                    }
                }
            }
            Op::Embedding { table, indices } => {
                if self.needs(*table) {
                    let width = self.shape(*table)[1];
                    let gt = buf(grads, *table, numel_of(*table));
                    for (r, &idx) in indices.iter().enumerate() {
                        for j in 0..width {
                            gt[idx * width + j] += g[r * width + j];
                        }
                    }
                }
            }
            Op::ConcatLast { a, b } => {
                let wa = *self.shape(*a).last().unwrap();
                let wb = *self.shape(*b).last().unwrap();
                let rows = numel_of(*a) / wa;
                if self.needs(*a) {
                    let ga = buf(grads, *a, rows * wa);
                    for r in 0..rows {
                        for j in 0..wa {
                            ga[r * wa + j] += g[r * (wa + wb) + j];
                        }
                    }
                }
                if self.needs(*b) {
                    let gb = buf(grads, *b, rows * wb);
                    for r in 0..rows {
                        for j in 0..wb {
                            gb[r * wb + j] += g[r * (wa + wb) + wa + j];
                        }
                    }
                }
            }
            Op::SliceLast { a, start, len } => {
                if self.needs(*a) {
                    let width = *self.shape(*a).last().unwrap();
                    let rows = numel_of(*a) / width;
                    let ga = buf(grads, *a, rows * width);
                    for r in 0..rows {
                        for j in 0..*len {
                            ga[r * width + start + j] += g[r * len + j];
                        }
                    }
                }
            }
            Op::Interleave { parts } => {
                let s = self.shape(parts[0]);
                let (b, k, w) = (s[0], s[1], s[2]);
                let n = parts.len();
                for (j, &p) in parts.iter().enumerate() {
                    if !self.needs(p) {
                        continue;
                    }
                    let gp = buf(grads, p, b * k * w);
                    for bi in 0..b {
                        for t in 0..k {
                            let src_row = bi * n * k + t * n + j;
                            for c in 0..w {
                                gp[(bi * k + t) * w + c] += g[src_row * w + c];
                            }
                        }
                    }
                }
            }
            Op::GatherSeq { a, positions } => {
                if self.needs(*a) {
                    let s = self.shape(*a);
                    let (b, l, w) = (s[0], s[1], s[2]);
                    let k = positions.len();
                    let ga = buf(grads, *a, b * l * w);
                    for bi in 0..b {
                        for (r, &p) in positions.iter().enumerate() {
                            for c in 0..w {
                                ga[(bi * l + p) * w + c] += g[(bi * k + r) * w + c];
                            }
                        }
                    }
                }
            }
            Op::SumAll { a } => {
                if self.needs(*a) {
                    let ga = buf(grads, *a, numel_of(*a));
                    for gv in ga.iter_mut() {
                        *gv += g[0];
                    }
                }
            }
            Op::MseMasked {
                pred,
                target,
                weights,
                denom,
            } => {
                if *denom == 0.0 {
                    return;
                }
                let pd = self.data(*pred);
                let td = self.data(*target);
                let scale = 2.0 * g[0] / denom;
                if self.needs(*pred) {
                    let gp = buf(grads, *pred, pd.len());
                    for j in 0..pd.len() {
                        gp[j] += scale * weights[j] * (pd[j] - td[j]);
                    }
                }
                if self.needs(*target) {
                    let gt = buf(grads, *target, td.len());
                    for j in 0..td.len() {
                        gt[j] -= scale * weights[j] * (pd[j] - td[j]);
                    }
                }
            }
        }
    }
}
