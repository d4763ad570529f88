use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Relu {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Reshape {
        x: Var,
    },
    SliceLast {
        x: Var,
        start: usize,
        len: usize,
    },
    ConcatLast {
        parts: Vec<Var>,
    },
    Conv2d {
        x: Var,
        kernels: Var,
        geom: ConvGeom,
        batch: usize,
        c_out: usize,
    },
    AddChannelBias {
        x: Var,
        bias: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only operation tape. Operands always precede their consumers, so a
/// single reverse sweep visits nodes in a valid topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(true), Op::Leaf, true)
    }

    /// Leaf whose gradient flag is taken from the tensor itself.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    // ---- ops -------------------------------------------------------------

    /// `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shapes("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm_acc(self.data(a), self.data(b), &mut out, m, k, n, false, false);
        let t = Tensor::new(&[m, n], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::MatMul { a, b, m, k, n }, ng))
    }

    /// Batched product of rank-3 tensors: `[B×m×k] · [B×k×n]`, or with
    /// `trans_b` the second operand is `[B×n×k]` and used transposed.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shapes("bmm", sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(Error::shapes("bmm", sa, sb));
        }
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..batch {
            kernels::gemm_acc(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
                false,
                trans_b,
            );
        }
        let t = Tensor::new(&[batch, m, n], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            t,
            Op::BatchMatMul {
                a,
                b,
                trans_b,
                batch,
                m,
                k,
                n,
            },
            ng,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shapes("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.shape(a), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add { a, b }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shapes("mul", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.shape(a), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul { a, b }, ng))
    }

    /// Adds a rank-1 `bias` along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x);
        let sb = self.shape(bias);
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::shapes("add_bias", sx, sb));
        }
        let n = sb[0];
        let b = self.data(bias);
        let out: Vec<f64> = self.data(x).iter().enumerate().map(|(i, v)| v + b[i % n]).collect();
        let t = Tensor::new(self.shape(x), out)?;
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(t, Op::AddBias { x, bias }, ng))
    }

    /// `x · w + b` for `x: [N×f]`, `w: [f×h]`, `b: [h]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out: Vec<f64> = self.data(x).iter().map(|v| v * factor).collect();
        let t = Tensor::new(self.shape(x), out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Scale { x, factor }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out: Vec<f64> = self.data(x).iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let t = Tensor::new(self.shape(x), out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Relu { x }, ng))
    }

    /// Softmax over the last axis, with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let n = *self.shape(x).last().expect("rank >= 1");
        let mut out = self.data(x).to_vec();
        kernels::softmax_rows_inplace(&mut out, n);
        let t = Tensor::new(self.shape(x), out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Softmax { x }, ng))
    }

    /// Inverted dropout. Outside training, or at rate 0, returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep_scale })
            .collect();
        let out: Vec<f64> = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(self.shape(x), out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Dropout { x, mask }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape { x }, ng))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let w = *sx.last().expect("rank >= 1");
        if len == 0 || start + len > w {
            return Err(Error::dim(
                "slice_last",
                format!("range {start}..{} out of width {w}", start + len),
            ));
        }
        let out: Vec<f64> = self
            .data(x)
            .chunks(w)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = sx;
        *shape.last_mut().unwrap() = len;
        let t = Tensor::new(&shape, out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::SliceLast { x, start, len }, ng))
    }

    /// Concatenate along the last axis; all leading dims must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat_last", "no operands"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..s.len() - 1] != lead[..] {
                return Err(Error::shapes("concat_last", self.shape(first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::new(&shape, out)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(t, Op::ConcatLast { parts: parts.to_vec() }, ng))
    }

    /// Valid (unpadded) cross-correlation.
    ///
    /// `x` is `[B×C×H×W]` (or a single `[C×H×W]` image), `kernels` is
    /// `[O×C×kh×kw]`; output is `[B×O×H'×W']` (or `[O×H'×W']`) with
    /// `H' = (H − kh)/stride + 1`.
    pub fn conv2d(&mut self, x: Var, kernels: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be positive".into()));
        }
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernels).to_vec();
        let (batch, single) = match sx.len() {
            3 => (1, true),
            4 => (sx[0], false),
            _ => return Err(Error::shapes("conv2d", &sx, &sk)),
        };
        let (c_in, h, w) = (sx[sx.len() - 3], sx[sx.len() - 2], sx[sx.len() - 1]);
        if sk.len() != 4 || sk[1] != c_in {
            return Err(Error::shapes("conv2d", &sx, &sk));
        }
        let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
        if kh > h || kw > w {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {kh}x{kw} larger than input {h}x{w}"),
            ));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            oh: (h - kh) / stride + 1,
            ow: (w - kw) / stride + 1,
        };
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let mut col = vec![0.0; rows * cols];
        let mut out = vec![0.0; batch * c_out * cols];
        let xd = self.data(x);
        let kd = self.data(kernels);
        for b in 0..batch {
            kernels::im2col(&xd[b * c_in * h * w..(b + 1) * c_in * h * w], &geom, &mut col);
            kernels::gemm_acc(
                kd,
                &col,
                &mut out[b * c_out * cols..(b + 1) * c_out * cols],
                c_out,
                rows,
                cols,
                false,
                false,
            );
        }
        let shape: Vec<usize> = if single {
            vec![c_out, geom.oh, geom.ow]
        } else {
            vec![batch, c_out, geom.oh, geom.ow]
        };
        let t = Tensor::new(&shape, out)?;
        let ng = self.ng(x) || self.ng(kernels);
        Ok(self.push(
            t,
            Op::Conv2d {
                x,
                kernels,
                geom,
                batch,
                c_out,
            },
            ng,
        ))
    }

    /// Adds `bias[c]` to every element of channel `c` of a `[B×C×H×W]` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x);
        let sb = self.shape(bias);
        if sx.len() != 4 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::shapes("add_channel_bias", sx, sb));
        }
        let (c, plane) = (sx[1], sx[2] * sx[3]);
        let b = self.data(bias);
        let out: Vec<f64> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[(i / plane) % c])
            .collect();
        let t = Tensor::new(self.shape(x), out)?;
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(t, Op::AddChannelBias { x, bias }, ng))
    }

    /// Mean over the batch of `−log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(Error::dim(
                "cross_entropy",
                format!("logits {s:?} vs {} labels", labels.len()),
            ));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
        }
        let mut probs = self.data(logits).to_vec();
        kernels::softmax_rows_inplace(&mut probs, classes);
        let mut loss = 0.0;
        for (row, &l) in self.data(logits).chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[l];
        }
        loss /= labels.len() as f64;
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.data(x).iter().sum();
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum { x }, ng))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s: f64 = self.data(x).iter().sum::<f64>() / n;
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s), Op::Mean { x }, ng))
    }

    // ---- reverse sweep ----------------------------------------------------

    /// Populates `grad` on every node that depends on a trainable leaf.
    /// Gradients from multiple consumers are summed. A graph supports exactly
    /// one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Usage(
                "backward already ran on this graph; rebuild it with a new forward pass".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.set_grad(g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if self.ng(a) {
                    let bd = self.data(b);
                    self.acc(grads, a, |ga| kernels::gemm_acc(g, bd, ga, m, n, k, false, true));
                }
                if self.ng(b) {
                    let ad = self.data(a);
                    self.acc(grads, b, |gb| kernels::gemm_acc(ad, g, gb, k, m, n, true, false));
                }
            }
            &Op::BatchMatMul {
                a,
                b,
                trans_b,
                batch,
                m,
                k,
                n,
            } => {
                let (ad, bd) = (self.data(a), self.data(b));
                if self.ng(a) {
                    self.acc(grads, a, |ga| {
                        for t in 0..batch {
                            let gc = &g[t * m * n..(t + 1) * m * n];
                            let bt = &bd[t * k * n..(t + 1) * k * n];
                            let gat = &mut ga[t * m * k..(t + 1) * m * k];
                            // dA = dC · op(B)ᵀ
                            kernels::gemm_acc(gc, bt, gat, m, n, k, false, !trans_b);
                        }
                    });
                }
                if self.ng(b) {
                    self.acc(grads, b, |gb| {
                        for t in 0..batch {
                            let gc = &g[t * m * n..(t + 1) * m * n];
                            let at = &ad[t * m * k..(t + 1) * m * k];
                            let gbt = &mut gb[t * k * n..(t + 1) * k * n];
                            if trans_b {
                                // B is n×k: dB = dCᵀ · A
                                kernels::gemm_acc(gc, at, gbt, n, m, k, true, false);
                            } else {
                                kernels::gemm_acc(at, gc, gbt, k, m, n, true, false);
                            }
                        }
                    });
                }
            }
            &Op::Add { a, b } => {
                for v in [a, b] {
                    if self.ng(v) {
                        self.acc(grads, v, |gv| add_into(gv, g));
                    }
                }
            }
            &Op::Mul { a, b } => {
                if self.ng(a) {
                    let bd = self.data(b);
                    self.acc(grads, a, |ga| {
                        for ((x, &gi), &bi) in ga.iter_mut().zip(g).zip(bd) {
                            *x += gi * bi;
                        }
                    });
                }
                if self.ng(b) {
                    let ad = self.data(a);
                    self.acc(grads, b, |gb| {
                        for ((x, &gi), &ai) in gb.iter_mut().zip(g).zip(ad) {
                            *x += gi * ai;
                        }
                    });
                }
            }
            &Op::AddBias { x, bias } => {
                if self.ng(x) {
                    self.acc(grads, x, |gx| add_into(gx, g));
                }
                if self.ng(bias) {
                    let n = self.value(bias).numel();
                    self.acc(grads, bias, |gb| {
                        for row in g.chunks(n) {
                            add_into(gb, row);
                        }
                    });
                }
            }
            &Op::Scale { x, factor } => {
                self.acc(grads, x, |gx| {
                    for (v, &gi) in gx.iter_mut().zip(g) {
                        *v += factor * gi;
                    }
                });
            }
            &Op::Relu { x } => {
                self.acc(grads, x, |gx| {
                    for ((v, &gi), &o) in gx.iter_mut().zip(g).zip(out) {
                        if o > 0.0 {
                            *v += gi;
                        }
                    }
                });
            }
            &Op::Softmax { x } => {
                let n = *node.value.shape().last().unwrap();
                self.acc(grads, x, |gx| {
                    for ((gxr, gr), yr) in gx.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let inner: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((v, &gi), &yi) in gxr.iter_mut().zip(gr).zip(yr) {
                            *v += yi * (gi - inner);
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                self.acc(grads, *x, |gx| {
                    for ((v, &gi), &mi) in gx.iter_mut().zip(g).zip(mask) {
                        *v += gi * mi;
                    }
                });
            }
            &Op::Reshape { x } => {
                self.acc(grads, x, |gx| add_into(gx, g));
            }
            &Op::SliceLast { x, start, len } => {
                let w = *self.shape(x).last().unwrap();
                self.acc(grads, x, |gx| {
                    for (gxr, gr) in gx.chunks_mut(w).zip(g.chunks(len)) {
                        add_into(&mut gxr[start..start + len], gr);
                    }
                });
            }
            Op::ConcatLast { parts } => {
                let total = *node.value.shape().last().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    if self.ng(p) {
                        self.acc(grads, p, |gp| {
                            for (gpr, gr) in gp.chunks_mut(w).zip(g.chunks(total)) {
                                add_into(gpr, &gr[offset..offset + w]);
                            }
                        });
                    }
                    offset += w;
                }
            }
            &Op::Conv2d {
                x,
                kernels: kv,
                geom,
                batch,
                c_out,
            } => {
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let plane = geom.c_in * geom.h * geom.w;
                let xd = self.data(x);
                let kd = self.data(kv);
                let mut col = vec![0.0; rows * cols];
                let mut dk = if self.ng(kv) { Some(vec![0.0; kd.len()]) } else { None };
                let mut dx = if self.ng(x) { Some(vec![0.0; xd.len()]) } else { None };
                let mut dcol = vec![0.0; rows * cols];
                for b in 0..batch {
                    let gb = &g[b * c_out * cols..(b + 1) * c_out * cols];
                    if let Some(dk) = dk.as_mut() {
                        kernels::im2col(&xd[b * plane..(b + 1) * plane], &geom, &mut col);
                        kernels::gemm_acc(gb, &col, dk, c_out, cols, rows, false, true);
                    }
                    if let Some(dx) = dx.as_mut() {
                        dcol.iter_mut().for_each(|v| *v = 0.0);
                        kernels::gemm_acc(kd, gb, &mut dcol, rows, c_out, cols, true, false);
                        kernels::col2im_acc(&dcol, &geom, &mut dx[b * plane..(b + 1) * plane]);
                    }
                }
                if let Some(dk) = dk {
                    self.acc(grads, kv, |gk| add_into(gk, &dk));
                }
                if let Some(dx) = dx {
                    self.acc(grads, x, |gx| add_into(gx, &dx));
                }
            }
            &Op::AddChannelBias { x, bias } => {
                if self.ng(x) {
                    self.acc(grads, x, |gx| add_into(gx, g));
                }
                if self.ng(bias) {
                    let s = self.shape(x);
                    let (c, plane) = (s[1], s[2] * s[3]);
                    self.acc(grads, bias, |gb| {
                        for (i, chunk) in g.chunks(plane).enumerate() {
                            gb[i % c] += chunk.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let classes = *self.shape(*logits).last().unwrap();
                let scale = g[0] / labels.len() as f64;
                self.acc(grads, *logits, |gl| {
                    for (r, &l) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == l { 1.0 } else { 0.0 };
                            gl[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                        }
                    }
                });
            }
            &Op::Sum { x } => {
                self.acc(grads, x, |gx| gx.iter_mut().for_each(|v| *v += g[0]));
            }
            &Op::Mean { x } => {
                let n = self.value(x).numel() as f64;
                self.acc(grads, x, |gx| gx.iter_mut().for_each(|v| *v += g[0] / n));
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.ng(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).numel()]);
        f(slot);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
