//! Gradient tape.
//!
//! Every operation appends one node holding its output value and enough
//! bookkeeping to run its adjoint. Nodes are only ever appended after their
//! inputs, so walking the tape backwards is a reverse topological order and
//! each node is visited exactly once.

use super::lstm::LstmCellParams;
use super::ops::{self, BatchNormMode, RunningStats};
use super::NnError;
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Reshape(usize),
    Conv {
        x: usize,
        k: usize,
        b: Option<usize>,
        padding: usize,
        transposed: bool,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        mode: BatchNormMode,
    },
    Softmax(usize),
    CrossEntropy {
        p: usize,
        targets: Vec<usize>,
    },
    Mse(usize, usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    is_param: bool,
}

/// Parameter handles of one LSTM cell bound onto a tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_ih: [Var; 4],
    pub w_hh: [Var; 4],
    pub bias: [Var; 4],
}

#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            is_param: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].is_param = true;
        v
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn lstm_params(&mut self, p: &LstmCellParams<T>) -> LstmVars {
        LstmVars {
            w_ih: std::array::from_fn(|g| self.param(p.w_ih[g].clone())),
            w_hh: std::array::from_fn(|g| self.param(p.w_hh[g].clone())),
            bias: std::array::from_fn(|g| self.param(p.bias[g].clone())),
        }
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let y = ops::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut ids = vec![x.0, w.0];
        ids.extend(b.map(|b| b.0));
        let ng = self.needs(&ids);
        Ok(self.push(
            y,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            ng,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let y = self.value(a).zip_map(self.value(b), |u, v| u + v)?;
        let ng = self.needs(&[a.0, b.0]);
        Ok(self.push(y, Op::Add(a.0, b.0), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let y = self.value(a).zip_map(self.value(b), |u, v| u * v)?;
        let ng = self.needs(&[a.0, b.0]);
        Ok(self.push(y, Op::Mul(a.0, b.0), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let y = self.value(a).map(|v| v * s);
        let ng = self.needs(&[a.0]);
        self.push(y, Op::Scale(a.0, s), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = ops::sigmoid(self.value(a));
        let ng = self.needs(&[a.0]);
        self.push(y, Op::Sigmoid(a.0), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = ops::tanh(self.value(a));
        let ng = self.needs(&[a.0]);
        self.push(y, Op::Tanh(a.0), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = ops::relu(self.value(a));
        let ng = self.needs(&[a.0]);
        self.push(y, Op::Relu(a.0), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NnError> {
        let y = self.value(a).clone().reshape(shape)?;
        let ng = self.needs(&[a.0]);
        Ok(self.push(y, Op::Reshape(a.0), ng))
    }

    pub fn conv1d(
        &mut self,
        x: Var,
        kernels: Var,
        bias: Option<Var>,
        padding: usize,
    ) -> Result<Var, NnError> {
        self.conv(x, kernels, bias, padding, false)
    }

    pub fn conv1d_transpose(
        &mut self,
        x: Var,
        kernels: Var,
        bias: Option<Var>,
        padding: usize,
    ) -> Result<Var, NnError> {
        self.conv(x, kernels, bias, padding, true)
    }

    fn conv(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        padding: usize,
        transposed: bool,
    ) -> Result<Var, NnError> {
        let (xv, kv, bv) = (self.value(x), self.value(k), b.map(|b| self.value(b)));
        let y = if transposed {
            ops::conv1d_transpose_forward(xv, kv, bv, padding)?
        } else {
            ops::conv1d_forward(xv, kv, bv, padding)?
        };
        let mut ids = vec![x.0, k.0];
        ids.extend(b.map(|b| b.0));
        let ng = self.needs(&ids);
        Ok(self.push(
            y,
            Op::Conv {
                x: x.0,
                k: k.0,
                b: b.map(|b| b.0),
                padding,
                transposed,
            },
            ng,
        ))
    }

    /// Batch normalization; in train mode `running` absorbs the batch statistics.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        mode: BatchNormMode,
    ) -> Result<Var, NnError> {
        let out = ops::batchnorm_compute(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running,
            mode,
        )?;
        let ng = self.needs(&[x.0, gamma.0, beta.0]);
        Ok(self.push(
            out.y,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat: out.xhat,
                inv_std: out.inv_std,
                mode,
            },
            ng,
        ))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let y = ops::softmax(self.value(a));
        let ng = self.needs(&[a.0]);
        self.push(y, Op::Softmax(a.0), ng)
    }

    pub fn cross_entropy(&mut self, p: Var, targets: &[usize]) -> Result<Var, NnError> {
        let l = ops::cross_entropy_loss(self.value(p), targets)?;
        let ng = self.needs(&[p.0]);
        Ok(self.push(
            Tensor::scalar(l),
            Op::CrossEntropy {
                p: p.0,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let l = ops::mse_loss(self.value(a), self.value(b))?;
        let ng = self.needs(&[a.0, b.0]);
        Ok(self.push(Tensor::scalar(l), Op::Mse(a.0, b.0), ng))
    }

    /// One LSTM step recorded as its elementary operations. Returns `(h, c)`.
    pub fn lstm_step(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        p: &LstmVars,
    ) -> Result<(Var, Var), NnError> {
        let mut gates = [x; 4];
        for (g, slot) in gates.iter_mut().enumerate() {
            let a = self.linear(x, p.w_ih[g], Some(p.bias[g]))?;
            let b = self.linear(h, p.w_hh[g], None)?;
            let pre = self.add(a, b)?;
            *slot = if g == 2 {
                self.tanh(pre)
            } else {
                self.sigmoid(pre)
            };
        }
        let [i, f, g, o] = gates;
        let fc = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_new = self.add(fc, ig)?;
        let tc = self.tanh(c_new);
        let h_new = self.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    /// Reverse-mode sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NnError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NnError::Shape {
                op: "backward",
                left: lv.shape().to_vec(),
                right: vec![],
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[id].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(id, &g, &mut grads);
        }

        let disconnected = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, n)| n.is_param && grads[*i].is_none())
            .map(|(i, _)| Var(i))
            .collect();
        Ok(Gradients {
            grads,
            disconnected,
        })
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let val = |i: usize| &self.nodes[i].value;
        let wants = |i: usize| self.nodes[i].needs_grad;
        let mut send = |i: usize, t: Tensor<T>| {
            if !self.nodes[i].needs_grad {
                return;
            }
            match &mut grads[i] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = ops::linear_backward(val(*x), val(*w), g);
                send(*x, gx);
                send(*w, gw);
                if let Some(b) = b {
                    send(*b, gb);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    send(*a, g.zip_map(val(*b), |u, v| u * v).expect("shape"));
                }
                if wants(*b) {
                    send(*b, g.zip_map(val(*a), |u, v| u * v).expect("shape"));
                }
            }
            Op::Scale(a, s) => send(*a, g.map(|u| u * *s)),
            Op::Sigmoid(a) => {
                let y = &node.value;
                send(*a, g.zip_map(y, |u, s| u * s * (T::one() - s)).expect("shape"));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                send(*a, g.zip_map(y, |u, t| u * (T::one() - t * t)).expect("shape"));
            }
            Op::Relu(a) => {
                let x = val(*a);
                send(
                    *a,
                    g.zip_map(x, |u, v| if v > T::zero() { u } else { T::zero() })
                        .expect("shape"),
                );
            }
            Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                send(*a, g.clone().reshape(&shape).expect("shape"));
            }
            Op::Conv {
                x,
                k,
                b,
                padding,
                transposed,
            } => {
                let (gx, gk, gb) = ops::conv1d_backward(val(*x), val(*k), g, *padding, *transposed);
                send(*x, gx);
                send(*k, gk);
                if let Some(b) = b {
                    send(*b, gb);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let (batch, ch, len) = ops::bn_layout(xhat).expect("shape");
                let gd = g.data();
                let xh = xhat.data();
                let mut sum_g = vec![T::zero(); ch];
                let mut sum_gx = vec![T::zero(); ch];
                for b in 0..batch {
                    for c in 0..ch {
                        for i in (b * ch + c) * len..(b * ch + c + 1) * len {
                            sum_g[c] += gd[i];
                            sum_gx[c] += gd[i] * xh[i];
                        }
                    }
                }
                let gam = val(*gamma).data();
                let mut gx = vec![T::zero(); gd.len()];
                let m = T::from_usize(batch * len).expect("count");
                for b in 0..batch {
                    for c in 0..ch {
                        let scale = gam[c] * inv_std[c];
                        for i in (b * ch + c) * len..(b * ch + c + 1) * len {
                            gx[i] = match mode {
                                BatchNormMode::Train => {
                                    scale / m * (m * gd[i] - sum_g[c] - xh[i] * sum_gx[c])
                                }
                                BatchNormMode::Eval => scale * gd[i],
                            };
                        }
                    }
                }
                send(*x, Tensor::new(xhat.shape().to_vec(), gx).expect("shape"));
                send(*gamma, Tensor::vector(sum_gx));
                send(*beta, Tensor::vector(sum_g));
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let k = y.cols();
                let mut gx = vec![T::zero(); y.len()];
                for ((gr, yr), out) in g
                    .data()
                    .chunks(k)
                    .zip(y.data().chunks(k))
                    .zip(gx.chunks_mut(k))
                {
                    let dot: T = gr.iter().zip(yr).map(|(&u, &v)| u * v).sum();
                    for j in 0..k {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                send(*a, Tensor::new(y.shape().to_vec(), gx).expect("shape"));
            }
            Op::CrossEntropy { p, targets } => {
                let pv = val(*p);
                let k = pv.cols();
                let n = T::from_usize(targets.len().max(1)).expect("len");
                let floor = T::lit(ops::PROB_FLOOR);
                let up = g.item();
                let mut gp = vec![T::zero(); pv.len()];
                for (r, &y) in targets.iter().enumerate() {
                    let pr = pv.data()[r * k + y];
                    if pr > floor {
                        gp[r * k + y] = -up / (n * pr);
                    }
                }
                send(*p, Tensor::new(pv.shape().to_vec(), gp).expect("shape"));
            }
            Op::Mse(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let n = T::from_usize(av.len().max(1)).expect("len");
                let coef = T::lit(2.0) * g.item() / n;
                let ga = av.zip_map(bv, |u, v| coef * (u - v)).expect("shape");
                if wants(*b) {
                    send(*b, ga.map(|u| -u));
                }
                send(*a, ga);
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    disconnected: Vec<Var>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when the loss does not
    /// depend on it.
    pub fn wrt(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    /// Parameters the loss does not reach. Their gradient is zero.
    pub fn disconnected(&self) -> &[Var] {
        &self.disconnected
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_gradient_by_hand() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let l = tape.mse(x, c).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 2.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn unused_parameter_gets_zero_and_is_reported() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let w_val = Tensor::full(&[3, 3], 0.5);
        let w = tape.param(w_val.clone());
        let c = tape.constant(Tensor::vector(vec![0.0, 1.0]));
        let l = tape.mse(x, c).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.disconnected(), &[w]);
        assert_eq!(g.wrt(w, &w_val), Tensor::zeros(&[3, 3]));
    }

    #[test]
    fn shared_input_accumulates() {
        // l = mse(x * x, 0) with x = [3]: dl/dx = 2·x²·2x = 4x³
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::vector(vec![3.0]));
        let sq = tape.mul(x, x).unwrap();
        let z = tape.constant(Tensor::vector(vec![0.0]));
        let l = tape.mse(sq, z).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[108.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }
}
