//! Executors for differentiable programs.
//!
//! Model code is written once against [`Graph`]. [`Eager`] evaluates it
//! directly and drops intermediates as soon as they go out of scope;
//! [`Tape`] records every op so [`Tape::backward`] can replay the
//! vector-Jacobian products in reverse.

use std::collections::HashMap;

use super::ops::{self, Activation, BatchStats, BnMode};
use super::{Float, RngStream, Tensor};
use crate::error::{Error, Result};

pub trait Graph<T: Float> {
    type Value: Clone;

    /// A constant input; never receives a gradient.
    fn input(&mut self, t: Tensor<T>) -> Self::Value;

    /// A named parameter. Repeated calls with the same name return the same
    /// value so gradients from every use accumulate.
    fn param(&mut self, name: &str, t: &Tensor<T>) -> Self::Value;

    fn tensor<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;

    fn conv3d(
        &mut self,
        x: &Self::Value,
        kernel: &Self::Value,
        bias: &Self::Value,
        stride: [usize; 3],
    ) -> Result<Self::Value>;

    fn conv3d_transpose(
        &mut self,
        x: &Self::Value,
        kernel: &Self::Value,
        bias: &Self::Value,
        stride: [usize; 3],
    ) -> Result<Self::Value>;

    fn batch_norm(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        mode: BnMode<'_, T>,
        eps: f64,
    ) -> Result<(Self::Value, Option<BatchStats<T>>)>;

    fn dropout(
        &mut self,
        x: &Self::Value,
        rate: f64,
        rng: &mut RngStream,
        active: bool,
    ) -> Result<Self::Value>;

    fn activation(&mut self, x: &Self::Value, kind: Activation) -> Result<Self::Value>;

    fn concat(&mut self, parts: &[Self::Value], axis: usize) -> Result<Self::Value>;

    fn crop(&mut self, x: &Self::Value, offsets: &[usize], shape: &[usize]) -> Result<Self::Value>;

    fn pad(&mut self, x: &Self::Value, offsets: &[usize], shape: &[usize]) -> Result<Self::Value>;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;

    fn scale(&mut self, a: &Self::Value, s: T) -> Result<Self::Value>;

    fn sum(&mut self, a: &Self::Value) -> Result<Self::Value>;

    fn bce_with_logits(
        &mut self,
        logits: &Self::Value,
        targets: &Self::Value,
    ) -> Result<Self::Value>;

    fn l1_loss(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
}

fn add_tensors<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::new(a.shape(), data)?.ensure_finite("add")
}

fn sum_tensor<T: Float>(a: &Tensor<T>) -> Result<Tensor<T>> {
    Tensor::scalar(T::of(a.data().iter().map(|v| v.as_f64()).sum())).ensure_finite("sum")
}

fn activate<T: Float>(x: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    x.map(|v| kind.apply(v)).ensure_finite("activation")
}

// ---------------------------------------------------------------------------

/// Direct evaluation without gradient bookkeeping.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl<T: Float> Graph<T> for Eager {
    type Value = Tensor<T>;

    fn input(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn param(&mut self, _name: &str, t: &Tensor<T>) -> Tensor<T> {
        t.clone()
    }

    fn tensor<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }

    fn conv3d(
        &mut self,
        x: &Tensor<T>,
        k: &Tensor<T>,
        b: &Tensor<T>,
        stride: [usize; 3],
    ) -> Result<Tensor<T>> {
        Ok(ops::conv3d(x, k, b, stride)?.0)
    }

    fn conv3d_transpose(
        &mut self,
        x: &Tensor<T>,
        k: &Tensor<T>,
        b: &Tensor<T>,
        stride: [usize; 3],
    ) -> Result<Tensor<T>> {
        Ok(ops::conv3d_transpose(x, k, b, stride)?.0)
    }

    fn batch_norm(
        &mut self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        mode: BnMode<'_, T>,
        eps: f64,
    ) -> Result<(Tensor<T>, Option<BatchStats<T>>)> {
        let (y, _, stats) = ops::batch_norm(x, gamma, beta, mode, eps)?;
        Ok((y, stats))
    }

    fn dropout(
        &mut self,
        x: &Tensor<T>,
        rate: f64,
        rng: &mut RngStream,
        active: bool,
    ) -> Result<Tensor<T>> {
        Ok(ops::dropout(x, rate, rng, active)?.0)
    }

    fn activation(&mut self, x: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
        activate(x, kind)
    }

    fn concat(&mut self, parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        ops::concat(&refs, axis)
    }

    fn crop(&mut self, x: &Tensor<T>, offsets: &[usize], shape: &[usize]) -> Result<Tensor<T>> {
        ops::crop(x, offsets, shape)
    }

    fn pad(&mut self, x: &Tensor<T>, offsets: &[usize], shape: &[usize]) -> Result<Tensor<T>> {
        ops::pad(x, offsets, shape)
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        add_tensors(a, b)
    }

    fn scale(&mut self, a: &Tensor<T>, s: T) -> Result<Tensor<T>> {
        a.map(|v| v * s).ensure_finite("scale")
    }

    fn sum(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        sum_tensor(a)
    }

    fn bce_with_logits(&mut self, logits: &Tensor<T>, targets: &Tensor<T>) -> Result<Tensor<T>> {
        ops::bce_with_logits(logits, targets)
    }

    fn l1_loss(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::l1_loss(a, b)
    }
}

// ---------------------------------------------------------------------------

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Given the upstream gradient and which inputs need one, returns the
/// gradient for each input (or `None`).
type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Single-use recording of one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
    param_order: Vec<String>,
    trainable: bool,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    /// A tape whose parameters require gradients.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
            trainable: true,
        }
    }

    /// Controls whether parameters registered from now on require
    /// gradients. Frozen parameters still propagate gradients to inputs.
    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf value, optionally differentiable.
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            requires_grad,
            inputs: Vec::new(),
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn record(&mut self, value: Tensor<T>, inputs: &[Var], backward: BackwardFn<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let index = self.nodes.len();
        debug_assert!(inputs.iter().all(|v| v.0 < index));
        self.nodes.push(Node {
            value,
            requires_grad,
            inputs: inputs.iter().map(|v| v.0).collect(),
            backward: requires_grad.then_some(backward),
        });
        Var(index)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else { continue };
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&j| self.nodes[j].requires_grad)
                .collect();
            let input_grads = backward(&g, &needs);
            for ((&j, need), ig) in node.inputs.iter().zip(&needs).zip(input_grads) {
                // tape order is topological by construction
                assert!(j < i, "tape cycle: node {i} consumes node {j}");
                let (true, Some(ig)) = (*need, ig) else {
                    continue;
                };
                match &mut grads[j] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        let mut out = HashMap::new();
        for (i, g) in grads.into_iter().enumerate() {
            let node = &self.nodes[i];
            if let (Some(g), true) = (g, node.requires_grad && node.inputs.is_empty()) {
                out.insert(i, Tensor::new(node.value.shape(), g)?);
            }
        }
        let params = self
            .param_order
            .iter()
            .filter_map(|name| {
                let v = self.params[name];
                out.get(&v.0).map(|g| (name.clone(), g.clone()))
            })
            .collect();
        Ok(Gradients {
            leaves: out,
            params,
        })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
    params: Vec<(String, Tensor<T>)>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of a differentiable leaf; `None` when the loss does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    /// Gradients of trainable parameters, in registration order.
    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn into_params(self) -> Vec<(String, Tensor<T>)> {
        self.params
    }
}

impl<T: Float> Graph<T> for Tape<T> {
    type Value = Var;

    fn input(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    fn param(&mut self, name: &str, t: &Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.leaf(t.clone(), self.trainable);
        self.params.insert(name.to_string(), v);
        self.param_order.push(name.to_string());
        v
    }

    fn tensor<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.value(*v)
    }

    fn conv3d(&mut self, x: &Var, k: &Var, b: &Var, stride: [usize; 3]) -> Result<Var> {
        let (xt, kt) = (self.value(*x).clone(), self.value(*k).clone());
        let (out, geom) = ops::conv3d(&xt, &kt, self.value(*b), stride)?;
        let cn = geom.narrow_channels;
        Ok(self.record(
            out,
            &[*x, *k, *b],
            Box::new(move |dy, needs| {
                vec![
                    needs[0].then(|| geom.narrow_to_wide(dy, kt.data())),
                    needs[1].then(|| geom.kernel_grad(xt.data(), dy)),
                    needs[2].then(|| super::conv::channel_sum(dy, cn)),
                ]
            }),
        ))
    }

    fn conv3d_transpose(&mut self, x: &Var, k: &Var, b: &Var, stride: [usize; 3]) -> Result<Var> {
        let (xt, kt) = (self.value(*x).clone(), self.value(*k).clone());
        let (out, geom) = ops::conv3d_transpose(&xt, &kt, self.value(*b), stride)?;
        let cw = geom.wide_channels;
        Ok(self.record(
            out,
            &[*x, *k, *b],
            Box::new(move |dy, needs| {
                vec![
                    needs[0].then(|| geom.wide_to_narrow(dy, kt.data())),
                    needs[1].then(|| geom.kernel_grad(dy, xt.data())),
                    needs[2].then(|| super::conv::channel_sum(dy, cw)),
                ]
            }),
        ))
    }

    fn batch_norm(
        &mut self,
        x: &Var,
        gamma: &Var,
        beta: &Var,
        mode: BnMode<'_, T>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let gt = self.value(*gamma).clone();
        let (out, saved, stats) =
            ops::batch_norm(self.value(*x), &gt, self.value(*beta), mode, eps)?;
        let v = self.record(
            out,
            &[*x, *gamma, *beta],
            Box::new(move |dy, needs| {
                let (dx, dg, db) = ops::batch_norm_backward(&saved, gt.data(), dy);
                vec![
                    needs[0].then_some(dx),
                    needs[1].then_some(dg),
                    needs[2].then_some(db),
                ]
            }),
        );
        Ok((v, stats))
    }

    fn dropout(&mut self, x: &Var, rate: f64, rng: &mut RngStream, active: bool) -> Result<Var> {
        let (out, mask) = ops::dropout(self.value(*x), rate, rng, active)?;
        let Some(mask) = mask else { return Ok(*x) };
        Ok(self.record(
            out,
            &[*x],
            Box::new(move |dy, _| vec![Some(dy.iter().zip(&mask).map(|(&g, &m)| g * m).collect())]),
        ))
    }

    fn activation(&mut self, x: &Var, kind: Activation) -> Result<Var> {
        let xt = self.value(*x).clone();
        let out = activate(&xt, kind)?;
        let yt = out.clone();
        Ok(self.record(
            out,
            &[*x],
            Box::new(move |dy, _| {
                let g = dy
                    .iter()
                    .zip(xt.data().iter().zip(yt.data()))
                    .map(|(&g, (&xv, &yv))| g * kind.derivative(xv, yv))
                    .collect();
                vec![Some(g)]
            }),
        ))
    }

    fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|p| self.value(*p)).collect();
        let out = ops::concat(&tensors, axis)?;
        let shapes: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape().to_vec()).collect();
        Ok(self.record(
            out,
            parts,
            Box::new(move |dy, needs| {
                ops::concat_backward(dy, &shapes, axis)
                    .into_iter()
                    .zip(needs)
                    .map(|(g, &n)| n.then_some(g))
                    .collect()
            }),
        ))
    }

    fn crop(&mut self, x: &Var, offsets: &[usize], shape: &[usize]) -> Result<Var> {
        let out = ops::crop(self.value(*x), offsets, shape)?;
        let (offsets, big, small) = (
            offsets.to_vec(),
            self.value(*x).shape().to_vec(),
            shape.to_vec(),
        );
        Ok(self.record(
            out,
            &[*x],
            Box::new(move |dy, _| {
                let g = Tensor::new(small.clone(), dy.to_vec()).expect("crop grad shape");
                vec![Some(
                    ops::pad(&g, &offsets, &big).expect("crop adjoint").to_vec(),
                )]
            }),
        ))
    }

    fn pad(&mut self, x: &Var, offsets: &[usize], shape: &[usize]) -> Result<Var> {
        let out = ops::pad(self.value(*x), offsets, shape)?;
        let (offsets, big, small) = (
            offsets.to_vec(),
            shape.to_vec(),
            self.value(*x).shape().to_vec(),
        );
        Ok(self.record(
            out,
            &[*x],
            Box::new(move |dy, _| {
                let g = Tensor::new(big.clone(), dy.to_vec()).expect("pad grad shape");
                vec![Some(
                    ops::crop(&g, &offsets, &small)
                        .expect("pad adjoint")
                        .to_vec(),
                )]
            }),
        ))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = add_tensors(self.value(*a), self.value(*b))?;
        Ok(self.record(
            out,
            &[*a, *b],
            Box::new(|dy, needs| {
                vec![needs[0].then(|| dy.to_vec()), needs[1].then(|| dy.to_vec())]
            }),
        ))
    }

    fn scale(&mut self, a: &Var, s: T) -> Result<Var> {
        let out = self.value(*a).map(|v| v * s).ensure_finite("scale")?;
        Ok(self.record(
            out,
            &[*a],
            Box::new(move |dy, _| vec![Some(dy.iter().map(|&g| g * s).collect())]),
        ))
    }

    fn sum(&mut self, a: &Var) -> Result<Var> {
        let n = self.value(*a).numel();
        let out = sum_tensor(self.value(*a))?;
        Ok(self.record(
            out,
            &[*a],
            Box::new(move |dy, _| vec![Some(vec![dy[0]; n])]),
        ))
    }

    fn bce_with_logits(&mut self, logits: &Var, targets: &Var) -> Result<Var> {
        let (z, t) = (self.value(*logits).clone(), self.value(*targets).clone());
        let out = ops::bce_with_logits(&z, &t)?;
        Ok(self.record(
            out,
            &[*logits, *targets],
            Box::new(move |dy, needs| {
                if needs[1] {
                    // d/dt = -z / n; targets are normally constants
                    let n = T::of((z.numel()) as f64);
                    let gt = z.data().iter().map(|&zv| -zv * dy[0] / n).collect();
                    vec![
                        needs[0].then(|| ops::bce_with_logits_grad(z.data(), t.data(), dy[0])),
                        Some(gt),
                    ]
                } else {
                    vec![
                        Some(ops::bce_with_logits_grad(z.data(), t.data(), dy[0])),
                        None,
                    ]
                }
            }),
        ))
    }

    fn l1_loss(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (at, bt) = (self.value(*a).clone(), self.value(*b).clone());
        let out = ops::l1_loss(&at, &bt)?;
        Ok(self.record(
            out,
            &[*a, *b],
            Box::new(move |dy, needs| {
                let ga = ops::l1_loss_grad(at.data(), bt.data(), dy[0]);
                let gb = needs[1].then(|| ga.iter().map(|&g| -g).collect());
                vec![needs[0].then_some(ga), gb]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn([2, 3, 4], |i| i as f64), true);
        let s = tape.sum(&x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn l1_against_zero_has_uniform_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn([3, 5], |i| 1.0 + i as f64), true);
        let z = tape.input(Tensor::zeros([3, 5]));
        let l = tape.l1_loss(&x, &z).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0 / 15.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones([2]), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn shared_param_accumulates() {
        let mut tape = Tape::<f64>::new();
        let w = Tensor::full([2], 3.0);
        let a = tape.param("w", &w);
        let b = tape.param("w", &w);
        assert_eq!(a, b);
        let s = tape.add(&a, &b).unwrap();
        let l = tape.sum(&s).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.params().len(), 1);
        assert_eq!(g.params()[0].1.data(), &[2.0, 2.0]);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        tape.set_trainable(false);
        let w = tape.param("w", &Tensor::full([2], 3.0));
        tape.set_trainable(true);
        let x = tape.leaf(Tensor::full([2], 1.0), true);
        let s = tape.add(&w, &x).unwrap();
        let l = tape.sum(&s).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.params().is_empty());
        assert!(g.get(x).is_some());
    }
}
