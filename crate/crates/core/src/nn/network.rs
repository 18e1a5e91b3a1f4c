//! Layer specifications, parameter storage and sequential networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    /// Residual stack of dilated causal convolutions, one block per dilation.
    Tcn {
        filters: usize,
        kernel: usize,
        dilations: Vec<usize>,
    },
    /// Affine map over the last axis at every leading position.
    DenseTd { units: usize, activation: Activation },
    /// Stride-1 "same" convolution over `(T, H)`.
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        activation: Activation,
    },
    Conv2dTranspose {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        activation: Activation,
    },
    MaxPool2d { pool: (usize, usize) },
    Upsample2d { size: (usize, usize) },
    Relu,
    /// Reshapes the per-tick dims, keeping `[B, T]`.
    Reshape { dims: Vec<usize> },
    /// Flattens all per-tick dims into one.
    FlattenTd,
}

/// Trainable tensor with its Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor<f32>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor<f32>) -> Self {
        let n = value.len();
        Parameter {
            name: name.into(),
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TcnBlock {
    conv1: (usize, usize),
    conv2: (usize, usize),
    proj: Option<(usize, usize)>,
    dilation: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Tcn(Vec<TcnBlock>),
    Dense { w: usize, b: usize, act: Activation },
    Conv2d { w: usize, b: usize, act: Activation },
    MaxPool((usize, usize)),
    Upsample((usize, usize)),
    Relu,
    Reshape(Vec<usize>),
}

/// A sequential network over `[B, T, ...]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    specs: Vec<LayerSpec>,
    input_dims: Vec<usize>,
    output_dims: Vec<usize>,
    layers: Vec<Layer>,
    pub params: Vec<Parameter>,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, shape: &[usize], limit: f64) -> Tensor<f32> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-limit..limit) as f32).collect();
        Tensor::new(shape, data).expect("init shape")
    }

    fn weight(&mut self, shape: &[usize], fan_in: usize, fan_out: usize, act: Activation) -> Tensor<f32> {
        let limit = match act {
            Activation::Relu => (6.0 / fan_in as f64).sqrt(),
            Activation::Linear => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        };
        self.uniform(shape, limit)
    }
}

fn build_err(layer: usize, detail: impl Into<String>) -> Error {
    Error::Shape(format!("layer {layer}: {}", detail.into()))
}

impl Network {
    /// Validates the layer stack against the per-tick input dims and draws
    /// seeded initial weights (He-uniform before ReLU, Glorot-uniform
    /// otherwise, zero biases).
    pub fn build(specs: &[LayerSpec], input_dims: &[usize], seed: u64) -> Result<Network> {
        if input_dims.is_empty() || input_dims.len() > 2 || input_dims.contains(&0) {
            return Err(Error::Shape(format!("unsupported per-tick input dims {input_dims:?}")));
        }
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut params: Vec<Parameter> = Vec::new();
        let mut layers = Vec::with_capacity(specs.len());
        let mut dims = input_dims.to_vec();

        let add = |params: &mut Vec<Parameter>, name: String, t: Tensor<f32>| {
            params.push(Parameter::new(name, t));
            params.len() - 1
        };

        for (li, spec) in specs.iter().enumerate() {
            match spec {
                LayerSpec::Tcn { filters, kernel, dilations } => {
                    if dims.len() != 1 {
                        return Err(build_err(li, format!("tcn needs [B,T,C] input, per-tick dims {dims:?}")));
                    }
                    if *filters == 0 || *kernel == 0 || dilations.is_empty() {
                        return Err(build_err(li, "tcn needs filters, kernel and at least one dilation"));
                    }
                    if let Some(d) = dilations.iter().find(|&&d| d == 0) {
                        return Err(build_err(li, format!("non-positive dilation {d}")));
                    }
                    let mut blocks = Vec::new();
                    let mut c = dims[0];
                    for (bi, &d) in dilations.iter().enumerate() {
                        let p = format!("l{li}.tcn.block{bi}");
                        let (f, k) = (*filters, *kernel);
                        let w1 = init.weight(&[k, c, f], k * c, k * f, Activation::Relu);
                        let conv1 = (
                            add(&mut params, format!("{p}.conv1.w"), w1),
                            add(&mut params, format!("{p}.conv1.b"), Tensor::zeros(&[f])),
                        );
                        let w2 = init.weight(&[k, f, f], k * f, k * f, Activation::Relu);
                        let conv2 = (
                            add(&mut params, format!("{p}.conv2.w"), w2),
                            add(&mut params, format!("{p}.conv2.b"), Tensor::zeros(&[f])),
                        );
                        let proj = (c != f).then(|| {
                            let wp = init.weight(&[c, f], c, f, Activation::Linear);
                            (
                                add(&mut params, format!("{p}.proj.w"), wp),
                                add(&mut params, format!("{p}.proj.b"), Tensor::zeros(&[f])),
                            )
                        });
                        blocks.push(TcnBlock {
                            conv1,
                            conv2,
                            proj,
                            dilation: d,
                        });
                        c = f;
                    }
                    dims = vec![c];
                    layers.push(Layer::Tcn(blocks));
                }
                LayerSpec::DenseTd { units, activation } => {
                    let f = *dims.last().unwrap();
                    if *units == 0 {
                        return Err(build_err(li, "dense needs at least one unit"));
                    }
                    let w = init.weight(&[f, *units], f, *units, *activation);
                    let w = add(&mut params, format!("l{li}.dense.w"), w);
                    let b = add(&mut params, format!("l{li}.dense.b"), Tensor::zeros(&[*units]));
                    *dims.last_mut().unwrap() = *units;
                    layers.push(Layer::Dense { w, b, act: *activation });
                }
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    activation,
                } => {
                    if dims.len() != 2 {
                        return Err(build_err(li, format!("conv2d needs [B,T,H,C] input, per-tick dims {dims:?}")));
                    }
                    let (kt, kh) = *kernel;
                    if kt == 0 || kh == 0 || *filters == 0 {
                        return Err(build_err(li, format!("invalid conv2d kernel {kernel:?} / filters {filters}")));
                    }
                    let c = dims[1];
                    let w = init.weight(&[kt, kh, c, *filters], kt * kh * c, kt * kh * filters, *activation);
                    let w = add(&mut params, format!("l{li}.conv2d.w"), w);
                    let b = add(&mut params, format!("l{li}.conv2d.b"), Tensor::zeros(&[*filters]));
                    dims[1] = *filters;
                    layers.push(Layer::Conv2d { w, b, act: *activation });
                }
                LayerSpec::Conv2dTranspose {
                    filters,
                    kernel,
                    stride,
                    activation,
                } => {
                    if *kernel != (1, 1) || *stride != (1, 1) {
                        return Err(build_err(
                            li,
                            format!("conv2d_transpose supports kernel (1,1) stride (1,1) only, got {kernel:?} {stride:?}"),
                        ));
                    }
                    if dims.len() != 2 || *filters == 0 {
                        return Err(build_err(li, format!("conv2d_transpose on per-tick dims {dims:?}")));
                    }
                    // a 1x1 stride-1 transposed convolution is a per-position
                    // affine map over channels
                    let c = dims[1];
                    let w = init.weight(&[c, *filters], c, *filters, *activation);
                    let w = add(&mut params, format!("l{li}.conv2d_transpose.w"), w);
                    let b = add(&mut params, format!("l{li}.conv2d_transpose.b"), Tensor::zeros(&[*filters]));
                    dims[1] = *filters;
                    layers.push(Layer::Dense { w, b, act: *activation });
                }
                LayerSpec::MaxPool2d { pool } => {
                    if dims.len() != 2 || pool.0 == 0 || pool.1 == 0 || dims[0] < pool.1 {
                        return Err(build_err(li, format!("maxpool {pool:?} on per-tick dims {dims:?}")));
                    }
                    dims[0] /= pool.1;
                    layers.push(Layer::MaxPool(*pool));
                }
                LayerSpec::Upsample2d { size } => {
                    if dims.len() != 2 || size.0 == 0 || size.1 == 0 {
                        return Err(build_err(li, format!("upsample {size:?} on per-tick dims {dims:?}")));
                    }
                    dims[0] *= size.1;
                    layers.push(Layer::Upsample(*size));
                }
                LayerSpec::Relu => layers.push(Layer::Relu),
                LayerSpec::Reshape { dims: target } => {
                    let have: usize = dims.iter().product();
                    let want: usize = target.iter().product();
                    if target.is_empty() || target.len() > 2 || have != want {
                        return Err(build_err(li, format!("cannot reshape per-tick dims {dims:?} to {target:?}")));
                    }
                    dims = target.clone();
                    layers.push(Layer::Reshape(dims.clone()));
                }
                LayerSpec::FlattenTd => {
                    dims = vec![dims.iter().product()];
                    layers.push(Layer::Reshape(dims.clone()));
                }
            }
        }
        Ok(Network {
            specs: specs.to_vec(),
            input_dims: input_dims.to_vec(),
            output_dims: dims,
            layers,
            params,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn output_dims(&self) -> &[usize] {
        &self.output_dims
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Places every parameter on the tape as a gradient-tracking leaf.
    pub fn bind<S: Scalar>(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.cast(), true)).collect()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 + self.input_dims.len() || shape[2..] != self.input_dims[..] {
            return Err(Error::Shape(format!(
                "network expects [B, T, {}] input, got {shape:?}",
                self.input_dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(())
    }

    /// Records the forward pass; `params` must come from [`Network::bind`].
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, params: &[Var], x: Var) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::Tcn(blocks) => {
                    for blk in blocks {
                        h = tcn_block(tape, params, h, blk)?;
                    }
                    h
                }
                Layer::Dense { w, b, act } => {
                    let y = tape.dense(h, params[*w], params[*b])?;
                    activate(tape, y, *act)
                }
                Layer::Conv2d { w, b, act } => {
                    let y = tape.conv2d_same(h, params[*w], params[*b])?;
                    activate(tape, y, *act)
                }
                Layer::MaxPool(pool) => tape.maxpool2d(h, *pool)?,
                Layer::Upsample(size) => tape.upsample2d(h, *size)?,
                Layer::Relu => tape.relu(h),
                Layer::Reshape(dims) => {
                    let s = tape.shape(h);
                    let mut shape = vec![s[0], s[1]];
                    shape.extend_from_slice(dims);
                    tape.reshape(h, &shape)?
                }
            };
        }
        Ok(h)
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(input.shape())?;
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.value.clone(), false)).collect();
        let x = tape.leaf(input.clone(), false);
        let y = self.forward(&mut tape, &params, x)?;
        Ok(tape.value(y).clone())
    }
}

fn activate<S: Scalar>(tape: &mut Tape<S>, y: Var, act: Activation) -> Var {
    match act {
        Activation::Linear => y,
        Activation::Relu => tape.relu(y),
    }
}

/// `relu(conv2(relu(conv1(x)))) + proj(x)`, without an output activation.
fn tcn_block<S: Scalar>(tape: &mut Tape<S>, params: &[Var], x: Var, blk: &TcnBlock) -> Result<Var> {
    let h = tape.causal_conv1d(x, params[blk.conv1.0], params[blk.conv1.1], blk.dilation)?;
    let h = tape.relu(h);
    let h = tape.causal_conv1d(h, params[blk.conv2.0], params[blk.conv2.1], blk.dilation)?;
    let h = tape.relu(h);
    let res = match blk.proj {
        Some((w, b)) => tape.dense(x, params[w], params[b])?,
        None => x,
    };
    tape.add(h, res)
}
