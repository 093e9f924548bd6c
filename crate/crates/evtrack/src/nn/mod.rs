//! Model description, the default architecture, forward passes, and
//! parameter/MAC accounting.

pub mod container;
pub mod kernels;
pub mod reference;
pub mod scalar;
pub mod tensor;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
pub use kernels::{BnStats, BN_EPSILON};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// One layer of the network, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm,
    ReLU,
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        units: usize,
    },
    Sigmoid,
}

/// Network description plus named weight tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<S> {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub params: BTreeMap<String, Tensor<S>>,
}

/// Normalized pupil bounding box (center x/y, width, height), all in [0,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<BBox> {
        for (name, v) in [("cx", cx), ("cy", cy), ("w", w), ("h", h)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("bbox {name}={v} outside [0,1]")));
            }
        }
        Ok(BBox { cx, cy, w, h })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }
}

/// Shape (without the batch dimension) after applying `layer` to `shape`.
pub fn layer_output_shape(shape: &[usize], layer: &LayerSpec) -> Result<Vec<usize>> {
    match *layer {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let [_, h, w] = dims3(shape)?;
            if out_channels == 0 || kernel == 0 || stride == 0 {
                return Err(Error::invalid("conv dims must be positive"));
            }
            if padding >= kernel {
                return Err(Error::invalid("conv padding must be smaller than kernel"));
            }
            Ok(vec![
                out_channels,
                kernels::conv_out_size(h, kernel, stride, padding)?,
                kernels::conv_out_size(w, kernel, stride, padding)?,
            ])
        }
        LayerSpec::BatchNorm | LayerSpec::ReLU | LayerSpec::Sigmoid => Ok(shape.to_vec()),
        LayerSpec::AvgPool { kernel, stride } => {
            let [c, h, w] = dims3(shape)?;
            if kernel == 0 || stride == 0 || h < kernel || w < kernel {
                return Err(Error::ShapeMismatch("avgpool_kernel vs input".into()));
            }
            Ok(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
        }
        LayerSpec::Flatten => Ok(vec![shape.iter().product()]),
        LayerSpec::Linear { units } => {
            if shape.len() != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "linear expects a flat input, got {shape:?}"
                )));
            }
            if units == 0 {
                return Err(Error::invalid("linear units must be positive"));
            }
            Ok(vec![units])
        }
    }
}

fn dims3(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        [c, h, w] => Ok([*c, *h, *w]),
        _ => Err(Error::ShapeMismatch(format!(
            "expected [C,H,W] shape, got {shape:?}"
        ))),
    }
}

/// Parameter tensors (name, shape) of `layer` at position `index`, given the
/// layer's input shape. Order is the serialization order.
pub fn layer_param_shapes(
    index: usize,
    layer: &LayerSpec,
    in_shape: &[usize],
) -> Result<Vec<(String, Vec<usize>)>> {
    let p = |suffix: &str| format!("layer{index}.{suffix}");
    match *layer {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            ..
        } => {
            let [c, _, _] = dims3(in_shape)?;
            Ok(vec![
                (p("weight"), vec![out_channels, c, kernel, kernel]),
                (p("bias"), vec![out_channels]),
            ])
        }
        LayerSpec::BatchNorm => {
            let [c, _, _] = dims3(in_shape)?;
            Ok(vec![
                (p("gamma"), vec![c]),
                (p("beta"), vec![c]),
                (p("running_mean"), vec![c]),
                (p("running_var"), vec![c]),
            ])
        }
        LayerSpec::Linear { units } => {
            let input = in_shape
                .first()
                .copied()
                .filter(|_| in_shape.len() == 1)
                .ok_or_else(|| Error::ShapeMismatch("linear input shape".into()))?;
            Ok(vec![
                (p("weight"), vec![units, input]),
                (p("bias"), vec![units]),
            ])
        }
        _ => Ok(vec![]),
    }
}

impl<S: Scalar> ModelSpec<S> {
    /// Layer input shapes (index i = input of layer i; last = output shape).
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.to_vec()];
        for layer in &self.layers {
            let next = layer_output_shape(shapes.last().unwrap(), layer)?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Check layer compatibility and that every parameter tensor exists with
    /// the right shape.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.shape_trace()?;
        let mut expected = 0usize;
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, shape) in layer_param_shapes(i, layer, &shapes[i])? {
                let t = self
                    .params
                    .get(&name)
                    .ok_or_else(|| Error::Structure(format!("missing parameter {name}")))?;
                if t.shape != shape {
                    return Err(Error::Structure(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape
                    )));
                }
                expected += 1;
            }
        }
        if expected != self.params.len() {
            return Err(Error::Structure(format!(
                "model has {} parameter tensors, expected {expected}",
                self.params.len()
            )));
        }
        Ok(())
    }

    pub fn param(&self, index: usize, suffix: &str) -> &Tensor<S> {
        &self.params[&format!("layer{index}.{suffix}")]
    }

    pub fn param_mut(&mut self, index: usize, suffix: &str) -> &mut Tensor<S> {
        self.params
            .get_mut(&format!("layer{index}.{suffix}"))
            .expect("validated parameter")
    }

    pub fn cast<T: Scalar>(&self) -> ModelSpec<T> {
        ModelSpec {
            input_shape: self.input_shape,
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Names of trainable parameters (excludes batch-norm running stats).
    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .keys()
            .filter(|k| !k.ends_with("running_mean") && !k.ends_with("running_var"))
            .cloned()
            .collect()
    }
}

/// Initialize parameters for `layers`: fan-in-scaled uniform
/// (bound = 1/√fan_in) for conv/linear weights and biases, γ=1 β=0 for
/// batch norm, running stats at (0, 1). Draws are made in f64 so the same
/// seed produces corresponding f32/f64 models.
pub fn init_params<S: Scalar>(
    input_shape: [usize; 3],
    layers: &[LayerSpec],
    rng: &mut Rng,
) -> Result<BTreeMap<String, Tensor<S>>> {
    let mut params = BTreeMap::new();
    let mut shape = input_shape.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let fan_in = match *layer {
            LayerSpec::Conv2d { kernel, .. } => shape[0] * kernel * kernel,
            LayerSpec::Linear { .. } => shape[0],
            _ => 0,
        };
        for (name, pshape) in layer_param_shapes(i, layer, &shape)? {
            let len: usize = pshape.iter().product();
            let data: Vec<S> = if name.ends_with("gamma") || name.ends_with("running_var") {
                vec![S::one(); len]
            } else if name.ends_with("beta") || name.ends_with("running_mean") {
                vec![S::zero(); len]
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..len)
                    .map(|_| S::from_f64v(rng.uniform(-bound, bound)))
                    .collect()
            };
            params.insert(name, Tensor::from_vec(pshape, data)?);
        }
        shape = layer_output_shape(&shape, layer)?;
    }
    Ok(params)
}

/// The default architecture: six conv+BN+ReLU blocks (pooling after blocks
/// four, five and six), a 128-unit FC layer with ReLU, a 4-unit linear head,
/// and a sigmoid squashing the box to [0,1]⁴.
pub fn default_layers() -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Conv2d { out_channels: 16, kernel: 5, stride: 2, padding: 1 },
        BatchNorm,
        ReLU,
        Conv2d { out_channels: 64, kernel: 3, stride: 1, padding: 1 },
        BatchNorm,
        ReLU,
        Conv2d { out_channels: 16, kernel: 3, stride: 1, padding: 1 },
        BatchNorm,
        ReLU,
        Conv2d { out_channels: 16, kernel: 3, stride: 1, padding: 1 },
        BatchNorm,
        ReLU,
        AvgPool { kernel: 2, stride: 2 },
        Conv2d { out_channels: 8, kernel: 3, stride: 1, padding: 1 },
        BatchNorm,
        ReLU,
        AvgPool { kernel: 2, stride: 2 },
        Conv2d { out_channels: 16, kernel: 3, stride: 1, padding: 1 },
        BatchNorm,
        ReLU,
        AvgPool { kernel: 2, stride: 2 },
        Flatten,
        Linear { units: 128 },
        ReLU,
        Linear { units: 4 },
        Sigmoid,
    ]
}

/// Build the default model with seeded weight initialization.
pub fn build_default_model<S: Scalar>(in_channels: usize, seed: u64) -> Result<ModelSpec<S>> {
    if in_channels != 1 && in_channels != 2 {
        return Err(Error::invalid("in_channels must be 1 or 2"));
    }
    let input_shape = [in_channels, 64, 64];
    let layers = default_layers();
    let mut rng = Rng::new(seed);
    let params = init_params(input_shape, &layers, &mut rng)?;
    let model = ModelSpec {
        input_shape,
        layers,
        params,
    };
    model.validate()?;
    Ok(model)
}

/// Batch-norm statistics source during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Running statistics (inference).
    Eval,
    /// Statistics of the current batch (training).
    Train,
}

/// Per-layer activations captured for backpropagation.
pub struct ForwardTrace<S> {
    /// activations[0] is the (batched) input; activations[i+1] the output
    /// of layer i.
    pub activations: Vec<Tensor<S>>,
    /// Batch statistics for each BatchNorm layer (None for other kinds).
    pub bn_stats: Vec<Option<BnStats<S>>>,
}

fn ensure_batched<S: Scalar>(model: &ModelSpec<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let want = &model.input_shape;
    if x.shape == want {
        let mut shape = vec![1];
        shape.extend_from_slice(want);
        return x.clone().reshaped(shape);
    }
    if x.shape.len() == 4 && x.shape[1..] == want[..] {
        return Ok(x.clone());
    }
    Err(Error::ShapeMismatch(format!(
        "input shape {:?} does not match model input {:?}",
        x.shape, want
    )))
}

fn run_forward<S: Scalar, const COUNT: bool>(
    model: &ModelSpec<S>,
    x: &Tensor<S>,
    mode: BnMode,
    trace: Option<&mut ForwardTrace<S>>,
    macs: &mut u64,
) -> Result<Tensor<S>> {
    let mut current = ensure_batched(model, x)?;
    let mut trace = trace;
    if let Some(t) = trace.as_deref_mut() {
        t.activations.push(current.clone());
    }
    for (i, layer) in model.layers.iter().enumerate() {
        let mut bn_for_trace = None;
        let next = match *layer {
            LayerSpec::Conv2d { stride, padding, .. } => kernels::conv2d::<S, COUNT>(
                &current,
                model.param(i, "weight"),
                model.param(i, "bias"),
                stride,
                padding,
                macs,
            )?,
            LayerSpec::BatchNorm => {
                let gamma = &model.param(i, "gamma").data;
                let beta = &model.param(i, "beta").data;
                match mode {
                    BnMode::Eval => {
                        let mean = &model.param(i, "running_mean").data;
                        let var = &model.param(i, "running_var").data;
                        let eps = S::from_f64v(BN_EPSILON);
                        let inv_std: Vec<S> =
                            var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
                        kernels::batchnorm_apply(&current, mean, &inv_std, gamma, beta)?
                    }
                    BnMode::Train => {
                        let stats = kernels::bn_batch_stats(&current)?;
                        let out = kernels::batchnorm_apply(
                            &current,
                            &stats.mean,
                            &stats.inv_std,
                            gamma,
                            beta,
                        )?;
                        bn_for_trace = Some(stats);
                        out
                    }
                }
            }
            LayerSpec::ReLU => kernels::relu(&current),
            LayerSpec::AvgPool { kernel, stride } => kernels::avgpool(&current, kernel, stride)?,
            LayerSpec::Flatten => kernels::flatten(&current)?,
            LayerSpec::Linear { .. } => kernels::linear::<S, COUNT>(
                &current,
                model.param(i, "weight"),
                model.param(i, "bias"),
                macs,
            )?,
            LayerSpec::Sigmoid => kernels::sigmoid(&current),
        };
        debug_assert!(
            next.all_finite(),
            "non-finite activation after layer {i} ({layer:?})"
        );
        current = next;
        if let Some(t) = trace.as_deref_mut() {
            t.activations.push(current.clone());
            t.bn_stats.push(bn_for_trace);
        }
    }
    Ok(current)
}

/// Inference forward pass (running BN statistics). Accepts [C,H,W] or
/// [N,C,H,W]; returns [N,4].
pub fn forward<S: Scalar>(model: &ModelSpec<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let mut macs = 0;
    run_forward::<S, false>(model, x, BnMode::Eval, None, &mut macs)
}

/// Forward pass that records activations (and, in train mode, batch-norm
/// batch statistics) for backpropagation.
pub fn forward_traced<S: Scalar>(
    model: &ModelSpec<S>,
    x: &Tensor<S>,
    mode: BnMode,
) -> Result<(Tensor<S>, ForwardTrace<S>)> {
    let mut trace = ForwardTrace {
        activations: Vec::with_capacity(model.layers.len() + 1),
        bn_stats: Vec::with_capacity(model.layers.len()),
    };
    let mut macs = 0;
    let out = run_forward::<S, false>(model, x, mode, Some(&mut trace), &mut macs)?;
    Ok((out, trace))
}

/// Forward pass with an instrumented multiply-accumulate counter.
pub fn forward_counted<S: Scalar>(model: &ModelSpec<S>, x: &Tensor<S>) -> Result<(Tensor<S>, u64)> {
    let mut macs = 0;
    let out = run_forward::<S, true>(model, x, BnMode::Eval, None, &mut macs)?;
    Ok((out, macs))
}

/// Learnable parameter count (conv/linear weights+biases, BN γ and β).
pub fn count_params<S: Scalar>(model: &ModelSpec<S>) -> Result<u64> {
    let shapes = model.shape_trace()?;
    let mut total = 0u64;
    for (i, layer) in model.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv2d { .. } | LayerSpec::Linear { .. } => {
                for (_, shape) in layer_param_shapes(i, layer, &shapes[i])? {
                    total += shape.iter().product::<usize>() as u64;
                }
            }
            LayerSpec::BatchNorm => {
                let c = shapes[i][0] as u64;
                total += 2 * c; // γ and β
            }
            _ => {}
        }
    }
    Ok(total)
}

/// Analytic multiply-accumulate count for one sample:
/// conv contributes out_elements·(Cin·k²), linear contributes out·in.
pub fn count_macs<S: Scalar>(model: &ModelSpec<S>) -> Result<u64> {
    let shapes = model.shape_trace()?;
    let mut total = 0u64;
    for (i, layer) in model.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv2d { kernel, .. } => {
                let cin = shapes[i][0] as u64;
                let out_elems: u64 = shapes[i + 1].iter().product::<usize>() as u64;
                total += out_elems * cin * (kernel * kernel) as u64;
            }
            LayerSpec::Linear { units } => {
                total += (units * shapes[i][0]) as u64;
            }
            _ => {}
        }
    }
    Ok(total)
}

/// Convert one sigmoid output row to a bounding box and its pixel center on
/// the `grid`×`grid` frame.
pub fn decode_output(values: &[f64], grid: f64) -> Result<(BBox, (f64, f64))> {
    if values.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "decode_output expects 4 values, got {}",
            values.len()
        )));
    }
    let bbox = BBox::new(values[0], values[1], values[2], values[3])?;
    Ok((bbox, (bbox.cx * grid, bbox.cy * grid)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_model_conv1_weight_shape_single_channel() {
        let model = build_default_model::<f32>(1, 0).unwrap();
        assert_eq!(model.param(0, "weight").shape, vec![16, 1, 5, 5]);
    }

    #[test]
    fn default_model_shape_trace() {
        let model = build_default_model::<f32>(2, 0).unwrap();
        let shapes = model.shape_trace().unwrap();
        assert_eq!(shapes[0], vec![2, 64, 64]);
        assert_eq!(shapes[1], vec![16, 31, 31]); // conv1
        assert_eq!(shapes[13], vec![16, 15, 15]); // first pool
        assert_eq!(shapes[17], vec![8, 7, 7]); // second pool
        assert_eq!(shapes[21], vec![16, 3, 3]); // third pool
        assert_eq!(shapes[22], vec![144]); // flatten
        assert_eq!(shapes[23], vec![128]);
        assert_eq!(shapes[25], vec![4]);
        assert_eq!(*shapes.last().unwrap(), vec![4]);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_default_model::<f32>(2, 7).unwrap();
        let b = build_default_model::<f32>(2, 7).unwrap();
        assert_eq!(a, b);
        let c = build_default_model::<f32>(2, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_weights_give_half_outputs() {
        let mut model = build_default_model::<f32>(2, 0).unwrap();
        for name in model.trainable_names() {
            let t = model.params.get_mut(&name).unwrap();
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::from_vec(vec![2, 64, 64], vec![1.0; 2 * 64 * 64]).unwrap();
        let y = forward(&model, &x).unwrap();
        assert_eq!(y.shape, vec![1, 4]);
        for &v in &y.data {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn batch_of_identical_frames_identical_rows() {
        let model = build_default_model::<f32>(2, 3).unwrap();
        let frame: Vec<f32> = (0..2 * 64 * 64).map(|i| (i % 7) as f32).collect();
        let mut batch = frame.clone();
        batch.extend_from_slice(&frame);
        let x = Tensor::from_vec(vec![2, 2, 64, 64], batch).unwrap();
        let y = forward(&model, &x).unwrap();
        assert_eq!(y.shape, vec![2, 4]);
        assert_eq!(y.data[..4], y.data[4..]);
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let model = build_default_model::<f32>(2, 11).unwrap();
        let x = Tensor::from_vec(vec![2, 64, 64], vec![3.0; 2 * 64 * 64]).unwrap();
        let y = forward(&model, &x).unwrap();
        for &v in &y.data {
            assert!(v > 0.0 && v < 1.0);
        }
        let (bbox, (px, py)) = decode_output(
            &y.data.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            64.0,
        )
        .unwrap();
        assert!(px >= 0.0 && px <= 64.0 && py >= 0.0 && py <= 64.0);
        assert!(bbox.w >= 0.0 && bbox.h >= 0.0);
    }

    #[test]
    fn decode_examples() {
        let (_, (px, py)) = decode_output(&[0.5, 0.5, 0.1, 0.1], 64.0).unwrap();
        assert_eq!((px, py), (32.0, 32.0));
        let (_, (px, py)) = decode_output(&[0.0, 0.0, 0.2, 0.2], 64.0).unwrap();
        assert_eq!((px, py), (0.0, 0.0));
        let (_, (px, py)) = decode_output(&[0.09, 0.89, 0.1, 0.1], 64.0).unwrap();
        assert!((px - 5.76).abs() < 1e-12);
        assert!((py - 56.96).abs() < 1e-12);
    }

    #[test]
    fn param_count_examples() {
        // Single conv 1→1, 3×3 with bias: 9 + 1.
        let layers = vec![LayerSpec::Conv2d {
            out_channels: 1,
            kernel: 3,
            stride: 1,
            padding: 1,
        }];
        let mut rng = Rng::new(0);
        let model = ModelSpec::<f32> {
            input_shape: [1, 8, 8],
            layers: layers.clone(),
            params: init_params([1, 8, 8], &layers, &mut rng).unwrap(),
        };
        assert_eq!(count_params(&model).unwrap(), 10);

        // Linear 144→128 with bias.
        let layers = vec![
            LayerSpec::Flatten,
            LayerSpec::Linear { units: 128 },
        ];
        let model = ModelSpec::<f32> {
            input_shape: [16, 3, 3],
            layers: layers.clone(),
            params: init_params([16, 3, 3], &layers, &mut Rng::new(0)).unwrap(),
        };
        assert_eq!(count_params(&model).unwrap(), 18_560);
    }

    #[test]
    fn default_model_accounting() {
        let model = build_default_model::<f32>(2, 0).unwrap();
        // Analytic values for the 2-channel default architecture.
        assert_eq!(count_params(&model).unwrap(), 43_324);
        assert_eq!(count_macs(&model).unwrap(), 21_030_688);
    }

    #[test]
    fn instrumented_macs_match_analytic() {
        let model = build_default_model::<f32>(2, 1).unwrap();
        let x = Tensor::from_vec(vec![2, 64, 64], vec![0.5; 2 * 64 * 64]).unwrap();
        let (_, counted) = forward_counted(&model, &x).unwrap();
        assert_eq!(counted, count_macs(&model).unwrap());
    }

    #[test]
    fn validate_rejects_wrong_shapes() {
        let mut model = build_default_model::<f32>(2, 0).unwrap();
        model.params.insert(
            "layer0.bias".into(),
            Tensor::from_vec(vec![3], vec![0.0; 3]).unwrap(),
        );
        assert!(model.validate().is_err());
    }
}
