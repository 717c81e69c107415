//! Small multi-layer perceptrons with explicit forward/backward passes and
//! an adaptive-moment optimizer. Everything is f64 and deterministic given
//! the seed: Sinkhorn differentiation at small epsilon is too ill-conditioned
//! for f32.

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GwError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = GwError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(GwError::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

/// Architecture of an embedding network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// Input, hidden..., output widths; at least two entries.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(GwError::invalid("MlpSpec needs at least 2 layer widths"));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(GwError::invalid("MlpSpec widths must all be >= 1"));
        }
        Ok(MlpSpec {
            layer_widths,
            activation,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    /// out x in weight matrix.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameters of an MLP, shape-consistent with its spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpParams {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
}

/// Initialize parameters: fan-in-scaled uniform weights (He-style for relu,
/// Glorot-style for tanh) from a per-layer ChaCha stream, zero biases.
pub fn init_params(spec: &MlpSpec) -> MlpParams {
    let mut layers = Vec::with_capacity(spec.layer_widths.len() - 1);
    for (idx, pair) in spec.layer_widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = match spec.activation {
            Activation::Relu => (6.0 / fan_in as f64).sqrt(),
            Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(idx as u64 + 1);
        let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
        layers.push(Layer {
            weight,
            bias: Array1::zeros(fan_out),
        });
    }
    MlpParams {
        spec: spec.clone(),
        layers,
    }
}

/// Activation cache from a forward pass, sufficient for an exact backward.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer (layer_inputs[0] is the network input).
    layer_inputs: Vec<Array2<f64>>,
    /// Pre-activation values of each non-final layer.
    pre_activations: Vec<Array2<f64>>,
    n_rows: usize,
}

/// Forward pass on an N x d input; hidden layers use the spec activation,
/// the final layer is affine.
pub fn forward(params: &MlpParams, inputs: &Array2<f64>) -> Result<(Array2<f64>, Tape)> {
    let (n, d) = inputs.dim();
    if d != params.spec.input_dim() {
        return Err(GwError::shape(
            format!("input width {}", params.spec.input_dim()),
            format!("{d}"),
            "net::forward",
        ));
    }
    let n_layers = params.layers.len();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut pre_activations = Vec::with_capacity(n_layers.saturating_sub(1));
    let mut x = inputs.clone();
    for (idx, layer) in params.layers.iter().enumerate() {
        layer_inputs.push(x.clone());
        let mut pre = x.dot(&layer.weight.t());
        for mut row in pre.rows_mut() {
            row += &layer.bias;
        }
        if idx + 1 < n_layers {
            pre_activations.push(pre.clone());
            x = match params.spec.activation {
                Activation::Relu => pre.mapv(|v| v.max(0.0)),
                Activation::Tanh => pre.mapv(f64::tanh),
            };
        } else {
            x = pre;
        }
    }
    Ok((
        x,
        Tape {
            layer_inputs,
            pre_activations,
            n_rows: n,
        },
    ))
}

/// Per-layer parameter gradients, shape-matched to `MlpParams`.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            layers: params
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        for l in &self.layers {
            s += l.weight.iter().map(|v| v * v).sum::<f64>();
            s += l.bias.iter().map(|v| v * v).sum::<f64>();
        }
        s.sqrt()
    }
}

/// Exact reverse-mode gradients of any scalar whose output-gradient is
/// `grad_outputs`; returns parameter gradients and the input gradient.
pub fn backward(
    params: &MlpParams,
    tape: &Tape,
    grad_outputs: &Array2<f64>,
) -> Result<(MlpGrads, Array2<f64>)> {
    let n_layers = params.layers.len();
    if tape.layer_inputs.len() != n_layers || tape.pre_activations.len() + 1 != n_layers {
        return Err(GwError::InvalidState(
            "backward: tape does not match the network depth".to_string(),
        ));
    }
    if grad_outputs.dim() != (tape.n_rows, params.spec.output_dim()) {
        return Err(GwError::shape(
            format!("{} x {}", tape.n_rows, params.spec.output_dim()),
            format!("{:?}", grad_outputs.dim()),
            "net::backward",
        ));
    }
    let mut grads = Vec::with_capacity(n_layers);
    let mut grad = grad_outputs.clone();
    for idx in (0..n_layers).rev() {
        if idx + 1 < n_layers {
            let pre = &tape.pre_activations[idx];
            if pre.dim() != grad.dim() {
                return Err(GwError::InvalidState(
                    "backward: tape shapes inconsistent with gradient".to_string(),
                ));
            }
            match params.spec.activation {
                Activation::Relu => {
                    grad.zip_mut_with(pre, |g, &p| {
                        if p <= 0.0 {
                            *g = 0.0;
                        }
                    });
                }
                Activation::Tanh => {
                    grad.zip_mut_with(pre, |g, &p| {
                        let t = p.tanh();
                        *g *= 1.0 - t * t;
                    });
                }
            }
        }
        let x = &tape.layer_inputs[idx];
        let grad_weight = grad.t().dot(x);
        let grad_bias = grad.sum_axis(Axis(0));
        grad = grad.dot(&params.layers[idx].weight);
        grads.push(Layer {
            weight: grad_weight,
            bias: grad_bias,
        });
    }
    grads.reverse();
    Ok((MlpGrads { layers: grads }, grad))
}

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_floor: f64,
    pub step: u64,
    first_moment: Vec<Layer>,
    second_moment: Vec<Layer>,
}

impl OptState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        let zeros = || {
            params
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect::<Vec<_>>()
        };
        OptState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps_floor: 1e-8,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }
}

/// One bias-corrected adaptive-moment update. Mutates the state and params.
pub fn opt_step(state: &mut OptState, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
    if grads.layers.len() != params.layers.len() {
        return Err(GwError::shape(
            format!("{} layers", params.layers.len()),
            format!("{}", grads.layers.len()),
            "opt_step",
        ));
    }
    for (idx, g) in grads.layers.iter().enumerate() {
        if g.weight.iter().any(|v| !v.is_finite()) || g.bias.iter().any(|v| !v.is_finite()) {
            return Err(GwError::numerical(format!(
                "non-finite gradient in layer {idx}"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let scalars = AdamScalars {
        lr: state.learning_rate,
        beta1: state.beta1,
        beta2: state.beta2,
        floor: state.eps_floor,
        bc1: 1.0 - state.beta1.powi(t),
        bc2: 1.0 - state.beta2.powi(t),
    };
    for (((p, g), m), v) in params
        .layers
        .iter_mut()
        .zip(grads.layers.iter())
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        update_tensor(&mut p.weight, &g.weight, &mut m.weight, &mut v.weight, scalars);
        update_vector(&mut p.bias, &g.bias, &mut m.bias, &mut v.bias, scalars);
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct AdamScalars {
    lr: f64,
    beta1: f64,
    beta2: f64,
    floor: f64,
    bc1: f64,
    bc2: f64,
}

fn update_tensor(
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    s: AdamScalars,
) {
    ndarray::Zip::from(p)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = s.beta1 * *m + (1.0 - s.beta1) * g;
            *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
            *p -= s.lr * (*m / s.bc1) / ((*v / s.bc2).sqrt() + s.floor);
        });
}

fn update_vector(
    p: &mut Array1<f64>,
    g: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    s: AdamScalars,
) {
    ndarray::Zip::from(p)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = s.beta1 * *m + (1.0 - s.beta1) * g;
            *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
            *p -= s.lr * (*m / s.bc1) / ((*v / s.bc2).sqrt() + s.floor);
        });
}

/// Checkpoint document: spec plus parameters, optimizer state optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub params: MlpParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opt_state: Option<OptState>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.params.layers.len() + 1 != ckpt.params.spec.layer_widths.len() {
            return Err(GwError::invalid("checkpoint layers do not match spec"));
        }
        for (layer, pair) in ckpt
            .params
            .layers
            .iter()
            .zip(ckpt.params.spec.layer_widths.windows(2))
        {
            if layer.weight.dim() != (pair[1], pair[0]) || layer.bias.len() != pair[1] {
                return Err(GwError::invalid("checkpoint layer shapes do not match spec"));
            }
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(widths: &[usize], act: Activation, seed: u64) -> MlpSpec {
        MlpSpec::new(widths.to_vec(), act, seed).unwrap()
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let s = spec(&[4, 8, 2], Activation::Relu, 123);
        let a = init_params(&s);
        let b = init_params(&s);
        for (la, lb) in a.layers.iter().zip(b.layers.iter()) {
            assert_eq!(la.weight, lb.weight);
            assert_eq!(la.bias, lb.bias);
        }
    }

    #[test]
    fn init_shapes_follow_spec() {
        let p = init_params(&spec(&[4, 8, 2], Activation::Relu, 0));
        assert_eq!(p.layers[0].weight.dim(), (8, 4));
        assert_eq!(p.layers[0].bias.len(), 8);
        assert_eq!(p.layers[1].weight.dim(), (2, 8));
        assert_eq!(p.layers[1].bias.len(), 2);
    }

    #[test]
    fn relu_init_std_close_to_he() {
        // Monte-Carlo estimate over many seeds of a 64x64 relu layer.
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for seed in 0..3 {
            let p = init_params(&spec(&[64, 64], Activation::Relu, seed));
            sum_sq += p.layers[0].weight.iter().map(|v| v * v).sum::<f64>();
            count += p.layers[0].weight.len();
        }
        let std = (sum_sq / count as f64).sqrt();
        let want = (2.0 / 64.0_f64).sqrt();
        assert!(
            (std - want).abs() / want <= 0.10,
            "std={std}, expected ~{want}"
        );
    }

    #[test]
    fn zero_params_map_to_zero() {
        let s = spec(&[3, 4, 2], Activation::Relu, 0);
        let mut p = init_params(&s);
        for l in &mut p.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        let x = Array2::from_elem((5, 3), 1.3);
        let (y, _) = forward(&p, &x).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer() {
        let s = spec(&[3, 3], Activation::Relu, 0);
        let mut p = init_params(&s);
        p.layers[0].weight = Array2::eye(3);
        p.layers[0].bias.fill(0.0);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 - 5.0);
        let (y, _) = forward(&p, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let p = init_params(&spec(&[3, 2], Activation::Relu, 0));
        assert!(forward(&p, &Array2::zeros((2, 4))).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let p = init_params(&spec(&[3, 5, 2], Activation::Tanh, 1));
        let x = Array2::from_elem((4, 3), 0.7);
        let (_, tape) = forward(&p, &x).unwrap();
        let (grads, gx) = backward(&p, &tape, &Array2::zeros((4, 2))).unwrap();
        assert!(grads.norm() == 0.0);
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_sum_loss_gradient_is_input_column_sum() {
        // loss = sum(outputs) for a single affine layer: dL/dW[o][i] = sum_n x[n][i].
        let s = spec(&[3, 2], Activation::Relu, 0);
        let p = init_params(&s);
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) as f64 * 0.1);
        let (_, tape) = forward(&p, &x).unwrap();
        let (grads, _) = backward(&p, &tape, &Array2::ones((5, 2))).unwrap();
        let col_sums = x.sum_axis(Axis(0));
        for o in 0..2 {
            for i in 0..3 {
                assert!((grads.layers[0].weight[[o, i]] - col_sums[i]).abs() <= 1e-12);
            }
        }
        for o in 0..2 {
            assert!((grads.layers[0].bias[o] - 5.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for act in [Activation::Tanh, Activation::Relu] {
            let s = spec(&[3, 6, 4, 2], act, 5);
            let p = init_params(&s);
            let x = Array2::from_shape_fn((8, 3), |_| rng.random_range(-1.0..1.0));
            // Scalar loss: weighted sum of outputs (generic linear functional).
            let w = Array2::from_shape_fn((8, 2), |_| rng.random_range(-1.0..1.0));
            let loss = |p: &MlpParams| -> f64 {
                let (y, _) = forward(p, &x).unwrap();
                y.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
            };
            let (_, tape) = forward(&p, &x).unwrap();
            let (grads, _) = backward(&p, &tape, &w).unwrap();
            let h = 1e-5;
            for (li, layer) in p.layers.iter().enumerate() {
                for idx in [(0usize, 0usize), (1, 2).min((1, layer.weight.ncols() - 1))] {
                    let mut pp = p.clone();
                    let mut pm = p.clone();
                    pp.layers[li].weight[idx] += h;
                    pm.layers[li].weight[idx] -= h;
                    let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
                    let an = grads.layers[li].weight[idx];
                    let denom = fd.abs().max(an.abs()).max(1e-6);
                    assert!(
                        (fd - an).abs() / denom <= 1e-5,
                        "{act:?} layer {li} fd={fd} an={an}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let s = spec(&[2, 3], Activation::Relu, 3);
        let mut p = init_params(&s);
        let before = p.clone();
        let mut st = OptState::new(&p, 1e-3);
        let grads = MlpGrads::zeros_like(&p);
        opt_step(&mut st, &mut p, &grads).unwrap();
        assert_eq!(st.step, 1);
        for (a, b) in p.layers.iter().zip(before.layers.iter()) {
            assert_eq!(a.weight, b.weight);
        }
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        let s = spec(&[1, 1], Activation::Relu, 0);
        let mut p = init_params(&s);
        let w0 = p.layers[0].weight[[0, 0]];
        let mut st = OptState::new(&p, 1e-3);
        let mut grads = MlpGrads::zeros_like(&p);
        grads.layers[0].weight[[0, 0]] = 3.7;
        opt_step(&mut st, &mut p, &grads).unwrap();
        let delta = p.layers[0].weight[[0, 0]] - w0;
        assert!((delta + 1e-3).abs() <= 1e-6, "delta={delta}");
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // Minimize 0.5 * sum((W - T)^2) for a 2x2 weight.
        let s = spec(&[2, 2], Activation::Relu, 9);
        let mut p = init_params(&s);
        let target = Array2::from_shape_fn((2, 2), |(i, j)| (i as f64) - (j as f64) * 0.5);
        let mut st = OptState::new(&p, 0.05);
        for _ in 0..500 {
            let mut grads = MlpGrads::zeros_like(&p);
            grads.layers[0].weight = &p.layers[0].weight - &target;
            opt_step(&mut st, &mut p, &grads).unwrap();
        }
        let loss: f64 = (&p.layers[0].weight - &target).iter().map(|v| v * v).sum();
        assert!(loss <= 1e-6, "loss={loss}");
    }

    #[test]
    fn non_finite_gradients_rejected() {
        let s = spec(&[2, 2], Activation::Relu, 0);
        let mut p = init_params(&s);
        let mut st = OptState::new(&p, 1e-3);
        let mut grads = MlpGrads::zeros_like(&p);
        grads.layers[0].weight[[0, 0]] = f64::NAN;
        let err = opt_step(&mut st, &mut p, &grads).unwrap_err();
        assert!(err.to_string().contains("layer 0"));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let s = spec(&[3, 7, 2], Activation::Tanh, 21);
        let p = init_params(&s);
        let ck = Checkpoint {
            params: p.clone(),
            opt_state: Some(OptState::new(&p, 1e-3)),
        };
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        for (a, b) in p.layers.iter().zip(back.params.layers.iter()) {
            for (x, y) in a.weight.iter().zip(b.weight.iter()) {
                assert!((x - y).abs() <= 1e-15);
            }
        }
    }
}
