//! The noise-prediction network ε_θ(x_t, t): a small MLP over flat
//! parameters, conditioned on a sinusoidal timestep embedding that is
//! concatenated to the first layer's input.
//!
//! Parameter layout is canonical and dense: for each layer in order, the
//! row-major weight matrix followed by its bias vector. The final layer is
//! affine with no nonlinearity (predicted noise is unbounded) and its
//! output width always equals `input_dim`, so ε̂ has the shape of x.

use crate::diffgraph::{self, NodeId, ParamVector, Tape};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Default geometric frequency range for `embed_time`, matching the
/// transformer-style convention.
pub const DEFAULT_MAX_PERIOD: f64 = 10000.0;

/// Elementwise nonlinearity applied after every layer except the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Activation::Silu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

/// Shape of the denoiser MLP. The parameter count `d` is a pure function
/// of this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserArch {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
}

/// Sinusoidal embedding parameters; frequencies are spaced geometrically
/// from 1 down to 1/max_period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub embed_dim: usize,
    pub max_period: f64,
}

impl DenoiserArch {
    /// The default desk-scale architecture for 2-D mixture data.
    pub fn mixture2d_default() -> Self {
        DenoiserArch {
            input_dim: 2,
            hidden_dims: vec![128, 128],
            embed_dim: 32,
            activation: Activation::Silu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "embed_dim must be even and positive, got {}",
                self.embed_dim
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument("hidden layer of width 0".into()));
        }
        Ok(())
    }

    /// (in, out) of each affine layer, first to last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim + self.embed_dim;
        for &h in &self.hidden_dims {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.input_dim));
        dims
    }

    /// (w_off, b_off) of each layer inside the flat parameter vector.
    pub fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut offs = Vec::new();
        let mut cur = 0;
        for (fan_in, fan_out) in self.layer_dims() {
            offs.push((cur, cur + fan_in * fan_out));
            cur += fan_in * fan_out + fan_out;
        }
        offs
    }

    /// Total parameter count d.
    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Sinusoidal features of a timestep: interleaved [sin(t·f_k), cos(t·f_k)]
/// with f_k = max_period^(−k/(embed_dim/2)), k = 0..embed_dim/2.
pub fn embed_time(t: usize, embed_dim: usize, max_period: f64) -> Result<Vec<f64>> {
    if t < 1 {
        return Err(Error::TimestepOutOfRange { t, max: usize::MAX });
    }
    if embed_dim == 0 || !embed_dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "embed_dim must be even and positive, got {embed_dim}"
        )));
    }
    if max_period <= 0.0 || max_period.is_nan() {
        return Err(Error::InvalidArgument("max_period must be positive".into()));
    }
    let half = embed_dim / 2;
    let mut out = Vec::with_capacity(embed_dim);
    for k in 0..half {
        let freq = max_period.powf(-(k as f64) / half as f64);
        let phase = t as f64 * freq;
        out.push(phase.sin());
        out.push(phase.cos());
    }
    Ok(out)
}

/// Build ε_θ(x_t, t) on an existing tape so callers can differentiate
/// losses through it. Returns the output node of length `input_dim`.
pub fn predict_noise_node(
    tape: &mut Tape,
    arch: &DenoiserArch,
    x_t: &[f64],
    t: usize,
) -> Result<NodeId> {
    arch.validate()?;
    if x_t.len() != arch.input_dim {
        return Err(Error::DimMismatch {
            expected: arch.input_dim,
            got: x_t.len(),
        });
    }
    let emb = embed_time(t, arch.embed_dim, DEFAULT_MAX_PERIOD)?;
    let x = tape.input(x_t)?;
    let e = tape.input(&emb)?;
    let mut h = tape.concat(x, e);
    let dims = arch.layer_dims();
    let offs = arch.layer_offsets();
    let last = dims.len() - 1;
    for (i, (&(fan_in, fan_out), &(w_off, b_off))) in dims.iter().zip(&offs).enumerate() {
        h = tape.linear(w_off, b_off, fan_in, fan_out, h)?;
        if i < last {
            h = match arch.activation {
                Activation::Silu => tape.silu(h),
                Activation::Tanh => tape.tanh(h),
            };
        }
    }
    Ok(h)
}

/// Evaluate ε_θ(x_t, t) to a plain vector.
pub fn predict_noise(
    arch: &DenoiserArch,
    params: &ParamVector,
    x_t: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    if params.len() != arch.param_count() {
        return Err(Error::DimMismatch {
            expected: arch.param_count(),
            got: params.len(),
        });
    }
    diffgraph::value_of(params, |tape| predict_noise_node(tape, arch, x_t, t))
}

/// Reproducible initialization: each layer's weights drawn from
/// U(−1/√fan_in, 1/√fan_in), biases zero.
pub fn init_params(arch: &DenoiserArch, seed: u64) -> Result<ParamVector> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(arch.param_count());
    for (fan_in, fan_out) in arch.layer_dims() {
        let a = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            params.push(rng.gen_range(-a..a));
        }
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Ok(ParamVector(params))
}
