//! Forward pass with an activation tape and the matching reverse pass.

use ndarray::{Array1, Array2, ArrayView2, Axis, Ix1, Ix2};

use super::{Activation, HiddenNorm, NetSpec, ParamSet};
use crate::error::{Error, Result};
use crate::objectives::EmbeddingBatch;
use crate::video::ClipBatch;

const LAYER_NORM_EPS: f64 = 1e-5;

/// How far through the network a forward pass runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Encoder output (the representation kept after pretraining).
    Features,
    /// Encoder + projector.
    Projection,
    /// Encoder + projector + predictor.
    Prediction,
}

#[derive(Debug, Clone)]
enum Op {
    Linear { weight: usize, bias: usize, input: Array2<f64> },
    Act { kind: Activation, output: Array2<f64> },
    LayerNorm { normalized: Array2<f64>, inv_std: Array1<f64> },
    MeanPool { group: usize },
}

/// Everything the reverse pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    version: u64,
    param_count: usize,
    out_dim: (usize, usize),
}

impl Tape {
    pub fn output_shape(&self) -> (usize, usize) {
        self.out_dim
    }
}

fn view2<'a>(params: &'a ParamSet, index: usize) -> ArrayView2<'a, f64> {
    params.value(index).view().into_dimensionality::<Ix2>().expect("rank-2 weight")
}

struct Recorder<'a> {
    params: &'a ParamSet,
    ops: Vec<Op>,
}

impl Recorder<'_> {
    fn linear(&mut self, prefix: &str, x: Array2<f64>) -> Result<Array2<f64>> {
        let wi = self.params.index_of(&format!("{prefix}.weight"));
        let bi = self.params.index_of(&format!("{prefix}.bias"));
        let (Some(wi), Some(bi)) = (wi, bi) else {
            return Err(Error::Shape(format!("missing parameters for layer `{prefix}`")));
        };
        let w = view2(self.params, wi);
        if w.ncols() != x.ncols() {
            return Err(Error::Shape(format!("layer `{prefix}` expects {} inputs, got {}", w.ncols(), x.ncols())));
        }
        let b = self.params.value(bi).view().into_dimensionality::<Ix1>().expect("rank-1 bias");
        let y = x.dot(&w.t()) + &b;
        self.ops.push(Op::Linear { weight: wi, bias: bi, input: x });
        Ok(y)
    }

    fn act(&mut self, kind: Activation, mut x: Array2<f64>) -> Array2<f64> {
        if kind != Activation::Identity {
            x.mapv_inplace(|v| kind.apply(v));
            self.ops.push(Op::Act { kind, output: x.clone() });
        }
        x
    }

    fn layer_norm(&mut self, mut x: Array2<f64>) -> Array2<f64> {
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, inv) in x.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.mean().unwrap_or(0.0);
            row.mapv_inplace(|v| v - mean);
            let var = row.dot(&row) / row.len() as f64;
            *inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            let s = *inv;
            row.mapv_inplace(|v| v * s);
        }
        self.ops.push(Op::LayerNorm { normalized: x.clone(), inv_std });
        x
    }

    fn mlp(&mut self, prefix: &str, hidden: usize, x: Array2<f64>, act: Activation, norm: HiddenNorm) -> Result<Array2<f64>> {
        let mut h = x;
        for i in 0..hidden {
            h = self.linear(&format!("{prefix}.{i}"), h)?;
            if norm == HiddenNorm::Layer {
                h = self.layer_norm(h);
            }
            h = self.act(act, h);
        }
        self.linear(&format!("{prefix}.out"), h)
    }
}

/// Runs the network on a clip batch and records a tape.
pub fn forward(params: &ParamSet, spec: &NetSpec, x: &ClipBatch, stage: Stage) -> Result<(EmbeddingBatch, Tape)> {
    let (c, t, h, w) = x.clip_shape();
    if (c, h, w) != (spec.channels, spec.height, spec.width) {
        return Err(Error::Shape(format!(
            "clips are {c}x{h}x{w}, network expects {}x{}x{}",
            spec.channels, spec.height, spec.width
        )));
    }
    if stage == Stage::Prediction && !spec.has_predictor() {
        return Err(Error::Invalid("network has no predictor".into()));
    }
    let mut rec = Recorder { params, ops: Vec::new() };

    // Per-frame MLP, then temporal mean-pool, then the feature layer.
    let mut hdn = x.frame_matrix();
    for i in 0..spec.encoder_hidden.len() {
        hdn = rec.linear(&format!("encoder.{i}"), hdn)?;
        hdn = rec.act(spec.activation, hdn);
    }
    let pooled = hdn
        .into_shape_with_order((x.len(), t, spec.encoder_hidden.last().copied().unwrap_or(spec.input_dim())))
        .map_err(|e| Error::Shape(e.to_string()))?
        .mean_axis(Axis(1))
        .expect("t >= 1");
    rec.ops.push(Op::MeanPool { group: t });
    let mut z = rec.linear("encoder.out", pooled)?;

    if stage != Stage::Features {
        z = rec.mlp("projector", spec.projector_hidden.len(), z, spec.activation, spec.norm)?;
    }
    if stage == Stage::Prediction {
        z = rec.mlp("predictor", spec.predictor_hidden.len(), z, spec.activation, spec.norm)?;
    }
    let out_dim = z.dim();
    let tape = Tape { ops: rec.ops, version: params.version(), param_count: params.len(), out_dim };
    Ok((EmbeddingBatch::new(z)?, tape))
}

/// Reverse pass: gradient of `sum(upstream * output)` w.r.t. every
/// parameter. Parameters the tape never touched get zero gradient.
pub fn backward(params: &ParamSet, tape: &Tape, upstream: &Array2<f64>) -> Result<ParamSet> {
    if tape.version != params.version() || tape.param_count != params.len() {
        return Err(Error::StaleTape { tape: tape.version, params: params.version() });
    }
    if upstream.dim() != tape.out_dim {
        return Err(Error::Shape(format!("upstream {:?} vs output {:?}", upstream.dim(), tape.out_dim)));
    }
    let mut grads = params.zeros_like();
    let mut g = upstream.clone();
    for op in tape.ops.iter().rev() {
        match op {
            Op::Linear { weight, bias, input } => {
                let gw = g.t().dot(input);
                let gb = g.sum_axis(Axis(0));
                *grads.value_mut(*weight) += &gw.into_dyn();
                *grads.value_mut(*bias) += &gb.into_dyn();
                g = g.dot(&view2(params, *weight));
            }
            Op::Act { kind, output } => {
                let k = *kind;
                g.zip_mut_with(output, |gi, &y| *gi *= k.derivative_from_output(y));
            }
            Op::LayerNorm { normalized, inv_std } => {
                let n = normalized.ncols() as f64;
                for ((mut gr, xr), &inv) in g.rows_mut().into_iter().zip(normalized.rows()).zip(inv_std) {
                    let mean_g = gr.sum() / n;
                    let mean_gx = gr.dot(&xr) / n;
                    gr.zip_mut_with(&xr, |gi, &xi| *gi = inv * (*gi - mean_g - xi * mean_gx));
                }
            }
            Op::MeanPool { group } => {
                let scale = 1.0 / *group as f64;
                let (b, d) = g.dim();
                let mut expanded = Array2::zeros((b * group, d));
                for (i, row) in g.rows().into_iter().enumerate() {
                    for f in 0..*group {
                        expanded.row_mut(i * group + f).assign(&(&row * scale));
                    }
                }
                g = expanded;
            }
        }
    }
    Ok(grads)
}
