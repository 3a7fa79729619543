//! Trainable projection head and the exponential cosine similarity.
//!
//! The encoder is a small fully connected network (affine layers with tanh
//! between them) whose output is L2-normalized onto the unit sphere. All
//! arithmetic is f64 and gradients are exact analytic expressions, so the
//! whole chain can be verified against central finite differences.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng64;

/// Norm guard added to the pre-normalization length.
const NORM_EPS: f64 = 1e-12;
/// Pre-normalization lengths below this are reported as degenerate.
const DEGENERATE_NORM: f64 = 1e-9;

/// One affine layer, weights stored row-major as out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Projection head parameters: `sizes = [input, hidden.., output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub sizes: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl EncoderParams {
    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }
}

/// Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases.
/// Draw order is layer by layer, weights row-major, deterministic per seed.
pub fn init_params(seed: u64, sizes: &[usize]) -> Result<EncoderParams> {
    if sizes.len() < 2 {
        return Err(Error::numeric("encoder needs at least input and output sizes"));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::numeric("layer sizes must be positive"));
    }
    let mut rng = Rng64::derive(seed, 0);
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = (0..fan_in * fan_out)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        layers.push(Layer {
            in_dim: fan_in,
            out_dim: fan_out,
            weight,
            bias: vec![0.0; fan_out],
        });
    }
    Ok(EncoderParams {
        sizes: sizes.to_vec(),
        layers,
    })
}

fn affine(layer: &Layer, input: &[f64]) -> Vec<f64> {
    let mut out = layer.bias.clone();
    for (row, o) in out.iter_mut().enumerate() {
        let w = &layer.weight[row * layer.in_dim..(row + 1) * layer.in_dim];
        let mut acc = 0.0;
        for (wi, xi) in w.iter().zip(input) {
            acc += wi * xi;
        }
        *o += acc;
    }
    out
}

/// Activations recorded by [`forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer: `inputs[0]` is the feature vector, later entries
    /// are post-tanh activations.
    inputs: Vec<Vec<f64>>,
    norm: f64,
    pub embedding: Embedding,
}

pub fn forward_cached(params: &EncoderParams, feature: &[f64]) -> Result<ForwardCache> {
    if feature.len() != params.input_dim() {
        return Err(Error::numeric(format!(
            "feature length {} does not match encoder input {}",
            feature.len(),
            params.input_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut current = feature.to_vec();
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        inputs.push(current.clone());
        let mut out = affine(layer, &current);
        if i < last {
            for v in out.iter_mut() {
                *v = v.tanh();
            }
        }
        current = out;
    }
    let pre_norm = current;
    let norm = pre_norm.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < DEGENERATE_NORM {
        return Err(Error::numeric(format!(
            "degenerate pre-normalization norm {norm:e}"
        )));
    }
    let z: Vec<f64> = pre_norm.iter().map(|v| v / (norm + NORM_EPS)).collect();
    Ok(ForwardCache {
        inputs,
        norm,
        embedding: Embedding(z),
    })
}

/// Map a feature vector to its unit-norm embedding.
pub fn forward(params: &EncoderParams, feature: &[f64]) -> Result<Embedding> {
    forward_cached(params, feature).map(|c| c.embedding)
}

/// Exponential cosine similarity `exp(z_i . z_j)`; in [1/e, e] for unit inputs.
pub fn similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    for z in [a, b] {
        let norm = z.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(Error::numeric(format!(
                "similarity input is not unit-norm (norm {norm})"
            )));
        }
    }
    Ok(dot(&a.0, &b.0).exp())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Parameter-shaped gradient (or momentum) buffers.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
}

impl ParamGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| Layer {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                weight: vec![0.0; l.weight.len()],
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        ParamGrads { layers }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Exact gradients of `upstream . z` with respect to all parameters.
///
/// The normalization Jacobian is `(I - z z^T) / ||pre_norm||`, tanh layers
/// contribute `1 - tanh^2`, affine layers the usual outer products.
pub fn backward(
    params: &EncoderParams,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<ParamGrads> {
    if upstream.len() != params.output_dim() {
        return Err(Error::numeric("upstream gradient has wrong dimension"));
    }
    if cache.norm < DEGENERATE_NORM {
        return Err(Error::numeric("degenerate pre-normalization norm"));
    }
    let z = &cache.embedding.0;
    let radial = dot(z, upstream);
    let mut grad_out: Vec<f64> = upstream
        .iter()
        .zip(z)
        .map(|(g, zi)| (g - radial * zi) / cache.norm)
        .collect();

    let mut grads = ParamGrads::zeros_like(params);
    let last = params.layers.len() - 1;
    for i in (0..params.layers.len()).rev() {
        let layer = &params.layers[i];
        if i < last {
            // grad_out is w.r.t. tanh output; inputs[i + 1] caches tanh values.
            let tanh_out = &cache.inputs[i + 1];
            for (g, t) in grad_out.iter_mut().zip(tanh_out) {
                *g *= 1.0 - t * t;
            }
        }
        let input = &cache.inputs[i];
        let g = &mut grads.layers[i];
        for (row, gy) in grad_out.iter().enumerate() {
            let w_row = &mut g.weight[row * layer.in_dim..(row + 1) * layer.in_dim];
            for (wg, xi) in w_row.iter_mut().zip(input) {
                *wg += gy * xi;
            }
            g.bias[row] += gy;
        }
        if i > 0 {
            let mut next = vec![0.0; layer.in_dim];
            for (row, gy) in grad_out.iter().enumerate() {
                let w_row = &layer.weight[row * layer.in_dim..(row + 1) * layer.in_dim];
                for (nx, wi) in next.iter_mut().zip(w_row) {
                    *nx += gy * wi;
                }
            }
            grad_out = next;
        }
    }
    Ok(grads)
}

const MODEL_MAGIC: &str = "terragrain-encoder v1";

/// Serialize parameters as text with 17 significant digits per value, which
/// round-trips f64 exactly.
pub fn save_model(params: &EncoderParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    writeln!(out, "{MODEL_MAGIC}").unwrap();
    let sizes: Vec<String> = params.sizes.iter().map(|s| s.to_string()).collect();
    writeln!(out, "{}", sizes.join(" ")).unwrap();
    for (i, layer) in params.layers.iter().enumerate() {
        write_tensor(
            &mut out,
            &format!("layer{i}.weight"),
            &[layer.out_dim, layer.in_dim],
            &layer.weight,
        );
        write_tensor(&mut out, &format!("layer{i}.bias"), &[layer.out_dim], &layer.bias);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_tensor(out: &mut String, name: &str, shape: &[usize], values: &[f64]) {
    out.push_str(name);
    for s in shape {
        write!(out, " {s}").unwrap();
    }
    for v in values {
        write!(out, " {v:.16e}").unwrap();
    }
    out.push('\n');
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EncoderParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, line)) if line.trim() == MODEL_MAGIC => {}
        _ => return Err(Error::parse(path, 1, format!("expected {MODEL_MAGIC:?}"))),
    }
    let sizes: Vec<usize> = match lines.next() {
        Some((_, line)) => line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::parse(path, 2, format!("invalid layer size {t:?}")))
            })
            .collect::<Result<_>>()?,
        None => return Err(Error::parse(path, 2, "missing layer sizes".to_string())),
    };
    if sizes.len() < 2 {
        return Err(Error::parse(path, 2, "need at least two layer sizes".to_string()));
    }

    let mut layers = Vec::with_capacity(sizes.len() - 1);
    let mut pending: Option<Layer> = None;
    for (lineno, raw) in lines {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let name = toks
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "empty tensor line".to_string()))?;
        let idx = layers.len();
        if name == format!("layer{idx}.weight") {
            let out_dim = parse_usize(&mut toks, path, lineno)?;
            let in_dim = parse_usize(&mut toks, path, lineno)?;
            let weight = parse_values(&mut toks, out_dim * in_dim, path, lineno)?;
            pending = Some(Layer {
                in_dim,
                out_dim,
                weight,
                bias: Vec::new(),
            });
        } else if name == format!("layer{idx}.bias") {
            let mut layer = pending.take().ok_or_else(|| {
                Error::parse(path, lineno, "bias before matching weight".to_string())
            })?;
            let out_dim = parse_usize(&mut toks, path, lineno)?;
            if out_dim != layer.out_dim {
                return Err(Error::parse(path, lineno, "bias shape mismatch".to_string()));
            }
            layer.bias = parse_values(&mut toks, out_dim, path, lineno)?;
            layers.push(layer);
        } else {
            return Err(Error::parse(
                path,
                lineno,
                format!("unexpected tensor {name:?}"),
            ));
        }
    }
    if layers.len() != sizes.len() - 1 {
        return Err(Error::data(format!(
            "model file has {} layers, sizes imply {}",
            layers.len(),
            sizes.len() - 1
        )));
    }
    for (layer, w) in layers.iter().zip(sizes.windows(2)) {
        if layer.in_dim != w[0] || layer.out_dim != w[1] {
            return Err(Error::data("layer shape does not match size header".to_string()));
        }
    }
    Ok(EncoderParams { sizes, layers })
}

fn parse_usize<'a>(
    toks: &mut impl Iterator<Item = &'a str>,
    path: &Path,
    lineno: usize,
) -> Result<usize> {
    toks.next()
        .and_then(|t| t.parse::<usize>().ok())
        .ok_or_else(|| Error::parse(path, lineno, "expected shape token".to_string()))
}

fn parse_values<'a>(
    toks: &mut impl Iterator<Item = &'a str>,
    count: usize,
    path: &Path,
    lineno: usize,
) -> Result<Vec<f64>> {
    let values: Vec<f64> = toks
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(path, lineno, format!("invalid value {t:?}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != count {
        return Err(Error::parse(
            path,
            lineno,
            format!("expected {count} values, found {}", values.len()),
        ));
    }
    Ok(values)
}
