//! Forward pass of the attention-based sparse-to-dense module: multi-kernel
//! min/max pooling over valid depths, three 1x1 fusion convolutions, channel
//! and spatial attention gates, and a final 3x3 convolution producing
//! quasi-dense depth.
//!
//! [`as2d_forward`] is the production path (separable sliding-window pooling,
//! cache-friendly convolution loops); [`as2d_forward_oracle`] evaluates the
//! identical contract by direct window enumeration with no reuse, and exists
//! to cross-check the optimized path on arbitrary instances.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{DepthMap, GridError, Mask};

/// Spatial attention convolution is fixed at 7x7 over 2 channels (mean, max).
pub const SPATIAL_KERNEL: usize = 7;
/// Output convolution is fixed at 3x3.
pub const OUTPUT_KERNEL: usize = 3;

#[derive(Debug, Error)]
pub enum As2dError {
    #[error("pooling kernels must be odd and >= 1, got {0}")]
    EvenKernel(usize),
    #[error("at least one pooling kernel is required")]
    NoKernels,
    #[error("tensor {name} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("feature map has {got} channels, weights expect {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("reduction ratio must be >= 1, got {0}")]
    BadReduction(usize),
    #[error("weight file field {name} is missing")]
    MissingTensor { name: String },
    #[error("weight file tensor {name}: shape {shape:?} does not match {len} data values")]
    TensorLength {
        name: String,
        shape: Vec<usize>,
        len: usize,
    },
    #[error("non-finite value in tensor {0}")]
    NonFinite(String),
    #[error("failed to read weight file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse weight file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Dense C x H x W feature tensor, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, As2dError> {
        if data.len() != channels * height * width {
            return Err(As2dError::TensorLength {
                name: "feature".into(),
                shape: vec![channels, height, width],
                len: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(As2dError::NonFinite("feature".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    #[inline]
    fn set(&mut self, c: usize, row: usize, col: usize, v: f64) {
        self.data[(c * self.height + row) * self.width + col] = v;
    }

    fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Pooling kernel sizes and the channel-attention reduction ratio.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct As2dConfig {
    pub min_kernels: Vec<usize>,
    pub max_kernels: Vec<usize>,
    pub reduction: usize,
}

impl Default for As2dConfig {
    fn default() -> Self {
        Self {
            min_kernels: vec![3, 5, 7, 9, 11],
            max_kernels: vec![13, 15],
            reduction: 4,
        }
    }
}

impl As2dConfig {
    pub fn pooled_channels(&self) -> usize {
        self.min_kernels.len() + self.max_kernels.len()
    }

    pub fn hidden_channels(&self) -> usize {
        (self.pooled_channels() / self.reduction).max(1)
    }

    fn validate(&self) -> Result<(), As2dError> {
        if self.min_kernels.is_empty() && self.max_kernels.is_empty() {
            return Err(As2dError::NoKernels);
        }
        for &k in self.min_kernels.iter().chain(self.max_kernels.iter()) {
            if k % 2 == 0 || k == 0 {
                return Err(As2dError::EvenKernel(k));
            }
        }
        if self.reduction == 0 {
            return Err(As2dError::BadReduction(self.reduction));
        }
        Ok(())
    }
}

/// A 1x1 convolution: weight[out][in] + bias[out].
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1 {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// A dense layer: weight[out][in] + bias[out].
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (o, row) in self.weight.iter().enumerate() {
            let mut acc = self.bias[o];
            for (w, x) in row.iter().zip(input.iter()) {
                acc += w * x;
            }
            out[o] = acc;
        }
    }
}

/// Learned parameters of the module; shapes follow [`As2dConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct AS2DWeights {
    /// Three 1x1 fusion convolutions, each pooled-channels -> pooled-channels.
    pub fusion_convs: [Conv1x1; 3],
    /// Shared attention MLP: C -> C/r -> C.
    pub channel_mlp: (Dense, Dense),
    /// 7x7 convolution over (mean, max) channel descriptors: [2][7][7].
    pub spatial_conv_weight: Vec<Vec<Vec<f64>>>,
    pub spatial_conv_bias: f64,
    /// Final 3x3 convolution, pooled-channels -> 1: [C][3][3].
    pub output_conv_weight: Vec<Vec<Vec<f64>>>,
    pub output_conv_bias: f64,
}

fn shape_of_matrix(m: &[Vec<f64>]) -> Vec<usize> {
    vec![m.len(), m.first().map_or(0, |r| r.len())]
}

impl AS2DWeights {
    /// All-zero weights of the shapes demanded by `cfg`.
    pub fn zeros(cfg: &As2dConfig) -> Self {
        let c = cfg.pooled_channels();
        let hidden = cfg.hidden_channels();
        let conv = || Conv1x1 {
            weight: vec![vec![0.0; c]; c],
            bias: vec![0.0; c],
        };
        Self {
            fusion_convs: [conv(), conv(), conv()],
            channel_mlp: (
                Dense {
                    weight: vec![vec![0.0; c]; hidden],
                    bias: vec![0.0; hidden],
                },
                Dense {
                    weight: vec![vec![0.0; hidden]; c],
                    bias: vec![0.0; c],
                },
            ),
            spatial_conv_weight: vec![vec![vec![0.0; SPATIAL_KERNEL]; SPATIAL_KERNEL]; 2],
            spatial_conv_bias: 0.0,
            output_conv_weight: vec![vec![vec![0.0; OUTPUT_KERNEL]; OUTPUT_KERNEL]; c],
            output_conv_bias: 0.0,
        }
    }

    /// Deterministic pseudo-random weights for testing without training.
    pub fn seeded(cfg: &As2dConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros(cfg);
        let fill = |v: &mut f64, scale: f64, rng: &mut ChaCha8Rng| {
            *v = (rng.random::<f64>() - 0.5) * scale;
        };
        for conv in &mut w.fusion_convs {
            let fan_in = conv.weight[0].len() as f64;
            let scale = (2.0 / fan_in).sqrt();
            for row in &mut conv.weight {
                for v in row.iter_mut() {
                    fill(v, scale, &mut rng);
                }
            }
            for v in &mut conv.bias {
                fill(v, 0.1, &mut rng);
            }
        }
        for dense in [&mut w.channel_mlp.0, &mut w.channel_mlp.1] {
            let fan_in = dense.weight[0].len() as f64;
            let scale = (2.0 / fan_in).sqrt();
            for row in &mut dense.weight {
                for v in row.iter_mut() {
                    fill(v, scale, &mut rng);
                }
            }
            for v in &mut dense.bias {
                fill(v, 0.1, &mut rng);
            }
        }
        for plane in &mut w.spatial_conv_weight {
            for row in plane.iter_mut() {
                for v in row.iter_mut() {
                    fill(v, 0.2, &mut rng);
                }
            }
        }
        fill(&mut w.spatial_conv_bias, 0.1, &mut rng);
        for plane in &mut w.output_conv_weight {
            for row in plane.iter_mut() {
                for v in row.iter_mut() {
                    fill(v, 0.3, &mut rng);
                }
            }
        }
        fill(&mut w.output_conv_bias, 0.1, &mut rng);
        w
    }

    /// Weights that copy the first pooled channel straight to the output.
    ///
    /// Fusion convolutions are the identity, attention weights are zero so
    /// both gates are exactly sigmoid(0) = 1/2, and the output kernel's
    /// center tap is 4 on channel 0, cancelling the two gates exactly in
    /// binary floating point. With a kernel-1 min pool as the first channel
    /// the module reproduces the sparse input on its valid pixels.
    pub fn pass_through(cfg: &As2dConfig) -> Self {
        let c = cfg.pooled_channels();
        let mut w = Self::zeros(cfg);
        for conv in &mut w.fusion_convs {
            for (i, row) in conv.weight.iter_mut().enumerate() {
                row[i] = 1.0;
            }
        }
        w.output_conv_weight[0][OUTPUT_KERNEL / 2][OUTPUT_KERNEL / 2] = 4.0;
        let _ = c;
        w
    }

    /// Checks every tensor against the shapes implied by `cfg`.
    pub fn validate(&self, cfg: &As2dConfig) -> Result<(), As2dError> {
        cfg.validate()?;
        let c = cfg.pooled_channels();
        let hidden = cfg.hidden_channels();
        for (i, conv) in self.fusion_convs.iter().enumerate() {
            let got = shape_of_matrix(&conv.weight);
            if got != vec![c, c] || conv.weight.iter().any(|r| r.len() != c) {
                return Err(As2dError::ShapeMismatch {
                    name: format!("fusion{i}.weight"),
                    expected: vec![c, c],
                    got,
                });
            }
            if conv.bias.len() != c {
                return Err(As2dError::ShapeMismatch {
                    name: format!("fusion{i}.bias"),
                    expected: vec![c],
                    got: vec![conv.bias.len()],
                });
            }
        }
        let (m0, m1) = (&self.channel_mlp.0, &self.channel_mlp.1);
        if shape_of_matrix(&m0.weight) != vec![hidden, c] || m0.bias.len() != hidden {
            return Err(As2dError::ShapeMismatch {
                name: "mlp0".into(),
                expected: vec![hidden, c],
                got: shape_of_matrix(&m0.weight),
            });
        }
        if shape_of_matrix(&m1.weight) != vec![c, hidden] || m1.bias.len() != c {
            return Err(As2dError::ShapeMismatch {
                name: "mlp1".into(),
                expected: vec![c, hidden],
                got: shape_of_matrix(&m1.weight),
            });
        }
        if self.spatial_conv_weight.len() != 2
            || self
                .spatial_conv_weight
                .iter()
                .any(|p| p.len() != SPATIAL_KERNEL || p.iter().any(|r| r.len() != SPATIAL_KERNEL))
        {
            return Err(As2dError::ShapeMismatch {
                name: "spatial.weight".into(),
                expected: vec![2, SPATIAL_KERNEL, SPATIAL_KERNEL],
                got: vec![self.spatial_conv_weight.len()],
            });
        }
        if self.output_conv_weight.len() != c
            || self
                .output_conv_weight
                .iter()
                .any(|p| p.len() != OUTPUT_KERNEL || p.iter().any(|r| r.len() != OUTPUT_KERNEL))
        {
            return Err(As2dError::ShapeMismatch {
                name: "output.weight".into(),
                expected: vec![c, OUTPUT_KERNEL, OUTPUT_KERNEL],
                got: vec![self.output_conv_weight.len()],
            });
        }
        Ok(())
    }

    /// Serializes config and tensors as a JSON tensor manifest.
    pub fn save(&self, cfg: &As2dConfig, path: &Path) -> Result<(), As2dError> {
        self.validate(cfg)?;
        fn put_matrix(tensors: &mut BTreeMap<String, TensorRecord>, name: &str, m: &[Vec<f64>]) {
            tensors.insert(
                name.to_string(),
                TensorRecord {
                    shape: shape_of_matrix(m),
                    data: m.iter().flatten().copied().collect(),
                },
            );
        }
        let mut tensors = BTreeMap::new();
        for (i, conv) in self.fusion_convs.iter().enumerate() {
            put_matrix(&mut tensors, &format!("fusion{i}.weight"), &conv.weight);
            tensors.insert(
                format!("fusion{i}.bias"),
                TensorRecord {
                    shape: vec![conv.bias.len()],
                    data: conv.bias.clone(),
                },
            );
        }
        put_matrix(&mut tensors, "mlp0.weight", &self.channel_mlp.0.weight);
        put_matrix(&mut tensors, "mlp1.weight", &self.channel_mlp.1.weight);
        tensors.insert(
            "mlp0.bias".into(),
            TensorRecord {
                shape: vec![self.channel_mlp.0.bias.len()],
                data: self.channel_mlp.0.bias.clone(),
            },
        );
        tensors.insert(
            "mlp1.bias".into(),
            TensorRecord {
                shape: vec![self.channel_mlp.1.bias.len()],
                data: self.channel_mlp.1.bias.clone(),
            },
        );
        tensors.insert(
            "spatial.weight".into(),
            TensorRecord {
                shape: vec![2, SPATIAL_KERNEL, SPATIAL_KERNEL],
                data: self
                    .spatial_conv_weight
                    .iter()
                    .flatten()
                    .flatten()
                    .copied()
                    .collect(),
            },
        );
        tensors.insert(
            "spatial.bias".into(),
            TensorRecord {
                shape: vec![1],
                data: vec![self.spatial_conv_bias],
            },
        );
        tensors.insert(
            "output.weight".into(),
            TensorRecord {
                shape: vec![self.output_conv_weight.len(), OUTPUT_KERNEL, OUTPUT_KERNEL],
                data: self
                    .output_conv_weight
                    .iter()
                    .flatten()
                    .flatten()
                    .copied()
                    .collect(),
            },
        );
        tensors.insert(
            "output.bias".into(),
            TensorRecord {
                shape: vec![1],
                data: vec![self.output_conv_bias],
            },
        );
        let file = WeightsFile {
            min_kernels: cfg.min_kernels.clone(),
            max_kernels: cfg.max_kernels.clone(),
            reduction: cfg.reduction,
            tensors,
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    /// Loads a JSON tensor manifest, validating shapes against its config.
    pub fn load(path: &Path) -> Result<(As2dConfig, Self), As2dError> {
        let text = std::fs::read_to_string(path)?;
        let file: WeightsFile = serde_json::from_str(&text)?;
        let cfg = As2dConfig {
            min_kernels: file.min_kernels,
            max_kernels: file.max_kernels,
            reduction: file.reduction,
        };
        cfg.validate()?;
        let c = cfg.pooled_channels();
        let hidden = cfg.hidden_channels();

        let take = |name: &str, shape: Vec<usize>| -> Result<Vec<f64>, As2dError> {
            let rec = file
                .tensors
                .get(name)
                .ok_or_else(|| As2dError::MissingTensor { name: name.into() })?;
            if rec.shape != shape {
                return Err(As2dError::ShapeMismatch {
                    name: name.into(),
                    expected: shape,
                    got: rec.shape.clone(),
                });
            }
            let len: usize = rec.shape.iter().product();
            if rec.data.len() != len {
                return Err(As2dError::TensorLength {
                    name: name.into(),
                    shape: rec.shape.clone(),
                    len: rec.data.len(),
                });
            }
            if !rec.data.iter().all(|v| v.is_finite()) {
                return Err(As2dError::NonFinite(name.into()));
            }
            Ok(rec.data.clone())
        };
        let to_matrix = |data: Vec<f64>, rows: usize, cols: usize| -> Vec<Vec<f64>> {
            data.chunks(cols).take(rows).map(|c| c.to_vec()).collect()
        };
        let to_planes = |data: Vec<f64>, planes: usize, k: usize| -> Vec<Vec<Vec<f64>>> {
            data.chunks(k * k)
                .take(planes)
                .map(|p| p.chunks(k).map(|r| r.to_vec()).collect())
                .collect()
        };

        let mut fusion = Vec::with_capacity(3);
        for i in 0..3 {
            fusion.push(Conv1x1 {
                weight: to_matrix(take(&format!("fusion{i}.weight"), vec![c, c])?, c, c),
                bias: take(&format!("fusion{i}.bias"), vec![c])?,
            });
        }
        let weights = Self {
            fusion_convs: [fusion[0].clone(), fusion[1].clone(), fusion[2].clone()],
            channel_mlp: (
                Dense {
                    weight: to_matrix(take("mlp0.weight", vec![hidden, c])?, hidden, c),
                    bias: take("mlp0.bias", vec![hidden])?,
                },
                Dense {
                    weight: to_matrix(take("mlp1.weight", vec![c, hidden])?, c, hidden),
                    bias: take("mlp1.bias", vec![c])?,
                },
            ),
            spatial_conv_weight: to_planes(
                take("spatial.weight", vec![2, SPATIAL_KERNEL, SPATIAL_KERNEL])?,
                2,
                SPATIAL_KERNEL,
            ),
            spatial_conv_bias: take("spatial.bias", vec![1])?[0],
            output_conv_weight: to_planes(
                take("output.weight", vec![c, OUTPUT_KERNEL, OUTPUT_KERNEL])?,
                c,
                OUTPUT_KERNEL,
            ),
            output_conv_bias: take("output.bias", vec![1])?[0],
        };
        weights.validate(&cfg)?;
        Ok((cfg, weights))
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct WeightsFile {
    min_kernels: Vec<usize>,
    max_kernels: Vec<usize>,
    reduction: usize,
    tensors: BTreeMap<String, TensorRecord>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[derive(Clone, Copy, PartialEq)]
enum PoolMode {
    Min,
    Max,
}

/// 1-D sliding extremum over a padded signal, monotonic-deque, O(n).
/// Invalid samples are +inf (min) or -inf (max); the caller re-maps empties.
fn sliding_extremum(signal: &[f64], radius: usize, mode: PoolMode, out: &mut [f64]) {
    let n = signal.len();
    let better = |a: f64, b: f64| match mode {
        PoolMode::Min => a <= b,
        PoolMode::Max => a >= b,
    };
    let mut deque: VecDeque<usize> = VecDeque::new();
    for i in 0..n + radius {
        if i < n {
            while let Some(&back) = deque.back() {
                if better(signal[i], signal[back]) {
                    deque.pop_back();
                } else {
                    break;
                }
            }
            deque.push_back(i);
        }
        if i >= radius {
            let center = i - radius;
            while let Some(&front) = deque.front() {
                if front + radius < center {
                    deque.pop_front();
                } else {
                    break;
                }
            }
            out[center] = signal[*deque.front().expect("window never empty")];
        }
    }
}

fn pool_one_kernel(sparse: &DepthMap, kernel: usize, mode: PoolMode, out: &mut [f64]) {
    let h = sparse.height();
    let w = sparse.width();
    let radius = kernel / 2;
    let empty = match mode {
        PoolMode::Min => f64::INFINITY,
        PoolMode::Max => f64::NEG_INFINITY,
    };
    // Separable: extremum over rows, then over columns of the row result.
    let mut rows = vec![empty; h * w];
    let mut line = vec![empty; w.max(h)];
    let mut line_out = vec![empty; w.max(h)];
    for r in 0..h {
        for c in 0..w {
            line[c] = if sparse.is_valid(r, c) {
                sparse.depth_at(r, c)
            } else {
                empty
            };
        }
        sliding_extremum(&line[..w], radius, mode, &mut line_out[..w]);
        rows[r * w..(r + 1) * w].copy_from_slice(&line_out[..w]);
    }
    for c in 0..w {
        for r in 0..h {
            line[r] = rows[r * w + c];
        }
        sliding_extremum(&line[..h], radius, mode, &mut line_out[..h]);
        for r in 0..h {
            let v = line_out[r];
            out[r * w + c] = if v.is_finite() { v } else { 0.0 };
        }
    }
}

fn multi_pool(
    sparse: &DepthMap,
    kernels: &[usize],
    mode: PoolMode,
) -> Result<FeatureMap, As2dError> {
    if kernels.is_empty() {
        return Err(As2dError::NoKernels);
    }
    for &k in kernels {
        if k % 2 == 0 || k == 0 {
            return Err(As2dError::EvenKernel(k));
        }
    }
    let h = sparse.height();
    let w = sparse.width();
    let mut out = FeatureMap::zeros(kernels.len(), h, w);
    for (ci, &k) in kernels.iter().enumerate() {
        let n = h * w;
        pool_one_kernel(sparse, k, mode, &mut out.data[ci * n..(ci + 1) * n]);
    }
    Ok(out)
}

/// Min pooling over valid depths, one output channel per kernel; a window
/// with no valid depth yields 0.
pub fn multi_min_pool(sparse: &DepthMap, kernels: &[usize]) -> Result<FeatureMap, As2dError> {
    multi_pool(sparse, kernels, PoolMode::Min)
}

/// Max pooling over valid depths, one output channel per kernel; a window
/// with no valid depth yields 0.
pub fn multi_max_pool(sparse: &DepthMap, kernels: &[usize]) -> Result<FeatureMap, As2dError> {
    multi_pool(sparse, kernels, PoolMode::Max)
}

fn apply_conv1x1(input: &FeatureMap, conv: &Conv1x1, relu_after: bool) -> FeatureMap {
    let c_out = conv.weight.len();
    let n = input.height * input.width;
    let mut out = FeatureMap::zeros(c_out, input.height, input.width);
    for (o, row) in conv.weight.iter().enumerate() {
        let dst = &mut out.data[o * n..(o + 1) * n];
        dst.fill(conv.bias[o]);
        for (ci, &wv) in row.iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            let src = input.channel(ci);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wv * s;
            }
        }
        if relu_after {
            for d in dst.iter_mut() {
                *d = relu(*d);
            }
        }
    }
    out
}

/// Channel attention (CBAM): gate = sigmoid(MLP(avgpool) + MLP(maxpool)),
/// broadcast-multiplied over the input.
pub fn channel_attention(f: &FeatureMap, w: &AS2DWeights) -> Result<FeatureMap, As2dError> {
    let c = f.channels;
    if w.channel_mlp.0.weight.first().map_or(0, |r| r.len()) != c
        || w.channel_mlp.1.weight.len() != c
    {
        return Err(As2dError::ChannelMismatch {
            expected: w.channel_mlp.1.weight.len(),
            got: c,
        });
    }
    let n = (f.height * f.width) as f64;
    let mut avg = vec![0.0; c];
    let mut max = vec![f64::NEG_INFINITY; c];
    for ci in 0..c {
        let plane = f.channel(ci);
        let mut sum = 0.0;
        let mut mx = f64::NEG_INFINITY;
        for &v in plane {
            sum += v;
            mx = mx.max(v);
        }
        avg[ci] = sum / n;
        max[ci] = mx;
    }
    let hidden = w.channel_mlp.0.weight.len();
    let mut h_avg = vec![0.0; hidden];
    let mut h_max = vec![0.0; hidden];
    w.channel_mlp.0.apply(&avg, &mut h_avg);
    w.channel_mlp.0.apply(&max, &mut h_max);
    for v in h_avg.iter_mut().chain(h_max.iter_mut()) {
        *v = relu(*v);
    }
    let mut o_avg = vec![0.0; c];
    let mut o_max = vec![0.0; c];
    w.channel_mlp.1.apply(&h_avg, &mut o_avg);
    w.channel_mlp.1.apply(&h_max, &mut o_max);

    let mut out = f.clone();
    let plane = f.height * f.width;
    for ci in 0..c {
        let gate = sigmoid(o_avg[ci] + o_max[ci]);
        for v in &mut out.data[ci * plane..(ci + 1) * plane] {
            *v *= gate;
        }
    }
    Ok(out)
}

/// Spatial attention (CBAM): a 7x7 convolution over the per-pixel channel
/// mean and max, squashed to a gate in (0,1) and broadcast over channels.
pub fn spatial_attention(f: &FeatureMap, w: &AS2DWeights) -> Result<FeatureMap, As2dError> {
    if w.spatial_conv_weight.len() != 2 {
        return Err(As2dError::ShapeMismatch {
            name: "spatial.weight".into(),
            expected: vec![2, SPATIAL_KERNEL, SPATIAL_KERNEL],
            got: vec![w.spatial_conv_weight.len()],
        });
    }
    let h = f.height;
    let wd = f.width;
    let c = f.channels as f64;
    let mut mean_map = vec![0.0; h * wd];
    let mut max_map = vec![f64::NEG_INFINITY; h * wd];
    for ci in 0..f.channels {
        let plane = f.channel(ci);
        for (i, &v) in plane.iter().enumerate() {
            mean_map[i] += v;
            if v > max_map[i] {
                max_map[i] = v;
            }
        }
    }
    for v in &mut mean_map {
        *v /= c;
    }

    let radius = (SPATIAL_KERNEL / 2) as isize;
    let mut out = f.clone();
    let plane = h * wd;
    for row in 0..h {
        for col in 0..wd {
            let mut acc = w.spatial_conv_bias;
            for (pi, src) in [&mean_map, &max_map].into_iter().enumerate() {
                for ky in -radius..=radius {
                    let r = row as isize + ky;
                    if r < 0 || r >= h as isize {
                        continue;
                    }
                    for kx in -radius..=radius {
                        let cc = col as isize + kx;
                        if cc < 0 || cc >= wd as isize {
                            continue;
                        }
                        acc += w.spatial_conv_weight[pi][(ky + radius) as usize]
                            [(kx + radius) as usize]
                            * src[r as usize * wd + cc as usize];
                    }
                }
            }
            let gate = sigmoid(acc);
            let idx = row * wd + col;
            for ci in 0..f.channels {
                out.data[ci * plane + idx] *= gate;
            }
        }
    }
    Ok(out)
}

fn output_conv(f: &FeatureMap, w: &AS2DWeights) -> Vec<f64> {
    let h = f.height;
    let wd = f.width;
    let radius = (OUTPUT_KERNEL / 2) as isize;
    let mut out = vec![0.0; h * wd];
    for row in 0..h {
        for col in 0..wd {
            let mut acc = w.output_conv_bias;
            for (ci, plane) in w.output_conv_weight.iter().enumerate() {
                let src = f.channel(ci);
                for ky in -radius..=radius {
                    let r = row as isize + ky;
                    if r < 0 || r >= h as isize {
                        continue;
                    }
                    for kx in -radius..=radius {
                        let cc = col as isize + kx;
                        if cc < 0 || cc >= wd as isize {
                            continue;
                        }
                        acc += plane[(ky + radius) as usize][(kx + radius) as usize]
                            * src[r as usize * wd + cc as usize];
                    }
                }
            }
            out[row * wd + col] = acc;
        }
    }
    out
}

fn assemble_depth(
    raw: Vec<f64>,
    pooled_any: &Mask,
    h: usize,
    w: usize,
) -> Result<DepthMap, As2dError> {
    let mut depth = vec![0.0; h * w];
    let mut valid = vec![false; h * w];
    for idx in 0..h * w {
        if pooled_any.at(idx) && raw[idx] > 0.0 && raw[idx].is_finite() {
            depth[idx] = raw[idx];
            valid[idx] = true;
        }
    }
    Ok(DepthMap::new(h, w, depth, valid)?)
}

fn pooled_any_mask(pooled: &FeatureMap) -> Mask {
    let n = pooled.height * pooled.width;
    let mut any = vec![false; n];
    for ci in 0..pooled.channels {
        for (a, &v) in any.iter_mut().zip(pooled.channel(ci)) {
            *a |= v != 0.0;
        }
    }
    Mask::new(pooled.height, pooled.width, any).expect("mask dims")
}

fn concat_channels(a: FeatureMap, b: FeatureMap) -> FeatureMap {
    let mut data = a.data;
    data.extend_from_slice(&b.data);
    FeatureMap {
        channels: a.channels + b.channels,
        height: a.height,
        width: a.width,
        data,
    }
}

/// Full forward pass: pooling, fusion, attention, and the 3x3 output
/// convolution. Output pixels are valid where some pooled channel saw a
/// valid depth and the convolution output is positive; everything else is
/// clamped to the invalid sentinel.
pub fn as2d_forward(
    sparse: &DepthMap,
    w: &AS2DWeights,
    cfg: &As2dConfig,
) -> Result<DepthMap, As2dError> {
    w.validate(cfg)?;
    let pooled = if cfg.min_kernels.is_empty() {
        multi_max_pool(sparse, &cfg.max_kernels)?
    } else if cfg.max_kernels.is_empty() {
        multi_min_pool(sparse, &cfg.min_kernels)?
    } else {
        concat_channels(
            multi_min_pool(sparse, &cfg.min_kernels)?,
            multi_max_pool(sparse, &cfg.max_kernels)?,
        )
    };
    let any = pooled_any_mask(&pooled);

    let f1 = apply_conv1x1(&pooled, &w.fusion_convs[0], true);
    let f2 = apply_conv1x1(&f1, &w.fusion_convs[1], true);
    let fused = apply_conv1x1(&f2, &w.fusion_convs[2], false);

    let gated_c = channel_attention(&fused, w)?;
    let gated_s = spatial_attention(&gated_c, w)?;

    let raw = output_conv(&gated_s, w);
    assemble_depth(raw, &any, sparse.height(), sparse.width())
}

/// Reference implementation of [`as2d_forward`]: direct nested-loop window
/// enumeration for every stage, no sliding-window reuse or channel blocking.
/// Kept deliberately independent of the optimized path.
pub fn as2d_forward_oracle(
    sparse: &DepthMap,
    w: &AS2DWeights,
    cfg: &As2dConfig,
) -> Result<DepthMap, As2dError> {
    w.validate(cfg)?;
    let h = sparse.height();
    let wd = sparse.width();
    let c_total = cfg.pooled_channels();

    // Pooling by direct enumeration of each window.
    let mut pooled = FeatureMap::zeros(c_total, h, wd);
    let kernel_of = |ci: usize| -> (usize, bool) {
        if ci < cfg.min_kernels.len() {
            (cfg.min_kernels[ci], true)
        } else {
            (cfg.max_kernels[ci - cfg.min_kernels.len()], false)
        }
    };
    for ci in 0..c_total {
        let (k, is_min) = kernel_of(ci);
        let radius = (k / 2) as isize;
        for row in 0..h {
            for col in 0..wd {
                let mut best: Option<f64> = None;
                for ky in -radius..=radius {
                    let r = row as isize + ky;
                    if r < 0 || r >= h as isize {
                        continue;
                    }
                    for kx in -radius..=radius {
                        let cc = col as isize + kx;
                        if cc < 0 || cc >= wd as isize {
                            continue;
                        }
                        let (ru, cu) = (r as usize, cc as usize);
                        if !sparse.is_valid(ru, cu) {
                            continue;
                        }
                        let v = sparse.depth_at(ru, cu);
                        best = Some(match best {
                            None => v,
                            Some(b) => {
                                if is_min {
                                    b.min(v)
                                } else {
                                    b.max(v)
                                }
                            }
                        });
                    }
                }
                pooled.set(ci, row, col, best.unwrap_or(0.0));
            }
        }
    }

    let mut any = vec![false; h * wd];
    for idx in 0..h * wd {
        for ci in 0..c_total {
            if pooled.data[ci * h * wd + idx] != 0.0 {
                any[idx] = true;
                break;
            }
        }
    }

    // Three 1x1 convolutions, pixel by pixel.
    let conv1x1 = |input: &FeatureMap, conv: &Conv1x1, relu_after: bool| -> FeatureMap {
        let mut out = FeatureMap::zeros(conv.weight.len(), h, wd);
        for row in 0..h {
            for col in 0..wd {
                for (o, wrow) in conv.weight.iter().enumerate() {
                    let mut acc = conv.bias[o];
                    for (ci, &wv) in wrow.iter().enumerate() {
                        acc += wv * input.get(ci, row, col);
                    }
                    out.set(o, row, col, if relu_after { relu(acc) } else { acc });
                }
            }
        }
        out
    };
    let f1 = conv1x1(&pooled, &w.fusion_convs[0], true);
    let f2 = conv1x1(&f1, &w.fusion_convs[1], true);
    let fused = conv1x1(&f2, &w.fusion_convs[2], false);

    // Channel attention.
    let n_px = (h * wd) as f64;
    let mut avg = vec![0.0; c_total];
    let mut mx = vec![f64::NEG_INFINITY; c_total];
    for ci in 0..c_total {
        for row in 0..h {
            for col in 0..wd {
                let v = fused.get(ci, row, col);
                avg[ci] += v;
                if v > mx[ci] {
                    mx[ci] = v;
                }
            }
        }
        avg[ci] /= n_px;
    }
    let mlp = |input: &[f64]| -> Vec<f64> {
        let hidden_n = w.channel_mlp.0.weight.len();
        let mut hidden = vec![0.0; hidden_n];
        for o in 0..hidden_n {
            let mut acc = w.channel_mlp.0.bias[o];
            for (i, &x) in input.iter().enumerate() {
                acc += w.channel_mlp.0.weight[o][i] * x;
            }
            hidden[o] = relu(acc);
        }
        let mut out = vec![0.0; c_total];
        for o in 0..c_total {
            let mut acc = w.channel_mlp.1.bias[o];
            for (i, &x) in hidden.iter().enumerate() {
                acc += w.channel_mlp.1.weight[o][i] * x;
            }
            out[o] = acc;
        }
        out
    };
    let gate_in = {
        let a = mlp(&avg);
        let b = mlp(&mx);
        a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>()
    };
    let mut gated_c = FeatureMap::zeros(c_total, h, wd);
    for ci in 0..c_total {
        let g = sigmoid(gate_in[ci]);
        for row in 0..h {
            for col in 0..wd {
                gated_c.set(ci, row, col, g * fused.get(ci, row, col));
            }
        }
    }

    // Spatial attention.
    let mut gated_s = FeatureMap::zeros(c_total, h, wd);
    let s_radius = (SPATIAL_KERNEL / 2) as isize;
    for row in 0..h {
        for col in 0..wd {
            let mut acc = w.spatial_conv_bias;
            for ky in -s_radius..=s_radius {
                let r = row as isize + ky;
                if r < 0 || r >= h as isize {
                    continue;
                }
                for kx in -s_radius..=s_radius {
                    let cc = col as isize + kx;
                    if cc < 0 || cc >= wd as isize {
                        continue;
                    }
                    let (ru, cu) = (r as usize, cc as usize);
                    let mut mean_v = 0.0;
                    let mut max_v = f64::NEG_INFINITY;
                    for ci in 0..c_total {
                        let v = gated_c.get(ci, ru, cu);
                        mean_v += v;
                        if v > max_v {
                            max_v = v;
                        }
                    }
                    mean_v /= c_total as f64;
                    let wy = (ky + s_radius) as usize;
                    let wx = (kx + s_radius) as usize;
                    acc += w.spatial_conv_weight[0][wy][wx] * mean_v
                        + w.spatial_conv_weight[1][wy][wx] * max_v;
                }
            }
            let g = sigmoid(acc);
            for ci in 0..c_total {
                gated_s.set(ci, row, col, g * gated_c.get(ci, row, col));
            }
        }
    }

    // 3x3 output convolution.
    let o_radius = (OUTPUT_KERNEL / 2) as isize;
    let mut depth = vec![0.0; h * wd];
    let mut valid = vec![false; h * wd];
    for row in 0..h {
        for col in 0..wd {
            let mut acc = w.output_conv_bias;
            for ci in 0..c_total {
                for ky in -o_radius..=o_radius {
                    let r = row as isize + ky;
                    if r < 0 || r >= h as isize {
                        continue;
                    }
                    for kx in -o_radius..=o_radius {
                        let cc = col as isize + kx;
                        if cc < 0 || cc >= wd as isize {
                            continue;
                        }
                        acc += w.output_conv_weight[ci][(ky + o_radius) as usize]
                            [(kx + o_radius) as usize]
                            * gated_s.get(ci, r as usize, cc as usize);
                    }
                }
            }
            let idx = row * wd + col;
            if any[idx] && acc > 0.0 && acc.is_finite() {
                depth[idx] = acc;
                valid[idx] = true;
            }
        }
    }
    Ok(DepthMap::new(h, wd, depth, valid)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::sparsify;

    fn small_cfg() -> As2dConfig {
        As2dConfig {
            min_kernels: vec![1, 3, 5],
            max_kernels: vec![7, 9],
            reduction: 2,
        }
    }

    #[test]
    fn min_pool_constant_and_identity_kernel() {
        let d = DepthMap::constant(6, 6, 5.0).unwrap();
        let f = multi_min_pool(&d, &[3]).unwrap();
        assert!(f.data().iter().all(|&v| v == 5.0));

        let f = multi_min_pool(&d, &[1]).unwrap();
        assert_eq!(f.data(), d.depths());
    }

    #[test]
    fn min_pool_single_valid_pixel_spreads_over_window() {
        let mut depth = vec![0.0; 36];
        let mut valid = vec![false; 36];
        depth[2 * 6 + 3] = 3.0;
        valid[2 * 6 + 3] = true;
        let d = DepthMap::new(6, 6, depth, valid).unwrap();
        let f = multi_min_pool(&d, &[3]).unwrap();
        for row in 0..6 {
            for col in 0..6 {
                let near = (row as isize - 2).abs() <= 1 && (col as isize - 3).abs() <= 1;
                let expected = if near { 3.0 } else { 0.0 };
                assert_eq!(f.get(0, row, col), expected, "at ({row},{col})");
            }
        }
    }

    #[test]
    fn max_pool_window_and_empty_input() {
        let mut depth = vec![0.0; 25];
        let mut valid = vec![false; 25];
        depth[12] = 2.0;
        valid[12] = true;
        depth[13] = 9.0;
        valid[13] = true;
        let d = DepthMap::new(5, 5, depth, valid).unwrap();
        let f = multi_max_pool(&d, &[3]).unwrap();
        assert_eq!(f.get(0, 2, 2), 9.0);
        assert_eq!(f.get(0, 2, 1), 2.0);

        let empty = DepthMap::new(4, 4, vec![0.0; 16], vec![false; 16]).unwrap();
        let f = multi_max_pool(&empty, &[3, 5]).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn even_kernels_rejected() {
        let d = DepthMap::constant(4, 4, 1.0).unwrap();
        assert!(matches!(
            multi_min_pool(&d, &[4]),
            Err(As2dError::EvenKernel(4))
        ));
        assert!(matches!(multi_min_pool(&d, &[]), Err(As2dError::NoKernels)));
    }

    #[test]
    fn pooling_matches_oracle_windows() {
        // The separable sliding-window path must agree exactly with direct
        // window enumeration (min/max are order-independent).
        let d = sparsify(&DepthMap::constant(20, 17, 4.0).unwrap(), 0.3, 9).unwrap();
        let noisy =
            crate::synth::corrupt_depth(&d, crate::synth::CorruptionModel::AdditiveNoise, 1.0, 3)
                .unwrap();
        for &k in &[1usize, 3, 5, 7, 9] {
            let fast_min = multi_min_pool(&noisy, &[k]).unwrap();
            let fast_max = multi_max_pool(&noisy, &[k]).unwrap();
            let radius = (k / 2) as isize;
            for row in 0..20usize {
                for col in 0..17usize {
                    let mut mn = f64::INFINITY;
                    let mut mx = f64::NEG_INFINITY;
                    let mut anyv = false;
                    for ky in -radius..=radius {
                        for kx in -radius..=radius {
                            let r = row as isize + ky;
                            let c = col as isize + kx;
                            if r < 0 || c < 0 || r >= 20 || c >= 17 {
                                continue;
                            }
                            if noisy.is_valid(r as usize, c as usize) {
                                let v = noisy.depth_at(r as usize, c as usize);
                                mn = mn.min(v);
                                mx = mx.max(v);
                                anyv = true;
                            }
                        }
                    }
                    let (emn, emx) = if anyv { (mn, mx) } else { (0.0, 0.0) };
                    assert_eq!(fast_min.get(0, row, col).to_bits(), emn.to_bits());
                    assert_eq!(fast_max.get(0, row, col).to_bits(), emx.to_bits());
                }
            }
        }
    }

    #[test]
    fn channel_attention_zero_weights_halve() {
        let cfg = small_cfg();
        let w = AS2DWeights::zeros(&cfg);
        let f = FeatureMap::from_data(
            cfg.pooled_channels(),
            2,
            2,
            (0..cfg.pooled_channels() * 4).map(|i| i as f64).collect(),
        )
        .unwrap();
        let out = channel_attention(&f, &w).unwrap();
        for (a, b) in out.data().iter().zip(f.data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn channel_attention_preserves_zero_channel() {
        let cfg = small_cfg();
        let w = AS2DWeights::seeded(&cfg, 3);
        let c = cfg.pooled_channels();
        let mut data: Vec<f64> = (0..c * 9).map(|i| (i % 7) as f64 * 0.3).collect();
        for v in data.iter_mut().take(9) {
            *v = 0.0;
        }
        let f = FeatureMap::from_data(c, 3, 3, data).unwrap();
        let out = channel_attention(&f, &w).unwrap();
        assert!(out.data()[..9].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spatial_attention_zero_weights_halve_and_constants_stay_constant() {
        let cfg = small_cfg();
        let w = AS2DWeights::zeros(&cfg);
        let c = cfg.pooled_channels();
        let f = FeatureMap::from_data(c, 3, 3, vec![2.0; c * 9]).unwrap();
        let out = spatial_attention(&f, &w).unwrap();
        for &v in out.data() {
            assert_eq!(v, 1.0);
        }

        // Nonzero weights on a constant input: interior gates match, so the
        // interior stays constant.
        let w = AS2DWeights::seeded(&cfg, 11);
        let f = FeatureMap::from_data(c, 15, 15, vec![1.5; c * 225]).unwrap();
        let out = spatial_attention(&f, &w).unwrap();
        let center = out.get(0, 7, 7);
        assert!((out.get(0, 8, 7) - center).abs() < 1e-15);
        assert!((out.get(1, 7, 8) - center).abs() < 1e-15);
    }

    #[test]
    fn attention_gates_match_oracle_on_random_input() {
        let cfg = small_cfg();
        let w = AS2DWeights::seeded(&cfg, 21);
        let sparse = sparsify(&DepthMap::constant(6, 6, 4.0).unwrap(), 0.6, 2).unwrap();
        let fast = as2d_forward(&sparse, &w, &cfg).unwrap();
        let slow = as2d_forward_oracle(&sparse, &w, &cfg).unwrap();
        for idx in 0..36 {
            assert_eq!(fast.valid()[idx], slow.valid()[idx], "validity at {idx}");
            assert!(
                (fast.depths()[idx] - slow.depths()[idx]).abs() < 1e-6,
                "{} vs {}",
                fast.depths()[idx],
                slow.depths()[idx]
            );
        }
    }

    #[test]
    fn forward_zero_weights_gives_all_invalid() {
        let cfg = As2dConfig::default();
        let w = AS2DWeights::zeros(&cfg);
        let sparse = sparsify(&DepthMap::constant(20, 20, 3.0).unwrap(), 0.2, 5).unwrap();
        let out = as2d_forward(&sparse, &w, &cfg).unwrap();
        assert_eq!(out.valid_count(), 0);
        assert!(out.depths().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_pass_through_reproduces_sparse_input() {
        let cfg = As2dConfig {
            min_kernels: vec![1, 3, 5],
            max_kernels: vec![7],
            reduction: 2,
        };
        let w = AS2DWeights::pass_through(&cfg);
        let sparse = sparsify(&DepthMap::constant(16, 12, 2.5).unwrap(), 0.4, 8).unwrap();
        let out = as2d_forward(&sparse, &w, &cfg).unwrap();
        for idx in 0..16 * 12 {
            if sparse.valid()[idx] {
                assert!(out.valid()[idx]);
                assert_eq!(out.depths()[idx].to_bits(), sparse.depths()[idx].to_bits());
            } else {
                assert!(!out.valid()[idx]);
            }
        }
    }

    #[test]
    fn forward_matches_oracle_on_seeded_instances() {
        let cfg = As2dConfig {
            min_kernels: vec![3, 5, 7],
            max_kernels: vec![9, 11],
            reduction: 4,
        };
        for seed in 0..5u64 {
            let w = AS2DWeights::seeded(&cfg, seed);
            let dense = DepthMap::constant(18, 14, 3.0).unwrap();
            let noisy = crate::synth::corrupt_depth(
                &dense,
                crate::synth::CorruptionModel::AdditiveNoise,
                0.8,
                seed,
            )
            .unwrap();
            let sparse = sparsify(&noisy, 0.15, seed).unwrap();
            let fast = as2d_forward(&sparse, &w, &cfg).unwrap();
            let slow = as2d_forward_oracle(&sparse, &w, &cfg).unwrap();
            let mut max_diff = 0.0f64;
            for idx in 0..18 * 14 {
                assert_eq!(fast.valid()[idx], slow.valid()[idx]);
                max_diff = max_diff.max((fast.depths()[idx] - slow.depths()[idx]).abs());
            }
            assert!(max_diff < 1e-5, "seed {seed}: max diff {max_diff}");
        }
    }

    #[test]
    fn densification_with_strided_valid_grid() {
        // One valid pixel every k pixels in both axes: every centered k-window
        // contains one, so the kernel-k pooled channel is fully valid.
        let k = 3usize;
        let h = 15;
        let w = 12;
        let mut depth = vec![0.0; h * w];
        let mut valid = vec![false; h * w];
        for r in (1..h).step_by(k) {
            for c in (1..w).step_by(k) {
                depth[r * w + c] = 2.0 + (r + c) as f64 * 0.1;
                valid[r * w + c] = true;
            }
        }
        let sparse = DepthMap::new(h, w, depth, valid).unwrap();
        let pooled = multi_min_pool(&sparse, &[k]).unwrap();
        assert!(pooled.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn weight_shape_mismatch_rejected() {
        let cfg = small_cfg();
        let other = As2dConfig {
            min_kernels: vec![3],
            max_kernels: vec![5],
            reduction: 1,
        };
        let w = AS2DWeights::zeros(&other);
        let sparse = DepthMap::constant(8, 8, 1.0).unwrap();
        assert!(matches!(
            as2d_forward(&sparse, &w, &cfg),
            Err(As2dError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn weights_round_trip_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.json");
        let cfg = small_cfg();
        let w = AS2DWeights::seeded(&cfg, 77);
        w.save(&cfg, &path).unwrap();
        let (cfg2, w2) = AS2DWeights::load(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(w, w2);
    }
}
