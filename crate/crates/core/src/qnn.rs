//! Symmetric per-tensor int8 inference: conv, dense, pooling, ReLU, flatten.
//!
//! GEMM layers run as `weights (M×K) · activations (K×N) + bias` with int32
//! accumulation and are then requantized to int8. A [`LayerHook`] can take
//! over the GEMM of one layer, which is how a single tile gets offloaded to
//! the mesh.

use std::fmt;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::fault::FaultSpec;
use crate::matrix::{MatI32, MatI8};
use crate::mesh::MeshConfig;
use crate::tiling::{im2col, offload_gemm, reference_gemm, ConvGeom, OffloadResult, TileCoord};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i8>,
    pub scale: f64,
}

impl QuantTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i8>, scale: f64) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} does not hold {} elements", data.len())));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Model(format!("scale {scale} must be positive")));
        }
        Ok(Self { shape, data, scale })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    Dense,
    #[serde(rename = "relu")]
    ReLU,
    MaxPool2d,
    AvgPool2d,
    Flatten,
}

impl LayerKind {
    pub fn is_gemm(self) -> bool {
        matches!(self, LayerKind::Conv2d | LayerKind::Dense)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Dense => "dense",
            LayerKind::ReLU => "relu",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::AvgPool2d => "avgpool2d",
            LayerKind::Flatten => "flatten",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<usize>,
}

/// One layer. `scale` is the weight scale; `weights`, `bias`, `scale` and
/// `output_scale` are present exactly on GEMM layers. Conv weights are laid
/// out `[out][in][ky][kx]`, dense weights `[unit][feature]`, which is the
/// row-major A operand of the layer GEMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default)]
    pub params: LayerParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "b64")]
    pub weights: Option<Vec<i8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<i32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_scale: Option<f64>,
}

mod b64 {
    use super::*;

    pub fn serialize<S: Serializer>(w: &Option<Vec<i8>>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match w {
            Some(v) => {
                let bytes: Vec<u8> = v.iter().map(|&x| x as u8).collect();
                s.serialize_some(&STANDARD.encode(bytes))
            }
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<i8>>, D::Error> {
        let Some(text) = Option::<String>::deserialize(d)? else {
            return Ok(None);
        };
        let bytes = STANDARD.decode(text.as_bytes()).map_err(serde::de::Error::custom)?;
        Ok(Some(bytes.into_iter().map(|b| b as i8).collect()))
    }
}

impl LayerSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        weights: Vec<i8>,
        scale: f64,
        bias: Vec<i32>,
        output_scale: f64,
    ) -> Self {
        Self {
            kind: LayerKind::Conv2d,
            params: LayerParams {
                in_channels: Some(in_channels),
                out_channels: Some(out_channels),
                kernel: Some(kernel),
                stride: Some(stride),
                pad: Some(pad),
                ..Default::default()
            },
            scale: Some(scale),
            weights: Some(weights),
            bias: Some(bias),
            output_scale: Some(output_scale),
        }
    }

    pub fn dense(in_features: usize, units: usize, weights: Vec<i8>, scale: f64, bias: Vec<i32>, output_scale: f64) -> Self {
        Self {
            kind: LayerKind::Dense,
            params: LayerParams { in_features: Some(in_features), units: Some(units), ..Default::default() },
            scale: Some(scale),
            weights: Some(weights),
            bias: Some(bias),
            output_scale: Some(output_scale),
        }
    }

    pub fn simple(kind: LayerKind) -> Self {
        Self { kind, params: LayerParams::default(), scale: None, weights: None, bias: None, output_scale: None }
    }

    pub fn pool(kind: LayerKind, kernel: usize, stride: usize) -> Self {
        Self {
            params: LayerParams { kernel: Some(kernel), stride: Some(stride), ..Default::default() },
            ..Self::simple(kind)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input_shape: [usize; 3],
    /// Quantization scale of the int8 network input.
    pub input_scale: f64,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Chw(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    fn dims(self) -> Vec<usize> {
        match self {
            Shape::Chw(c, h, w) => vec![c, h, w],
            Shape::Flat(n) => vec![n],
        }
    }

    fn of(dims: &[usize]) -> Result<Self> {
        match *dims {
            [c, h, w] => Ok(Shape::Chw(c, h, w)),
            [n] => Ok(Shape::Flat(n)),
            _ => Err(Error::Shape(format!("unsupported tensor rank {dims:?}"))),
        }
    }
}

fn need(v: Option<usize>, layer: usize, what: &str) -> Result<usize> {
    match v {
        Some(x) if x > 0 => Ok(x),
        Some(_) => Err(Error::Model(format!("layer {layer}: {what} must be positive"))),
        None => Err(Error::Model(format!("layer {layer}: missing {what}"))),
    }
}

fn positive(v: Option<f64>, layer: usize, what: &str) -> Result<f64> {
    match v {
        Some(x) if x > 0.0 && x.is_finite() => Ok(x),
        Some(x) => Err(Error::Model(format!("layer {layer}: {what} {x} must be positive"))),
        None => Err(Error::Model(format!("layer {layer}: missing {what}"))),
    }
}

fn conv_geom(l: &LayerSpec, shape: Shape, idx: usize) -> Result<ConvGeom> {
    let Shape::Chw(c, h, w) = shape else {
        return Err(Error::Model(format!("layer {idx}: {} needs a C×H×W input", l.kind)));
    };
    let k = need(l.params.kernel, idx, "kernel")?;
    let stride = l.params.stride.unwrap_or(1).max(1);
    let g = ConvGeom { c_in: c, h, w, kh: k, kw: k, stride, pad: l.params.pad.unwrap_or(0) };
    g.out_hw().map_err(|e| Error::Model(format!("layer {idx}: {e}")))?;
    Ok(g)
}

impl ModelSpec {
    /// Walks the layer list, checking parameters and the shape chain; returns
    /// the output shape of every layer.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Model("input shape has a zero dimension".into()));
        }
        positive(Some(self.input_scale), 0, "input_scale")?;
        if self.layers.is_empty() {
            return Err(Error::Model("model has no layers".into()));
        }
        let mut shape = Shape::Chw(c, h, w);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let gemm_fields = [l.weights.is_some(), l.bias.is_some(), l.scale.is_some(), l.output_scale.is_some()];
            if !l.kind.is_gemm() && gemm_fields.iter().any(|&x| x) {
                return Err(Error::Model(format!("layer {i}: {} carries GEMM parameters", l.kind)));
            }
            shape = match l.kind {
                LayerKind::Conv2d => {
                    let g = conv_geom(l, shape, i)?;
                    let cin = need(l.params.in_channels, i, "in_channels")?;
                    if cin != g.c_in {
                        return Err(Error::Model(format!("layer {i}: expects {cin} channels, gets {}", g.c_in)));
                    }
                    let cout = need(l.params.out_channels, i, "out_channels")?;
                    self.check_gemm_layer(l, i, cout, g.patch_len())?;
                    let (ho, wo) = g.out_hw()?;
                    Shape::Chw(cout, ho, wo)
                }
                LayerKind::Dense => {
                    let inf = need(l.params.in_features, i, "in_features")?;
                    if shape != Shape::Flat(inf) {
                        return Err(Error::Model(format!("layer {i}: dense expects [{inf}], gets {:?}", shape.dims())));
                    }
                    let units = need(l.params.units, i, "units")?;
                    self.check_gemm_layer(l, i, units, inf)?;
                    Shape::Flat(units)
                }
                LayerKind::ReLU => shape,
                LayerKind::MaxPool2d | LayerKind::AvgPool2d => {
                    let mut g = conv_geom(l, shape, i)?;
                    if l.params.stride.is_none() {
                        g.stride = g.kh;
                        g.out_hw().map_err(|e| Error::Model(format!("layer {i}: {e}")))?;
                    }
                    let (ho, wo) = g.out_hw()?;
                    Shape::Chw(g.c_in, ho, wo)
                }
                LayerKind::Flatten => match shape {
                    Shape::Chw(c, h, w) => Shape::Flat(c * h * w),
                    flat => flat,
                },
            };
            out.push(shape.dims());
        }
        if shape != Shape::Flat(self.num_classes) {
            return Err(Error::Model(format!(
                "final output {:?} does not match {} classes",
                shape.dims(),
                self.num_classes
            )));
        }
        Ok(out)
    }

    fn check_gemm_layer(&self, l: &LayerSpec, i: usize, m: usize, k: usize) -> Result<()> {
        positive(l.scale, i, "scale")?;
        positive(l.output_scale, i, "output_scale")?;
        let w = l.weights.as_ref().ok_or_else(|| Error::Model(format!("layer {i}: missing weights")))?;
        if w.len() != m * k {
            return Err(Error::Model(format!("layer {i}: {} weights, expected {m}x{k}", w.len())));
        }
        if w.contains(&i8::MIN) {
            return Err(Error::Model(format!("layer {i}: weight magnitude exceeds 127")));
        }
        let b = l.bias.as_ref().ok_or_else(|| Error::Model(format!("layer {i}: missing bias")))?;
        if b.len() != m {
            return Err(Error::Model(format!("layer {i}: {} biases, expected {m}", b.len())));
        }
        Ok(())
    }

    /// Indices of layers that run a GEMM.
    pub fn gemm_layers(&self) -> Vec<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| l.kind.is_gemm()).map(|(i, _)| i).collect()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelSpec = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelSpec> {
    ModelSpec::from_json(&std::fs::read_to_string(path)?)
}

pub fn save_model(model: &ModelSpec, path: impl AsRef<Path>) -> Result<()> {
    let mut text = model.to_json()?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Rounds half away from zero and saturates to int8.
pub fn requantize(acc: i32, factor: f64) -> i8 {
    (acc as f64 * factor).round().clamp(-128.0, 127.0) as i8
}

/// Replaces the GEMM of one layer.
pub trait LayerHook {
    fn layer(&self) -> usize;
    fn gemm(&mut self, a: &MatI8, b: &MatI8, bias: &MatI32) -> Result<MatI32>;
}

/// Hook that runs one tile of the target layer on the mesh.
#[derive(Debug, Clone)]
pub struct OffloadHook {
    pub layer: usize,
    pub config: MeshConfig,
    pub tile: TileCoord,
    pub faults: Vec<FaultSpec>,
    pub result: Option<OffloadResult>,
}

impl OffloadHook {
    pub fn new(layer: usize, config: MeshConfig, tile: TileCoord, faults: Vec<FaultSpec>) -> Self {
        Self { layer, config, tile, faults, result: None }
    }
}

impl LayerHook for OffloadHook {
    fn layer(&self) -> usize {
        self.layer
    }

    fn gemm(&mut self, a: &MatI8, b: &MatI8, bias: &MatI32) -> Result<MatI32> {
        let r = offload_gemm(a, b, bias, &self.config, self.tile, &self.faults)?;
        let c = r.c.clone();
        self.result = Some(r);
        Ok(c)
    }
}

/// Operands of a GEMM layer for a given input activation.
#[derive(Debug, Clone, PartialEq)]
pub struct GemmOperands {
    pub a: MatI8,
    pub b: MatI8,
    pub bias: MatI32,
    /// Shape of the layer output before flattening into M×N.
    pub out_shape: Vec<usize>,
}

pub fn gemm_operands(model: &ModelSpec, layer: usize, input: &QuantTensor) -> Result<GemmOperands> {
    let l = model
        .layers
        .get(layer)
        .ok_or_else(|| Error::Hook(format!("layer {layer} does not exist ({} layers)", model.layers.len())))?;
    let weights = l.weights.as_ref();
    let bias = l.bias.as_ref();
    match (l.kind, weights, bias) {
        (LayerKind::Conv2d, Some(w), Some(bias)) => {
            let g = conv_geom(l, Shape::of(&input.shape)?, layer)?;
            let b = im2col(&input.data, &g)?;
            let m = bias.len();
            let a = MatI8::from_vec(m, g.patch_len(), w.clone())?;
            let (ho, wo) = g.out_hw()?;
            let bias = MatI32::from_fn(m, ho * wo, |r, _| bias[r]);
            Ok(GemmOperands { a, b, bias, out_shape: vec![m, ho, wo] })
        }
        (LayerKind::Dense, Some(w), Some(bias)) => {
            let m = bias.len();
            let k = input.len();
            let a = MatI8::from_vec(m, k, w.clone())?;
            let b = MatI8::from_vec(k, 1, input.data.clone())?;
            let bias = MatI32::from_vec(m, 1, bias.clone())?;
            Ok(GemmOperands { a, b, bias, out_shape: vec![m] })
        }
        _ => Err(Error::Hook(format!("layer {layer} ({}) has no GEMM", l.kind))),
    }
}

fn pool(l: &LayerSpec, x: &QuantTensor, idx: usize) -> Result<QuantTensor> {
    let mut g = conv_geom(l, Shape::of(&x.shape)?, idx)?;
    if l.params.stride.is_none() {
        g.stride = g.kh;
    }
    let (ho, wo) = g.out_hw()?;
    let mut data = Vec::with_capacity(g.c_in * ho * wo);
    for c in 0..g.c_in {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = i8::MIN;
                let (mut sum, mut n) = (0i32, 0i32);
                for dy in 0..g.kh {
                    for dx in 0..g.kw {
                        let y = (oy * g.stride + dy) as isize - g.pad as isize;
                        let xx = (ox * g.stride + dx) as isize - g.pad as isize;
                        if y < 0 || xx < 0 || y >= g.h as isize || xx >= g.w as isize {
                            continue;
                        }
                        let v = x.data[(c * g.h + y as usize) * g.w + xx as usize];
                        best = best.max(v);
                        sum += v as i32;
                        n += 1;
                    }
                }
                data.push(match l.kind {
                    LayerKind::MaxPool2d => best,
                    _ => requantize(sum, 1.0 / n as f64),
                });
            }
        }
    }
    QuantTensor::new(vec![g.c_in, ho, wo], data, x.scale)
}

/// Applies layer `idx` to `x`. The hook, if given and aimed at `idx`,
/// produces the GEMM result.
pub fn apply_layer(
    model: &ModelSpec,
    idx: usize,
    x: &QuantTensor,
    hook: Option<&mut dyn LayerHook>,
) -> Result<QuantTensor> {
    let l = &model.layers[idx];
    match l.kind {
        LayerKind::Conv2d | LayerKind::Dense => {
            let ops = gemm_operands(model, idx, x)?;
            let acc = match hook {
                Some(h) if h.layer() == idx => h.gemm(&ops.a, &ops.b, &ops.bias)?,
                _ => reference_gemm(&ops.a, &ops.b, &ops.bias)?,
            };
            let out_scale = positive(l.output_scale, idx, "output_scale")?;
            let factor = x.scale * positive(l.scale, idx, "scale")? / out_scale;
            let data = acc.as_slice().iter().map(|&v| requantize(v, factor)).collect();
            QuantTensor::new(ops.out_shape, data, out_scale)
        }
        LayerKind::ReLU => Ok(QuantTensor { data: x.data.iter().map(|&v| v.max(0)).collect(), ..x.clone() }),
        LayerKind::MaxPool2d | LayerKind::AvgPool2d => pool(l, x, idx),
        LayerKind::Flatten => Ok(QuantTensor { shape: vec![x.len()], ..x.clone() }),
    }
}

fn check_hook(model: &ModelSpec, from: usize, hook: &Option<&mut dyn LayerHook>) -> Result<()> {
    if let Some(h) = hook {
        let target = h.layer();
        match model.layers.get(target) {
            None => return Err(Error::Hook(format!("layer {target} does not exist ({} layers)", model.layers.len()))),
            Some(l) if !l.kind.is_gemm() => {
                return Err(Error::Hook(format!("layer {target} ({}) has no GEMM", l.kind)));
            }
            _ if target < from => return Err(Error::Hook(format!("layer {target} runs before layer {from}"))),
            _ => {}
        }
    }
    Ok(())
}

/// Runs layers `from..` starting from activation `x` and returns the final
/// output tensor.
pub fn run_from(
    model: &ModelSpec,
    from: usize,
    x: QuantTensor,
    mut hook: Option<&mut dyn LayerHook>,
) -> Result<QuantTensor> {
    check_hook(model, from, &hook)?;
    let mut x = x;
    for idx in from..model.layers.len() {
        x = apply_layer(model, idx, &x, hook.as_mut().map(|h| &mut **h as &mut dyn LayerHook))?;
    }
    Ok(x)
}

/// Output of every layer for a fault-free run; entry `i` is layer `i`'s
/// output.
pub fn forward_trace(model: &ModelSpec, input: &QuantTensor) -> Result<Vec<QuantTensor>> {
    check_input(model, input)?;
    let mut acts: Vec<QuantTensor> = Vec::with_capacity(model.layers.len());
    for idx in 0..model.layers.len() {
        let x = acts.last().unwrap_or(input);
        let y = apply_layer(model, idx, x, None)?;
        acts.push(y);
    }
    Ok(acts)
}

fn check_input(model: &ModelSpec, input: &QuantTensor) -> Result<()> {
    if input.shape != model.input_shape {
        return Err(Error::Shape(format!("input shape {:?}, model expects {:?}", input.shape, model.input_shape)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inference {
    pub logits: Vec<i32>,
    pub top1: usize,
}

impl Inference {
    pub fn from_output(out: &QuantTensor) -> Self {
        let logits: Vec<i32> = out.data.iter().map(|&v| v as i32).collect();
        Self { top1: argmax(&logits), logits }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[i32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn forward(model: &ModelSpec, input: &QuantTensor, hook: Option<&mut dyn LayerHook>) -> Result<Inference> {
    check_input(model, input)?;
    let out = run_from(model, 0, input.clone(), hook)?;
    Ok(Inference::from_output(&out))
}

/// XOR-flips bit `bit` of element `element`.
pub fn sw_inject_bit(data: &mut [i8], element: usize, bit: u32) -> Result<()> {
    if bit > 7 {
        return Err(Error::Fault(format!("bit {bit} outside int8")));
    }
    let len = data.len();
    let v = data
        .get_mut(element)
        .ok_or_else(|| Error::Fault(format!("element {element} outside tensor of {len}")))?;
    *v ^= (1u8 << bit) as i8;
    Ok(())
}

/// Deterministic pseudo-random network input number `id`, uniform over
/// [-127, 127] and quantized with the model's input scale.
pub fn synthetic_input(model: &ModelSpec, seed: u64, id: usize) -> QuantTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let data = (0..model.input_len()).map(|_| rng.gen_range(-127..=127)).collect();
    QuantTensor { shape: model.input_shape.to_vec(), data, scale: model.input_scale }
}

/// Seed used for the bundled input set.
pub const INPUT_SEED: u64 = 0x5EED_0001;
