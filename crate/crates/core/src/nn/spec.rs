//! Line-oriented network descriptions and shape inference.
//!
//! ```text
//! input <c> <h> <w>
//! conv <out_ch> <k> stride=<s> pad=<zero|circular> act=<relu|none>
//! maxpool <k> stride=<s>
//! avgpool <k> stride=<s>
//! gap
//! dense <units>
//! softmax
//! ```
//!
//! One layer per line; `#` starts a comment. Keyword arguments may be
//! omitted: conv defaults to `stride=1 pad=zero act=relu`, pooling defaults
//! to `stride=<k>`.

use std::fmt;

use thiserror::Error;

use crate::tensor::PadMode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("layer {layer}: {message}")]
    Shape { layer: usize, message: String },
    #[error("no pooling layer matches {0}")]
    NoMatchingPool(PoolDescriptor),
}

fn syntax(line: usize, message: impl Into<String>) -> SpecError {
    SpecError::Syntax {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: PadMode,
        activation: Activation,
    },
    Pool {
        kind: PoolKind,
        kernel: usize,
        stride: usize,
    },
    Gap,
    Dense {
        units: usize,
    },
    Softmax,
}

impl LayerSpec {
    /// Spatial subsampling step of the layer (1 for non-spatial layers).
    pub fn stride(&self) -> usize {
        match *self {
            LayerSpec::Conv { stride, .. } | LayerSpec::Pool { stride, .. } => stride,
            _ => 1,
        }
    }

    pub fn is_spatial(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Pool { .. })
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                pad,
                activation,
            } => write!(
                f,
                "conv {out_channels} {kernel} stride={stride} pad={} act={}",
                pad.as_str(),
                match activation {
                    Activation::Relu => "relu",
                    Activation::Identity => "none",
                }
            ),
            LayerSpec::Pool { kind, kernel, stride } => {
                let name = match kind {
                    PoolKind::Max => "maxpool",
                    PoolKind::Avg => "avgpool",
                };
                write!(f, "{name} {kernel} stride={stride}")
            }
            LayerSpec::Gap => f.write_str("gap"),
            LayerSpec::Dense { units } => write!(f, "dense {units}"),
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

/// Per-sample activation shape. Flat vectors are `(units, 1, 1)` with
/// `spatial == false`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub spatial: bool,
}

impl FeatureShape {
    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            spatial: true,
        }
    }

    pub fn flat(units: usize) -> Self {
        Self {
            channels: units,
            height: 1,
            width: 1,
            spatial: false,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

/// Shape-inference result for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerInfo {
    pub input: FeatureShape,
    pub output: FeatureShape,
    /// Product of all strides up to and including this layer.
    pub cumulative_factor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input: FeatureShape,
    layers: Vec<LayerSpec>,
    info: Vec<LayerInfo>,
}

/// Output extent of a spatial layer along one axis.
pub fn output_extent(layer: &LayerSpec, extent: usize) -> usize {
    match *layer {
        LayerSpec::Conv { stride, .. } => (extent - 1) / stride + 1,
        LayerSpec::Pool { stride, .. } => extent / stride,
        _ => extent,
    }
}

impl NetworkSpec {
    pub fn new(input: FeatureShape, layers: Vec<LayerSpec>) -> Result<Self, SpecError> {
        let info = infer_shapes(input, &layers)?;
        Ok(Self { input, layers, info })
    }

    pub fn input(&self) -> FeatureShape {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn info(&self) -> &[LayerInfo] {
        &self.info
    }

    pub fn num_classes(&self) -> usize {
        self.info.last().map(|i| i.output.channels).unwrap_or(0)
    }

    /// Layers `0..=last` followed by nothing; used to build readout heads.
    pub fn prefix(&self, last: usize) -> &[LayerSpec] {
        &self.layers[..=last]
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "input {} {} {}\n",
            self.input.channels, self.input.height, self.input.width
        );
        for layer in &self.layers {
            out.push_str(&layer.to_string());
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl std::str::FromStr for NetworkSpec {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_spec(s)
    }
}

fn infer_shapes(input: FeatureShape, layers: &[LayerSpec]) -> Result<Vec<LayerInfo>, SpecError> {
    let shape_err = |layer: usize, message: String| SpecError::Shape { layer, message };
    if input.is_empty() {
        return Err(shape_err(0, "input shape has a zero dimension".into()));
    }
    if layers.is_empty() {
        return Err(shape_err(0, "network has no layers".into()));
    }
    let mut infos = Vec::with_capacity(layers.len());
    let mut shape = input;
    let mut factor = 1usize;
    let mut seen_gap = false;
    for (i, layer) in layers.iter().enumerate() {
        let out = match *layer {
            LayerSpec::Conv { kernel, stride, .. } | LayerSpec::Pool { kernel, stride, .. } => {
                if !shape.spatial {
                    return Err(shape_err(i, format!("spatial layer `{layer}` after the spatial stage ended")));
                }
                if kernel == 0 || stride == 0 {
                    return Err(shape_err(i, "kernel and stride must be at least 1".into()));
                }
                if kernel > shape.height || kernel > shape.width {
                    return Err(shape_err(
                        i,
                        format!("kernel {kernel} does not fit a {}x{} input", shape.height, shape.width),
                    ));
                }
                if stride > shape.height || stride > shape.width {
                    return Err(shape_err(
                        i,
                        format!("stride {stride} exceeds the {}x{} input", shape.height, shape.width),
                    ));
                }
                let channels = match *layer {
                    LayerSpec::Conv { out_channels, .. } => {
                        if out_channels == 0 {
                            return Err(shape_err(i, "conv needs at least one output channel".into()));
                        }
                        out_channels
                    }
                    _ => shape.channels,
                };
                factor = factor
                    .checked_mul(stride)
                    .ok_or_else(|| shape_err(i, "subsampling factor overflows".into()))?;
                FeatureShape::image(channels, output_extent(layer, shape.height), output_extent(layer, shape.width))
            }
            LayerSpec::Gap => {
                if seen_gap || !shape.spatial {
                    return Err(shape_err(i, "gap must appear once, directly after the spatial layers".into()));
                }
                seen_gap = true;
                FeatureShape::flat(shape.channels)
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(shape_err(i, "dense needs at least one unit".into()));
                }
                FeatureShape::flat(units)
            }
            LayerSpec::Softmax => {
                if shape.spatial {
                    return Err(shape_err(i, "softmax needs a flat input".into()));
                }
                FeatureShape::flat(shape.channels)
            }
        };
        infos.push(LayerInfo {
            input: shape,
            output: out,
            cumulative_factor: factor,
        });
        shape = out;
    }
    if shape.spatial {
        return Err(shape_err(layers.len() - 1, "network must end in a class-score vector".into()));
    }
    Ok(infos)
}

fn parse_usize(line: usize, what: &str, tok: Option<&str>) -> Result<usize, SpecError> {
    let tok = tok.ok_or_else(|| syntax(line, format!("missing {what}")))?;
    tok.parse::<usize>()
        .map_err(|_| syntax(line, format!("{what} must be a non-negative integer, got `{tok}`")))
}

struct KeyArgs<'a> {
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> KeyArgs<'a> {
    fn parse(line: usize, tokens: &[&'a str], allowed: &[&str]) -> Result<Self, SpecError> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| syntax(line, format!("unexpected token `{tok}`")))?;
            if !allowed.contains(&k) {
                return Err(syntax(line, format!("unknown key `{k}`")));
            }
            if pairs.iter().any(|(seen, _)| *seen == k) {
                return Err(syntax(line, format!("duplicate key `{k}`")));
            }
            pairs.push((k, v));
        }
        Ok(Self { pairs })
    }

    fn get(&self, key: &str) -> Option<&'a str> {
        self.pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }
}

/// Parses the layer grammar and runs shape inference.
pub fn parse_spec(text: &str) -> Result<NetworkSpec, SpecError> {
    let mut input: Option<FeatureShape> = None;
    let mut layers = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let (head, rest) = (tokens[0], &tokens[1..]);
        if head == "input" {
            if input.is_some() {
                return Err(syntax(line_no, "duplicate input line"));
            }
            if rest.len() != 3 {
                return Err(syntax(line_no, "input takes exactly <c> <h> <w>"));
            }
            let c = parse_usize(line_no, "channels", rest.first().copied())?;
            let h = parse_usize(line_no, "height", rest.get(1).copied())?;
            let w = parse_usize(line_no, "width", rest.get(2).copied())?;
            input = Some(FeatureShape::image(c, h, w));
            continue;
        }
        if input.is_none() {
            return Err(syntax(line_no, "the first layer line must be `input <c> <h> <w>`"));
        }
        let layer = match head {
            "conv" => {
                let out_channels = parse_usize(line_no, "output channels", rest.first().copied())?;
                let kernel = parse_usize(line_no, "kernel size", rest.get(1).copied())?;
                let kw = KeyArgs::parse(line_no, rest.get(2..).unwrap_or(&[]), &["stride", "pad", "act"])?;
                let stride = match kw.get("stride") {
                    Some(v) => parse_usize(line_no, "stride", Some(v))?,
                    None => 1,
                };
                let pad = match kw.get("pad") {
                    Some(v) => v.parse::<PadMode>().map_err(|e| syntax(line_no, e))?,
                    None => PadMode::Zero,
                };
                let activation = match kw.get("act") {
                    None | Some("relu") => Activation::Relu,
                    Some("none") => Activation::Identity,
                    Some(other) => return Err(syntax(line_no, format!("unknown activation `{other}`"))),
                };
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                    activation,
                }
            }
            "maxpool" | "avgpool" => {
                let kernel = parse_usize(line_no, "kernel size", rest.first().copied())?;
                let kw = KeyArgs::parse(line_no, rest.get(1..).unwrap_or(&[]), &["stride"])?;
                let stride = match kw.get("stride") {
                    Some(v) => parse_usize(line_no, "stride", Some(v))?,
                    None => kernel,
                };
                let kind = if head == "maxpool" { PoolKind::Max } else { PoolKind::Avg };
                LayerSpec::Pool { kind, kernel, stride }
            }
            "gap" | "softmax" => {
                if !rest.is_empty() {
                    return Err(syntax(line_no, format!("`{head}` takes no arguments")));
                }
                if head == "gap" {
                    LayerSpec::Gap
                } else {
                    LayerSpec::Softmax
                }
            }
            "dense" => {
                if rest.len() != 1 {
                    return Err(syntax(line_no, "dense takes exactly <units>"));
                }
                LayerSpec::Dense {
                    units: parse_usize(line_no, "units", rest.first().copied())?,
                }
            }
            other => return Err(syntax(line_no, format!("unknown layer `{other}`"))),
        };
        layers.push(layer);
    }
    let input = input.ok_or_else(|| syntax(1, "missing `input <c> <h> <w>` line"))?;
    NetworkSpec::new(input, layers)
}

/// Product of every stride before the head (gap/dense) of the network.
pub fn subsampling_factor(spec: &NetworkSpec) -> usize {
    stride_product(spec.layers().iter().take_while(|l| l.is_spatial()).map(|l| l.stride()))
}

pub fn stride_product(strides: impl IntoIterator<Item = usize>) -> usize {
    strides.into_iter().product()
}

/// An exact fraction `numerator / denominator`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub numerator: u64,
    pub denominator: u64,
}

/// Share of 2-D integer translations under which a network with the given
/// subsampling factor is exactly invariant: those that are multiples of the
/// factor along both axes, i.e. `1 / factor²`.
pub fn exact_invariance_fraction(factor: usize) -> Fraction {
    let f = factor as u64;
    Fraction {
        numerator: 1,
        denominator: f * f,
    }
}

/// Selects pooling layers in [`replace_pooling`]. A `stride` of `None`
/// matches any stride (as the old descriptor) or keeps the existing stride
/// (as the new descriptor).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolDescriptor {
    pub kind: PoolKind,
    pub kernel: usize,
    pub stride: Option<usize>,
}

impl fmt::Display for PoolDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            PoolKind::Max => "maxpool",
            PoolKind::Avg => "avgpool",
        };
        write!(f, "{name}({}", self.kernel)?;
        if let Some(s) = self.stride {
            write!(f, ", stride {s}")?;
        }
        f.write_str(")")
    }
}

impl std::str::FromStr for PoolDescriptor {
    type Err = String;

    /// `max:2`, `avg:6:2` (`kind:kernel[:stride]`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(format!("expected kind:kernel[:stride], got `{s}`"));
        }
        let kind = match parts[0] {
            "max" | "maxpool" => PoolKind::Max,
            "avg" | "avgpool" => PoolKind::Avg,
            other => return Err(format!("unknown pooling kind `{other}`")),
        };
        let kernel = parts[1].parse().map_err(|_| format!("bad kernel `{}`", parts[1]))?;
        let stride = match parts.get(2) {
            Some(v) => Some(v.parse().map_err(|_| format!("bad stride `{v}`"))?),
            None => None,
        };
        Ok(Self { kind, kernel, stride })
    }
}

/// Substitutes every pooling layer matching `old` with `new`.
pub fn replace_pooling(spec: &NetworkSpec, old: PoolDescriptor, new: PoolDescriptor) -> Result<NetworkSpec, SpecError> {
    let mut matched = false;
    let layers = spec
        .layers()
        .iter()
        .map(|layer| match *layer {
            LayerSpec::Pool { kind, kernel, stride }
                if kind == old.kind && kernel == old.kernel && old.stride.is_none_or(|s| s == stride) =>
            {
                matched = true;
                LayerSpec::Pool {
                    kind: new.kind,
                    kernel: new.kernel,
                    stride: new.stride.unwrap_or(stride),
                }
            }
            other => other,
        })
        .collect();
    if !matched {
        return Err(SpecError::NoMatchingPool(old));
    }
    NetworkSpec::new(spec.input(), layers)
}
