//! Small dense networks and the fully-connected to convolution rewrite that
//! turns a fixed-size window classifier into a sliding-window detector.
//!
//! Tensors are `(y, x, c)` row-major. A fully-connected layer flattens its
//! input in that same order, so a `D_out × (H·W·C)` weight matrix is already
//! laid out as `D_out` kernels of shape `H × W × C`: the conversion is a pure
//! reinterpretation of the weights.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::RgbImage;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl Tensor3 {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                expected: height * width * channels,
                got: values.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
        }
    }

    pub fn shape(&self) -> Shape {
        Shape {
            height: self.height,
            width: self.width,
            channels: self.channels,
        }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    /// The channel vector at one location.
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.values[start..start + self.channels]
    }

    /// Window of `height × width` starting at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(Error::Shape("crop exceeds tensor bounds".into()));
        }
        let mut values = Vec::with_capacity(height * width * self.channels);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * self.channels;
            values.extend_from_slice(&self.values[start..start + width * self.channels]);
        }
        Self::new(height, width, self.channels, values)
    }

    /// RGB image scaled to `[0, 1]`, channels in R, G, B order.
    pub fn from_rgb(image: &RgbImage) -> Self {
        let values = image
            .pixels
            .iter()
            .flat_map(|p| p.iter().map(|&v| v as f64 / 255.0))
            .collect();
        Self {
            height: image.height,
            width: image.width,
            channels: 3,
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FromStr for Shape {
    type Err = Error;

    /// `HxWxC`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(['x', 'X'])
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("shape must be HxWxC, got `{s}`")))?;
        match parts[..] {
            [height, width, channels] if height > 0 && width > 0 && channels > 0 => Ok(Shape {
                height,
                width,
                channels,
            }),
            _ => Err(Error::InvalidArgument(format!("shape must be HxWxC with positive sizes, got `{s}`"))),
        }
    }
}

/// Valid-padding convolution. Weights are `[out][ky][kx][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Dense layer. Weights are `[out][in]` with inputs flattened `(y, x, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv),
    MaxPool { window: usize, stride: usize },
    Relu,
    Dense(Dense),
    /// Softmax across channels at every spatial location.
    ChannelSoftmax,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Relu => "relu",
            Layer::Dense(_) => "fc",
            Layer::ChannelSoftmax => "softmax",
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, s: Shape) -> Result<Shape> {
        match self {
            Layer::Conv(c) => {
                if s.channels != c.in_channels {
                    return Err(Error::Shape(format!(
                        "conv expects {} channels, got {}",
                        c.in_channels, s.channels
                    )));
                }
                Ok(Shape {
                    height: valid_extent(s.height, c.kernel_h, c.stride)?,
                    width: valid_extent(s.width, c.kernel_w, c.stride)?,
                    channels: c.out_channels,
                })
            }
            Layer::MaxPool { window, stride } => Ok(Shape {
                height: valid_extent(s.height, *window, *stride)?,
                width: valid_extent(s.width, *window, *stride)?,
                channels: s.channels,
            }),
            Layer::Relu | Layer::ChannelSoftmax => Ok(s),
            Layer::Dense(d) => {
                if s.len() != d.in_dim {
                    return Err(Error::Shape(format!("fc expects {} inputs, got {}", d.in_dim, s.len())));
                }
                Ok(Shape {
                    height: 1,
                    width: 1,
                    channels: d.out_dim,
                })
            }
        }
    }

    pub fn forward(&self, input: &Tensor3) -> Result<Tensor3> {
        let out_shape = self.output_shape(input.shape())?;
        Ok(match self {
            Layer::Conv(c) => conv_forward(c, input, out_shape),
            Layer::MaxPool { window, stride } => pool_forward(*window, *stride, input, out_shape),
            Layer::Relu => Tensor3 {
                values: input.values.iter().map(|v| v.max(0.0)).collect(),
                ..input.clone()
            },
            Layer::Dense(d) => {
                let values = (0..d.out_dim)
                    .map(|o| {
                        let row = &d.weights[o * d.in_dim..(o + 1) * d.in_dim];
                        d.bias[o] + row.iter().zip(&input.values).map(|(w, v)| w * v).sum::<f64>()
                    })
                    .collect();
                Tensor3::new(1, 1, d.out_dim, values)?
            }
            Layer::ChannelSoftmax => {
                let mut values = Vec::with_capacity(input.values.len());
                for chunk in input.values.chunks(input.channels) {
                    let m = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = chunk.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    values.extend(e.into_iter().map(|v| v / s));
                }
                Tensor3 {
                    values,
                    ..input.clone()
                }
            }
        })
    }
}

/// `⌊(in - k) / stride⌋ + 1`
fn valid_extent(input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::Shape("kernel and stride must be positive".into()));
    }
    if kernel > input {
        return Err(Error::SpatialUnderflow { kernel, input });
    }
    Ok((input - kernel) / stride + 1)
}

fn conv_forward(c: &Conv, input: &Tensor3, out: Shape) -> Tensor3 {
    let k_len = c.kernel_h * c.kernel_w * c.in_channels;
    let values: Vec<f64> = (0..out.height)
        .into_par_iter()
        .flat_map_iter(|oy| {
            (0..out.width).flat_map(move |ox| {
                (0..c.out_channels).map(move |o| {
                    let kernel = &c.weights[o * k_len..(o + 1) * k_len];
                    let mut acc = c.bias[o];
                    for ky in 0..c.kernel_h {
                        let y = oy * c.stride + ky;
                        for kx in 0..c.kernel_w {
                            let x = ox * c.stride + kx;
                            let k = &kernel[(ky * c.kernel_w + kx) * c.in_channels..][..c.in_channels];
                            acc += k.iter().zip(input.pixel(y, x)).map(|(w, v)| w * v).sum::<f64>();
                        }
                    }
                    acc
                })
            })
        })
        .collect();
    Tensor3 {
        height: out.height,
        width: out.width,
        channels: out.channels,
        values,
    }
}

fn pool_forward(window: usize, stride: usize, input: &Tensor3, out: Shape) -> Tensor3 {
    let mut values = Vec::with_capacity(out.len());
    for oy in 0..out.height {
        for ox in 0..out.width {
            for c in 0..out.channels {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..window {
                    for kx in 0..window {
                        m = m.max(input.at(oy * stride + ky, ox * stride + kx, c));
                    }
                }
                values.push(m);
            }
        }
    }
    Tensor3 {
        height: out.height,
        width: out.width,
        channels: out.channels,
        values,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SmallNet {
    pub layers: Vec<Layer>,
}

impl SmallNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for l in &layers {
            check_params(l)?;
        }
        Ok(Self { layers })
    }

    pub fn forward(&self, input: &Tensor3) -> Result<Tensor3> {
        let mut t = input.clone();
        for l in &self.layers {
            t = l.forward(&t)?;
        }
        Ok(t)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.layers.iter().try_fold(input, |s, l| l.output_shape(s))
    }

    /// All weights and biases in layer order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    out.extend(&c.weights);
                    out.extend(&c.bias);
                }
                Layer::Dense(d) => {
                    out.extend(&d.weights);
                    out.extend(&d.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("fusionkit-net 1\n");
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    let _ = writeln!(
                        out,
                        "conv {} {} {} {} {}",
                        c.kernel_h, c.kernel_w, c.in_channels, c.out_channels, c.stride
                    );
                    let _ = writeln!(out, "{}", join(&c.weights));
                    let _ = writeln!(out, "{}", join(&c.bias));
                }
                Layer::MaxPool { window, stride } => {
                    let _ = writeln!(out, "maxpool {window} {stride}");
                }
                Layer::Relu => out.push_str("relu\n"),
                Layer::Dense(d) => {
                    let _ = writeln!(out, "fc {} {}", d.in_dim, d.out_dim);
                    let _ = writeln!(out, "{}", join(&d.weights));
                    let _ = writeln!(out, "{}", join(&d.bias));
                }
                Layer::ChannelSoftmax => out.push_str("softmax\n"),
            }
        }
        out
    }

    /// Parses the plain-text layer list written by [`SmallNet::to_text`]:
    /// a `fusionkit-net 1` line, then one line per layer, with `conv` and `fc`
    /// followed by a weight line and a bias line.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, "fusionkit-net 1")) => {}
            Some((ln, _)) => return Err(Error::parse(path, ln, "expected `fusionkit-net 1`")),
            None => return Err(Error::parse(path, 1, "empty net file")),
        }
        let ints = |ln: usize, parts: &[&str], n: usize| -> Result<Vec<usize>> {
            if parts.len() != n {
                return Err(Error::parse(path, ln, format!("expected {n} integers")));
            }
            parts
                .iter()
                .map(|p| p.parse().map_err(|_| Error::parse(path, ln, format!("bad integer `{p}`"))))
                .collect()
        };
        let mut layers = Vec::new();
        while let Some((ln, line)) = lines.next() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let mut floats = |len: usize| -> Result<Vec<f64>> {
                let (ln, line) = lines
                    .next()
                    .ok_or_else(|| Error::parse(path, ln, "missing parameter line"))?;
                let v: Vec<f64> = line
                    .split_whitespace()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(path, ln, e.to_string()))?;
                if v.len() != len {
                    return Err(Error::parse(path, ln, format!("expected {len} values, got {}", v.len())));
                }
                Ok(v)
            };
            let layer = match parts[0] {
                "conv" => {
                    let d = ints(ln, &parts[1..], 5)?;
                    let weights = floats(d[0] * d[1] * d[2] * d[3])?;
                    let bias = floats(d[3])?;
                    Layer::Conv(Conv {
                        kernel_h: d[0],
                        kernel_w: d[1],
                        in_channels: d[2],
                        out_channels: d[3],
                        stride: d[4],
                        weights,
                        bias,
                    })
                }
                "maxpool" => {
                    let d = ints(ln, &parts[1..], 2)?;
                    Layer::MaxPool {
                        window: d[0],
                        stride: d[1],
                    }
                }
                "relu" => Layer::Relu,
                "softmax" => Layer::ChannelSoftmax,
                "fc" => {
                    let d = ints(ln, &parts[1..], 2)?;
                    let weights = floats(d[0] * d[1])?;
                    let bias = floats(d[1])?;
                    Layer::Dense(Dense {
                        in_dim: d[0],
                        out_dim: d[1],
                        weights,
                        bias,
                    })
                }
                other => return Err(Error::parse(path, ln, format!("unknown layer `{other}`"))),
            };
            check_params(&layer).map_err(|e| Error::parse(path, ln, e.to_string()))?;
            layers.push(layer);
        }
        Ok(Self { layers })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn check_params(layer: &Layer) -> Result<()> {
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    match layer {
        Layer::Conv(c) => {
            if c.stride == 0 || c.kernel_h == 0 || c.kernel_w == 0 {
                return Err(Error::Shape("conv kernel and stride must be positive".into()));
            }
            if c.weights.len() != c.kernel_h * c.kernel_w * c.in_channels * c.out_channels
                || c.bias.len() != c.out_channels
            {
                return Err(Error::Shape("conv parameter count mismatch".into()));
            }
            if !finite(&c.weights) || !finite(&c.bias) {
                return Err(Error::Shape("non-finite conv parameter".into()));
            }
        }
        Layer::Dense(d) => {
            if d.weights.len() != d.in_dim * d.out_dim || d.bias.len() != d.out_dim {
                return Err(Error::Shape("fc parameter count mismatch".into()));
            }
            if !finite(&d.weights) || !finite(&d.bias) {
                return Err(Error::Shape("non-finite fc parameter".into()));
            }
        }
        Layer::MaxPool { window, stride } if *window == 0 || *stride == 0 => {
            return Err(Error::Shape("pool window and stride must be positive".into()));
        }
        _ => {}
    }
    Ok(())
}

/// Rewrites every dense layer as a convolution. The first dense layer becomes
/// a kernel covering its whole input at `canonical` size; later ones become
/// 1×1 convolutions. Weight values are carried over unchanged.
pub fn fc_to_conv(net: &SmallNet, canonical: Shape) -> Result<SmallNet> {
    let mut shape = canonical;
    let mut layers = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let converted = match layer {
            Layer::Dense(d) => {
                if shape.len() != d.in_dim {
                    return Err(Error::Shape(format!(
                        "layer {i}: fc expects {} inputs but the canonical input yields {}x{}x{}",
                        d.in_dim, shape.height, shape.width, shape.channels
                    )));
                }
                Layer::Conv(Conv {
                    kernel_h: shape.height,
                    kernel_w: shape.width,
                    in_channels: shape.channels,
                    out_channels: d.out_dim,
                    stride: 1,
                    weights: d.weights.clone(),
                    bias: d.bias.clone(),
                })
            }
            other => other.clone(),
        };
        shape = layer
            .output_shape(shape)
            .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.name())))?;
        layers.push(converted);
    }
    Ok(SmallNet { layers })
}

/// Two-channel per-location probability map from a converted network.
pub fn heatmap(net: &SmallNet, image: &Tensor3) -> Result<Tensor3> {
    if net.layers.iter().any(|l| matches!(l, Layer::Dense(_))) {
        return Err(Error::Shape("heatmap needs a fully convolutional net; run fc_to_conv first".into()));
    }
    if !matches!(net.layers.last(), Some(Layer::ChannelSoftmax)) {
        return Err(Error::Shape("net must end with a channel softmax".into()));
    }
    let out = net.forward(image)?;
    if out.channels != 2 {
        return Err(Error::Shape(format!("terminal layer has {} channels, expected 2", out.channels)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_1x1(c: usize) -> Layer {
        let mut weights = vec![0.0; c * c];
        for i in 0..c {
            weights[i * c + i] = 1.0;
        }
        Layer::Conv(Conv {
            kernel_h: 1,
            kernel_w: 1,
            in_channels: c,
            out_channels: c,
            stride: 1,
            weights,
            bias: vec![0.0; c],
        })
    }

    #[test]
    fn identity_conv() {
        let t = Tensor3::new(2, 3, 2, (0..12).map(|v| v as f64).collect()).unwrap();
        let net = SmallNet::new(vec![identity_1x1(2)]).unwrap();
        assert_eq!(net.forward(&t).unwrap(), t);
    }

    #[test]
    fn pool_on_constant() {
        let t = Tensor3::new(4, 4, 1, vec![3.5; 16]).unwrap();
        let out = Layer::MaxPool { window: 2, stride: 2 }.forward(&t).unwrap();
        assert_eq!(out, Tensor3::new(2, 2, 1, vec![3.5; 4]).unwrap());
    }

    #[test]
    fn kernel_larger_than_input() {
        let t = Tensor3::zeros(2, 2, 1);
        let l = Layer::MaxPool { window: 3, stride: 1 };
        assert!(matches!(l.forward(&t), Err(Error::SpatialUnderflow { kernel: 3, input: 2 })));
    }

    #[test]
    fn single_fc_becomes_1x1() {
        let d = Dense {
            in_dim: 3,
            out_dim: 2,
            weights: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            bias: vec![0.5, -0.5],
        };
        let net = SmallNet::new(vec![Layer::Dense(d.clone())]).unwrap();
        let conv = fc_to_conv(&net, "1x1x3".parse().unwrap()).unwrap();
        match &conv.layers[0] {
            Layer::Conv(c) => {
                assert_eq!((c.kernel_h, c.kernel_w, c.in_channels, c.out_channels), (1, 1, 3, 2));
                assert_eq!(c.weights, d.weights);
                assert_eq!(c.bias, d.bias);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fc_with_wrong_canonical_is_rejected() {
        let net = SmallNet::new(vec![Layer::Dense(Dense {
            in_dim: 4,
            out_dim: 1,
            weights: vec![0.0; 4],
            bias: vec![0.0],
        })])
        .unwrap();
        assert!(fc_to_conv(&net, "1x1x3".parse().unwrap()).is_err());
        let pooled = SmallNet::new(vec![Layer::MaxPool { window: 5, stride: 1 }, net.layers[0].clone()]).unwrap();
        assert!(fc_to_conv(&pooled, "2x2x1".parse().unwrap()).is_err());
    }

    #[test]
    fn heatmap_requires_two_channel_softmax() {
        let net = SmallNet::new(vec![identity_1x1(3), Layer::ChannelSoftmax]).unwrap();
        assert!(heatmap(&net, &Tensor3::zeros(2, 2, 3)).is_err());
        let net = SmallNet::new(vec![identity_1x1(2)]).unwrap();
        assert!(heatmap(&net, &Tensor3::zeros(2, 2, 2)).is_err());
        let net = SmallNet::new(vec![identity_1x1(2), Layer::ChannelSoftmax]).unwrap();
        let h = heatmap(&net, &Tensor3::zeros(2, 2, 2)).unwrap();
        assert!(h.values.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shape_parsing() {
        assert_eq!(
            "8x6x3".parse::<Shape>().unwrap(),
            Shape {
                height: 8,
                width: 6,
                channels: 3
            }
        );
        assert!("8x6".parse::<Shape>().is_err());
        assert!("0x6x3".parse::<Shape>().is_err());
    }

    #[test]
    fn text_roundtrip() {
        let net = SmallNet::new(vec![
            Layer::Conv(Conv {
                kernel_h: 2,
                kernel_w: 1,
                in_channels: 1,
                out_channels: 2,
                stride: 1,
                weights: vec![0.1, -0.2, 0.3, 0.25],
                bias: vec![0.0, 1.5],
            }),
            Layer::Relu,
            Layer::MaxPool { window: 2, stride: 1 },
            Layer::Dense(Dense {
                in_dim: 2,
                out_dim: 2,
                weights: vec![1.0, 0.0, 0.0, 1.0],
                bias: vec![0.0, 0.0],
            }),
            Layer::ChannelSoftmax,
        ])
        .unwrap();
        assert_eq!(SmallNet::from_text(&net.to_text(), Path::new("mem")).unwrap(), net);
    }
}
