//! Layer graphs for the encoder-decoder FCN and the per-pixel spectral MLP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    /// Divide each pixel's spectrum by its sum.
    BandNorm,
    /// `(x - mean) / std` per channel.
    ZScore,
    /// Stride-1 zero-padded ("same") convolution with a square odd kernel.
    Conv {
        kernel: usize,
    },
    BatchNorm,
    Relu,
    Tanh,
    MaxPool2,
    /// Transposed convolution, kernel 2, stride 2.
    UpConv2,
    Concat,
    Dropout {
        rate: f32,
    },
    /// Fully connected over channels, applied independently at every pixel.
    Dense,
    Softmax,
}

impl LayerKind {
    pub fn short_name(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::BandNorm => "band_norm",
            LayerKind::ZScore => "zscore",
            LayerKind::Conv { kernel: 1 } => "conv1",
            LayerKind::Conv { kernel: 3 } => "conv3",
            LayerKind::Conv { .. } => "conv",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::Tanh => "tanh",
            LayerKind::MaxPool2 => "maxpool2",
            LayerKind::UpConv2 => "upconv2",
            LayerKind::Concat => "concat",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Dense => "dense",
            LayerKind::Softmax => "softmax",
        }
    }

    /// Layers with a multiply-accumulate kernel.
    pub fn is_linear(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::UpConv2 | LayerKind::Dense)
    }

    pub fn is_spatial(&self) -> bool {
        match self {
            LayerKind::Conv { kernel } => *kernel > 1,
            LayerKind::MaxPool2 | LayerKind::UpConv2 => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    /// Indices of producing layers; always smaller than this layer's index.
    pub inputs: Vec<usize>,
    pub in_ch: usize,
    pub out_ch: usize,
}

/// One learnable or stored tensor of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Whether the tensor counts towards the model's parameter total.
    pub counted: bool,
}

impl Layer {
    pub fn params(&self) -> Vec<ParamSpec> {
        let p = |suffix: &str, shape: Vec<usize>, trainable, counted| ParamSpec {
            name: format!("{}.{suffix}", self.name),
            shape,
            trainable,
            counted,
        };
        let (i, o) = (self.in_ch, self.out_ch);
        match self.kind {
            LayerKind::Conv { kernel: k } => {
                vec![p("weight", vec![o, k, k, i], true, true), p("bias", vec![o], true, true)]
            }
            LayerKind::UpConv2 => {
                vec![p("weight", vec![o, 2, 2, i], true, true), p("bias", vec![o], true, true)]
            }
            LayerKind::Dense => {
                vec![p("weight", vec![o, i], true, true), p("bias", vec![o], true, true)]
            }
            LayerKind::BatchNorm => vec![
                p("gamma", vec![o], true, true),
                p("beta", vec![o], true, true),
                p("mean", vec![o], false, true),
                p("var", vec![o], false, true),
            ],
            LayerKind::ZScore => {
                vec![p("mean", vec![o], false, false), p("std", vec![o], false, false)]
            }
            _ => Vec::new(),
        }
    }
}

/// Hyperparameters of the encoder-decoder FCN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Square input patch side.
    pub patch_size: usize,
    pub encoder_depth: usize,
    pub initial_filters: usize,
    pub conv_kernel: usize,
    pub upconv_kernel: usize,
    pub in_channels: usize,
    pub classes: usize,
    pub dropout_rate: f32,
    /// Add a z-score layer after the band-sum normalization.
    #[serde(default)]
    pub zscore_input: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            patch_size: 128,
            encoder_depth: 2,
            initial_filters: 8,
            conv_kernel: 3,
            upconv_kernel: 2,
            in_channels: 25,
            classes: 3,
            dropout_rate: 0.5,
            zscore_input: false,
        }
    }
}

impl UNetConfig {
    pub fn with_classes(classes: usize) -> Self {
        UNetConfig { classes, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.encoder_depth == 0 {
            return bad("encoder depth must be at least 1".into());
        }
        if self.patch_size == 0 || self.initial_filters == 0 || self.in_channels == 0 || self.classes == 0 {
            return bad("patch size, filters, channels and classes must be positive".into());
        }
        if self.encoder_depth >= usize::BITS as usize || !self.patch_size.is_multiple_of(1usize << self.encoder_depth) {
            return bad(format!("patch size {} is not divisible by 2^{}", self.patch_size, self.encoder_depth));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return bad(format!("conv kernel {} must be odd", self.conv_kernel));
        }
        if self.upconv_kernel != 2 {
            return bad(format!("up-conv kernel {} unsupported; stride-2 doubling needs kernel 2", self.upconv_kernel));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} not in [0, 1)", self.dropout_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Unet(UNetConfig),
    Mlp { in_channels: usize, classes: usize },
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub architecture: Architecture,
    /// `(h, w, c)` the graph was built for. Graphs without spatial layers
    /// accept any `h x w`.
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<Layer>,
}

/// Incremental graph construction.
#[derive(Debug)]
pub struct GraphBuilder {
    layers: Vec<Layer>,
}

impl GraphBuilder {
    pub fn new(channels: usize) -> Self {
        GraphBuilder {
            layers: vec![Layer {
                name: "input".into(),
                kind: LayerKind::Input,
                inputs: vec![],
                in_ch: channels,
                out_ch: channels,
            }],
        }
    }

    pub fn last(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn channels(&self, node: usize) -> usize {
        self.layers[node].out_ch
    }

    /// Appends a single-input layer fed by `from`.
    pub fn push(&mut self, name: impl Into<String>, kind: LayerKind, from: usize, out_ch: usize) -> usize {
        let in_ch = self.layers[from].out_ch;
        self.layers.push(Layer { name: name.into(), kind, inputs: vec![from], in_ch, out_ch });
        self.last()
    }

    /// Appends a channel-preserving layer after the current last node.
    pub fn then(&mut self, name: impl Into<String>, kind: LayerKind) -> usize {
        let from = self.last();
        let ch = self.channels(from);
        self.push(name, kind, from, ch)
    }

    pub fn concat(&mut self, name: impl Into<String>, a: usize, b: usize) -> usize {
        let (ca, cb) = (self.channels(a), self.channels(b));
        self.layers.push(Layer {
            name: name.into(),
            kind: LayerKind::Concat,
            inputs: vec![a, b],
            in_ch: ca + cb,
            out_ch: ca + cb,
        });
        self.last()
    }

    pub fn finish(self, architecture: Architecture, input_shape: (usize, usize, usize)) -> Result<ModelGraph> {
        let g = ModelGraph { architecture, input_shape, layers: self.layers };
        g.validate()?;
        Ok(g)
    }
}

/// Builds the encoder-decoder FCN: band normalization, `ed` encoder levels
/// of two conv-BN-ReLU blocks plus max-pooling, a two-block bridge, dropout,
/// `ed` decoder levels (up-conv, skip concat, two conv-BN-ReLU blocks), a 1x1
/// head and softmax.
pub fn build_unet(cfg: &UNetConfig) -> Result<ModelGraph> {
    cfg.validate()?;
    let k = cfg.conv_kernel;
    let mut g = GraphBuilder::new(cfg.in_channels);
    g.then("norm", LayerKind::BandNorm);
    if cfg.zscore_input {
        g.then("zscore", LayerKind::ZScore);
    }

    let block = |g: &mut GraphBuilder, prefix: &str, filters: usize| -> usize {
        for i in 0..2 {
            let from = g.last();
            g.push(format!("{prefix}.conv{i}"), LayerKind::Conv { kernel: k }, from, filters);
            g.then(format!("{prefix}.bn{i}"), LayerKind::BatchNorm);
            g.then(format!("{prefix}.relu{i}"), LayerKind::Relu);
        }
        g.last()
    };

    let mut skips = Vec::with_capacity(cfg.encoder_depth);
    for level in 0..cfg.encoder_depth {
        let filters = cfg.initial_filters << level;
        let prefix = format!("enc{level}");
        skips.push(block(&mut g, &prefix, filters));
        g.then(format!("{prefix}.pool"), LayerKind::MaxPool2);
    }
    block(&mut g, "bridge", cfg.initial_filters << cfg.encoder_depth);
    g.then("dropout", LayerKind::Dropout { rate: cfg.dropout_rate });

    for level in (0..cfg.encoder_depth).rev() {
        let filters = cfg.initial_filters << level;
        let prefix = format!("dec{level}");
        let from = g.last();
        let up = g.push(format!("{prefix}.upconv"), LayerKind::UpConv2, from, filters);
        g.concat(format!("{prefix}.concat"), up, skips[level]);
        block(&mut g, &prefix, filters);
    }
    let from = g.last();
    g.push("head.conv", LayerKind::Conv { kernel: 1 }, from, cfg.classes);
    g.then("softmax", LayerKind::Softmax);
    g.finish(Architecture::Unet(*cfg), (cfg.patch_size, cfg.patch_size, cfg.in_channels))
}

/// Hidden widths of the spectral MLP.
pub const MLP_HIDDEN: [usize; 3] = [25, 100, 100];

/// Per-pixel classifier: band-sum normalization, z-score, three tanh hidden
/// layers of widths 25/100/100 and a softmax output.
pub fn build_mlp(in_channels: usize, classes: usize) -> Result<ModelGraph> {
    if in_channels == 0 {
        return Err(Error::InvalidConfig("MLP needs at least one input channel".into()));
    }
    if classes < 2 {
        return Err(Error::InvalidConfig(format!("MLP needs at least 2 classes, got {classes}")));
    }
    let mut g = GraphBuilder::new(in_channels);
    g.then("norm", LayerKind::BandNorm);
    g.then("zscore", LayerKind::ZScore);
    for (i, &width) in MLP_HIDDEN.iter().enumerate() {
        let from = g.last();
        g.push(format!("fc{i}"), LayerKind::Dense, from, width);
        g.then(format!("act{i}"), LayerKind::Tanh);
    }
    let from = g.last();
    g.push(format!("fc{}", MLP_HIDDEN.len()), LayerKind::Dense, from, classes);
    g.then("softmax", LayerKind::Softmax);
    g.finish(Architecture::Mlp { in_channels, classes }, (1, 1, in_channels))
}

impl ModelGraph {
    pub fn output(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn in_channels(&self) -> usize {
        self.input_shape.2
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.output()].out_ch
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// True when no layer mixes neighbouring pixels.
    pub fn is_pointwise(&self) -> bool {
        !self.layers.iter().any(|l| l.kind.is_spatial())
    }

    pub fn count_kind(&self, pred: impl Fn(&LayerKind) -> bool) -> usize {
        self.layers.iter().filter(|l| pred(&l.kind)).count()
    }

    /// `(encoder output, decoder concat)` pairs.
    pub fn skip_edges(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind == LayerKind::Concat)
            .flat_map(|(i, l)| l.inputs.iter().skip(1).map(move |&src| (src, i)))
            .collect()
    }

    /// Number of layers consuming each layer's output.
    pub fn consumers(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.layers.len()];
        for (i, l) in self.layers.iter().enumerate() {
            for &src in &l.inputs {
                out[src].push(i);
            }
        }
        out
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    /// Output shape of every layer for the given input shape.
    pub fn infer_shapes(&self, input: (usize, usize, usize)) -> Result<Vec<(usize, usize, usize)>> {
        let mut shapes: Vec<(usize, usize, usize)> = Vec::with_capacity(self.layers.len());
        for (idx, l) in self.layers.iter().enumerate() {
            let err = |m: String| Error::Structure(format!("layer `{}`: {m}", l.name));
            if l.inputs.iter().any(|&i| i >= idx) {
                return Err(err("input does not precede the layer".into()));
            }
            let arity = match l.kind {
                LayerKind::Input => 0,
                LayerKind::Concat => 2,
                _ => 1,
            };
            if l.inputs.len() != arity {
                return Err(err(format!("expected {arity} inputs, got {}", l.inputs.len())));
            }
            let shape = match l.kind {
                LayerKind::Input => {
                    if input.2 != l.out_ch {
                        return Err(Error::ShapeMismatch(format!(
                            "input has {} channels, graph expects {}",
                            input.2, l.out_ch
                        )));
                    }
                    input
                }
                LayerKind::Concat => {
                    let (a, b) = (shapes[l.inputs[0]], shapes[l.inputs[1]]);
                    if (a.0, a.1) != (b.0, b.1) {
                        return Err(err(format!("concat of {a:?} and {b:?}")));
                    }
                    (a.0, a.1, a.2 + b.2)
                }
                _ => {
                    let s = shapes[l.inputs[0]];
                    if s.2 != l.in_ch {
                        return Err(err(format!("expects {} channels, gets {}", l.in_ch, s.2)));
                    }
                    match l.kind {
                        LayerKind::MaxPool2 => {
                            if !s.0.is_multiple_of(2) || !s.1.is_multiple_of(2) {
                                return Err(err(format!("cannot pool odd map {}x{}", s.0, s.1)));
                            }
                            (s.0 / 2, s.1 / 2, s.2)
                        }
                        LayerKind::UpConv2 => (s.0 * 2, s.1 * 2, l.out_ch),
                        LayerKind::Conv { kernel } if kernel % 2 == 0 => {
                            return Err(err(format!("even kernel {kernel}")));
                        }
                        _ => (s.0, s.1, l.out_ch),
                    }
                }
            };
            if !l.kind.is_linear() && !matches!(l.kind, LayerKind::Concat) && l.in_ch != l.out_ch {
                return Err(err("channel-preserving layer changes width".into()));
            }
            if l.kind == LayerKind::Concat && l.out_ch != shape.2 {
                return Err(err("concat width mismatch".into()));
            }
            shapes.push(shape);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.first().map(|l| &l.kind) != Some(&LayerKind::Input) {
            return Err(Error::Structure("first layer must be the input".into()));
        }
        if self.layers.iter().skip(1).any(|l| l.kind == LayerKind::Input) {
            return Err(Error::Structure("more than one input layer".into()));
        }
        self.infer_shapes(self.input_shape).map(|_| ())
    }

    /// Checks that an input of the given shape is acceptable.
    pub fn check_input(&self, shape: (usize, usize, usize)) -> Result<()> {
        let (h, w, c) = self.input_shape;
        if shape.2 != c {
            return Err(Error::ShapeMismatch(format!("input has {} channels, model expects {c}", shape.2)));
        }
        if !self.is_pointwise() && (shape.0, shape.1) != (h, w) {
            return Err(Error::ShapeMismatch(format!("input is {}x{}, model expects {h}x{w}", shape.0, shape.1)));
        }
        Ok(())
    }
}
