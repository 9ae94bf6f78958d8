//! Encoder, attention, decoder and the three prediction heads.
//!
//! Parameters live in a [`ParamStore`]; a forward pass binds them to a
//! [`Tape`] with [`ParamStore::bind`] and threads the resulting variables
//! through [`Network::forward`].

mod attention;
mod layers;
mod params;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use attention::AttentionTrace;
pub use layers::Normalization;
pub use params::{Param, ParamGroup, ParamStore};

use attention::Attention;
use layers::{Conv, ConvRelu, ResidualBlock};
use params::Builder;

use crate::tensor::{ShapeError, Tape, Var};

/// Output stride of the decoder and of the center/size heads.
pub const OUTPUT_STRIDE: usize = 4;
/// Stride of the backbone feature fed to attention.
pub const BACKBONE_STRIDE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// (H, W) of the input image.
    pub input_size: [usize; 2],
    pub base_channels: usize,
    pub latent_dim: usize,
    /// Downsampling factor of each residual stage; must multiply to 16.
    pub stage_strides: Vec<usize>,
    pub blocks_per_stage: usize,
    pub decoder_channels: usize,
    pub head_channels: usize,
    pub attention: bool,
    pub attention_reduction: usize,
    /// Initial pre-sigmoid value of both attention gates.
    pub gate_bias: f64,
    pub normalization: Normalization,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: [64, 64],
            base_channels: 8,
            latent_dim: 64,
            stage_strides: vec![2, 2, 2, 2],
            blocks_per_stage: 2,
            decoder_channels: 32,
            head_channels: 16,
            attention: true,
            attention_reduction: 4,
            gate_bias: 6.0,
            normalization: Normalization::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("input size {h}x{w} is not divisible by {BACKBONE_STRIDE}")]
    InputSize { h: usize, w: usize },
    #[error("invalid network config: {0}")]
    Config(alloc::string::String),
    #[error("decoder skip {stage}: expected shape {expected:?}, got {got:?}")]
    SkipShape { stage: usize, expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let [h, w] = self.input_size;
        if h == 0 || w == 0 || h % BACKBONE_STRIDE != 0 || w % BACKBONE_STRIDE != 0 {
            return Err(ModelError::InputSize { h, w });
        }
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.stage_strides.iter().any(|&s| s != 1 && s != 2) {
            return bad("stage strides must be 1 or 2");
        }
        if self.stage_strides.iter().product::<usize>() != BACKBONE_STRIDE {
            return bad("stage strides must multiply to 16");
        }
        if self.skip_stages().is_none() {
            return bad("no stages end at strides 8 and 4 for the decoder skips");
        }
        if [self.base_channels, self.latent_dim, self.decoder_channels, self.head_channels, self.blocks_per_stage]
            .contains(&0)
        {
            return bad("channel counts and blocks_per_stage must be positive");
        }
        if self.attention && self.attention_reduction == 0 {
            return bad("attention_reduction must be positive");
        }
        if let Normalization::Group { groups } = self.normalization {
            let widths = (0..self.stage_strides.len()).map(|i| self.stage_width(i));
            if groups == 0 || widths.chain([self.base_channels]).any(|c| c % groups != 0) {
                return bad("group count must divide every backbone width");
            }
        }
        Ok(())
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.base_channels << stage.min(3)
    }

    /// Indices of the last stages whose cumulative stride is 8 and 4.
    fn skip_stages(&self) -> Option<[usize; 2]> {
        let mut cum = 1;
        let (mut s8, mut s4) = (None, None);
        for (i, &s) in self.stage_strides.iter().enumerate() {
            cum *= s;
            if cum == 8 {
                s8 = Some(i);
            }
            if cum == 4 {
                s4 = Some(i);
            }
        }
        Some([s8?, s4?])
    }
}

/// Output variables of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct NetworkOutput {
    /// B×1×H×W, after the fixed bilinear ×4 resize.
    pub seg_logits: Var,
    /// B×1×(H/4)×(W/4)
    pub center_logits: Var,
    /// B×2×(H/4)×(W/4), box (w, h) in input pixels.
    pub size_pred: Var,
}

/// Per-stage backbone features and the projected latent map.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub stages: Vec<Var>,
    pub latent: Var,
}

#[derive(Debug, Clone, Copy)]
struct Head {
    c1: ConvRelu,
    c2: ConvRelu,
    out: Conv,
}

impl Head {
    fn new(b: &mut Builder, name: &str, cin: usize, hidden: usize, cout: usize, bias: f64) -> Self {
        let n = Normalization::None;
        Self {
            c1: ConvRelu::new(b, &format!("{name}.conv1"), cin, hidden, 1, n),
            c2: ConvRelu::new(b, &format!("{name}.conv2"), hidden, hidden, 1, n),
            out: Conv::new(b, &format!("{name}.out"), hidden, cout, 1, 1, 0.1, Some(bias)),
        }
    }

    fn apply(&self, t: &mut Tape, p: &[Var], u: Var) -> Result<Var, ShapeError> {
        let h = self.c1.apply(t, p, u)?;
        let h = self.c2.apply(t, p, h)?;
        self.out.apply(t, p, h)
    }
}

/// The full detection and segmentation network.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    stem: ConvRelu,
    stages: Vec<Vec<ResidualBlock>>,
    projection: Conv,
    attention: Option<Attention>,
    skip_stages: [usize; 2],
    dec_in: ConvRelu,
    skip_proj: [Conv; 2],
    dec_fuse: [ConvRelu; 2],
    center: Head,
    size: Head,
    seg: Head,
}

/// Initial center-head bias: sigmoid(ln(1/9)) = 0.1.
pub fn center_bias_init() -> f64 {
    libm::log(1.0 / 9.0)
}

impl Network {
    /// Build the network and its freshly initialized parameters.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<(Self, ParamStore), ModelError> {
        config.validate()?;
        let norm = config.normalization;
        let mut b = Builder::new(seed);
        let stem = ConvRelu::new(&mut b, "stem", 1, config.base_channels, 1, norm);
        let mut cin = config.base_channels;
        let mut stages = Vec::new();
        for (si, &stride) in config.stage_strides.iter().enumerate() {
            let cout = config.stage_width(si);
            let blocks = (0..config.blocks_per_stage)
                .map(|bi| {
                    let (c, s) = if bi == 0 { (cin, stride) } else { (cout, 1) };
                    ResidualBlock::new(&mut b, &format!("stage{}.block{bi}", si + 1), c, cout, s, norm)
                })
                .collect();
            stages.push(blocks);
            cin = cout;
        }
        let projection =
            Conv::new(&mut b, "projection", cin, config.latent_dim, 3, 1, 1.0 / libm::sqrt(2.0), Some(0.0));
        let attention = config
            .attention
            .then(|| Attention::new(&mut b, config.latent_dim, config.attention_reduction, config.gate_bias));

        let skip_stages = config.skip_stages().expect("validated");
        let d = config.decoder_channels;
        let dec_in = ConvRelu::new(&mut b, "decoder.in", config.latent_dim, d, 1, Normalization::None);
        let mut skip_proj = Vec::new();
        let mut dec_fuse = Vec::new();
        for (k, &s) in skip_stages.iter().enumerate() {
            let w = config.stage_width(s);
            skip_proj.push(Conv::new(
                &mut b,
                &format!("decoder.skip{k}"),
                w,
                d,
                1,
                1,
                1.0 / libm::sqrt(2.0),
                Some(0.0),
            ));
            dec_fuse.push(ConvRelu::new(&mut b, &format!("decoder.fuse{k}"), d, d, 1, Normalization::None));
        }

        let hc = config.head_channels;
        b.group = ParamGroup::Detection;
        let center = Head::new(&mut b, "head.center", d, hc, 1, center_bias_init());
        let size = Head::new(&mut b, "head.size", d, hc, 2, 0.0);
        b.group = ParamGroup::Segmentation;
        let seg = Head::new(&mut b, "head.seg", d, hc, 1, 0.0);

        let net = Self {
            config,
            stem,
            stages,
            projection,
            attention,
            skip_stages,
            dec_in,
            skip_proj: [skip_proj[0], skip_proj[1]],
            dec_fuse: [dec_fuse[0], dec_fuse[1]],
            center,
            size,
            seg,
        };
        Ok((net, b.store))
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn check_input(&self, t: &Tape, image: Var) -> Result<(), ModelError> {
        let s = t.shape(image);
        let [h, w] = self.config.input_size;
        if s.len() != 4 || s[1] != 1 || s[2] != h || s[3] != w {
            return Err(ModelError::Config(format!("input shape {s:?} does not match configured B×1×{h}×{w}")));
        }
        Ok(())
    }

    /// Backbone features F at stride 16, plus every stage output.
    pub fn encode(&self, t: &mut Tape, p: &[Var], image: Var) -> Result<Encoded, ModelError> {
        self.check_input(t, image)?;
        let mut x = self.stem.apply(t, p, image)?;
        let mut outs = Vec::with_capacity(self.stages.len());
        for blocks in &self.stages {
            for blk in blocks {
                x = blk.apply(t, p, x)?;
            }
            outs.push(x);
        }
        let latent = self.projection.apply(t, p, x)?;
        Ok(Encoded { stages: outs, latent })
    }

    /// F′; identity when attention is disabled.
    pub fn attend(&self, t: &mut Tape, p: &[Var], f: Var) -> Result<Var, ModelError> {
        match &self.attention {
            Some(a) => Ok(a.trace(t, p, f)?.output),
            None => Ok(f),
        }
    }

    pub fn attention_trace(&self, t: &mut Tape, p: &[Var], f: Var) -> Result<Option<AttentionTrace>, ModelError> {
        self.attention.as_ref().map(|a| a.trace(t, p, f)).transpose().map_err(Into::into)
    }

    /// The encoder features feeding the decoder skips, ordered /8 then /4.
    pub fn skips(&self, enc: &Encoded) -> [Var; 2] {
        [enc.stages[self.skip_stages[0]], enc.stages[self.skip_stages[1]]]
    }

    /// U at stride 4 from F′ and the /8, /4 skips.
    pub fn decode(&self, t: &mut Tape, p: &[Var], f: Var, skips: &[Var]) -> Result<Var, ModelError> {
        let b = t.shape(f)[0];
        let [h, w] = self.config.input_size;
        if skips.len() != 2 {
            return Err(ModelError::Config(format!("decoder expects 2 skips, got {}", skips.len())));
        }
        let mut x = self.dec_in.apply(t, p, f)?;
        for (k, &skip) in skips.iter().enumerate() {
            let stride = BACKBONE_STRIDE >> (k + 1);
            let expected = vec![b, self.config.stage_width(self.skip_stages[k]), h / stride, w / stride];
            if t.shape(skip) != expected.as_slice() {
                return Err(ModelError::SkipShape { stage: k, expected, got: t.shape(skip).to_vec() });
            }
            let up = t.upsample_nearest(x, 2)?;
            let s = self.skip_proj[k].apply(t, p, skip)?;
            let fused = t.add(up, s)?;
            x = self.dec_fuse[k].apply(t, p, fused)?;
        }
        Ok(x)
    }

    pub fn heads(&self, t: &mut Tape, p: &[Var], u: Var) -> Result<NetworkOutput, ModelError> {
        let [h, w] = self.config.input_size;
        let center_logits = self.center.apply(t, p, u)?;
        let size_pred = self.size.apply(t, p, u)?;
        let seg_low = self.seg.apply(t, p, u)?;
        let seg_logits = t.resize_bilinear(seg_low, h, w)?;
        Ok(NetworkOutput { seg_logits, center_logits, size_pred })
    }

    pub fn forward(&self, t: &mut Tape, p: &[Var], image: Var) -> Result<NetworkOutput, ModelError> {
        let enc = self.encode(t, p, image)?;
        let f = self.attend(t, p, enc.latent)?;
        let skips = self.skips(&enc);
        let u = self.decode(t, p, f, &skips)?;
        self.heads(t, p, u)
    }
}
