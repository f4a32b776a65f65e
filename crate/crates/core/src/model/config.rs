use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conv::{make_layer_schedule, LayerScheduleEntry};
use crate::error::{Error, Result};
use crate::objectives::vocab::VOCAB_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConvVariant {
    #[serde(rename = "light", alias = "lightweight")]
    Light,
    #[serde(rename = "dynamic")]
    Dynamic,
    #[serde(rename = "dilated")]
    Dilated,
    #[serde(rename = "transformer-baseline", alias = "transformer")]
    Transformer,
}

impl ConvVariant {
    pub const ALL: [ConvVariant; 4] = [Self::Light, Self::Dynamic, Self::Dilated, Self::Transformer];

    pub fn name(self) -> &'static str {
        match self {
            Self::Light => "light",
            Self::Dynamic => "dynamic",
            Self::Dilated => "dilated",
            Self::Transformer => "transformer-baseline",
        }
    }

    pub fn is_conv(self) -> bool {
        self != Self::Transformer
    }
}

impl fmt::Display for ConvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConvVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "light" | "lightweight" => Ok(Self::Light),
            "dynamic" => Ok(Self::Dynamic),
            "dilated" => Ok(Self::Dilated),
            "transformer" | "transformer-baseline" => Ok(Self::Transformer),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected light, dynamic, dilated or transformer-baseline)"
            ))),
        }
    }
}

/// Architecture of an encoder-decoder model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Layers in the encoder and, separately, in the decoder.
    pub num_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub variant: ConvVariant,
    /// Unique kernel rows per lightweight or dynamic convolution.
    pub tying_heads: usize,
    /// Window width of every layer of the light and dynamic variants.
    pub window: usize,
    /// Tap stride of every convolution.
    pub dilation: usize,
    /// Adds one self-attention sublayer on top of a convolutional encoder.
    pub encoder_cross_attention: bool,
    pub max_target_len: usize,
    /// Dropout on sublayer outputs during training.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::mini(ConvVariant::Light)
    }
}

impl ModelConfig {
    /// 12 layers, width 768, 3072-wide feed-forward, 12 heads.
    pub fn base(variant: ConvVariant) -> Self {
        Self {
            num_layers: 12,
            d_model: 768,
            d_ff: 3072,
            num_heads: 12,
            ..Self::mini(variant)
        }
    }

    /// Two layers of width 8, used by tests and the desk-scale runs.
    pub fn mini(variant: ConvVariant) -> Self {
        Self {
            num_layers: 2,
            d_model: 8,
            d_ff: 16,
            num_heads: 2,
            vocab_size: VOCAB_SIZE,
            variant,
            tying_heads: 2,
            window: crate::conv::UNIFORM_WINDOW,
            dilation: 1,
            encoder_cross_attention: false,
            max_target_len: 512,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_layers == 0 || self.d_model == 0 || self.d_ff == 0 || self.vocab_size == 0 {
            return fail("num_layers, d_model, d_ff and vocab_size must be positive".into());
        }
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return fail(format!(
                "d_model={} is not divisible by num_heads={}",
                self.d_model, self.num_heads
            ));
        }
        if self.variant.is_conv() && (self.tying_heads == 0 || self.d_model % self.tying_heads != 0) {
            return fail(format!(
                "tying_heads={} does not divide d_model={}",
                self.tying_heads, self.d_model
            ));
        }
        if self.window == 0 || self.dilation == 0 || self.max_target_len == 0 {
            return fail("window, dilation and max_target_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout={} must lie in [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Kernel width and dilation of every encoder (and decoder) layer.
    pub fn layer_schedule(&self) -> Result<Vec<LayerScheduleEntry>> {
        let mut schedule = make_layer_schedule(self.variant, self.num_layers)?;
        for e in &mut schedule {
            if self.variant != ConvVariant::Dilated {
                e.width = self.window;
            }
            e.dilation = self.dilation;
        }
        Ok(schedule)
    }

    /// Whether the augmentation actually changes the model.
    pub fn has_encoder_cross_attention(&self) -> bool {
        self.encoder_cross_attention && self.variant.is_conv()
    }
}

/// Turns on the single encoder self-attention layer for two-segment inputs.
pub fn enable_encoder_cross_attention(mut config: ModelConfig) -> ModelConfig {
    if !config.variant.is_conv() {
        log::warn!("encoder cross-attention is a no-op on the transformer baseline");
    }
    config.encoder_cross_attention = true;
    config
}
