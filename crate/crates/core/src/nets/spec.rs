use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorFamily {
    Unet,
    Resnet9,
}

impl GeneratorFamily {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorFamily::Unet => "unet",
            GeneratorFamily::Resnet9 => "resnet9",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    #[default]
    None,
    #[serde(rename = "self")]
    SelfAttention,
    Cbam,
}

impl Attention {
    pub fn name(self) -> &'static str {
        match self {
            Attention::None => "none",
            Attention::SelfAttention => "self",
            Attention::Cbam => "cbam",
        }
    }
}

impl std::str::FromStr for Attention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Attention::None, Attention::SelfAttention, Attention::Cbam]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "attention",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub family: GeneratorFamily,
    /// Raw geometry channels (mask, optionally height).
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_filters: usize,
    /// Number of down-sampling blocks (U-Net only).
    pub depth: usize,
    pub dropout_p: f64,
    pub attention: Attention,
    /// Decoder blocks carrying attention, counted from 1 at the innermost.
    pub attention_placement: Vec<usize>,
    pub coordconv_first: bool,
    /// The data pipeline appends a normalized SDF channel.
    pub sdf_channel: bool,
}

impl GeneratorSpec {
    pub fn unet(in_channels: usize, out_channels: usize) -> Self {
        Self {
            family: GeneratorFamily::Unet,
            in_channels,
            out_channels,
            base_filters: 64,
            depth: 8,
            dropout_p: 0.5,
            attention: Attention::None,
            attention_placement: vec![5, 6],
            coordconv_first: false,
            sdf_channel: false,
        }
    }

    pub fn resnet9(in_channels: usize, out_channels: usize) -> Self {
        Self {
            family: GeneratorFamily::Resnet9,
            depth: 2,
            attention_placement: Vec::new(),
            ..Self::unet(in_channels, out_channels)
        }
    }

    /// Default U-Net attention placement: the two decoder blocks two and
    /// three levels above the innermost.
    pub fn default_placement(depth: usize) -> Vec<usize> {
        (depth.saturating_sub(3)..=depth.saturating_sub(2)).filter(|&k| k >= 1).collect()
    }

    /// Channels of the tensor handed to the model (geometry plus SDF).
    pub fn data_channels(&self) -> usize {
        self.in_channels + self.sdf_channel as usize
    }

    /// Channels seen by the first convolution.
    pub fn first_layer_channels(&self) -> usize {
        self.data_channels() + 2 * self.coordconv_first as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.in_channels == 0 || self.out_channels == 0 || self.base_filters == 0 {
            return bad("channel counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.family == GeneratorFamily::Unet {
            if !(1..=12).contains(&self.depth) {
                return bad(format!("U-Net depth {} outside 1..=12", self.depth));
            }
            let mut placed = self.attention_placement.iter().filter(|_| self.attention != Attention::None);
            if let Some(&k) = placed.find(|&&k| k == 0 || k > self.depth) {
                return bad(format!("attention block {k} outside 1..={}", self.depth));
            }
        } else if self.attention != Attention::None {
            return bad("the ResNet generator has no attention blocks".into());
        }
        Ok(())
    }

    /// Check that an `h x w` input fits the architecture.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let div = match self.family {
            GeneratorFamily::Unet => 1usize << self.depth,
            GeneratorFamily::Resnet9 => 4,
        };
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Shape(format!(
                "{} input {h}x{w} must be a positive multiple of {div}",
                self.family.name()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub base_filters: usize,
    pub n_layers: usize,
    pub spectral_norm: bool,
    pub attention: Attention,
    /// Conv blocks (1-based) followed by attention.
    pub attention_placement: Vec<usize>,
    pub coordconv_first: bool,
}

impl DiscriminatorSpec {
    pub fn patchgan(in_channels: usize) -> Self {
        Self {
            in_channels,
            base_filters: 64,
            n_layers: 5,
            spectral_norm: false,
            attention: Attention::None,
            attention_placement: vec![2, 3],
            coordconv_first: false,
        }
    }

    pub fn first_layer_channels(&self) -> usize {
        self.in_channels + 2 * self.coordconv_first as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_filters == 0 {
            return Err(Error::InvalidConfig("channel counts must be positive".into()));
        }
        if self.n_layers < 3 {
            return Err(Error::InvalidConfig(format!("PatchGAN needs at least 3 layers, got {}", self.n_layers)));
        }
        let mut placed = self.attention_placement.iter().filter(|_| self.attention != Attention::None);
        if let Some(&k) = placed.find(|&&k| k == 0 || k >= self.n_layers) {
            return Err(Error::InvalidConfig(format!("attention block {k} outside 1..{}", self.n_layers)));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a trained model set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Trainer that produced the weights: pix2pix, cyclegan or unet.
    pub arch: String,
    pub generator: GeneratorSpec,
    pub discriminator: Option<DiscriminatorSpec>,
}

impl ModelSpec {
    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }
}
