//! Turning training flags into a [`ModelSpec`].

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use windflow_core::nets::{Attention, DiscriminatorSpec, GeneratorSpec, ModelSpec};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Pix2pix,
    Cyclegan,
    Unet,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Pix2pix => "pix2pix",
            Arch::Cyclegan => "cyclegan",
            Arch::Unet => "unet",
        }
    }
}

/// Which networks receive attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum AttPlace {
    #[value(name = "G", alias = "g")]
    G,
    #[value(name = "D", alias = "d")]
    D,
    #[value(name = "both")]
    Both,
}

impl AttPlace {
    fn generator(self) -> bool {
        matches!(self, AttPlace::G | AttPlace::Both)
    }

    fn discriminator(self) -> bool {
        matches!(self, AttPlace::D | AttPlace::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecFlags {
    pub arch: Arch,
    pub sn: bool,
    pub sdf: bool,
    pub coordconv: bool,
    pub attention: Attention,
    pub att_place: AttPlace,
    pub base_filters: Option<usize>,
    pub depth: Option<usize>,
}

impl SpecFlags {
    pub fn new(arch: Arch) -> Self {
        Self {
            arch,
            sn: false,
            sdf: false,
            coordconv: false,
            attention: Attention::None,
            att_place: AttPlace::G,
            base_filters: None,
            depth: None,
        }
    }
}

/// Deepest U-Net (at most the standard 8) whose input side `size` divides.
pub fn default_depth(size: usize) -> usize {
    (size.trailing_zeros() as usize).min(8)
}

/// Build the model spec for a dataset with `geometry_channels` raw channels
/// and `size`-pixel rasters.
pub fn compose(flags: &SpecFlags, geometry_channels: usize, size: usize) -> Result<ModelSpec, CliError> {
    let attention_on = flags.attention != Attention::None;
    if flags.arch == Arch::Unet {
        if flags.sn {
            return Err(CliError::user("--sn applies to discriminators; the unet architecture has none"));
        }
        if attention_on && flags.att_place.discriminator() {
            return Err(CliError::user("--att-place D/both needs a discriminator; the unet architecture has none"));
        }
    }

    let mut g = match flags.arch {
        Arch::Cyclegan => GeneratorSpec::resnet9(geometry_channels, 1),
        Arch::Pix2pix | Arch::Unet => {
            let mut g = GeneratorSpec::unet(geometry_channels, 1);
            g.depth = flags.depth.unwrap_or_else(|| default_depth(size));
            g.attention_placement = GeneratorSpec::default_placement(g.depth);
            g
        }
    };
    if flags.arch == Arch::Cyclegan && flags.depth.is_some() {
        return Err(CliError::user("--depth applies to U-Net generators only"));
    }
    g.sdf_channel = flags.sdf;
    g.coordconv_first = flags.coordconv;
    if attention_on && flags.att_place.generator() {
        g.attention = flags.attention;
    }
    if let Some(f) = flags.base_filters {
        g.base_filters = f;
    }

    let discriminator = match flags.arch {
        Arch::Unet => None,
        Arch::Pix2pix | Arch::Cyclegan => {
            // pix2pix judges (input, flow) pairs; CycleGAN's flow-side critic sees flow only
            let input = if flags.arch == Arch::Pix2pix { g.data_channels() + 1 } else { 1 };
            let mut d = DiscriminatorSpec::patchgan(input);
            d.spectral_norm = flags.sn;
            d.coordconv_first = flags.coordconv;
            if attention_on && flags.att_place.discriminator() {
                d.attention = flags.attention;
            }
            if let Some(f) = flags.base_filters {
                d.base_filters = f;
            }
            Some(d)
        }
    };

    g.validate()?;
    if let Some(d) = &discriminator {
        d.validate()?;
    }
    g.check_input(size, size)?;
    Ok(ModelSpec {
        arch: flags.arch.name().into(),
        generator: g,
        discriminator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_follows_the_raster() {
        assert_eq!(default_depth(256), 8);
        assert_eq!(default_depth(1024), 8);
        assert_eq!(default_depth(128), 7);
        assert_eq!(default_depth(96), 5);
    }

    #[test]
    fn guards_and_placement() {
        let mut f = SpecFlags::new(Arch::Unet);
        f.sn = true;
        assert!(matches!(compose(&f, 1, 256), Err(CliError::User(_))));

        let mut f = SpecFlags::new(Arch::Pix2pix);
        f.attention = Attention::Cbam;
        f.sdf = true;
        f.coordconv = true;
        let s = compose(&f, 1, 256).unwrap();
        assert_eq!(s.generator.attention, Attention::Cbam);
        assert_eq!(s.generator.attention_placement, [5, 6]);
        let d = s.discriminator.unwrap();
        assert_eq!(d.attention, Attention::None);
        assert_eq!(d.in_channels, 3);
        assert!(d.coordconv_first);

        f.att_place = AttPlace::D;
        let s = compose(&f, 1, 64).unwrap();
        assert_eq!(s.generator.attention, Attention::None);
        assert_eq!(s.generator.depth, 6);
        assert_eq!(s.discriminator.unwrap().attention, Attention::Cbam);

        let mut f = SpecFlags::new(Arch::Cyclegan);
        f.attention = Attention::SelfAttention;
        assert!(matches!(compose(&f, 2, 64), Err(CliError::User(_))));
        f.att_place = AttPlace::D;
        assert_eq!(compose(&f, 2, 64).unwrap().discriminator.unwrap().in_channels, 1);
    }
}
