//! PatchGAN discriminator: one logit per receptive-field patch.

use windflow_tensor::{Float, Var};

use super::attention::AttentionRegistry;
use super::layers::{add_coords, instance_norm, leaky, Builder, Conv, Forward, Module};
use super::spec::DiscriminatorSpec;
use crate::error::Result;

struct Block<T: Float> {
    conv: Conv,
    norm: bool,
    act: bool,
    attention: Option<Box<dyn Module<T>>>,
}

pub struct PatchGan<T: Float> {
    blocks: Vec<Block<T>>,
    coords: bool,
}

impl<T: Float> PatchGan<T> {
    /// With the default 5 layers: widths f, 2f, 4f, 8f, 1; the first three
    /// stride 2, the last two stride 1; all 4x4 kernels with padding 1.
    pub fn new(spec: &DiscriminatorSpec, b: &mut Builder<'_, T>, attention: &AttentionRegistry<T>) -> Result<Self> {
        let kind = attention.get(spec.attention.name())?;
        let n = spec.n_layers;
        let mut blocks = Vec::with_capacity(n);
        let mut cin = spec.first_layer_channels();
        for i in 0..n {
            let last = i == n - 1;
            let cout = if last { 1 } else { spec.base_filters * (1usize << i.min(3)) };
            let stride = if i + 2 < n { 2 } else { 1 };
            let name = format!("conv{i}");
            let conv = if spec.spectral_norm {
                b.sn_conv(&name, cin, cout, 4, stride, 1, true)
            } else {
                b.conv(&name, cin, cout, 4, stride, 1, true)
            };
            let number = i + 1;
            let attention = if !last && spec.attention_placement.contains(&number) {
                kind.build(b, &format!("att{number}"), cout)?
            } else {
                None
            };
            blocks.push(Block {
                conv,
                norm: i > 0 && !last,
                act: !last,
                attention,
            });
            cin = cout;
        }
        Ok(Self {
            blocks,
            coords: spec.coordconv_first,
        })
    }
}

impl<T: Float> Module<T> for PatchGan<T> {
    fn forward(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let mut h = if self.coords { add_coords(cx, x)? } else { x };
        for blk in &self.blocks {
            h = blk.conv.apply(cx, h)?;
            if blk.norm {
                h = instance_norm(cx, h)?;
            }
            if blk.act {
                h = leaky(cx, h);
            }
            if let Some(att) = &blk.attention {
                h = att.forward(cx, h)?;
            }
        }
        Ok(h)
    }
}
