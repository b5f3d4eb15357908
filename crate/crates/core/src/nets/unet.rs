//! U-Net generator built from nested skip blocks.
//!
//! Level 0 is the outermost block. Level `l` down-samples to width
//! `f * min(2^l, 8)`; every non-outermost level concatenates its input onto
//! its up-sampled output.

use windflow_tensor::{Float, Var};

use super::attention::AttentionRegistry;
use super::layers::{add_coords, dropout, instance_norm, leaky, Builder, Conv, ConvT, Forward, Module};
use super::spec::GeneratorSpec;
use crate::error::Result;

pub(crate) fn width(base: usize, level: usize) -> usize {
    base * (1usize << level.min(3))
}

pub struct UNet<T: Float> {
    levels: Vec<LevelT<T>>,
    coords: bool,
}

struct LevelT<T: Float> {
    down: Conv,
    up: ConvT,
    down_norm: bool,
    up_norm: bool,
    dropout: f64,
    attention: Option<Box<dyn Module<T>>>,
}

impl<T: Float> UNet<T> {
    pub fn new(spec: &GeneratorSpec, b: &mut Builder<'_, T>, attention: &AttentionRegistry<T>) -> Result<Self> {
        let d = spec.depth;
        let f = spec.base_filters;
        let kind = attention.get(spec.attention.name())?;
        let mut levels = Vec::with_capacity(d);
        for l in 0..d {
            let inner = width(f, l);
            let outermost = l == 0;
            let innermost = l == d - 1;
            let (input, outer) = if outermost {
                (spec.first_layer_channels(), spec.out_channels)
            } else {
                let o = width(f, l - 1);
                (o, o)
            };
            let up_in = if innermost { inner } else { 2 * inner };
            let down = b.conv(&format!("down{l}"), input, inner, 4, 2, 1, true);
            let up = b.conv_t(&format!("up{l}"), up_in, outer, 4, 2, 1, 0);
            // Decoder block number counted from the innermost.
            let block = d - l;
            let attention = if !outermost && spec.attention_placement.contains(&block) {
                kind.build(b, &format!("att{block}"), outer)?
            } else {
                None
            };
            let dropout = if !outermost && !innermost && l + 4 >= d { spec.dropout_p } else { 0.0 };
            levels.push(LevelT {
                down,
                up,
                down_norm: !outermost && !innermost,
                up_norm: !outermost,
                dropout,
                attention,
            });
        }
        Ok(Self {
            levels,
            coords: spec.coordconv_first,
        })
    }

    fn level(&self, cx: &mut Forward<'_, T>, l: usize, x: Var) -> Result<Var> {
        let lv = &self.levels[l];
        let outermost = l == 0;
        let innermost = l == self.levels.len() - 1;
        let mut h = if outermost { x } else { leaky(cx, x) };
        h = lv.down.apply(cx, h)?;
        if lv.down_norm {
            h = instance_norm(cx, h)?;
        }
        if !innermost {
            h = self.level(cx, l + 1, h)?;
        }
        h = cx.tape.relu(h);
        h = lv.up.apply(cx, h)?;
        if outermost {
            return Ok(cx.tape.tanh(h));
        }
        if lv.up_norm {
            h = instance_norm(cx, h)?;
        }
        h = dropout(cx, h, lv.dropout)?;
        if let Some(att) = &lv.attention {
            h = att.forward(cx, h)?;
        }
        Ok(cx.tape.concat(&[x, h])?)
    }
}

impl<T: Float> Module<T> for UNet<T> {
    fn forward(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let x = if self.coords { add_coords(cx, x)? } else { x };
        self.level(cx, 0, x)
    }
}
