//! Residual generator: two stride-2 downs, nine residual blocks, two
//! transposed-conv ups.

use windflow_tensor::{Float, Var};

use super::layers::{add_coords, dropout, instance_norm, Builder, Conv, ConvT, Forward, Module};
use super::spec::GeneratorSpec;
use crate::error::Result;

pub const RESIDUAL_BLOCKS: usize = 9;

struct Residual {
    a: Conv,
    b: Conv,
}

pub struct ResNet9 {
    stem: Conv,
    downs: [Conv; 2],
    blocks: Vec<Residual>,
    ups: [ConvT; 2],
    head: Conv,
    dropout: f64,
    coords: bool,
}

impl ResNet9 {
    pub fn new<T: Float>(spec: &GeneratorSpec, b: &mut Builder<'_, T>) -> Self {
        let f = spec.base_filters;
        let stem = b.conv("stem", spec.first_layer_channels(), f, 7, 1, 0, true);
        let downs = [b.conv("down0", f, 2 * f, 3, 2, 1, true), b.conv("down1", 2 * f, 4 * f, 3, 2, 1, true)];
        let blocks = (0..RESIDUAL_BLOCKS)
            .map(|i| Residual {
                a: b.conv(&format!("res{i}.a"), 4 * f, 4 * f, 3, 1, 0, true),
                b: b.conv(&format!("res{i}.b"), 4 * f, 4 * f, 3, 1, 0, true),
            })
            .collect();
        let ups = [b.conv_t("up0", 4 * f, 2 * f, 3, 2, 1, 1), b.conv_t("up1", 2 * f, f, 3, 2, 1, 1)];
        let head = b.conv("head", f, spec.out_channels, 7, 1, 0, true);
        Self {
            stem,
            downs,
            blocks,
            ups,
            head,
            dropout: spec.dropout_p,
            coords: spec.coordconv_first,
        }
    }
}

impl<T: Float> Module<T> for ResNet9 {
    fn forward(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let mut h = if self.coords { add_coords(cx, x)? } else { x };
        h = cx.tape.reflect_pad(h, 3)?;
        h = self.stem.apply(cx, h)?;
        h = instance_norm(cx, h)?;
        h = cx.tape.relu(h);
        for d in &self.downs {
            h = d.apply(cx, h)?;
            h = instance_norm(cx, h)?;
            h = cx.tape.relu(h);
        }
        for blk in &self.blocks {
            let mut r = cx.tape.reflect_pad(h, 1)?;
            r = blk.a.apply(cx, r)?;
            r = instance_norm(cx, r)?;
            r = cx.tape.relu(r);
            r = dropout(cx, r, self.dropout)?;
            r = cx.tape.reflect_pad(r, 1)?;
            r = blk.b.apply(cx, r)?;
            r = instance_norm(cx, r)?;
            h = cx.tape.add(h, r)?;
        }
        for u in &self.ups {
            h = u.apply(cx, h)?;
            h = instance_norm(cx, h)?;
            h = cx.tape.relu(h);
        }
        h = cx.tape.reflect_pad(h, 3)?;
        h = self.head.apply(cx, h)?;
        Ok(cx.tape.tanh(h))
    }
}
