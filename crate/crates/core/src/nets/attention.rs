//! Attention blocks and the name-keyed registry used by the network builders.

use windflow_tensor::{Float, ParamId, Var};

use super::layers::{Builder, Conv, Forward, Module};
use super::spec::Attention;
use crate::error::{Error, Result};

/// Self-attention over spatial positions with a learnable residual scale
/// initialized to zero.
pub struct SelfAttention {
    query: Conv,
    key: Conv,
    value: Conv,
    gamma: ParamId,
}

impl SelfAttention {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        if channels < 8 || channels % 8 != 0 {
            return Err(Error::Shape(format!("self-attention needs channels divisible by 8, got {channels}")));
        }
        let inner = channels / 8;
        Ok(Self {
            query: b.conv(&format!("{name}.query"), channels, inner, 1, 1, 0, true),
            key: b.conv(&format!("{name}.key"), channels, inner, 1, 1, 0, true),
            value: b.conv(&format!("{name}.value"), channels, channels, 1, 1, 0, true),
            gamma: b.scalar(&format!("{name}.gamma"), 0.0),
        })
    }

    /// Softmax weights `[N, HW, HW]`: row `i` distributes query position `i`
    /// over all key positions.
    pub fn attention_map<T: Float>(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let [n, _, h, w] = cx.tape.value(x).dims4()?;
        let q = self.query.apply(cx, x)?;
        let k = self.key.apply(cx, x)?;
        let inner = cx.tape.shape(q)[1];
        let q = cx.tape.reshape(q, &[n, inner, h * w])?;
        let k = cx.tape.reshape(k, &[n, inner, h * w])?;
        let energy = cx.tape.matmul(q, k, true, false)?;
        Ok(cx.tape.softmax_last(energy)?)
    }
}

impl<T: Float> Module<T> for SelfAttention {
    fn forward(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let [n, c, h, w] = cx.tape.value(x).dims4()?;
        let attn = self.attention_map(cx, x)?;
        let v = self.value.apply(cx, x)?;
        let v = cx.tape.reshape(v, &[n, c, h * w])?;
        let out = cx.tape.matmul(v, attn, false, true)?;
        let out = cx.tape.reshape(out, &[n, c, h, w])?;
        let gamma = cx.param(self.gamma);
        let scaled = cx.tape.mul(out, gamma)?;
        Ok(cx.tape.add(x, scaled)?)
    }
}

/// Channel gate followed by spatial gate, each a sigmoid map multiplied
/// onto the features.
pub struct Cbam {
    fc1: Conv,
    fc2: Conv,
    spatial: Conv,
}

/// Channel reduction of the CBAM gate MLP.
pub const CBAM_REDUCTION: usize = 16;
pub const CBAM_KERNEL: usize = 7;

impl Cbam {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        if channels < 2 {
            return Err(Error::Shape(format!("CBAM needs at least 2 channels, got {channels}")));
        }
        let hidden = (channels / CBAM_REDUCTION).max(1);
        Ok(Self {
            fc1: b.conv(&format!("{name}.mlp1"), channels, hidden, 1, 1, 0, true),
            fc2: b.conv(&format!("{name}.mlp2"), hidden, channels, 1, 1, 0, true),
            spatial: b.conv(&format!("{name}.spatial"), 2, 1, CBAM_KERNEL, 1, CBAM_KERNEL / 2, false),
        })
    }

    /// Channel gate `[N, C, 1, 1]`.
    pub fn channel_gate<T: Float>(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let avg = cx.tape.spatial_mean(x)?;
        let max = cx.tape.spatial_max(x)?;
        let mut branches = Vec::with_capacity(2);
        for pooled in [avg, max] {
            let h = self.fc1.apply(cx, pooled)?;
            let h = cx.tape.relu(h);
            branches.push(self.fc2.apply(cx, h)?);
        }
        let sum = cx.tape.add(branches[0], branches[1])?;
        Ok(cx.tape.sigmoid(sum))
    }

    /// Spatial gate `[N, 1, H, W]`.
    pub fn spatial_gate<T: Float>(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let avg = cx.tape.channel_mean(x)?;
        let max = cx.tape.channel_max(x)?;
        let both = cx.tape.concat(&[avg, max])?;
        let s = self.spatial.apply(cx, both)?;
        Ok(cx.tape.sigmoid(s))
    }

    /// Apply given gates: `x' = mc * x`, then `x'' = ms(x') * x'`. When
    /// `spatial` is `None` the spatial gate is computed from `x'`.
    pub fn refine<T: Float>(&self, cx: &mut Forward<'_, T>, x: Var, mc: Var, ms: Option<Var>) -> Result<Var> {
        let x1 = cx.tape.mul(x, mc)?;
        let ms = match ms {
            Some(m) => m,
            None => self.spatial_gate(cx, x1)?,
        };
        Ok(cx.tape.mul(x1, ms)?)
    }
}

impl<T: Float> Module<T> for Cbam {
    fn forward(&self, cx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let mc = self.channel_gate(cx, x)?;
        self.refine(cx, x, mc, None)
    }
}

/// Constructs one attention variant for a feature map with `channels` channels.
pub trait AttentionKind<T: Float>: Send + Sync {
    fn name(&self) -> &'static str;
    /// `None` means the block is a pass-through and adds no parameters.
    fn build(&self, b: &mut Builder<'_, T>, prefix: &str, channels: usize) -> Result<Option<Box<dyn Module<T>>>>;
}

struct NoAttention;
struct SelfKind;
struct CbamKind;

impl<T: Float> AttentionKind<T> for NoAttention {
    fn name(&self) -> &'static str {
        Attention::None.name()
    }
    fn build(&self, _: &mut Builder<'_, T>, _: &str, _: usize) -> Result<Option<Box<dyn Module<T>>>> {
        Ok(None)
    }
}

impl<T: Float> AttentionKind<T> for SelfKind {
    fn name(&self) -> &'static str {
        Attention::SelfAttention.name()
    }
    fn build(&self, b: &mut Builder<'_, T>, prefix: &str, channels: usize) -> Result<Option<Box<dyn Module<T>>>> {
        Ok(Some(Box::new(SelfAttention::new(b, prefix, channels)?)))
    }
}

impl<T: Float> AttentionKind<T> for CbamKind {
    fn name(&self) -> &'static str {
        Attention::Cbam.name()
    }
    fn build(&self, b: &mut Builder<'_, T>, prefix: &str, channels: usize) -> Result<Option<Box<dyn Module<T>>>> {
        Ok(Some(Box::new(Cbam::new(b, prefix, channels)?)))
    }
}

pub struct AttentionRegistry<T: Float> {
    kinds: Vec<Box<dyn AttentionKind<T>>>,
}

impl<T: Float> AttentionRegistry<T> {
    pub fn empty() -> Self {
        Self { kinds: Vec::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(NoAttention));
        r.register(Box::new(SelfKind));
        r.register(Box::new(CbamKind));
        r
    }

    /// Add a variant; a later registration shadows an earlier one of the same name.
    pub fn register(&mut self, kind: Box<dyn AttentionKind<T>>) {
        self.kinds.retain(|k| k.name() != kind.name());
        self.kinds.push(kind);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.kinds.iter().map(|k| k.name()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn AttentionKind<T>> {
        self.kinds
            .iter()
            .find(|k| k.name() == name)
            .map(|k| k.as_ref())
            .ok_or_else(|| Error::UnknownName {
                kind: "attention",
                name: name.to_string(),
            })
    }
}
