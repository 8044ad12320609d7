//! Noise-prediction U-Net with sinusoidal timestep conditioning and spatial
//! self-attention, plus its hand-written backward pass.

use serde::{Deserialize, Serialize};

use super::layers::{
    silu, silu_backward, timestep_embedding, upsample_nearest, upsample_nearest_backward, Attention, AttnCache, Conv2d,
    GnCache, GroupNorm, Linear,
};
use super::params::{Grads, LayoutBuilder, ParamSpec, ParamStore};
use super::tensor::{Act, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub attention_heads: usize,
    /// Spatial sizes (side length) at which self-attention is applied.
    pub attention_resolutions: Vec<usize>,
    pub input_size: usize,
    pub time_embed_dim: usize,
    pub groups_per_norm: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            channel_multipliers: vec![1, 2, 4, 8],
            attention_heads: 4,
            attention_resolutions: vec![32],
            input_size: 128,
            time_embed_dim: 256,
            groups_per_norm: 8,
        }
    }
}

impl UNetConfig {
    /// Desk-scale configuration used by the synthetic experiments.
    pub fn toy() -> Self {
        Self {
            base_channels: 16,
            channel_multipliers: vec![1, 2],
            attention_heads: 4,
            attention_resolutions: vec![16],
            input_size: 32,
            time_embed_dim: 64,
            groups_per_norm: 8,
        }
    }

    /// Smallest configuration that still exercises every block type.
    pub fn tiny() -> Self {
        Self {
            base_channels: 8,
            channel_multipliers: vec![1, 2],
            attention_heads: 2,
            attention_resolutions: vec![8],
            input_size: 16,
            time_embed_dim: 32,
            groups_per_norm: 4,
        }
    }

    /// Side length at each encoder stage.
    pub fn resolutions(&self) -> Vec<usize> {
        (0..self.channel_multipliers.len())
            .map(|i| self.input_size >> i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("unet: {m}")));
        let levels = self.channel_multipliers.len();
        if levels == 0 || self.channel_multipliers.contains(&0) {
            return bad("channel_multipliers must be non-empty and positive".into());
        }
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(2) {
            return bad("base_channels must be a positive even number".into());
        }
        if self.time_embed_dim == 0 || self.attention_heads == 0 || self.groups_per_norm == 0 {
            return bad("time_embed_dim, attention_heads and groups_per_norm must be positive".into());
        }
        let factor = 1usize << (levels - 1);
        if self.input_size == 0 || !self.input_size.is_multiple_of(factor) {
            return bad(format!("input_size {} not divisible by {factor}", self.input_size));
        }
        let res = self.resolutions();
        for r in &self.attention_resolutions {
            if !res.contains(r) {
                return bad(format!("attention resolution {r} not in {res:?}"));
            }
        }
        let chans: Vec<usize> = self
            .channel_multipliers
            .iter()
            .map(|m| m * self.base_channels)
            .collect();
        let g = self.groups_per_norm;
        for (i, &c) in chans.iter().enumerate() {
            let prev = if i == 0 { self.base_channels } else { chans[i - 1] };
            for width in [c, prev, c + c, c + prev] {
                if width % g != 0 {
                    return bad(format!("{width} channels not divisible by {g} groups"));
                }
            }
            if (self.attention_resolutions.contains(&res[i]) || i + 1 == levels) && c % self.attention_heads != 0 {
                return bad(format!("{c} channels not divisible by {} heads", self.attention_heads));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    temb: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
    c_out: usize,
}

#[derive(Debug, Clone)]
struct ResCache<T> {
    x: Act<T>,
    gn1: GnCache<T>,
    a1: Act<T>,
    h1: Act<T>,
    gn2: GnCache<T>,
    a2: Act<T>,
    h2: Act<T>,
}

impl ResBlock {
    fn new(b: &mut LayoutBuilder, name: &str, c_in: usize, c_out: usize, temb_dim: usize, groups: usize) -> Self {
        Self {
            norm1: GroupNorm::new(b, &format!("{name}.norm1"), c_in, groups),
            conv1: Conv2d::new(b, &format!("{name}.conv1"), c_in, c_out, 3, 1, false),
            temb: Linear::new(b, &format!("{name}.temb"), temb_dim, c_out),
            norm2: GroupNorm::new(b, &format!("{name}.norm2"), c_out, groups),
            conv2: Conv2d::new(b, &format!("{name}.conv2"), c_out, c_out, 3, 1, false),
            skip: (c_in != c_out).then(|| Conv2d::new(b, &format!("{name}.skip"), c_in, c_out, 1, 1, false)),
            c_out,
        }
    }

    fn forward<T: Real>(&self, p: &ParamStore<T>, x: Act<T>, temb_act: &[T]) -> (Act<T>, ResCache<T>) {
        let (a1, gn1) = self.norm1.forward(p, &x);
        let h1 = a1.map(silu);
        let mut c1 = self.conv1.forward(p, &h1);
        let e = self.temb.forward(p, temb_act, x.n);
        let (plane, hw) = (c1.plane(), c1.hw());
        for c in 0..self.c_out {
            for n in 0..x.n {
                let bias = e[n * self.c_out + c];
                for v in &mut c1.data[c * plane + n * hw..][..hw] {
                    *v += bias;
                }
            }
        }
        let (a2, gn2) = self.norm2.forward(p, &c1);
        let h2 = a2.map(silu);
        let mut out = self.conv2.forward(p, &h2);
        match &self.skip {
            Some(conv) => out.add_assign(&conv.forward(p, &x)),
            None => out.add_assign(&x),
        }
        (
            out,
            ResCache {
                x,
                gn1,
                a1,
                h1,
                gn2,
                a2,
                h2,
            },
        )
    }

    /// Returns dx; accumulates into `d_temb_act`.
    fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &ResCache<T>,
        dout: &Act<T>,
        temb_act: &[T],
        d_temb_act: &mut [T],
        g: &mut Grads<T>,
    ) -> Act<T> {
        let n = cache.x.n;
        let dh2 = self.conv2.backward(p, &cache.h2, dout, g);
        let da2 = Act {
            data: silu_backward(&cache.a2.data, &dh2.data),
            ..dh2
        };
        let dc1 = self.norm2.backward(p, &cache.gn2, &da2, g);
        let (plane, hw) = (dc1.plane(), dc1.hw());
        let mut de = vec![T::zero(); n * self.c_out];
        for c in 0..self.c_out {
            for s in 0..n {
                de[s * self.c_out + c] = dc1.data[c * plane + s * hw..][..hw].iter().copied().sum();
            }
        }
        let dt = self.temb.backward(p, temb_act, &de, n, g);
        for (acc, v) in d_temb_act.iter_mut().zip(dt) {
            *acc += v;
        }
        let dh1 = self.conv1.backward(p, &cache.h1, &dc1, g);
        let da1 = Act {
            data: silu_backward(&cache.a1.data, &dh1.data),
            ..dh1
        };
        let mut dx = self.norm1.backward(p, &cache.gn1, &da1, g);
        match &self.skip {
            Some(conv) => dx.add_assign(&conv.backward(p, &cache.x, dout, g)),
            None => dx.add_assign(dout),
        }
        dx
    }
}

#[derive(Debug, Clone)]
struct Block {
    res: ResBlock,
    attn: Option<Attention>,
    /// Channels of the skip tensor concatenated in front of this (decoder) block.
    skip_channels: usize,
}

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<Block>,
    /// Stride-2 conv (encoder) or nearest-upsample + conv (decoder).
    resample: Option<Conv2d>,
}

#[derive(Debug, Clone)]
struct StageCache<T> {
    blocks: Vec<(ResCache<T>, Option<AttnCache<T>>)>,
    resample_in: Option<Act<T>>,
}

/// Activations recorded by a forward pass, consumed by [`UNet::backward`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    n: usize,
    t_feat: Vec<T>,
    time_pre: Vec<T>,
    time_hidden: Vec<T>,
    temb: Vec<T>,
    temb_act: Vec<T>,
    x: Act<T>,
    down: Vec<StageCache<T>>,
    mid: (ResCache<T>, AttnCache<T>, ResCache<T>),
    up: Vec<StageCache<T>>,
    gn_out: GnCache<T>,
    a_out: Act<T>,
    h_out: Act<T>,
}

const RES_BLOCKS_PER_STAGE: usize = 2;

#[derive(Debug, Clone)]
pub struct UNet {
    cfg: UNetConfig,
    specs: Vec<ParamSpec>,
    time1: Linear,
    time2: Linear,
    conv_in: Conv2d,
    down: Vec<Stage>,
    mid: (ResBlock, Attention, ResBlock),
    up: Vec<Stage>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl UNet {
    pub fn new(cfg: &UNetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut b = LayoutBuilder::default();
        let (base, temb, groups, heads) = (
            cfg.base_channels,
            cfg.time_embed_dim,
            cfg.groups_per_norm,
            cfg.attention_heads,
        );
        let time1 = Linear::new(&mut b, "time.lin1", base, temb);
        let time2 = Linear::new(&mut b, "time.lin2", temb, temb);
        let conv_in = Conv2d::new(&mut b, "conv_in", 1, base, 3, 1, false);
        let res = cfg.resolutions();
        let chans: Vec<usize> = cfg.channel_multipliers.iter().map(|m| m * base).collect();
        let levels = chans.len();
        let wants_attn = |i: usize| cfg.attention_resolutions.contains(&res[i]);

        let mut down = Vec::with_capacity(levels);
        let mut skip_stack = Vec::new();
        let mut c_cur = base;
        for i in 0..levels {
            let mut blocks = Vec::new();
            for j in 0..RES_BLOCKS_PER_STAGE {
                let name = format!("down.{i}.{j}");
                let res_block = ResBlock::new(&mut b, &format!("{name}.res"), c_cur, chans[i], temb, groups);
                c_cur = chans[i];
                let attn = wants_attn(i).then(|| Attention::new(&mut b, &format!("{name}.attn"), c_cur, heads, groups));
                skip_stack.push(c_cur);
                blocks.push(Block {
                    res: res_block,
                    attn,
                    skip_channels: 0,
                });
            }
            let resample = (i + 1 < levels)
                .then(|| Conv2d::new(&mut b, &format!("down.{i}.downsample"), c_cur, c_cur, 3, 2, false));
            down.push(Stage { blocks, resample });
        }

        let mid = (
            ResBlock::new(&mut b, "mid.res1", c_cur, c_cur, temb, groups),
            Attention::new(&mut b, "mid.attn", c_cur, heads, groups),
            ResBlock::new(&mut b, "mid.res2", c_cur, c_cur, temb, groups),
        );

        let mut up = Vec::with_capacity(levels);
        for i in (0..levels).rev() {
            let mut blocks = Vec::new();
            for j in 0..RES_BLOCKS_PER_STAGE {
                let name = format!("up.{i}.{j}");
                let skip = skip_stack.pop().expect("skip per encoder block");
                let res_block = ResBlock::new(&mut b, &format!("{name}.res"), c_cur + skip, chans[i], temb, groups);
                c_cur = chans[i];
                let attn = wants_attn(i).then(|| Attention::new(&mut b, &format!("{name}.attn"), c_cur, heads, groups));
                blocks.push(Block {
                    res: res_block,
                    attn,
                    skip_channels: skip,
                });
            }
            let resample = (i > 0).then(|| Conv2d::new(&mut b, &format!("up.{i}.upsample"), c_cur, c_cur, 3, 1, false));
            up.push(Stage { blocks, resample });
        }

        let norm_out = GroupNorm::new(&mut b, "norm_out", c_cur, groups);
        let conv_out = Conv2d::new(&mut b, "conv_out", c_cur, 1, 3, 1, true);
        Ok(Self {
            cfg: cfg.clone(),
            specs: b.specs,
            time1,
            time2,
            conv_in,
            down,
            mid,
            up,
            norm_out,
            conv_out,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    pub fn check_params<T: Real>(&self, p: &ParamStore<T>) -> Result<()> {
        let ok = p.len() == self.specs.len()
            && self
                .specs
                .iter()
                .zip(p.names.iter().zip(&p.shapes))
                .all(|(s, (n, sh))| &s.name == n && &s.shape == sh);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("parameters do not match the network layout".into()))
        }
    }

    fn check_input<T: Real>(&self, x: &Act<T>, t: &[usize]) -> Result<()> {
        let s = self.cfg.input_size;
        if x.c != 1 || x.h != s || x.w != s || x.n == 0 {
            return Err(Error::Shape(format!(
                "expected [1, N, {s}, {s}] input, got [{}, {}, {}, {}]",
                x.c, x.n, x.h, x.w
            )));
        }
        if t.len() != x.n {
            return Err(Error::Shape(format!("{} timesteps for batch of {}", t.len(), x.n)));
        }
        Ok(())
    }

    /// Inference forward pass (no activations kept).
    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Act<T>, t: &[usize]) -> Result<Act<T>> {
        self.forward_tape(p, x, t).map(|(out, _)| out)
    }

    pub fn forward_tape<T: Real>(&self, p: &ParamStore<T>, x: &Act<T>, t: &[usize]) -> Result<(Act<T>, Tape<T>)> {
        self.check_input(x, t)?;
        self.check_params(p)?;
        let n = x.n;
        let t_feat = timestep_embedding::<T>(t, self.cfg.base_channels);
        let time_pre = self.time1.forward(p, &t_feat, n);
        let time_hidden: Vec<T> = time_pre.iter().map(|&v| silu(v)).collect();
        let temb = self.time2.forward(p, &time_hidden, n);
        let temb_act: Vec<T> = temb.iter().map(|&v| silu(v)).collect();

        let mut h = self.conv_in.forward(p, x);
        let mut skips = Vec::new();
        let mut down_caches = Vec::with_capacity(self.down.len());
        for stage in &self.down {
            let mut blocks = Vec::new();
            for block in &stage.blocks {
                let (out, rc) = block.res.forward(p, h, &temb_act);
                h = out;
                let ac = block.attn.as_ref().map(|a| {
                    let (out, ac) = a.forward(p, &h);
                    h = out;
                    ac
                });
                skips.push(h.clone());
                blocks.push((rc, ac));
            }
            let resample_in = stage.resample.as_ref().map(|conv| {
                let next = conv.forward(p, &h);
                std::mem::replace(&mut h, next)
            });
            down_caches.push(StageCache { blocks, resample_in });
        }

        let (r1, attn, r2) = &self.mid;
        let (out, m1) = r1.forward(p, h, &temb_act);
        let (out, ma) = attn.forward(p, &out);
        let (out, m2) = r2.forward(p, out, &temb_act);
        h = out;

        let mut up_caches = Vec::with_capacity(self.up.len());
        for stage in &self.up {
            let mut blocks = Vec::new();
            for block in &stage.blocks {
                let skip = skips.pop().expect("skip per decoder block");
                let (out, rc) = block.res.forward(p, h.concat(&skip), &temb_act);
                h = out;
                let ac = block.attn.as_ref().map(|a| {
                    let (out, ac) = a.forward(p, &h);
                    h = out;
                    ac
                });
                blocks.push((rc, ac));
            }
            let resample_in = stage.resample.as_ref().map(|conv| {
                let u = upsample_nearest(&h);
                h = conv.forward(p, &u);
                u
            });
            up_caches.push(StageCache { blocks, resample_in });
        }

        let (a_out, gn_out) = self.norm_out.forward(p, &h);
        let h_out = a_out.map(silu);
        let out = self.conv_out.forward(p, &h_out);
        let tape = Tape {
            n,
            t_feat,
            time_pre,
            time_hidden,
            temb,
            temb_act,
            x: x.clone(),
            down: down_caches,
            mid: (m1, ma, m2),
            up: up_caches,
            gn_out,
            a_out,
            h_out,
        };
        Ok((out, tape))
    }

    /// Parameter gradients of `sum(dout * forward(x))`.
    pub fn backward<T: Real>(&self, p: &ParamStore<T>, tape: &Tape<T>, dout: &Act<T>) -> Result<Grads<T>> {
        self.check_params(p)?;
        let s = self.cfg.input_size;
        if (dout.c, dout.n, dout.h, dout.w) != (1, tape.n, s, s) {
            return Err(Error::Shape(
                "output gradient does not match the recorded forward pass".into(),
            ));
        }
        let mut g = ParamStore::zeros(&self.specs);
        let n = tape.n;
        let mut d_temb_act = vec![T::zero(); tape.temb_act.len()];

        let dh_out = self.conv_out.backward(p, &tape.h_out, dout, &mut g);
        let da_out = Act {
            data: silu_backward(&tape.a_out.data, &dh_out.data),
            ..dh_out
        };
        let mut dh = self.norm_out.backward(p, &tape.gn_out, &da_out, &mut g);

        let n_skips: usize = self.down.iter().map(|s| s.blocks.len()).sum();
        let mut dskips: Vec<Option<Act<T>>> = vec![None; n_skips];
        let mut consumed: Vec<usize> = self
            .up
            .iter()
            .scan(0, |acc, st| {
                let before = *acc;
                *acc += st.blocks.len();
                Some(before)
            })
            .collect();
        for ((stage, cache), before) in self.up.iter().zip(&tape.up).zip(consumed.drain(..)).rev() {
            if let (Some(conv), Some(u)) = (&stage.resample, &cache.resample_in) {
                let du = conv.backward(p, u, &dh, &mut g);
                dh = upsample_nearest_backward(&du);
            }
            for (k, (block, (rc, ac))) in stage.blocks.iter().zip(&cache.blocks).enumerate().rev() {
                if let (Some(attn), Some(ac)) = (&block.attn, ac) {
                    dh = attn.backward(p, ac, &dh, &mut g);
                }
                let dcat = block.res.backward(p, rc, &dh, &tape.temb_act, &mut d_temb_act, &mut g);
                let c_h = dcat.c - block.skip_channels;
                let (d_prev, d_skip) = dcat.split(c_h);
                // skips are popped from the back in decoder order
                dskips[n_skips - 1 - (before + k)] = Some(d_skip);
                dh = d_prev;
            }
        }

        let (r1, attn, r2) = &self.mid;
        let (m1, ma, m2) = &tape.mid;
        dh = r2.backward(p, m2, &dh, &tape.temb_act, &mut d_temb_act, &mut g);
        dh = attn.backward(p, ma, &dh, &mut g);
        dh = r1.backward(p, m1, &dh, &tape.temb_act, &mut d_temb_act, &mut g);

        let mut idx = n_skips;
        for (stage, cache) in self.down.iter().zip(&tape.down).rev() {
            if let (Some(conv), Some(input)) = (&stage.resample, &cache.resample_in) {
                dh = conv.backward(p, input, &dh, &mut g);
            }
            for (block, (rc, ac)) in stage.blocks.iter().zip(&cache.blocks).rev() {
                idx -= 1;
                let ds = dskips[idx].take().expect("skip gradient recorded");
                dh.add_assign(&ds);
                if let (Some(attn), Some(ac)) = (&block.attn, ac) {
                    dh = attn.backward(p, ac, &dh, &mut g);
                }
                dh = block.res.backward(p, rc, &dh, &tape.temb_act, &mut d_temb_act, &mut g);
            }
        }
        self.conv_in.backward(p, &tape.x, &dh, &mut g);

        let d_temb = silu_backward(&tape.temb, &d_temb_act);
        let d_hidden = self.time2.backward(p, &tape.time_hidden, &d_temb, n, &mut g);
        let d_pre = silu_backward(&tape.time_pre, &d_hidden);
        self.time1.backward(p, &tape.t_feat, &d_pre, n, &mut g);
        Ok(g)
    }
}

/// Holds the forward record between a forward and a backward call.
pub struct GradSession<'a, T> {
    net: &'a UNet,
    params: &'a ParamStore<T>,
    tape: Option<Tape<T>>,
}

impl<'a, T: Real> GradSession<'a, T> {
    pub fn new(net: &'a UNet, params: &'a ParamStore<T>) -> Self {
        Self {
            net,
            params,
            tape: None,
        }
    }

    pub fn forward(&mut self, x: &Act<T>, t: &[usize]) -> Result<Act<T>> {
        let (out, tape) = self.net.forward_tape(self.params, x, t)?;
        self.tape = Some(tape);
        Ok(out)
    }

    /// Consumes the recorded forward pass.
    pub fn backward(&mut self, dout: &Act<T>) -> Result<Grads<T>> {
        let tape = self.tape.take().ok_or(Error::NoForwardPass)?;
        self.net.backward(self.params, &tape, dout)
    }
}
