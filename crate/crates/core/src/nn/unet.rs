use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, ConvSpec, NormAct};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ImageBatch, MapBatch};

/// Probabilities leave the network clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

/// Encoder-decoder layout shared by segmentation networks and the critic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::config("in_channels", "must be at least 1"));
        }
        if self.depth < 2 {
            return Err(Error::config("depth", "must be at least 2"));
        }
        if self.base_width < 1 {
            return Err(Error::config("base_width", "must be at least 1"));
        }
        Ok(())
    }

    /// Smallest factor that input height and width must be divisible by.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }
}

/// Configuration of a segmentation network F.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegNetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_width: 8,
            depth: 3,
        }
    }
}

impl SegNetConfig {
    pub fn unet(&self) -> Result<UNetConfig> {
        if self.base_width < 4 {
            return Err(Error::config("segnet.base_width", "must be at least 4"));
        }
        let cfg = UNetConfig {
            in_channels: self.in_channels,
            base_width: self.base_width,
            depth: self.depth,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Configuration of the critic ψ; it always reads a single probability map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub base_width: usize,
    pub depth: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            base_width: 8,
            depth: 3,
        }
    }
}

impl CriticConfig {
    pub fn unet(&self) -> Result<UNetConfig> {
        let cfg = UNetConfig {
            in_channels: 1,
            base_width: self.base_width,
            depth: self.depth,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug)]
struct BlockSpec {
    first: ConvSpec,
    second: ConvSpec,
}

#[derive(Clone, Debug)]
struct Arch {
    /// `enc[l]` runs at resolution level `l`; `enc[depth]` is the bottleneck.
    enc: Vec<BlockSpec>,
    /// `up[l]` maps level `l + 1` features to level `l` after upsampling.
    up: Vec<ConvSpec>,
    dec: Vec<BlockSpec>,
    head: ConvSpec,
    n_params: usize,
}

impl Arch {
    fn new(cfg: &UNetConfig) -> Self {
        let mut offset = 0;
        let mut conv = |cin: usize, cout: usize, kernel: usize, bias: bool| {
            let weight_offset = offset;
            offset += cout * cin * kernel * kernel;
            let bias_offset = bias.then(|| {
                let b = offset;
                offset += cout;
                b
            });
            ConvSpec {
                cin,
                cout,
                kernel,
                weight_offset,
                bias_offset,
            }
        };
        let width = |l: usize| cfg.base_width << l;
        let mut enc = Vec::with_capacity(cfg.depth + 1);
        for l in 0..=cfg.depth {
            let cin = if l == 0 { cfg.in_channels } else { width(l - 1) };
            // Convolutions followed by instance normalization carry no bias.
            let first = conv(cin, width(l), 3, false);
            let second = conv(width(l), width(l), 3, false);
            enc.push(BlockSpec { first, second });
        }
        let mut up = Vec::with_capacity(cfg.depth);
        let mut dec = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            up.push(conv(width(l + 1), width(l), 3, false));
            let first = conv(2 * width(l), width(l), 3, false);
            let second = conv(width(l), width(l), 3, false);
            dec.push(BlockSpec { first, second });
        }
        let head = conv(width(0), 1, 1, true);
        Arch {
            enc,
            up,
            dec,
            head,
            n_params: offset,
        }
    }

    fn convs(&self) -> impl Iterator<Item = &ConvSpec> {
        self.enc
            .iter()
            .chain(&self.dec)
            .flat_map(|b| [&b.first, &b.second])
            .chain(&self.up)
            .chain(std::iter::once(&self.head))
    }
}

#[derive(Clone, Debug)]
struct BlockTape<T> {
    first: NormAct<T>,
    second: NormAct<T>,
}

impl<T> BlockTape<T> {
    fn output(&self) -> &[T] {
        &self.second.a
    }
}

/// Activations of one sample retained for the backward pass.
#[derive(Clone, Debug)]
pub struct SampleTape<T> {
    input: Vec<T>,
    enc: Vec<BlockTape<T>>,
    pooled: Vec<Vec<T>>,
    pool_idx: Vec<Vec<u32>>,
    upsampled: Vec<Vec<T>>,
    up: Vec<NormAct<T>>,
    cat: Vec<Vec<T>>,
    dec: Vec<BlockTape<T>>,
    probs: Vec<T>,
}

/// Tapes for every sample of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    tapes: Vec<SampleTape<T>>,
    h: usize,
    w: usize,
}

/// Which gradients a backward pass should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradRequest {
    pub params: bool,
    pub input: bool,
}

impl GradRequest {
    pub const PARAMS: Self = Self {
        params: true,
        input: false,
    };
    pub const INPUT: Self = Self {
        params: false,
        input: true,
    };
    pub const BOTH: Self = Self {
        params: true,
        input: true,
    };
}

#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub params: Option<Vec<T>>,
    pub input: Option<ImageBatch<T>>,
}

/// UNet-style encoder-decoder with skip connections and a sigmoid head.
#[derive(Clone, Debug)]
pub struct UNet<T> {
    config: UNetConfig,
    arch: Arch,
    params: Vec<T>,
}

impl<T: Scalar> UNet<T> {
    /// Builds the network with He-normal weights drawn from `seed`.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let arch = Arch::new(&config);
        let mut params = vec![T::zero(); arch.n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in arch.convs() {
            let std = (2.0 / spec.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[spec.weight_offset..spec.weight_offset + spec.weight_len()] {
                *p = T::lit(normal.sample(&mut rng));
            }
        }
        Ok(Self {
            config,
            arch,
            params,
        })
    }

    /// Rebuilds a network around an existing parameter vector.
    pub fn from_params(config: UNetConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let arch = Arch::new(&config);
        if params.len() != arch.n_params {
            return Err(Error::Shape(format!(
                "network expects {} parameters, got {}",
                arch.n_params,
                params.len()
            )));
        }
        Ok(Self {
            config,
            arch,
            params,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.arch.n_params
    }

    fn check_input(&self, batch: &ImageBatch<T>) -> Result<()> {
        if batch.channels() != self.config.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {}",
                self.config.in_channels,
                batch.channels()
            )));
        }
        let m = self.config.spatial_multiple();
        if batch.height() % m != 0 || batch.width() % m != 0 || batch.height() == 0 || batch.width() == 0 {
            return Err(Error::Shape(format!(
                "input {}×{} is not divisible by 2^depth = {m}",
                batch.height(),
                batch.width()
            )));
        }
        Ok(())
    }

    /// Runs the batch and keeps the activations needed by [`UNet::backward`].
    pub fn forward(&self, batch: &ImageBatch<T>) -> Result<(MapBatch<T>, ForwardCache<T>)> {
        self.check_input(batch)?;
        let (h, w) = (batch.height(), batch.width());
        let tapes = crate::par_map(batch.len(), |i| self.forward_sample(batch.sample(i), h, w));
        let mut data = Vec::with_capacity(batch.len() * h * w);
        for tape in &tapes {
            data.extend_from_slice(&tape.probs);
        }
        let probs = MapBatch::new(batch.len(), h, w, data)?;
        if !probs.all_finite() {
            return Err(Error::NonFiniteOutput("network forward pass".into()));
        }
        Ok((probs, ForwardCache { tapes, h, w }))
    }

    /// Forward pass without retaining activations for a backward pass.
    pub fn predict(&self, batch: &ImageBatch<T>) -> Result<MapBatch<T>> {
        self.forward(batch).map(|(p, _)| p)
    }

    fn block_forward(&self, spec: &BlockSpec, x: &[T], h: usize, w: usize) -> BlockTape<T> {
        let hw = h * w;
        let first = ops::norm_act_forward(spec.first.forward(&self.params, x, h, w), spec.first.cout, hw);
        let second = ops::norm_act_forward(
            spec.second.forward(&self.params, &first.a, h, w),
            spec.second.cout,
            hw,
        );
        BlockTape { first, second }
    }

    fn forward_sample(&self, x: &[T], h: usize, w: usize) -> SampleTape<T> {
        let depth = self.config.depth;
        let level = |l: usize| (h >> l, w >> l);
        let mut enc = Vec::with_capacity(depth + 1);
        let mut pooled = Vec::with_capacity(depth);
        let mut pool_idx = Vec::with_capacity(depth);
        enc.push(self.block_forward(&self.arch.enc[0], x, h, w));
        for l in 1..=depth {
            let (ph, pw) = level(l - 1);
            let c = self.arch.enc[l - 1].second.cout;
            let (p, idx) = ops::maxpool2_forward(enc[l - 1].output(), c, ph, pw);
            let (lh, lw) = level(l);
            enc.push(self.block_forward(&self.arch.enc[l], &p, lh, lw));
            pooled.push(p);
            pool_idx.push(idx);
        }

        let mut upsampled = vec![Vec::new(); depth];
        let mut up: Vec<Option<NormAct<T>>> = vec![None; depth];
        let mut cat = vec![Vec::new(); depth];
        let mut dec: Vec<Option<BlockTape<T>>> = vec![None; depth];
        for l in (0..depth).rev() {
            let below: &[T] = if l + 1 == depth {
                enc[depth].output()
            } else {
                dec[l + 1].as_ref().expect("decoded below").output()
            };
            let (bh, bw) = level(l + 1);
            let (lh, lw) = level(l);
            let spec = &self.arch.up[l];
            let u_in = ops::upsample2_forward(below, spec.cin, bh, bw);
            let u = ops::norm_act_forward(spec.forward(&self.params, &u_in, lh, lw), spec.cout, lh * lw);
            let mut c = Vec::with_capacity(2 * u.a.len());
            c.extend_from_slice(&u.a);
            c.extend_from_slice(enc[l].output());
            dec[l] = Some(self.block_forward(&self.arch.dec[l], &c, lh, lw));
            upsampled[l] = u_in;
            up[l] = Some(u);
            cat[l] = c;
        }
        let dec: Vec<BlockTape<T>> = dec.into_iter().map(|d| d.expect("decoded")).collect();
        let up: Vec<NormAct<T>> = up.into_iter().map(|u| u.expect("upsampled")).collect();

        let logits = self.arch.head.forward(&self.params, dec[0].output(), h, w);
        let lo = T::lit(PROB_EPS);
        let hi = T::one() - lo;
        let probs = logits
            .into_iter()
            .map(|z| {
                let p = (T::one() + (-z).exp()).recip();
                p.max(lo).min(hi)
            })
            .collect();

        SampleTape {
            input: x.to_vec(),
            enc,
            pooled,
            pool_idx,
            upsampled,
            up,
            cat,
            dec,
            probs,
        }
    }

    fn block_backward(
        &self,
        spec: &BlockSpec,
        tape: &BlockTape<T>,
        input: &[T],
        dout: &[T],
        h: usize,
        w: usize,
        grads: &mut Option<Vec<T>>,
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let hw = h * w;
        let dz2 = ops::norm_act_backward(&tape.second, dout, spec.second.cout, hw);
        let mut da1 = vec![T::zero(); spec.first.cout * hw];
        spec.second
            .backward(&self.params, &tape.first.a, &dz2, h, w, grads.as_deref_mut(), Some(&mut da1));
        let dz1 = ops::norm_act_backward(&tape.first, &da1, spec.first.cout, hw);
        let mut dx = need_dx.then(|| vec![T::zero(); spec.first.cin * hw]);
        spec.first
            .backward(&self.params, input, &dz1, h, w, grads.as_deref_mut(), dx.as_deref_mut());
        dx
    }

    fn backward_sample(
        &self,
        tape: &SampleTape<T>,
        dprobs: &[T],
        h: usize,
        w: usize,
        req: GradRequest,
    ) -> (Option<Vec<T>>, Option<Vec<T>>) {
        let depth = self.config.depth;
        let level = |l: usize| (h >> l, w >> l);
        let mut grads = req.params.then(|| vec![T::zero(); self.arch.n_params]);

        let lo = T::lit(PROB_EPS);
        let hi = T::one() - lo;
        let dlogits: Vec<T> = tape
            .probs
            .iter()
            .zip(dprobs)
            .map(|(&p, &g)| if p > lo && p < hi { g * p * (T::one() - p) } else { T::zero() })
            .collect();

        let mut dcur = vec![T::zero(); self.arch.head.cin * h * w];
        self.arch.head.backward(
            &self.params,
            tape.dec[0].output(),
            &dlogits,
            h,
            w,
            grads.as_deref_mut(),
            Some(&mut dcur),
        );

        // Decoder, top level down to the bottleneck.
        let mut denc: Vec<Vec<T>> = (0..=depth)
            .map(|l| {
                let (lh, lw) = level(l);
                vec![T::zero(); self.arch.enc[l].second.cout * lh * lw]
            })
            .collect();
        for l in 0..depth {
            let (lh, lw) = level(l);
            let hw = lh * lw;
            let spec = &self.arch.dec[l];
            let dcat = self
                .block_backward(spec, &tape.dec[l], &tape.cat[l], &dcur, lh, lw, &mut grads, true)
                .expect("requested dx");
            let cu = self.arch.up[l].cout;
            let (du, dskip) = dcat.split_at(cu * hw);
            for (d, &g) in denc[l].iter_mut().zip(dskip) {
                *d += g;
            }
            let dz = ops::norm_act_backward(&tape.up[l], du, cu, hw);
            let up_spec = &self.arch.up[l];
            let mut du_in = vec![T::zero(); up_spec.cin * hw];
            up_spec.backward(
                &self.params,
                &tape.upsampled[l],
                &dz,
                lh,
                lw,
                grads.as_deref_mut(),
                Some(&mut du_in),
            );
            let (bh, bw) = level(l + 1);
            dcur = ops::upsample2_backward(&du_in, up_spec.cin, bh, bw);
        }
        for (d, &g) in denc[depth].iter_mut().zip(&dcur) {
            *d += g;
        }

        // Encoder, bottleneck back to the input.
        let mut dinput = None;
        for l in (0..=depth).rev() {
            let (lh, lw) = level(l);
            let input: &[T] = if l == 0 { &tape.input } else { &tape.pooled[l - 1] };
            let need_dx = l > 0 || req.input;
            let dout = std::mem::take(&mut denc[l]);
            let dx = self.block_backward(&self.arch.enc[l], &tape.enc[l], input, &dout, lh, lw, &mut grads, need_dx);
            if l > 0 {
                ops::maxpool2_backward(&tape.pool_idx[l - 1], &dx.expect("requested dx"), &mut denc[l - 1]);
            } else {
                dinput = dx;
            }
        }
        (grads, dinput)
    }

    /// Back-propagates `dprobs` (gradient of a scalar loss w.r.t. the emitted
    /// probabilities). Parameter gradients are summed over the batch in sample order.
    pub fn backward(&self, cache: &ForwardCache<T>, dprobs: &MapBatch<T>, req: GradRequest) -> Result<Gradients<T>> {
        let (h, w) = (cache.h, cache.w);
        if dprobs.len() != cache.tapes.len() || dprobs.height() != h || dprobs.width() != w {
            return Err(Error::Shape("backward: gradient does not match forward batch".into()));
        }
        let per_sample = crate::par_map(cache.tapes.len(), |i| {
            self.backward_sample(&cache.tapes[i], dprobs.map(i), h, w, req)
        });
        let mut params = req.params.then(|| vec![T::zero(); self.arch.n_params]);
        let mut input = Vec::new();
        for (g, dx) in per_sample {
            if let (Some(total), Some(g)) = (params.as_mut(), g) {
                for (t, v) in total.iter_mut().zip(g) {
                    *t += v;
                }
            }
            if let Some(dx) = dx {
                input.extend(dx);
            }
        }
        let input = if req.input {
            Some(ImageBatch::new(cache.tapes.len(), self.config.in_channels, h, w, input)?)
        } else {
            None
        };
        Ok(Gradients { params, input })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UNetConfig {
        UNetConfig {
            in_channels: 1,
            base_width: 4,
            depth: 2,
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let net = UNet::<f32>::new(
            UNetConfig {
                in_channels: 1,
                base_width: 8,
                depth: 3,
            },
            1,
        )
        .unwrap();
        let batch = ImageBatch::zeros(2, 1, 64, 64);
        let probs = net.predict(&batch).unwrap();
        assert_eq!((probs.len(), probs.height(), probs.width()), (2, 64, 64));
        assert!(probs.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let net = UNet::<f32>::new(small(), 1).unwrap();
        let batch = ImageBatch::zeros(1, 1, 30, 32);
        assert!(matches!(net.predict(&batch), Err(Error::Shape(_))));
    }

    #[test]
    fn seeds_control_initialization() {
        let a = UNet::<f32>::new(small(), 5).unwrap();
        let b = UNet::<f32>::new(small(), 5).unwrap();
        let c = UNet::<f32>::new(small(), 6).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let net = UNet::<f64>::new(small(), 3).unwrap();
        let x: Vec<f64> = (0..64).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
        let batch = ImageBatch::new(1, 1, 8, 8, x.clone()).unwrap();
        let (probs, cache) = net.forward(&batch).unwrap();
        let n = probs.data().len() as f64;
        let dp = MapBatch::filled(1, 8, 8, 1.0 / n);
        let g = net.backward(&cache, &dp, GradRequest::INPUT).unwrap();
        let dx = g.input.unwrap();
        for &i in &[0usize, 9, 27, 63] {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fp = net.predict(&ImageBatch::new(1, 1, 8, 8, xp).unwrap()).unwrap().mean();
            let fm = net.predict(&ImageBatch::new(1, 1, 8, 8, xm).unwrap()).unwrap().mean();
            let fd = (fp - fm) / (2.0 * h);
            let an = dx.data()[i];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1e-6), "pixel {i}: fd {fd} vs {an}");
        }
    }
}
