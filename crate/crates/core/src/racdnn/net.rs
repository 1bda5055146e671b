use rand::RngCore;

use super::config::Preset;
use crate::attention::{constrain_attention, st, st_inverse, AffineAttention, S_MAX, S_MIN};
use crate::nn::{bce_loss, BatchNorm, Conv2d, Linear, ParamStore, Session};
use crate::tensor::{Tensor, Var};
use crate::{Error, Result};

pub const INIT_ENC: &str = "init.enc";
pub const INIT_DEC: &str = "init.dec";
pub const CTX_ENC: &str = "ctx.enc";
pub const CTX_FC: &str = "ctx.fc";
pub const REC_ENC: &str = "rec.enc";
pub const REC_DEC: &str = "rec.dec";

/// Default number of iterations, counting the 0-th (full-image) iteration.
pub const DEFAULT_ITERATIONS: usize = 9;

/// Checks a batch of images `[B, 3, S, S]` against the preset input size.
pub fn check_images(preset: &Preset, shape: &[usize]) -> Result<usize> {
    let s = preset.input_size;
    match *shape {
        [b, 3, h, w] if h == s && w == s => Ok(b),
        _ => Err(Error::shape(format!(
            "expected images [B, 3, {s}, {s}] for preset {}, got {shape:?}",
            preset.name
        ))),
    }
}

/// The initial encoder-decoder saliency network.
#[derive(Clone, Debug)]
pub struct InitialNet {
    pub preset: Preset,
}

impl InitialNet {
    pub fn new(preset: Preset) -> Result<Self> {
        preset.validate()?;
        Ok(InitialNet { preset })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        self.preset.encoder.init(INIT_ENC, store, rng)?;
        self.preset.decoder.init(INIT_DEC, store, rng)
    }

    /// Raw map `[B, 1, M, M]` for images `[B, 3, S, S]`.
    pub fn forward(&self, s: &mut Session, images: Var) -> Result<Var> {
        check_images(&self.preset, s.graph.try_value(images)?.shape())?;
        let z = self.preset.encoder.forward(INIT_ENC, s, images)?;
        self.preset.decoder.forward(INIT_DEC, s, z)
    }
}

/// Raw map `r_0` and normalized map `σ(r_0)`, both `[M, M]`, for one image
/// `[3, S, S]`, using inference-mode batch normalization.
pub fn initial_saliency(store: &ParamStore, preset: &Preset, image: &Tensor) -> Result<(Tensor, Tensor)> {
    let net = InitialNet::new(preset.clone())?;
    let &[3, h, w] = image.shape() else {
        return Err(Error::shape(format!(
            "image must be [3, H, W], got {:?}",
            image.shape()
        )));
    };
    let mut s = Session::new(store, crate::nn::Mode::Infer, false);
    let x = s.input(image.clone().reshape(&[1, 3, h, w])?);
    let r = net.forward(&mut s, x)?;
    let sbar = s.graph.sigmoid(r)?;
    let m = s.value(r).shape()[2];
    Ok((
        s.value(r).clone().reshape(&[m, m])?,
        s.value(sbar).clone().reshape(&[m, m])?,
    ))
}

/// Recurrent state of a batch: `h1: [B, C_h, k, k]`, `h2: [B, D]`.
#[derive(Clone, Copy, Debug)]
pub struct RecurrentState {
    pub h1: Var,
    pub h2: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub attention: AffineAttention,
    /// Attended patch `[3, S, S]`.
    pub patch: Tensor,
    /// Refinement written back this iteration, `[M, M]`; zero at iteration 0.
    pub delta: Tensor,
    /// Running raw map after this iteration, `[M, M]`.
    pub map: Tensor,
}

/// One record per iteration, the first being the full-image iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefinementTrace {
    pub entries: Vec<TraceEntry>,
}

impl RefinementTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Result of a batched rollout.
pub struct Rollout {
    /// Final raw maps `r_N`, `[B, 1, M, M]`.
    pub logits: Var,
    /// Per-sample traces; empty unless recording was requested.
    pub traces: Vec<RefinementTrace>,
}

/// The recurrent attentional refinement network.
#[derive(Clone, Debug)]
pub struct Refiner {
    pub preset: Preset,
    code_channels: usize,
    code_size: usize,
    map_size: usize,
}

impl Refiner {
    pub fn new(preset: Preset) -> Result<Self> {
        preset.validate()?;
        let (code_channels, code_size) = preset.code_shape()?;
        let map_size = preset.map_size()?;
        Ok(Refiner {
            preset,
            code_channels,
            code_size,
            map_size,
        })
    }

    pub fn map_size(&self) -> usize {
        self.map_size
    }

    fn flat(&self) -> usize {
        self.code_channels * self.code_size * self.code_size
    }

    fn conv(&self, name: &str, bias: bool) -> Conv2d {
        let k = self.preset.recurrent_kernel;
        Conv2d {
            name: name.into(),
            in_channels: self.code_channels,
            out_channels: self.code_channels,
            kernel: k,
            stride: 1,
            padding: k / 2,
            bias,
        }
    }

    fn w1_input(&self) -> Conv2d {
        self.conv("rec.w1i", false)
    }

    fn w1_recurrent(&self) -> Conv2d {
        self.conv("rec.w1r", true)
    }

    fn bn1(&self) -> BatchNorm {
        BatchNorm::new("rec.bn1", self.code_channels)
    }

    fn linear(name: &str, i: usize, o: usize, bias: bool) -> Linear {
        Linear {
            name: name.into(),
            in_features: i,
            out_features: o,
            bias,
        }
    }

    fn w2_input(&self) -> Linear {
        Self::linear("rec.w2i", self.flat(), self.preset.hidden, false)
    }

    fn w2_recurrent(&self) -> Linear {
        Self::linear("rec.w2r", self.preset.hidden, self.preset.hidden, true)
    }

    fn bn2(&self) -> BatchNorm {
        BatchNorm::new("rec.bn2", self.preset.hidden)
    }

    fn ctx_fc(&self) -> Linear {
        Self::linear(CTX_FC, self.flat(), self.preset.hidden, false)
    }

    fn loc1(&self) -> Linear {
        Self::linear("loc.1", self.preset.hidden, self.preset.loc_hidden, false)
    }

    fn ctx_bn(&self) -> BatchNorm {
        BatchNorm::new("ctx.bn", self.preset.hidden)
    }

    fn loc_bn(&self) -> BatchNorm {
        BatchNorm::new("loc.bn1", self.preset.loc_hidden)
    }

    fn loc2(&self) -> Linear {
        Self::linear("loc.2", self.preset.loc_hidden, 3, true)
    }

    /// Randomly initializes every refinement parameter. The localization
    /// output layer starts small so early windows stay near the default.
    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        self.preset.encoder.init(CTX_ENC, store, rng)?;
        self.preset.encoder.init(REC_ENC, store, rng)?;
        self.preset.decoder.init(REC_DEC, store, rng)?;
        self.w1_input().init(store, rng)?;
        self.w1_recurrent().init(store, rng)?;
        self.bn1().init(store)?;
        self.w2_input().init(store, rng)?;
        self.w2_recurrent().init(store, rng)?;
        self.bn2().init(store)?;
        self.ctx_fc().init(store, rng)?;
        self.ctx_bn().init(store)?;
        self.loc1().init(store, rng)?;
        self.loc_bn().init(store)?;
        self.loc2().init(store, rng)?;
        if let Some(w) = store.param_mut("loc.2.weight") {
            *w = w.map(|v| 0.1 * v);
        }
        Ok(())
    }

    /// Copies the trained initial network into the refinement encoders and
    /// decoder, then zeroes the decoder's output layer.
    pub fn adopt_initial(&self, store: &mut ParamStore) -> Result<()> {
        if !store.contains_prefix(&format!("{INIT_DEC}.")) {
            return Err(Error::InvalidArgument("store holds no initial network".into()));
        }
        store.copy_prefix(&format!("{INIT_ENC}."), &format!("{CTX_ENC}."));
        store.copy_prefix(&format!("{INIT_ENC}."), &format!("{REC_ENC}."));
        store.copy_prefix(&format!("{INIT_DEC}."), &format!("{REC_DEC}."));
        // an untrained refinement adds nothing to r_0
        let last = self.preset.decoder.last_conv(REC_DEC).expect("decoder has a conv");
        for suffix in ["weight", "bias"] {
            if let Some(p) = store.param_mut(&format!("{last}.{suffix}")) {
                *p = p.map(|_| 0.0);
            }
        }
        Ok(())
    }

    /// Names of all refinement parameters (everything but the initial net).
    pub fn is_refinement_param(name: &str) -> bool {
        !name.starts_with("init.")
    }

    fn flatten(&self, s: &mut Session, h1: Var) -> Result<Var> {
        let b = s.graph.try_value(h1)?.shape()[0];
        s.graph.reshape(h1, &[b, self.flat()])
    }

    /// Full-image context: `h1_0`, `h2_0` and the first window `τ_1`.
    pub fn init_state(&self, s: &mut Session, images: Var) -> Result<(RecurrentState, Var)> {
        check_images(&self.preset, s.graph.try_value(images)?.shape())?;
        let h1 = self.preset.encoder.forward(CTX_ENC, s, images)?;
        let flat = self.flatten(s, h1)?;
        let pre = self.ctx_fc().forward(s, flat)?;
        let pre = self.ctx_bn().forward(s, pre)?;
        let h2 = s.graph.relu(pre)?;
        let tau = self.localize(s, h2)?;
        Ok((RecurrentState { h1, h2 }, tau))
    }

    /// Samples the encoder-sized patch of window `tau` (`[B, 3]`).
    pub fn attend(&self, s: &mut Session, images: Var, tau: Var) -> Result<Var> {
        let n = self.preset.input_size;
        st(&mut s.graph, images, tau, n, n)
    }

    pub fn encode(&self, s: &mut Session, patch: Var) -> Result<Var> {
        self.preset.encoder.forward(REC_ENC, s, patch)
    }

    /// `ReLU(BN(W¹_I ∗ z) + W¹_R ∗ h1_prev + b¹)`.
    pub fn conv_recurrent_step(&self, s: &mut Session, z: Var, h1_prev: Var) -> Result<Var> {
        let (zs, hs) = (s.graph.try_value(z)?.shape(), s.graph.try_value(h1_prev)?.shape());
        if zs != hs {
            return Err(Error::shape(format!("z {zs:?} vs h1 {hs:?}")));
        }
        let a = self.w1_input().forward(s, z)?;
        let a = self.bn1().forward(s, a)?;
        let r = self.w1_recurrent().forward(s, h1_prev)?;
        let sum = s.graph.add(a, r)?;
        s.graph.relu(sum)
    }

    /// `ReLU(BN(W²_I · flatten(h1)) + W²_R · h2_prev + b²)`.
    pub fn fc_recurrent_step(&self, s: &mut Session, h1: Var, h2_prev: Var) -> Result<Var> {
        let b = s.graph.try_value(h1)?.shape()[0];
        let hs = s.graph.try_value(h2_prev)?.shape();
        if hs != [b, self.preset.hidden] {
            return Err(Error::shape(format!(
                "h2 {hs:?}, expected [{b}, {}]",
                self.preset.hidden
            )));
        }
        let flat = self.flatten(s, h1)?;
        let a = self.w2_input().forward(s, flat)?;
        let a = self.bn2().forward(s, a)?;
        let r = self.w2_recurrent().forward(s, h2_prev)?;
        let sum = s.graph.add(a, r)?;
        s.graph.relu(sum)
    }

    /// Next window `[B, 3]` from `h2`.
    pub fn localize(&self, s: &mut Session, h2: Var) -> Result<Var> {
        let a = self.loc1().forward(s, h2)?;
        let a = self.loc_bn().forward(s, a)?;
        let a = s.graph.relu(a)?;
        let raw = self.loc2().forward(s, a)?;
        constrain_attention(&mut s.graph, raw, S_MIN, S_MAX)
    }

    /// Decodes `h1` and adds it to `r_prev` inside window `tau`; returns the
    /// new map and the written delta.
    pub fn refine_step(&self, s: &mut Session, r_prev: Var, h1: Var, tau: Var) -> Result<(Var, Var)> {
        let patch = self.preset.decoder.forward(REC_DEC, s, h1)?;
        let rs = s.graph.try_value(r_prev)?.shape().to_vec();
        let delta = st_inverse(&mut s.graph, patch, tau, rs[2], rs[3])?;
        Ok((s.graph.add(r_prev, delta)?, delta))
    }

    /// Runs `n` iterations (the full-image one plus `n - 1` attended
    /// refinements) starting from raw maps `r0: [B, 1, M, M]`.
    pub fn rollout(&self, s: &mut Session, images: Var, r0: Var, n: usize, record: bool) -> Result<Rollout> {
        if n == 0 {
            return Err(Error::InvalidArgument("iteration count must be >= 1".into()));
        }
        let batch = check_images(&self.preset, s.graph.try_value(images)?.shape())?;
        let m = self.map_size;
        let rs = s.graph.try_value(r0)?.shape();
        if rs != [batch, 1, m, m] {
            return Err(Error::shape(format!("r0 {rs:?}, expected [{batch}, 1, {m}, {m}]")));
        }
        let mut traces = vec![RefinementTrace::default(); if record { batch } else { 0 }];
        if record {
            let img = s.value(images).clone();
            let r = s.value(r0).clone();
            for (b, t) in traces.iter_mut().enumerate() {
                t.entries.push(TraceEntry {
                    attention: AffineAttention::IDENTITY,
                    patch: img.slice_outer(b)?,
                    delta: Tensor::zeros(&[m, m])?,
                    map: r.slice_outer(b)?.reshape(&[m, m])?,
                });
            }
        }
        if n == 1 {
            return Ok(Rollout { logits: r0, traces });
        }
        let (mut state, mut tau) = self.init_state(s, images)?;
        let mut r = r0;
        for i in 1..n {
            let patch = self.attend(s, images, tau)?;
            let z = self.encode(s, patch)?;
            let h1 = self.conv_recurrent_step(s, z, state.h1)?;
            let (next, delta) = self.refine_step(s, r, h1, tau)?;
            r = next;
            if record {
                let (tv, pv, dv, rv) = (s.value(tau), s.value(patch), s.value(delta), s.value(r));
                for (b, t) in traces.iter_mut().enumerate() {
                    let p = &tv.data()[3 * b..3 * b + 3];
                    t.entries.push(TraceEntry {
                        attention: AffineAttention::new(p[0], p[1], p[2])?,
                        patch: pv.slice_outer(b)?,
                        delta: dv.slice_outer(b)?.reshape(&[m, m])?,
                        map: rv.slice_outer(b)?.reshape(&[m, m])?,
                    });
                }
            }
            if i + 1 < n {
                let h2 = self.fc_recurrent_step(s, h1, state.h2)?;
                tau = self.localize(s, h2)?;
                state = RecurrentState { h1, h2 };
            }
        }
        Ok(Rollout { logits: r, traces })
    }

    /// BCE between the refined normalized map and the groundtruth.
    pub fn loss(&self, s: &mut Session, sbar: Var, target: &Tensor) -> Result<Var> {
        bce_loss(&mut s.graph, sbar, target)
    }
}

/// Refined normalized map `[M, M]` and trace for one image `[3, S, S]` with
/// its initial raw map `r0: [M, M]`, in inference mode.
pub fn run_refinement(
    store: &ParamStore,
    preset: &Preset,
    image: &Tensor,
    r0: &Tensor,
    n: usize,
) -> Result<(Tensor, RefinementTrace)> {
    let net = Refiner::new(preset.clone())?;
    let &[3, h, w] = image.shape() else {
        return Err(Error::shape(format!(
            "image must be [3, H, W], got {:?}",
            image.shape()
        )));
    };
    let m = net.map_size();
    if r0.shape() != [m, m] {
        return Err(Error::shape(format!("r0 {:?}, expected [{m}, {m}]", r0.shape())));
    }
    let mut s = Session::new(store, crate::nn::Mode::Infer, false);
    let x = s.input(image.clone().reshape(&[1, 3, h, w])?);
    let r = s.input(r0.clone().reshape(&[1, 1, m, m])?);
    let out = net.rollout(&mut s, x, r, n, true)?;
    let sbar = s.graph.sigmoid(out.logits)?;
    let trace = out.traces.into_iter().next().expect("one trace per sample");
    Ok((s.value(sbar).clone().reshape(&[m, m])?, trace))
}
