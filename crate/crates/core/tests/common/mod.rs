#![allow(dead_code)]

use std::f64::consts::TAU;

use racdnn::attention::{bilinear_sample, generate_grid, invert_transform, make_transform, S_MAX, S_MIN};
use racdnn::data::{generate, DatasetSpec};
use racdnn::nn::{
    batchnorm_train, bce_loss, bce_with_logits, conv2d, linear, unpool, Mode, ParamStore, Session, BN_EPS,
};
use racdnn::racdnn::{initial_logits, make_batch, InitialNet, Preset, Refiner};
use racdnn::tensor::{Graph, Tensor, Var};
use racdnn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-3;
pub const COORDINATES: usize = 24;
const FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `Σ w ⊙ v` with fixed random weights, so every output entry matters.
pub fn project(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let w = uniform(g.value(v).shape(), -1.0, 1.0, &mut rng(seed));
    let w = g.constant(w);
    let p = g.mul(v, w)?;
    g.sum(p)
}

fn eval(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let mut g = Graph::no_grad();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let l = f(&mut g, &vars).unwrap();
    g.value(l).data()[0]
}

/// Worst relative error between autodiff and central differences over
/// random coordinates of the inputs marked in `wrt`.
pub fn check_op(inputs: &[Tensor], wrt: &[bool], seed: u64, f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(wrt)
        .map(|(t, &w)| if w { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect();
    let l = f(&mut g, &vars).unwrap();
    g.backward(l).unwrap();
    let targets: Vec<usize> = (0..inputs.len()).filter(|&i| wrt[i]).collect();
    let mut r = rng(seed ^ 0xfd);
    let mut worst: f64 = 0.0;
    for k in 0..COORDINATES {
        let which = targets[k % targets.len()];
        let idx = r.random_range(0..inputs[which].len());
        let analytic = g.grad(vars[which]).map_or(0.0, |d| d[idx]);
        let mut shifted = inputs.to_vec();
        shifted[which].data_mut()[idx] += STEP;
        let up = eval(&shifted, f);
        shifted[which].data_mut()[idx] -= 2.0 * STEP;
        let down = eval(&shifted, f);
        worst = worst.max(rel_err(analytic, (up - down) / (2.0 * STEP)));
    }
    worst
}

pub fn conv_case(stride: usize, padding: usize) -> f64 {
    let mut r = rng(11 + stride as u64);
    let x = uniform(&[2, 3, 7, 6], -1.0, 1.0, &mut r);
    let w = uniform(&[4, 3, 3, 3], -0.5, 0.5, &mut r);
    let b = uniform(&[4], -0.5, 0.5, &mut r);
    check_op(&[x, w, b], &[true; 3], 1, &move |g, v| {
        let y = conv2d(g, v[0], v[1], Some(v[2]), stride, padding)?;
        project(g, y, 2)
    })
}

pub fn unpool_case() -> f64 {
    let x = uniform(&[2, 3, 3, 4], -1.0, 1.0, &mut rng(12));
    check_op(&[x], &[true], 3, &|g, v| {
        let y = unpool(g, v[0], 2)?;
        project(g, y, 4)
    })
}

pub fn batchnorm_case() -> f64 {
    let mut r = rng(13);
    let x = uniform(&[4, 3, 3, 2], -2.0, 2.0, &mut r);
    let gamma = uniform(&[3], 0.5, 1.5, &mut r);
    let beta = uniform(&[3], -0.5, 0.5, &mut r);
    check_op(&[x, gamma, beta], &[true; 3], 5, &|g, v| {
        let (y, _) = batchnorm_train(g, v[0], v[1], v[2], BN_EPS)?;
        project(g, y, 6)
    })
}

pub fn linear_case() -> f64 {
    let mut r = rng(14);
    let x = uniform(&[3, 5], -1.0, 1.0, &mut r);
    let w = uniform(&[4, 5], -1.0, 1.0, &mut r);
    let b = uniform(&[4], -1.0, 1.0, &mut r);
    check_op(&[x, w, b], &[true; 3], 7, &|g, v| {
        let y = linear(g, v[0], v[1], Some(v[2]))?;
        project(g, y, 8)
    })
}

fn binary(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| f64::from(u8::from(r.random_bool(0.4)))).collect()).unwrap()
}

pub fn bce_case() -> f64 {
    let p = uniform(&[3, 4, 4], 0.05, 0.95, &mut rng(15));
    let t = binary(&[3, 4, 4], 16);
    check_op(&[p], &[true], 9, &move |g, v| bce_loss(g, v[0], &t))
}

pub fn bce_logits_case() -> f64 {
    let p = uniform(&[3, 4, 4], -6.0, 6.0, &mut rng(17));
    let t = binary(&[3, 4, 4], 18);
    check_op(&[p], &[true], 10, &move |g, v| bce_with_logits(g, v[0], &t))
}

/// Normalized coordinate whose pixel-space position keeps at least `margin`
/// away from every pixel boundary.
fn off_boundary(n: usize, margin: f64, r: &mut ChaCha8Rng) -> f64 {
    let cell = r.random_range(0..n - 1) as f64;
    let p = cell + r.random_range(margin..1.0 - margin);
    2.0 * p / (n - 1) as f64 - 1.0
}

pub fn bilinear_case() -> f64 {
    let mut r = rng(19);
    let (h, w) = (5, 6);
    let src = uniform(&[2, 2, h, w], -1.0, 1.0, &mut r);
    let mut grid = Vec::new();
    for _ in 0..2 * 4 * 3 {
        grid.push(off_boundary(w, 2e-2, &mut r));
        grid.push(off_boundary(h, 2e-2, &mut r));
    }
    let grid = Tensor::from_vec(&[2, 4, 3, 2], grid).unwrap();
    check_op(&[src, grid], &[true, true], 11, &|g, v| {
        let y = bilinear_sample(g, v[0], v[1])?;
        project(g, y, 12)
    })
}

/// A toy-preset model with freshly initialized (non-neutral) refinement
/// weights, two synthetic images, their targets and the initial raw maps.
pub struct RolloutFixture {
    pub preset: Preset,
    pub refiner: Refiner,
    pub store: ParamStore,
    pub images: Tensor,
    pub targets: Tensor,
    pub r0: Tensor,
}

impl RolloutFixture {
    pub fn new(seed: u64) -> Self {
        let preset = Preset::toy();
        let initial = InitialNet::new(preset.clone()).unwrap();
        let refiner = Refiner::new(preset.clone()).unwrap();
        let mut store = ParamStore::new();
        let mut r = rng(seed);
        initial.init(&mut store, &mut r).unwrap();
        refiner.init(&mut store, &mut r).unwrap();
        let samples = generate(&DatasetSpec::new(seed, 2, preset.input_size)).unwrap();
        let refs: Vec<_> = samples.iter().collect();
        let batch = make_batch(&preset, &refs).unwrap();
        let r0 = initial_logits(&initial, &store, &batch.images).unwrap();
        RolloutFixture {
            preset,
            refiner,
            store,
            images: batch.images,
            targets: batch.targets,
            r0,
        }
    }

    pub fn loss_of(&self, store: &ParamStore, n: usize) -> f64 {
        self.loss(store, n, false).0
    }

    fn loss(&self, store: &ParamStore, n: usize, grads: bool) -> (f64, racdnn::nn::Gradients) {
        let (l, g, _) = self.evaluate(store, n, grads);
        (l, g)
    }

    /// Loss, gradients and which intermediate values are exactly zero, which
    /// identifies the active pieces of every ReLU.
    fn evaluate(&self, store: &ParamStore, n: usize, grads: bool) -> (f64, racdnn::nn::Gradients, Vec<bool>) {
        let mut s = Session::new(store, Mode::Train, grads);
        let x = s.input(self.images.clone());
        let r = s.input(self.r0.clone());
        let out = self.refiner.rollout(&mut s, x, r, n, false).unwrap();
        let l = bce_with_logits(&mut s.graph, out.logits, &self.targets).unwrap();
        if grads {
            s.backward(l).unwrap();
        }
        let signs = s
            .graph
            .values()
            .flat_map(|t| t.data().iter().map(|&v| v == 0.0))
            .collect();
        (s.value(l).data()[0], s.gradients(), signs)
    }
}

/// Low-frequency images of the same shape as `like`.
pub fn smooth_images(like: &Tensor, seed: u64) -> Tensor {
    let &[b, c, h, w] = like.shape() else {
        panic!("expected a batch")
    };
    let mut r = rng(seed ^ 0x5107);
    let mut data = Vec::with_capacity(like.len());
    for _ in 0..b * c {
        let (fx, fy) = (r.random_range(0.5..1.5), r.random_range(0.5..1.5));
        let (px, py) = (r.random_range(0.0..TAU), r.random_range(0.0..TAU));
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                data.push(0.5 + 0.2 * (TAU * fx * u + px).sin() + 0.2 * (TAU * fy * v + py).cos());
            }
        }
    }
    Tensor::from_vec(like.shape(), data).unwrap()
}

impl RolloutFixture {
    /// Sets the localization output layer so that every window has scale
    /// one half and sits centred, which keeps all sampling points of both
    /// transformers well inside interpolation cells. The output weights stay
    /// small but nonzero, so every parameter still influences the loss.
    pub fn smooth(seed: u64) -> Self {
        let mut fx = RolloutFixture::new(seed);
        fx.images = smooth_images(&fx.images, seed);
        let initial = InitialNet::new(fx.preset.clone()).unwrap();
        fx.r0 = initial_logits(&initial, &fx.store, &fx.images).unwrap();
        let u = ((0.5 - S_MIN) / (S_MAX - S_MIN) / (1.0 - (0.5 - S_MIN) / (S_MAX - S_MIN))).ln();
        fx.store
            .param_mut("loc.2.bias")
            .unwrap()
            .data_mut()
            .copy_from_slice(&[u, 0.0, 0.0]);
        for w in fx.store.param_mut("loc.2.weight").unwrap().data_mut() {
            *w *= 1e-3;
        }
        fx
    }

    /// Smallest distance, in pixels, from any sampling point of an
    /// `n`-iteration rollout to an interpolation cell boundary.
    pub fn sampling_margin(&self, n: usize) -> f64 {
        let mut s = Session::new(&self.store, Mode::Train, false);
        let x = s.input(self.images.clone());
        let r = s.input(self.r0.clone());
        let out = self.refiner.rollout(&mut s, x, r, n, true).unwrap();
        let (size, m) = (self.preset.input_size, self.refiner.map_size());
        let mut margin = f64::INFINITY;
        let mut scan = |t: &[[f64; 3]; 2], out_n: usize, src_n: usize| {
            let grid = generate_grid(t, out_n, out_n).unwrap();
            for i in 0..out_n {
                for j in 0..out_n {
                    let (gx, gy) = grid.point(i, j);
                    for c in [gx, gy] {
                        let p = (c + 1.0) * 0.5 * (src_n - 1) as f64;
                        margin = margin.min((p - p.round()).abs());
                    }
                }
            }
        };
        for trace in &out.traces {
            for e in &trace.entries[1..] {
                scan(&make_transform(&e.attention).unwrap(), size, size);
                scan(&invert_transform(&e.attention).unwrap(), m, m);
            }
        }
        margin
    }
}

pub struct RolloutCheck {
    /// Worst relative error over the checked coordinates.
    pub worst: f64,
    pub checked: usize,
    /// Coordinates replaced because a ReLU switched between the two sides of
    /// the difference stencil.
    pub straddling: usize,
    /// Smallest distance of a sampling point to an interpolation cell
    /// boundary, in pixels.
    pub margin: f64,
}

/// Gradient check of the training loss of an `n`-iteration rollout with
/// respect to refinement parameters at random entries.
pub fn rollout_case(n: usize) -> RolloutCheck {
    let fx = RolloutFixture::smooth(21);
    let margin = fx.sampling_margin(n);
    let (_, grads) = fx.loss(&fx.store, n, true);
    let names: Vec<String> = fx
        .store
        .params()
        .map(|(k, _)| k.clone())
        .filter(|k| Refiner::is_refinement_param(k))
        .collect();
    let loc: Vec<&String> = names.iter().filter(|n| n.starts_with("loc.")).collect();
    let mut r = rng(22);
    let mut check = RolloutCheck {
        worst: 0.0,
        checked: 0,
        straddling: 0,
        margin,
    };
    while check.checked < COORDINATES && check.straddling < 4 * COORDINATES {
        let name = match loc.get(check.checked) {
            Some(n) => (*n).clone(),
            None => names[r.random_range(0..names.len())].clone(),
        };
        let idx = r.random_range(0..fx.store.param(&name).unwrap().len());
        let analytic = grads.get(&name).map_or(0.0, |g| g[idx]);
        let mut shifted = fx.store.clone();
        shifted.param_mut(&name).unwrap().data_mut()[idx] += STEP;
        let (up, _, up_signs) = fx.evaluate(&shifted, n, false);
        shifted.param_mut(&name).unwrap().data_mut()[idx] -= 2.0 * STEP;
        let (down, _, down_signs) = fx.evaluate(&shifted, n, false);
        if up_signs != down_signs {
            check.straddling += 1;
            continue;
        }
        check.worst = check.worst.max(rel_err(analytic, (up - down) / (2.0 * STEP)));
        check.checked += 1;
    }
    check
}

/// Every case of the gradient suite with its worst relative error.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    vec![
        ("conv2d stride 1", conv_case(1, 1)),
        ("conv2d stride 2", conv_case(2, 1)),
        ("unpool", unpool_case()),
        ("batchnorm", batchnorm_case()),
        ("linear", linear_case()),
        ("bce", bce_case()),
        ("bce with logits", bce_logits_case()),
        ("bilinear sample", bilinear_case()),
        ("toy rollout", rollout_case(3).worst),
    ]
}
