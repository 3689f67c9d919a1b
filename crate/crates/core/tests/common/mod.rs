//! Synthetic data shared by the integration suites.
#![allow(dead_code)]

use fusionkit::ensemble::{ClassDistribution, NUM_CLASSES};
use fusionkit::records::{PredictionLog, PredictionRecord};
use rand::{Rng, SeedableRng};
use fusionkit::skin::{GaussianClassConditional, SkinModel, Variant};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_distribution(rng: &mut impl Rng) -> ClassDistribution {
    let mut w = [0.0; NUM_CLASSES];
    for v in w.iter_mut() {
        *v = rng.gen::<f64>() + 1e-3;
    }
    ClassDistribution::normalized(w).unwrap()
}

fn other_class(rng: &mut impl Rng, truth: usize) -> usize {
    let c = rng.gen_range(0..NUM_CLASSES - 1);
    if c >= truth {
        c + 1
    } else {
        c
    }
}

/// One classifier that is one-hot on the truth 90% of the time (one-hot on a
/// random wrong class otherwise) and four classifiers emitting uniform noise.
pub fn strong_plus_noise(n: usize, seed: u64) -> PredictionLog {
    let mut rng = rng(seed);
    let sessions = 20;
    let records = (0..n)
        .map(|i| {
            let truth = rng.gen_range(0..NUM_CLASSES);
            let strong = if rng.gen_bool(0.9) {
                ClassDistribution::one_hot(truth)
            } else {
                ClassDistribution::one_hot(other_class(&mut rng, truth))
            };
            let mut outputs = vec![strong];
            outputs.extend((0..4).map(|_| random_distribution(&mut rng)));
            PredictionRecord {
                frame_id: format!("f{i:05}"),
                session_id: format!("s{:02}", i % sessions),
                timestamp_s: (i / sessions) as f64 / 30.0,
                true_class: truth,
                outputs,
            }
        })
        .collect();
    let names = ["strong", "noise1", "noise2", "noise3", "noise4"].map(String::from).to_vec();
    PredictionLog::new(names, records).unwrap()
}

/// Random symmetric positive-definite `d × d` matrix, row-major: `A Aᵀ + s I`.
pub fn random_spd(rng: &mut impl Rng, d: usize, scale: f64) -> Vec<f64> {
    let a: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum();
        }
        m[i * d + i] += 0.5 * scale * scale;
    }
    m
}

/// Largest relative error between the analytic MLP gradient and central
/// differences with step 1e-5, on a random 3-record batch. Instances are
/// redrawn until no hidden pre-activation sits within 1e-3 of the ReLU kink.
pub fn mlp_gradient_check(seed: u64) -> f64 {
    use fusionkit::mlp::{MlpDataset, MlpFuser};
    let mut rng = rng(seed);
    let n_classifiers = 3;
    let hidden = 16;
    loop {
        let fuser = MlpFuser::random(n_classifiers, hidden, 1e-3, 0.5, &mut rng);
        let inputs: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                (0..n_classifiers)
                    .flat_map(|_| *random_distribution(&mut rng).probs())
                    .collect()
            })
            .collect();
        let d = fuser.input_dim();
        let near_kink = inputs.iter().any(|x| {
            (0..hidden).any(|j| {
                let pre = fuser.b1[j] + (0..d).map(|i| fuser.w1[j * d + i] * x[i]).sum::<f64>();
                pre.abs() < 1e-3
            })
        });
        if near_kink {
            continue;
        }
        let truths = (0..3).map(|_| rng.gen_range(0..NUM_CLASSES)).collect();
        let data = MlpDataset { inputs, truths };
        let batch = [0, 1, 2];
        let analytic = fuser.gradient(&data, &batch).unwrap().flatten();
        let params = fuser.parameters();
        let h = 1e-5;
        let mut probe = fuser.clone();
        let mut worst: f64 = 0.0;
        for (i, &a) in analytic.iter().enumerate() {
            let mut p = params.clone();
            p[i] += h;
            probe.set_parameters(&p).unwrap();
            let up = probe.loss_on(&data, &batch).unwrap();
            p[i] -= 2.0 * h;
            probe.set_parameters(&p).unwrap();
            let down = probe.loss_on(&data, &batch).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
        return worst;
    }
}

/// Random classifier net on a `canonical` input: conv, relu, an optional
/// stride-aligned pool, then two dense layers ending in a 2-way softmax.
/// Returns the net, its canonical shape and the total spatial stride.
pub fn random_fc_net(rng: &mut impl Rng) -> (fusionkit::fcn::SmallNet, fusionkit::fcn::Shape, usize) {
    use fusionkit::fcn::{Conv, Dense, Layer, Shape, SmallNet};
    let w = |n: usize, rng: &mut dyn rand::RngCore| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let in_c = rng.gen_range(1..4);
    let k = rng.gen_range(1..4);
    let mid_c = rng.gen_range(1..5);
    let pool = rng.gen_bool(0.5);
    let cells = rng.gen_range(1..4);
    // conv output must be a multiple of the pool window for stride alignment
    let conv_out = if pool { 2 * cells } else { cells };
    let side = conv_out + k - 1;
    let canonical = Shape {
        height: side,
        width: side,
        channels: in_c,
    };
    let mut layers = vec![
        Layer::Conv(Conv {
            kernel_h: k,
            kernel_w: k,
            in_channels: in_c,
            out_channels: mid_c,
            stride: 1,
            weights: w(k * k * in_c * mid_c, rng),
            bias: w(mid_c, rng),
        }),
        Layer::Relu,
    ];
    let mut stride = 1;
    if pool {
        layers.push(Layer::MaxPool { window: 2, stride: 2 });
        stride = 2;
    }
    let flat = cells * cells * mid_c;
    let hidden = rng.gen_range(2..6);
    layers.push(Layer::Dense(Dense {
        in_dim: flat,
        out_dim: hidden,
        weights: w(flat * hidden, rng),
        bias: w(hidden, rng),
    }));
    layers.push(Layer::Relu);
    layers.push(Layer::Dense(Dense {
        in_dim: hidden,
        out_dim: 2,
        weights: w(hidden * 2, rng),
        bias: w(2, rng),
    }));
    layers.push(Layer::ChannelSoftmax);
    (SmallNet::new(layers).unwrap(), canonical, stride)
}

pub fn random_tensor(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> fusionkit::fcn::Tensor3 {
    fusionkit::fcn::Tensor3::new(h, w, c, (0..h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

/// Frame stream for window selection: `sessions` sessions of `seconds`
/// seconds at 30 fps, the true posture changing every `switch_s` seconds.
/// Each fused frame peaks on the truth with probability `1 - noise` and on a
/// random wrong class otherwise. Returns records (with a single classifier
/// column holding the fused output).
pub fn switching_stream(sessions: usize, seconds: f64, switch_s: f64, noise: f64, seed: u64) -> PredictionLog {
    let fps = 30.0;
    let mut rng = rng(seed);
    let frames = (seconds * fps) as usize;
    let per_segment = (switch_s * fps) as usize;
    let mut records = Vec::new();
    for s in 0..sessions {
        let mut truth = rng.gen_range(0..NUM_CLASSES);
        for f in 0..frames {
            if f > 0 && f % per_segment == 0 {
                truth = other_class(&mut rng, truth);
            }
            let peak = if rng.gen_bool(noise) { other_class(&mut rng, truth) } else { truth };
            let mut w = [0.4 / (NUM_CLASSES - 1) as f64; NUM_CLASSES];
            w[peak] = 0.6;
            records.push(PredictionRecord {
                frame_id: format!("s{s}f{f}"),
                session_id: format!("s{s}"),
                timestamp_s: f as f64 / fps,
                true_class: truth,
                outputs: vec![ClassDistribution::normalized(w).unwrap()],
            });
        }
    }
    PredictionLog::new(vec!["fused".into()], records).unwrap()
}

/// Stack-based flood fill, visiting seeds in row-major order.
pub fn flood_fill_oracle(mask: &fusionkit::raster::Mask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut labels = vec![0u32; mask.bits.len()];
    let mut sizes = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if !mask.bits[i] || labels[i] != 0 {
                continue;
            }
            let id = sizes.len() as u32 + 1;
            let mut stack = vec![(x, y)];
            let mut size = 0;
            labels[i] = id;
            while let Some((cx, cy)) = stack.pop() {
                size += 1;
                for (dx, dy) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
                    let (nx, ny) = (cx + dx, cy + dy);
                    if (0..w).contains(&nx) && (0..h).contains(&ny) {
                        let j = (ny * w + nx) as usize;
                        if mask.bits[j] && labels[j] == 0 {
                            labels[j] = id;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            sizes.push(size);
        }
    }
    (labels, sizes)
}

pub fn random_model(rng: &mut impl Rng, variant: Variant) -> SkinModel {
    let d = variant.dim();
    let mut class = || {
        let mean: Vec<f64> = (0..d).map(|_| rng.gen_range(40.0..200.0)).collect();
        let scale = rng.gen_range(5.0..30.0);
        let cov = random_spd(rng, d, scale);
        GaussianClassConditional::new(mean, cov).unwrap()
    };
    let skin = class();
    let non_skin = class();
    SkinModel::new(skin, non_skin, variant).unwrap()
}

/// Multivariate normal density evaluated directly, without logs.
pub fn mvn_pdf(g: &GaussianClassConditional, x: &[f64]) -> f64 {
    let d = g.dim();
    let cov = DMatrix::from_row_slice(d, d, g.covariance());
    let diff = DVector::from_column_slice(x) - DVector::from_column_slice(g.mean());
    let inv = cov.clone().try_inverse().unwrap();
    let q = (diff.transpose() * inv * &diff)[(0, 0)];
    (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powi(d as i32) * cov.determinant()).sqrt()
}

pub fn oracle_posterior(m: &SkinModel, x: &[f64]) -> f64 {
    let s = mvn_pdf(&m.skin, x);
    let n = mvn_pdf(&m.non_skin, x);
    s / (s + n)
}

pub fn random_mask(rng: &mut impl Rng, w: usize, h: usize, density: f64) -> fusionkit::raster::Mask {
    fusionkit::raster::Mask::new(w, h, (0..w * h).map(|_| rng.gen_bool(density)).collect()).unwrap()
}
