use ps_core::Scalar;
use ps_nn::{Conv2d, Linear, ParamSet, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::profile::GanProfile;

const LEAK: f64 = 0.2;

fn strided(set: &mut ParamSet<impl Scalar>, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Conv2d {
    // 4x4 kernels halve exactly with padding 1; 3x3 keeps the size.
    let k = if stride == 2 { 4 } else { 3 };
    Conv2d::new(set, name, cin, cout, k, stride, 1, true, rng)
}

fn lrelu<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    tape.leaky_relu(x, T::lit(LEAK))
}

/// Five convolutions followed by adaptive max pooling to the code size.
#[derive(Debug, Clone)]
pub struct AppearanceEncoder {
    pub convs: Vec<Conv2d>,
    pub pool: [usize; 2],
}

impl AppearanceEncoder {
    pub fn new<T: Scalar>(p: &GanProfile, set: &mut ParamSet<T>, rng: &mut ChaCha8Rng) -> Self {
        let mut cin = 3;
        let convs = p
            .app_widths
            .iter()
            .zip(&p.app_strides)
            .enumerate()
            .map(|(i, (&w, &s))| {
                let c = strided(set, &format!("app.conv{i}"), cin, w, s, rng);
                cin = w;
                c
            })
            .collect();
        AppearanceEncoder { convs, pool: p.app_pool }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, set: &ParamSet<T>, x: Var, trainable: bool) -> Var {
        let mut h = x;
        let last = self.convs.len() - 1;
        for (i, c) in self.convs.iter().enumerate() {
            h = c.forward(tape, set, h, trainable);
            if i < last {
                h = lrelu(tape, h);
            }
        }
        tape.adaptive_max_pool(h, self.pool[0], self.pool[1])
    }
}

/// `x + IN(conv(relu(IN(conv(x)))))`.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn new<T: Scalar>(set: &mut ParamSet<T>, name: &str, c: usize, rng: &mut ChaCha8Rng) -> Self {
        ResBlock {
            conv1: Conv2d::new(set, &format!("{name}.conv1"), c, c, 3, 1, 1, true, rng),
            conv2: Conv2d::new(set, &format!("{name}.conv2"), c, c, 3, 1, 1, true, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, set: &ParamSet<T>, x: Var, trainable: bool) -> Var {
        let h = self.conv1.forward(tape, set, x, trainable);
        let h = tape.instance_norm(h);
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, set, h, trainable);
        let h = tape.instance_norm(h);
        tape.add(x, h)
    }
}

/// Grayscale input, four convolutions, then residual blocks.
#[derive(Debug, Clone)]
pub struct StructureEncoder {
    pub convs: Vec<Conv2d>,
    pub blocks: Vec<ResBlock>,
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

impl StructureEncoder {
    pub fn new<T: Scalar>(p: &GanProfile, set: &mut ParamSet<T>, rng: &mut ChaCha8Rng) -> Self {
        let mut cin = 1;
        let convs = p
            .str_widths
            .iter()
            .zip(&p.str_strides)
            .enumerate()
            .map(|(i, (&w, &s))| {
                let c = strided(set, &format!("str.conv{i}"), cin, w, s, rng);
                cin = w;
                c
            })
            .collect();
        let blocks = (0..p.str_res_blocks).map(|i| ResBlock::new(set, &format!("str.res{i}"), cin, rng)).collect();
        StructureEncoder { convs, blocks }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, set: &ParamSet<T>, x: Var, trainable: bool) -> Var {
        let luma = tape.constant(Tensor::new(vec![1, 3, 1, 1], LUMA.iter().map(|&v| T::lit(v)).collect()));
        let mut h = tape.conv2d(x, luma, None, 1, 0);
        for c in &self.convs {
            h = c.forward(tape, set, h, trainable);
            h = tape.instance_norm(h);
            h = tape.relu(h);
        }
        for b in &self.blocks {
            h = b.forward(tape, set, h, trainable);
        }
        h
    }
}

/// Residual block whose two normalizations take their scale and shift from
/// the appearance code through a single linear projection.
#[derive(Debug, Clone)]
pub struct AdaInBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub proj: Linear,
    pub channels: usize,
}

impl AdaInBlock {
    pub fn new<T: Scalar>(set: &mut ParamSet<T>, name: &str, c: usize, app_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        AdaInBlock {
            conv1: Conv2d::new(set, &format!("{name}.conv1"), c, c, 3, 1, 1, true, rng),
            conv2: Conv2d::new(set, &format!("{name}.conv2"), c, c, 3, 1, 1, true, rng),
            proj: Linear::new(set, &format!("{name}.adain_proj"), app_dim, 4 * c, 1.0, rng),
            channels: c,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, set: &ParamSet<T>, x: Var, app_flat: Var, trainable: bool) -> Var {
        let c = self.channels;
        let params = self.proj.forward(tape, set, app_flat, trainable);
        let affine = |tape: &mut Tape<T>, h: Var, k: usize| {
            let g = tape.slice_cols(params, 2 * k * c, c);
            let scale = tape.add_scalar(g, T::one());
            let shift = tape.slice_cols(params, (2 * k + 1) * c, c);
            tape.channel_affine(h, scale, shift)
        };
        let h = self.conv1.forward(tape, set, x, trainable);
        let h = tape.instance_norm(h);
        let h = affine(tape, h, 0);
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, set, h, trainable);
        let h = tape.instance_norm(h);
        let h = affine(tape, h, 1);
        tape.add(x, h)
    }
}

/// AdaIN residual blocks on the structure code, then four convolutions with
/// nearest upsampling back to crop size and a sigmoid.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub blocks: Vec<AdaInBlock>,
    pub convs: Vec<Conv2d>,
    pub upsample_steps: usize,
}

impl Decoder {
    pub fn new<T: Scalar>(p: &GanProfile, set: &mut ParamSet<T>, rng: &mut ChaCha8Rng) -> Self {
        let c = p.str_code_shape()[0];
        let blocks = (0..p.dec_res_blocks).map(|i| AdaInBlock::new(set, &format!("dec.res{i}"), c, p.app_flat_dim(), rng)).collect();
        let mut cin = c;
        let convs = p
            .dec_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let conv = Conv2d::new(set, &format!("dec.conv{i}"), cin, w, 3, 1, 1, true, rng);
                cin = w;
                conv
            })
            .collect();
        Decoder { blocks, convs, upsample_steps: p.upsample_steps() }
    }

    /// Names of the parameters that read the appearance code.
    pub fn appearance_inputs(&self) -> Vec<String> {
        (0..self.blocks.len()).map(|i| format!("dec.res{i}.adain_proj")).collect()
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, set: &ParamSet<T>, app: Var, structure: Var, trainable: bool) -> Var {
        let n = tape.shape(app)[0];
        let flat: usize = tape.shape(app)[1..].iter().product();
        let app_flat = tape.reshape(app, &[n, flat]);
        let mut h = structure;
        for b in &self.blocks {
            h = b.forward(tape, set, h, app_flat, trainable);
        }
        let last = self.convs.len() - 1;
        for (i, c) in self.convs.iter().enumerate() {
            if i < self.upsample_steps {
                h = tape.upsample_nearest(h, 2);
            }
            h = c.forward(tape, set, h, trainable);
            h = if i < last { tape.relu(h) } else { tape.sigmoid(h) };
        }
        h
    }
}

/// Strided patch discriminator producing per-patch probabilities.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub convs: Vec<Conv2d>,
}

impl Discriminator {
    pub fn new<T: Scalar>(p: &GanProfile, set: &mut ParamSet<T>, rng: &mut ChaCha8Rng) -> Self {
        let mut cin = 3;
        let n = p.disc_widths.len();
        let convs = p
            .disc_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let c = strided(set, &format!("disc.conv{i}"), cin, w, if i + 1 < n { 2 } else { 1 }, rng);
                cin = w;
                c
            })
            .collect();
        Discriminator { convs }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, set: &ParamSet<T>, x: Var, trainable: bool) -> Var {
        let mut h = x;
        let last = self.convs.len() - 1;
        for (i, c) in self.convs.iter().enumerate() {
            h = c.forward(tape, set, h, trainable);
            h = if i < last { lrelu(tape, h) } else { tape.sigmoid(h) };
        }
        h
    }
}
