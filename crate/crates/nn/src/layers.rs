use ps_core::Scalar;
use rand_chacha::ChaCha8Rng;

use crate::{ParamSet, Tape, Var};

/// Convolution layer whose weights live in a [`ParamSet`].
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: Option<usize>,
    pub stride: usize,
    pub pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        set: &mut ParamSet<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = set.add_uniform(format!("{name}.weight"), &[out_channels, in_channels, kernel, kernel], fan_in, 2f64.sqrt(), rng);
        let bias = bias.then(|| set.add_uniform(format!("{name}.bias"), &[out_channels], fan_in, 0.1, rng));
        Conv2d { weight, bias, stride, pad, in_channels, out_channels, kernel }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, set: &ParamSet<T>, x: Var, trainable: bool) -> Var {
        let w = tape.weight(set, self.weight, trainable);
        let b = self.bias.map(|b| tape.weight(set, b, trainable));
        tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar>(set: &mut ParamSet<T>, name: &str, in_features: usize, out_features: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let weight = set.add_uniform(format!("{name}.weight"), &[out_features, in_features], in_features, gain, rng);
        let bias = set.add(format!("{name}.bias"), crate::Tensor::zeros(&[out_features]));
        Linear { weight, bias, in_features, out_features }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, set: &ParamSet<T>, x: Var, trainable: bool) -> Var {
        let w = tape.weight(set, self.weight, trainable);
        let b = tape.weight(set, self.bias, trainable);
        tape.linear(x, w, Some(b))
    }
}
