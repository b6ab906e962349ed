use ps_core::{IdentityLabel, ImageBuf, PersonCrop, Scalar};
use ps_nn::{ParamSet, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::losses::{adversarial_objectives, code_l1};
use crate::nets::{AppearanceEncoder, Decoder, Discriminator, StructureEncoder};
use crate::profile::GanProfile;
use crate::{Result, SynthError, APP_SET, DEC_SET, DISC_SET, STR_SET};

/// Appearance code of one crop, `[C_a, H_a, W_a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceCode<T> {
    pub tensor: Tensor<T>,
}

/// Structure code of one crop, `[C_s, H_s, W_s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureCode<T> {
    pub tensor: Tensor<T>,
}

/// A decoded crop and the identities that supplied its two codes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub pixels: ImageBuf<f32>,
    pub appearance_source: IdentityLabel,
    pub structure_source: IdentityLabel,
}

/// Tape nodes of one cross-identity synthesis pass over a pair batch.
///
/// Rows `0..B` of every tensor belong to the `x_i` half and rows `B..2B` to
/// the `x_j` half. `fakes` row `k < B` is `x_ji` (appearance of `x_i`,
/// structure of `x_j`), row `B + k` is `x_ij`.
#[derive(Debug, Clone, Copy)]
pub struct CrossSynthesis {
    pub app: Var,
    pub structure: Var,
    pub fakes: Var,
    pub fake_app: Var,
    pub fake_str: Var,
    pub recon_app: Var,
    pub recon_str: Var,
}

#[derive(Debug, Clone)]
pub struct SynthGan<T> {
    pub profile: GanProfile,
    pub e_app: AppearanceEncoder,
    pub e_str: StructureEncoder,
    pub dec: Decoder,
    pub disc: Discriminator,
    pub app_params: ParamSet<T>,
    pub str_params: ParamSet<T>,
    pub dec_params: ParamSet<T>,
    pub disc_params: ParamSet<T>,
}

impl<T: Scalar> SynthGan<T> {
    pub fn new(profile: GanProfile, seed: u64) -> Result<Self> {
        profile.validate()?;
        let rng = |k: u64| ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k));
        let (mut a, mut s, mut d, mut f) = (ParamSet::new(APP_SET), ParamSet::new(STR_SET), ParamSet::new(DEC_SET), ParamSet::new(DISC_SET));
        let e_app = AppearanceEncoder::new(&profile, &mut a, &mut rng(1));
        let e_str = StructureEncoder::new(&profile, &mut s, &mut rng(2));
        let dec = Decoder::new(&profile, &mut d, &mut rng(3));
        let disc = Discriminator::new(&profile, &mut f, &mut rng(4));
        Ok(SynthGan { profile, e_app, e_str, dec, disc, app_params: a, str_params: s, dec_params: d, disc_params: f })
    }

    pub fn cast<U: Scalar>(&self) -> SynthGan<U> {
        SynthGan {
            profile: self.profile.clone(),
            e_app: self.e_app.clone(),
            e_str: self.e_str.clone(),
            dec: self.dec.clone(),
            disc: self.disc.clone(),
            app_params: self.app_params.cast(),
            str_params: self.str_params.cast(),
            dec_params: self.dec_params.cast(),
            disc_params: self.disc_params.cast(),
        }
    }

    pub fn param_sets(&self) -> [&ParamSet<T>; 4] {
        [&self.app_params, &self.str_params, &self.dec_params, &self.disc_params]
    }

    /// Stacks crops into an `[N, 3, H, W]` batch, checking the profile crop size.
    pub fn batch_tensor(&self, crops: &[&ImageBuf<f32>]) -> Result<Tensor<T>> {
        let (h, w) = (self.profile.crop_h, self.profile.crop_w);
        let mut data = Vec::with_capacity(crops.len() * 3 * h * w);
        for c in crops {
            if c.channels != 3 || c.height != h || c.width != w {
                return Err(SynthError::Shape { what: "crop", expected: vec![3, h, w], got: vec![c.channels, c.height, c.width] });
            }
            data.extend(c.data.iter().map(|&v| T::lit(v as f64)));
        }
        Ok(Tensor::new(vec![crops.len(), 3, h, w], data))
    }

    pub fn app_forward(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Var {
        self.e_app.forward(tape, &self.app_params, x, trainable)
    }

    pub fn str_forward(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Var {
        self.e_str.forward(tape, &self.str_params, x, trainable)
    }

    pub fn dec_forward(&self, tape: &mut Tape<T>, app: Var, structure: Var, trainable: bool) -> Var {
        self.dec.forward(tape, &self.dec_params, app, structure, trainable)
    }

    pub fn disc_forward(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Var {
        self.disc.forward(tape, &self.disc_params, x, trainable)
    }

    /// Encodes `real = [x_i; x_j]`, decodes both swaps, re-encodes the fakes and
    /// builds the two code reconstruction losses against detached targets.
    pub fn cross_forward(&self, tape: &mut Tape<T>, real: Var, trainable: bool) -> CrossSynthesis {
        let n = tape.shape(real)[0];
        assert!(n % 2 == 0 && n > 0, "cross_forward needs an even, non-empty pair batch");
        let b = n / 2;
        let app = self.app_forward(tape, real, trainable);
        let structure = self.str_forward(tape, real, trainable);
        let (s_i, s_j) = (tape.slice0(structure, 0, b), tape.slice0(structure, b, b));
        let swapped = tape.concat0(&[s_j, s_i]);
        let fakes = self.dec_forward(tape, app, swapped, trainable);
        let fake_app = self.app_forward(tape, fakes, trainable);
        let fake_str = self.str_forward(tape, fakes, trainable);
        let app_target = tape.detach(app);
        let str_target = tape.detach(swapped);
        let recon_app = tape.l1_mean(app_target, fake_app);
        let recon_str = tape.l1_mean(str_target, fake_str);
        CrossSynthesis { app, structure, fakes, fake_app, fake_str, recon_app, recon_str }
    }

    fn split_codes(t: &Tensor<T>) -> Vec<Tensor<T>> {
        (0..t.shape[0]).map(|i| t.batch_item(i)).collect()
    }

    pub fn encode_appearance_batch(&self, crops: &[&ImageBuf<f32>]) -> Result<Vec<AppearanceCode<T>>> {
        let mut tape = Tape::new();
        let x = tape.constant(self.batch_tensor(crops)?);
        let c = self.app_forward(&mut tape, x, false);
        Ok(Self::split_codes(tape.value(c)).into_iter().map(|tensor| AppearanceCode { tensor }).collect())
    }

    pub fn encode_structure_batch(&self, crops: &[&ImageBuf<f32>]) -> Result<Vec<StructureCode<T>>> {
        let mut tape = Tape::new();
        let x = tape.constant(self.batch_tensor(crops)?);
        let c = self.str_forward(&mut tape, x, false);
        Ok(Self::split_codes(tape.value(c)).into_iter().map(|tensor| StructureCode { tensor }).collect())
    }

    pub fn encode_appearance(&self, crop: &ImageBuf<f32>) -> Result<AppearanceCode<T>> {
        Ok(self.encode_appearance_batch(&[crop])?.remove(0))
    }

    pub fn encode_structure(&self, crop: &ImageBuf<f32>) -> Result<StructureCode<T>> {
        Ok(self.encode_structure_batch(&[crop])?.remove(0))
    }

    fn check(&self, what: &'static str, t: &Tensor<T>, expected: [usize; 3]) -> Result<()> {
        if t.shape != expected {
            return Err(SynthError::Shape { what, expected: expected.to_vec(), got: t.shape.clone() });
        }
        Ok(())
    }

    pub fn decode_batch(&self, pairs: &[(&AppearanceCode<T>, &StructureCode<T>)]) -> Result<Vec<ImageBuf<f32>>> {
        let (ash, ssh) = (self.profile.app_code_shape(), self.profile.str_code_shape());
        for (a, s) in pairs {
            self.check("appearance code", &a.tensor, ash)?;
            self.check("structure code", &s.tensor, ssh)?;
        }
        let apps: Vec<Tensor<T>> = pairs.iter().map(|(a, _)| a.tensor.clone()).collect();
        let strs: Vec<Tensor<T>> = pairs.iter().map(|(_, s)| s.tensor.clone()).collect();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::stack(&apps));
        let s = tape.constant(Tensor::stack(&strs));
        let out = self.dec_forward(&mut tape, a, s, false);
        tensor_to_images(tape.value(out))
    }

    pub fn decode(&self, app: &AppearanceCode<T>, structure: &StructureCode<T>) -> Result<ImageBuf<f32>> {
        Ok(self.decode_batch(&[(app, structure)])?.remove(0))
    }

    /// `x_ji`: structure of `structure_src`, appearance of `appearance_src`.
    pub fn synthesize(&self, appearance_src: &PersonCrop<f32>, structure_src: &PersonCrop<f32>) -> Result<SyntheticImage> {
        let a = self.encode_appearance(&appearance_src.pixels)?;
        let s = self.encode_structure(&structure_src.pixels)?;
        Ok(SyntheticImage {
            pixels: self.decode(&a, &s)?,
            appearance_source: appearance_src.identity,
            structure_source: structure_src.identity,
        })
    }

    /// Mean absolute difference between `c_app` and the appearance code of `x_ji`.
    pub fn recon_app_loss(&self, c_app: &AppearanceCode<T>, x_ji: &ImageBuf<f32>) -> Result<T> {
        let r = self.encode_appearance(x_ji)?;
        Ok(code_l1(&c_app.tensor.data, &r.tensor.data))
    }

    pub fn recon_str_loss(&self, c_str: &StructureCode<T>, x_ji: &ImageBuf<f32>) -> Result<T> {
        let r = self.encode_structure(x_ji)?;
        Ok(code_l1(&c_str.tensor.data, &r.tensor.data))
    }

    /// Per-patch realism probabilities for each crop.
    pub fn discriminate(&self, crops: &[&ImageBuf<f32>]) -> Result<Vec<Vec<T>>> {
        let mut tape = Tape::new();
        let x = tape.constant(self.batch_tensor(crops)?);
        let p = self.disc_forward(&mut tape, x, false);
        Ok(Self::split_codes(tape.value(p)).into_iter().map(|t| t.data).collect())
    }

    /// Discriminator objective and generator loss on one real and one fake batch.
    pub fn adv_loss(&self, real: &[&ImageBuf<f32>], fake: &[&ImageBuf<f32>]) -> Result<(T, T)> {
        let r: Vec<T> = self.discriminate(real)?.concat();
        let f: Vec<T> = self.discriminate(fake)?.concat();
        Ok(adversarial_objectives(&r, &f))
    }
}

/// `[N, 3, H, W]` tensor to images, clamping into `[0, 1]`.
pub fn tensor_to_images<T: Scalar>(t: &Tensor<T>) -> Result<Vec<ImageBuf<f32>>> {
    let (n, c, h, w) = t.nchw();
    (0..n)
        .map(|i| {
            let data = t.data[i * c * h * w..(i + 1) * c * h * w].iter().map(|v| (v.to_f64_lossy() as f32).clamp(0.0, 1.0)).collect();
            Ok(ImageBuf::new(c, h, w, data)?)
        })
        .collect()
}
