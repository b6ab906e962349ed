use ps_core::embedding::normalize_slice;
use ps_core::{EmbeddingVector, ImageBuf, Scalar};
use ps_nn::{Linear, ParamSet, Section, Tape, Var};
use ps_synthgan::SynthGan;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Context;
use crate::{Result, HEAD_SET};

/// Classifier heads of the discriminative module.
///
/// The backbone is the generator's appearance encoder; its flattened code is
/// the re-ID feature. `primary` scores identities from appearance (real crops,
/// synthetic identity loss, distillation); `fine` scores the structure
/// provider of a synthetic crop.
#[derive(Debug, Clone)]
pub struct Student<T> {
    pub primary: Linear,
    pub fine: Linear,
    pub params: ParamSet<T>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl<T: Scalar> Student<T> {
    pub fn new(feature_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_4ead);
        let mut params = ParamSet::new(HEAD_SET);
        let primary = Linear::new(&mut params, "student.primary", feature_dim, num_classes, 1.0, &mut rng);
        let fine = Linear::new(&mut params, "student.fine", feature_dim, num_classes, 1.0, &mut rng);
        Student { primary, fine, params, num_classes, feature_dim }
    }

    pub fn primary_logits(&self, tape: &mut Tape<T>, feature: Var, trainable: bool) -> Var {
        self.primary.forward(tape, &self.params, feature, trainable)
    }

    pub fn fine_logits(&self, tape: &mut Tape<T>, feature: Var, trainable: bool) -> Var {
        self.fine.forward(tape, &self.params, feature, trainable)
    }

    pub fn section(&self) -> Section {
        Section::from_params("student.heads", &self.params)
    }
}

/// Generator plus heads: everything the joint training step updates.
#[derive(Debug, Clone)]
pub struct ReidModel<T> {
    pub gan: SynthGan<T>,
    pub student: Student<T>,
}

/// Flattens `[N, C, H, W]` codes into `[N, C*H*W]` features.
pub fn flatten_codes<T: Scalar>(tape: &mut Tape<T>, codes: Var) -> Var {
    let n = tape.shape(codes)[0];
    let f = tape.shape(codes)[1..].iter().product();
    tape.reshape(codes, &[n, f])
}

impl<T: Scalar> ReidModel<T> {
    pub fn new(gan: SynthGan<T>, num_classes: usize, seed: u64) -> Self {
        let dim = gan.profile.app_flat_dim();
        ReidModel { gan, student: Student::new(dim, num_classes, seed), }
    }

    pub fn embedding_dim(&self) -> usize {
        self.student.feature_dim
    }

    /// Unit-norm re-ID features of a batch, in inference mode.
    pub fn embed_batch(&self, crops: &[&ImageBuf<f32>]) -> Result<Vec<EmbeddingVector<T>>> {
        let mut out = Vec::with_capacity(crops.len());
        for chunk in crops.chunks(32) {
            let mut tape = Tape::new();
            let x = tape.constant(self.gan.batch_tensor(chunk).context("embedding crops")?);
            let codes = self.gan.app_forward(&mut tape, x, false);
            let f = flatten_codes(&mut tape, codes);
            for row in tape.value(f).data.chunks(self.student.feature_dim) {
                out.push(EmbeddingVector { values: normalize_slice(row)?, normalized: true });
            }
        }
        Ok(out)
    }
}

/// Unit-norm re-ID feature of one crop.
pub fn embed<T: Scalar>(x: &ImageBuf<f32>, model: &ReidModel<T>) -> Result<EmbeddingVector<T>> {
    Ok(model.embed_batch(&[x])?.remove(0))
}
