use ps_core::Scalar;
use ps_nn::{Tape, Var};

/// Probability clamp applied to discriminator outputs before taking logs.
pub const ADV_EPS: f64 = 1e-7;

/// Mean absolute difference between two equally sized codes.
pub fn code_l1<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "code_l1 length mismatch");
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum::<T>() / T::lit(a.len().max(1) as f64)
}

fn clamp_p<T: Scalar>(p: T) -> T {
    p.max(T::lit(ADV_EPS)).min(T::lit(1.0 - ADV_EPS))
}

/// `(E[log F(real)] + E[log(1 - F(fake))], E[-log F(fake)])`: the objective
/// the discriminator maximizes and the non-saturating generator loss, both
/// averaged over patches and batch.
pub fn adversarial_objectives<T: Scalar>(real: &[T], fake: &[T]) -> (T, T) {
    let mean = |v: &[T], f: &dyn Fn(T) -> T| v.iter().map(|&p| f(clamp_p(p))).sum::<T>() / T::lit(v.len().max(1) as f64);
    let d = mean(real, &|p| p.ln()) + mean(fake, &|p| (T::one() - p).ln());
    let g = mean(fake, &|p| -p.ln());
    (d, g)
}

/// Discriminator loss to minimize: `-(E[log F(real)] + E[log(1 - F(fake))])`.
pub fn tape_disc_loss<T: Scalar>(tape: &mut Tape<T>, real: Var, fake: Var) -> Var {
    let (lo, hi) = (T::lit(ADV_EPS), T::lit(1.0 - ADV_EPS));
    let r = tape.clamp(real, lo, hi);
    let lr = tape.log(r);
    let mr = tape.mean(lr);
    let f = tape.clamp(fake, lo, hi);
    let nf = tape.scale(f, -T::one());
    let one_minus = tape.add_scalar(nf, T::one());
    let lf = tape.log(one_minus);
    let mf = tape.mean(lf);
    tape.weighted_sum(&[(mr, -T::one()), (mf, -T::one())])
}

/// Non-saturating generator loss `E[-log F(fake)]`.
pub fn tape_gen_adv<T: Scalar>(tape: &mut Tape<T>, fake: Var) -> Var {
    let f = tape.clamp(fake, T::lit(ADV_EPS), T::lit(1.0 - ADV_EPS));
    let l = tape.log(f);
    let m = tape.mean(l);
    tape.scale(m, -T::one())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_everywhere() {
        let (d, g) = adversarial_objectives(&[0.5f64; 8], &[0.5; 8]);
        assert!((d - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((d + 1.3863).abs() < 1e-4);
        assert!((g - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_approaches_zero() {
        let (d, _) = adversarial_objectives(&[1.0f64; 4], &[0.0; 4]);
        assert!(d < 0.0 && d > -1e-6);
    }

    #[test]
    fn constant_offset_l1() {
        let a = vec![0.3f64; 10];
        let b: Vec<f64> = a.iter().map(|v| v + 0.5).collect();
        assert!((code_l1(&a, &b) - 0.5).abs() < 1e-12);
        assert_eq!(code_l1(&a, &a), 0.0);
    }
}
