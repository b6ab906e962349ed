use ps_nn::{Tape, Tensor};
use ps_synthgan::{GanProfile, SynthGan};
use std::time::Instant;

#[test]
#[ignore]
fn time_forward_backward() {
    let gan = SynthGan::<f32>::new(GanProfile::toy(), 0).unwrap();
    let n = 8;
    let x = Tensor::full(&[n, 3, 64, 32], 0.5f32);
    let t0 = Instant::now();
    for _ in 0..5 {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let a = gan.app_forward(&mut tape, xv, true);
        let s = gan.str_forward(&mut tape, xv, true);
        let y = gan.dec_forward(&mut tape, a, s, true);
        let a2 = gan.app_forward(&mut tape, y, true);
        let s2 = gan.str_forward(&mut tape, y, true);
        let d = gan.disc_forward(&mut tape, y, true);
        let l1 = tape.l1_mean(a, a2);
        let l2 = tape.l1_mean(s, s2);
        let l3 = tape.mean(d);
        let l = tape.weighted_sum(&[(l1, 1.0), (l2, 1.0), (l3, 1.0)]);
        let _g = tape.backward(l);
    }
    eprintln!("per step (8 images): {:?}", t0.elapsed() / 5);
}
