use ps_nn::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn direct_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (n, c, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (o, kh, kw) = (w.shape[0], w.shape[2], w.shape[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for i in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.data[((oc * c + ic) * kh + ky) * kw + kx]
                                    * x.data[((i * c + ic) * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    out[((i * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(n, c, h, wd, o, k, stride, pad) in &[
        (3, 2, 7, 5, 4, 3, 1, 1),
        (2, 3, 8, 6, 5, 4, 2, 1),
        (1, 1, 5, 5, 2, 1, 1, 0),
        (2, 2, 9, 4, 3, 3, 2, 0),
        (2, 4, 6, 6, 3, 3, 3, 2),
    ] {
        let mut rand = |len: usize| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let x = Tensor::new(vec![n, c, h, wd], rand(n * c * h * wd));
        let w = Tensor::new(vec![o, c, k, k], rand(o * c * k * k));
        let b = rand(o);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(Tensor::new(vec![o], b.clone())));
        let y = tape.conv2d(xv, wv, Some(bv), stride, pad);
        let expect = direct_conv(&x, &w, &b, stride, pad);
        let got = &tape.value(y).data;
        assert_eq!(got.len(), expect.len());
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12, "geometry {:?}", (n, c, h, wd, o, k, stride, pad));
        }
    }
}
