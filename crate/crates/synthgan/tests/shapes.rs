use ps_core::ImageBuf;
use ps_nn::Tensor;
use ps_synthgan::{AppearanceCode, GanProfile, StructureCode, SynthGan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_image(h: usize, w: usize, seed: u64) -> ImageBuf<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuf::new(3, h, w, (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn full_profile_code_shapes() {
    let gan = SynthGan::<f32>::new(GanProfile::full(), 0).unwrap();
    let x = noise_image(256, 128, 1);
    assert_eq!(gan.encode_appearance(&x).unwrap().tensor.shape, vec![2048, 4, 1]);
    assert_eq!(gan.encode_structure(&x).unwrap().tensor.shape, vec![128, 64, 32]);
}

#[test]
fn toy_profile_round_trip_shapes() {
    let p = GanProfile::toy();
    let gan = SynthGan::<f32>::new(p.clone(), 0).unwrap();
    let x = noise_image(64, 32, 1);
    let a = gan.encode_appearance(&x).unwrap();
    let s = gan.encode_structure(&x).unwrap();
    assert_eq!(a.tensor.shape, p.app_code_shape().to_vec());
    assert_eq!(s.tensor.shape, p.str_code_shape().to_vec());
    let y = gan.decode(&a, &s).unwrap();
    assert_eq!((y.channels, y.height, y.width), (3, 64, 32));
    assert!(y.in_unit_range());
}

#[test]
fn wrong_crop_size_is_a_shape_error() {
    let gan = SynthGan::<f32>::new(GanProfile::toy(), 0).unwrap();
    assert!(gan.encode_appearance(&noise_image(32, 32, 0)).is_err());
    let bad = AppearanceCode { tensor: Tensor::zeros(&[8, 4, 1]) };
    let s = gan.encode_structure(&noise_image(64, 32, 0)).unwrap();
    assert!(gan.decode(&bad, &s).is_err());
}

#[test]
fn inference_is_deterministic() {
    let x = noise_image(64, 32, 5);
    let (g1, g2) = (SynthGan::<f32>::new(GanProfile::toy(), 7).unwrap(), SynthGan::<f32>::new(GanProfile::toy(), 7).unwrap());
    let (a, s) = (g1.encode_appearance(&x).unwrap(), g1.encode_structure(&x).unwrap());
    assert_eq!(a, g1.encode_appearance(&x).unwrap());
    assert_eq!(s, g2.encode_structure(&x).unwrap());
    assert_eq!(g1.decode(&a, &s).unwrap(), g2.decode(&a, &s).unwrap());
}

#[test]
fn background_noise_changes_codes_at_init() {
    let gan = SynthGan::<f32>::new(GanProfile::toy(), 3).unwrap();
    let base = noise_image(64, 32, 1);
    let mut other = base.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for y in 0..8 {
        for x in 0..32 {
            for c in 0..3 {
                other.set(c, y, x, rng.gen_range(0.0..1.0));
            }
        }
    }
    assert_ne!(gan.encode_appearance(&base).unwrap(), gan.encode_appearance(&other).unwrap());
    assert_ne!(gan.encode_structure(&base).unwrap(), gan.encode_structure(&other).unwrap());
}

#[test]
fn appearance_reaches_decoder_only_through_adain() {
    let mut gan = SynthGan::<f64>::new(GanProfile::toy(), 2).unwrap();
    let (x1, x2) = (noise_image(64, 32, 1), noise_image(64, 32, 2));
    let (a1, a2) = (gan.encode_appearance(&x1).unwrap(), gan.encode_appearance(&x2).unwrap());
    let s = gan.encode_structure(&x1).unwrap();
    assert_ne!(gan.decode(&a1, &s).unwrap(), gan.decode(&a2, &s).unwrap());

    let zero_s = StructureCode { tensor: Tensor::zeros(&s.tensor.shape) };
    assert_ne!(gan.decode(&a1, &s).unwrap(), gan.decode(&a1, &zero_s).unwrap());

    let consumers = gan.dec.appearance_inputs();
    assert_eq!(consumers.len(), 4);
    for (name, t) in gan.dec_params.names.iter().zip(gan.dec_params.tensors.iter_mut()) {
        if consumers.iter().any(|c| name.starts_with(c.as_str())) {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    assert_eq!(gan.decode(&a1, &s).unwrap(), gan.decode(&a2, &s).unwrap());
}

#[test]
fn recon_losses_match_elementwise_oracle() {
    let gan = SynthGan::<f64>::new(GanProfile::toy(), 4).unwrap();
    let (x, y) = (noise_image(64, 32, 11), noise_image(64, 32, 12));
    let a = gan.encode_appearance(&x).unwrap();
    let s = gan.encode_structure(&x).unwrap();
    let fake = gan.decode(&gan.encode_appearance(&y).unwrap(), &s).unwrap();
    let (ra, rs) = (gan.encode_appearance(&fake).unwrap(), gan.encode_structure(&fake).unwrap());
    let oracle = |p: &[f64], q: &[f64]| {
        let mut acc = 0.0;
        for i in 0..p.len() {
            acc += (p[i] - q[i]).abs();
        }
        acc / p.len() as f64
    };
    assert!((gan.recon_app_loss(&a, &fake).unwrap() - oracle(&a.tensor.data, &ra.tensor.data)).abs() < 1e-6);
    assert!((gan.recon_str_loss(&s, &fake).unwrap() - oracle(&s.tensor.data, &rs.tensor.data)).abs() < 1e-6);
    assert_eq!(gan.recon_app_loss(&ra, &fake).unwrap(), 0.0);
    assert_eq!(gan.recon_str_loss(&rs, &fake).unwrap(), 0.0);
}

#[test]
fn checkpoint_round_trip() {
    let gan = SynthGan::<f32>::new(GanProfile::toy(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gan.pss");
    ps_synthgan::save_checkpoint(&path, &gan, serde_json::json!({"step": 3}), vec![]).unwrap();
    let (back, archive) = ps_synthgan::load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(archive.meta["step"], 3);
    for (a, b) in gan.param_sets().iter().zip(back.param_sets()) {
        assert_eq!(a.checksum(), b.checksum());
    }
    let x = noise_image(64, 32, 1);
    assert_eq!(gan.encode_appearance(&x).unwrap(), back.encode_appearance(&x).unwrap());
}
