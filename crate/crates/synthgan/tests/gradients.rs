//! Central finite differences against tape gradients for the synthesis
//! losses, in f64 at the toy profile.
//!
//! Reconstruction targets are detached in training, so the checked functions
//! hold them fixed at their unperturbed values. A coordinate whose difference
//! quotients at `eps` and `eps / 2` disagree straddles a ReLU or max-pool kink
//! inside the step and is skipped; at most a third may be.

use ps_nn::{ParamSet, Tape, Tensor, Var};
use ps_synthgan::{tape_disc_loss, tape_gen_adv, GanProfile, SynthGan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
/// Parameter perturbations move every downstream activation at once, so the
/// whole-chain checks step more finely to stay between kinks.
const PARAM_EPS: f64 = 1e-6;
const TOL: f64 = 1e-3;
const INPUT_SET: usize = 99;

fn pair_batch(seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![2, 3, 64, 32], (0..2 * 3 * 64 * 32).map(|_| rng.gen_range(0.0..1.0)).collect())
}

/// Detached reconstruction targets and the fakes of the unperturbed model.
struct Base {
    app: Tensor<f64>,
    structure: Tensor<f64>,
    fakes: Tensor<f64>,
}

fn base(gan: &SynthGan<f64>, x: &Tensor<f64>) -> Base {
    let mut tape = Tape::new();
    let real = tape.constant(x.clone());
    let s = gan.cross_forward(&mut tape, real, false);
    let st = tape.value(s.structure);
    let half = st.len() / 2;
    let mut swapped = st.data[half..].to_vec();
    swapped.extend_from_slice(&st.data[..half]);
    Base {
        app: tape.value(s.app).clone(),
        structure: Tensor::new(st.shape.clone(), swapped),
        fakes: tape.value(s.fakes).clone(),
    }
}

#[derive(Clone, Copy, Debug)]
enum Loss {
    ReconApp,
    ReconStr,
    GenAdv,
    Disc,
}

/// Tally of one check.
#[derive(Default)]
struct Tally {
    checked: usize,
    skipped: usize,
}

impl Tally {
    /// Compares one coordinate; `eval(d)` is the loss with the coordinate moved by `d`.
    fn coordinate(&mut self, what: &str, analytic: f64, eps: f64, eval: impl Fn(f64) -> f64) {
        let full = (eval(eps) - eval(-eps)) / (2.0 * eps);
        let half = (eval(eps / 2.0) - eval(-eps / 2.0)) / eps;
        let scale = full.abs().max(analytic.abs());
        if scale < 1e-9 {
            return;
        }
        if (full - half).abs() / scale > TOL / 4.0 {
            self.skipped += 1;
            return;
        }
        let rel = (full - analytic).abs() / scale;
        assert!(rel <= TOL, "{what}: numeric {full:e} analytic {analytic:e} rel {rel:e}");
        self.checked += 1;
    }

    fn finish(&self, min_checked: usize) {
        assert!(self.skipped * 2 <= self.checked, "{} kinked coordinates against {} checked", self.skipped, self.checked);
        assert!(self.checked >= min_checked, "only {} coordinates checked", self.checked);
    }
}

/// Loss as a function of the decoded images (and fixed codes).
fn input_loss(gan: &SynthGan<f64>, tape: &mut Tape<f64>, fakes: Var, b: &Base, which: Loss) -> Var {
    match which {
        Loss::ReconApp => {
            let c = gan.app_forward(tape, fakes, false);
            let t = tape.constant(b.app.clone());
            tape.l1_mean(t, c)
        }
        Loss::ReconStr => {
            let c = gan.str_forward(tape, fakes, false);
            let t = tape.constant(b.structure.clone());
            tape.l1_mean(t, c)
        }
        Loss::GenAdv => {
            let d = gan.disc_forward(tape, fakes, false);
            tape_gen_adv(tape, d)
        }
        Loss::Disc => unreachable!(),
    }
}

fn check_inputs(which: Loss, seed: u64) {
    let gan = SynthGan::<f64>::new(GanProfile::toy(), seed).unwrap();
    let b = base(&gan, &pair_batch(seed + 100));
    let mut holder = ParamSet::new(INPUT_SET);
    holder.add("x_ji", b.fakes.clone());
    let mut tape = Tape::new();
    let v = tape.param(&holder, 0);
    let l = input_loss(&gan, &mut tape, v, &b, which);
    let grads = tape.backward(l);
    let g = grads.get(INPUT_SET, 0).expect("input gradient");
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let mut tally = Tally::default();
    for _ in 0..40 {
        let i = rng.gen_range(0..b.fakes.len());
        tally.coordinate(&format!("{which:?} pixel {i}"), g.data[i], EPS, |d| {
            let mut y = b.fakes.clone();
            y.data[i] += d;
            let mut t = Tape::new();
            let v = t.constant(y);
            let l = input_loss(&gan, &mut t, v, &b, which);
            t.item(l)
        });
    }
    tally.finish(20);
}

/// Whole-chain loss as a function of every network parameter.
fn chain_loss(gan: &SynthGan<f64>, tape: &mut Tape<f64>, x: &Tensor<f64>, b: &Base, which: Loss) -> Var {
    let real = tape.constant(x.clone());
    match which {
        Loss::Disc => {
            let fakes = tape.constant(b.fakes.clone());
            let r = gan.disc_forward(tape, real, true);
            let f = gan.disc_forward(tape, fakes, true);
            tape_disc_loss(tape, r, f)
        }
        Loss::ReconApp | Loss::ReconStr => {
            let s = gan.cross_forward(tape, real, true);
            let (target, code) = if let Loss::ReconApp = which { (b.app.clone(), s.fake_app) } else { (b.structure.clone(), s.fake_str) };
            let t = tape.constant(target);
            tape.l1_mean(t, code)
        }
        Loss::GenAdv => {
            let s = gan.cross_forward(tape, real, true);
            input_loss(gan, tape, s.fakes, b, which)
        }
    }
}

fn set_mut(gan: &mut SynthGan<f64>, k: usize) -> &mut ParamSet<f64> {
    match k {
        0 => &mut gan.app_params,
        1 => &mut gan.str_params,
        2 => &mut gan.dec_params,
        _ => &mut gan.disc_params,
    }
}

fn check_params(which: Loss, sets: &[usize], seed: u64) {
    let gan = SynthGan::<f64>::new(GanProfile::toy(), seed).unwrap();
    let x = pair_batch(seed + 100);
    let b = base(&gan, &x);
    let mut tape = Tape::new();
    let l = chain_loss(&gan, &mut tape, &x, &b, which);
    if let Loss::ReconApp | Loss::ReconStr = which {
        // With fixed targets the checked function equals the training loss at the base point.
        let mut t = Tape::new();
        let real = t.constant(x.clone());
        let s = gan.cross_forward(&mut t, real, true);
        let train = if let Loss::ReconApp = which { s.recon_app } else { s.recon_str };
        assert!((t.item(train) - tape.item(l)).abs() < 1e-12);
    }
    let grads = tape.backward(l);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 11);
    let mut tally = Tally::default();
    for &k in sets {
        let set = gan.param_sets()[k].clone();
        for _ in 0..8 {
            let ti = rng.gen_range(0..set.len());
            let ei = rng.gen_range(0..set.tensors[ti].len());
            let analytic = grads.get(set.id, ti).map_or(0.0, |g| g.data[ei]);
            tally.coordinate(&format!("{which:?} {}[{ei}]", set.names[ti]), analytic, PARAM_EPS, |d| {
                let mut g = gan.clone();
                set_mut(&mut g, k).tensors[ti].data[ei] += d;
                let mut t = Tape::new();
                let v = chain_loss(&g, &mut t, &x, &b, which);
                t.item(v)
            });
        }
    }
    tally.finish(sets.len() * 3);
}

#[test]
fn appearance_reconstruction_input_gradient() {
    check_inputs(Loss::ReconApp, 1);
}

#[test]
fn structure_reconstruction_input_gradient() {
    check_inputs(Loss::ReconStr, 2);
}

#[test]
fn generator_adversarial_input_gradient() {
    check_inputs(Loss::GenAdv, 3);
}

#[test]
fn appearance_reconstruction_parameter_gradient() {
    check_params(Loss::ReconApp, &[0, 1, 2], 4);
}

#[test]
fn structure_reconstruction_parameter_gradient() {
    check_params(Loss::ReconStr, &[0, 1, 2], 5);
}

#[test]
fn generator_adversarial_parameter_gradient() {
    check_params(Loss::GenAdv, &[0, 1, 2], 6);
}

#[test]
fn discriminator_objective_parameter_gradient() {
    check_params(Loss::Disc, &[3], 7);
}
