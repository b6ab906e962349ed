use ps_core::ImageBuf;
use ps_data::{generate_toy_dataset, ToySpec};
use ps_reid::*;
use ps_synthgan::{GanProfile, SynthGan};

fn toy_crops() -> (Vec<ps_core::PersonCrop<f32>>, usize) {
    let spec = ToySpec { unlabeled_prob: 0.2, ..ToySpec::default() };
    let toy = generate_toy_dataset(&spec).unwrap();
    let crops = toy.dataset.train_frames().iter().flat_map(|f| f.crops(64, 32).unwrap()).collect();
    (crops, toy.dataset.num_identities)
}

fn trainer(config: TrainConfig, with_teacher: bool) -> Trainer<f32> {
    let (crops, m) = toy_crops();
    let teacher = with_teacher.then(|| TeacherModel::train(&crops, m, &TeacherConfig { steps: 20, ..TeacherConfig::default() }).unwrap());
    let model = ReidModel::new(SynthGan::new(GanProfile::toy(), config.seed).unwrap(), m, config.seed);
    Trainer::new(model, teacher, TrainData::new(crops, m).unwrap(), config).unwrap()
}

#[test]
fn real_only_weights_report_zero_elsewhere() {
    let cfg = TrainConfig { weights: LossWeights::real_only(), real_loss: RealLoss::Ce, ..TrainConfig::default() };
    let mut t = trainer(cfg, false);
    for _ in 0..3 {
        let r = t.train_step().unwrap();
        assert!(r.real > 0.0 && r.total == r.real);
        assert_eq!([r.recon_app, r.recon_str, r.id_synth, r.adv_gen, r.kl, r.loc, r.disc], [0.0; 7]);
    }
}

#[test]
fn same_seed_gives_identical_reports_and_teacher_is_untouched() {
    let mut a = trainer(TrainConfig::default(), true);
    let mut b = trainer(TrainConfig::default(), true);
    let before = a.teacher.as_ref().unwrap().checksum();
    for _ in 0..10 {
        let (ra, rb) = (a.train_step().unwrap(), b.train_step().unwrap());
        assert_eq!(ra, rb);
        assert!(ra.first_non_finite().is_none());
        assert!(ra.recon_app > 0.0 && ra.kl > 0.0 && ra.disc > 0.0);
    }
    assert_eq!(a.teacher.as_ref().unwrap().checksum(), before);
    assert!(a.memory.max_norm_error() < 1e-5);
    assert!(!a.memory.unlabeled.is_empty());
}

#[test]
fn kl_without_teacher_is_rejected() {
    let (crops, m) = toy_crops();
    let model = ReidModel::new(SynthGan::<f32>::new(GanProfile::toy(), 0).unwrap(), m, 0);
    let err = Trainer::new(model, None, TrainData::new(crops, m).unwrap(), TrainConfig::default()).unwrap_err();
    assert!(matches!(err, ReidError::Config(_)));
}

#[test]
fn resume_continues_where_it_stopped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let cfg = TrainConfig { weights: LossWeights { kl: 0.0, ..LossWeights::default() }, ..TrainConfig::default() };
    let mut a = trainer(cfg, false);
    for _ in 0..4 {
        a.train_step().unwrap();
    }
    a.save(&path).unwrap();
    let mut b = Trainer::<f32>::resume(&path, a.data().clone()).unwrap();
    assert_eq!(b.step, 4);
    for _ in 0..3 {
        let (ra, rb) = (a.train_step().unwrap(), b.train_step().unwrap());
        assert_eq!(ra.step, rb.step);
        assert!((ra.total - rb.total).abs() <= 0.05 * ra.total.abs(), "{ra:?} vs {rb:?}");
    }
}

#[test]
fn embeddings_are_unit_norm_and_separate_identities_after_training() {
    let cfg = TrainConfig { weights: LossWeights::real_only(), ..TrainConfig::default() };
    let mut t = trainer(cfg, false);
    for _ in 0..150 {
        t.train_step().unwrap();
    }
    let spec = ToySpec { unlabeled_prob: 0.2, ..ToySpec::default() };
    let toy = generate_toy_dataset(&spec).unwrap();
    let held: Vec<_> = toy.dataset.held_out.iter().flat_map(|id| toy.dataset.frame(id).unwrap().labeled_crops(64, 32).unwrap()).collect();
    assert!(held.len() > 20);
    let imgs: Vec<&ImageBuf<f32>> = held.iter().map(|c| &c.pixels).collect();
    let e = t.model.embed_batch(&imgs).unwrap();
    let again = embed(&held[0].pixels, &t.model).unwrap();
    assert_eq!(again.values, e[0].values);
    let (mut intra, mut inter) = ((0.0, 0), (0.0, 0));
    for i in 0..e.len() {
        let n: f32 = e[i].values.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        for j in i + 1..e.len() {
            let c: f32 = e[i].values.iter().zip(&e[j].values).map(|(a, b)| a * b).sum();
            if held[i].identity == held[j].identity {
                intra = (intra.0 + c as f64, intra.1 + 1);
            } else {
                inter = (inter.0 + c as f64, inter.1 + 1);
            }
        }
    }
    let (intra, inter) = (intra.0 / intra.1 as f64, inter.0 / inter.1 as f64);
    assert!(intra > inter, "intra {intra} inter {inter}");
}

#[test]
fn training_log_has_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let cfg = TrainConfig { weights: LossWeights::real_only(), ..TrainConfig::default() };
    let mut t = trainer(cfg, false);
    let mut log = TrainLog::create(&path).unwrap();
    t.run(5, |tr, r| log.write(r, tr.learning_rates())).unwrap();
    log.flush().unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], TrainLog::HEADER.join(","));
    assert!(lines[1..].iter().all(|l| l.split(',').count() == TrainLog::HEADER.len()));
}
