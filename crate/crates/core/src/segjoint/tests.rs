use super::*;
use proptest::prelude::*;
use crate::idslr::{backward_with_inputs, recon_sample_gradient, train_dslr};
use crate::mrisim::{default_center_lines, forward, make_phantom, make_vd_mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

#[test]
fn segmentation_is_a_distribution() {
    let p = DenoiserParams::random(seg_arch(), 1, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = random_image(17 * 12, &mut rng);
    let phi = segment(&img, 17, 12, &p).unwrap();
    for px in 0..17 * 12 {
        let s: f64 = (0..4).map(|c| phi.prob(c, px)).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    assert_eq!(phi, segment(&img, 17, 12, &p).unwrap());
}

#[test]
fn zero_output_layer_gives_uniform_probabilities() {
    let p = init_seg_params(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let phi = segment(&random_image(64, &mut rng), 8, 8, &p).unwrap();
    assert!(phi.probs().data.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    let labels = LabelMap::new(8, 8, vec![3; 64]).unwrap();
    assert!((loss_seg(&phi, &labels).unwrap() - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn segment_input_jvp_matches_finite_difference() {
    let p = DenoiserParams::random(seg_arch(), 3, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = random_image(256, &mut rng);
    let dir: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = LabelMap::new(16, 16, (0..256).map(|_| rng.gen_range(0..4)).collect()).unwrap();
    let img_t = Tensor::from_vec(1, 16, 16, img.clone()).unwrap();
    let mut t = seg_loss_tape(&img_t, &labels, &p, None).unwrap();
    let gx = backward_with_inputs(&mut t, 1.0).unwrap().1[0].clone().unwrap();
    let jvp: f64 = gx.data.iter().zip(&dir).map(|(a, b)| a * b).sum();
    let at = |s: f64| {
        let x: Vec<f64> = img.iter().zip(&dir).map(|(a, b)| a + s * b).collect();
        loss_seg(&segment(&x, 16, 16, &p).unwrap(), &labels).unwrap()
    };
    let h = 1e-5;
    let fd = (at(h) - at(-h)) / (2.0 * h);
    assert!((fd - jvp).abs() / jvp.abs() < 1e-4, "fd {fd} vs {jvp}");
}

#[test]
fn loss_seg_examples() {
    let labels = LabelMap::new(2, 3, vec![0, 1, 2, 3, 1, 0]).unwrap();
    let mut onehot = Tensor::zeros(4, 2, 3);
    for (p, &l) in labels.labels().iter().enumerate() {
        onehot.data[l as usize * 6 + p] = 1.0;
    }
    let phi = SegmentationMap::from_probs(onehot).unwrap();
    assert!(loss_seg(&phi, &labels).unwrap() < 1e-11);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logits = Tensor::from_vec(4, 2, 3, (0..24).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
    let phi = SegmentationMap::from_probs(tape::softmax(&logits)).unwrap();
    let mut want = 0.0;
    for p in 0..6 {
        let l = labels.labels()[p] as usize;
        let z: f64 = (0..4).map(|c| logits.data[c * 6 + p].exp()).sum();
        want -= (logits.data[l * 6 + p].exp() / z).ln();
    }
    assert!((loss_seg(&phi, &labels).unwrap() - want / 6.0).abs() < 1e-12);
    assert!(loss_seg(&phi, &LabelMap::new(3, 2, vec![0; 6]).unwrap()).is_err());
}

#[test]
fn loss_total_examples() {
    assert_eq!(loss_total(0.7, 5.0, 0.0).unwrap(), 0.7);
    assert!((loss_total(0.2, 0.3, 1.0).unwrap() - 0.5).abs() < 1e-15);
    assert!((loss_total(0.1, 0.05, 2.0).unwrap() - 0.2).abs() < 1e-15);
    assert!(loss_total(0.1, 0.1, -1.0).is_err());
}

#[test]
fn label_and_probability_validation() {
    assert!(LabelMap::new(2, 2, vec![0, 1, 2, 4]).is_err());
    assert!(LabelMap::new(2, 2, vec![0, 1, 2]).is_err());
    assert!(SegmentationMap::from_probs(Tensor::zeros(4, 2, 2)).is_err());
    assert!(SegmentationMap::from_probs(Tensor::zeros(3, 2, 2)).is_err());
}

fn phantom_sample(seed: u64, n: usize, size: usize, accel: f64) -> JointSample {
    let ph = make_phantom(size, size, n, seed).unwrap();
    let gold = ph.coil_images();
    let mask = make_vd_mask(size, size, accel, default_center_lines(size), seed).unwrap();
    let ksp = forward(&gold, &mask).unwrap();
    let labels = kmeans_labels(&sos_image(&gold), size, size, seed).unwrap();
    JointSample { ksp, gold, labels }
}

fn seg_samples(seeds: std::ops::Range<u64>) -> Vec<SegSample> {
    seeds
        .map(|s| {
            let js = phantom_sample(s, 2, 32, 1.0);
            SegSample::new(&sos_image(&js.gold), js.labels).unwrap()
        })
        .collect()
}

#[test]
fn pretraining_lr_zero_is_identity_and_training_reduces_loss() {
    let data = seg_samples(0..4);
    let p0 = DenoiserParams::random(seg_arch(), 5, 0.5);
    let frozen = pretrain_seg(SegTrainState::new(p0.clone(), 0.0, 2, 1), &data, 2).unwrap();
    assert_eq!(frozen.params, p0);
    let trained = pretrain_seg(SegTrainState::new(init_seg_params(6), 3e-3, 2, 1), &data, 8).unwrap();
    assert!(trained.epoch_losses.last().unwrap() < &trained.epoch_losses[0]);
    assert!(pretrain_seg(SegTrainState::new(p0, 1e-3, 2, 1), &[], 1).is_err());
}

#[test]
fn e2e_requires_pretrained_models() {
    let data = vec![phantom_sample(1, 2, 32, 4.0)];
    let j = JointModel::untrained(UnrolledModel::new(2, 1, 1), init_seg_params(1), 1.0);
    let err = train_e2e(E2eState::new(j, 1e-4, 1, 1), &data, 1).unwrap_err();
    assert!(matches!(err, Error::Untrained(_)));
}

#[test]
fn zero_beta_decouples_reconstruction_update() {
    let data: Vec<JointSample> = (10..13).map(|s| phantom_sample(s, 2, 32, 4.0)).collect();
    let mut recon = UnrolledModel::new(2, 1, 3);
    recon.denoiser = DenoiserParams::random(recon.denoiser.arch, 4, 0.3);
    let mut joint = JointModel::untrained(recon.clone(), DenoiserParams::random(seg_arch(), 5, 0.5), 0.0);
    joint.recon_trained = true;
    joint.seg_trained = true;

    for s in &data {
        let (mut t, _) = joint_loss_tape(&joint, &s.ksp, &s.gold, &s.labels, None).unwrap();
        let g = backward(&mut t, 1.0).unwrap();
        let (_, gr) = recon_sample_gradient(&recon, &s.ksp, &s.gold).unwrap();
        assert!(g[..gr.len()].iter().zip(&gr).all(|(a, b)| a == b));
    }

    let e2e = train_e2e(E2eState::new(joint, 1e-3, 2, 9), &data, 2).unwrap();
    let pairs: Vec<_> = data.iter().map(|s| (s.ksp.clone(), s.gold.clone())).collect();
    let dslr = train_dslr(TrainState::new(recon, 1e-3, 2, 9), &pairs, 2).unwrap();
    assert_eq!(e2e.joint.recon, dslr.model);
}

#[test]
fn joint_gradient_matches_finite_differences_on_sample() {
    let s = phantom_sample(20, 2, 32, 4.0);
    let mut recon = UnrolledModel::new(2, 2, 6);
    recon.denoiser = DenoiserParams::random(recon.denoiser.arch, 7, 0.5);
    let joint = JointModel::untrained(recon, DenoiserParams::random(seg_arch(), 8, 0.5), 1.0);
    let (mut t, _) = joint_loss_tape(&joint, &s.ksp, &s.gold, &s.labels, None).unwrap();
    let pattern = Arc::new(t.relu_pattern());
    let g = backward(&mut t, 1.0).unwrap();
    let params = joint.params();
    let idx: Vec<usize> = (0..params.len()).step_by(211).collect();
    let rep = crate::idslr::gradcheck(&params, &g, &idx, 1e-3, |p| {
        let mut j = joint.clone();
        j.set_params(p)?;
        let (t, n) = joint_loss_tape(&j, &s.ksp, &s.gold, &s.labels, Some(Arc::clone(&pattern)))?;
        Ok((t.value(n.total).data[0], t.relu_flips()))
    })
    .unwrap();
    assert!(rep.max_rel_err < 1e-3, "{rep:?}");
}

#[test]
fn exact_reconstruction_scores_the_cap() {
    let s = phantom_sample(30, 2, 32, 1.0);
    let seg = init_seg_params(1);
    let (row, _) = score("GOLD", &s.gold, &s.gold, &s.labels, Some(&seg), 1.0, 0.0, 0).unwrap();
    assert_eq!(row.snr_db, crate::bench::metrics::SNR_CAP_DB);
    let (row, pred) = score("GOLD", &s.gold, &s.gold, &s.labels, None, 1.0, 0.0, 30).unwrap();
    assert_eq!(pred, s.labels);
    assert_eq!(row.mean_dice(), 1.0);
}

#[test]
fn cascade_rows_cover_baseline_and_models() {
    let test: Vec<JointSample> = (40..42).map(|s| phantom_sample(s, 2, 32, 4.0)).collect();
    let recon = UnrolledModel::new(2, 1, 1);
    let seg = init_seg_params(2);
    let joint = JointModel::untrained(recon.clone(), seg.clone(), 1.0);
    let rows = evaluate_cascade(&recon, &seg, Some(&joint), &test).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0].method, "US-SEG");
    let zf = adjoint(&test[0].ksp);
    assert!((rows[0].snr_db - snr_db(&zf, &test[0].gold).unwrap()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn every_segmentation_is_a_distribution(seed in any::<u64>(), rows in 2usize..12, cols in 2usize..12, scale in 0.1f64..4.0) {
        let p = DenoiserParams::random(seg_arch(), seed, scale);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = segment(&random_image(rows * cols, &mut rng), rows, cols, &p).unwrap();
        for px in 0..rows * cols {
            let s: f64 = (0..4).map(|c| phi.prob(c, px)).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!((0..4).all(|c| phi.prob(c, px) >= 0.0));
        }
    }
}
