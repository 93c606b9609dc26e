mod common;

use fmirl::baselines::{train_fp_bc, FlowPolicyConfig, GailConfig, MlpDiscriminator};
use fmirl::nn::Tensor;
use fmirl::rng::stream;
use rand::Rng;

fn small_fp(steps: usize) -> FlowPolicyConfig {
    FlowPolicyConfig {
        hidden_layers: 2,
        hidden_units: 64,
        num_steps: 20,
        train_steps: steps,
        batch_size: 128,
        ..Default::default()
    }
}

#[test]
fn fits_a_deterministic_expert() {
    let mut rng = stream(0, 0);
    let n = 1000;
    let s: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a: Vec<f64> = s.chunks(2).flat_map(|r| [0.6 * r[0], -0.4 * r[1]]).collect();
    let states = Tensor::new([n, 2], s).unwrap();
    let actions = Tensor::new([n, 2], a).unwrap();
    let (fp, _) = train_fp_bc(&states, &actions, &[-1.0, -1.0], &[1.0, 1.0], &small_fp(5000), &mut rng).unwrap();
    let probe = states.select_rows(&(0..200).collect::<Vec<_>>());
    let got = fp.act_batch(&probe, &mut rng).unwrap();
    let mut err = 0.0;
    for i in 0..200 {
        let want = actions.row_slice(i);
        err += got.row_slice(i).iter().zip(want).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
    }
    err /= 200.0;
    assert!(err < 0.05, "mean abs error {err}");
}

#[test]
fn repeated_pair_is_reproduced() {
    let mut rng = stream(3, 0);
    let n = 256;
    let states = Tensor::new([n, 2], [0.2, -0.4].repeat(n)).unwrap();
    let actions = Tensor::new([n, 2], [0.3, -0.6].repeat(n)).unwrap();
    let (fp, _) = train_fp_bc(&states, &actions, &[-1.0, -1.0], &[1.0, 1.0], &small_fp(5000), &mut rng).unwrap();
    let got = fp.act_batch(&states.select_rows(&(0..20).collect::<Vec<_>>()), &mut rng).unwrap();
    for i in 0..20 {
        let a = got.row_slice(i);
        let err = ((a[0] - 0.3).powi(2) + (a[1] + 0.6).powi(2)).sqrt();
        assert!(err < 0.05, "action {a:?}");
    }
}

#[test]
fn loss_decreases_early() {
    let mut rng = stream(1, 0);
    let n = 512;
    let s: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a: Vec<f64> = s.iter().map(|v| 0.5 * v).collect();
    let states = Tensor::new([n, 2], s).unwrap();
    let actions = Tensor::new([n, 2], a).unwrap();
    let (_, losses) = train_fp_bc(&states, &actions, &[-1.0, -1.0], &[1.0, 1.0], &small_fp(100), &mut rng).unwrap();
    let head = losses[..10].iter().sum::<f64>() / 10.0;
    let tail = losses[90..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn keeps_both_modes_of_a_bimodal_expert() {
    let mut rng = stream(2, 0);
    let n = 1000;
    let states = Tensor::new([n, 1], vec![0.0; n]).unwrap();
    let a: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 0.7 } else { -0.7 } + 0.05 * rng.gen_range(-1.0..1.0)).collect();
    let data_pos = a.iter().filter(|v| **v > 0.0).count() as f64 / n as f64;
    let actions = Tensor::new([n, 1], a).unwrap();
    let (fp, _) = train_fp_bc(&states, &actions, &[-1.0], &[1.0], &small_fp(2000), &mut rng).unwrap();
    let probe = Tensor::new([1000, 1], vec![0.0; 1000]).unwrap();
    let got = fp.act_batch(&probe, &mut rng).unwrap();
    let pos = got.data().iter().filter(|v| **v > 0.0).count() as f64 / 1000.0;
    assert!((pos - data_pos).abs() < 0.1, "positive fraction {pos} vs {data_pos}");
    let near = got.data().iter().filter(|v| (v.abs() - 0.7).abs() < 0.2).count() as f64 / 1000.0;
    assert!(near > 0.8, "only {near} near a mode");
}

#[test]
fn gail_discriminator_learns_to_separate() {
    let mut rng = stream(3, 0);
    let cfg = GailConfig {
        lr: 1e-3,
        batch_size: 64,
        ..Default::default()
    };
    let mut d = MlpDiscriminator::new(2, &cfg, &mut rng).unwrap();
    let e = Tensor::new([128, 2], (0..256).map(|_| 0.5 + 0.1 * rng.gen::<f64>()).collect()).unwrap();
    let a = Tensor::new([128, 2], (0..256).map(|_| -0.5 - 0.1 * rng.gen::<f64>()).collect()).unwrap();
    for _ in 0..50 {
        d.train_epoch(&e, &a, &mut rng).unwrap();
    }
    let re = d.reward(&e).unwrap();
    let ra = d.reward(&a).unwrap();
    let me = re.iter().sum::<f64>() / re.len() as f64;
    let ma = ra.iter().sum::<f64>() / ra.len() as f64;
    assert!(me > ma + 1.0, "expert reward {me}, agent reward {ma}");
}
