//! Checks shared by the integration tests and the acceptance run. Each
//! panics with a description on failure.

use super::*;
use pseudoct::data::dataset::synthetic_encoding;
use pseudoct::data::{load_raw_slice, write_raw_slice, Dose, HuWindow};
use pseudoct::metrics::{ssim, SsimConfig};
use pseudoct::networks::{
    load_denoiser, load_noise_net, save_weights, DenoiserConfig, DenoiserNet, NoiseNet,
    NoiseNetConfig,
};
use pseudoct::noise::{ensemble_noise, selection_indices, NoiseEnsemble, NoiseMapSet};
use pseudoct::pipeline::{run_pipeline, RunConfig, Strategy, CONFIG_FILE};
use pseudoct::selfsup::{
    finetune, n2v_mask, DenoiserState, FinetuneConfig, Finetuner, N2vConfig, NoiseSource,
    SchemeKind,
};
use rand::Rng as _;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn image(h: usize, w: usize, seed: u64) -> Tensor {
    let noise = random_tensor([1, 1, h, w], seed);
    let data = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f32, (i % w) as f32);
            0.5 + 0.3 * (0.2 * x).sin() * (0.15 * y).cos() + 0.05 * noise.data()[i]
        })
        .collect();
    Tensor::from_image(h, w, data).unwrap()
}

pub fn member_maps(m: usize, shape: [usize; 4]) -> NoiseMapSet {
    NoiseMapSet {
        maps: (0..m)
            .map(|j| random_tensor(shape, 40 + j as u64))
            .collect(),
    }
}

pub fn slices() -> Vec<Tensor> {
    (0..2)
        .map(|i| random_tensor([1, 1, 32, 32], 500 + i).map(|v| 0.5 + 0.1 * v))
        .collect()
}

pub fn source() -> NoiseSource {
    let cfg = NoiseNetConfig {
        levels: 2,
        channels: 4,
    };
    let models = vec![
        NoiseNet::new(cfg, 1).unwrap(),
        NoiseNet::new(cfg, 2).unwrap(),
    ];
    NoiseSource::Ensemble(NoiseEnsemble::new(models, vec!["a".into(), "b".into()]).unwrap())
}

pub fn base() -> DenoiserNet {
    DenoiserNet::new(
        DenoiserConfig {
            depth: 2,
            channels: 4,
        },
        9,
    )
    .unwrap()
}

pub fn cfg(steps: usize) -> FinetuneConfig {
    FinetuneConfig {
        steps,
        batch_size: 2,
        patch: 16,
        lr: 1e-3,
        early_stop_patience: None,
        ..FinetuneConfig::default()
    }
}

pub fn state(c: usize) -> DenoiserState {
    DenoiserState::new(base(), c, 1e-3).unwrap()
}

pub fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn quiet(_: &str) {}

pub fn conv_matches_naive_loops() {
    let mut r = rng(5);
    let cases = [
        (4, 3, 3, 1, 1, [2, 3, 17, 19]),
        (5, 2, 3, 2, 1, [1, 2, 16, 15]),
        (3, 6, 1, 1, 0, [2, 6, 9, 9]),
        (2, 2, 5, 1, 2, [1, 2, 12, 10]),
        (3, 1, 3, 1, 0, [1, 1, 8, 11]),
    ];
    for (i, (c_out, c_in, k, s, p, shape)) in cases.into_iter().enumerate() {
        let mut conv = Conv2d::he_normal(c_out, c_in, k, s, p, &mut r);
        conv.bias = (0..c_out).map(|o| 0.1 * o as f32 - 0.1).collect();
        let x = random_tensor(shape, 100 + i as u64);
        let fast = conv.forward(&x).unwrap();
        let slow = naive_conv(&conv, &x);
        assert_eq!(fast.shape(), slow.shape());
        let err = fast.max_abs_diff(&slow);
        assert!(err <= 1e-5, "case {i}: max abs error {err}");
    }
}

pub fn ensemble_pixels_come_from_selected_member() {
    let set = member_maps(3, [2, 1, 24, 20]);
    let out = ensemble_noise(&set, 77).unwrap();
    let idx = selection_indices(out.len(), 3, 77);
    for (p, &v) in out.data().iter().enumerate() {
        assert_eq!(
            v.to_bits(),
            set.maps[idx[p]].data()[p].to_bits(),
            "pixel {p}"
        );
        assert!(set
            .maps
            .iter()
            .any(|m| m.data()[p].to_bits() == v.to_bits()));
    }
}

pub fn selection_is_uniform_over_members() {
    let n = 100_000;
    let m = 3;
    let idx = selection_indices(n, m, 2024);
    let mut counts = vec![0f64; m];
    for &j in &idx {
        counts[j] += 1.0;
    }
    let expected = n as f64 / m as f64;
    let chi2: f64 = counts
        .iter()
        .map(|c| (c - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new((m - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.001, "chi2 {chi2}, p {p}, counts {counts:?}");
}

pub fn ssim_matches_literal_formula() {
    let cfg = SsimConfig::default();
    for (h, w, seed) in [(32, 32, 1), (40, 27, 2), (11, 11, 3)] {
        let a = image(h, w, seed);
        let b = a
            .zip_map(&random_tensor([1, 1, h, w], seed + 10), |v, n| v + 0.05 * n)
            .unwrap();
        let got = ssim(&a, &b, &cfg).unwrap();
        let want = naive_ssim(a.data(), b.data(), h, w);
        assert!((got - want).abs() <= 1e-6, "{h}x{w}: {got} vs {want}");
        assert!((ssim(&a, &a, &cfg).unwrap() - 1.0).abs() <= 1e-6);
    }
}

pub fn sync_count_is_floor_of_steps_over_period() {
    let (src, xs) = (source(), slices());
    for (steps, c) in [(25, 10), (25, 1), (12, 4), (7, 8), (0, 3)] {
        let out = finetune(state(c), &src, &xs, &cfg(steps), 3).unwrap();
        let want: Vec<usize> = (1..=steps / c).map(|k| k * c).collect();
        assert_eq!(out.syncs, want, "steps {steps}, C {c}");
        assert_eq!(out.state.count, steps);
        assert_eq!(out.log.iter().filter(|r| r.sync).count(), steps / c);
    }
}

pub fn period_one_keeps_generator_equal_to_trainee() {
    let (src, xs) = (source(), slices());
    let mut ft = Finetuner::new(state(1), &src, &xs, &cfg(6), 4, true).unwrap();
    for step in 1..=6 {
        let rec = ft.step().unwrap();
        assert!(rec.sync);
        assert_eq!(ft.state().count, step);
        assert_eq!(ft.state().theta, ft.state().theta_star);
    }
}

pub fn generator_and_noise_models_frozen_between_syncs() {
    let (src, xs) = (source(), slices());
    let noise_before = match &src {
        NoiseSource::Ensemble(e) => e
            .models()
            .iter()
            .map(|m| m.flat_params())
            .collect::<Vec<_>>(),
        _ => unreachable!(),
    };
    let mut ft = Finetuner::new(state(5), &src, &xs, &cfg(12), 5, true).unwrap();
    let mut theta = ft.state().theta.flat_params();
    for step in 1..=12 {
        let before_star = ft.state().theta_star.flat_params();
        ft.step().unwrap();
        let now = ft.state().theta.flat_params();
        assert_ne!(
            ft.state().theta_star.flat_params(),
            before_star,
            "step {step} did not train"
        );
        if step % 5 == 0 {
            assert_eq!(ft.state().theta, ft.state().theta_star);
            assert_ne!(now, theta);
            theta = now;
        } else {
            assert_eq!(now, theta, "generator changed at step {step}");
        }
    }
    let NoiseSource::Ensemble(e) = &src else {
        unreachable!()
    };
    let noise_after: Vec<_> = e.models().iter().map(|m| m.flat_params()).collect();
    assert_eq!(noise_before, noise_after);
}

pub fn seeded_runs_are_bit_identical() {
    let (src, xs) = (source(), slices());
    let a = finetune(state(3), &src, &xs, &cfg(8), 21).unwrap();
    let b = finetune(state(3), &src, &xs, &cfg(8), 21).unwrap();
    assert_eq!(a.theta(), b.theta());
    assert_eq!(a.theta_star(), b.theta_star());
    assert_eq!(a.log, b.log);
    let c = finetune(state(3), &src, &xs, &cfg(8), 22).unwrap();
    assert_ne!(a.theta_star(), c.theta_star());
}

pub fn masked_pixel_value_never_reaches_the_input() {
    let cfg = N2vConfig::default();
    let (h, w) = (40, 36);
    let plane = random_tensor([1, 1, h, w], 1).into_vec();
    let mut r = rng(99);
    for seed in 0..1000u64 {
        let m = n2v_mask(h, w, &cfg, seed).unwrap();
        let input = m.apply(&plane);
        let (p, _) = m.replacements[r.random_range(0..m.count())];
        let mut perturbed = plane.clone();
        perturbed[p] += 1.0 + r.random::<f32>();
        let input_p = m.apply(&perturbed);
        assert!(
            input
                .iter()
                .zip(&input_p)
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            "mask {seed}: input depends on masked pixel {p}"
        );
        // Only the target sees the perturbation.
        assert_ne!(plane[p], perturbed[p]);
    }
}

pub fn denoiser_weights_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("den.pctw");
    let mut net = DenoiserNet::new(
        DenoiserConfig {
            depth: 3,
            channels: 6,
        },
        4,
    )
    .unwrap();
    // Parameters that differ from any seeded initialisation.
    for l in net.layers_mut() {
        l.conv.weight = l.conv.weight.map(|v| v * 1.37 + 1e-7);
        l.conv
            .bias
            .iter_mut()
            .enumerate()
            .for_each(|(i, b)| *b = i as f32 * -0.3);
    }
    save_weights(&net, &path).unwrap();
    let back = load_denoiser(&path).unwrap();
    assert_eq!(bits(&back.flat_params()), bits(&net.flat_params()));
    assert_eq!(back.config(), net.config());
    let x = random_tensor([1, 1, 16, 16], 2);
    assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap());
    assert!(load_noise_net(&path).is_err());
}

pub fn noise_net_weights_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("noise.pctw");
    let mut net = NoiseNet::new(
        NoiseNetConfig {
            levels: 2,
            channels: 4,
        },
        8,
    )
    .unwrap();
    for l in net.layers_mut() {
        l.conv.bias.iter_mut().for_each(|b| *b = 0.125);
    }
    save_weights(&net, &path).unwrap();
    let back = load_noise_net(&path).unwrap();
    assert_eq!(bits(&back.flat_params()), bits(&net.flat_params()));
    let bytes = std::fs::read(&path).unwrap();
    save_weights(&back, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert!(load_denoiser(&path).is_err());
}

pub fn raw_slice_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (24, 20);
    let enc = synthetic_encoding();
    let win = HuWindow::default();
    let lo = enc.from_hu(win.lower());
    let hi = enc.from_hu(win.lower() + win.width);
    let raw: Vec<u8> = (0..w * h)
        .flat_map(|i| (lo + (i as u16 * 37) % (hi - lo)).to_le_bytes())
        .collect();
    let p1 = dir.path().join("a.raw");
    std::fs::write(&p1, &raw).unwrap();
    let slice = load_raw_slice(&p1, w, h, enc, win, "s", Dose::Low).unwrap();
    let p2 = dir.path().join("b.raw");
    write_raw_slice(&p2, &slice, enc, win).unwrap();
    assert_eq!(std::fs::read(&p2).unwrap(), raw);
    let again = load_raw_slice(&p2, w, h, enc, win, "s", Dose::Low).unwrap();
    assert_eq!(bits(&again.pixels), bits(&slice.pixels));
    assert!(load_raw_slice(&p1, w + 1, h, enc, win, "s", Dose::Low).is_err());
}

pub fn persisted_config_reproduces_run() {
    let mut cfg = tiny_run_config(6);
    cfg.scheme = SchemeKind::N2v;
    cfg.strategies = vec![Strategy::Ours, Strategy::Hist];
    let a = tempfile::tempdir().unwrap();
    let first = run_pipeline(&cfg, Some(a.path()), &mut quiet).unwrap();
    let loaded = RunConfig::load(&a.path().join(CONFIG_FILE)).unwrap();
    assert_eq!(loaded, cfg);
    let b = tempfile::tempdir().unwrap();
    let second = run_pipeline(&loaded, Some(b.path()), &mut quiet).unwrap();
    assert_eq!(first.report, second.report);
    for f in [
        "denoiser.pctw",
        "eval/report.csv",
        "eval/per_image.ndjson",
        "noise/ensemble.json",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
