//! Acceptance suite: every product-level check in one place, one verdict
//! line per criterion. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines; any failed criterion fails the test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use samiro_core::metrics::{
    f1_from_stats, lane_iou, match_lanes, render_lane_mask, tusimple_accuracy, Mask,
    DEFAULT_IOU_THRESH, DEFAULT_LANE_WIDTH_PX,
};
use samiro_core::nn::{decode_lanes, Projection};
use samiro_core::reg::{
    channel_normalize, miro_loss, samiro_loss, ChannelScale, LossConfig, NormMode,
    Variant,
};
use samiro_core::synth::{generate_scene, GenParams};
use samiro_core::train::{
    finetune, gradcheck_suite, image_to_tensor, mask_patches, mim_pretrain, Oracle, TrainConfig,
    MimConfig,
};
use samiro_core::{Lane, Tensor};
use std::time::Instant;

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn criterion_1_gradients() -> Verdict {
    let t0 = Instant::now();
    let report = gradcheck_suite(0, 1e-4).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    Verdict {
        name: "gradient correctness",
        pass: report.passed() && secs < 60.0,
        detail: format!(
            "{} cases, max rel err {:.3e} (tol 1e-4), {:.1}s (limit 60s)",
            report.cases.len(),
            report.max_err(),
            secs
        ),
    }
}

fn criterion_2_loss_laws() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = LossConfig::default();
    let mut pass = true;
    let mut fail_msg = String::new();

    for case in 0..1000 {
        let c = rng.gen_range(1..5);
        let ct = rng.gen_range(1..5);
        let h = rng.gen_range(2..7);
        let w = rng.gen_range(2..7);
        let f_s = rand_tensor(&mut rng, &[c, h, w], -2.0, 2.0);
        let f_t = rand_tensor(&mut rng, &[ct, h, w], -2.0, 2.0);
        let g = Projection { weight: rand_tensor(&mut rng, &[c, ct, 1, 1], -1.0, 1.0) };
        let wc = ChannelScale::from_tensor(rand_tensor(&mut rng, &[c, 1, 1], 0.05, 3.0));

        // samiro is never negative
        let s = samiro_loss(&f_s, &f_t, &g, &wc, &cfg).unwrap().item();
        if s < 0.0 {
            pass = false;
            fail_msg = format!("case {case}: samiro {s} < 0");
            break;
        }

        // miro goes negative for w < 1 with zero residual
        let w_small = ChannelScale::from_tensor(rand_tensor(&mut rng, &[c, 1, 1], 0.05, 0.95));
        let m = miro_loss(&f_s, &f_s, &w_small).unwrap().item();
        if m >= 0.0 {
            pass = false;
            fail_msg = format!("case {case}: miro {m} >= 0 at w<1, zero residual");
            break;
        }

        // the ReLU(log|w|) term vanishes exactly at |w| = 1
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let w_unit = ChannelScale::from_tensor(Tensor::full(vec![c, 1, 1], sign));
        let s_unit = samiro_loss(&f_s, &f_t, &g, &w_unit, &cfg).unwrap().item();
        let a = channel_normalize(&f_s, cfg.norm_mode, cfg.eps_norm).unwrap();
        let b = g
            .forward(&channel_normalize(&f_t, cfg.norm_mode, cfg.eps_norm).unwrap())
            .unwrap();
        // mean is taken as sum * (1/n), matching the library's arithmetic exactly
        let quad: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            * (1.0 / (c * h * w) as f64);
        if s_unit != quad {
            pass = false;
            fail_msg = format!("case {case}: samiro at |w|=1 is {s_unit}, quad term is {quad}");
            break;
        }

        // identical normalized features and |w| <= 1 gives exactly zero
        let g_id = Projection::identity(c);
        let w_le1 = ChannelScale::from_tensor(rand_tensor(&mut rng, &[c, 1, 1], 0.05, 1.0));
        let z = samiro_loss(&f_s, &f_s, &g_id, &w_le1, &cfg).unwrap().item();
        if z != 0.0 {
            pass = false;
            fail_msg = format!("case {case}: coincident features gave {z}, not 0");
            break;
        }
    }
    Verdict {
        name: "loss-law properties",
        pass,
        detail: if pass {
            "1000 random cases x 4 laws".to_string()
        } else {
            fail_msg
        },
    }
}

fn criterion_3_scale_invariance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for mode in [
        NormMode::PerChannelSpatial,
        NormMode::PerPositionChannel,
        NormMode::GlobalFrobenius,
    ] {
        let cfg = LossConfig { norm_mode: mode, ..LossConfig::default() };
        for _ in 0..50 {
            let f_s = rand_tensor(&mut rng, &[3, 4, 5], -2.0, 2.0);
            let f_t = rand_tensor(&mut rng, &[2, 4, 5], -2.0, 2.0);
            let g = Projection { weight: rand_tensor(&mut rng, &[3, 2, 1, 1], -1.0, 1.0) };
            // |w| = 1 so the loss is the quadratic term alone
            let w = ChannelScale::from_tensor(Tensor::full(vec![3, 1, 1], 1.0));
            let base = samiro_loss(&f_s, &f_t, &g, &w, &cfg).unwrap().item();
            for c in [0.5, 2.0, 10.0] {
                let scaled = samiro_loss(&f_s, &f_t.scale(c), &g, &w, &cfg).unwrap().item();
                let rel = (scaled - base).abs() / base.abs().max(1e-12);
                worst = worst.max(rel);
            }
        }
    }
    Verdict {
        name: "scale invariance",
        pass: worst < 1e-6,
        detail: format!("3 norm modes, c in {{0.5,2,10}}, worst rel change {worst:.3e} (tol 1e-6)"),
    }
}

fn criterion_4_miro_optimum() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (c, h, w) = (3usize, 4usize, 5usize);
    let f_s = rand_tensor(&mut rng, &[c, h, w], -2.0, 2.0);
    let f_t = rand_tensor(&mut rng, &[c, h, w], -2.0, 2.0);
    // analytic optimum per channel: mean squared residual
    let mut target = vec![0.0f64; c];
    let (ds, dt) = (f_s.data(), f_t.data());
    for i in 0..c * h * w {
        target[i / (h * w)] += (ds[i] - dt[i]).powi(2);
    }
    for t in target.iter_mut() {
        *t /= (h * w) as f64;
    }

    let w_t = Tensor::full(vec![c, 1, 1], 1.0).requires_grad();
    let scale = ChannelScale::from_tensor(w_t.clone());
    for _ in 0..20000 {
        let loss = miro_loss(&f_s, &f_t, &scale).unwrap();
        loss.backward().unwrap();
        let g = w_t.grad().unwrap();
        w_t.apply_update(|i, v| v - 0.05 * g[i]);
        w_t.zero_grad();
    }
    let got = w_t.data();
    let worst = got
        .iter()
        .zip(&target)
        .map(|(g, t)| (g.abs() - t).abs() / t)
        .fold(0.0f64, f64::max);
    Verdict {
        name: "miro closed-form optimum",
        pass: worst < 0.01,
        detail: format!("per-channel |w| vs mean sq residual, worst rel dev {worst:.4} (tol 1%)"),
    }
}

fn render_oracle(lane: &Lane, width_px: usize, h: usize, w: usize) -> Mask {
    fn seg_dist(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
        };
        let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
        ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
    }
    let r = width_px as f64 / 2.0;
    let mut data = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let d = lane
                .points
                .windows(2)
                .map(|s| seg_dist(x as f64, y as f64, s[0], s[1]))
                .fold(f64::INFINITY, f64::min);
            data[y * w + x] = d <= r;
        }
    }
    Mask { h, w, data }
}

fn permutations(n: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            f(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            rec(items, k + 1, f);
            items.swap(k, i);
        }
    }
    let mut items: Vec<usize> = (0..n).collect();
    rec(&mut items, 0, f);
}

fn criterion_5_metrics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pass = DEFAULT_IOU_THRESH == 0.5 && DEFAULT_LANE_WIDTH_PX == 30;
    let mut detail = String::new();

    // render + IoU equals the per-pixel distance scan, up to 128x128
    'render: for case in 0..12 {
        let (h, w) = (rng.gen_range(16..=128), rng.gen_range(16..=128));
        let n = rng.gen_range(2..5);
        let mut y = rng.gen_range(-10.0..h as f64 / 3.0);
        let mut pts = Vec::new();
        for _ in 0..n {
            pts.push((rng.gen_range(-15.0..w as f64 + 15.0), y));
            y += rng.gen_range(4.0..h as f64 / 2.0);
        }
        let lane = Lane::new(pts).unwrap();
        for width in [1, 5, 30] {
            let got = render_lane_mask(&lane, width, h, w).unwrap();
            let want = render_oracle(&lane, width, h, w);
            if got != want {
                pass = false;
                detail = format!("render case {case} width {width} differs from scan oracle");
                break 'render;
            }
        }
    }

    // match_lanes agrees with exhaustive assignment on 200+ random instances
    if pass {
        'hung: for case in 0..220 {
            let (h, w) = (32usize, 32usize);
            let mk = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Lane> {
                (0..n)
                    .map(|_| {
                        let x0: f64 = rng.gen_range(0.0..31.0);
                        let x1 = (x0 + rng.gen_range(-9.0..9.0)).clamp(0.0, 31.0);
                        Lane::new(vec![(x0, 0.0), (x1, 31.0)]).unwrap()
                    })
                    .collect()
            };
            let np = rng.gen_range(0..5);
            let preds = mk(&mut rng, np);
            let ng = rng.gen_range(0..5);
            let gts = mk(&mut rng, ng);
            let stats = match_lanes(&preds, &gts, 0.5, 5, h, w, false).unwrap();

            let iou: Vec<Vec<f64>> = preds
                .iter()
                .map(|p| {
                    let pm = render_lane_mask(p, 5, h, w).unwrap();
                    gts.iter()
                        .map(|g| lane_iou(&pm, &render_lane_mask(g, 5, h, w).unwrap()).unwrap())
                        .collect()
                })
                .collect();
            let n = preds.len().max(gts.len());
            let mut best = f64::NEG_INFINITY;
            let mut tps: Vec<usize> = Vec::new();
            permutations(n, &mut |perm| {
                let mut total = 0.0;
                let mut tp = 0;
                for (i, &j) in perm.iter().enumerate() {
                    if i < preds.len() && j < gts.len() {
                        total += iou[i][j];
                        if iou[i][j] >= 0.5 {
                            tp += 1;
                        }
                    }
                }
                if total > best + 1e-12 {
                    best = total;
                    tps = vec![tp];
                } else if (total - best).abs() <= 1e-12 {
                    tps.push(tp);
                }
            });
            if !tps.contains(&stats.tp) {
                pass = false;
                detail = format!("assignment case {case}: tp {} not optimal {:?}", stats.tp, tps);
                break 'hung;
            }
        }
    }

    // identical predictions score perfectly on both protocols
    if pass {
        let lanes = vec![
            Lane::new(vec![(20.0, 0.0), (25.0, 63.0)]).unwrap(),
            Lane::new(vec![(40.0, 0.0), (38.0, 63.0)]).unwrap(),
        ];
        let s = match_lanes(&lanes, &lanes, DEFAULT_IOU_THRESH, 5, 64, 64, false).unwrap();
        let (_, _, f1) = f1_from_stats(&s);
        let h_samples: Vec<i64> = (0..16).map(|i| i * 4).collect();
        let sampled = vec![h_samples.iter().map(|&y| Some(20.0 + y as f64 * 0.1)).collect::<Vec<_>>()];
        let (acc, _, _) = tusimple_accuracy(&sampled, &sampled, &h_samples, 20.0).unwrap();
        if f1 != 1.0 || acc != 1.0 {
            pass = false;
            detail = format!("pred==gt gave f1 {f1}, tusimple acc {acc}");
        }
    }

    Verdict {
        name: "metrics exactness",
        pass,
        detail: if pass {
            "render/IoU scan-exact, 220 assignment instances optimal, perfect-match scores 1.0, defaults 0.5/30px".to_string()
        } else {
            detail
        },
    }
}

fn criterion_6_training(scenes: &[samiro_core::synth::Scene], oracle: &Oracle<f32>) -> Verdict {
    let mut pass = true;
    let mut detail = String::new();
    let mut ratios = Vec::new();
    for seed in [0u64, 1, 2] {
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let out = finetune(scenes, oracle, &cfg).unwrap();
        let rec = &out.record;
        let finite = rec.logs.iter().all(|l| {
            l.total.is_finite() && l.l_ld.is_finite() && l.l_reg.iter().all(|v| v.is_finite())
        }) && out
            .model
            .params()
            .iter()
            .all(|p| p.data().iter().all(|v| v.is_finite()));
        let ratio = rec.final_total() / rec.initial_total();
        ratios.push(ratio);
        // regularizer trend: 50-step moving average must not rise overall
        let reg: Vec<f64> = rec
            .logs
            .iter()
            .map(|l| l.l_reg.iter().sum::<f64>() / l.l_reg.len() as f64)
            .collect();
        let ma = |a: usize| reg[a..a + 50].iter().sum::<f64>() / 50.0;
        let trend_ok = ma(rec.logs.len() - 50) <= ma(0) * 1.001;
        if !finite || ratio >= 0.5 || !trend_ok {
            pass = false;
            detail = format!(
                "seed {seed}: ratio {ratio:.3}, finite {finite}, reg MA {:.5}->{:.5}",
                ma(0),
                ma(rec.logs.len() - 50)
            );
            break;
        }
    }

    if pass {
        // lambda = 0 must be bitwise identical to the regularizer-off baseline
        let zero = TrainConfig {
            steps: 100,
            loss: LossConfig { lambda: 0.0, ..LossConfig::default() },
            ..TrainConfig::default()
        };
        let none = TrainConfig {
            steps: 100,
            loss: LossConfig { variant: Variant::None, ..LossConfig::default() },
            ..TrainConfig::default()
        };
        let a = finetune(scenes, oracle, &zero).unwrap();
        let b = finetune(scenes, oracle, &none).unwrap();
        let curves_equal = a
            .record
            .logs
            .iter()
            .zip(&b.record.logs)
            .all(|(x, y)| x.total.to_bits() == y.total.to_bits());
        let params_equal = a
            .model
            .params()
            .iter()
            .zip(b.model.params().iter())
            .all(|(x, y)| x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        if !curves_equal || !params_equal {
            pass = false;
            detail = format!("lambda=0 vs variant=none: curves {curves_equal}, params {params_equal}");
        }
    }

    Verdict {
        name: "desk-scale training",
        pass,
        detail: if pass {
            format!(
                "seeds 0,1,2 final/initial = {:.3}/{:.3}/{:.3} (< 0.5), all finite, lambda=0 bitwise-equal",
                ratios[0], ratios[1], ratios[2]
            )
        } else {
            detail
        },
    }
}

fn criterion_7_mim(images: &[samiro_core::synth::Image]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = mask_patches(64, 128, 8, 0.6, &mut rng).unwrap();
    if m.iter().filter(|&&b| b).count() != 77 {
        return Verdict {
            name: "mim pretraining",
            pass: false,
            detail: "ceil(0.6*128) != 77 masked patches".to_string(),
        };
    }

    // nothing masked means exactly zero loss: unmasked pixels cannot leak in
    let zero_cfg = MimConfig { mask_ratio: 0.0, steps: 4, ..MimConfig::default() };
    let zero = mim_pretrain(images, &zero_cfg).unwrap();
    if zero.losses.iter().any(|&l| l != 0.0) {
        return Verdict {
            name: "mim pretraining",
            pass: false,
            detail: format!("unmasked pixels leaked into the loss: {:?}", zero.losses),
        };
    }

    let mut ratios = Vec::new();
    for seed in [0u64, 1, 2] {
        let out = mim_pretrain(images, &MimConfig { seed, ..MimConfig::default() }).unwrap();
        ratios.push(out.final_eval / out.initial_eval);
    }
    let pass = ratios.iter().all(|&r| r < 0.5);
    Verdict {
        name: "mim pretraining",
        pass,
        detail: format!(
            "77/128 patches exact, zero-mask loss 0, eval ratios {:.3}/{:.3}/{:.3} (< 0.5)",
            ratios[0], ratios[1], ratios[2]
        ),
    }
}

fn criterion_8_budget() -> Verdict {
    let t0 = Instant::now();
    let p = GenParams::default();
    let train_scenes: Vec<_> = (0..256u64).map(|s| generate_scene(s, &p).unwrap()).collect();
    let test_scenes: Vec<_> = (1000..1064u64).map(|s| generate_scene(s, &p).unwrap()).collect();

    let images: Vec<_> = train_scenes[..32].iter().map(|s| s.image.clone()).collect();
    let mim = mim_pretrain(&images, &MimConfig::default()).unwrap();
    let oracle = Oracle::from_encoder(&mim.encoder);

    let out = finetune(&train_scenes, &oracle, &TrainConfig::default()).unwrap();

    let mut total = samiro_core::metrics::MatchStats::default();
    for scene in &test_scenes {
        let prob = out.model.forward(&image_to_tensor(&scene.image)).unwrap();
        let preds = decode_lanes(&prob, 2, 0.5, 6.0).unwrap();
        total.merge(
            match_lanes(&preds, &scene.lanes, 0.5, 5, scene.image.h, scene.image.w, false).unwrap(),
        );
    }
    let (_, _, f1) = f1_from_stats(&total);
    let secs = t0.elapsed().as_secs_f64();
    Verdict {
        name: "end-to-end budget",
        pass: secs < 300.0,
        detail: format!(
            "gen(256+64) + pretrain(200) + train(300) + eval(64) in {secs:.1}s (limit 300s), test F1 {f1:.3}"
        ),
    }
}

#[test]
fn acceptance() {
    let p = GenParams::default();
    let scenes: Vec<_> = (0..256u64).map(|s| generate_scene(s, &p).unwrap()).collect();
    let images: Vec<_> = scenes[..32].iter().map(|s| s.image.clone()).collect();
    let mim = mim_pretrain(&images, &MimConfig::default()).unwrap();
    let oracle = Oracle::from_encoder(&mim.encoder);

    let verdicts = vec![
        criterion_1_gradients(),
        criterion_2_loss_laws(),
        criterion_3_scale_invariance(),
        criterion_4_miro_optimum(),
        criterion_5_metrics(),
        criterion_6_training(&scenes, &oracle),
        criterion_7_mim(&images),
        criterion_8_budget(),
    ];

    let mut all = true;
    for (i, v) in verdicts.iter().enumerate() {
        println!(
            "criterion {} {}: {} ({})",
            i + 1,
            v.name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        all &= v.pass;
    }
    assert!(all, "one or more acceptance criteria failed");
}
