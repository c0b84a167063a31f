//! Command-line driver for the lane-regularizer lab: data generation,
//! oracle pretraining, regularized fine-tuning, evaluation, gradient
//! checking, and the ablation sweep.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or parse
//! error, 3 failed numerical check.

mod config;

use config::Config;
use samiro_core::checkpoint::{load_checkpoint, manifest_value, save_checkpoint, take_tensor};
use samiro_core::metrics::{f1_from_stats, match_lanes, MatchStats};
use samiro_core::nn::{decode_lanes, ConvStage, Encoder, LaneHead};
use samiro_core::reg::Variant;
use samiro_core::synth::{generate_scene, read_dataset, write_dataset, Scene};
use samiro_core::train::{
    finetune, gradcheck_suite, image_to_tensor, mim_pretrain, FinetuneOutcome, LaneModel, Oracle,
};
use rand::SeedableRng;
use samiro_core::{Error, Result, Tensor};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const USAGE: &str = "\
usage: samiro <command> [--config FILE] [--out DIR] [--no-timestamp] [section.key=value ...]

commands:
  gen        generate the synthetic dataset into [data] dir
  pretrain   masked-image pretraining of the oracle encoder
  train      fine-tune the lane model against the frozen oracle
  eval       decode and score a trained model on the dataset
  gradcheck  verify every backward rule by finite differences
  ablate     run the regularizer ablation sweep over seeds
";

struct Cli {
    command: String,
    out: PathBuf,
    timestamp: bool,
    tolerance: f64,
    cfg: Config,
}

fn parse_args(args: &[String]) -> Result<Cli> {
    let usage = |msg: String| Error::Config(format!("{msg}\n\n{USAGE}"));
    let mut command = None;
    let mut out = PathBuf::from("out");
    let mut config_path = None;
    let mut timestamp = true;
    let mut tolerance = 1e-4;
    let mut overrides = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "--config" => {
                config_path = Some(
                    it.next()
                        .ok_or_else(|| usage("--config needs a file".into()))?
                        .clone(),
                )
            }
            "--out" => {
                out = PathBuf::from(
                    it.next().ok_or_else(|| usage("--out needs a directory".into()))?,
                )
            }
            "--no-timestamp" => timestamp = false,
            "--tolerance" => {
                let v = it.next().ok_or_else(|| usage("--tolerance needs a value".into()))?;
                tolerance = v
                    .parse()
                    .map_err(|_| usage(format!("invalid tolerance '{v}'")))?;
            }
            "--help" | "-h" => return Err(usage("".into())),
            s if s.starts_with("--") => return Err(usage(format!("unknown flag '{s}'"))),
            s if s.contains('=') => overrides.push(s.to_string()),
            s if command.is_none() => command = Some(s.to_string()),
            s => return Err(usage(format!("unexpected argument '{s}'"))),
        }
    }
    let command = command.ok_or_else(|| usage("no command given".into()))?;
    let mut cfg = match config_path {
        Some(p) => Config::from_file(&p)?,
        None => Config::default(),
    };
    for o in &overrides {
        cfg.apply_override(o)?;
    }
    Ok(Cli {
        command,
        out,
        timestamp,
        tolerance,
        cfg,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_out(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Error::io(cli.out.display().to_string(), e))?;
    write_file(&cli.out.join("config.resolved"), &cli.cfg.resolved_text())
}

fn stamp(cli: &Cli) -> String {
    if cli.timestamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        format!("generated_at = {secs}\n")
    } else {
        String::new()
    }
}

/// Paths from the config are taken relative to --out unless absolute.
fn in_out(cli: &Cli, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        cli.out.join(path)
    }
}

fn encoder_entries(prefix: &str, enc: &Encoder<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut v = Vec::new();
    for (i, s) in enc.stages.iter().enumerate() {
        v.push((format!("{prefix}.{i}.weight"), s.weight.clone()));
        v.push((format!("{prefix}.{i}.bias"), s.bias.clone()));
    }
    v
}

fn encoder_manifest(kind: &str, enc: &Encoder<f32>) -> Vec<(String, String)> {
    let widths = enc
        .widths
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(",");
    vec![
        ("kind".to_string(), kind.to_string()),
        ("in_channels".to_string(), enc.in_channels.to_string()),
        ("widths".to_string(), widths.to_string()),
    ]
}

fn load_encoder(
    tensors: &[(String, Tensor<f32>)],
    manifest: &[(String, String)],
    prefix: &str,
) -> Result<Encoder<f32>> {
    let in_channels: usize = manifest_value(manifest, "in_channels")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad in_channels in manifest".into()))?;
    let widths: Vec<usize> = manifest_value(manifest, "widths")?
        .split(',')
        .map(|s| s.parse().map_err(|_| Error::Checkpoint("bad widths in manifest".into())))
        .collect::<Result<_>>()?;
    let mut enc = Encoder::zeros(in_channels, &widths);
    for (i, s) in enc.stages.iter_mut().enumerate() {
        *s = ConvStage {
            weight: take_tensor(tensors, &format!("{prefix}.{i}.weight"))?.requires_grad(),
            bias: take_tensor(tensors, &format!("{prefix}.{i}.bias"))?.requires_grad(),
        };
    }
    Ok(enc)
}

fn save_model(path: &Path, model: &LaneModel<f32>) -> Result<()> {
    let mut tensors = encoder_entries("enc", &model.encoder);
    tensors.push(("head.weight".to_string(), model.head.weight.clone()));
    tensors.push(("head.bias".to_string(), model.head.bias.clone()));
    let mut manifest = encoder_manifest("model", &model.encoder);
    manifest.push(("upsample".to_string(), model.head.upsample.to_string()));
    save_checkpoint(path, &tensors, &manifest)
}

fn load_model(path: &Path) -> Result<LaneModel<f32>> {
    let (tensors, manifest) = load_checkpoint::<f32>(path)?;
    if manifest_value(&manifest, "kind")? != "model" {
        return Err(Error::Checkpoint(format!(
            "{}: expected a model checkpoint",
            path.display()
        )));
    }
    let encoder = load_encoder(&tensors, &manifest, "enc")?;
    let upsample: usize = manifest_value(&manifest, "upsample")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad upsample in manifest".into()))?;
    let channels = *encoder.widths.last().unwrap();
    let mut head = LaneHead::zeros(channels, upsample);
    head.weight = take_tensor(&tensors, "head.weight")?.requires_grad();
    head.bias = take_tensor(&tensors, "head.bias")?.requires_grad();
    Ok(LaneModel { encoder, head })
}

fn load_oracle(path: &Path) -> Result<Oracle<f32>> {
    let (tensors, manifest) = load_checkpoint::<f32>(path)?;
    if manifest_value(&manifest, "kind")? != "oracle" {
        return Err(Error::Checkpoint(format!(
            "{}: expected an oracle checkpoint",
            path.display()
        )));
    }
    Ok(Oracle::from_encoder(&load_encoder(&tensors, &manifest, "enc")?))
}

fn cmd_gen(cli: &Cli) -> Result<()> {
    ensure_out(cli)?;
    let d = &cli.cfg.data;
    let mut scenes = Vec::with_capacity(d.count);
    for i in 0..d.count {
        scenes.push(generate_scene(d.seed + i as u64, &d.gen)?);
    }
    write_dataset(&scenes, Path::new(&d.dir))?;
    println!("gen: wrote {} scenes to {}", scenes.len(), d.dir);
    Ok(())
}

fn cmd_pretrain(cli: &Cli) -> Result<()> {
    ensure_out(cli)?;
    let scenes = read_dataset(Path::new(&cli.cfg.data.dir))?;
    let images: Vec<_> = scenes.iter().map(|s| s.image.clone()).collect();
    let out = mim_pretrain(&images, &cli.cfg.pretrain)?;

    let mut csv = String::from("step,masked_mse\n");
    for (i, l) in out.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    write_file(&cli.out.join("pretrain_loss.csv"), &csv)?;
    let path = in_out(cli, &cli.cfg.model.oracle);
    save_checkpoint(
        &path,
        &encoder_entries("enc", &out.encoder),
        &encoder_manifest("oracle", &out.encoder),
    )?;
    println!(
        "pretrain: {} steps, masked mse {:.6} -> {:.6}, oracle saved to {}",
        out.losses.len(),
        out.losses.first().unwrap_or(&f64::NAN),
        out.losses.last().unwrap_or(&f64::NAN),
        path.display()
    );
    Ok(())
}

fn run_finetune(cli: &Cli) -> Result<FinetuneOutcome> {
    let scenes = read_dataset(Path::new(&cli.cfg.data.dir))?;
    let (mut train_cfg, _) = cli.cfg.resolve();
    // no oracle configured means a plain baseline run, regularizer off
    let oracle = if cli.cfg.model.oracle.is_empty() || cli.cfg.model.oracle == "none" {
        train_cfg.loss.variant = Variant::None;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x0bac_e11e);
        Oracle::from_encoder(&Encoder::seeded(
            cli.cfg.data.gen.channels,
            &cli.cfg.model.widths,
            &mut rng,
        ))
    } else {
        load_oracle(&in_out(cli, &cli.cfg.model.oracle))?
    };
    finetune(&scenes, &oracle, &train_cfg)
}

fn cmd_train(cli: &Cli) -> Result<()> {
    ensure_out(cli)?;
    let out = run_finetune(cli)?;
    write_file(&cli.out.join("loss.csv"), &out.record.csv())?;
    let path = in_out(cli, &cli.cfg.model.model);
    save_model(&path, &out.model)?;
    println!(
        "train: {} steps, total loss {:.6} -> {:.6}, model saved to {}",
        out.record.logs.len(),
        out.record.initial_total(),
        out.record.final_total(),
        path.display()
    );
    println!(
        "train: lambda = {}, norm_mode = {}, variant = {}",
        cli.cfg.loss.lambda,
        cli.cfg.loss.norm_mode.name(),
        cli.cfg.loss.variant.name()
    );
    Ok(())
}

fn score_scenes(model: &LaneModel<f32>, scenes: &[Scene], cli: &Cli) -> Result<Vec<MatchStats>> {
    let e = &cli.cfg.eval;
    let mut per_scene = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let prob = model.forward(&image_to_tensor(&scene.image))?;
        let preds = decode_lanes(&prob, e.row_stride, e.decode_threshold, e.gap_tol_x)?;
        per_scene.push(match_lanes(
            &preds,
            &scene.lanes,
            e.iou_thresh,
            e.lane_width_px,
            scene.image.h,
            scene.image.w,
            e.greedy,
        )?);
    }
    Ok(per_scene)
}

/// Lane sets named by sample, in a stable order.
fn lane_sets(dir: &Path, format: &str) -> Result<Vec<(String, Vec<samiro_core::Lane>)>> {
    match format {
        "synth" => {
            let scenes = read_dataset(dir)?;
            Ok(scenes
                .into_iter()
                .enumerate()
                .map(|(i, s)| (format!("{i:04}"), s.lanes))
                .collect())
        }
        "culane" => {
            let mut names: Vec<String> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir.display().to_string(), e))?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".lines.txt"))
                .collect();
            names.sort();
            let mut out = Vec::new();
            for name in names {
                let path = dir.join(&name);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                let lanes = samiro_core::metrics::parse_culane_lines(&text).map_err(|e| match e {
                    Error::Parse { line, msg, .. } => Error::Parse {
                        file: path.display().to_string(),
                        line,
                        msg,
                    },
                    other => other,
                })?;
                out.push((name, lanes));
            }
            Ok(out)
        }
        other => Err(Error::Config(format!(
            "unsupported eval format '{other}' (expected culane, tusimple, or synth)"
        ))),
    }
}

/// Scores prediction files against ground-truth files without a model.
fn eval_files(cli: &Cli, pred: &str, gt: &str) -> Result<()> {
    let e = &cli.cfg.eval;
    let (h, w) = (cli.cfg.data.gen.height, cli.cfg.data.gen.width);

    if cli.cfg.eval_format == "tusimple" {
        let read_lines = |p: &str| -> Result<Vec<String>> {
            let text = std::fs::read_to_string(p).map_err(|err| Error::io(p.to_string(), err))?;
            Ok(text.lines().map(|l| l.to_string()).collect())
        };
        let preds = read_lines(pred)?;
        let gts = read_lines(gt)?;
        if preds.len() != gts.len() {
            return Err(Error::Config(format!(
                "tusimple record counts differ: {} vs {}",
                preds.len(),
                gts.len()
            )));
        }
        let mut acc_sum = 0.0;
        let mut csv = String::from("record,accuracy,fp,fn\n");
        for (i, (p, g)) in preds.iter().zip(&gts).enumerate() {
            let (pl, _, _) = samiro_core::metrics::parse_tusimple_record(p)?;
            let (gl, h_samples, _) = samiro_core::metrics::parse_tusimple_record(g)?;
            let (acc, fp, fn_) =
                samiro_core::metrics::tusimple_accuracy(&pl, &gl, &h_samples, 20.0)?;
            acc_sum += acc;
            csv.push_str(&format!("{i},{acc},{fp},{fn_}\n"));
        }
        let accuracy = acc_sum / preds.len().max(1) as f64;
        write_file(&cli.out.join("report.csv"), &csv)?;
        let report = format!("{}records = {}\naccuracy = {accuracy:.6}\n", stamp(cli), preds.len());
        write_file(&cli.out.join("report.txt"), &report)?;
        print!("{report}");
        return Ok(());
    }

    let preds = lane_sets(Path::new(pred), &cli.cfg.eval_format)?;
    let gts = lane_sets(Path::new(gt), &cli.cfg.eval_format)?;
    if preds.len() != gts.len() {
        return Err(Error::Config(format!(
            "prediction and ground-truth sets differ in size: {} vs {}",
            preds.len(),
            gts.len()
        )));
    }
    let mut csv = String::from("sample,tp,fp,fn,f1\n");
    let mut total = MatchStats::default();
    for ((name, pl), (_, gl)) in preds.iter().zip(&gts) {
        let s = match_lanes(pl, gl, e.iou_thresh, e.lane_width_px, h, w, e.greedy)?;
        let (_, _, f1) = f1_from_stats(&s);
        csv.push_str(&format!("{name},{},{},{},{f1}\n", s.tp, s.fp, s.fn_));
        total.merge(s);
    }
    write_file(&cli.out.join("report.csv"), &csv)?;
    let (precision, recall, f1) = f1_from_stats(&total);
    let report = format!(
        "{}samples = {}\niou_thresh = {}\nlane_width_px = {}\ntp = {}\nfp = {}\nfn = {}\nprecision = {precision:.6}\nrecall = {recall:.6}\nf1 = {f1:.6}\n",
        stamp(cli),
        preds.len(),
        e.iou_thresh,
        e.lane_width_px,
        total.tp,
        total.fp,
        total.fn_
    );
    write_file(&cli.out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn cmd_eval(cli: &Cli) -> Result<()> {
    ensure_out(cli)?;
    // file-vs-file mode when a prediction source is configured
    if !cli.cfg.eval_pred.is_empty() {
        let gt = if cli.cfg.eval_gt.is_empty() {
            cli.cfg.data.dir.clone()
        } else {
            cli.cfg.eval_gt.clone()
        };
        let pred = cli.cfg.eval_pred.clone();
        return eval_files(cli, &pred, &gt);
    }

    let scenes = read_dataset(Path::new(&cli.cfg.data.dir))?;
    let model = load_model(&in_out(cli, &cli.cfg.model.model))?;
    let per_scene = score_scenes(&model, &scenes, cli)?;

    let mut csv = String::from("scene,tp,fp,fn,f1\n");
    let mut total = MatchStats::default();
    for (i, s) in per_scene.iter().enumerate() {
        let (_, _, f1) = f1_from_stats(s);
        csv.push_str(&format!("{i},{},{},{},{f1}\n", s.tp, s.fp, s.fn_));
        total.merge(*s);
    }
    write_file(&cli.out.join("report.csv"), &csv)?;

    let (precision, recall, f1) = f1_from_stats(&total);
    let report = format!(
        "{}scenes = {}\niou_thresh = {}\nlane_width_px = {}\ntp = {}\nfp = {}\nfn = {}\nprecision = {precision:.6}\nrecall = {recall:.6}\nf1 = {f1:.6}\n",
        stamp(cli),
        scenes.len(),
        cli.cfg.eval.iou_thresh,
        cli.cfg.eval.lane_width_px,
        total.tp,
        total.fp,
        total.fn_
    );
    write_file(&cli.out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn cmd_gradcheck(cli: &Cli) -> Result<bool> {
    ensure_out(cli)?;
    let report = gradcheck_suite(cli.cfg.train.seed, cli.tolerance)?;
    let mut text = stamp(cli);
    for c in &report.cases {
        let line = format!(
            "{} {}: max rel err {:.3e}",
            if c.max_rel_err < report.tol { "PASS" } else { "FAIL" },
            c.name,
            c.max_rel_err
        );
        println!("{line}");
        text.push_str(&line);
        text.push('\n');
    }
    let verdict = format!(
        "gradcheck {}: {} cases, max rel err {:.3e}, tol {:.1e}",
        if report.passed() { "PASS" } else { "FAIL" },
        report.cases.len(),
        report.max_err(),
        report.tol
    );
    println!("{verdict}");
    text.push_str(&verdict);
    text.push('\n');
    write_file(&cli.out.join("report.txt"), &text)?;
    Ok(report.passed())
}

fn cmd_ablate(cli: &Cli) -> Result<()> {
    ensure_out(cli)?;
    let scenes = read_dataset(Path::new(&cli.cfg.data.dir))?;
    let oracle = load_oracle(&in_out(cli, &cli.cfg.model.oracle))?;
    let seeds = if cli.cfg.ablate_seeds.is_empty() {
        vec![0, 1, 2]
    } else {
        cli.cfg.ablate_seeds.clone()
    };

    // (name, variant, use_normalization, use_attention)
    let settings = [
        ("baseline", Variant::None, false, false),
        ("samiro_raw", Variant::Samiro, false, false),
        ("samiro_norm", Variant::Samiro, true, false),
        ("samiro_full", Variant::Samiro, true, true),
    ];

    let mut csv = String::from("setting");
    for s in &seeds {
        csv.push_str(&format!(",f1_seed_{s}"));
    }
    csv.push_str(",f1_mean,f1_range\n");
    for (name, variant, use_norm, use_attn) in settings {
        let mut f1s = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let mut run = cli.cfg.clone();
            run.loss.variant = variant;
            run.loss.use_normalization = use_norm;
            run.loss.use_attention = use_attn;
            run.train.seed = seed;
            let (train_cfg, _) = run.resolve();
            let out = finetune(&scenes, &oracle, &train_cfg)?;

            let run_cli = Cli {
                command: cli.command.clone(),
                out: cli.out.clone(),
                timestamp: cli.timestamp,
                tolerance: cli.tolerance,
                cfg: run,
            };
            let per_scene = score_scenes(&out.model, &scenes, &run_cli)?;
            let mut total = MatchStats::default();
            for s in &per_scene {
                total.merge(*s);
            }
            let (_, _, f1) = f1_from_stats(&total);
            println!("{name} seed {seed}: f1 {f1:.4} (final total {:.5})", out.record.final_total());
            f1s.push(f1);
        }
        let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
        let range = f1s.iter().cloned().fold(f64::MIN, f64::max)
            - f1s.iter().cloned().fold(f64::MAX, f64::min);
        csv.push_str(name);
        for f1 in &f1s {
            csv.push_str(&format!(",{f1}"));
        }
        csv.push_str(&format!(",{mean},{range}\n"));
    }
    write_file(&cli.out.join("ablate.csv"), &csv)?;
    println!("ablate: wrote {}", cli.out.join("ablate.csv").display());
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match parse_args(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command.as_str() {
        "gen" => cmd_gen(&cli),
        "pretrain" => cmd_pretrain(&cli),
        "train" => cmd_train(&cli),
        "eval" => cmd_eval(&cli),
        "ablate" => cmd_ablate(&cli),
        "gradcheck" => match cmd_gradcheck(&cli) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(3),
            Err(e) => Err(e),
        },
        other => {
            eprintln!("unknown command '{other}'\n\n{USAGE}");
            return ExitCode::from(1);
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
