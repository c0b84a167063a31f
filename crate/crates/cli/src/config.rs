//! INI-style run configuration: `[section]` headers, `key = value` lines,
//! `#` comments. Unknown sections or keys are rejected by name so typos
//! cannot silently fall back to defaults. Command-line overrides use
//! `section.key=value`.

use samiro_core::reg::{LossConfig, NormMode, Variant};
use samiro_core::synth::GenParams;
use samiro_core::train::{MimConfig, TrainConfig};
use samiro_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub dir: String,
    pub count: usize,
    pub gen: GenParams,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: "data".to_string(),
            count: 256,
            gen: GenParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub attention_kernel: usize,
    /// Oracle checkpoint path used by `train`; written by `pretrain`.
    pub oracle: String,
    /// Model checkpoint path written by `train`, read by `eval`.
    pub model: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            widths: vec![8, 16, 32],
            attention_kernel: 7,
            oracle: "oracle.smck".to_string(),
            model: "model.smck".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub iou_thresh: f64,
    pub lane_width_px: usize,
    pub decode_threshold: f64,
    pub row_stride: usize,
    pub gap_tol_x: f64,
    pub greedy: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresh: samiro_core::metrics::DEFAULT_IOU_THRESH,
            lane_width_px: 5,
            decode_threshold: 0.5,
            row_stride: 2,
            gap_tol_x: 6.0,
            greedy: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub pretrain: MimConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Prediction source for file-vs-file eval; empty selects model eval.
    pub eval_pred: String,
    pub eval_gt: String,
    pub eval_format: String,
    pub ablate_seeds: Vec<u64>,
}

impl Config {
    fn base() -> Config {
        Config {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            pretrain: MimConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            eval_pred: String::new(),
            eval_gt: String::new(),
            eval_format: "synth".to_string(),
            ablate_seeds: Vec::new(),
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Config::base()
    }
}

fn bad(file: &str, line: usize, msg: String) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        msg,
    }
}

fn parse_num<T: std::str::FromStr>(file: &str, line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| bad(file, line, format!("invalid value '{v}' for {key}")))
}

fn parse_bool(file: &str, line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(file, line, format!("invalid boolean '{v}' for {key}"))),
    }
}

fn parse_list<T: std::str::FromStr>(file: &str, line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| bad(file, line, format!("invalid list entry '{s}' for {key}")))
        })
        .collect()
}

impl Config {
    pub fn from_file(path: &str) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.to_string(), e))?;
        let mut cfg = Config::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Applies a `section.key=value` command-line override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{spec}' is not of the form section.key=value"))
        })?;
        let (section, key) = path.split_once('.').ok_or_else(|| {
            Error::Config(format!("override key '{path}' is not of the form section.key"))
        })?;
        self.set("<override>", 0, section.trim(), key.trim(), value.trim())
    }

    fn apply_text(&mut self, text: &str, file: &str) -> Result<()> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| bad(file, line_no, format!("malformed section header '{line}'")))?;
                section = name.trim().to_string();
                if !["data", "model", "loss", "pretrain", "train", "eval"].contains(&section.as_str()) {
                    return Err(bad(file, line_no, format!("unknown section '[{section}]'")));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(file, line_no, format!("expected key = value, got '{line}'")))?;
            if section.is_empty() {
                return Err(bad(file, line_no, "key before any [section] header".to_string()));
            }
            self.set(file, line_no, &section, key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn set(&mut self, file: &str, ln: usize, section: &str, key: &str, v: &str) -> Result<()> {
        match (section, key) {
            ("data", "dir") => self.data.dir = v.to_string(),
            ("data", "count") => self.data.count = parse_num(file, ln, key, v)?,
            ("data", "seed") => self.data.seed = parse_num(file, ln, key, v)?,
            ("data", "height") => self.data.gen.height = parse_num(file, ln, key, v)?,
            ("data", "width") => self.data.gen.width = parse_num(file, ln, key, v)?,
            ("data", "channels") => self.data.gen.channels = parse_num(file, ln, key, v)?,
            ("data", "lane_count_min") => self.data.gen.lane_count_min = parse_num(file, ln, key, v)?,
            ("data", "lane_count_max") => self.data.gen.lane_count_max = parse_num(file, ln, key, v)?,
            ("data", "curvature_max") => self.data.gen.curvature_max = parse_num(file, ln, key, v)?,
            ("data", "lane_width_px") => self.data.gen.lane_width_px = parse_num(file, ln, key, v)?,
            ("data", "clutter_density") => self.data.gen.clutter_density = parse_num(file, ln, key, v)?,
            ("data", "illumination_prob") => self.data.gen.illumination_prob = parse_num(file, ln, key, v)?,
            ("data", "illumination_gain_lo") => self.data.gen.illumination_gain.0 = parse_num(file, ln, key, v)?,
            ("data", "illumination_gain_hi") => self.data.gen.illumination_gain.1 = parse_num(file, ln, key, v)?,
            ("data", "illumination_bias_lo") => self.data.gen.illumination_bias.0 = parse_num(file, ln, key, v)?,
            ("data", "illumination_bias_hi") => self.data.gen.illumination_bias.1 = parse_num(file, ln, key, v)?,
            ("data", "occlusion_prob") => self.data.gen.occlusion_prob = parse_num(file, ln, key, v)?,
            ("data", "occlusion_max_rects") => self.data.gen.occlusion_max_rects = parse_num(file, ln, key, v)?,

            ("model", "widths") => self.model.widths = parse_list(file, ln, key, v)?,
            ("model", "attention_kernel") => self.model.attention_kernel = parse_num(file, ln, key, v)?,
            ("model", "oracle") => self.model.oracle = v.to_string(),
            ("model", "model") => self.model.model = v.to_string(),

            ("loss", "lambda") => self.loss.lambda = parse_num(file, ln, key, v)?,
            ("loss", "variant") => self.loss.variant = Variant::parse(v)?,
            ("loss", "norm_mode") => self.loss.norm_mode = NormMode::parse(v)?,
            ("loss", "stage_set") => self.loss.stage_set = parse_list(file, ln, key, v)?,
            ("loss", "eps_norm") => self.loss.eps_norm = parse_num(file, ln, key, v)?,
            ("loss", "use_normalization") => self.loss.use_normalization = parse_bool(file, ln, key, v)?,
            ("loss", "use_attention") => self.loss.use_attention = parse_bool(file, ln, key, v)?,

            ("pretrain", "steps") => self.pretrain.steps = parse_num(file, ln, key, v)?,
            ("pretrain", "lr") => self.pretrain.lr = parse_num(file, ln, key, v)?,
            ("pretrain", "momentum") => self.pretrain.momentum = parse_num(file, ln, key, v)?,
            ("pretrain", "mask_ratio") => self.pretrain.mask_ratio = parse_num(file, ln, key, v)?,
            ("pretrain", "patch") => self.pretrain.patch = parse_num(file, ln, key, v)?,
            ("pretrain", "widths") => self.pretrain.widths = parse_list(file, ln, key, v)?,
            ("pretrain", "seed") => self.pretrain.seed = parse_num(file, ln, key, v)?,

            ("train", "steps") => self.train.steps = parse_num(file, ln, key, v)?,
            ("train", "lr") => self.train.lr = parse_num(file, ln, key, v)?,
            ("train", "momentum") => self.train.momentum = parse_num(file, ln, key, v)?,
            ("train", "seed") => self.train.seed = parse_num(file, ln, key, v)?,
            ("train", "ablate_seeds") => self.ablate_seeds = parse_list(file, ln, key, v)?,

            ("eval", "iou_thresh") => self.eval.iou_thresh = parse_num(file, ln, key, v)?,
            ("eval", "lane_width_px") => self.eval.lane_width_px = parse_num(file, ln, key, v)?,
            ("eval", "decode_threshold") => self.eval.decode_threshold = parse_num(file, ln, key, v)?,
            ("eval", "row_stride") => self.eval.row_stride = parse_num(file, ln, key, v)?,
            ("eval", "gap_tol_x") => self.eval.gap_tol_x = parse_num(file, ln, key, v)?,
            ("eval", "greedy") => self.eval.greedy = parse_bool(file, ln, key, v)?,
            ("eval", "pred") => self.eval_pred = v.to_string(),
            ("eval", "gt") => self.eval_gt = v.to_string(),
            ("eval", "format") => {
                if !["culane", "tusimple", "synth"].contains(&v) {
                    return Err(bad(file, ln, format!("unknown eval format '{v}'")));
                }
                self.eval_format = v.to_string();
            }

            _ => {
                return Err(bad(
                    file,
                    ln,
                    format!("unknown key '{key}' in section '[{section}]'"),
                ))
            }
        }
        Ok(())
    }

    /// Fills the core configs with the sections that feed them.
    pub fn resolve(&self) -> (TrainConfig, MimConfig) {
        let mut train = self.train.clone();
        train.widths = self.model.widths.clone();
        train.attention_kernel = self.model.attention_kernel;
        train.lane_width_px = self.data.gen.lane_width_px;
        train.loss = self.loss.clone();
        let pretrain = self.pretrain.clone();
        (train, pretrain)
    }

    /// Full key set with effective values, written next to every run's
    /// outputs so a run can be reproduced from its artifacts alone.
    pub fn resolved_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let seeds = self
            .ablate_seeds
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "[data]\n\
             dir = {}\ncount = {}\nseed = {}\nheight = {}\nwidth = {}\nchannels = {}\n\
             lane_count_min = {}\nlane_count_max = {}\ncurvature_max = {}\nlane_width_px = {}\n\
             clutter_density = {}\nillumination_prob = {}\nillumination_gain_lo = {}\n\
             illumination_gain_hi = {}\nillumination_bias_lo = {}\nillumination_bias_hi = {}\n\
             occlusion_prob = {}\nocclusion_max_rects = {}\n\n\
             [model]\nwidths = {}\nattention_kernel = {}\noracle = {}\nmodel = {}\n\n\
             [loss]\nlambda = {}\nvariant = {}\nnorm_mode = {}\nstage_set = {}\neps_norm = {}\n\
             use_normalization = {}\nuse_attention = {}\n\n\
             [pretrain]\nsteps = {}\nlr = {}\nmomentum = {}\nmask_ratio = {}\npatch = {}\n\
             widths = {}\nseed = {}\n\n\
             [train]\nsteps = {}\nlr = {}\nmomentum = {}\nseed = {}\nablate_seeds = {}\n\n\
             [eval]\niou_thresh = {}\nlane_width_px = {}\ndecode_threshold = {}\nrow_stride = {}\n\
             gap_tol_x = {}\ngreedy = {}\npred = {}\ngt = {}\nformat = {}\n",
            self.data.dir, self.data.count, self.data.seed,
            self.data.gen.height, self.data.gen.width, self.data.gen.channels,
            self.data.gen.lane_count_min, self.data.gen.lane_count_max,
            self.data.gen.curvature_max, self.data.gen.lane_width_px,
            self.data.gen.clutter_density, self.data.gen.illumination_prob,
            self.data.gen.illumination_gain.0, self.data.gen.illumination_gain.1,
            self.data.gen.illumination_bias.0, self.data.gen.illumination_bias.1,
            self.data.gen.occlusion_prob, self.data.gen.occlusion_max_rects,
            list(&self.model.widths), self.model.attention_kernel,
            self.model.oracle, self.model.model,
            self.loss.lambda, self.loss.variant.name(), self.loss.norm_mode.name(),
            list(&self.loss.stage_set), self.loss.eps_norm,
            self.loss.use_normalization, self.loss.use_attention,
            self.pretrain.steps, self.pretrain.lr, self.pretrain.momentum,
            self.pretrain.mask_ratio, self.pretrain.patch, list(&self.pretrain.widths),
            self.pretrain.seed,
            self.train.steps, self.train.lr, self.train.momentum, self.train.seed, seeds,
            self.eval.iou_thresh, self.eval.lane_width_px, self.eval.decode_threshold,
            self.eval.row_stride, self.eval.gap_tol_x, self.eval.greedy,
            self.eval_pred, self.eval_gt, self.eval_format,
        )
    }
}
