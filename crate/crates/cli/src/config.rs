//! Run configuration: a flat `key=value` file plus command-line overrides.
//!
//! Every key is the name of a [`RunConfig`] field. Optional values print as
//! `auto`, `none` or `all` when unset, and those words parse back to unset.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mixb2d::data::SplitMode;
use mixb2d::eval::ModelKind;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `idx:IMAGES[,LABELS]`, `dir:ROOT`, `manifest:PATH` or `synthetic:k=v,...`.
    pub data: String,
    pub resize: Option<(usize, usize)>,
    pub pattern: String,
    pub label_from_subdir: bool,
    pub model: ModelKind,
    pub k: usize,
    pub r: usize,
    pub c: usize,
    /// Latent size of the vectorial mixture; `r·c` when unset.
    pub d: Option<usize>,
    pub max_iters: usize,
    pub epsilon: f64,
    /// Pins every noise variance instead of estimating it.
    pub fixed_noise: Option<f64>,
    pub seed: u64,
    pub trials: usize,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub split: SplitMode,
    pub train_per_class: usize,
    pub test_per_class: Option<usize>,
    pub weighted_distance: bool,
    pub no_center: bool,
    pub report_recompute: bool,
    pub record_wall_time: bool,
    /// Evaluation grid; empty means `[model]`, `[K]` and `[(r, c)]`.
    pub models: Vec<ModelKind>,
    pub k_values: Vec<usize>,
    /// Square latent sizes `r = c = dim`.
    pub dim_values: Vec<usize>,
    pub bench_sizes: Vec<usize>,
    pub bench_samples: usize,
    pub bench_repeats: usize,
    pub model_file: PathBuf,
    pub trace_file: PathBuf,
    pub out_dir: PathBuf,
    pub report_file: PathBuf,
    pub features_file: PathBuf,
    pub metrics_file: PathBuf,
    pub summary_file: PathBuf,
    pub results_file: PathBuf,
    pub bench_file: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: String::new(),
            resize: None,
            pattern: "*.pgm".into(),
            label_from_subdir: true,
            model: ModelKind::MixB2dPpca,
            k: 1,
            r: 2,
            c: 2,
            d: None,
            max_iters: 50,
            epsilon: 1e-3,
            fixed_noise: None,
            seed: 0,
            trials: 10,
            threads: 1,
            split: SplitMode::PerClassCount,
            train_per_class: 6,
            test_per_class: None,
            weighted_distance: false,
            no_center: false,
            report_recompute: false,
            record_wall_time: false,
            models: Vec::new(),
            k_values: Vec::new(),
            dim_values: Vec::new(),
            bench_sizes: vec![8, 16, 32],
            bench_samples: 100,
            bench_repeats: 3,
            model_file: "model.bin".into(),
            trace_file: "trace.csv".into(),
            out_dir: "reconstructions".into(),
            report_file: "report.csv".into(),
            features_file: "features.csv".into(),
            metrics_file: "metrics.csv".into(),
            summary_file: "summary.csv".into(),
            results_file: "results.json".into(),
            bench_file: "benchmark.csv".into(),
        }
    }
}

pub const BOOL_KEYS: [&str; 5] = [
    "label_from_subdir",
    "weighted_distance",
    "no_center",
    "report_recompute",
    "record_wall_time",
];

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| usage(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(usage(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_opt<T: FromStr>(key: &str, value: &str, unset: &str) -> Result<Option<T>, CliError> {
    let v = value.trim();
    if v == unset || v.is_empty() {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    let v = value.trim();
    if v == "auto" || v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|item| parse(key, item)).collect()
}

fn parse_model(key: &str, value: &str) -> Result<ModelKind, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| usage(format!("invalid value {value:?} for {key}")))
}

fn show_opt<T: Display>(v: &Option<T>, unset: &str) -> String {
    v.as_ref()
        .map_or_else(|| unset.to_string(), |x| x.to_string())
}

fn show_list<T: Display>(v: &[T]) -> String {
    if v.is_empty() {
        return "auto".into();
    }
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn split_name(mode: SplitMode) -> &'static str {
    match mode {
        SplitMode::PerClassCount => "per_class",
        SplitMode::FixedIndex => "fixed_index",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "data" => self.data = v.to_string(),
            "resize" => {
                self.resize = match v {
                    "" | "none" => None,
                    _ => {
                        let (p, q) = v.split_once('x').ok_or_else(|| {
                            usage(format!("resize must look like PxQ, got {v:?}"))
                        })?;
                        Some((parse(key, p)?, parse(key, q)?))
                    }
                }
            }
            "pattern" => self.pattern = v.to_string(),
            "label_from_subdir" => self.label_from_subdir = parse_bool(key, v)?,
            "model" => self.model = parse_model(key, v)?,
            "K" => self.k = parse(key, v)?,
            "r" => self.r = parse(key, v)?,
            "c" => self.c = parse(key, v)?,
            "d" => self.d = parse_opt(key, v, "auto")?,
            "max_iters" => self.max_iters = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "fixed_noise" => self.fixed_noise = parse_opt(key, v, "none")?,
            "seed" => self.seed = parse(key, v)?,
            "trials" => self.trials = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "split" => {
                self.split = match v {
                    "per_class" => SplitMode::PerClassCount,
                    "fixed_index" => SplitMode::FixedIndex,
                    _ => {
                        return Err(usage(format!(
                            "split must be per_class or fixed_index, got {v:?}"
                        )))
                    }
                }
            }
            "train_per_class" => self.train_per_class = parse(key, v)?,
            "test_per_class" => self.test_per_class = parse_opt(key, v, "all")?,
            "weighted_distance" => self.weighted_distance = parse_bool(key, v)?,
            "no_center" => self.no_center = parse_bool(key, v)?,
            "report_recompute" => self.report_recompute = parse_bool(key, v)?,
            "record_wall_time" => self.record_wall_time = parse_bool(key, v)?,
            "models" => {
                self.models = if v == "auto" || v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|m| parse_model(key, m))
                        .collect::<Result<_, _>>()?
                }
            }
            "K_values" => self.k_values = parse_list(key, v)?,
            "dim_values" => self.dim_values = parse_list(key, v)?,
            "bench_sizes" => self.bench_sizes = parse_list(key, v)?,
            "bench_samples" => self.bench_samples = parse(key, v)?,
            "bench_repeats" => self.bench_repeats = parse(key, v)?,
            "model_file" => self.model_file = v.into(),
            "trace_file" => self.trace_file = v.into(),
            "out_dir" => self.out_dir = v.into(),
            "report_file" => self.report_file = v.into(),
            "features_file" => self.features_file = v.into(),
            "metrics_file" => self.metrics_file = v.into(),
            "summary_file" => self.summary_file = v.into(),
            "results_file" => self.results_file = v.into(),
            "bench_file" => self.bench_file = v.into(),
            _ => return Err(usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let path = |p: &Path| p.display().to_string();
        let pairs: Vec<(&str, String)> = vec![
            ("data", self.data.clone()),
            (
                "resize",
                self.resize
                    .map_or_else(|| "none".into(), |(p, q)| format!("{p}x{q}")),
            ),
            ("pattern", self.pattern.clone()),
            ("label_from_subdir", self.label_from_subdir.to_string()),
            ("model", self.model.to_string()),
            ("K", self.k.to_string()),
            ("r", self.r.to_string()),
            ("c", self.c.to_string()),
            ("d", show_opt(&self.d, "auto")),
            ("max_iters", self.max_iters.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("fixed_noise", show_opt(&self.fixed_noise, "none")),
            ("seed", self.seed.to_string()),
            ("trials", self.trials.to_string()),
            ("threads", self.threads.to_string()),
            ("split", split_name(self.split).into()),
            ("train_per_class", self.train_per_class.to_string()),
            ("test_per_class", show_opt(&self.test_per_class, "all")),
            ("weighted_distance", self.weighted_distance.to_string()),
            ("no_center", self.no_center.to_string()),
            ("report_recompute", self.report_recompute.to_string()),
            ("record_wall_time", self.record_wall_time.to_string()),
            ("models", show_list(&self.models)),
            ("K_values", show_list(&self.k_values)),
            ("dim_values", show_list(&self.dim_values)),
            ("bench_sizes", show_list(&self.bench_sizes)),
            ("bench_samples", self.bench_samples.to_string()),
            ("bench_repeats", self.bench_repeats.to_string()),
            ("model_file", path(&self.model_file)),
            ("trace_file", path(&self.trace_file)),
            ("out_dir", path(&self.out_dir)),
            ("report_file", path(&self.report_file)),
            ("features_file", path(&self.features_file)),
            ("metrics_file", path(&self.metrics_file)),
            ("summary_file", path(&self.summary_file)),
            ("results_file", path(&self.results_file)),
            ("bench_file", path(&self.bench_file)),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Applies a `key=value` file; `#` starts a comment line.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                usage(format!("{}:{}: expected key=value", path.display(), i + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(())
    }

    /// Applies overrides written as `key=value`, `--key=value`, `--key value`
    /// or a bare `--flag` for boolean keys. Dashes in flag names map to underscores.
    pub fn apply_args(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            i += 1;
            let Some(flag) = arg.strip_prefix("--") else {
                let (key, value) = arg
                    .split_once('=')
                    .ok_or_else(|| usage(format!("expected key=value, got {arg:?}")))?;
                self.set(key, value)?;
                continue;
            };
            if let Some((key, value)) = flag.split_once('=') {
                self.set(&key.replace('-', "_"), value)?;
                continue;
            }
            let key = flag.replace('-', "_");
            if BOOL_KEYS.contains(&key.as_str()) {
                let explicit = args.get(i).filter(|v| parse_bool(&key, v).is_ok());
                match explicit {
                    Some(v) => {
                        self.set(&key, v)?;
                        i += 1;
                    }
                    None => self.set(&key, "true")?,
                }
                continue;
            }
            let value = args
                .get(i)
                .ok_or_else(|| usage(format!("--{flag} needs a value")))?;
            i += 1;
            self.set(&key, value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let counts = [
            ("K", self.k),
            ("r", self.r),
            ("c", self.c),
            ("max_iters", self.max_iters),
            ("trials", self.trials),
            ("train_per_class", self.train_per_class),
            ("bench_samples", self.bench_samples),
            ("bench_repeats", self.bench_repeats),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(usage(format!("{key} must be at least 1")));
            }
        }
        if self.d == Some(0) || self.test_per_class == Some(0) {
            return Err(usage("d and test_per_class must be at least 1 when set"));
        }
        if self.k_values.contains(&0)
            || self.dim_values.contains(&0)
            || self.bench_sizes.contains(&0)
        {
            return Err(usage("grid values must be at least 1"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(usage("epsilon must be positive"));
        }
        if self
            .fixed_noise
            .is_some_and(|s| !(s > 0.0 && s.is_finite()))
        {
            return Err(usage("fixed_noise must be positive"));
        }
        Ok(())
    }

    /// A tool/command line followed by one `key=value` line per key.
    pub fn echo_lines(&self, command: &str) -> Vec<String> {
        let mut out = vec![format!(
            "mixb2dppca {} {command}",
            env!("CARGO_PKG_VERSION")
        )];
        out.extend(self.entries().into_iter().map(|(k, v)| format!("{k}={v}")));
        out
    }

    /// [`echo_lines`](Self::echo_lines) as `# ` comment lines.
    pub fn echo(&self, command: &str) -> String {
        self.echo_lines(command)
            .into_iter()
            .map(|l| format!("# {l}\n"))
            .collect()
    }

    pub fn models(&self) -> Vec<ModelKind> {
        if self.models.is_empty() {
            vec![self.model]
        } else {
            self.models.clone()
        }
    }

    pub fn k_values(&self) -> Vec<usize> {
        if self.k_values.is_empty() {
            vec![self.k]
        } else {
            self.k_values.clone()
        }
    }

    pub fn rank_pairs(&self) -> Vec<(usize, usize)> {
        if self.dim_values.is_empty() {
            vec![(self.r, self.c)]
        } else {
            self.dim_values.iter().map(|&d| (d, d)).collect()
        }
    }

    pub fn latent_dim(&self, r: usize, c: usize) -> usize {
        self.d.unwrap_or(r * c)
    }
}
