//! Dataset descriptors and output files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mixb2d::data::{self, SampleSet};
use mixb2d::eval::{synth_generate, SyntheticSpec};

use crate::config::RunConfig;
use crate::CliError;

/// Writes `text`, creating missing parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// CSV text that starts with the config echo, then a header row.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(cfg: &RunConfig, command: &str, header: &str) -> Self {
        let mut text = cfg.echo(command);
        text.push_str(header);
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn raw(&mut self, rows: &str) {
        self.text.push_str(rows);
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_file(path, self.text.as_bytes())
    }
}

fn synthetic(spec: &str) -> Result<SampleSet, CliError> {
    let mut k = 2usize;
    let mut n = 100usize;
    let (mut p, mut q, mut r, mut c) = (8usize, 8usize, 2usize, 2usize);
    let (mut sep, mut scale, mut sigma2) = (10.0f64, 1.0f64, 0.01f64);
    let mut seed = 0u64;
    for item in spec.split(',').filter(|s| !s.trim().is_empty()) {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("synthetic field {item:?} is not key=value")))?;
        let bad = || CliError::Usage(format!("synthetic field {item:?} has a bad value"));
        let value = value.trim();
        match key.trim() {
            "K" => k = value.parse().map_err(|_| bad())?,
            "N" => n = value.parse().map_err(|_| bad())?,
            "p" => p = value.parse().map_err(|_| bad())?,
            "q" => q = value.parse().map_err(|_| bad())?,
            "r" => r = value.parse().map_err(|_| bad())?,
            "c" => c = value.parse().map_err(|_| bad())?,
            "sep" => sep = value.parse().map_err(|_| bad())?,
            "scale" => scale = value.parse().map_err(|_| bad())?,
            "sigma2" => sigma2 = value.parse().map_err(|_| bad())?,
            "seed" => seed = value.parse().map_err(|_| bad())?,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown synthetic field {other:?}"
                )))
            }
        }
    }
    if k == 0 || n == 0 || r == 0 || c == 0 || r > p || c > q {
        return Err(CliError::Usage(format!(
            "synthetic spec {spec:?} has invalid sizes"
        )));
    }
    let spec = SyntheticSpec::separated(k, (p, q, r, c), sep, scale, sigma2, n, seed);
    Ok(synth_generate(&spec)?.0)
}

/// Resolves the `data` descriptor into a sample set.
pub fn load_dataset(cfg: &RunConfig) -> Result<SampleSet, CliError> {
    let (scheme, rest) = cfg
        .data
        .split_once(':')
        .ok_or_else(|| CliError::Usage(format!("data must be SCHEME:ARGS, got {:?}", cfg.data)))?;
    let set = match scheme {
        "idx" => {
            let mut parts = rest.splitn(2, ',');
            let images = parts.next().unwrap_or_default();
            let labels = parts.next().map(Path::new);
            data::load_idx(Path::new(images), labels)?
        }
        "dir" => data::load_image_dir(
            Path::new(rest),
            &cfg.pattern,
            cfg.label_from_subdir,
            cfg.resize,
        )?,
        "manifest" => data::load_manifest(Path::new(rest), cfg.resize)?,
        "synthetic" => synthetic(rest)?,
        _ => {
            return Err(CliError::Usage(format!(
                "unknown data scheme {scheme:?} (idx, dir, manifest, synthetic)"
            )))
        }
    };
    Ok(match (scheme, cfg.resize) {
        ("idx" | "synthetic", Some((p, q))) => data::resize(&set, p, q),
        _ => set,
    })
}

/// Shortest representation that parses back to the same bits; large and
/// tiny magnitudes use exponent notation.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Comma-joined [`num`] values.
pub fn join_f64(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v:?}");
    }
    out
}
