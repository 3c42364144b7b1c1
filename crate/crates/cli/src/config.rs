//! Run configuration: command-line flags over an optional TOML file over
//! built-in defaults. Every violation is collected before reporting.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use nrcid::eval::EvalProtocol;
use nrcid::quantizer::{QuantizerSpec, MAX_ALPHABET};
use nrcid::signal::{FilterPhase, FilterSpec};
use nrcid::xafcm::{AlphaMode, ModelParams};
use serde::Deserialize;

pub const STORE_ENV: &str = "NRCID_STORE";

pub const DEFAULT_K: usize = 38;
pub const DEFAULT_D: usize = 2;
pub const DEFAULT_ALPHABET: usize = 17;
pub const DEFAULT_FILTER_ORDER: usize = 5;
pub const DEFAULT_CUTOFF_HZ: f64 = 30.0;

/// Model and preprocessing flags shared by the commands that train.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// TOML file with defaults for any of these settings.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Context order; sweeps take lists and ranges such as `1..10` or `1,4,8`.
    #[arg(long, value_name = "LIST")]
    pub k: Option<String>,
    /// Event depth; same syntax as `--k`.
    #[arg(long, value_name = "LIST")]
    pub d: Option<String>,
    /// Quantizer alphabet size.
    #[arg(long)]
    pub alphabet: Option<usize>,
    /// Smoothing: `auto` or a positive real.
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub segment_seconds: Option<f64>,
    #[arg(long)]
    pub cutoff_hz: Option<f64>,
    #[arg(long)]
    pub filter_order: Option<usize>,
    /// Single causal filter pass instead of forward-backward.
    #[arg(long)]
    pub causal: bool,
    /// Comma-separated training session ids.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub train_sessions: Option<Vec<String>>,
    #[arg(long)]
    pub test_session: Option<String>,
    /// Worker threads; never changes any output.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum IntList {
    One(usize),
    Many(Vec<usize>),
    Text(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum AlphaValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    k: Option<IntList>,
    d: Option<IntList>,
    alphabet: Option<usize>,
    alpha: Option<AlphaValue>,
    segment_seconds: Option<f64>,
    cutoff_hz: Option<f64>,
    filter_order: Option<usize>,
    filter_phase: Option<String>,
    train_sessions: Option<Vec<String>>,
    test_session: Option<String>,
    threads: Option<usize>,
    dataset: Option<PathBuf>,
    store: Option<PathBuf>,
    out: Option<PathBuf>,
}

/// Fully resolved settings. Filter sample rate comes from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub k: Vec<usize>,
    pub d: Vec<usize>,
    pub alphabet: usize,
    pub alpha: AlphaMode,
    pub segment_seconds: f64,
    pub cutoff_hz: f64,
    pub filter_order: usize,
    pub phase: FilterPhase,
    pub train_sessions: Option<Vec<String>>,
    pub test_session: Option<String>,
    pub threads: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Paths given on the command line; they beat the config file.
#[derive(Debug, Clone, Default)]
pub struct PathFlags {
    pub dataset: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Parses `3`, `1..10` (inclusive), `1,4,8` or mixtures like `1..3,8`.
pub fn parse_int_list(text: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim) {
        if part.is_empty() {
            return Err(format!("empty item in {text:?}"));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| format!("{s:?} is not a non-negative integer"))
        };
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
                if a > b {
                    return Err(format!("empty range {part:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    Ok(out)
}

fn read_file_config(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
}

impl RunConfig {
    /// Merges flags, file and defaults. `single_cell` requires exactly one
    /// `k` and one `d`. Returns one error listing every violation.
    pub fn resolve(args: &ModelArgs, paths: &PathFlags, single_cell: bool) -> anyhow::Result<Self> {
        let file = match &args.config {
            Some(p) => read_file_config(p)?,
            None => FileConfig::default(),
        };
        let mut errors: Vec<String> = Vec::new();

        let list = |name: &str,
                    flag: &Option<String>,
                    file: &Option<IntList>,
                    default: usize,
                    errors: &mut Vec<String>| {
            let parsed = match (flag, file) {
                (Some(s), _) => parse_int_list(s),
                (None, Some(IntList::One(v))) => Ok(vec![*v]),
                (None, Some(IntList::Many(v))) => Ok(v.clone()),
                (None, Some(IntList::Text(s))) => parse_int_list(s),
                (None, None) => Ok(vec![default]),
            };
            match parsed {
                Ok(v) if v.is_empty() => {
                    errors.push(format!("{name}: no values given"));
                    v
                }
                Ok(v) => {
                    if v.contains(&0) {
                        errors.push(format!("{name}: values must be positive"));
                    }
                    if single_cell && v.len() != 1 {
                        errors.push(format!("{name}: expected a single value, got {}", v.len()));
                    }
                    v
                }
                Err(e) => {
                    errors.push(format!("{name}: {e}"));
                    Vec::new()
                }
            }
        };
        let k = list("k", &args.k, &file.k, DEFAULT_K, &mut errors);
        let d = list("d", &args.d, &file.d, DEFAULT_D, &mut errors);

        let alphabet = args.alphabet.or(file.alphabet).unwrap_or(DEFAULT_ALPHABET);
        if !(2..=MAX_ALPHABET).contains(&alphabet) {
            errors.push(format!(
                "alphabet: must be in 2..={MAX_ALPHABET}, got {alphabet}"
            ));
        }

        let alpha_text = match (&args.alpha, &file.alpha) {
            (Some(s), _) => Some(s.clone()),
            (None, Some(AlphaValue::Text(s))) => Some(s.clone()),
            (None, Some(AlphaValue::Number(v))) => Some(v.to_string()),
            (None, None) => None,
        };
        let alpha = match alpha_text.as_deref() {
            None => AlphaMode::Auto,
            Some(s) => match AlphaMode::parse(s) {
                Some(AlphaMode::Fixed(a)) if !(a > 0.0 && a.is_finite()) => {
                    errors.push(format!("alpha: must be positive, got {s}"));
                    AlphaMode::Auto
                }
                Some(a) => a,
                None => {
                    errors.push(format!(
                        "alpha: expected `auto` or a positive real, got {s:?}"
                    ));
                    AlphaMode::Auto
                }
            },
        };

        let segment_seconds = args
            .segment_seconds
            .or(file.segment_seconds)
            .unwrap_or(EvalProtocol::DEFAULT_SEGMENT_SECONDS);
        if !(segment_seconds > 0.0 && segment_seconds.is_finite()) {
            errors.push(format!(
                "segment-seconds: must be positive, got {segment_seconds}"
            ));
        }
        let cutoff_hz = args
            .cutoff_hz
            .or(file.cutoff_hz)
            .unwrap_or(DEFAULT_CUTOFF_HZ);
        if !(cutoff_hz > 0.0 && cutoff_hz.is_finite()) {
            errors.push(format!("cutoff-hz: must be positive, got {cutoff_hz}"));
        }
        let filter_order = args
            .filter_order
            .or(file.filter_order)
            .unwrap_or(DEFAULT_FILTER_ORDER);
        if filter_order == 0 {
            errors.push("filter-order: must be positive".into());
        }
        let phase = if args.causal {
            FilterPhase::Causal
        } else {
            match file.filter_phase.as_deref() {
                None => FilterPhase::ZeroPhase,
                Some(s) => FilterPhase::parse(s).unwrap_or_else(|| {
                    errors.push(format!(
                        "filter_phase: expected `zero-phase` or `causal`, got {s:?}"
                    ));
                    FilterPhase::ZeroPhase
                }),
            }
        };

        let train_sessions = args.train_sessions.clone().or(file.train_sessions);
        let test_session = args.test_session.clone().or(file.test_session);
        if let Some(train) = &train_sessions {
            if train.is_empty() || train.iter().any(|s| s.is_empty()) {
                errors.push("train-sessions: empty session id".into());
            }
            if let Some(test) = &test_session {
                if train.contains(test) {
                    errors.push(format!("test-session {test} is also a training session"));
                }
            }
        }
        let threads = args.threads.or(file.threads);
        if threads == Some(0) {
            errors.push("threads: must be positive".into());
        }

        if single_cell && errors.is_empty() {
            if let Err(e) = ModelParams::new(k[0], d[0], alphabet, alpha) {
                errors.push(e.to_string());
            }
        }
        if !errors.is_empty() {
            bail!("invalid configuration:\n  - {}", errors.join("\n  - "));
        }

        let store = paths
            .store
            .clone()
            .or(file.store)
            .or_else(|| std::env::var_os(STORE_ENV).map(PathBuf::from));
        Ok(RunConfig {
            k,
            d,
            alphabet,
            alpha,
            segment_seconds,
            cutoff_hz,
            filter_order,
            phase,
            train_sessions,
            test_session,
            threads,
            dataset: paths.dataset.clone().or(file.dataset),
            store,
            out: paths.out.clone().or(file.out),
        })
    }

    pub fn params(&self) -> anyhow::Result<ModelParams> {
        Ok(ModelParams::new(
            self.k[0],
            self.d[0],
            self.alphabet,
            self.alpha,
        )?)
    }

    pub fn filter(&self, sample_rate_hz: f64) -> FilterSpec {
        FilterSpec::new(self.filter_order, self.cutoff_hz, sample_rate_hz).with_phase(self.phase)
    }

    pub fn qspec(&self) -> QuantizerSpec {
        QuantizerSpec::with_alphabet(self.alphabet)
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
        value
            .as_deref()
            .with_context(|| format!("invalid configuration:\n  - {flag} is required"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_lists() {
        assert_eq!(parse_int_list("3").unwrap(), vec![3]);
        assert_eq!(parse_int_list("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_int_list("1..=2, 7").unwrap(), vec![1, 2, 7]);
        assert_eq!(parse_int_list("2,2").unwrap(), vec![2, 2]);
        assert!(parse_int_list("4..1").is_err());
        assert!(parse_int_list("a").is_err());
        assert!(parse_int_list("1,,2").is_err());
        assert!(parse_int_list("-1").is_err());
    }

    #[test]
    fn defaults_are_the_reference_operating_point() {
        let c = RunConfig::resolve(&ModelArgs::default(), &PathFlags::default(), true).unwrap();
        assert_eq!(
            (c.k.as_slice(), c.d.as_slice(), c.alphabet),
            (&[38][..], &[2][..], 17)
        );
        assert_eq!(c.alpha, AlphaMode::Auto);
        assert_eq!(
            (c.filter_order, c.cutoff_hz, c.segment_seconds),
            (5, 30.0, 10.0)
        );
        assert_eq!(c.phase, FilterPhase::ZeroPhase);
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "k = 5\nd = 3\nalphabet = 9\nalpha = 0.5\ncutoff_hz = 40.0\n",
        )
        .unwrap();
        let args = ModelArgs {
            config: Some(path),
            k: Some("7".into()),
            ..Default::default()
        };
        let c = RunConfig::resolve(&args, &PathFlags::default(), true).unwrap();
        assert_eq!((c.k[0], c.d[0], c.alphabet), (7, 3, 9));
        assert_eq!(c.alpha, AlphaMode::Fixed(0.5));
        assert_eq!((c.cutoff_hz, c.filter_order), (40.0, 5));
    }

    #[test]
    fn every_violation_is_reported_at_once() {
        let args = ModelArgs {
            k: Some("0".into()),
            alphabet: Some(40),
            alpha: Some("-1".into()),
            segment_seconds: Some(0.0),
            threads: Some(0),
            ..Default::default()
        };
        let msg = RunConfig::resolve(&args, &PathFlags::default(), true)
            .unwrap_err()
            .to_string();
        for needle in ["k:", "alphabet:", "alpha:", "segment-seconds:", "threads:"] {
            assert!(msg.contains(needle), "{needle} missing from {msg}");
        }
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "kk = 5\n").unwrap();
        let args = ModelArgs {
            config: Some(path),
            ..Default::default()
        };
        assert!(RunConfig::resolve(&args, &PathFlags::default(), false).is_err());
    }

    #[test]
    fn sweep_lists_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "k = \"1..3\"\nd = [1, 2]\n").unwrap();
        let args = ModelArgs {
            config: Some(path),
            ..Default::default()
        };
        let c = RunConfig::resolve(&args, &PathFlags::default(), false).unwrap();
        assert_eq!(c.k, vec![1, 2, 3]);
        assert_eq!(c.d, vec![1, 2]);
        assert!(RunConfig::resolve(&args, &PathFlags::default(), true).is_err());
    }
}
