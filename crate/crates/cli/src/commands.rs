use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{anyhow, Context};
use nrcid::dataset::{load_dataset, read_samples_file, write_atomic, write_dataset};
use nrcid::eval::{
    generate_synthetic, sweep_cells, sweep_csv, EvalProtocol, PreparedEvaluation, SweepRow,
    SyntheticSpec,
};
use nrcid::identity::{enroll, ParticipantModel, Registry};
use nrcid::signal::RawRecording;
use rayon::prelude::*;

use crate::config::{RunConfig, STORE_ENV};
use crate::exit::{fail, CliResult, Code, OrExit};

pub const CELLS_DIR: &str = "cells";
const SWEEP_CONFIG_FILE: &str = "sweep_config.txt";

fn write_out(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, text.as_bytes()).or_exit(Code::Config)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .or_exit(Code::Config)
}

pub fn synth(spec_path: Option<&Path>, out: &Path, seed: Option<u64>) -> CliResult<String> {
    let mut spec = match spec_path {
        Some(p) => read_synthetic_spec(p)?,
        None => SyntheticSpec::fixture(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let recs = generate_synthetic(&spec).or_exit(Code::Config)?;
    write_dataset(out, &recs).or_exit(Code::Config)?;
    Ok(format!(
        "wrote {} recordings ({} participants x {} sessions, seed {}) to {}",
        recs.len(),
        spec.participants.len(),
        spec.sessions,
        spec.seed,
        out.display()
    ))
}

pub fn read_synthetic_spec(path: &Path) -> CliResult<SyntheticSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .or_exit(Code::Config)?;
    toml::from_str(&text)
        .with_context(|| format!("invalid synthetic spec {}", path.display()))
        .or_exit(Code::Config)
}

pub fn synthetic_spec_toml(spec: &SyntheticSpec) -> CliResult<String> {
    toml::to_string(spec).or_exit(Code::Internal)
}

fn load(cfg: &RunConfig) -> CliResult<(f64, Vec<RawRecording>)> {
    let root = RunConfig::require(&cfg.dataset, "--dataset").or_exit(Code::Config)?;
    let (manifest, recs) = load_dataset(root).or_exit(Code::Dataset)?;
    Ok((manifest.rate_hz, recs))
}

fn sessions_of(recs: &[RawRecording]) -> BTreeSet<&str> {
    recs.iter().map(|r| r.session_id.as_str()).collect()
}

/// Training and test sessions: given ones, or else the last session in id
/// order is held out and the rest train.
fn split_sessions(cfg: &RunConfig, recs: &[RawRecording]) -> CliResult<(Vec<String>, String)> {
    let all = sessions_of(recs);
    let test = match (&cfg.test_session, &cfg.train_sessions) {
        (Some(t), _) => t.clone(),
        (None, Some(train)) => {
            let rest: Vec<&str> = all
                .iter()
                .copied()
                .filter(|s| !train.iter().any(|t| t == s))
                .collect();
            match rest.as_slice() {
                [one] => one.to_string(),
                _ => {
                    return Err(fail(
                        Code::Config,
                        anyhow!(
                            "--test-session is required: sessions outside training are {rest:?}"
                        ),
                    ))
                }
            }
        }
        (None, None) => all
            .iter()
            .next_back()
            .map(|s| s.to_string())
            .ok_or_else(|| fail(Code::Dataset, anyhow!("dataset has no sessions")))?,
    };
    let train = match &cfg.train_sessions {
        Some(t) => t.clone(),
        None => all
            .iter()
            .filter(|s| **s != test)
            .map(|s| s.to_string())
            .collect(),
    };
    if train.is_empty() {
        return Err(fail(
            Code::Dataset,
            anyhow!("no training sessions besides {test}"),
        ));
    }
    Ok((train, test))
}

pub fn enroll_cmd(cfg: &RunConfig) -> CliResult<String> {
    let store = cfg.store.clone().ok_or_else(|| {
        fail(
            Code::Config,
            anyhow!("invalid configuration:\n  - --store or {STORE_ENV} is required"),
        )
    })?;
    let (rate, recs) = load(cfg)?;
    let params = cfg.params().or_exit(Code::Config)?;
    let filter = cfg.filter(rate);
    filter.validate().or_exit(Code::Config)?;
    let qspec = cfg.qspec();

    let mut by_participant: BTreeMap<&str, BTreeMap<&str, &RawRecording>> = BTreeMap::new();
    for r in &recs {
        by_participant
            .entry(&r.participant_id)
            .or_default()
            .insert(&r.session_id, r);
    }
    let jobs: Vec<(&str, &BTreeMap<&str, &RawRecording>)> =
        by_participant.iter().map(|(p, s)| (*p, s)).collect();
    let results: Vec<(String, Result<ParticipantModel, String>)> = jobs
        .par_iter()
        .map(|(p, sessions)| {
            let chosen: Result<Vec<RawRecording>, String> = match &cfg.train_sessions {
                Some(names) => names
                    .iter()
                    .map(|n| {
                        sessions
                            .get(n.as_str())
                            .map(|r| (*r).clone())
                            .ok_or_else(|| format!("missing session {n}"))
                    })
                    .collect(),
                None => Ok(sessions.values().map(|r| (*r).clone()).collect()),
            };
            let model = chosen.and_then(|recs| {
                enroll(p, &recs, &params, &filter, &qspec).map_err(|e| e.to_string())
            });
            (p.to_string(), model)
        })
        .collect();

    let mut models = Vec::new();
    let mut failures = Vec::new();
    for (p, m) in results {
        match m {
            Ok(m) => models.push(m),
            Err(e) => failures.push(format!("{p}: {e}")),
        }
    }
    if models.is_empty() {
        return Err(fail(
            Code::Dataset,
            anyhow!(
                "no participant could be enrolled:\n  - {}",
                failures.join("\n  - ")
            ),
        ));
    }
    let count = models.len();
    let registry = Registry::new(models).or_exit(Code::Internal)?;
    registry.save_dir(&store).or_exit(Code::Store)?;
    if !failures.is_empty() {
        return Err(fail(
            Code::Dataset,
            anyhow!(
                "enrolled {count} participants into {}, but {} failed:\n  - {}",
                store.display(),
                failures.len(),
                failures.join("\n  - ")
            ),
        ));
    }
    Ok(format!(
        "enrolled {count} participants into {} (k={} d={} alphabet={} alpha={})",
        store.display(),
        params.k,
        params.d,
        params.alphabet_size,
        params.alpha
    ))
}

pub fn load_store(store: &Path) -> CliResult<Registry> {
    if !store.is_dir() {
        return Err(fail(
            Code::Store,
            anyhow!("model store {} does not exist", store.display()),
        ));
    }
    let registry = Registry::load_dir(store)
        .with_context(|| format!("cannot load model store {}", store.display()))
        .or_exit(Code::Store)?;
    if registry.is_empty() {
        return Err(fail(
            Code::Store,
            anyhow!("model store {} holds no models", store.display()),
        ));
    }
    Ok(registry)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

pub fn identify_cmd(store: &Path, segment: &Path, format: Format) -> CliResult<String> {
    let registry = load_store(store)?;
    let (header, samples) = read_samples_file(segment).or_exit(Code::Dataset)?;
    let rate = registry
        .filter()
        .map(|f| f.sample_rate_hz)
        .unwrap_or_default();
    if let Some(r) = header.rate_hz {
        if r != rate {
            return Err(fail(
                Code::Dataset,
                anyhow!(
                    "{} is sampled at {r} Hz but the store's models expect {rate} Hz",
                    segment.display()
                ),
            ));
        }
    }
    let result = registry
        .identify(&samples)
        .with_context(|| format!("cannot score {}", segment.display()))
        .or_exit(Code::Dataset)?;
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str("participant,nrc\n");
            for (id, nrc) in &result.scores {
                writeln!(out, "{id},{nrc}").unwrap();
            }
        }
        Format::Text => {
            writeln!(out, "predicted={}", result.predicted).unwrap();
            writeln!(out, "coded_symbols={}", result.coded_symbols).unwrap();
            for (rank, (id, nrc)) in result.scores.iter().enumerate() {
                writeln!(out, "{:>3}. {id} {nrc:.6}", rank + 1).unwrap();
            }
        }
    }
    Ok(out.trim_end().to_string())
}

fn prepare(cfg: &RunConfig) -> CliResult<PreparedEvaluation> {
    let (rate, recs) = load(cfg)?;
    let (train_sessions, test_session) = split_sessions(cfg, &recs)?;
    let filter = cfg.filter(rate);
    filter.validate().or_exit(Code::Config)?;
    // For sweeps the first cell stands in; every cell is validated on its own.
    let params = nrcid::xafcm::ModelParams {
        k: cfg.k[0],
        d: cfg.d[0],
        alphabet_size: cfg.alphabet,
        alpha: cfg.alpha,
    };
    let protocol = EvalProtocol {
        train_sessions,
        test_session,
        segment_seconds: cfg.segment_seconds,
        params,
        filter,
        qspec: cfg.qspec(),
    };
    PreparedEvaluation::new(&recs, &protocol).map_err(|e| {
        let code = match e {
            nrcid::Error::InvalidSpec(_) | nrcid::Error::Capacity(_) => Code::Config,
            _ => Code::Dataset,
        };
        fail(code, e)
    })
}

fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    Ok(RunConfig::require(&cfg.out, "--out")
        .or_exit(Code::Config)?
        .to_path_buf())
}

pub fn evaluate_cmd(cfg: &RunConfig) -> CliResult<String> {
    let out = out_dir(cfg)?;
    let params = cfg.params().or_exit(Code::Config)?;
    let prepared = prepare(cfg)?;
    let report = prepared.run(&params).or_exit(Code::Dataset)?;
    create_dir(&out)?;
    report.write_to(&out).or_exit(Code::Config)?;
    let row = SweepRow {
        k: params.k,
        d: params.d,
        outcome: Ok((report.accuracy(), report.macro_f1())),
        seconds: 0.0,
    };
    write_out(&out.join("sweep.csv"), &sweep_csv(&[row]))?;
    let mut summary = format!(
        "accuracy={:.4} macro_f1={:.4} segments={} participants={} -> {}",
        report.accuracy(),
        report.macro_f1(),
        report.confusion.total(),
        report.confusion.labels.len(),
        out.display()
    );
    if !report.failed_enrollments.is_empty() {
        let ids: Vec<&str> = report
            .failed_enrollments
            .iter()
            .map(|f| f.0.as_str())
            .collect();
        write!(summary, " (enrollment failed: {})", ids.join(", ")).unwrap();
    }
    Ok(summary)
}

fn marker_path(out: &Path, k: usize, d: usize) -> PathBuf {
    out.join(CELLS_DIR).join(format!("k{k}_d{d}.done"))
}

/// Everything a finished cell depends on, so a resume with other settings is
/// refused instead of mixing results.
fn sweep_fingerprint(p: &PreparedEvaluation) -> String {
    let pr = p.protocol();
    let mut s = String::new();
    writeln!(s, "train_sessions={}", pr.train_sessions.join(",")).unwrap();
    writeln!(s, "test_session={}", pr.test_session).unwrap();
    writeln!(s, "segment_seconds={}", pr.segment_seconds).unwrap();
    writeln!(s, "alphabet={}", pr.params.alphabet_size).unwrap();
    writeln!(s, "alpha={}", pr.params.alpha).unwrap();
    writeln!(
        s,
        "filter={} {} {} {}",
        pr.filter.order,
        pr.filter.cutoff_hz,
        pr.filter.sample_rate_hz,
        pr.filter.phase.as_str()
    )
    .unwrap();
    writeln!(
        s,
        "quantizer={} {}",
        pr.qspec.max_iterations, pr.qspec.tolerance
    )
    .unwrap();
    s
}

fn parse_marker(text: &str, k: usize, d: usize) -> Option<SweepRow> {
    let line = text.lines().next()?;
    let mut f = line.splitn(5, ',');
    let (mk, md) = (
        f.next()?.parse::<usize>().ok()?,
        f.next()?.parse::<usize>().ok()?,
    );
    if (mk, md) != (k, d) {
        return None;
    }
    let (acc, f1, status) = (f.next()?, f.next()?, f.next()?);
    let outcome = if status == "ok" {
        Ok((acc.parse().ok()?, f1.parse().ok()?))
    } else {
        Err(status.strip_prefix("failed: ")?.to_string())
    };
    Some(SweepRow {
        k,
        d,
        outcome,
        seconds: f64::NAN,
    })
}

pub fn sweep_cmd(cfg: &RunConfig, resume: bool) -> CliResult<String> {
    let out = out_dir(cfg)?;
    let prepared = prepare(cfg)?;
    let cells = sweep_cells(&cfg.k, &cfg.d);
    create_dir(&out.join(CELLS_DIR))?;

    let fingerprint = sweep_fingerprint(&prepared);
    let fp_path = out.join(SWEEP_CONFIG_FILE);
    let mut done: BTreeMap<(usize, usize), SweepRow> = BTreeMap::new();
    if resume {
        if let Ok(previous) = std::fs::read_to_string(&fp_path) {
            if previous != fingerprint {
                return Err(fail(
                    Code::Config,
                    anyhow!(
                        "cannot resume: {} was written with different settings",
                        out.display()
                    ),
                ));
            }
        }
        for &(k, d) in &cells {
            if let Ok(text) = std::fs::read_to_string(marker_path(&out, k, d)) {
                if let Some(row) = parse_marker(&text, k, d) {
                    done.insert((k, d), row);
                }
            }
        }
    } else {
        for &(k, d) in &cells {
            let _ = std::fs::remove_file(marker_path(&out, k, d));
        }
    }
    write_out(&fp_path, &fingerprint)?;

    // Duplicated cells are computed once and reported in every position.
    let todo: Vec<(usize, usize)> = cells
        .iter()
        .copied()
        .filter(|c| !done.contains_key(c))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let marker_errors = Mutex::new(Vec::new());
    let fresh = prepared.sweep_with(&todo, |row| {
        if let Err(e) = write_atomic(
            &marker_path(&out, row.k, row.d),
            format!("{}\n", row.csv_line()).as_bytes(),
        ) {
            marker_errors.lock().unwrap().push(e.to_string());
        }
    });
    if let Some(e) = marker_errors.into_inner().unwrap().into_iter().next() {
        return Err(fail(Code::Config, anyhow!("cannot write cell marker: {e}")));
    }
    let resumed = done.len();
    for row in fresh {
        done.insert((row.k, row.d), row);
    }

    let rows: Vec<SweepRow> = cells.iter().map(|c| done[c].clone()).collect();
    write_out(&out.join("sweep.csv"), &sweep_csv(&rows))?;
    let mut timing = String::from("k,d,seconds\n");
    for r in &rows {
        if r.seconds.is_nan() {
            writeln!(timing, "{},{},resumed", r.k, r.d).unwrap();
        } else {
            writeln!(timing, "{},{},{:.3}", r.k, r.d, r.seconds).unwrap();
        }
    }
    write_out(&out.join("timing.csv"), &timing)?;

    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    let best = rows
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|o| (o.0, r.k, r.d)))
        .fold(None, |b: Option<(f64, usize, usize)>, c| match b {
            Some(b) if b.0 >= c.0 => Some(b),
            _ => Some(c),
        });
    let mut summary = format!("{} cells ({resumed} resumed, {failed} failed)", rows.len());
    if let Some((acc, k, d)) = best {
        write!(summary, ", best accuracy={acc:.4} at k={k} d={d}").unwrap();
    }
    write!(summary, " -> {}", out.display()).unwrap();
    Ok(summary)
}

pub fn inspect_cmd(path: &Path) -> CliResult<String> {
    let m = ParticipantModel::load(path)
        .with_context(|| format!("cannot read model {}", path.display()))
        .or_exit(Code::Store)?;
    let p = m.params();
    let f = m.filter();
    let cb = m.codebook();
    let counts = m.model().counts();
    let mut out = String::new();
    writeln!(out, "participant_id={}", m.participant_id()).unwrap();
    writeln!(out, "k={}", p.k).unwrap();
    writeln!(out, "d={}", p.d).unwrap();
    writeln!(out, "alphabet={}", p.alphabet_size).unwrap();
    writeln!(out, "alpha={} ({})", p.alpha, m.model().alpha()).unwrap();
    writeln!(out, "contexts={}", counts.len()).unwrap();
    writeln!(out, "total_events={}", counts.total_events()).unwrap();
    writeln!(out, "trained_symbols={}", m.model().trained_symbols()).unwrap();
    let levels = cb.levels();
    writeln!(
        out,
        "codebook_levels={}..{}",
        levels[0],
        levels[levels.len() - 1]
    )
    .unwrap();
    let bps = cb.breakpoints();
    writeln!(
        out,
        "codebook_breakpoints={}..{}",
        bps[0],
        bps[bps.len() - 1]
    )
    .unwrap();
    writeln!(
        out,
        "filter=order {} cutoff {} Hz {} at {} Hz",
        f.order,
        f.cutoff_hz,
        f.phase.as_str(),
        f.sample_rate_hz
    )
    .unwrap();
    let sessions: Vec<String> = m
        .provenance()
        .iter()
        .map(|(s, n)| format!("{s}:{n}"))
        .collect();
    writeln!(
        out,
        "sessions={}",
        if sessions.is_empty() {
            "none".into()
        } else {
            sessions.join(",")
        }
    )
    .unwrap();
    Ok(out.trim_end().to_string())
}
