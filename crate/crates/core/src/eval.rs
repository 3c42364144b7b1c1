//! Session-holdout evaluation, classification metrics, `(k, d)` sweeps and a
//! seeded synthetic dataset generator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::identity::{derivatives, IdentificationResult, Registry, TrainingSet};
use crate::quantizer::QuantizerSpec;
use crate::signal::{segment, Filter, FilterSpec, RawRecording};
use crate::xafcm::ModelParams;

pub mod synthetic;

pub use synthetic::{generate_synthetic, GeneratorParams, SyntheticSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalProtocol {
    pub train_sessions: Vec<String>,
    pub test_session: String,
    pub segment_seconds: f64,
    pub params: ModelParams,
    pub filter: FilterSpec,
    pub qspec: QuantizerSpec,
}

impl EvalProtocol {
    pub const DEFAULT_SEGMENT_SECONDS: f64 = 10.0;

    pub fn validate(&self) -> Result<()> {
        if self.train_sessions.is_empty() {
            return Err(Error::InvalidSpec("no training sessions given".into()));
        }
        if self.train_sessions.contains(&self.test_session) {
            return Err(Error::InvalidSpec(format!(
                "test session {} is also a training session",
                self.test_session
            )));
        }
        if !(self.segment_seconds > 0.0 && self.segment_seconds.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "segment length must be positive, got {}",
                self.segment_seconds
            )));
        }
        self.params.validate()?;
        self.filter.validate()?;
        self.qspec.validate()?;
        if self.params.alphabet_size != self.qspec.alphabet_size {
            return Err(Error::InvalidSpec(format!(
                "model alphabet {} differs from quantizer alphabet {}",
                self.params.alphabet_size, self.qspec.alphabet_size
            )));
        }
        Ok(())
    }

    pub fn with_params(&self, params: ModelParams) -> Self {
        EvalProtocol {
            params,
            ..self.clone()
        }
    }
}

/// Rows are true identities, columns predicted identities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != labels.len() || counts.iter().any(|r| r.len() != labels.len()) {
            return Err(Error::InvalidInput(
                "confusion matrix must be square".into(),
            ));
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn record(&mut self, truth: &str, predicted: &str) -> Result<()> {
        let (t, p) = self
            .index(truth)
            .zip(self.index(predicted))
            .ok_or_else(|| Error::InvalidInput(format!("unknown label {truth} or {predicted}")))?;
        self.counts[t][p] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for l in &self.labels {
            write!(out, ",{l}").unwrap();
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                write!(out, ",{c}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Mean F1 over classes with non-zero support.
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// One-vs-rest precision/recall/F1 per class. A class never predicted has
/// precision 0.
pub fn metrics(confusion: &ConfusionMatrix) -> Result<Metrics> {
    let total = confusion.total();
    if confusion.labels.is_empty() || total == 0 {
        return Err(Error::InvalidInput("confusion matrix is empty".into()));
    }
    let n = confusion.labels.len();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|i| {
            let tp = confusion.counts[i][i] as f64;
            let support = confusion.row_sum(i);
            let predicted: u64 = (0..n).map(|r| confusion.counts[r][i]).sum();
            let precision = if predicted == 0 {
                0.0
            } else {
                tp / predicted as f64
            };
            let recall = if support == 0 {
                0.0
            } else {
                tp / support as f64
            };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: confusion.labels[i].clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let supported: Vec<f64> = per_class
        .iter()
        .filter(|c| c.support > 0)
        .map(|c| c.f1)
        .collect();
    let accuracy = confusion.trace() as f64 / total as f64;
    Ok(Metrics {
        accuracy,
        macro_f1: supported.iter().sum::<f64>() / supported.len() as f64,
        // Single-label classification: micro precision = micro recall = accuracy.
        micro_f1: accuracy,
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutcome {
    pub true_id: String,
    pub segment_index: usize,
    pub result: IdentificationResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub params: ModelParams,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub per_segment: Vec<SegmentOutcome>,
    /// Participants excluded because enrollment failed, with the reason.
    pub failed_enrollments: Vec<(String, String)>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.metrics.accuracy
    }

    pub fn macro_f1(&self) -> f64 {
        self.metrics.macro_f1
    }

    pub fn metrics_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        writeln!(out, "accuracy={}", self.metrics.accuracy).unwrap();
        writeln!(out, "macro_f1={}", self.metrics.macro_f1).unwrap();
        writeln!(out, "micro_f1={}", self.metrics.micro_f1).unwrap();
        writeln!(out, "segments={}", self.confusion.total()).unwrap();
        writeln!(out, "participants={}", self.confusion.labels.len()).unwrap();
        writeln!(out, "k={}", p.k).unwrap();
        writeln!(out, "d={}", p.d).unwrap();
        writeln!(out, "alphabet={}", p.alphabet_size).unwrap();
        writeln!(out, "alpha={}", p.alpha).unwrap();
        let failed: Vec<&str> = self
            .failed_enrollments
            .iter()
            .map(|f| f.0.as_str())
            .collect();
        writeln!(
            out,
            "failed_enrollments={}",
            if failed.is_empty() {
                "none".to_string()
            } else {
                failed.join(";")
            }
        )
        .unwrap();
        for (id, reason) in &self.failed_enrollments {
            writeln!(out, "failed_enrollment.{id}={}", reason.replace('\n', " ")).unwrap();
        }
        for c in &self.metrics.per_class {
            writeln!(
                out,
                "class.{}=precision:{} recall:{} f1:{} support:{}",
                c.label, c.precision, c.recall, c.f1, c.support
            )
            .unwrap();
        }
        out
    }

    pub fn per_segment_csv(&self) -> String {
        let mut out = String::from(
            "true_id,segment,predicted_id,rank1_id,rank1_nrc,rank2_id,rank2_nrc,rank3_id,rank3_nrc\n",
        );
        for s in &self.per_segment {
            write!(
                out,
                "{},{},{}",
                s.true_id, s.segment_index, s.result.predicted
            )
            .unwrap();
            for rank in 0..3 {
                match s.result.scores.get(rank) {
                    Some((id, nrc)) => write!(out, ",{id},{nrc}").unwrap(),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Writes `confusion.csv`, `metrics.txt` and `per_segment.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(
            &dir.join("confusion.csv"),
            self.confusion.to_csv().as_bytes(),
        )?;
        write_atomic(&dir.join("metrics.txt"), self.metrics_text().as_bytes())?;
        write_atomic(
            &dir.join("per_segment.csv"),
            self.per_segment_csv().as_bytes(),
        )
    }
}

/// Everything of an evaluation that does not depend on `(k, d)`: codebooks,
/// quantized training strings and filtered test segments.
pub struct PreparedEvaluation {
    protocol: EvalProtocol,
    training: Vec<(String, std::result::Result<TrainingSet, String>)>,
    /// Filtered derivatives of each test segment per participant.
    tests: BTreeMap<String, Vec<Vec<f64>>>,
}

impl PreparedEvaluation {
    pub fn new(dataset: &[RawRecording], protocol: &EvalProtocol) -> Result<Self> {
        protocol.validate()?;
        let rate = protocol.filter.sample_rate_hz;
        let mut index: BTreeMap<&str, BTreeMap<&str, &RawRecording>> = BTreeMap::new();
        for r in dataset {
            if r.sample_rate_hz != rate {
                return Err(Error::InvalidDataset(format!(
                    "recording {}/{} sampled at {} Hz, protocol expects {rate} Hz",
                    r.participant_id, r.session_id, r.sample_rate_hz
                )));
            }
            let sessions = index.entry(&r.participant_id).or_default();
            if sessions.insert(&r.session_id, r).is_some() {
                return Err(Error::InvalidDataset(format!(
                    "duplicate recording {}/{}",
                    r.participant_id, r.session_id
                )));
            }
        }
        if index.is_empty() {
            return Err(Error::InvalidDataset("dataset is empty".into()));
        }
        let mut missing = Vec::new();
        for (p, sessions) in &index {
            for s in protocol
                .train_sessions
                .iter()
                .chain([&protocol.test_session])
            {
                if !sessions.contains_key(s.as_str()) {
                    missing.push(format!("{p}/{s}"));
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::InvalidDataset(format!(
                "missing sessions: {}",
                missing.join(", ")
            )));
        }

        let filter = Filter::new(&protocol.filter)?;
        let participants: Vec<(&str, &BTreeMap<&str, &RawRecording>)> =
            index.iter().map(|(p, s)| (*p, s)).collect();
        let training = participants
            .par_iter()
            .map(|(p, sessions)| {
                let recs: Vec<RawRecording> = protocol
                    .train_sessions
                    .iter()
                    .map(|s| (*sessions[s.as_str()]).clone())
                    .collect();
                let prepared = TrainingSet::prepare(p, &recs, &protocol.filter, &protocol.qspec)
                    .map_err(|e| e.to_string());
                (p.to_string(), prepared)
            })
            .collect();
        let window = crate::signal::window_len(protocol.segment_seconds, rate)?;
        let tests = participants
            .par_iter()
            .map(|(p, sessions)| {
                let rec = sessions[protocol.test_session.as_str()];
                let segs = segment(&rec.samples, protocol.segment_seconds, rate)?
                    .into_iter()
                    .map(|s| derivatives(&filter, s))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| {
                        Error::InvalidDataset(format!(
                            "test segments of {p} ({window} samples): {e}"
                        ))
                    })?;
                Ok((p.to_string(), segs))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(PreparedEvaluation {
            protocol: protocol.clone(),
            training,
            tests,
        })
    }

    pub fn protocol(&self) -> &EvalProtocol {
        &self.protocol
    }

    /// Test segments per participant, in participant order.
    pub fn segment_counts(&self) -> Vec<(String, usize)> {
        self.tests
            .iter()
            .map(|(p, s)| (p.clone(), s.len()))
            .collect()
    }

    /// Learns one model per participant with `params` and identifies every test segment.
    pub fn run(&self, params: &ModelParams) -> Result<EvalReport> {
        params.validate()?;
        let learned: Vec<(String, std::result::Result<_, String>)> = self
            .training
            .par_iter()
            .map(|(p, t)| {
                let model = match t {
                    Ok(t) => t.learn(params).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                };
                (p.clone(), model)
            })
            .collect();
        let mut models = Vec::new();
        let mut failed = Vec::new();
        for (p, m) in learned {
            match m {
                Ok(m) => models.push(m),
                Err(e) => failed.push((p, e)),
            }
        }
        if models.is_empty() {
            return Err(Error::InvalidDataset(format!(
                "no participant could be enrolled: {}",
                failed
                    .iter()
                    .map(|(p, e)| format!("{p}: {e}"))
                    .collect::<Vec<_>>()
                    .join("; ")
            )));
        }
        let registry = Registry::new(models)?;

        let jobs: Vec<(&str, usize, &[f64])> = registry
            .ids()
            .flat_map(|p| {
                self.tests[p]
                    .iter()
                    .enumerate()
                    .map(move |(i, d)| (p, i, d.as_slice()))
            })
            .collect();
        let per_segment = jobs
            .par_iter()
            .map(|&(p, i, d)| {
                Ok(SegmentOutcome {
                    true_id: p.to_string(),
                    segment_index: i,
                    result: registry.identify_derivatives(d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut confusion = ConfusionMatrix::new(registry.ids().map(String::from).collect());
        for s in &per_segment {
            confusion.record(&s.true_id, &s.result.predicted)?;
        }
        let metrics = metrics(&confusion)?;
        Ok(EvalReport {
            params: *params,
            confusion,
            metrics,
            per_segment,
            failed_enrollments: failed,
        })
    }
}

/// Enrolls every participant on the training sessions and identifies each
/// test-session segment.
pub fn evaluate(dataset: &[RawRecording], protocol: &EvalProtocol) -> Result<EvalReport> {
    PreparedEvaluation::new(dataset, protocol)?.run(&protocol.params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub d: usize,
    /// `(accuracy, macro_f1)` or the failure message.
    pub outcome: std::result::Result<(f64, f64), String>,
    pub seconds: f64,
}

impl SweepRow {
    /// `k,d,accuracy,macro_f1,status` line (no timing, so it is reproducible).
    pub fn csv_line(&self) -> String {
        match &self.outcome {
            Ok((acc, f1)) => format!("{},{},{acc},{f1},ok", self.k, self.d),
            Err(e) => format!(
                "{},{},,,failed: {}",
                self.k,
                self.d,
                e.replace([',', '\n'], " ")
            ),
        }
    }
}

pub const SWEEP_CSV_HEADER: &str = "k,d,accuracy,macro_f1,status";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

pub fn timing_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("k,d,seconds\n");
    for r in rows {
        writeln!(out, "{},{},{:.3}", r.k, r.d, r.seconds).unwrap();
    }
    out
}

/// All `(k, d)` cells, `k` outermost.
pub fn sweep_cells(k_values: &[usize], d_values: &[usize]) -> Vec<(usize, usize)> {
    k_values
        .iter()
        .flat_map(|&k| d_values.iter().map(move |&d| (k, d)))
        .collect()
}

impl PreparedEvaluation {
    /// Runs the given cells in parallel; `on_done` sees each finished row.
    /// Rows come back in `cells` order whatever the scheduling.
    pub fn sweep_with<F>(&self, cells: &[(usize, usize)], on_done: F) -> Vec<SweepRow>
    where
        F: Fn(&SweepRow) + Sync,
    {
        cells
            .par_iter()
            .map(|&(k, d)| {
                let start = Instant::now();
                let outcome = ModelParams::new(
                    k,
                    d,
                    self.protocol.params.alphabet_size,
                    self.protocol.params.alpha,
                )
                .and_then(|p| self.run(&p))
                .map(|r| (r.metrics.accuracy, r.metrics.macro_f1))
                .map_err(|e| e.to_string());
                let row = SweepRow {
                    k,
                    d,
                    outcome,
                    seconds: start.elapsed().as_secs_f64(),
                };
                on_done(&row);
                row
            })
            .collect()
    }
}

/// One evaluation per `(k, d)` pair, reusing codebooks across cells.
pub fn sweep(
    dataset: &[RawRecording],
    template: &EvalProtocol,
    k_values: &[usize],
    d_values: &[usize],
) -> Result<Vec<SweepRow>> {
    if k_values.is_empty() || d_values.is_empty() {
        return Err(Error::InvalidInput(
            "sweep needs at least one k and one d".into(),
        ));
    }
    let prepared = PreparedEvaluation::new(dataset, template)?;
    Ok(prepared.sweep_with(&sweep_cells(k_values, d_values), |_| {}))
}
