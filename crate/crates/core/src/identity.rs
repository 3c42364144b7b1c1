//! Enrollment, normalized relative compression scoring and closed-set
//! identification over a registry of participant models.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::write_atomic;
use crate::error::{DecodeError, DecodeErrorKind, Error, Result};
use crate::quantizer::{quantize, train_lloyd_max, Codebook, QuantizerSpec, SymbolString};
use crate::signal::{differentiate, Filter, FilterPhase, FilterSpec, RawRecording};
use crate::xafcm::{verify_checksum, ModelParams, XaModel};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const MODEL_EXTENSION: &str = "model";

/// Identifiers end up in file names and line-oriented files.
pub fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "identifier {id:?} must be non-empty ASCII alphanumerics, '_', '-' or '.'"
        )))
    }
}

/// Filtered first differences of a raw signal.
pub fn derivatives(filter: &Filter, samples: &[f64]) -> Result<Vec<f64>> {
    Ok(differentiate(&filter.apply(samples)?)?.values)
}

/// Quantized training data of one participant. Independent of `(k, d)`, so a
/// parameter sweep can reuse it for every cell.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub participant_id: String,
    pub filter: FilterSpec,
    pub qspec: QuantizerSpec,
    pub codebook: Codebook,
    pub symbols: SymbolString,
    pub provenance: Vec<(String, usize)>,
}

impl TrainingSet {
    /// Filters and differentiates each session, concatenates the derivatives
    /// in the given order, trains the codebook on them and quantizes.
    pub fn prepare(
        participant_id: &str,
        recordings: &[RawRecording],
        filter: &FilterSpec,
        qspec: &QuantizerSpec,
    ) -> Result<Self> {
        validate_id(participant_id)?;
        if recordings.is_empty() {
            return Err(Error::InvalidDataset(format!(
                "no training recordings for {participant_id}"
            )));
        }
        for r in recordings {
            if r.participant_id != participant_id {
                return Err(Error::InvalidDataset(format!(
                    "recording {}/{} passed to enrollment of {participant_id}",
                    r.participant_id, r.session_id
                )));
            }
            if r.sample_rate_hz != filter.sample_rate_hz {
                return Err(Error::InvalidDataset(format!(
                    "recording {}/{} sampled at {} Hz, expected {} Hz",
                    r.participant_id, r.session_id, r.sample_rate_hz, filter.sample_rate_hz
                )));
            }
        }
        let designed = Filter::new(filter)?;
        let mut all = Vec::new();
        let mut provenance = Vec::with_capacity(recordings.len());
        for r in recordings {
            let d = derivatives(&designed, &r.samples)?;
            provenance.push((r.session_id.clone(), d.len()));
            all.extend(d);
        }
        let codebook = train_lloyd_max(&all, qspec)?;
        let symbols = quantize(&codebook, &all);
        Ok(TrainingSet {
            participant_id: participant_id.to_string(),
            filter: *filter,
            qspec: *qspec,
            codebook,
            symbols,
            provenance,
        })
    }

    pub fn learn(&self, params: &ModelParams) -> Result<ParticipantModel> {
        if params.alphabet_size != self.codebook.alphabet_size() {
            return Err(Error::InvalidSpec(format!(
                "model alphabet {} differs from codebook alphabet {}",
                params.alphabet_size,
                self.codebook.alphabet_size()
            )));
        }
        let need = params.k.max(params.d);
        if self.symbols.len() < need {
            return Err(Error::InvalidInput(format!(
                "{} training symbols for {}; need at least max(k, d) = {need}",
                self.symbols.len(),
                self.participant_id
            )));
        }
        let mut model = XaModel::new(*params)?;
        model.learn(&self.symbols)?;
        Ok(ParticipantModel {
            participant_id: self.participant_id.clone(),
            filter: self.filter,
            qspec: self.qspec,
            codebook: self.codebook.clone(),
            model,
            provenance: self.provenance.clone(),
        })
    }
}

/// Full enrollment pipeline for one participant.
pub fn enroll(
    participant_id: &str,
    recordings: &[RawRecording],
    params: &ModelParams,
    filter: &FilterSpec,
    qspec: &QuantizerSpec,
) -> Result<ParticipantModel> {
    params.validate()?;
    TrainingSet::prepare(participant_id, recordings, filter, qspec)?.learn(params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NrcScore {
    pub nrc: f64,
    pub coded_symbols: usize,
}

/// Enrollment artifact: identity, codebook and frozen model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantModel {
    participant_id: String,
    filter: FilterSpec,
    qspec: QuantizerSpec,
    codebook: Codebook,
    model: XaModel,
    provenance: Vec<(String, usize)>,
}

impl ParticipantModel {
    /// Assembles a model from parts, e.g. a hand-built model for tests.
    pub fn from_parts(
        participant_id: &str,
        filter: FilterSpec,
        qspec: QuantizerSpec,
        codebook: Codebook,
        model: XaModel,
        provenance: Vec<(String, usize)>,
    ) -> Result<Self> {
        validate_id(participant_id)?;
        filter.validate()?;
        if codebook.alphabet_size() != model.params().alphabet_size {
            return Err(Error::InvalidSpec(format!(
                "codebook alphabet {} differs from model alphabet {}",
                codebook.alphabet_size(),
                model.params().alphabet_size
            )));
        }
        Ok(ParticipantModel {
            participant_id: participant_id.to_string(),
            filter,
            qspec,
            codebook,
            model,
            provenance,
        })
    }

    pub fn participant_id(&self) -> &str {
        &self.participant_id
    }

    pub fn filter(&self) -> &FilterSpec {
        &self.filter
    }

    pub fn quantizer_spec(&self) -> &QuantizerSpec {
        &self.qspec
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn model(&self) -> &XaModel {
        &self.model
    }

    pub fn params(&self) -> &ModelParams {
        self.model.params()
    }

    pub fn provenance(&self) -> &[(String, usize)] {
        &self.provenance
    }

    /// NRC of an already filtered and differentiated segment.
    pub fn nrc_of_derivatives(&self, derivatives: &[f64]) -> Result<NrcScore> {
        let x = quantize(&self.codebook, derivatives);
        let c = self.model.compress_bits(&x)?;
        Ok(NrcScore {
            nrc: c.normalized(),
            coded_symbols: c.coded_symbols,
        })
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        out.push_str("[meta]\n");
        writeln!(out, "participant_id={}", self.participant_id).unwrap();
        writeln!(out, "format_version={MODEL_FORMAT_VERSION}").unwrap();
        writeln!(out, "sample_rate_hz={}", self.filter.sample_rate_hz).unwrap();
        writeln!(out, "filter_order={}", self.filter.order).unwrap();
        writeln!(out, "filter_cutoff_hz={}", self.filter.cutoff_hz).unwrap();
        writeln!(out, "filter_phase={}", self.filter.phase.as_str()).unwrap();
        writeln!(
            out,
            "quantizer_max_iterations={}",
            self.qspec.max_iterations
        )
        .unwrap();
        writeln!(out, "quantizer_tolerance={}", self.qspec.tolerance).unwrap();
        for (session, count) in &self.provenance {
            writeln!(out, "session={session}:{count}").unwrap();
        }
        out.push_str("[codebook]\n");
        self.codebook.write_text(&mut out);
        out.push_str("[model]\n");
        out.push_str(std::str::from_utf8(&self.model.serialize()).expect("model text is UTF-8"));
        out.push_str("[end]\n");
        let digest = hex::encode(Sha256::digest(out.as_bytes()));
        writeln!(out, "checksum={digest}").unwrap();
        out
    }

    pub fn from_file_str(text: &str) -> Result<Self, DecodeError> {
        let body = verify_checksum(text, 1)?;
        let lines: Vec<&str> = body.lines().collect();
        let find = |name: &str| lines.iter().position(|l| *l == name);
        let need = |name: &str| {
            find(name).ok_or_else(|| DecodeError::new(lines.len() + 1, DecodeErrorKind::Truncated))
        };
        if lines.first() != Some(&"[meta]") {
            return Err(DecodeError::malformed(1, "expected `[meta]`"));
        }
        let cb_at = need("[codebook]")?;
        let model_at = need("[model]")?;
        let end_at = need("[end]")?;
        if !(cb_at < model_at && model_at < end_at && end_at + 1 == lines.len()) {
            return Err(DecodeError::malformed(cb_at + 1, "sections out of order"));
        }

        let meta = Meta::parse(&lines[1..cb_at], 2)?;
        let codebook = Codebook::parse_text(&lines[cb_at + 1..model_at], cb_at + 2)?;
        if model_at - cb_at != 4 {
            return Err(DecodeError::malformed(
                cb_at + 5,
                "extra lines in [codebook]",
            ));
        }
        let mut model_text = lines[model_at + 1..end_at].join("\n");
        model_text.push('\n');
        let model = XaModel::from_checked_text(&model_text, model_at + 2)?;
        ParticipantModel::from_parts(
            &meta.participant_id,
            meta.filter,
            QuantizerSpec {
                alphabet_size: codebook.alphabet_size(),
                max_iterations: meta.max_iterations,
                tolerance: meta.tolerance,
            },
            codebook,
            model,
            meta.provenance,
        )
        .map_err(|e| DecodeError::malformed(1, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_file_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(text)
            .map_err(|e| Error::Decode(DecodeError::malformed(1, format!("not UTF-8: {e}"))))?;
        Ok(Self::from_file_str(&text)?)
    }
}

struct Meta {
    participant_id: String,
    filter: FilterSpec,
    max_iterations: usize,
    tolerance: f64,
    provenance: Vec<(String, usize)>,
}

impl Meta {
    fn parse(lines: &[&str], first_line: usize) -> Result<Self, DecodeError> {
        let mut fields: BTreeMap<&str, (&str, usize)> = BTreeMap::new();
        let mut provenance = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            let no = first_line + i;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| DecodeError::malformed(no, "expected key=value"))?;
            if key == "session" {
                let (s, c) = value
                    .rsplit_once(':')
                    .ok_or_else(|| DecodeError::malformed(no, "expected session=<id>:<count>"))?;
                let c = c
                    .parse()
                    .map_err(|_| DecodeError::malformed(no, "bad session symbol count"))?;
                provenance.push((s.to_string(), c));
            } else if fields.insert(key, (value, no)).is_some() {
                return Err(DecodeError::malformed(no, format!("duplicate key {key}")));
            }
        }
        let get = |key: &str| {
            fields.get(key).copied().ok_or_else(|| {
                DecodeError::malformed(first_line, format!("missing meta key {key}"))
            })
        };
        fn num<T: std::str::FromStr>((v, no): (&str, usize)) -> Result<T, DecodeError> {
            v.parse()
                .map_err(|_| DecodeError::malformed(no, format!("bad value {v:?}")))
        }
        let (version, vno) = get("format_version")?;
        if version != MODEL_FORMAT_VERSION.to_string() {
            return Err(DecodeError::new(
                vno,
                DecodeErrorKind::VersionMismatch {
                    expected: MODEL_FORMAT_VERSION.to_string(),
                    found: version.to_string(),
                },
            ));
        }
        let (phase, pno) = get("filter_phase")?;
        let phase = FilterPhase::parse(phase)
            .ok_or_else(|| DecodeError::malformed(pno, format!("bad filter phase {phase:?}")))?;
        let filter = FilterSpec {
            order: num(get("filter_order")?)?,
            cutoff_hz: num(get("filter_cutoff_hz")?)?,
            sample_rate_hz: num(get("sample_rate_hz")?)?,
            phase,
        };
        Ok(Meta {
            participant_id: get("participant_id")?.0.to_string(),
            filter,
            max_iterations: num(get("quantizer_max_iterations")?)?,
            tolerance: num(get("quantizer_tolerance")?)?,
            provenance,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationResult {
    pub predicted: String,
    /// Ascending by NRC; ties ordered by participant id.
    pub scores: Vec<(String, f64)>,
    pub coded_symbols: usize,
}

/// Enrolled models sharing one parameter set and one filter.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    models: BTreeMap<String, ParticipantModel>,
}

impl Registry {
    pub fn new(models: impl IntoIterator<Item = ParticipantModel>) -> Result<Self> {
        let mut map: BTreeMap<String, ParticipantModel> = BTreeMap::new();
        for m in models {
            if let Some(first) = map.values().next() {
                if first.params() != m.params() {
                    return Err(Error::InvalidState(format!(
                        "model {} has parameters {:?}, registry uses {:?}",
                        m.participant_id,
                        m.params(),
                        first.params()
                    )));
                }
                if first.filter != m.filter {
                    return Err(Error::InvalidState(format!(
                        "model {} uses filter {:?}, registry uses {:?}",
                        m.participant_id, m.filter, first.filter
                    )));
                }
            }
            let id = m.participant_id.clone();
            if map.insert(id.clone(), m).is_some() {
                return Err(Error::InvalidState(format!("duplicate participant {id}")));
            }
        }
        Ok(Registry { models: map })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn models(&self) -> impl Iterator<Item = &ParticipantModel> {
        self.models.values()
    }

    pub fn get(&self, id: &str) -> Option<&ParticipantModel> {
        self.models.get(id)
    }

    pub fn filter(&self) -> Option<&FilterSpec> {
        self.models.values().next().map(|m| &m.filter)
    }

    /// Scores a raw segment under every model and picks the minimum NRC.
    pub fn identify(&self, segment: &[f64]) -> Result<IdentificationResult> {
        let spec = self
            .filter()
            .ok_or_else(|| Error::InvalidState("registry is empty".into()))?;
        let d = derivatives(&Filter::new(spec)?, segment)?;
        self.identify_derivatives(&d)
    }

    /// As [`identify`](Self::identify) for an already filtered and
    /// differentiated segment.
    pub fn identify_derivatives(&self, derivatives: &[f64]) -> Result<IdentificationResult> {
        if self.models.is_empty() {
            return Err(Error::InvalidState("registry is empty".into()));
        }
        let scored: Vec<(String, NrcScore)> = self
            .models
            .par_iter()
            .map(|(id, m)| Ok((id.clone(), m.nrc_of_derivatives(derivatives)?)))
            .collect::<Result<_>>()?;
        let coded_symbols = scored[0].1.coded_symbols;
        let mut scores: Vec<(String, f64)> =
            scored.into_iter().map(|(id, s)| (id, s.nrc)).collect();
        // Stable sort keeps id order among equal scores.
        scores.sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(IdentificationResult {
            predicted: scores[0].0.clone(),
            scores,
            coded_symbols,
        })
    }

    /// Writes `<participant_id>.model` for every model.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for m in self.models.values() {
            m.save(&dir.join(format!("{}.{MODEL_EXTENSION}", m.participant_id)))?;
        }
        Ok(())
    }

    /// Loads every `*.model` file of a directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|e| e == MODEL_EXTENSION) && path.is_file() {
                paths.push(path);
            }
        }
        paths.sort();
        let models = paths
            .iter()
            .map(|p| ParticipantModel::load(p))
            .collect::<Result<Vec<_>>>()?;
        Registry::new(models)
    }
}

/// NRC of a raw segment under one participant model.
pub fn nrc(pm: &ParticipantModel, segment: &[f64]) -> Result<NrcScore> {
    let d = derivatives(&Filter::new(&pm.filter)?, segment)?;
    pm.nrc_of_derivatives(&d)
}

pub fn identify(registry: &Registry, segment: &[f64]) -> Result<IdentificationResult> {
    registry.identify(segment)
}
