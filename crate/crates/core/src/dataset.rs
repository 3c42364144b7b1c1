//! On-disk recordings: single-recording CSV files and the dataset directory
//! layout `<root>/<participant>/<session>.csv` with a `manifest.txt` holding
//! `rate_hz=<real>`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::identity::validate_id;
use crate::signal::RawRecording;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Metadata from an optional `# participant=<id> session=<id> rate_hz=<real>` first line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvHeader {
    pub participant: Option<String>,
    pub session: Option<String>,
    pub rate_hz: Option<f64>,
}

fn parse_header(line: &str, source: &str) -> Result<CsvHeader> {
    let mut header = CsvHeader::default();
    for field in line.trim_start_matches('#').split_whitespace() {
        let (key, value) = field.split_once('=').ok_or_else(|| {
            Error::InvalidDataset(format!("{source}: malformed header field {field:?}"))
        })?;
        match key {
            "participant" => header.participant = Some(value.to_string()),
            "session" => header.session = Some(value.to_string()),
            "rate_hz" => {
                header.rate_hz = Some(value.parse().map_err(|_| {
                    Error::InvalidDataset(format!("{source}: bad rate_hz {value:?}"))
                })?)
            }
            _ => {
                return Err(Error::InvalidDataset(format!(
                    "{source}: unknown header key {key:?}"
                )))
            }
        }
    }
    Ok(header)
}

/// Parses one sample per line. `source` names the input in error messages.
pub fn parse_samples(text: &str, source: &str) -> Result<(CsvHeader, Vec<f64>)> {
    let mut header = CsvHeader::default();
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if i == 0 {
                header = parse_header(line, source)?;
                continue;
            }
            return Err(Error::InvalidDataset(format!(
                "{source}:{}: header allowed on the first line only",
                i + 1
            )));
        }
        let v: f64 = line.parse().map_err(|_| {
            Error::InvalidDataset(format!("{source}:{}: bad sample {line:?}", i + 1))
        })?;
        if !v.is_finite() {
            return Err(Error::InvalidDataset(format!(
                "{source}:{}: non-finite sample",
                i + 1
            )));
        }
        samples.push(v);
    }
    Ok((header, samples))
}

pub fn read_samples_file(path: &Path) -> Result<(CsvHeader, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_samples(&text, &path.display().to_string())
}

pub fn format_recording(rec: &RawRecording) -> String {
    let mut out = String::with_capacity(rec.samples.len() * 20);
    writeln!(
        out,
        "# participant={} session={} rate_hz={}",
        rec.participant_id, rec.session_id, rec.sample_rate_hz
    )
    .unwrap();
    for v in &rec.samples {
        writeln!(out, "{v}").unwrap();
    }
    out
}

/// Inventory of a dataset root.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub rate_hz: f64,
    /// `(participant, session, path)` sorted by participant then session.
    pub entries: Vec<(String, String, PathBuf)>,
}

pub fn read_manifest_rate(root: &Path) -> Result<f64> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::InvalidDataset(format!("cannot read {}: {e}", path.display())))?;
    for line in text.lines() {
        if let Some(v) = line.trim().strip_prefix("rate_hz=") {
            let rate: f64 = v.parse().map_err(|_| {
                Error::InvalidDataset(format!("{}: bad rate_hz {v:?}", path.display()))
            })?;
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "{}: rate_hz must be positive",
                    path.display()
                )));
            }
            return Ok(rate);
        }
    }
    Err(Error::InvalidDataset(format!(
        "{}: missing rate_hz line",
        path.display()
    )))
}

pub fn scan_dataset(root: &Path) -> Result<Manifest> {
    let rate_hz = read_manifest_rate(root)?;
    let mut entries = Vec::new();
    let dirs = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for dir in dirs {
        let dir = dir.map_err(|e| Error::io(root, e))?.path();
        if !dir.is_dir() {
            continue;
        }
        let participant = file_stem(&dir)?;
        let files = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for file in files {
            let file = file.map_err(|e| Error::io(&dir, e))?.path();
            if file.is_file() && file.extension().is_some_and(|e| e == "csv") {
                entries.push((participant.clone(), file_stem(&file)?, file));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "no recordings under {}",
            root.display()
        )));
    }
    entries.sort();
    Ok(Manifest { rate_hz, entries })
}

fn file_stem(path: &Path) -> Result<String> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidDataset(format!("bad file name {}", path.display())))?;
    validate_id(stem).map_err(|e| Error::InvalidDataset(format!("{}: {e}", path.display())))?;
    Ok(stem.to_string())
}

/// Loads every recording of a dataset root. A header that contradicts the
/// directory layout or the manifest rate is an error.
pub fn load_dataset(root: &Path) -> Result<(Manifest, Vec<RawRecording>)> {
    let manifest = scan_dataset(root)?;
    let mut recordings = Vec::with_capacity(manifest.entries.len());
    for (participant, session, path) in &manifest.entries {
        let (header, samples) = read_samples_file(path)?;
        let conflict = |what: &str| {
            Error::InvalidDataset(format!(
                "{}: header {what} disagrees with layout",
                path.display()
            ))
        };
        if header
            .participant
            .as_deref()
            .is_some_and(|p| p != participant)
        {
            return Err(conflict("participant"));
        }
        if header.session.as_deref().is_some_and(|s| s != session) {
            return Err(conflict("session"));
        }
        if header.rate_hz.is_some_and(|r| r != manifest.rate_hz) {
            return Err(conflict("rate_hz"));
        }
        let rec = RawRecording::new(
            participant.clone(),
            session.clone(),
            manifest.rate_hz,
            samples,
        )
        .map_err(|e| Error::InvalidDataset(format!("{}: {e}", path.display())))?;
        recordings.push(rec);
    }
    Ok((manifest, recordings))
}

/// Writes recordings in the dataset layout. All recordings must share one rate.
pub fn write_dataset(root: &Path, recordings: &[RawRecording]) -> Result<()> {
    let Some(first) = recordings.first() else {
        return Err(Error::InvalidDataset("no recordings to write".into()));
    };
    if recordings
        .iter()
        .any(|r| r.sample_rate_hz != first.sample_rate_hz)
    {
        return Err(Error::InvalidDataset(
            "recordings have different sample rates".into(),
        ));
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for r in recordings {
        validate_id(&r.participant_id)?;
        validate_id(&r.session_id)?;
        let dir = root.join(&r.participant_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_atomic(
            &dir.join(format!("{}.csv", r.session_id)),
            format_recording(r).as_bytes(),
        )?;
    }
    write_atomic(
        &root.join(MANIFEST_FILE),
        format!("rate_hz={}\n", first.sample_rate_hz).as_bytes(),
    )
}

/// Writes to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidInput(format!("bad output path {}", path.display())))?;
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}
