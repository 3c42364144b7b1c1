//! Empirical Lloyd-Max scalar quantization of derivative values.
//!
//! Training works on the sorted distinct values of the data with their
//! multiplicities, so duplicating a data set reproduces the same codebook
//! bit for bit.

use std::fmt;

use crate::error::{DecodeError, Error, Result};

pub const MAX_ALPHABET: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    pub alphabet_size: usize,
    pub max_iterations: usize,
    /// Stop once the relative MSE improvement of an iteration falls below this.
    pub tolerance: f64,
}

impl Default for QuantizerSpec {
    fn default() -> Self {
        QuantizerSpec {
            alphabet_size: 17,
            max_iterations: 200,
            tolerance: 1e-9,
        }
    }
}

impl QuantizerSpec {
    pub fn with_alphabet(alphabet_size: usize) -> Self {
        QuantizerSpec {
            alphabet_size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_ALPHABET).contains(&self.alphabet_size) {
            return Err(Error::InvalidSpec(format!(
                "alphabet size must be in 2..={MAX_ALPHABET}, got {}",
                self.alphabet_size
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidSpec("max_iterations must be positive".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// A string over the first `alphabet_size` letters, stored as symbol indices.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SymbolString {
    symbols: Vec<u8>,
    alphabet_size: usize,
}

impl SymbolString {
    pub fn new(symbols: Vec<u8>, alphabet_size: usize) -> Result<Self> {
        if !(2..=MAX_ALPHABET).contains(&alphabet_size) {
            return Err(Error::InvalidSpec(format!(
                "alphabet size must be in 2..={MAX_ALPHABET}, got {alphabet_size}"
            )));
        }
        if let Some(&bad) = symbols.iter().find(|&&s| s as usize >= alphabet_size) {
            return Err(Error::InvalidSymbol {
                symbol: bad,
                alphabet_size,
            });
        }
        Ok(SymbolString {
            symbols,
            alphabet_size,
        })
    }

    /// Parses letters `'A'..` into a string over an alphabet of `alphabet_size`.
    pub fn from_letters(text: &str, alphabet_size: usize) -> Result<Self> {
        let symbols = text
            .bytes()
            .map(|b| {
                letter_index(b).ok_or_else(|| {
                    Error::InvalidInput(format!("byte {b:#04x} is not an uppercase letter"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(symbols, alphabet_size)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.symbols
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn to_letters(&self) -> String {
        letters(&self.symbols)
    }
}

impl AsRef<[u8]> for SymbolString {
    fn as_ref(&self) -> &[u8] {
        &self.symbols
    }
}

impl fmt::Debug for SymbolString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SymbolString({:?}, L={})",
            self.to_letters(),
            self.alphabet_size
        )
    }
}

pub(crate) fn letter_index(b: u8) -> Option<u8> {
    b.is_ascii_uppercase().then(|| b - b'A')
}

pub(crate) fn letters(symbols: &[u8]) -> String {
    symbols.iter().map(|&s| (b'A' + s) as char).collect()
}

/// Cell boundaries and reconstruction levels of a scalar quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

impl Codebook {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        let l = levels.len();
        if !(2..=MAX_ALPHABET).contains(&l) {
            return Err(Error::InvalidSpec(format!(
                "codebook needs 2..={MAX_ALPHABET} levels, got {l}"
            )));
        }
        if breakpoints.len() != l - 1 {
            return Err(Error::InvalidSpec(format!(
                "{l} levels need {} breakpoints, got {}",
                l - 1,
                breakpoints.len()
            )));
        }
        if levels.iter().chain(&breakpoints).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("codebook values must be finite".into()));
        }
        let strictly_increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if !strictly_increasing(&levels) || !strictly_increasing(&breakpoints) {
            return Err(Error::InvalidSpec(
                "codebook levels and breakpoints must be strictly increasing".into(),
            ));
        }
        for (i, &b) in breakpoints.iter().enumerate() {
            if !(levels[i] <= b && b <= levels[i + 1]) {
                return Err(Error::InvalidSpec(format!(
                    "breakpoint {i} ({b}) does not separate levels {} and {}",
                    levels[i],
                    levels[i + 1]
                )));
            }
        }
        Ok(Codebook {
            breakpoints,
            levels,
        })
    }

    /// Nearest-neighbour codebook: breakpoints at the midpoints of `levels`.
    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        let breakpoints = midpoints(&levels);
        Self::new(breakpoints, levels)
    }

    pub fn alphabet_size(&self) -> usize {
        self.levels.len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Cell index of `v`; a value equal to a breakpoint belongs to the upper cell.
    pub fn symbol_of(&self, v: f64) -> u8 {
        self.breakpoints.partition_point(|&b| b <= v) as u8
    }

    pub fn level_of(&self, symbol: u8) -> f64 {
        self.levels[symbol as usize]
    }

    pub(crate) fn write_text(&self, out: &mut String) {
        use std::fmt::Write;
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.16e}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(out, "L={}", self.alphabet_size()).unwrap();
        writeln!(out, "breakpoints={}", join(&self.breakpoints)).unwrap();
        writeln!(out, "levels={}", join(&self.levels)).unwrap();
    }

    /// Parses the three `L=`, `breakpoints=`, `levels=` lines. `first_line` is
    /// the 1-based line number of `lines[0]` for error reporting.
    pub(crate) fn parse_text(lines: &[&str], first_line: usize) -> Result<Self, DecodeError> {
        let field = |idx: usize, key: &str| -> Result<&str, DecodeError> {
            let line = lines.get(idx).ok_or_else(|| {
                DecodeError::new(first_line + idx, crate::DecodeErrorKind::Truncated)
            })?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| {
                    DecodeError::malformed(first_line + idx, format!("expected `{key}=`"))
                })
        };
        let parse_list = |idx: usize, key: &str| -> Result<Vec<f64>, DecodeError> {
            let raw = field(idx, key)?;
            if raw.is_empty() {
                return Ok(Vec::new());
            }
            raw.split(',')
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        DecodeError::malformed(first_line + idx, format!("bad real {t:?}"))
                    })
                })
                .collect()
        };
        let l: usize = field(0, "L")?
            .parse()
            .map_err(|_| DecodeError::malformed(first_line, "bad alphabet size"))?;
        let breakpoints = parse_list(1, "breakpoints")?;
        let levels = parse_list(2, "levels")?;
        if levels.len() != l {
            return Err(DecodeError::malformed(
                first_line + 2,
                format!("L={l} but {} levels", levels.len()),
            ));
        }
        Codebook::new(breakpoints, levels)
            .map_err(|e| DecodeError::malformed(first_line, e.to_string()))
    }
}

fn midpoints(levels: &[f64]) -> Vec<f64> {
    levels.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Outcome of a Lloyd run: the codebook plus the MSE after every iteration
/// (`mse_history[0]` is the MSE of the initial levels).
#[derive(Debug, Clone)]
pub struct TrainingTrace {
    pub codebook: Codebook,
    pub mse_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl TrainingTrace {
    pub fn final_mse(&self) -> f64 {
        *self.mse_history.last().expect("history is never empty")
    }
}

/// Sorted distinct values with multiplicities, plus prefix sums of weight,
/// first and second moment so cell statistics cost O(1). Moments are taken
/// about the weighted mean to limit cancellation.
struct WeightedData {
    values: Vec<f64>,
    total: f64,
    shift: f64,
    cum_w: Vec<f64>,
    cum_1: Vec<f64>,
    cum_2: Vec<f64>,
}

impl WeightedData {
    fn new(data: &[f64]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidInput(
                "quantizer training data is empty".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "quantizer training data contains non-finite values".into(),
            ));
        }
        let mut sorted = data.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut values: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for v in sorted {
            match values.last() {
                Some(&last) if last == v => *weights.last_mut().unwrap() += 1.0,
                _ => {
                    values.push(v);
                    weights.push(1.0);
                }
            }
        }
        let total = data.len() as f64;
        let shift = values.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / total;
        let n = values.len();
        let (mut cum_w, mut cum_1, mut cum_2) = (
            Vec::with_capacity(n + 1),
            Vec::with_capacity(n + 1),
            Vec::with_capacity(n + 1),
        );
        let (mut w0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        cum_w.push(0.0);
        cum_1.push(0.0);
        cum_2.push(0.0);
        for (v, w) in values.iter().zip(&weights) {
            let c = v - shift;
            w0 += w;
            s1 += w * c;
            s2 += w * c * c;
            cum_w.push(w0);
            cum_1.push(s1);
            cum_2.push(s2);
        }
        Ok(WeightedData {
            values,
            total,
            shift,
            cum_w,
            cum_1,
            cum_2,
        })
    }

    /// Smallest value whose cumulative weight reaches `p * total`.
    fn quantile(&self, p: f64) -> f64 {
        let target = p * self.total;
        let i = self.cum_w[1..].partition_point(|&c| c < target);
        self.values[i.min(self.values.len() - 1)]
    }

    /// Index ranges of the nearest-neighbour cells of `levels`.
    fn cells(&self, levels: &[f64]) -> Vec<(usize, usize)> {
        let mut cells = Vec::with_capacity(levels.len());
        let mut start = 0;
        for b in midpoints(levels) {
            let end = self.values.partition_point(|&v| v < b).max(start);
            cells.push((start, end));
            start = end;
        }
        cells.push((start, self.values.len()));
        cells
    }

    /// Weight and shifted first and second moments of a cell.
    fn moments(&self, (start, end): (usize, usize)) -> (f64, f64, f64) {
        (
            self.cum_w[end] - self.cum_w[start],
            self.cum_1[end] - self.cum_1[start],
            self.cum_2[end] - self.cum_2[start],
        )
    }

    fn centroid(&self, cell: (usize, usize)) -> (f64, f64) {
        let (w, s1, _) = self.moments(cell);
        (self.shift + s1 / w, w)
    }

    /// Weighted squared error of a cell reconstructed at `level`.
    fn cell_sse(&self, cell: (usize, usize), level: f64) -> f64 {
        let (w, s1, s2) = self.moments(cell);
        if w == 0.0 {
            return 0.0;
        }
        let mean = s1 / w;
        let within = (s2 - s1 * mean).max(0.0);
        let off = level - self.shift - mean;
        within + w * off * off
    }

    fn mse(&self, levels: &[f64]) -> f64 {
        let sse: f64 = self
            .cells(levels)
            .into_iter()
            .zip(levels)
            .map(|(cell, &r)| self.cell_sse(cell, r))
            .sum();
        sse / self.total
    }

    fn splittable(&self, (s, e): (usize, usize)) -> bool {
        e > s && self.values[s] < self.values[e - 1]
    }

    /// Splits a cell at its centroid into two non-empty halves.
    fn halve(&self, (s, e): (usize, usize)) -> [(usize, usize); 2] {
        let (mean, _) = self.centroid((s, e));
        let cut = s + self.values[s..e].partition_point(|&v| v < mean);
        [(s, cut), (cut, e)]
    }

    /// One Lloyd step: centroids of the nearest-neighbour cells of `levels`,
    /// with empty cells replaced by splitting the most populated splittable
    /// cell at its centroid. Returns the new levels and whether a split occurred.
    fn step(&self, levels: &[f64], alphabet_size: usize) -> (Vec<f64>, bool) {
        let mut cells: Vec<(usize, usize)> = self
            .cells(levels)
            .into_iter()
            .filter(|&(s, e)| e > s)
            .collect();
        let split = cells.len() < alphabet_size;
        while cells.len() < alphabet_size {
            let (idx, _) = cells
                .iter()
                .enumerate()
                .filter(|(_, &c)| self.splittable(c))
                .map(|(i, &c)| (i, self.centroid(c).1))
                .fold(
                    (usize::MAX, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            let halves = self.halve(cells[idx]);
            cells.splice(idx..=idx, halves);
        }
        (
            cells.into_iter().map(|c| self.centroid(c).0).collect(),
            split,
        )
    }

    /// `levels` with one more level: the cell with the largest squared error
    /// is replaced by the centroids of its two halves. Never increases MSE.
    fn grow(&self, levels: &[f64]) -> Vec<f64> {
        let cells = self.cells(levels);
        let (idx, _) = cells
            .iter()
            .zip(levels)
            .enumerate()
            .filter(|(_, (&c, _))| self.splittable(c))
            .map(|(i, (&c, &r))| (i, self.cell_sse(c, r)))
            .fold(
                (usize::MAX, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        let mut out = levels.to_vec();
        let [lo, hi] = self.halve(cells[idx]);
        out.splice(idx..=idx, [self.centroid(lo).0, self.centroid(hi).0]);
        out
    }

    fn distinct(&self) -> usize {
        self.values.len()
    }
}

/// Lloyd iteration until the relative MSE improvement drops below the
/// tolerance. A step that would raise the MSE (possible only through
/// rounding at convergence) is discarded, so the history is monotone.
fn run_lloyd(
    data: &WeightedData,
    spec: &QuantizerSpec,
    initial_levels: Vec<f64>,
) -> Result<TrainingTrace> {
    let l = spec.alphabet_size;
    let mut levels = initial_levels;
    let mut history = vec![data.mse(&levels)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < spec.max_iterations {
        let (next, split) = data.step(&levels, l);
        let mse = data.mse(&next);
        let prev = *history.last().unwrap();
        iterations += 1;
        if mse > prev && !split {
            converged = true;
            break;
        }
        levels = next;
        history.push(mse);
        if !split && (prev <= 0.0 || (prev - mse) / prev < spec.tolerance) {
            converged = true;
            break;
        }
    }
    Ok(TrainingTrace {
        codebook: Codebook::from_levels(levels)?,
        mse_history: history,
        iterations,
        converged,
    })
}

fn quantile_start(data: &WeightedData, l: usize) -> Vec<f64> {
    (1..=l)
        .map(|i| data.quantile((i as f64 - 0.5) / l as f64))
        .collect()
}

fn prepare(data: &[f64], spec: &QuantizerSpec) -> Result<WeightedData> {
    spec.validate()?;
    let weighted = WeightedData::new(data)?;
    if weighted.distinct() < spec.alphabet_size {
        return Err(Error::DegenerateData(format!(
            "{} distinct values cannot fill {} quantizer cells",
            weighted.distinct(),
            spec.alphabet_size
        )));
    }
    Ok(weighted)
}

/// Lloyd iteration from quantile initialization at probabilities
/// `(i - 0.5) / L`. Lloyd only finds local optima, so on its own a larger
/// alphabet can end worse than a smaller one. For every size `m` up to `L`
/// a second run starts from the size `m - 1` result with its worst cell
/// split, and the better of the two is kept (the quantile run on ties). Both
/// starts are deterministic, and the MSE is non-increasing in `L`.
pub fn train_lloyd_max_traced(data: &[f64], spec: &QuantizerSpec) -> Result<TrainingTrace> {
    let weighted = prepare(data, spec)?;
    let mut best: Vec<f64> = vec![weighted.centroid((0, weighted.distinct())).0];
    let mut trace = None;
    for m in 2..=spec.alphabet_size {
        let sub = QuantizerSpec {
            alphabet_size: m,
            ..*spec
        };
        let from_quantiles = run_lloyd(&weighted, &sub, quantile_start(&weighted, m))?;
        let from_split = run_lloyd(&weighted, &sub, weighted.grow(&best))?;
        let chosen = if from_split.final_mse() < from_quantiles.final_mse() {
            from_split
        } else {
            from_quantiles
        };
        best = chosen.codebook.levels().to_vec();
        trace = Some(chosen);
    }
    Ok(trace.expect("alphabet size is at least 2"))
}

pub fn train_lloyd_max(data: &[f64], spec: &QuantizerSpec) -> Result<Codebook> {
    Ok(train_lloyd_max_traced(data, spec)?.codebook)
}

/// Lloyd iteration starting from caller-supplied levels.
pub fn refine_lloyd_max(
    data: &[f64],
    spec: &QuantizerSpec,
    initial_levels: &[f64],
) -> Result<TrainingTrace> {
    let weighted = prepare(data, spec)?;
    if initial_levels.len() != spec.alphabet_size {
        return Err(Error::InvalidInput(format!(
            "{} initial levels for alphabet size {}",
            initial_levels.len(),
            spec.alphabet_size
        )));
    }
    let mut init = initial_levels.to_vec();
    init.sort_by(f64::total_cmp);
    run_lloyd(&weighted, spec, init)
}

pub fn quantize(codebook: &Codebook, values: &[f64]) -> SymbolString {
    SymbolString {
        symbols: values.iter().map(|&v| codebook.symbol_of(v)).collect(),
        alphabet_size: codebook.alphabet_size(),
    }
}

pub fn dequantize(codebook: &Codebook, symbols: &SymbolString) -> Vec<f64> {
    symbols
        .as_slice()
        .iter()
        .map(|&s| codebook.level_of(s))
        .collect()
}

/// Mean squared error between `data` and its reconstruction.
pub fn distortion(codebook: &Codebook, data: &[f64]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("distortion of empty data".into()));
    }
    let recon = dequantize(codebook, &quantize(codebook, data));
    Ok(mean_squared_error(data, &recon))
}

pub fn mean_squared_error(data: &[f64], reconstruction: &[f64]) -> f64 {
    let sse: f64 = data
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    sse / data.len() as f64
}
