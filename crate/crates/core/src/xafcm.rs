//! Extended-alphabet finite-context models.
//!
//! An order-`k`, depth-`d` model counts how often each length-`d` word
//! follows each length-`k` context, and estimates
//!
//! ```text
//! P(w | c) = (v(w|c) + alpha) / (v(c) + alpha * |A|^d)
//! ```
//!
//! Strings are treated as circular both when learning and when measuring, so
//! a string of length `n` yields exactly `n` counting positions and the first
//! blocks of a query take their context from its tail. No entropy coder is
//! involved: [`XaModel::compress_bits`] returns the information content the
//! model assigns to a query.

use std::fmt::Write as _;

use rustc_hash::FxHashMap;
use sha2::{Digest, Sha256};

use crate::error::{DecodeError, DecodeErrorKind, Error, Result};
use crate::quantizer::{letter_index, letters, MAX_ALPHABET};

pub const FORMAT_MAGIC: &str = "xafcm";
pub const FORMAT_VERSION: u32 = 1;

/// Largest extended alphabet accepted: `|A|^d` must be exact in an `f64`.
const MAX_EXTENDED_ALPHABET: u64 = 1 << 53;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaMode {
    /// `1 / |A|^d`: one pseudo-event per context spread over the extended alphabet.
    Auto,
    Fixed(f64),
}

impl AlphaMode {
    pub fn parse(s: &str) -> Option<Self> {
        if s == "auto" {
            return Some(AlphaMode::Auto);
        }
        s.parse::<f64>().ok().map(AlphaMode::Fixed)
    }
}

impl std::fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AlphaMode::Auto => f.write_str("auto"),
            AlphaMode::Fixed(a) => write!(f, "{a}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub k: usize,
    pub d: usize,
    pub alphabet_size: usize,
    pub alpha: AlphaMode,
}

impl ModelParams {
    pub fn new(k: usize, d: usize, alphabet_size: usize, alpha: AlphaMode) -> Result<Self> {
        let params = ModelParams {
            k,
            d,
            alphabet_size,
            alpha,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 {
            return Err(Error::InvalidSpec(format!(
                "context order and depth must be positive (k={}, d={})",
                self.k, self.d
            )));
        }
        if !(2..=MAX_ALPHABET).contains(&self.alphabet_size) {
            return Err(Error::InvalidSpec(format!(
                "alphabet size must be in 2..={MAX_ALPHABET}, got {}",
                self.alphabet_size
            )));
        }
        if let AlphaMode::Fixed(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "alpha must be positive, got {a}"
                )));
            }
        }
        let ext = u32::try_from(self.d)
            .ok()
            .and_then(|d| (self.alphabet_size as u64).checked_pow(d))
            .filter(|&e| e <= MAX_EXTENDED_ALPHABET)
            .ok_or_else(|| {
                Error::Capacity(format!(
                    "extended alphabet {}^{} exceeds 2^53",
                    self.alphabet_size, self.d
                ))
            })?;
        if !(self.resolve_alpha_with(ext) * ext as f64).is_finite() {
            return Err(Error::Capacity("alpha * |A|^d is not finite".into()));
        }
        Ok(())
    }

    /// `|A|^d`. Only meaningful on validated params.
    pub fn extended_alphabet(&self) -> u64 {
        (self.alphabet_size as u64).pow(self.d as u32)
    }

    fn resolve_alpha_with(&self, ext: u64) -> f64 {
        match self.alpha {
            AlphaMode::Fixed(a) => a,
            AlphaMode::Auto => 1.0 / ext as f64,
        }
    }

    /// The smoothing value in effect; constant across contexts.
    pub fn alpha_value(&self) -> f64 {
        self.resolve_alpha_with(self.extended_alphabet())
    }
}

/// Resolves the smoothing parameter for a model. The auto policy does not
/// depend on the counts.
pub fn alpha_resolve(params: &ModelParams, _counts: &CountsTable) -> f64 {
    params.alpha_value()
}

/// Events observed after one context, sorted by event code.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContextCounts {
    total: u64,
    events: Vec<(u64, u64)>,
}

impl ContextCounts {
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, event: u64) -> u64 {
        self.events
            .binary_search_by_key(&event, |&(e, _)| e)
            .map_or(0, |i| self.events[i].1)
    }

    /// `(event code, count)` pairs in ascending event order.
    pub fn events(&self) -> &[(u64, u64)] {
        &self.events
    }

    fn add(&mut self, event: u64, by: u64) {
        match self.events.binary_search_by_key(&event, |&(e, _)| e) {
            Ok(i) => self.events[i].1 += by,
            Err(i) => self.events.insert(i, (event, by)),
        }
        self.total += by;
    }
}

/// Sparse context -> event counts. Absent entries are zero.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CountsTable {
    contexts: FxHashMap<Box<[u8]>, ContextCounts>,
}

impl CountsTable {
    pub fn get(&self, context: &[u8]) -> Option<&ContextCounts> {
        self.contexts.get(context)
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn total_events(&self) -> u64 {
        self.contexts.values().map(|c| c.total).sum()
    }

    /// Contexts in lexicographic order.
    pub fn sorted(&self) -> Vec<(&[u8], &ContextCounts)> {
        let mut v: Vec<_> = self.contexts.iter().map(|(k, c)| (&**k, c)).collect();
        v.sort_unstable_by(|a, b| a.0.cmp(b.0));
        v
    }

    fn add(&mut self, context: &[u8], event: u64, by: u64) {
        if let Some(c) = self.contexts.get_mut(context) {
            c.add(event, by);
        } else {
            let mut c = ContextCounts::default();
            c.add(event, by);
            self.contexts.insert(context.into(), c);
        }
    }
}

/// Bits assigned to a query and the number of symbols they cover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compression {
    pub bits: f64,
    pub coded_symbols: usize,
    /// Cost of the coded blocks under the uniform distribution,
    /// `coded_symbols / d * log2 |A|^d`.
    pub uniform_bits: f64,
}

impl Compression {
    /// Bits relative to the uniform cost of the coded symbols.
    pub fn normalized(&self) -> f64 {
        self.bits / self.uniform_bits
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XaModel {
    params: ModelParams,
    counts: CountsTable,
    trained_symbols: u64,
}

impl XaModel {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(XaModel {
            params,
            counts: CountsTable::default(),
            trained_symbols: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn counts(&self) -> &CountsTable {
        &self.counts
    }

    pub fn trained_symbols(&self) -> u64 {
        self.trained_symbols
    }

    pub fn alpha(&self) -> f64 {
        alpha_resolve(&self.params, &self.counts)
    }

    pub fn encode_event(&self, event: &[u8]) -> u64 {
        let l = self.params.alphabet_size as u64;
        event.iter().fold(0u64, |acc, &s| acc * l + s as u64)
    }

    pub fn decode_event(&self, mut code: u64) -> Vec<u8> {
        let l = self.params.alphabet_size as u64;
        let mut out = vec![0u8; self.params.d];
        for slot in out.iter_mut().rev() {
            *slot = (code % l) as u8;
            code /= l;
        }
        out
    }

    fn check_symbols(&self, symbols: &[u8]) -> Result<()> {
        let l = self.params.alphabet_size;
        match symbols.iter().find(|&&s| s as usize >= l) {
            Some(&symbol) => Err(Error::InvalidSymbol {
                symbol,
                alphabet_size: l,
            }),
            None => Ok(()),
        }
    }

    /// `v(w|c)` for an event word.
    pub fn count(&self, context: &[u8], event: &[u8]) -> u64 {
        let code = self.encode_event(event);
        self.counts.get(context).map_or(0, |c| c.count(code))
    }

    /// `v(c)`.
    pub fn context_total(&self, context: &[u8]) -> u64 {
        self.counts.get(context).map_or(0, |c| c.total)
    }

    /// Counts every circular position of `training`: the context is the `k`
    /// symbols before the position and the event the `d` symbols from it,
    /// both wrapping around the string.
    pub fn learn(&mut self, training: impl AsRef<[u8]>) -> Result<()> {
        let s = training.as_ref();
        if s.is_empty() {
            return Err(Error::InvalidInput(
                "cannot learn from an empty string".into(),
            ));
        }
        self.check_symbols(s)?;
        let (k, d, n) = (self.params.k, self.params.d, s.len());
        let offset = n - k % n;
        let ext: Vec<u8> = (0..n + k + d).map(|j| s[(j + offset) % n]).collect();
        for i in 0..n {
            let code = self.encode_event(&ext[i + k..i + k + d]);
            self.counts.add(&ext[i..i + k], code, 1);
        }
        self.trained_symbols += n as u64;
        Ok(())
    }

    fn check_word_lengths(&self, context: &[u8], event: &[u8]) -> Result<()> {
        if context.len() != self.params.k || event.len() != self.params.d {
            return Err(Error::InvalidInput(format!(
                "expected context of {} and event of {} symbols, got {} and {}",
                self.params.k,
                self.params.d,
                context.len(),
                event.len()
            )));
        }
        self.check_symbols(context)?;
        self.check_symbols(event)
    }

    fn probability_unchecked(&self, context: &[u8], event: &[u8], alpha: f64, ext: f64) -> f64 {
        let (hit, total) = match self.counts.get(context) {
            Some(c) => (c.count(self.encode_event(event)), c.total),
            None => (0, 0),
        };
        (hit as f64 + alpha) / (total as f64 + alpha * ext)
    }

    pub fn estimate_probability(&self, context: &[u8], event: &[u8]) -> Result<f64> {
        self.check_word_lengths(context, event)?;
        let ext = self.params.extended_alphabet() as f64;
        Ok(self.probability_unchecked(context, event, self.alpha(), ext))
    }

    /// Information content of one block in bits.
    pub fn block_bits(&self, context: &[u8], event: &[u8]) -> Result<f64> {
        Ok(-self.estimate_probability(context, event)?.log2())
    }

    /// Bits for `query` split into consecutive depth-`d` blocks from position
    /// 0. Contexts of the first blocks wrap into the end of the query; the
    /// trailing `n mod d` symbols are not coded. The model is not updated.
    pub fn compress_bits(&self, query: impl AsRef<[u8]>) -> Result<Compression> {
        let x = query.as_ref();
        let (k, d, n) = (self.params.k, self.params.d, x.len());
        if n < k.max(d) {
            return Err(Error::InvalidInput(format!(
                "query of {n} symbols is shorter than max(k, d) = {}",
                k.max(d)
            )));
        }
        self.check_symbols(x)?;
        let mut ext = Vec::with_capacity(n + k);
        ext.extend_from_slice(&x[n - k..]);
        ext.extend_from_slice(x);

        let alpha = self.alpha();
        let ext_alphabet = self.params.extended_alphabet() as f64;
        let blocks = n / d;
        // Blocks whose context was never seen are uniform over the extended
        // alphabet; counting them keeps an untrained model at exactly
        // `blocks * log2 |A|^d` bits.
        let mut unseen = 0usize;
        let mut seen_bits = 0.0;
        for i in 0..blocks {
            let start = i * d;
            let ctx = &ext[start..start + k];
            let event = &ext[start + k..start + k + d];
            match self.counts.get(ctx) {
                None => unseen += 1,
                Some(c) => {
                    let hit = c.count(self.encode_event(event)) as f64;
                    seen_bits -= ((hit + alpha) / (c.total as f64 + alpha * ext_alphabet)).log2();
                }
            }
        }
        let block_bits = ext_alphabet.log2();
        let bits = unseen as f64 * block_bits + seen_bits;
        Ok(Compression {
            bits,
            coded_symbols: blocks * d,
            uniform_bits: blocks as f64 * block_bits,
        })
    }

    /// Text body (no checksum line). Contexts and events are sorted, so equal
    /// models produce identical text.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        writeln!(out, "{FORMAT_MAGIC} {FORMAT_VERSION}").unwrap();
        writeln!(
            out,
            "k={} d={} alphabet={} alpha={}",
            p.k, p.d, p.alphabet_size, p.alpha
        )
        .unwrap();
        writeln!(out, "trained_symbols={}", self.trained_symbols).unwrap();
        writeln!(out, "contexts={}", self.counts.len()).unwrap();
        for (ctx, counts) in self.counts.sorted() {
            out.push_str(&letters(ctx));
            out.push(':');
            for (i, &(code, count)) in counts.events.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{}={count}", letters(&self.decode_event(code))).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Versioned text block followed by a SHA-256 checksum line.
    pub fn serialize(&self) -> Vec<u8> {
        let mut text = self.to_text();
        let digest = hex::encode(Sha256::digest(text.as_bytes()));
        writeln!(text, "checksum={digest}").unwrap();
        text.into_bytes()
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, DecodeError> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| DecodeError::malformed(1, format!("not UTF-8: {e}")))?;
        Self::from_checked_text(text, 1)
    }

    /// Parses a serialized block starting at 1-based line `first_line` of an
    /// enclosing file.
    pub(crate) fn from_checked_text(text: &str, first_line: usize) -> Result<Self, DecodeError> {
        let body = verify_checksum(text, first_line)?;
        Self::parse_body(body, first_line)
    }

    fn parse_body(body: &str, first_line: usize) -> Result<Self, DecodeError> {
        let lines: Vec<&str> = body.lines().collect();
        let at = |i: usize| first_line + i;
        let get = |i: usize| {
            lines
                .get(i)
                .copied()
                .ok_or_else(|| DecodeError::new(at(i), DecodeErrorKind::Truncated))
        };

        let header = get(0)?;
        let expected = format!("{FORMAT_MAGIC} {FORMAT_VERSION}");
        if header != expected {
            return Err(if header.starts_with(FORMAT_MAGIC) {
                DecodeError::new(
                    at(0),
                    DecodeErrorKind::VersionMismatch {
                        expected,
                        found: header.to_string(),
                    },
                )
            } else {
                DecodeError::malformed(at(0), "missing xafcm header")
            });
        }

        let params = parse_params(get(1)?, at(1))?;
        let trained_symbols: u64 = parse_key(get(2)?, "trained_symbols", at(2))?;
        let n_contexts: usize = parse_key(get(3)?, "contexts", at(3))?;
        if lines.len() < 4 + n_contexts {
            return Err(DecodeError::new(
                at(lines.len()),
                DecodeErrorKind::Truncated,
            ));
        }
        if lines.len() > 4 + n_contexts {
            return Err(DecodeError::malformed(
                at(4 + n_contexts),
                "more context lines than declared",
            ));
        }

        let mut model =
            XaModel::new(params).map_err(|e| DecodeError::malformed(at(1), e.to_string()))?;
        for (i, line) in lines[4..].iter().enumerate() {
            model.parse_context_line(line, at(4 + i))?;
        }
        if model.counts.len() != n_contexts {
            return Err(DecodeError::malformed(at(3), "duplicate contexts"));
        }
        if model.counts.total_events() != trained_symbols {
            return Err(DecodeError::malformed(
                at(2),
                format!(
                    "trained_symbols={trained_symbols} but counts sum to {}",
                    model.counts.total_events()
                ),
            ));
        }
        model.trained_symbols = trained_symbols;
        Ok(model)
    }

    fn parse_context_line(&mut self, line: &str, line_no: usize) -> Result<(), DecodeError> {
        let bad = |msg: &str| DecodeError::malformed(line_no, msg.to_string());
        let (ctx_text, events_text) = line.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        let ctx = parse_word(ctx_text, self.params.k, self.params.alphabet_size)
            .ok_or_else(|| bad("bad context word"))?;
        if self.counts.get(&ctx).is_some() {
            return Err(bad("duplicate context"));
        }
        let mut entry = ContextCounts::default();
        for item in events_text.split(',') {
            let (word, count) = item.split_once('=').ok_or_else(|| bad("missing '='"))?;
            let event = parse_word(word, self.params.d, self.params.alphabet_size)
                .ok_or_else(|| bad("bad event word"))?;
            let count: u64 = count.parse().map_err(|_| bad("bad count"))?;
            if count == 0 {
                return Err(bad("zero count stored"));
            }
            let code = self.encode_event(&event);
            if entry.count(code) != 0 {
                return Err(bad("duplicate event"));
            }
            entry.add(code, count);
        }
        self.counts.contexts.insert(ctx.into(), entry);
        Ok(())
    }
}

/// Splits off and checks the trailing `checksum=` line, returning the body.
pub(crate) fn verify_checksum(text: &str, first_line: usize) -> Result<&str, DecodeError> {
    let trimmed = text.strip_suffix('\n').unwrap_or(text);
    let line_count = trimmed.lines().count();
    let (body, last) = match trimmed.rfind('\n') {
        Some(pos) => (&text[..pos + 1], &trimmed[pos + 1..]),
        None => ("", trimmed),
    };
    let Some(expected) = last.strip_prefix("checksum=") else {
        return Err(DecodeError::new(
            first_line + line_count,
            DecodeErrorKind::Truncated,
        ));
    };
    let actual = hex::encode(Sha256::digest(body.as_bytes()));
    if actual != expected {
        return Err(DecodeError::new(
            first_line + line_count - 1,
            DecodeErrorKind::Checksum,
        ));
    }
    Ok(body)
}

fn parse_word(text: &str, len: usize, alphabet_size: usize) -> Option<Vec<u8>> {
    if text.len() != len {
        return None;
    }
    text.bytes()
        .map(|b| letter_index(b).filter(|&s| (s as usize) < alphabet_size))
        .collect()
}

fn parse_key<T: std::str::FromStr>(
    line: &str,
    key: &str,
    line_no: usize,
) -> Result<T, DecodeError> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| DecodeError::malformed(line_no, format!("expected `{key}=<value>`")))
}

fn parse_params(line: &str, line_no: usize) -> Result<ModelParams, DecodeError> {
    let mut fields = line.split(' ');
    let mut next = |key: &str| -> Result<&str, DecodeError> {
        fields
            .next()
            .and_then(|f| f.strip_prefix(key))
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| DecodeError::malformed(line_no, format!("expected `{key}=`")))
    };
    let num = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| DecodeError::malformed(line_no, format!("bad integer {v:?}")))
    };
    let k = num(next("k")?)?;
    let d = num(next("d")?)?;
    let alphabet_size = num(next("alphabet")?)?;
    let alpha_text = next("alpha")?;
    let alpha = AlphaMode::parse(alpha_text)
        .ok_or_else(|| DecodeError::malformed(line_no, format!("bad alpha {alpha_text:?}")))?;
    ModelParams::new(k, d, alphabet_size, alpha)
        .map_err(|e| DecodeError::malformed(line_no, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::SymbolString;

    fn sym(text: &str, l: usize) -> Vec<u8> {
        SymbolString::from_letters(text, l).unwrap().into_vec()
    }

    fn params(k: usize, d: usize, l: usize, alpha: AlphaMode) -> ModelParams {
        ModelParams::new(k, d, l, alpha).unwrap()
    }

    fn aaba_model(alpha: AlphaMode) -> XaModel {
        let mut m = XaModel::new(params(1, 1, 2, alpha)).unwrap();
        m.learn(sym("AABA", 2)).unwrap();
        m
    }

    #[test]
    fn learn_aaba_counts() {
        let m = aaba_model(AlphaMode::Fixed(1.0));
        let (a, b) = (&[0u8][..], &[1u8][..]);
        assert_eq!(m.count(a, a), 2);
        assert_eq!(m.count(a, b), 1);
        assert_eq!(m.count(b, a), 1);
        assert_eq!(m.count(b, b), 0);
        assert_eq!(m.context_total(a), 3);
        assert_eq!(m.context_total(b), 1);
        assert_eq!(m.trained_symbols(), 4);
    }

    #[test]
    fn single_symbol_is_its_own_context() {
        let mut m = XaModel::new(params(1, 1, 2, AlphaMode::Auto)).unwrap();
        m.learn([0u8]).unwrap();
        assert_eq!(m.count(&[0], &[0]), 1);
        assert_eq!(m.counts().total_events(), 1);
    }

    #[test]
    fn learning_twice_doubles_counts() {
        let s = sym("ABBACABCCA", 3);
        let mut once = XaModel::new(params(2, 2, 3, AlphaMode::Auto)).unwrap();
        once.learn(&s).unwrap();
        let mut twice = once.clone();
        twice.learn(&s).unwrap();
        for (ctx, c) in once.counts().sorted() {
            let c2 = twice.counts().get(ctx).unwrap();
            assert_eq!(c2.total(), 2 * c.total());
            for &(e, v) in c.events() {
                assert_eq!(c2.count(e), 2 * v);
            }
        }
        assert_eq!(twice.counts().len(), once.counts().len());
    }

    #[test]
    fn probability_examples() {
        let untrained = XaModel::new(params(2, 2, 3, AlphaMode::Fixed(0.3))).unwrap();
        let p = untrained.estimate_probability(&[0, 1], &[2, 2]).unwrap();
        assert!((p - 1.0 / 9.0).abs() < 1e-15);

        let m = aaba_model(AlphaMode::Fixed(1.0));
        assert!((m.estimate_probability(&[0], &[0]).unwrap() - 0.6).abs() < 1e-15);
        assert!((m.estimate_probability(&[1], &[1]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.block_bits(&[0], &[0]).unwrap() - (5.0f64 / 3.0).log2()).abs() < 1e-12);
        assert!((m.block_bits(&[0], &[0]).unwrap() - 0.73697).abs() < 1e-5);
    }

    #[test]
    fn bad_word_lengths_and_symbols() {
        let m = aaba_model(AlphaMode::Auto);
        assert!(matches!(
            m.estimate_probability(&[0, 0], &[0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            m.estimate_probability(&[2], &[0]),
            Err(Error::InvalidSymbol { symbol: 2, .. })
        ));
        let mut m = m;
        assert!(matches!(
            m.learn([0u8, 5]),
            Err(Error::InvalidSymbol { .. })
        ));
        assert!(matches!(m.learn([0u8; 0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn untrained_bits() {
        let m = XaModel::new(params(1, 3, 2, AlphaMode::Auto)).unwrap();
        assert!((m.block_bits(&[0], &[0, 1, 1]).unwrap() - 3.0).abs() < 1e-12);
        let m = XaModel::new(params(3, 2, 5, AlphaMode::Fixed(0.01))).unwrap();
        let q: Vec<u8> = (0..40).map(|i| (i * 7 % 5) as u8).collect();
        let c = m.compress_bits(&q).unwrap();
        assert_eq!(c.coded_symbols, 40);
        assert!((c.bits - 40.0 * 5f64.log2()).abs() < 1e-9);
    }

    #[test]
    fn near_certain_block_costs_almost_nothing() {
        let mut m = XaModel::new(params(1, 1, 2, AlphaMode::Fixed(1e-3))).unwrap();
        m.learn([0u8; 100]).unwrap();
        let c = m.compress_bits([0u8; 4]).unwrap();
        let expected = 4.0 * -(100.001f64 / 100.002).log2();
        assert!((c.bits - expected).abs() < 1e-12);
        assert!(c.bits < 6e-5);

        let mut m = XaModel::new(params(1, 1, 2, AlphaMode::Fixed(1e-12))).unwrap();
        m.learn([0u8; 100]).unwrap();
        assert!(m.block_bits(&[0], &[0]).unwrap() < 1e-12);
    }

    #[test]
    fn trailing_partial_block_not_coded() {
        let m = XaModel::new(params(1, 2, 2, AlphaMode::Auto)).unwrap();
        let c = m.compress_bits([0u8, 1, 0, 1, 1]).unwrap();
        assert_eq!(c.coded_symbols, 4);
        assert!((c.bits - 4.0).abs() < 1e-12);
        assert!(matches!(
            XaModel::new(params(4, 2, 2, AlphaMode::Auto))
                .unwrap()
                .compress_bits([0u8; 3]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn first_block_context_wraps_to_query_tail() {
        // The first block's context is taken from the query's tail.
        let m = aaba_model(AlphaMode::Fixed(1.0));
        let q = sym("AB", 2);
        let c = m.compress_bits(&q).unwrap();
        let expected = m.block_bits(&[1], &[0]).unwrap() + m.block_bits(&[0], &[1]).unwrap();
        assert!((c.bits - expected).abs() < 1e-12);
    }

    #[test]
    fn alpha_policy() {
        assert_eq!(params(1, 1, 2, AlphaMode::Fixed(0.5)).alpha_value(), 0.5);
        assert!((params(1, 2, 17, AlphaMode::Auto).alpha_value() - 1.0 / 289.0).abs() < 1e-18);
        assert!((params(1, 2, 17, AlphaMode::Auto).alpha_value() - 3.460e-3).abs() < 1e-6);
        assert_eq!(params(1, 1, 2, AlphaMode::Auto).alpha_value(), 0.5);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0, 1, 2, AlphaMode::Auto).is_err());
        assert!(ModelParams::new(1, 0, 2, AlphaMode::Auto).is_err());
        assert!(ModelParams::new(1, 1, 1, AlphaMode::Auto).is_err());
        assert!(ModelParams::new(1, 1, 2, AlphaMode::Fixed(0.0)).is_err());
        assert!(matches!(
            ModelParams::new(1, 13, 26, AlphaMode::Auto),
            Err(Error::Capacity(_))
        ));
        assert!(matches!(
            ModelParams::new(1, 11, 26, AlphaMode::Fixed(1e300)),
            Err(Error::Capacity(_))
        ));
        assert!(ModelParams::new(1, 11, 26, AlphaMode::Auto).is_ok());
    }

    #[test]
    fn serialize_round_trip() {
        let m = aaba_model(AlphaMode::Fixed(0.001));
        let bytes = m.serialize();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("xafcm 1\nk=1 d=1 alphabet=2 alpha=0.001\n"));
        assert!(text.contains("\nA:A=2,B=1\nB:A=1\n"));
        assert_eq!(XaModel::deserialize(&bytes).unwrap(), m);

        let empty = XaModel::new(params(3, 2, 17, AlphaMode::Auto)).unwrap();
        let back = XaModel::deserialize(&empty.serialize()).unwrap();
        assert_eq!(back, empty);
        assert!(back.counts().is_empty());
    }

    fn reseal(body: &str) -> Vec<u8> {
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        format!("{body}checksum={digest}\n").into_bytes()
    }

    #[test]
    fn decode_errors_are_distinct() {
        let m = aaba_model(AlphaMode::Auto);
        let text = String::from_utf8(m.serialize()).unwrap();

        let truncated = &text[..text.find("B:A").unwrap()];
        let err = XaModel::deserialize(truncated.as_bytes()).unwrap_err();
        assert_eq!(err.kind, DecodeErrorKind::Truncated);

        let corrupted = text.replace("contexts=2", "contexts=9");
        let err = XaModel::deserialize(corrupted.as_bytes()).unwrap_err();
        assert_eq!(err.kind, DecodeErrorKind::Checksum);

        let body = m.to_text().replace("contexts=2", "contexts=3");
        let err = XaModel::deserialize(&reseal(&body)).unwrap_err();
        assert_eq!(err.kind, DecodeErrorKind::Truncated);

        let body = m.to_text().replace("xafcm 1", "xafcm 7");
        let err = XaModel::deserialize(&reseal(&body)).unwrap_err();
        assert!(matches!(err.kind, DecodeErrorKind::VersionMismatch { .. }));
        assert_eq!(err.line, 1);

        let body = m.to_text().replace("A:A=2", "A:A=0");
        let err = XaModel::deserialize(&reseal(&body)).unwrap_err();
        assert!(matches!(err.kind, DecodeErrorKind::Malformed(_)));
        assert_eq!(err.line, 5);
    }
}
