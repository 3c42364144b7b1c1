//! Brute-force reference for the context model. Counts are kept as a flat
//! list of observed (context, event) pairs and every probability is computed
//! by scanning that list, so it shares no code or data structure with the
//! library.

pub struct Oracle {
    pub k: usize,
    pub d: usize,
    pub alphabet: usize,
    pub alpha: f64,
    pairs: Vec<(Vec<u8>, Vec<u8>)>,
}

fn circular(s: &[u8], start: isize, len: usize) -> Vec<u8> {
    let n = s.len() as isize;
    (0..len as isize)
        .map(|j| s[(start + j).rem_euclid(n) as usize])
        .collect()
}

impl Oracle {
    pub fn new(k: usize, d: usize, alphabet: usize, alpha: Option<f64>) -> Self {
        let ext = (alphabet as f64).powi(d as i32);
        Oracle {
            k,
            d,
            alphabet,
            alpha: alpha.unwrap_or(1.0 / ext),
            pairs: Vec::new(),
        }
    }

    /// One pair per position of `s`, read circularly.
    pub fn learn(&mut self, s: &[u8]) {
        for i in 0..s.len() as isize {
            let ctx = circular(s, i - self.k as isize, self.k);
            let ev = circular(s, i, self.d);
            self.pairs.push((ctx, ev));
        }
    }

    pub fn count(&self, ctx: &[u8], ev: &[u8]) -> usize {
        self.pairs
            .iter()
            .filter(|(c, e)| c == ctx && e == ev)
            .count()
    }

    pub fn context_count(&self, ctx: &[u8]) -> usize {
        self.pairs.iter().filter(|(c, _)| c == ctx).count()
    }

    pub fn probability(&self, ctx: &[u8], ev: &[u8]) -> f64 {
        let ext = (self.alphabet as f64).powi(self.d as i32);
        (self.count(ctx, ev) as f64 + self.alpha)
            / (self.context_count(ctx) as f64 + self.alpha * ext)
    }

    /// Bits for `x` coded in blocks of `d` from position 0, contexts read
    /// circularly in `x`.
    pub fn compress_bits(&self, x: &[u8]) -> f64 {
        (0..x.len() / self.d)
            .map(|b| {
                let p = (b * self.d) as isize;
                let ctx = circular(x, p - self.k as isize, self.k);
                let ev = x[p as usize..p as usize + self.d].to_vec();
                -self.probability(&ctx, &ev).log2()
            })
            .sum()
    }
}

/// Every string of length `len` over `alphabet` symbols, in lexicographic
/// order.
pub fn all_strings(alphabet: usize, len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..alphabet as u8).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}
