use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::{check_span, PotentialProvider, ProviderError, ScoreBatch, SpanQuery};
use crate::vocab::{TokenId, Vocabulary};

const MAGIC: &str = "markov-potentials";

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

fn syntax(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        message: message.into(),
    }
}

type Key = (usize, usize, Vec<TokenId>);

/// Static table of stored log potentials. Absent spans score `-∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialFile {
    vocab: Vocabulary,
    max_order: usize,
    length: usize,
    records: HashMap<Key, f64>,
}

impl PotentialFile {
    pub fn new(vocab: Vocabulary, max_order: usize, length: usize) -> Self {
        PotentialFile {
            vocab,
            max_order,
            length,
            records: HashMap::new(),
        }
    }

    /// Lattice length the table was written for.
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, order: usize, position: usize, span: &[TokenId]) -> Option<f64> {
        self.records.get(&(order, position, span.to_vec())).copied()
    }

    /// Inserts a record, returning the previous value if the key existed.
    pub fn insert(&mut self, order: usize, position: usize, span: Vec<TokenId>, logp: f64) -> Option<f64> {
        self.records.insert((order, position, span), logp)
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let eof_line = text.lines().count() + 1;
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| syntax(eof_line, format!("unexpected end of file, expected {what}")))
        };

        let (ln, header) = next("header")?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) || parts.next() != Some("1") || parts.next().is_some() {
            return Err(syntax(ln, format!("expected `{MAGIC} 1`")));
        }

        let (ln, vocab_line) = next("vocab count")?;
        let n = keyword_value(ln, vocab_line, "vocab")?;
        let mut slots: Vec<Option<String>> = vec![None; n];
        let mut vocab_end = ln;
        for _ in 0..n {
            let (ln, entry) = next("vocab entry")?;
            vocab_end = ln;
            let mut parts = entry.split_whitespace();
            let id: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| syntax(ln, "expected `<id> <token>`"))?;
            let tok = parts.next().ok_or_else(|| syntax(ln, "missing token"))?;
            if parts.next().is_some() {
                return Err(syntax(ln, "trailing fields in vocab entry"));
            }
            let slot = slots
                .get_mut(id)
                .ok_or_else(|| syntax(ln, format!("token id {id} outside 0..{n}")))?;
            if slot.is_some() {
                return Err(syntax(ln, format!("duplicate token id {id}")));
            }
            *slot = Some(tok.to_string());
        }
        let tokens: Vec<String> = slots.into_iter().map(|s| s.expect("all ids filled")).collect();
        let vocab = Vocabulary::new(tokens).map_err(|e| syntax(vocab_end, e.to_string()))?;

        let (ln, orders_line) = next("orders")?;
        let max_order = keyword_value(ln, orders_line, "orders")?;
        let (ln, length_line) = next("length")?;
        let length = keyword_value(ln, length_line, "length")?;
        if length == 0 {
            return Err(syntax(ln, "length must be positive"));
        }

        let mut file = PotentialFile::new(vocab, max_order, length);
        for (ln, rec) in lines {
            let fields: Vec<&str> = rec.split_whitespace().collect();
            if fields.first() != Some(&"p") || fields.len() < 5 {
                return Err(syntax(ln, "expected `p <m> <l> <id_0> ... <id_m> <logp>`"));
            }
            let m: usize = fields[1]
                .parse()
                .map_err(|_| syntax(ln, format!("bad order {:?}", fields[1])))?;
            let l: usize = fields[2]
                .parse()
                .map_err(|_| syntax(ln, format!("bad position {:?}", fields[2])))?;
            if fields.len() != m + 5 {
                return Err(syntax(ln, format!("order {m} needs {} token ids", m + 1)));
            }
            if m > max_order {
                return Err(syntax(ln, format!("order {m} exceeds declared orders {max_order}")));
            }
            if l + m >= length {
                return Err(syntax(ln, format!("span at {l} of order {m} runs past length {length}")));
            }
            let mut span = Vec::with_capacity(m + 1);
            for f in &fields[3..3 + m + 1] {
                let id: TokenId = f
                    .parse()
                    .map_err(|_| syntax(ln, format!("bad token id {f:?}")))?;
                if id as usize >= file.vocab.len() {
                    return Err(syntax(ln, format!("unknown token id {id}")));
                }
                span.push(id);
            }
            let raw = fields[m + 4];
            let logp = parse_logp(raw).ok_or_else(|| syntax(ln, format!("bad log potential {raw:?}")))?;
            if file.insert(m, l, span, logp).is_some() {
                return Err(syntax(ln, "duplicate record"));
            }
        }
        Ok(file)
    }

    /// Serializes in a canonical order (by order, position, span).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} 1");
        let _ = writeln!(out, "vocab {}", self.vocab.len());
        for (i, t) in self.vocab.tokens().iter().enumerate() {
            let _ = writeln!(out, "{i} {t}");
        }
        let _ = writeln!(out, "orders {}", self.max_order);
        let _ = writeln!(out, "length {}", self.length);
        let sorted: BTreeMap<&Key, f64> = self.records.iter().map(|(k, &v)| (k, v)).collect();
        for ((m, l, span), v) in sorted {
            let _ = write!(out, "p {m} {l}");
            for t in span {
                let _ = write!(out, " {t}");
            }
            let _ = writeln!(out, " {v}");
        }
        out
    }
}

fn keyword_value(line: usize, text: &str, keyword: &str) -> Result<usize, ParseError> {
    let mut parts = text.split_whitespace();
    if parts.next() != Some(keyword) {
        return Err(syntax(line, format!("expected `{keyword} <n>`")));
    }
    let value = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| syntax(line, format!("expected `{keyword} <n>`")))?;
    if parts.next().is_some() {
        return Err(syntax(line, format!("trailing fields after `{keyword}`")));
    }
    Ok(value)
}

/// Decimal float or the literal `-inf`; NaN and `+∞` are rejected.
fn parse_logp(raw: &str) -> Option<f64> {
    if raw == "-inf" {
        return Some(f64::NEG_INFINITY);
    }
    let lower = raw.to_ascii_lowercase();
    if lower.contains("inf") || lower.contains("nan") {
        return None;
    }
    raw.parse::<f64>().ok().filter(|v| v.is_finite())
}

impl PotentialProvider for PotentialFile {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn max_order(&self) -> usize {
        self.max_order
    }

    fn score(&self, order: usize, position: usize, span: &[TokenId]) -> Result<f64, ProviderError> {
        check_span(order, self.max_order, span)?;
        Ok(self.get(order, position, span).unwrap_or(f64::NEG_INFINITY))
    }
}

pub fn load_potentials(path: impl AsRef<Path>) -> Result<PotentialFile, ParseError> {
    PotentialFile::parse(&std::fs::read_to_string(path)?)
}

/// Tabulates every emittable span of orders `0..=max_order` at every
/// position of a lattice of `length` tokens. Only sensible for tiny
/// vocabularies: the table has `Σ_m V^(m+1) · (length - m)` records.
pub fn tabulate(
    provider: &dyn PotentialProvider,
    length: usize,
    max_order: usize,
) -> Result<PotentialFile, ProviderError> {
    let vocab = provider.vocab().clone();
    let emit: Vec<TokenId> = vocab.emittable().collect();
    let mut queries = Vec::new();
    for m in 0..=max_order.min(length.saturating_sub(1)) {
        let combos = emit.len().pow(m as u32 + 1);
        for code in 0..combos {
            let mut rest = code;
            let mut tokens = vec![0; m + 1];
            for slot in tokens.iter_mut().rev() {
                *slot = emit[rest % emit.len()];
                rest /= emit.len();
            }
            for l in 0..length - m {
                queries.push(SpanQuery {
                    order: m,
                    position: l,
                    tokens: tokens.clone(),
                });
            }
        }
    }
    let batch = ScoreBatch {
        iteration: None,
        queries,
    };
    let values = super::score_checked(provider, &batch)?;
    let mut file = PotentialFile::new(vocab, max_order, length);
    for (q, v) in batch.queries.into_iter().zip(values) {
        file.insert(q.order, q.position, q.tokens, v);
    }
    Ok(file)
}

pub fn save_potentials(
    provider: &dyn PotentialProvider,
    length: usize,
    max_order: usize,
    path: impl AsRef<Path>,
) -> Result<PotentialFile, Box<dyn std::error::Error + Send + Sync>> {
    let file = tabulate(provider, length, max_order)?;
    std::fs::write(path, file.to_text())?;
    Ok(file)
}
