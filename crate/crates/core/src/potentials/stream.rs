//! Line protocol for external scorers.
//!
//! ```text
//! client: CTX <source ids...>            (once per sentence, no reply)
//! client: REUSE <iteration>              (optional, precedes SCORE)
//! client: SCORE <batch_id> <count>
//! client: <m> <l> <id_0> ... <id_m>      (count lines)
//! server: OK <batch_id> <count>
//! server: <logp>                         (count lines, `-inf` allowed)
//! server: ERR <batch_id> <message>       (instead of OK on failure)
//! ```

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::{PotentialProvider, ProviderError, ScoreBatch, SpanQuery};
use crate::vocab::{TokenId, Vocabulary};

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

/// Client side of the protocol. Wire access is serialized behind a mutex;
/// the provider itself can be shared across threads.
pub struct StreamScorer {
    vocab: Vocabulary,
    max_order: usize,
    conn: Mutex<Connection>,
    next_batch: AtomicU64,
}

fn io_to_provider(err: io::Error) -> ProviderError {
    match err.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ProviderError::Timeout,
        _ => ProviderError::Transport(err),
    }
}

impl StreamScorer {
    /// Wraps an already-open duplex byte stream.
    pub fn from_parts<R, W>(reader: R, writer: W, vocab: Vocabulary, max_order: usize) -> Self
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        StreamScorer {
            vocab,
            max_order,
            conn: Mutex::new(Connection {
                reader: Box::new(reader),
                writer: Box::new(writer),
            }),
            next_batch: AtomicU64::new(0),
        }
    }

    /// Connects over TCP. `timeout` bounds every read and write.
    pub fn connect(
        endpoint: impl ToSocketAddrs,
        vocab: Vocabulary,
        max_order: usize,
        timeout: Option<Duration>,
    ) -> Result<Self, ProviderError> {
        let stream = TcpStream::connect(endpoint).map_err(io_to_provider)?;
        stream.set_read_timeout(timeout)?;
        stream.set_write_timeout(timeout)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self::from_parts(reader, BufWriter::new(stream), vocab, max_order))
    }

    fn exchange(&self, batch: &ScoreBatch) -> Result<Vec<f64>, ProviderError> {
        for q in &batch.queries {
            super::check_span(q.order, self.max_order, &q.tokens)?;
        }
        let id = self.next_batch.fetch_add(1, Ordering::Relaxed);
        let mut conn = self.conn.lock().expect("stream connection poisoned");
        let mut frame = String::new();
        if let Some(it) = batch.iteration.filter(|&it| it > 0) {
            frame.push_str(&format!("REUSE {it}\n"));
        }
        frame.push_str(&format!("SCORE {id} {}\n", batch.queries.len()));
        for q in &batch.queries {
            frame.push_str(&format!("{} {}", q.order, q.position));
            for t in &q.tokens {
                frame.push_str(&format!(" {t}"));
            }
            frame.push('\n');
        }
        conn.writer.write_all(frame.as_bytes()).map_err(io_to_provider)?;
        conn.writer.flush().map_err(io_to_provider)?;

        let header = read_line(&mut conn.reader)?
            .ok_or_else(|| ProviderError::Protocol("connection closed before reply".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        match fields.first() {
            Some(&"ERR") => {
                if fields.get(1) != Some(&id.to_string().as_str()) {
                    return Err(ProviderError::Protocol(format!(
                        "ERR for unexpected batch: {header}"
                    )));
                }
                return Err(ProviderError::Remote(fields[2..].join(" ")));
            }
            Some(&"OK") => {}
            _ => return Err(ProviderError::Protocol(format!("unexpected reply {header:?}"))),
        }
        if fields.len() != 3 || fields[1] != id.to_string() {
            return Err(ProviderError::Protocol(format!(
                "reply {header:?} does not match batch {id}"
            )));
        }
        let count: usize = fields[2]
            .parse()
            .map_err(|_| ProviderError::Protocol(format!("bad count in {header:?}")))?;
        if count != batch.queries.len() {
            return Err(ProviderError::Protocol(format!(
                "expected {} scores, server announced {count}",
                batch.queries.len()
            )));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let line = read_line(&mut conn.reader)?
                .ok_or_else(|| ProviderError::Protocol("connection closed mid-reply".into()))?;
            let v = parse_value(line.trim())
                .ok_or_else(|| ProviderError::Protocol(format!("bad log potential {line:?}")))?;
            values.push(v);
        }
        Ok(values)
    }
}

fn read_line(reader: &mut dyn BufRead) -> Result<Option<String>, ProviderError> {
    let mut line = String::new();
    let n = reader.read_line(&mut line).map_err(io_to_provider)?;
    if n == 0 {
        return Ok(None);
    }
    if line.ends_with('\n') {
        line.pop();
        if line.ends_with('\r') {
            line.pop();
        }
    }
    Ok(Some(line))
}

fn parse_value(raw: &str) -> Option<f64> {
    if raw == "-inf" {
        return Some(f64::NEG_INFINITY);
    }
    raw.parse::<f64>().ok().filter(|v| v.is_finite())
}

impl PotentialProvider for StreamScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn max_order(&self) -> usize {
        self.max_order
    }

    fn set_context(&self, source: &[TokenId]) -> Result<(), ProviderError> {
        let mut line = String::from("CTX");
        for t in source {
            line.push_str(&format!(" {t}"));
        }
        line.push('\n');
        let mut conn = self.conn.lock().expect("stream connection poisoned");
        conn.writer.write_all(line.as_bytes()).map_err(io_to_provider)?;
        conn.writer.flush().map_err(io_to_provider)
    }

    fn score(&self, order: usize, position: usize, span: &[TokenId]) -> Result<f64, ProviderError> {
        let batch = ScoreBatch {
            iteration: None,
            queries: vec![SpanQuery {
                order,
                position,
                tokens: span.to_vec(),
            }],
        };
        Ok(self.exchange(&batch)?[0])
    }

    fn score_batch(&self, batch: &ScoreBatch) -> Result<Vec<f64>, ProviderError> {
        if batch.queries.is_empty() {
            return Ok(Vec::new());
        }
        self.exchange(batch)
    }
}

/// Counters for one served connection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub batches: u64,
    pub spans: u64,
    pub errors: u64,
    pub reuse_hints: u64,
}

fn format_value(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_query(line: &str, vocab_len: usize) -> Result<SpanQuery, String> {
    let nums: Vec<usize> = line
        .split_whitespace()
        .map(|f| f.parse::<usize>().map_err(|_| format!("bad field {f:?}")))
        .collect::<Result<_, _>>()?;
    if nums.len() < 3 {
        return Err(format!("short span line {line:?}"));
    }
    let (order, position) = (nums[0], nums[1]);
    if nums.len() != order + 3 {
        return Err(format!("order {order} needs {} token ids", order + 1));
    }
    let tokens = nums[2..]
        .iter()
        .map(|&t| {
            if t < vocab_len {
                Ok(t as TokenId)
            } else {
                Err(format!("unknown token id {t}"))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SpanQuery {
        order,
        position,
        tokens,
    })
}

/// Serves one connection until the peer closes it.
pub fn serve_connection<R: BufRead, W: Write>(
    provider: &dyn PotentialProvider,
    mut reader: R,
    mut writer: W,
) -> io::Result<ServeStats> {
    let mut stats = ServeStats::default();
    let mut reuse: Option<usize> = None;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(stats);
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.first().copied() {
            None => continue,
            Some("CTX") => {
                let ids: Result<Vec<TokenId>, _> = fields[1..].iter().map(|f| f.parse()).collect();
                let outcome = match ids {
                    Ok(ids) => provider.set_context(&ids).map_err(|e| e.to_string()),
                    Err(_) => Err("bad CTX token id".to_string()),
                };
                if let Err(msg) = outcome {
                    stats.errors += 1;
                    writeln!(writer, "ERR - {msg}")?;
                    writer.flush()?;
                }
            }
            Some("REUSE") => match fields.get(1).and_then(|f| f.parse().ok()) {
                Some(it) if fields.len() == 2 => {
                    reuse = Some(it);
                    stats.reuse_hints += 1;
                }
                _ => {
                    stats.errors += 1;
                    writeln!(writer, "ERR - malformed REUSE frame")?;
                    writer.flush()?;
                }
            },
            Some("SCORE") => {
                let id = fields.get(1).copied().unwrap_or("-").to_string();
                let count: Option<usize> = fields.get(2).and_then(|f| f.parse().ok());
                let Some(count) = count.filter(|_| fields.len() == 3) else {
                    stats.errors += 1;
                    writeln!(writer, "ERR {id} malformed SCORE header")?;
                    writer.flush()?;
                    continue;
                };
                let mut queries = Vec::with_capacity(count);
                let mut failure = None;
                for _ in 0..count {
                    let mut span_line = String::new();
                    if reader.read_line(&mut span_line)? == 0 {
                        return Ok(stats);
                    }
                    match parse_query(&span_line, provider.vocab().len()) {
                        Ok(q) => queries.push(q),
                        Err(msg) => {
                            failure.get_or_insert(msg);
                        }
                    }
                }
                let batch = ScoreBatch {
                    iteration: reuse.take(),
                    queries,
                };
                let result = match failure {
                    Some(msg) => Err(msg),
                    None => super::score_checked(provider, &batch).map_err(|e| e.to_string()),
                };
                match result {
                    Ok(values) => {
                        stats.batches += 1;
                        stats.spans += values.len() as u64;
                        let mut out = format!("OK {id} {}\n", values.len());
                        for v in values {
                            out.push_str(&format_value(v));
                            out.push('\n');
                        }
                        writer.write_all(out.as_bytes())?;
                    }
                    Err(msg) => {
                        stats.errors += 1;
                        writeln!(writer, "ERR {id} {}", msg.replace('\n', " "))?;
                    }
                }
                writer.flush()?;
            }
            Some(other) => {
                stats.errors += 1;
                writeln!(writer, "ERR - unknown frame {other:?}")?;
                writer.flush()?;
            }
        }
    }
}

/// Accepts connections one at a time and serves each until it closes.
/// Returns after `max_connections` connections when given.
pub fn serve(
    provider: &dyn PotentialProvider,
    listener: TcpListener,
    max_connections: Option<usize>,
) -> io::Result<ServeStats> {
    let mut total = ServeStats::default();
    for (n, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        let stats = serve_connection(provider, reader, BufWriter::new(stream))?;
        total.batches += stats.batches;
        total.spans += stats.spans;
        total.errors += stats.errors;
        total.reuse_hints += stats.reuse_hints;
        if max_connections.is_some_and(|max| n + 1 >= max) {
            break;
        }
    }
    Ok(total)
}
