use std::fs;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cascade_core::analysis::{sweep, RunReport, SweepGrid};
use cascade_core::cascade::{decode, DecodeConfig, LengthMode, LengthRule, PruneCriterion};
use cascade_core::potentials::{
    load_potentials, save_potentials, serve, train_ngram, NgramModel, PotentialProvider,
    StreamScorer,
};
use cascade_core::vocab::{TokenId, Vocabulary, EOS_TOKEN};

#[derive(Parser)]
#[command(name = "cascade", version, about = "Cascaded max-marginal decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an add-k smoothed m-gram model from a whitespace-tokenized corpus.
    TrainNgram {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        order: u64,
        #[arg(long, default_value_t = 1.0)]
        add_k: f64,
        corpus: PathBuf,
        out: PathBuf,
    },
    /// Decode one or more sentences.
    Decode {
        #[command(flatten)]
        scorer: ScorerArgs,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        length: LengthArgs,
        #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
        iters: u64,
        #[arg(long, default_value_t = 0, conflicts_with = "fixed_length")]
        delta_l: usize,
        /// Decode at exactly the predicted length without pad handling.
        #[arg(long)]
        fixed_length: bool,
        #[arg(long, value_enum, default_value_t = Prune::Mm)]
        prune: Prune,
        /// Write one report line per sentence to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Decode under every combination of K, iterations and ΔL.
    #[command(alias = "bench")]
    Sweep {
        #[command(flatten)]
        scorer: ScorerArgs,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        length: LengthArgs,
        #[arg(long, value_delimiter = ',', required = true, value_parser = clap::value_parser!(u64).range(1..))]
        k: Vec<u64>,
        #[arg(long, value_delimiter = ',', required = true, value_parser = clap::value_parser!(u64).range(1..))]
        iters: Vec<u64>,
        /// Window half-widths; `fixed` decodes at exactly the predicted length.
        #[arg(long, value_delimiter = ',', default_value = "0", value_parser = parse_delta)]
        delta_l: Vec<DeltaArg>,
        #[arg(long, value_enum, default_value_t = Prune::Mm)]
        prune: Prune,
        /// Add the exhaustive optimum to each row when the space is small.
        #[arg(long)]
        oracle: bool,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a potential table file.
    Validate { file: PathBuf },
    /// Tabulate a scorer's potentials into a potential table file.
    ExportPotentials {
        #[command(flatten)]
        scorer: ScorerArgs,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        length: u64,
        #[arg(long)]
        orders: usize,
        out: PathBuf,
    },
    /// Serve a scorer over the line protocol.
    Serve {
        #[command(flatten)]
        scorer: ScorerArgs,
        #[arg(long)]
        listen: String,
        /// Exit after this many connections.
        #[arg(long)]
        max_connections: Option<usize>,
    },
}

#[derive(Args)]
struct ScorerArgs {
    /// `ngram:<model>`, `file:<table>` or `stream:<host:port>`.
    #[arg(long)]
    scorer: String,
    /// Token list, one per line, for stream scorers.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Highest order a stream scorer supports.
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
}

#[derive(Args)]
struct InputArgs {
    /// A single whitespace-tokenized sentence.
    #[arg(long, conflicts_with = "input")]
    text: Option<String>,
    /// File with one sentence per line.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct LengthArgs {
    /// Predicted length, eos included; overrides the affine rule.
    #[arg(long)]
    length: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    length_slope: f64,
    #[arg(long, default_value_t = 0.0)]
    length_intercept: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Prune {
    Mm,
    Ngram,
}

#[derive(Clone, Copy)]
enum DeltaArg {
    Fixed,
    Window(usize),
}

fn parse_delta(s: &str) -> Result<DeltaArg, String> {
    if s == "fixed" {
        return Ok(DeltaArg::Fixed);
    }
    s.parse()
        .map(DeltaArg::Window)
        .map_err(|_| format!("expected a non-negative integer or `fixed`, got `{s}`"))
}

enum Usage {
    Bad(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Usage {
    fn from(e: E) -> Self {
        Usage::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Usage::Bad(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Usage::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<(), Usage> {
    match command {
        Command::TrainNgram {
            order,
            add_k,
            corpus,
            out,
        } => {
            if !(add_k > 0.0 && add_k.is_finite()) {
                return Err(Usage::Bad(format!("--add-k must be positive, got {add_k}")));
            }
            let text = fs::read_to_string(&corpus)
                .with_context(|| format!("reading {}", corpus.display()))?;
            let sentences: Vec<Vec<String>> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    let mut s: Vec<String> = l.split_whitespace().map(str::to_string).collect();
                    if s.last().map(String::as_str) != Some(EOS_TOKEN) {
                        s.push(EOS_TOKEN.to_string());
                    }
                    s
                })
                .collect();
            let model = train_ngram(&sentences, order as usize, add_k)?;
            model.save(&out).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "vocab={} sentences={}",
                model.vocab().len(),
                model.sentence_count()
            );
            Ok(())
        }
        Command::Decode {
            scorer,
            input,
            length,
            k,
            iters,
            delta_l,
            fixed_length,
            prune,
            report,
        } => {
            let provider = open_scorer(&scorer)?;
            let sentences = read_input(&input)?;
            let cfg = DecodeConfig {
                k_limit: k as usize,
                iterations: iters as usize,
                length: if fixed_length {
                    LengthMode::Fixed
                } else {
                    LengthMode::Window { delta_l }
                },
                length_rule: length_rule(&length),
                criterion: criterion(prune),
                ..DecodeConfig::default()
            };
            let mut lines = Vec::new();
            let stdout = io::stdout();
            let mut out = stdout.lock();
            for (i, words) in sentences.iter().enumerate() {
                let src = source_ids(provider.as_ref(), &scorer, words)?;
                let d = decode(&src, provider.as_ref(), &cfg)
                    .with_context(|| format!("sentence {i}"))?;
                let toks = provider.vocab().decode(&d.tokens).map_err(anyhow::Error::from)?;
                writeln!(out, "score={} tokens={}", d.log_score, toks.join(" "))
                    .map_err(anyhow::Error::from)?;
                if report.is_some() {
                    let ms = |x: Duration| x.as_secs_f64() * 1e3;
                    let t = d.diagnostics.times;
                    lines.push(
                        RunReport {
                            source: i,
                            k: cfg.k_limit,
                            iters: cfg.iterations,
                            delta_l: (!fixed_length).then_some(delta_l),
                            score: Some(d.log_score),
                            tokens: toks.iter().map(|s| s.to_string()).collect(),
                            iterations: d.diagnostics.iterations,
                            ms_total: ms(t.total),
                            ms_scan: ms(t.scan),
                            ms_potentials: ms(t.potentials),
                            ms_prune: ms(t.prune),
                            oracle: None,
                            error: None,
                        }
                        .to_line(),
                    );
                }
            }
            if let Some(path) = report {
                write_lines(&path, &lines)?;
            }
            Ok(())
        }
        Command::Sweep {
            scorer,
            input,
            length,
            k,
            iters,
            delta_l,
            prune,
            oracle,
            jobs,
            out,
        } => {
            if k.is_empty() || iters.is_empty() || delta_l.is_empty() {
                return Err(Usage::Bad("sweep grid is empty".into()));
            }
            let provider = open_scorer(&scorer)?;
            let sentences = read_input(&input)?;
            let sources = sentences
                .iter()
                .map(|w| source_ids(provider.as_ref(), &scorer, w))
                .collect::<Result<Vec<_>, _>>()?;
            let grid = SweepGrid {
                ks: k.iter().map(|&v| v as usize).collect(),
                iters: iters.iter().map(|&v| v as usize).collect(),
                delta_ls: delta_l
                    .iter()
                    .map(|d| match d {
                        DeltaArg::Fixed => None,
                        DeltaArg::Window(w) => Some(*w),
                    })
                    .collect(),
            };
            let base = DecodeConfig {
                length_rule: length_rule(&length),
                criterion: criterion(prune),
                ..DecodeConfig::default()
            };
            let rows = sweep(&sources, provider.as_ref(), &grid, &base, oracle, jobs)
                .map_err(anyhow::Error::from)?;
            let lines: Vec<String> = rows.iter().map(RunReport::to_line).collect();
            match out {
                Some(path) => write_lines(&path, &lines)?,
                None => {
                    let stdout = io::stdout();
                    let mut w = stdout.lock();
                    for l in &lines {
                        writeln!(w, "{l}").map_err(anyhow::Error::from)?;
                    }
                }
            }
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                eprintln!("{failed} of {} cells failed", rows.len());
            }
            if failed == rows.len() {
                return Err(Usage::Runtime(anyhow::anyhow!("every sweep cell failed")));
            }
            Ok(())
        }
        Command::Validate { file } => {
            let table = load_potentials(&file).with_context(|| format!("{}", file.display()))?;
            println!(
                "ok vocab={} orders={} length={} records={}",
                table.vocab().len(),
                table.max_order(),
                table.length(),
                table.len()
            );
            Ok(())
        }
        Command::ExportPotentials {
            scorer,
            length,
            orders,
            out,
        } => {
            let provider = open_scorer(&scorer)?;
            if orders > provider.max_order() {
                return Err(Usage::Bad(format!(
                    "--orders {orders} exceeds the scorer's maximum order {}",
                    provider.max_order()
                )));
            }
            let file = save_potentials(provider.as_ref(), length as usize, orders, &out)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            println!("records={}", file.len());
            Ok(())
        }
        Command::Serve {
            scorer,
            listen,
            max_connections,
        } => {
            let provider = open_scorer(&scorer)?;
            let listener =
                TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            eprintln!("listening on {}", listener.local_addr().map_err(anyhow::Error::from)?);
            let stats = serve(provider.as_ref(), listener, max_connections)
                .map_err(anyhow::Error::from)?;
            eprintln!(
                "batches={} spans={} errors={} reuse_hints={}",
                stats.batches, stats.spans, stats.errors, stats.reuse_hints
            );
            Ok(())
        }
    }
}

fn open_scorer(args: &ScorerArgs) -> Result<Box<dyn PotentialProvider>, Usage> {
    let (kind, target) = args
        .scorer
        .split_once(':')
        .ok_or_else(|| Usage::Bad(format!("scorer `{}` needs a kind prefix", args.scorer)))?;
    match kind {
        "ngram" => Ok(Box::new(
            NgramModel::load(target).with_context(|| format!("loading {target}"))?,
        )),
        "file" => Ok(Box::new(
            load_potentials(target).with_context(|| format!("loading {target}"))?,
        )),
        "stream" => {
            let (Some(vocab_path), Some(max_order)) = (&args.vocab, args.max_order) else {
                return Err(Usage::Bad(
                    "stream scorers need --vocab and --max-order".into(),
                ));
            };
            let vocab = read_vocab(vocab_path)?;
            let timeout = Some(Duration::from_millis(args.timeout_ms));
            Ok(Box::new(
                StreamScorer::connect(target, vocab, max_order, timeout)
                    .with_context(|| format!("connecting to {target}"))?,
            ))
        }
        other => Err(Usage::Bad(format!(
            "unknown scorer kind `{other}`; use ngram:, file: or stream:"
        ))),
    }
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Vocabulary::new(
        text.lines().map(str::trim).filter(|l| !l.is_empty()),
    )?)
}

fn read_input(input: &InputArgs) -> Result<Vec<Vec<String>>, Usage> {
    let text = match (&input.text, &input.input) {
        (Some(t), None) => t.clone(),
        (None, Some(p)) => {
            fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?
        }
        _ => return Err(Usage::Bad("give exactly one of --text or --input".into())),
    };
    let sentences: Vec<Vec<String>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    if sentences.is_empty() {
        return Err(Usage::Runtime(anyhow::anyhow!("no input sentences")));
    }
    Ok(sentences)
}

/// Source ids for the scorer's context. Stream scorers condition on the
/// source, so every word must be in their vocabulary; the local scorers only
/// use its length.
fn source_ids(
    provider: &dyn PotentialProvider,
    args: &ScorerArgs,
    words: &[String],
) -> Result<Vec<TokenId>, Usage> {
    match provider.vocab().encode(words) {
        Ok(ids) => Ok(ids),
        Err(e) if args.scorer.starts_with("stream:") => Err(Usage::Runtime(e.into())),
        Err(_) => Ok(vec![provider.vocab().eos(); words.len()]),
    }
}

fn length_rule(args: &LengthArgs) -> LengthRule {
    match args.length {
        Some(n) => LengthRule::Exact(n),
        None => LengthRule::Affine {
            slope: args.length_slope,
            intercept: args.length_intercept,
        },
    }
}

fn criterion(p: Prune) -> PruneCriterion {
    match p {
        Prune::Mm => PruneCriterion::MaxMarginal,
        Prune::Ngram => PruneCriterion::RawScore,
    }
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
