use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use factorizer::analysis::{self, IndexHistogram, NoiseConfig, NoiseKind};
use factorizer::autoencoder::OptimizerKind;
use factorizer::bpe::MergeTable;
use factorizer::symbols::{render_symbols, split_words};
use factorizer::tokenizer::{self, pack_triplets, split_triplet_words, unpack_triplets};
use factorizer::vocab::{build_from_checkpoint, BuildOptions};
use factorizer::{
    synthetic, BoundedWord, Checkpoint, Error, ModelConfig, ScoreParams, Tokenization, Tokenizer, Trainer, Triplet,
    Vocabulary, WordFrequencyList,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "factorizer", version, about = "Factorized subword tokenization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count whitespace-separated words of a corpus into a TSV frequency list.
    Freq {
        /// Corpus text; `-` or absent reads stdin.
        input: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write a synthetic frequency list (test fixture).
    Synthetic {
        #[arg(long, default_value_t = 200)]
        words: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train the autoencoder on a TSV frequency list.
    Train(TrainArgs),
    /// Decode the used triplets of a checkpoint into a vocabulary.
    BuildVocab {
        checkpoint: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        beam_width: Option<usize>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Do not inject byte fallback entries.
        #[arg(long)]
        no_fallbacks: bool,
        /// Write pruned collisions as TSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Inspect or export a vocabulary.
    Vocab {
        #[command(subcommand)]
        command: VocabCommand,
    },
    /// Segment text into subwords, one word per output line.
    Tokenize(TokenizeArgs),
    /// Turn triplets back into text, one word per output line.
    Detokenize {
        vocab: PathBuf,
        input: Option<PathBuf>,
        /// Read packed binary triplets instead of `subword:r,g,b` lines.
        #[arg(long)]
        bin: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train a BPE merge table on a TSV frequency list.
    BpeTrain {
        freq: PathBuf,
        #[arg(long)]
        vocab_size: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Encode text with a merge table, one word per output line.
    BpeEncode {
        merges: PathBuf,
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = TextFormat::Text)]
        format: TextFormat,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Mean pieces per word over a corpus for a grid of split penalties.
    Stats {
        vocab: PathBuf,
        corpus: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.5,1,5,50")]
        grid: Vec<f64>,
        #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
        format: TableFormat,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Mean pieces per word for BPE at several vocabulary sizes.
    BpeStats {
        /// TSV frequency list to train the merge tables on.
        train: PathBuf,
        corpus: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
        format: TableFormat,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Index histogram of a tokenized corpus.
    Histogram(HistogramArgs),
    /// Perturb characters of a text at a fixed rate.
    Noise {
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        p_noise: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Apply only this perturbation.
        #[arg(long, value_enum)]
        only: Option<NoiseArg>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Render the triplets of a tokenized text as RGB colors.
    Colorize {
        vocab: PathBuf,
        input: Option<PathBuf>,
        #[arg(long, default_value_t = tokenizer::DEFAULT_ALPHA_SPLIT)]
        alpha_split: f64,
        #[arg(long)]
        html: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum VocabCommand {
    /// Entry count, codebook size and automaton size.
    Info {
        vocab: PathBuf,
        #[arg(long, value_enum, default_value_t = InfoFormat::Text)]
        format: InfoFormat,
    },
    /// `subword<TAB>r,g,b<TAB>logprob<TAB>kind` lines.
    Export {
        vocab: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compile an exported TSV back into a vocabulary file.
    Import {
        tsv: PathBuf,
        #[arg(long)]
        codebook_size: usize,
        /// Complete the entries with byte fallbacks.
        #[arg(long)]
        add_fallbacks: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    freq: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Continue from this checkpoint; its configuration wins over flags.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Start from the full-scale configuration instead of the desk one.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    codebook_size: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    final_learning_rate: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Args)]
struct TokenizeArgs {
    vocab: PathBuf,
    /// Text to tokenize; `-` or absent reads stdin.
    input: Option<PathBuf>,
    #[arg(long, default_value_t = tokenizer::DEFAULT_ALPHA_SPLIT)]
    alpha_split: f64,
    #[arg(long, default_value_t = tokenizer::DEFAULT_SIGMA_SAMPLE)]
    sigma_sample: f64,
    /// Emit this many sampled segmentations per word instead of the best one.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = TokenFormat::Text)]
    format: TokenFormat,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct HistogramArgs {
    corpus: Option<PathBuf>,
    /// Factorizer vocabulary: one histogram per channel.
    #[arg(long, conflicts_with = "bpe", required_unless_present = "bpe")]
    vocab: Option<PathBuf>,
    /// BPE merge table: one histogram of token ids.
    #[arg(long)]
    bpe: Option<PathBuf>,
    #[arg(long, default_value_t = tokenizer::DEFAULT_ALPHA_SPLIT)]
    alpha_split: f64,
    /// Print per-channel entropies instead of counts.
    #[arg(long)]
    entropy: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TokenFormat {
    Text,
    Json,
    Tsv,
    Bin,
}

#[derive(Clone, Copy, ValueEnum)]
enum TextFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Tsv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum InfoFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Delete,
    Case,
    Repeat,
}

enum Failure {
    /// Bad input, flags or I/O: exit code 2.
    Usage(String),
    /// The work itself failed (coverage, divergence): exit code 1.
    Domain(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Domain(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(format!("I/O error: {e}"))
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Freq { input, output } => {
            let list = WordFrequencyList::extract(open_input(input.as_deref())?)?;
            let mut out = open_output(output.as_deref())?;
            list.write_tsv(&mut out)?;
            finish(out)
        }
        Command::Synthetic { words, seed, output } => {
            let list = synthetic::frequency_list(words, seed);
            let mut out = open_output(output.as_deref())?;
            list.write_tsv(&mut out)?;
            finish(out)
        }
        Command::Train(args) => train(args),
        Command::BuildVocab {
            checkpoint,
            output,
            beam_width,
            threads,
            no_fallbacks,
            report,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            check_output(&output)?;
            let opts = BuildOptions {
                beam_width: beam_width.unwrap_or(ckpt.config.beam_width),
                byte_fallbacks: !no_fallbacks,
                threads,
            };
            let (vocab, rep) = build_from_checkpoint(&ckpt, &opts)?;
            log::info!(
                "{} used triplets, {} distinct subwords, {} pruned, {} forced, {} fallbacks, {} entries",
                rep.used_triplets,
                rep.distinct_subwords,
                rep.pruned.len(),
                rep.forced,
                rep.fallbacks,
                vocab.len()
            );
            if let Some(path) = report {
                let mut out = open_output(Some(&path))?;
                writeln!(out, "subword\ttriplet\tlogprob\treason\twinner")?;
                for p in &rep.pruned {
                    writeln!(out, "{}\t{}\t{}\t{:?}\t{}", p.subword, p.triplet, p.logprob, p.reason, p.winner)?;
                }
                finish(out)?;
            }
            vocab.save(&output)?;
            Ok(())
        }
        Command::Vocab { command } => match command {
            VocabCommand::Info { vocab, format } => vocab_info(&load_vocab(&vocab)?, format),
            VocabCommand::Export { vocab, output } => {
                let v = load_vocab(&vocab)?;
                let mut out = open_output(output.as_deref())?;
                v.write_tsv(&mut out)?;
                finish(out)
            }
            VocabCommand::Import {
                tsv,
                codebook_size,
                add_fallbacks,
                output,
            } => {
                check_output(&output)?;
                let v = with_path(&tsv, Vocabulary::read_tsv(codebook_size, open_input(Some(&tsv))?))?;
                let v = if add_fallbacks {
                    let learned = v.entries().iter().filter(|e| !e.fallback).cloned().collect();
                    Vocabulary::with_byte_fallbacks(codebook_size, learned)?
                } else {
                    v
                };
                v.save(&output)?;
                Ok(())
            }
        },
        Command::Tokenize(args) => tokenize(args),
        Command::Detokenize {
            vocab,
            input,
            bin,
            output,
        } => detokenize(&load_vocab(&vocab)?, input.as_deref(), bin, output.as_deref()),
        Command::BpeTrain {
            freq,
            vocab_size,
            output,
        } => {
            let list = load_freq(&freq)?;
            let mut out = open_output(output.as_deref())?;
            let table = MergeTable::train(&list, vocab_size)?;
            log::info!("{} merges, {} tokens", table.merges().len(), table.num_tokens());
            table.write(&mut out)?;
            finish(out)
        }
        Command::BpeEncode {
            merges,
            input,
            dropout,
            seed,
            format,
            output,
        } => {
            let table = load_merges(&merges)?;
            let text = read_all(input.as_deref())?;
            let mut out = open_output(output.as_deref())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for w in split_words(&text) {
                let ids = table.encode(w, dropout, Some(&mut rng))?;
                match format {
                    TextFormat::Text => {
                        let parts: Vec<String> = ids
                            .iter()
                            .map(|&t| format!("{}:{t}", render_symbols(table.expansion(t))))
                            .collect();
                        writeln!(out, "{}", parts.join(" "))?;
                    }
                    TextFormat::Json => {
                        let pieces: Vec<String> = ids.iter().map(|&t| render_symbols(table.expansion(t))).collect();
                        let line = json!({
                            "word": String::from_utf8_lossy(w),
                            "tokens": ids,
                            "pieces": pieces,
                        });
                        writeln!(out, "{line}")?;
                    }
                }
            }
            finish(out)
        }
        Command::Stats {
            vocab,
            corpus,
            grid,
            format,
            output,
        } => {
            let tok = Tokenizer::new(load_vocab(&vocab)?, ScoreParams::deterministic(tokenizer::DEFAULT_ALPHA_SPLIT))?;
            let list = WordFrequencyList::extract(open_input(corpus.as_deref())?)?;
            let rows = analysis::splits_per_word(&tok, &list, &grid)?;
            write_table(&rows, "alpha_split", format, output.as_deref())
        }
        Command::BpeStats {
            train,
            corpus,
            sizes,
            format,
            output,
        } => {
            let train = load_freq(&train)?;
            let list = WordFrequencyList::extract(open_input(corpus.as_deref())?)?;
            let rows = analysis::bpe_splits_per_word(&train, &list, &sizes)?;
            write_table(&rows, "vocab_size", format, output.as_deref())
        }
        Command::Histogram(args) => histogram(args),
        Command::Noise {
            input,
            p_noise,
            seed,
            only,
            output,
        } => {
            let text = read_all(input.as_deref())?;
            let text = String::from_utf8(text).map_err(|_| Failure::Usage("noise input is not valid UTF-8".into()))?;
            let mut cfg = NoiseConfig::new(p_noise, seed)?;
            cfg.forced = only.map(|k| match k {
                NoiseArg::Delete => NoiseKind::Delete,
                NoiseArg::Case => NoiseKind::ChangeCase,
                NoiseArg::Repeat => NoiseKind::Repeat,
            });
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (noisy, stats) = analysis::perturb(&text, &cfg, &mut rng)?;
            log::info!(
                "{} of {} characters perturbed ({} deleted, {} case changed, {} repeated)",
                stats.perturbed(),
                stats.chars,
                stats.deleted,
                stats.case_changed,
                stats.repeated
            );
            let mut out = open_output(output.as_deref())?;
            out.write_all(noisy.as_bytes())?;
            finish(out)
        }
        Command::Colorize {
            vocab,
            input,
            alpha_split,
            html,
            output,
        } => {
            let v = load_vocab(&vocab)?;
            let k = v.codebook_size();
            let tok = Tokenizer::new(v, ScoreParams::deterministic(alpha_split))?;
            let text = read_all(input.as_deref())?;
            let ts = tok.tokenize_text(&text)?;
            let report = analysis::colorize(k, &ts);
            let mut out = open_output(output.as_deref())?;
            let s = if html { report.to_html() } else { report.to_text() };
            out.write_all(s.as_bytes())?;
            finish(out)
        }
    }
}

fn train(args: TrainArgs) -> CliResult {
    let list = load_freq(&args.freq)?;
    check_output(&args.output)?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let mut t = Trainer::resume(ckpt, &list)?;
            if let Some(steps) = args.steps {
                t.set_total_steps(steps)?;
            }
            t
        }
        None => Trainer::new(&list, model_config(&args), args.seed)?,
    };
    let total = trainer.config().steps;
    log::info!(
        "training {} words for {} steps (starting at step {})",
        list.len(),
        total,
        trainer.step_count()
    );
    let every = args.log_every.max(1);
    let result = trainer.run(|r| {
        if (r.step + 1) % every == 0 || r.step + 1 == total {
            let [h0, h1, h2] = r.usage_entropy;
            log::info!(
                "step {:>6} loss {:.4} rec {:.4} commit {:.4} lr {:.2e} entropy {:.3}/{:.3}/{:.3} resets {}",
                r.step + 1,
                r.loss,
                r.reconstruction,
                r.commitment,
                r.learning_rate,
                h0,
                h1,
                h2,
                r.resets
            );
        }
    });
    if let Err(e @ Error::Divergence { .. }) = result {
        let mut dump = args.output.clone().into_os_string();
        dump.push(".diverged");
        let dump = PathBuf::from(dump);
        trainer.checkpoint().save(&dump)?;
        return Err(Failure::Domain(format!("{e}; state dumped to {}", dump.display())));
    }
    result?;
    log::info!("{} codebook resets in total", trainer.total_resets());
    trainer.checkpoint().save(&args.output)?;
    Ok(())
}

fn model_config(args: &TrainArgs) -> ModelConfig {
    let mut c = if args.full_scale {
        ModelConfig::full_scale()
    } else {
        ModelConfig::default()
    };
    if let Some(v) = args.steps {
        c.steps = v;
    }
    if let Some(v) = args.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = args.codebook_size {
        c.codebook_size = v;
    }
    if let Some(v) = args.latent_dim {
        c.latent_dim = v;
    }
    if let Some(v) = args.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = args.final_learning_rate {
        c.final_learning_rate = v;
    }
    if let Some(v) = args.warmup_steps {
        c.warmup_steps = v;
    }
    if let Some(v) = args.beta {
        c.beta = v;
    }
    if let Some(v) = args.optimizer {
        c.optimizer = match v {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        };
    }
    c
}

fn tokenize(args: TokenizeArgs) -> CliResult {
    let vocab = load_vocab(&args.vocab)?;
    let k = vocab.codebook_size();
    let params = match args.samples {
        Some(_) => ScoreParams::sampling(args.alpha_split, args.sigma_sample),
        None => ScoreParams::deterministic(args.alpha_split),
    };
    let tok = Tokenizer::new(vocab, params)?;
    let input = open_input(args.input.as_deref())?;
    let mut out = open_output(args.output.as_deref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    if matches!(args.format, TokenFormat::Tsv) {
        writeln!(out, "word\tsample\tpiece\tsubword\ttriplet\tscore")?;
    }
    // Line by line keeps memory bounded on large inputs; the generator is
    // consumed in the same word order as `Tokenizer::sample_text`.
    for line in input.split(b'\n') {
        let line = line?;
        for w in split_words(&line) {
            let word = BoundedWord::word(w)?;
            let results = match args.samples {
                Some(n) => tok.sample_tokenizations(&word, &mut rng, n)?,
                None => vec![tok.tokenize_word(&word)?],
            };
            for (s, t) in results.iter().enumerate() {
                write_tokenization(&mut out, args.format, w, s, t, k)?;
            }
        }
    }
    finish(out)
}

fn write_tokenization(
    out: &mut impl Write,
    format: TokenFormat,
    word: &[u8],
    sample: usize,
    t: &Tokenization,
    k: usize,
) -> CliResult {
    match format {
        TokenFormat::Text => writeln!(out, "{}", t.render())?,
        TokenFormat::Json => {
            let pieces: Vec<_> = t
                .pieces
                .iter()
                .map(|p| {
                    json!({
                        "subword": p.subword.to_string(),
                        "triplet": p.triplet.0,
                        "score": p.score,
                    })
                })
                .collect();
            let line = json!({
                "word": render_symbols(&word.iter().map(|&b| b as u16).collect::<Vec<_>>()),
                "sample": sample,
                "pieces": pieces,
                "total_score": t.total_score,
            });
            writeln!(out, "{line}")?;
        }
        TokenFormat::Tsv => {
            let w = render_symbols(&word.iter().map(|&b| b as u16).collect::<Vec<_>>());
            for (i, p) in t.pieces.iter().enumerate() {
                writeln!(out, "{w}\t{sample}\t{i}\t{}\t{}\t{}", p.subword, p.triplet, p.score)?;
            }
        }
        TokenFormat::Bin => out.write_all(&pack_triplets(&t.triplets(), k))?,
    }
    Ok(())
}

fn detokenize(vocab: &Vocabulary, input: Option<&Path>, bin: bool, output: Option<&Path>) -> CliResult {
    let data = read_all(input)?;
    let words: Vec<Vec<Triplet>> = if bin {
        split_triplet_words(&unpack_triplets(&data, vocab.codebook_size())?, vocab)?
    } else {
        let text = String::from_utf8(data).map_err(|_| Failure::Usage("detokenize input is not valid UTF-8".into()))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, line)| parse_triplet_line(line).map_err(|e| Failure::Usage(format!("line {}: {e}", n + 1))))
            .collect::<CliResult<_>>()?
    };
    let mut out = open_output(output)?;
    let mut offset = 0;
    for w in &words {
        let bytes = tokenizer::detokenize(w, vocab).map_err(|e| match e {
            Error::UnknownTriplet { position, r, g, b } => Error::UnknownTriplet {
                position: position + offset,
                r,
                g,
                b,
            },
            e => e,
        })?;
        out.write_all(&bytes)?;
        out.write_all(b"\n")?;
        offset += w.len();
    }
    finish(out)
}

/// Triplets of a `subword:r,g,b ...` line; only the text after the last
/// colon of each piece is read.
fn parse_triplet_line(line: &str) -> Result<Vec<Triplet>, String> {
    line.split_whitespace()
        .map(|piece| {
            let t = piece.rsplit(':').next().unwrap_or(piece);
            t.parse::<Triplet>()
        })
        .collect()
}

fn histogram(args: HistogramArgs) -> CliResult {
    let list = WordFrequencyList::extract(open_input(args.corpus.as_deref())?)?;
    let h = if let Some(path) = &args.bpe {
        let table = load_merges(path)?;
        let mut h = IndexHistogram::tokens(table.num_tokens());
        for (w, f) in list.entries() {
            h.add_tokens(&table.encode::<ChaCha8Rng>(w, 0.0, None)?, *f);
        }
        h
    } else {
        let vocab = load_vocab(args.vocab.as_deref().expect("clap requires --vocab or --bpe"))?;
        let mut h = IndexHistogram::triplets(vocab.codebook_size());
        let tok = Tokenizer::new(vocab, ScoreParams::deterministic(args.alpha_split))?;
        for (w, f) in list.entries() {
            h.add_tokenization(&tok.tokenize_word(&BoundedWord::word(w)?)?, *f);
        }
        h
    };
    let mut out = open_output(args.output.as_deref())?;
    if args.entropy {
        h.write_entropy_csv(&mut out)?;
    } else {
        h.write_csv(&mut out)?;
    }
    finish(out)
}

fn vocab_info(v: &Vocabulary, format: InfoFormat) -> CliResult {
    let info = json!({
        "entries": v.len(),
        "codebook_size": v.codebook_size(),
        "fallbacks": v.fallback_count(),
        "learned": v.len() - v.fallback_count(),
        "covers_all_bytes": v.covers_all_bytes(),
        "min_logprob": v.min_logprob(),
        "dawg_states": v.dawg().num_states(),
        "dawg_transitions": v.dawg().num_transitions(),
    });
    let mut out = open_output(None)?;
    match format {
        InfoFormat::Json => writeln!(out, "{info}")?,
        InfoFormat::Text => {
            for (key, value) in info.as_object().expect("object literal") {
                writeln!(out, "{key}\t{value}")?;
            }
        }
    }
    finish(out)
}

fn write_table(rows: &[analysis::SplitsRow], param: &str, format: TableFormat, output: Option<&Path>) -> CliResult {
    let mut out = open_output(output)?;
    match format {
        TableFormat::Csv => analysis::write_splits_csv(rows, &mut out)?,
        TableFormat::Tsv => {
            writeln!(out, "{param}\tmean_pieces_per_word\twords\tpieces")?;
            for r in rows {
                writeln!(out, "{}\t{}\t{}\t{}", r.param, r.mean(), r.words, r.pieces)?;
            }
        }
        TableFormat::Json => {
            let rows: Vec<_> = rows
                .iter()
                .map(|r| {
                    json!({
                        param: r.param,
                        "mean_pieces_per_word": r.mean(),
                        "words": r.words,
                        "pieces": r.pieces,
                    })
                })
                .collect();
            writeln!(out, "{}", serde_json::Value::Array(rows))?;
        }
    }
    finish(out)
}

fn is_stdio(path: Option<&Path>) -> bool {
    path.is_none_or(|p| p.as_os_str() == "-")
}

fn open_input(path: Option<&Path>) -> CliResult<Box<dyn BufRead>> {
    if is_stdio(path) {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let path = path.expect("checked above");
    let f = File::open(path).map_err(|e| Failure::Usage(format!("cannot open {}: {e}", path.display())))?;
    Ok(Box::new(BufReader::new(f)))
}

fn read_all(path: Option<&Path>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    open_input(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn open_output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    if is_stdio(path) {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    let path = path.expect("checked above");
    let f = File::create(path).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", path.display())))?;
    Ok(Box::new(BufWriter::new(f)))
}

/// Fails early when the directory of `path` does not exist, before any
/// long-running work.
fn check_output(path: &Path) -> CliResult {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Failure::Usage(format!(
            "cannot create {}: directory does not exist",
            path.display()
        ))),
        _ => Ok(()),
    }
}

fn finish(mut out: Box<dyn Write>) -> CliResult {
    match out.flush() {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn with_path<T>(path: &Path, r: factorizer::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let msg = format!("{}: {e}", path.display());
        if e.is_usage() {
            Failure::Usage(msg)
        } else {
            Failure::Domain(msg)
        }
    })
}

fn ensure_exists(path: &Path) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("cannot open {}: no such file", path.display())))
    }
}

fn load_vocab(path: &Path) -> CliResult<Vocabulary> {
    ensure_exists(path)?;
    with_path(path, Vocabulary::load(path))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    ensure_exists(path)?;
    with_path(path, Checkpoint::load(path))
}

fn load_freq(path: &Path) -> CliResult<WordFrequencyList> {
    let r = open_input(Some(path))?;
    with_path(path, WordFrequencyList::read_tsv(r))
}

fn load_merges(path: &Path) -> CliResult<MergeTable> {
    let r = open_input(Some(path))?;
    with_path(path, MergeTable::read(r))
}
