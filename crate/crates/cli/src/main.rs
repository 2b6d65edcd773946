mod synthetic;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tvr_core::bytecode::{classify_bytecode, disassemble};
use tvr_core::ingest::{load_lists, load_scenario, load_snapshot_with};
use tvr_core::ledger::{consolidate, format_usd, naive_tvl, replay_script, BalanceSheet, Ledger};
use tvr_core::metrics::MetricReport;
use tvr_core::sim::{depeg_point, sensitivity_curve, SimResult};
use tvr_core::stats::{correlate_table, write_correlations, SeriesTable};
use tvr_core::token::CategoryLists;

const SNAPSHOT_HELP: &str = "\
Snapshot JSON (schema_version 1):
  plain_prices  {TOKEN: usd}
  tokens        [{id, kind?, supply?, basket?, issuer?, peg?, fluctuation?}]
                kind is plain | derivative | cdp_stablecoin; when omitted it is
                inferred from basket/issuer/peg or the category lists
  protocols     [{id, kind: passive|cdp|lending, close_factor?, liquidation_bonus?,
                  liquidation_thresholds: {TOKEN: alpha}}]
  stakes        [{protocol, token, quantity}]
  positions     [{account, protocol, collateral: [{token, quantity}],
                  debt: [{token, quantity}], redeposits?: [{protocol, token, quantity}]}]

Scenario JSON (schema_version 1):
  shock_token   plain token to shock
  grid          [d, ...] or {start, stop, points}
  overrides?    {PROTOCOL: {close_factor?, liquidation_bonus?}}
  gas?          {limit, price_usd, scale}
  max_rounds?   fixed-point round cap (default 100)

Exit status: 0 success, 1 input or model error, 2 usage error.";

#[derive(Parser)]
#[command(name = "tvr", version, about = "Total value locked vs total value redeemable", after_help = SNAPSHOT_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// TVL, TVR, adjusted TVL, multiplier and the per-protocol breakdown.
    Compute {
        snapshot: PathBuf,
        /// Category lists (native, governance, ncb_stablecoins) merged over the defaults.
        #[arg(long)]
        lists: Option<PathBuf>,
        /// Protocol whose column is dropped from the adjusted TVL; repeatable.
        #[arg(long = "exclude", value_name = "PROTOCOL")]
        excluded: Vec<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Shock a plain token over a decline grid and liquidate to a fixed point.
    Simulate {
        snapshot: PathBuf,
        scenario: PathBuf,
        #[arg(long)]
        lists: Option<PathBuf>,
        /// Write CSV here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Replay a transaction script and print balance sheets.
    Ledger {
        script: PathBuf,
        /// Print the state at a `mark name=...` line instead of the end state.
        #[arg(long)]
        mark: Option<String>,
        /// Holders to print; all holders when omitted.
        #[arg(long = "holder")]
        holders: Vec<String>,
        /// Append the consolidated sheet of the protocol holders shown.
        #[arg(long)]
        consolidate: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Classify contract bytecode as token-backed, native-backed or undetermined.
    Classify {
        /// Hex bytecode, with or without a 0x prefix.
        hex: Vec<String>,
        /// File holding hex bytecode; repeatable.
        #[arg(long = "file")]
        files: Vec<PathBuf>,
        /// Also print the disassembly.
        #[arg(long)]
        disasm: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Spearman correlations between date-indexed series.
    Correlate {
        /// CSV with a date column followed by numeric columns.
        series: Option<PathBuf>,
        /// Column pair X:Y; every pair when omitted.
        #[arg(long = "pair", value_name = "X:Y")]
        pairs: Vec<String>,
        /// Derived column NAME=NUM/DEN, e.g. M=TVL/TVR; repeatable.
        #[arg(long = "ratio", value_name = "NAME=NUM/DEN")]
        ratios: Vec<String>,
        /// Correlate log returns instead of levels.
        #[arg(long)]
        log_returns: bool,
        /// Generate N days of synthetic series instead of reading a file.
        #[arg(long, value_name = "N", conflicts_with = "series")]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
            || c.downcast_ref::<csv::Error>()
                .is_some_and(|e| matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == io::ErrorKind::BrokenPipe))
    })
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn lists(path: Option<&Path>) -> Result<CategoryLists> {
    match path {
        Some(p) => load_lists(p).with_context(|| format!("{}", p.display())),
        None => Ok(CategoryLists::default()),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Compute { snapshot, lists: l, excluded, format } => {
            let lists = lists(l.as_deref())?;
            let s = load_snapshot_with(&snapshot, &lists).with_context(|| format!("{}", snapshot.display()))?;
            let report = MetricReport::compute(&s, excluded.iter().map(String::as_str))?;
            let mut out = sink(None)?;
            match format {
                Format::Text => write!(out, "{report}")?,
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(&mut out);
                    w.write_record(MetricReport::CSV_HEADER)?;
                    w.write_record(report.csv_record(&excluded))?;
                    w.flush()?;
                }
            }
            Ok(())
        }
        Command::Simulate { snapshot, scenario, lists: l, output, format } => {
            let lists = lists(l.as_deref())?;
            let s = load_snapshot_with(&snapshot, &lists).with_context(|| format!("{}", snapshot.display()))?;
            let sc = load_scenario(&scenario).with_context(|| format!("{}", scenario.display()))?;
            let result = sensitivity_curve(&s, &sc)?;
            let mut out = sink(output.as_deref())?;
            match format {
                Format::Csv => result.write_csv(&mut out)?,
                Format::Text => write_sim_text(&result, &mut out)?,
            }
            out.flush()?;
            Ok(())
        }
        Command::Ledger { script, mark, holders, consolidate: cons, format } => {
            let text = std::fs::read_to_string(&script).with_context(|| format!("{}", script.display()))?;
            let replay = replay_script(&text).with_context(|| format!("{}", script.display()))?;
            let ledger: &Ledger = match &mark {
                Some(m) => replay.mark(m).with_context(|| format!("no mark named `{m}`"))?,
                None => &replay.ledger,
            };
            let mut sheets: Vec<BalanceSheet> = if holders.is_empty() {
                ledger.balance_sheets()
            } else {
                holders.iter().map(|h| ledger.balance_sheet(h)).collect::<Result<_, _>>()?
            };
            let mut naive = None;
            if cons {
                let protocols: Vec<&str> = ledger.protocols().collect();
                let group: Vec<BalanceSheet> =
                    sheets.iter().filter(|s| protocols.contains(&s.holder.as_str())).cloned().collect();
                naive = Some(naive_tvl(&group));
                sheets.push(consolidate(&group));
            }
            let mut out = sink(None)?;
            match format {
                Format::Text => {
                    for s in &sheets {
                        writeln!(out, "{s}")?;
                    }
                    if let Some(v) = naive {
                        writeln!(out, "naive TVL {}", format_usd(v))?;
                    }
                }
                Format::Csv => BalanceSheet::write_csv(&sheets, &mut out)?,
            }
            Ok(())
        }
        Command::Classify { hex, files, disasm, format } => {
            let mut inputs: Vec<(String, String)> =
                hex.into_iter().enumerate().map(|(i, h)| (format!("arg{}", i + 1), h)).collect();
            for f in files {
                let text = std::fs::read_to_string(&f).with_context(|| format!("{}", f.display()))?;
                inputs.push((f.display().to_string(), text));
            }
            if inputs.is_empty() {
                bail!("no bytecode given; pass hex arguments or --file");
            }
            let mut out = sink(None)?;
            let mut w = (format == Format::Csv).then(|| csv::Writer::from_writer(io::stdout()));
            if let Some(w) = w.as_mut() {
                w.write_record(["input", "verdict", "bytes", "evidence"])?;
            }
            for (label, raw) in inputs {
                let code = decode_hex(&raw).with_context(|| label.clone())?;
                let stream = disassemble(&code).with_context(|| label.clone())?;
                let c = classify_bytecode(&stream);
                let evidence =
                    c.evidence.iter().map(|(off, p)| format!("{}@{off:#x}", p.name())).collect::<Vec<_>>().join(" ");
                match w.as_mut() {
                    Some(w) => {
                        w.write_record([label.as_str(), c.verdict.name(), &code.len().to_string(), &evidence])?
                    }
                    None => {
                        writeln!(out, "{label}: {} ({} bytes)", c.verdict, code.len())?;
                        if !evidence.is_empty() {
                            writeln!(out, "  evidence: {evidence}")?;
                        }
                        if disasm {
                            for ins in stream.instructions() {
                                writeln!(out, "  {ins}")?;
                            }
                        }
                    }
                }
            }
            if let Some(mut w) = w {
                w.flush()?;
            }
            Ok(())
        }
        Command::Correlate { series, pairs, ratios, log_returns, synthetic: synth, seed, output } => {
            let mut table = match (series, synth) {
                (Some(p), None) => SeriesTable::from_csv_path(&p).with_context(|| format!("{}", p.display()))?,
                (None, Some(n)) => synthetic::series(n, seed)?,
                _ => bail!("give a series CSV or --synthetic N"),
            };
            for r in &ratios {
                let (name, rest) = r.split_once('=').with_context(|| format!("bad --ratio `{r}`"))?;
                let (num, den) = rest.split_once('/').with_context(|| format!("bad --ratio `{r}`"))?;
                table = table.with_ratio(name, num, den)?;
            }
            let pairs = pairs
                .iter()
                .map(|p| {
                    p.split_once(':')
                        .map(|(a, b)| (a.to_owned(), b.to_owned()))
                        .with_context(|| format!("bad --pair `{p}`, expected X:Y"))
                })
                .collect::<Result<Vec<_>>>()?;
            let cells = correlate_table(&table, &pairs, log_returns)?;
            let mut out = sink(output.as_deref())?;
            write_correlations(&cells, &mut out)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn decode_hex(raw: &str) -> Result<Vec<u8>> {
    let s: String = raw.split_whitespace().collect();
    let s = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(&s);
    hex::decode(s).context("not valid hex")
}

fn write_sim_text(r: &SimResult, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "shock {}  baseline TVL {:.2}  TVR {:.2}", r.shock_token, r.baseline_tvl, r.baseline_tvr)?;
    writeln!(out, "{:>6} {:>18} {:>18} {:>7} {:>6}  depegged", "d", "ΔTVL", "ΔTVR", "events", "rounds")?;
    for row in &r.rows {
        let depegged = row.depegs.iter().map(|(t, g)| format!("{t}:{g:.4}")).collect::<Vec<_>>().join(" ");
        let flag = if row.converged { "" } else { " (round cap)" };
        writeln!(
            out,
            "{:>6.3} {:>18.2} {:>18.2} {:>7} {:>6}  {depegged}{flag}",
            row.d, row.delta_tvl, row.delta_tvr, row.events, row.rounds
        )?;
    }
    for coin in &r.stablecoins {
        match depeg_point(r, coin.as_str())? {
            Some(d) => writeln!(out, "{coin} first depegs at d = {d}")?,
            None => writeln!(out, "{coin} holds its peg on the grid")?,
        }
    }
    Ok(())
}
