use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biasprobe::report::{analyze, curve_csv, render_curve, render_table, AnalysisRequest};
use biasprobe::responder::{simulate_cohort, CohortSpec, ResponderProfile};
use biasprobe::stats::AnalysisOptions;
use biasprobe::store::{export, read_sessions, Completeness, ExportFilter, ExportFormat, FileStore, SessionStore};
use biasprobe::tasks::{BiasKind, Condition, Study};
use biasprobe_service::ServiceConfig;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "biasprobe",
    version,
    about = "Measure framing and loss-aversion biases in trip-planning dialogues"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BiasArg {
    Framing,
    LossAversion,
    Both,
}

impl BiasArg {
    fn kinds(self) -> Vec<BiasKind> {
        match self {
            BiasArg::Framing => vec![BiasKind::Framing],
            BiasArg::LossAversion => vec![BiasKind::LossAversion],
            BiasArg::Both => BiasKind::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConditionArg {
    Experimental,
    Control,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompletenessArg {
    Any,
    Complete,
    Partial,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort of synthetic participants and store their sessions.
    Simulate {
        #[arg(long)]
        n_exp: usize,
        #[arg(long)]
        n_ctrl: usize,
        /// Probability of a dominated pick without biased wording.
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        delta_framing: f64,
        #[arg(long, default_value_t = 0.0)]
        delta_loss: f64,
        #[arg(long)]
        seed: u64,
        /// Half-width of per-participant uniform jitter on each delta.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing output file.
        #[arg(long)]
        force: bool,
    },
    /// Test stored sessions for bias and write a report.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = BiasArg::Both)]
        bias: BiasArg,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Also test on the first k = 1..5 probes.
        #[arg(long)]
        curve: bool,
        /// JSON report path; defaults to <input stem>.report.json next to the input.
        #[arg(long)]
        report: Option<PathBuf>,
        /// CSV table path, one row per k per bias; defaults to <input stem>.curve.csv.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        include_partial: bool,
    },
    /// Run the HTTP session service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Export stored sessions as JSONL or a per-choice CSV table.
    Export {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
        format: FormatArg,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        condition: Option<ConditionArg>,
        #[arg(long, value_enum)]
        bias: Option<BiasArg>,
        #[arg(long, value_enum, default_value_t = CompletenessArg::Any)]
        completeness: CompletenessArg,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            n_exp,
            n_ctrl,
            beta,
            delta_framing,
            delta_loss,
            seed,
            jitter,
            out,
            force,
        } => {
            if n_exp == 0 || n_ctrl == 0 {
                bail!("both groups need at least one participant");
            }
            if out.exists() {
                if !force {
                    bail!("{} exists; pass --force to replace it", out.display());
                }
                std::fs::remove_file(&out).with_context(|| format!("removing {}", out.display()))?;
            }
            let profile = ResponderProfile::new(beta, delta_framing, delta_loss)?;
            let spec = CohortSpec {
                delta_jitter: jitter,
                ..CohortSpec::new(n_exp, n_ctrl, profile, seed)
            };
            let logs = simulate_cohort(&Study::bundled(), &spec)?;
            let store = FileStore::open(&out)?;
            for log in &logs {
                store.persist(log)?;
            }
            println!(
                "wrote {} sessions ({n_exp} experimental, {n_ctrl} control) to {}",
                logs.len(),
                out.display()
            );
        }
        Command::Analyze {
            input,
            bias,
            alpha,
            curve,
            report,
            table,
            include_partial,
        } => {
            let logs = read_sessions(&input).with_context(|| format!("reading {}", input.display()))?;
            if logs.is_empty() {
                bail!("no sessions in {}", input.display());
            }
            let mut request = AnalysisRequest::new(bias.kinds(), alpha);
            request.curve = curve;
            request.options = AnalysisOptions {
                include_partial,
                ..Default::default()
            };
            let result = analyze(&logs, &request)?;
            let report_path = report.unwrap_or_else(|| sibling(&input, "report.json"));
            let table_path = table.unwrap_or_else(|| sibling(&input, "curve.csv"));
            let mut json = serde_json::to_string_pretty(&result)?;
            json.push('\n');
            std::fs::write(&report_path, json).with_context(|| format!("writing {}", report_path.display()))?;
            std::fs::write(&table_path, curve_csv(&result))
                .with_context(|| format!("writing {}", table_path.display()))?;
            let mut stdout = io::stdout().lock();
            write!(stdout, "{}", render_table(&result))?;
            if curve {
                writeln!(stdout)?;
                write!(stdout, "{}", render_curve(&result))?;
            }
        }
        Command::Serve { config } => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
                )
                .init();
            let config = ServiceConfig::load(&config)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(biasprobe_service::serve(config))?;
        }
        Command::Export {
            input,
            format,
            out,
            condition,
            bias,
            completeness,
        } => {
            let logs = read_sessions(&input).with_context(|| format!("reading {}", input.display()))?;
            let filter = ExportFilter {
                condition: condition.map(|c| match c {
                    ConditionArg::Experimental => Condition::Experimental,
                    ConditionArg::Control => Condition::Control,
                }),
                bias: match bias {
                    None | Some(BiasArg::Both) => None,
                    Some(b) => b.kinds().first().copied(),
                },
                completeness: match completeness {
                    CompletenessArg::Any => Completeness::Any,
                    CompletenessArg::Complete => Completeness::CompleteOnly,
                    CompletenessArg::Partial => Completeness::PartialOnly,
                },
            };
            let format = match format {
                FormatArg::Jsonl => ExportFormat::Jsonl,
                FormatArg::Table => ExportFormat::Table,
            };
            match out {
                Some(path) => {
                    let mut w =
                        BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
                    export(&logs, &filter, format, &mut w)?;
                    w.flush()?;
                }
                None => {
                    let mut w = io::stdout().lock();
                    export(&logs, &filter, format, &mut w)?;
                }
            }
        }
    }
    Ok(())
}

/// `dir/stem.sessions.jsonl` -> `dir/stem.<suffix>`, taking the stem up to the first dot.
fn sibling(input: &Path, suffix: &str) -> PathBuf {
    let name = input.file_name().and_then(|n| n.to_str()).unwrap_or("sessions");
    let stem = name.split('.').next().filter(|s| !s.is_empty()).unwrap_or("sessions");
    input.with_file_name(format!("{stem}.{suffix}"))
}
