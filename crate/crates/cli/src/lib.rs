//! The `tally` command: compute metrics written in the metric DSL over a CSV
//! file, or compile them to SQL.

use std::ffi::OsString;
use std::fs::File;
use std::io::{Read, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;

use clap::{Parser, ValueEnum};
use tally_core::{
    compute_on, parse, to_sql, Dialect, DslProgram, Error, EvalContext, Metric, Operation, Table,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Compute,
    Sql,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DialectArg {
    Portable,
    Googlesql,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Debug, Parser)]
#[command(name = "tally", version, about = "Compute metrics over CSV data or compile them to SQL")]
struct Args {
    /// CSV file to read, or `-` for stdin. In sql mode its file stem names
    /// the table queried (default `data`).
    #[arg(long)]
    input: Option<String>,

    /// Metric program, or `@path` to read it from a file.
    #[arg(long)]
    metric: String,

    /// Comma-separated dimensions to split by.
    #[arg(long, value_delimiter = ',')]
    split_by: Vec<String>,

    #[arg(long, value_enum, default_value_t = Mode::Compute)]
    mode: Mode,

    #[arg(long, value_enum, default_value_t = DialectArg::Portable)]
    dialect: DialectArg,

    /// Seed for every bootstrap in the program.
    #[arg(long)]
    seed: Option<u64>,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Replicate count for every bootstrap in the program.
    #[arg(long)]
    n_rep: Option<usize>,
}

/// What went wrong, already rendered as one line.
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_user_error() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn user(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

/// Run the command line `argv` (program name first). Returns the exit code:
/// 0 on success, 1 for bad input, 2 for internal errors.
pub fn run<I, T>(argv: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let _ = writeln!(stderr, "error: {}", first.trim_start_matches("error: "));
            return 1;
        }
    };
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| execute(&args, stdin, stdout, stderr)));
    let failure = match outcome {
        Ok(Ok(())) => return 0,
        Ok(Err(f)) => f,
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            Failure {
                code: 2,
                message: format!("internal error: {what}"),
            }
        }
    };
    let message = failure.message.replace('\n', " ");
    let _ = writeln!(stderr, "error: {message}");
    failure.code
}

fn execute(args: &Args, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    let source = match args.metric.strip_prefix('@') {
        Some(path) => {
            std::fs::read_to_string(path).map_err(|e| user(format!("cannot read metric file `{path}`: {e}")))?
        }
        None => args.metric.clone(),
    };
    let program = parse(&source).map_err(|e| user(format!("invalid metric at {e}")))?;
    let metrics = program
        .metrics()
        .iter()
        .map(|m| override_bootstrap(m, args))
        .collect::<Result<Vec<_>, _>>()?;

    match args.mode {
        Mode::Compute => {
            let path = args
                .input
                .as_deref()
                .ok_or_else(|| user("--input is required in compute mode"))?;
            let table = read_table(path, stdin)?;
            let ctx = EvalContext::new();
            let mut frames = Vec::with_capacity(metrics.len());
            for m in &metrics {
                let frame = compute_on(m, &table, &args.split_by, &ctx).map_err(|e| located(e, &program))?;
                frames.push(frame);
            }
            for w in ctx.warnings() {
                let _ = writeln!(stderr, "warning: {w}");
            }
            for (i, frame) in frames.iter().enumerate() {
                if i > 0 {
                    writeln!(stdout).map_err(Error::from)?;
                }
                match args.format {
                    Format::Csv => frame.write_csv(&mut *stdout)?,
                    Format::Table => stdout.write_all(frame.to_pretty().as_bytes()).map_err(Error::from)?,
                }
            }
        }
        Mode::Sql => {
            let dialect = match args.dialect {
                DialectArg::Portable => Dialect::Portable,
                DialectArg::Googlesql => Dialect::GoogleSql,
            };
            let table_name = match args.input.as_deref() {
                Some(path) if path != "-" => {
                    check_columns(path, &metrics, &args.split_by, &program)?;
                    Path::new(path)
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "data".to_string())
                }
                _ => "data".to_string(),
            };
            let table_expr = dialect.quote_ident(&table_name);
            for (i, m) in metrics.iter().enumerate() {
                let q = to_sql(m, &table_expr, &args.split_by, dialect)?;
                if i > 0 {
                    writeln!(stdout).map_err(Error::from)?;
                }
                writeln!(stdout, "{};", q.to_script()).map_err(Error::from)?;
            }
        }
    }
    stdout.flush().map_err(Error::from)?;
    Ok(())
}

fn override_bootstrap(m: &Metric, args: &Args) -> Result<Metric, Failure> {
    if args.n_rep == Some(0) {
        return Err(user("--n-rep must be at least 1"));
    }
    Ok(m.map_operations(&|op| match op {
        Operation::Bootstrap { n_rep, seed } => Operation::Bootstrap {
            n_rep: args.n_rep.unwrap_or(*n_rep),
            seed: args.seed.unwrap_or(*seed),
        },
        other => other.clone(),
    }))
}

fn read_table(path: &str, stdin: &mut dyn Read) -> Result<Table, Failure> {
    if path == "-" {
        return Ok(Table::read_csv(stdin, Default::default())?);
    }
    let file = File::open(path).map_err(|e| user(format!("cannot open `{path}`: {e}")))?;
    Table::read_csv(file, Default::default()).map_err(|e| user(format!("{path}: {e}")))
}

/// Only the header is needed to validate column references.
fn check_columns(path: &str, metrics: &[Metric], split_by: &[String], program: &DslProgram) -> Result<(), Failure> {
    let file = File::open(path).map_err(|e| user(format!("cannot open `{path}`: {e}")))?;
    let mut reader = std::io::BufReader::new(file);
    let mut header = String::new();
    std::io::BufRead::read_line(&mut reader, &mut header).map_err(Error::from)?;
    let table = Table::read_csv(header.as_bytes(), Default::default()).map_err(|e| user(format!("{path}: {e}")))?;
    let referenced = metrics.iter().flat_map(|m| m.referenced_columns());
    for column in split_by.iter().cloned().chain(referenced) {
        if !table.has_column(&column) {
            return Err(located(Error::UnknownColumn(column), program));
        }
    }
    Ok(())
}

/// Point unknown-column errors at the metric source when possible.
fn located(e: Error, program: &DslProgram) -> Failure {
    if let Error::UnknownColumn(c) = &e {
        if let Some(span) = program.column_span(c) {
            return user(format!("{e} (metric {}:{})", span.line, span.col));
        }
    }
    e.into()
}
