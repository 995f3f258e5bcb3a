use std::error::Error;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use flock::catalog_store::CatalogStore;
use flock::provider::Registry;
use flock::runtime::{clear_dir, Cache, Runtime};
use flock::service::{self, AppState};
use flock::session::{live_runtime, registry_mock, Outcome, QueryOutput, Session, SessionConfig};
use flock_core::engine::Overrides;

#[derive(Parser)]
#[command(name = "flock", version, about = "Semantic SQL engine")]
struct Cli {
    /// Directory holding `.flock/` and the base for relative CSV paths.
    #[arg(long, env = "FLOCK_WORKSPACE", default_value = ".", global = true)]
    workspace: PathBuf,
    /// Prediction cache directory [default: <workspace>/.flock/cache]
    #[arg(long, env = "FLOCK_CACHE_DIR", global = true)]
    cache_dir: Option<PathBuf>,
    /// Provider registry JSON; the built-in registry when omitted.
    #[arg(long, env = "FLOCK_REGISTRY", global = true)]
    registry: Option<PathBuf>,
    /// Serve every provider with the deterministic mock.
    #[arg(long, env = "FLOCK_MOCK", global = true)]
    mock: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Interactive shell; statements end with `;`.
    Repl {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Runs a SQL script and prints each result.
    Run {
        file: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Print the annotated plan of each query as JSON.
        #[arg(long)]
        plan: bool,
    },
    /// Starts the HTTP API.
    Serve {
        #[arg(long, env = "FLOCK_PORT", default_value_t = 8080)]
        port: u16,
        /// Directory of CSV files loaded as tables.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Prediction cache maintenance.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// Deletes the prediction cache.
    Clear,
}

impl Cli {
    fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.workspace.join(".flock").join("cache"))
    }

    fn session(&self, data: Option<&Path>) -> Result<Session, Box<dyn Error>> {
        let registry = match &self.registry {
            Some(p) => Registry::load(p)?,
            None => Registry::builtin(),
        };
        let cache = Arc::new(Cache::open(&self.cache_dir())?);
        let runtime = if self.mock {
            Runtime::new(cache).with_fallback(Arc::new(registry_mock(&registry)))
        } else {
            live_runtime(&registry, cache)
        };
        let mut session = Session::new(SessionConfig {
            workspace: self.workspace.clone(),
            registry,
            store: Some(CatalogStore::for_workspace(&self.workspace)),
            runtime,
        })?;
        if let Some(dir) = data {
            for name in session.load_data_dir(dir)? {
                eprintln!("loaded table {name}");
            }
        }
        Ok(session)
    }
}

fn print_rows(out: &QueryOutput) {
    let headers: Vec<String> = out.result.columns.iter().map(|(n, _)| n.clone()).collect();
    let cells: Vec<Vec<String>> = out
        .result
        .rows
        .iter()
        .map(|r| r.iter().map(|v| v.render().replace('\n', " ")).collect())
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count()).min(60);
        }
    }
    let line = |vals: &[String]| {
        vals.iter()
            .zip(&widths)
            .map(|(v, w)| {
                let v: String = v.chars().take(*w).collect();
                format!("{v:<w$}")
            })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    println!("{}", line(&headers));
    println!(
        "{}",
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("-+-")
    );
    for row in &cells {
        println!("{}", line(row));
    }
    let s = &out.result.stats;
    println!(
        "({} rows, {:.1} ms, {} provider calls, {} cache hits)",
        out.result.rows.len(),
        s.wall_time_us as f64 / 1000.0,
        s.provider_calls(),
        s.cache_hits()
    );
}

fn print_outcome(outcome: &Outcome, plan: bool) {
    let show = |out: &QueryOutput| {
        print_rows(out);
        if plan {
            println!(
                "{}",
                serde_json::to_string_pretty(&out.export).expect("plan serializes")
            );
        }
    };
    match outcome {
        Outcome::Rows(out) => show(out),
        Outcome::Asked {
            generated_sql,
            output,
        } => {
            println!("-- generated: {generated_sql}");
            show(output);
        }
        Outcome::Message(m) => println!("{m}"),
    }
}

fn repl(mut session: Session) -> Result<(), Box<dyn Error>> {
    let stdin = std::io::stdin();
    let mut buf = String::new();
    let mut last_plan = None;
    loop {
        print!(
            "{}",
            if buf.is_empty() {
                "flock> "
            } else {
                "   ...> "
            }
        );
        std::io::stdout().flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            return Ok(());
        }
        let trimmed = line.trim();
        if buf.is_empty() {
            match trimmed {
                ".quit" | ".exit" => return Ok(()),
                ".plan" => {
                    match &last_plan {
                        Some(p) => println!("{}", serde_json::to_string_pretty(p)?),
                        None => println!("no query has run yet"),
                    }
                    continue;
                }
                "" => continue,
                _ => {}
            }
        }
        buf.push_str(&line);
        if !trimmed.ends_with(';') {
            continue;
        }
        match session.run_script(&buf, &Overrides::default()) {
            Ok(outcomes) => {
                for o in &outcomes {
                    print_outcome(o, false);
                    match o {
                        Outcome::Rows(out) | Outcome::Asked { output: out, .. } => {
                            last_plan = Some(out.export.clone())
                        }
                        Outcome::Message(_) => {}
                    }
                }
            }
            Err(e) => eprintln!("error [{}]: {e}", e.code()),
        }
        buf.clear();
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn Error>> {
    match &cli.command {
        Command::Repl { data } => repl(cli.session(data.as_deref())?),
        Command::Run { file, data, plan } => {
            let mut session = cli.session(data.as_deref())?;
            let script = std::fs::read_to_string(file)?;
            let outcomes = session
                .run_script(&script, &Overrides::default())
                .map_err(|e| format!("[{}] {e}", e.code()))?;
            for o in &outcomes {
                print_outcome(o, *plan);
            }
            Ok(())
        }
        Command::Serve { port, data } => {
            let session = cli.session(data.as_deref())?;
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on http://0.0.0.0:{port}");
            rt.block_on(service::serve(AppState::new(session), *port))?;
            Ok(())
        }
        Command::Cache {
            action: CacheAction::Clear,
        } => {
            let dir = cli.cache_dir();
            if clear_dir(&dir)? {
                println!("cleared {}", dir.display());
            } else {
                println!("no cache at {}", dir.display());
            }
            Ok(())
        }
    }
}
