use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use meditools_core::catalog::Catalog;
use meditools_core::extract::MockExtractor;
use meditools_core::pubmed::{EutilsTransport, FixtureTransport, HttpTransport, PubmedClient, SearchParams, EUTILS_BASE_URL};
use meditools_server::{AppState, Config};

#[derive(Parser)]
#[command(name = "meditools", version, about = "Medical education service and operator tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service (configured through MEDITOOLS_* variables).
    Serve {
        /// Listen address; overrides MEDITOOLS_BIND.
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
    },
    /// Image catalog utilities.
    Catalog {
        #[command(subcommand)]
        command: CatalogCommand,
    },
    /// PubMed utilities.
    Pubmed {
        #[command(subcommand)]
        command: PubmedCommand,
    },
}

#[derive(Subcommand)]
enum CatalogCommand {
    /// Check that every image under ROOT sits in <condition>/<type>[-n].<ext>.
    Validate { root: PathBuf },
}

#[derive(Subcommand)]
enum PubmedCommand {
    /// Search PubMed and print one block per article.
    Search {
        term: String,
        #[arg(long, default_value_t = 10)]
        retmax: u32,
        #[arg(long)]
        mindate: Option<NaiveDate>,
        #[arg(long)]
        maxdate: Option<NaiveDate>,
        /// Answer from recorded responses in DIR instead of the network.
        #[arg(long, value_name = "DIR")]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info,meditools=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve { bind } => {
            let mut config = Config::from_env()?;
            if bind.is_some() {
                config.bind = bind;
            }
            let state = AppState::from_config(&config)?;
            let addr = config.bind_addr();
            let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
            tracing::info!(%addr, offline = config.offline, "listening");
            meditools_server::serve_with_shutdown(state, listener, meditools_server::shutdown_signal()).await?;
            Ok(())
        }
        Command::Catalog { command: CatalogCommand::Validate { root } } => {
            let catalog = Catalog::scan(&root)?;
            let mut counts = std::collections::BTreeMap::<&str, usize>::new();
            for e in catalog.entries() {
                *counts.entry(e.condition_name.as_str()).or_default() += 1;
            }
            for (condition, n) in &counts {
                println!("{condition}\t{n}");
            }
            println!("ok: {} images across {} conditions", catalog.len(), counts.len());
            Ok(())
        }
        Command::Pubmed { command: PubmedCommand::Search { term, retmax, mindate, maxdate, fixtures, json } } => {
            let transport: Arc<dyn EutilsTransport> = match fixtures {
                Some(dir) => Arc::new(FixtureTransport::load_dir(&dir)?),
                None => {
                    let key = std::env::var("MEDITOOLS_NCBI_KEY").ok().filter(|k| !k.is_empty());
                    let base = std::env::var("MEDITOOLS_EUTILS_BASE_URL").unwrap_or_else(|_| EUTILS_BASE_URL.into());
                    Arc::new(HttpTransport::new(base, key))
                }
            };
            let client = PubmedClient::new(transport, Arc::new(MockExtractor::new()));
            let mut params = SearchParams::new(term);
            params.retmax = retmax;
            if let Some(d) = mindate {
                params.mindate = d;
            }
            if let Some(d) = maxdate {
                params.maxdate = d;
            }
            let articles = client.search_articles(&params).await?;
            if json {
                println!("{}", serde_json::to_string_pretty(&articles)?);
                return Ok(());
            }
            for a in &articles {
                let year = a.year.map(|y| y.to_string()).unwrap_or_else(|| "n.d.".into());
                println!("{}\n  {} ({year}) {}", a.title, a.journal, a.authors.join(", "));
                println!("  PMID {}  {}", a.pmid, a.pubmed_url);
                match &a.pmcid {
                    Some(p) => println!("  {p} (full text available)"),
                    None => println!("  no PubMed Central copy"),
                }
            }
            if articles.is_empty() {
                println!("no results");
            }
            Ok(())
        }
    }
}
