use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use discovery_service::{open_state, serve, RateLimit, ServiceConfig};
use tracing_subscriber::EnvFilter;

/// Discovery service and dead drop for sanitised traceability events.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,

    /// NDJSON journal of stored events, replayed on start. In-memory only if omitted.
    #[arg(long)]
    journal: Option<PathBuf>,

    /// Seconds between dead-drop expiry sweeps.
    #[arg(long, default_value_t = 60)]
    sweep_interval: u64,

    /// Largest accepted request body in bytes (at least 65536).
    #[arg(long, default_value_t = 1024 * 1024)]
    max_body: usize,

    /// Requests allowed per client address per window. Unlimited if omitted.
    #[arg(long)]
    rate_limit: Option<u32>,

    /// Rate-limit window in seconds.
    #[arg(long, default_value_t = 60)]
    rate_window: u64,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let config = ServiceConfig {
        bind: args.bind,
        journal: args.journal,
        sweep_interval: Duration::from_secs(args.sweep_interval),
        max_body: args.max_body,
        rate_limit: args.rate_limit.map(|requests| RateLimit {
            requests,
            window: Duration::from_secs(args.rate_window),
        }),
    };
    config.validate()?;
    let state = open_state(&config).context("opening journal")?;
    tracing::info!(events = state.store.len(), "store ready");
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .with_context(|| format!("binding {}", config.bind))?;
    tracing::info!("listening on {}", listener.local_addr()?);
    serve(listener, &config, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}
