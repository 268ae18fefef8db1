use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sciflow_portal::config::PortalConfig;
use sciflow_portal::{serve, Portal};

#[derive(Parser)]
#[command(name = "sciflow-server", about = "Runs the sciflow portal")]
struct Args {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let config = match PortalConfig::load(args.config.as_deref(), |k| std::env::var(k).ok()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("sciflow-server: {e}");
            return ExitCode::from(2);
        }
    };
    let portal = match Portal::open(config) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("sciflow-server: {e}");
            return ExitCode::from(1);
        }
    };
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    let result = runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(portal.config.addr).await?;
        // scripts and tests read the bound address from this line
        println!("sciflow-server listening on http://{}", listener.local_addr()?);
        serve(portal, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sciflow-server: {e}");
            ExitCode::from(1)
        }
    }
}
