use std::net::SocketAddr;
use std::sync::Arc;

use clap::Parser;
use topopt_service::session::SessionManager;

/// Serve the session API.
#[derive(Parser)]
#[command(name = "topopt-serve", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory holding one workspace per session.
    #[arg(long, env = "TOPOPT_WORKSPACE_ROOT", default_value = "sessions")]
    root: std::path::PathBuf,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let args = Args::parse();
    let manager = Arc::new(SessionManager::deterministic(&args.root)?);
    eprintln!("listening on http://{}", args.addr);
    topopt_service::http::serve(manager, args.addr).await
}
