use std::sync::Arc;
use std::time::Duration;

use zcbm_core::vecstore::Embedder;
use zcbm_service::{serve, AppState, ServiceConfig};

use crate::args::{ProviderArgs, ServeArgs};
use crate::{load_engine, optional_provider, solver_config, CliError};

/// Blocks until ctrl-c. The provider is built before the async runtime
/// starts because its blocking client cannot be created inside one.
pub fn cmd_serve(a: &ServeArgs, p: &ProviderArgs) -> Result<(), CliError> {
    let solver = solver_config(&a.solver)?;
    if a.session_ttl == 0 {
        return Err(CliError::input("--session-ttl must be at least 1 second"));
    }
    let engine = load_engine(&a.engine, p)?;
    let embedder = optional_provider(p)?.map(|e| Arc::new(e) as Arc<dyn Embedder>);
    let config = ServiceConfig {
        default_k: a.solver.k,
        default_solver: solver,
        session_ttl: Duration::from_secs(a.session_ttl),
        snapshot: a.session_snapshot.clone(),
        ui_dir: a.ui_dir.clone(),
        cors_origins: a.cors_origin.clone(),
    };
    let state = AppState::new(engine, embedder, config)?;
    let addr: std::net::SocketAddr = a
        .addr
        .parse()
        .map_err(|e| CliError::input(format!("--addr {:?}: {e}", a.addr)))?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Internal(format!("cannot listen on {addr}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        serve(listener, state).await?;
        Ok(())
    })
}
