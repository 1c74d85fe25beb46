//! HTTP JSON API for rating sessions.
//!
//! | method | path | result |
//! |---|---|---|
//! | POST | `/api/session` | `{session_id, instructions_text, task_count}` |
//! | GET | `/api/session/{id}` | current [`view::NextStep`] |
//! | POST | `/api/session/{id}/ack-instructions` | first task page |
//! | POST | `/api/session/{id}/task/{k}` | next task page or the questionnaire |
//! | POST | `/api/session/{id}/questionnaire` | `{hit_code}` |

pub mod api;
pub mod config;
pub mod view;

use std::sync::Arc;

pub use api::{router, AppState};
pub use config::Config;

/// Binds `config.listen`, reports the bound address through `on_bound` and
/// serves until `shutdown` resolves.
pub async fn serve(
    state: AppState,
    listen: std::net::SocketAddr,
    on_bound: impl FnOnce(std::net::SocketAddr),
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(shutdown)
        .await
}
