use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> std::io::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();

    let addr = std::env::args()
        .skip_while(|a| a != "--addr")
        .nth(1)
        .unwrap_or_else(|| "127.0.0.1:8080".into());
    let addr = if addr.contains(':') { addr } else { format!("127.0.0.1:{addr}") };

    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!("pfdm service listening on {}", listener.local_addr()?);
    pfdm_service::serve(listener).await
}
