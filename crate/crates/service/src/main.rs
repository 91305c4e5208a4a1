use std::process::ExitCode;

use latentbrush_service::{router, AppState, ServiceConfig};

fn usage() -> ExitCode {
    eprintln!("usage: latentbrush-server [CONFIG_FILE]");
    ExitCode::from(1)
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() > 1 || args.first().is_some_and(|a| a.starts_with('-')) {
        return usage();
    }
    let mut cfg = match args.first() {
        Some(path) => match ServiceConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        None => ServiceConfig::default(),
    };
    if let Err(e) = cfg.apply_env(std::env::vars()) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let state = match AppState::from_config(&cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let addr = format!("{}:{}", cfg.host, cfg.port);
    let listener = match tokio::net::TcpListener::bind(&addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {addr}: {e}");
            return ExitCode::from(2);
        }
    };
    log::info!("listening on {addr}");
    if let Err(e) = axum::serve(listener, router(state)).await {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}
