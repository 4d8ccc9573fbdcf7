use std::io::Write;
use std::sync::atomic::Ordering;

use bargewatch_monitor::pipeline::status_board;
use bargewatch_monitor::server::{self, AppState};
use bargewatch_monitor::{Monitor, MonitorConfig};

use super::emit;
use crate::{CliError, MonitorArgs, ServeArgs, ServerOverrides};

/// File, then environment, then flags.
fn load_config(path: &std::path::Path, overrides: &ServerOverrides) -> Result<MonitorConfig, CliError> {
    let mut config = MonitorConfig::load(path)?;
    if let Some(bind) = &overrides.bind {
        config.server.bind = bind.clone();
    }
    if let Some(port) = overrides.port {
        config.server.port = port;
    }
    if let Some(dir) = &overrides.log_dir {
        config.log_dir = dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(format!("starting runtime: {e}")))
}

async fn ctrl_c() {
    if tokio::signal::ctrl_c().await.is_err() {
        std::future::pending::<()>().await;
    }
}

pub fn monitor(args: MonitorArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(&args.config, &args.overrides)?;
    let address = config.server.address();
    let monitor = Monitor::new(config)?;
    let rt = runtime()?;
    let listener = if args.no_serve {
        None
    } else {
        Some(rt.block_on(server::bind(&address))?)
    };
    let handle = monitor.start()?;
    let stop = monitor.stop_flag();

    let results = rt.block_on(async {
        let interrupt = {
            let stop = stop.clone();
            tokio::spawn(async move {
                ctrl_c().await;
                log::info!("interrupted, stopping cameras");
                stop.store(true, Ordering::Relaxed);
            })
        };
        let served = match listener {
            Some(listener) => {
                let state = AppState::new(monitor.config(), monitor.board());
                let stop = stop.clone();
                let shutdown = async move {
                    while !stop.load(Ordering::Relaxed) {
                        tokio::time::sleep(std::time::Duration::from_millis(100)).await;
                    }
                };
                server::serve(listener, state, shutdown).await
            }
            None => Ok(()),
        };
        let results = tokio::task::spawn_blocking(move || handle.wait())
            .await
            .map_err(|e| CliError::Runtime(format!("camera threads: {e}")));
        interrupt.abort();
        served?;
        results
    })?;

    let mut failed = Vec::new();
    let mut lines = Vec::new();
    for (id, result) in results {
        match result {
            Ok(s) => lines.push(format!(
                "{id}: {} frames, {} frame errors, {} events",
                s.frames,
                s.frame_errors,
                s.events.len()
            )),
            Err(e) => {
                lines.push(format!("{id}: failed: {e}"));
                failed.push(id);
            }
        }
    }
    emit(out, &lines.join("\n"))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("camera(s) failed: {}", failed.join(", "))))
    }
}

pub fn serve(args: ServeArgs) -> Result<(), CliError> {
    let config = load_config(&args.config, &args.overrides)?;
    let board = status_board(&config);
    let rt = runtime()?;
    rt.block_on(async {
        let listener = server::bind(&config.server.address()).await?;
        server::serve(listener, AppState::new(&config, board), ctrl_c()).await
    })?;
    Ok(())
}
