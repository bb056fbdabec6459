use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use clap::Args;
use futures_util::{SinkExt, StreamExt};
use predictive_display::teleop_loop::{Displayed, Driver, ExperimentConfig, Mode, Simulation};
use predictive_display::wire::{decode_command, encode_frame, encode_rgb, seconds_to_micros, Container, FrameMsg};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, mpsc};

use crate::Common;

/// Console commands older than this leave the car without a driver.
const DRIVER_TIMEOUT: Duration = Duration::from_millis(200);
/// Wall-clock pacing period of the simulation loop.
const PACE: Duration = Duration::from_millis(2);

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Experiment config; defaults to the full course with prediction on
    /// and rendering enabled.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct LapMark {
    lap: usize,
    t: f64,
    progress: f64,
}

struct Live {
    cfg: ExperimentConfig,
    sim: Simulation,
    /// Wall time at which the simulation clock read zero.
    epoch: Instant,
    driver: Option<u64>,
    next_id: u64,
    last_steer_at: Option<Instant>,
    laps: Vec<LapMark>,
    finished_sent: bool,
}

impl Live {
    fn reset(&mut self) -> Result<()> {
        let on = self.sim.station().prediction_on();
        self.sim = Simulation::new(&self.cfg)?;
        self.sim.set_prediction(on);
        self.sim.set_driver(Driver::Idle);
        self.epoch = Instant::now();
        self.laps.clear();
        self.finished_sent = false;
        Ok(())
    }
}

#[derive(Clone)]
struct AppState {
    live: Arc<Mutex<Live>>,
    tx: broadcast::Sender<Message>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Control {
    SetPrediction { on: bool },
    Reset,
    LapMark,
}

fn default_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("live", "full", Mode::TeleopPp, seed);
    cfg.duration = 3600.0;
    cfg.render.enabled = true;
    cfg
}

fn text(v: serde_json::Value) -> Message {
    Message::Text(v.to_string().into())
}

/// Frame as sent to the console: the displayed image with the capture
/// metadata, no depth.
fn display_frame(d: &Displayed, cfg: &ExperimentConfig) -> Result<Option<Vec<u8>>> {
    let Some(img) = &d.image else { return Ok(None) };
    let fov = cfg.render.rig().fov()?;
    let msg = FrameMsg {
        seq: d.seq,
        t0_us: seconds_to_micros(d.timing.t0)?,
        speed: d.speed as f32,
        accel: d.accel as f32,
        fov_h: fov.horizontal as f32,
        fov_v: fov.vertical as f32,
        pitch: cfg.geometry.cam_pitch as f32,
        rgb_payload: encode_rgb(img, Container::Jpeg { quality: 80 })?,
        depth_payload: Vec::new(),
    };
    Ok(Some(encode_frame(&msg)?))
}

fn advance(state: &AppState) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut live = state.live.lock().expect("live state poisoned");
        if live.driver.is_some() && live.last_steer_at.is_some_and(|t| t.elapsed() > DRIVER_TIMEOUT) {
            live.sim.set_driver(Driver::Idle);
            live.last_steer_at = None;
        }
        let target = live.epoch.elapsed().as_secs_f64();
        while !live.sim.finished() && live.sim.time() < target {
            if let Some(d) = live.sim.step()? {
                if let Some(bytes) = display_frame(&d, &live.cfg)? {
                    out.push(Message::Binary(bytes.into()));
                }
                out.push(text(json!({
                    "type": "display",
                    "seq": d.seq,
                    "t": live.sim.time(),
                    "latency_ms": d.timing.tau1 * 1e3,
                    "round_trip_ms": (d.timing.tau1 + d.timing.tau2) * 1e3,
                    "speed": d.speed,
                    "prediction_on": d.prediction_on,
                    "lateral_error": live.sim.lateral_error(),
                    "progress": live.sim.progress(),
                    "emergency": live.sim.vehicle().emergency(),
                })));
            }
        }
        if live.sim.finished() && !live.finished_sent {
            live.finished_sent = true;
            out.push(text(json!({ "type": "finished", "t": live.sim.time() })));
        }
    }
    for m in out {
        // no subscribers is fine
        let _ = state.tx.send(m);
    }
    Ok(())
}

async fn health(State(state): State<AppState>) -> impl IntoResponse {
    let live = state.live.lock().expect("live state poisoned");
    Json(json!({
        "name": "pdisplay",
        "version": env!("CARGO_PKG_VERSION"),
        "sim_time": live.sim.time(),
        "prediction_on": live.sim.station().prediction_on(),
    }))
}

async fn ws(upgrade: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    upgrade.on_upgrade(move |socket| session(socket, state))
}

fn handle_control(state: &AppState, id: u64, raw: &str) -> serde_json::Value {
    let ctl: Control = match serde_json::from_str(raw) {
        Ok(c) => c,
        Err(e) => return json!({ "type": "error", "message": format!("bad control message: {e}") }),
    };
    let mut live = state.live.lock().expect("live state poisoned");
    if live.driver != Some(id) {
        return json!({ "type": "error", "message": "observers are read-only" });
    }
    match ctl {
        Control::SetPrediction { on } => {
            live.sim.set_prediction(on);
            log::info!("prediction {}", if on { "on" } else { "off" });
            json!({ "type": "ack", "request": "set_prediction", "prediction_on": on })
        }
        Control::Reset => match live.reset() {
            Ok(()) => json!({ "type": "ack", "request": "reset" }),
            Err(e) => json!({ "type": "error", "message": format!("reset failed: {e:#}") }),
        },
        Control::LapMark => {
            let mark = LapMark {
                lap: live.laps.len() + 1,
                t: live.sim.time(),
                progress: live.sim.progress(),
            };
            live.laps.push(mark.clone());
            json!({ "type": "ack", "request": "lap_mark", "lap": mark.lap, "t": mark.t })
        }
    }
}

async fn session(socket: WebSocket, state: AppState) {
    let (id, role) = {
        let mut live = state.live.lock().expect("live state poisoned");
        let id = live.next_id;
        live.next_id += 1;
        let role = if live.driver.is_none() {
            live.driver = Some(id);
            "driver"
        } else {
            "observer"
        };
        (id, role)
    };
    log::info!("console {id} connected as {role}");
    let (mut sink, mut stream) = socket.split();
    let (direct_tx, mut direct_rx) = mpsc::unbounded_channel::<Message>();
    let _ = direct_tx.send(text(
        json!({ "type": "role", "role": role, "version": env!("CARGO_PKG_VERSION") }),
    ));
    let mut frames = state.tx.subscribe();

    let writer = tokio::spawn(async move {
        loop {
            let msg = tokio::select! {
                m = direct_rx.recv() => match m {
                    Some(m) => m,
                    None => break,
                },
                m = frames.recv() => match m {
                    Ok(m) => m,
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        log::debug!("console {id} skipped {n} messages");
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                },
            };
            if sink.send(msg).await.is_err() {
                break;
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Binary(bytes) => {
                let mut live = state.live.lock().expect("live state poisoned");
                if live.driver != Some(id) {
                    continue;
                }
                match decode_command(&bytes) {
                    Ok(cmd) => {
                        live.sim.set_external_steer(cmd.steer());
                        live.last_steer_at = Some(Instant::now());
                    }
                    Err(e) => log::warn!("console {id}: {e}"),
                }
            }
            Message::Text(t) => {
                let reply = handle_control(&state, id, t.as_str());
                let _ = direct_tx.send(text(reply));
            }
            Message::Close(_) => break,
            _ => {}
        }
    }

    {
        let mut live = state.live.lock().expect("live state poisoned");
        if live.driver == Some(id) {
            live.driver = None;
            live.last_steer_at = None;
            live.sim.set_driver(Driver::Idle);
        }
    }
    drop(direct_tx);
    writer.abort();
    log::info!("console {id} disconnected");
}

pub fn run(common: &Common, a: &ServeArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => default_config(common.seed()),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(serve(cfg, a, out))
}

async fn serve(cfg: ExperimentConfig, a: &ServeArgs, out: PathBuf) -> Result<()> {
    let mut sim = Simulation::new(&cfg)?;
    sim.set_driver(Driver::Idle);
    let live = Live {
        cfg,
        sim,
        epoch: Instant::now(),
        driver: None,
        next_id: 1,
        last_steer_at: None,
        laps: Vec::new(),
        finished_sent: false,
    };
    let (tx, _) = broadcast::channel(64);
    let state = AppState {
        live: Arc::new(Mutex::new(live)),
        tx,
    };

    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().context("bad --host/--port")?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    let local = listener.local_addr()?;
    println!("listening on http://{local}");

    let ticker_state = state.clone();
    let ticker = tokio::spawn(async move {
        let mut iv = tokio::time::interval(PACE);
        iv.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            iv.tick().await;
            let st = ticker_state.clone();
            match tokio::task::spawn_blocking(move || advance(&st)).await {
                Ok(Ok(())) => {}
                Ok(Err(e)) => {
                    log::error!("simulation stopped: {e:#}");
                    break;
                }
                Err(e) => {
                    log::error!("simulation task failed: {e}");
                    break;
                }
            }
        }
    });

    let app = Router::new()
        .route("/health", get(health))
        .route("/ws", get(ws))
        .with_state(state.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await?;
    ticker.abort();

    let (output, laps) = {
        let mut live = state.live.lock().expect("live state poisoned");
        let fresh = Simulation::new(&live.cfg)?;
        let sim = std::mem::replace(&mut live.sim, fresh);
        (sim.finish()?, std::mem::take(&mut live.laps))
    };
    output.write_to(&out)?;
    std::fs::write(out.join("laps.json"), serde_json::to_string_pretty(&laps)?)?;
    println!("wrote {}", out.display());
    Ok(())
}
