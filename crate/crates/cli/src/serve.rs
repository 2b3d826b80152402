use std::io::Write as _;
use std::path::PathBuf;
use std::time::Duration;

use afford::datastore::{DatasetHeader, DatasetWriter};
use afford::eval::{write_log, LogRow};
use afford::session::{Pilot, Session};
use afford::sim::EGO_ID;
use clap::Args;
use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::Message;

use crate::common::{create, track_id, Prepared, SimArgs};
use crate::failure::{Classify, Failure, Outcome};
use crate::protocol::{AffordanceView, CarView, ClientMessage, Role, ServerMessage, Switch};

/// Frames a slow client may fall behind before new ones are dropped for it.
const CLIENT_BACKLOG: usize = 64;

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// TCP port; 0 picks a free one.
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    /// Milliseconds between control ticks.
    #[arg(long, default_value_t = 100)]
    pub tick_ms: u64,
    /// Trajectory log written on shutdown.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

/// Live simulation driven over WebSocket.
#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub net: NetArgs,
    /// Dataset that `record: on` appends frames to.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Add to an existing dataset instead of replacing it.
    #[arg(long)]
    pub append: bool,
    /// Start in manual mode.
    #[arg(long)]
    pub manual: bool,
}

pub struct ServiceOptions {
    pub net: NetArgs,
    pub record: Option<PathBuf>,
    pub append: bool,
    pub record_on: bool,
    pub manual: bool,
    /// Stop after this many control ticks.
    pub stop_after: Option<u64>,
}

pub fn run(args: ServeArgs) -> Outcome {
    let stop_after = args.sim.duration.is_some();
    let p = args.sim.prepare()?;
    let stop_after = stop_after.then(|| p.scenario.control_ticks());
    let opts = ServiceOptions {
        net: args.net,
        record: args.record,
        append: args.append,
        record_on: false,
        manual: args.manual,
        stop_after,
    };
    run_service(p, opts)
}

pub fn run_service(p: Prepared, opts: ServiceOptions) -> Outcome {
    let header = DatasetHeader { spec: p.session.spec, camera: p.session.config.camera };
    let writer = match &opts.record {
        Some(path) if opts.append && path.exists() => Some(DatasetWriter::append_to(path, header).config("opening the dataset")?),
        Some(path) => {
            drop(create(path)?);
            Some(DatasetWriter::create(path, header).config("creating the dataset")?)
        }
        None => None,
    };
    if opts.net.tick_ms == 0 {
        return Err(Failure::config("--tick-ms must be positive"));
    }
    let mut session = p.session;
    if opts.manual {
        session.set_pilot(Pilot::Manual);
    }
    let mut service = Service {
        track: track_id(&p.scenario),
        session,
        clients: Vec::new(),
        writer,
        recording: opts.record_on,
        rows: Vec::new(),
        keep_rows: opts.net.log.is_some(),
    };
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().runtime("starting the runtime")?;
    rt.block_on(service.serve(&opts))?;
    drop(rt);
    service.finish(&opts)
}

enum Event {
    Join(u64, mpsc::Sender<Message>),
    Text(u64, String),
    Binary(u64),
    Leave(u64),
}

struct Client {
    id: u64,
    tx: mpsc::Sender<Message>,
}

struct Service {
    track: String,
    session: Session,
    /// In join order; the first is the driver.
    clients: Vec<Client>,
    writer: Option<DatasetWriter>,
    recording: bool,
    rows: Vec<LogRow>,
    keep_rows: bool,
}

impl Service {
    async fn serve(&mut self, opts: &ServiceOptions) -> Outcome {
        let listener = TcpListener::bind((opts.net.host.as_str(), opts.net.port))
            .await
            .runtime(&format!("binding {}:{}", opts.net.host, opts.net.port))?;
        let addr = listener.local_addr().runtime("reading the bound address")?;
        println!("listening on ws://{addr}");
        let _ = std::io::stdout().flush();

        let (events, mut inbox) = mpsc::unbounded_channel();
        tokio::spawn(accept_loop(listener, events));
        let mut clock = tokio::time::interval(Duration::from_millis(opts.net.tick_ms));
        let ctrl_c = tokio::signal::ctrl_c();
        tokio::pin!(ctrl_c);
        loop {
            tokio::select! {
                _ = clock.tick() => {
                    // paused while nobody is connected
                    if self.clients.is_empty() {
                        continue;
                    }
                    self.step()?;
                    if opts.stop_after.is_some_and(|n| self.session.control_tick() >= n) {
                        break;
                    }
                }
                Some(ev) = inbox.recv() => self.handle(ev),
                _ = &mut ctrl_c => break,
            }
        }
        self.clients.clear();
        // let connection tasks send their close frames
        tokio::time::sleep(Duration::from_millis(50)).await;
        Ok(())
    }

    fn tick(&self) -> u64 {
        self.session.control_tick()
    }

    fn send(&self, client: &Client, msg: &ServerMessage) {
        let text = serde_json::to_string(msg).expect("server messages serialize");
        let _ = client.tx.try_send(Message::text(text));
    }

    fn mode_frame(&self, role: Role) -> ServerMessage {
        ServerMessage::Mode { tick: self.tick(), mode: self.session.pilot, record: self.recording.into(), role }
    }

    fn announce_mode(&self) {
        for (i, c) in self.clients.iter().enumerate() {
            self.send(c, &self.mode_frame(if i == 0 { Role::Driver } else { Role::Observer }));
        }
    }

    fn reject(&self, id: u64, message: String) {
        if let Some(c) = self.clients.iter().find(|c| c.id == id) {
            self.send(c, &ServerMessage::Error { tick: self.tick(), message });
        }
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Join(id, tx) => {
                self.clients.push(Client { id, tx });
                let role = if self.clients.len() == 1 { Role::Driver } else { Role::Observer };
                self.send(self.clients.last().expect("just pushed"), &self.mode_frame(role));
            }
            Event::Leave(id) => {
                let was_driver = self.clients.first().is_some_and(|c| c.id == id);
                self.clients.retain(|c| c.id != id);
                if was_driver {
                    if let Some(next) = self.clients.first() {
                        self.send(next, &self.mode_frame(Role::Driver));
                    }
                }
            }
            Event::Binary(id) => self.reject(id, "binary frames are not supported".into()),
            Event::Text(id, text) => {
                let msg = match ClientMessage::parse(&text) {
                    Ok(m) => m,
                    Err(e) => return self.reject(id, e),
                };
                if self.clients.first().map(|c| c.id) != Some(id) {
                    return self.reject(id, "read-only client: only the driver may send commands".into());
                }
                match msg {
                    ClientMessage::Control { steer, accel, .. } => {
                        self.session.set_manual_command(afford::sim::ControlCommand::new(steer, accel));
                    }
                    ClientMessage::Mode { mode, record, .. } => {
                        if record == Some(Switch::On) && self.writer.is_none() {
                            return self.reject(id, "recording needs a dataset; start with --record".into());
                        }
                        if let Some(m) = mode {
                            self.session.set_pilot(m);
                        }
                        if let Some(r) = record {
                            self.recording = r == Switch::On;
                        }
                        self.announce_mode();
                    }
                }
            }
        }
    }

    fn step(&mut self) -> Outcome {
        let out = if self.recording {
            let (out, record) = self.session.tick_capturing(&self.track).runtime("simulation")?;
            if let (Some(r), Some(w)) = (record, self.writer.as_mut()) {
                w.append(&r).runtime("recording a frame")?;
            }
            out
        } else {
            self.session.tick().runtime("simulation")?
        };
        let s = &self.session;
        let world = &s.world;
        let truth = s.truth();
        let estimate = s.perceiver.perceive(world, EGO_ID, &s.config.affordance, &s.spec).ok();
        let state = ServerMessage::State {
            tick: s.control_tick(),
            time: world.time,
            ego: CarView::from(world.ego()),
            traffic: world.cars.iter().filter(|c| !c.is_ego).map(CarView::from).collect(),
            affordance_truth: truth.as_ref().map(AffordanceView::from),
            affordance_estimate: estimate.as_ref().map(|e| AffordanceView::from(&e.vector)),
            mode: s.pilot,
            drive_mode: out.decision.map(|d| d.mode.as_str().to_string()),
            recording: self.recording,
            collision: out.colliding.iter().any(|&(a, b)| a == EGO_ID || b == EGO_ID),
        };
        let text = serde_json::to_string(&state).expect("server messages serialize");
        let frame = Message::text(text);
        for c in &self.clients {
            let _ = c.tx.try_send(frame.clone());
        }
        if self.keep_rows {
            self.rows.push(out.row);
        }
        Ok(())
    }

    fn finish(self, opts: &ServiceOptions) -> Outcome {
        if let Some(w) = self.writer {
            let n = w.written();
            w.finish().runtime("closing the dataset")?;
            eprintln!("recorded {n} frames");
        }
        if let Some(path) = &opts.net.log {
            write_log(&self.rows, create(path)?).runtime("writing the trajectory")?;
        }
        Ok(())
    }
}

async fn accept_loop(listener: TcpListener, events: mpsc::UnboundedSender<Event>) {
    let mut next_id = 0u64;
    loop {
        let Ok((stream, _)) = listener.accept().await else { continue };
        next_id += 1;
        tokio::spawn(connection(stream, next_id, events.clone()));
    }
}

async fn connection(stream: TcpStream, id: u64, events: mpsc::UnboundedSender<Event>) {
    let Ok(ws) = tokio_tungstenite::accept_async(stream).await else { return };
    let (mut sink, mut source) = ws.split();
    let (tx, mut rx) = mpsc::channel::<Message>(CLIENT_BACKLOG);
    if events.send(Event::Join(id, tx)).is_err() {
        return;
    }
    let writer = async {
        while let Some(m) = rx.recv().await {
            if sink.send(m).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    };
    let reader = async {
        while let Some(Ok(msg)) = source.next().await {
            let ev = match msg {
                Message::Text(t) => Event::Text(id, t.to_string()),
                Message::Binary(_) => Event::Binary(id),
                Message::Close(_) => break,
                _ => continue,
            };
            if events.send(ev).is_err() {
                break;
            }
        }
    };
    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
    let _ = events.send(Event::Leave(id));
}
