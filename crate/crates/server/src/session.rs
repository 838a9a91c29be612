use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use serde::Serialize;
use splatedit::editing::{apply_edit, undo, EditOp};
use splatedit::priors::PriorBackends;
use splatedit::trainer::{train_step, StepRecord, TrainConfig, Trainer};
use splatedit::{Camera, GaussianScene};
use tokio::sync::{broadcast, oneshot};

use crate::error::ApiError;
use crate::SNAPSHOT_EVERY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Training,
    Ready,
    Failed,
}

/// What readers see: a copy of the scene as of the last publication.
#[derive(Debug)]
pub struct Snapshot {
    pub scene: GaussianScene,
    pub step: usize,
    /// At least one step with the distillation term has run.
    pub distilled: bool,
}

impl Snapshot {
    pub fn revision(&self) -> u64 {
        self.scene.revision()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StatusBody {
    pub id: u64,
    pub state: SessionState,
    pub step: usize,
    pub steps: usize,
    pub revision: u64,
    /// Explicit index selections must carry this.
    pub layout_revision: u64,
    pub distilled: bool,
    pub last: Option<StepRecord>,
    pub error: Option<String>,
    pub elapsed_ms: f64,
}

pub(crate) enum Command {
    Edit {
        op: EditOp,
        revision: Option<u64>,
        reply: oneshot::Sender<Result<u64, ApiError>>,
    },
    Undo {
        reply: oneshot::Sender<Result<u64, ApiError>>,
    },
}

pub(crate) struct Session {
    pub id: u64,
    pub camera: Camera,
    pub cfg: TrainConfig,
    pub priors: PriorBackends,
    snapshot: RwLock<Arc<Snapshot>>,
    status: Mutex<StatusBody>,
    commands: Mutex<mpsc::Sender<Command>>,
    /// Carries the revision of every publication.
    pub frames: broadcast::Sender<u64>,
}

impl Session {
    /// Publishes the prepared scene and starts the writer thread.
    pub fn start(id: u64, camera: Camera, scene: GaussianScene, trainer: Trainer, priors: PriorBackends) -> Arc<Self> {
        let (tx, rx) = mpsc::channel();
        let (frames, _) = broadcast::channel(64);
        let cfg = trainer.cfg.clone();
        let status = StatusBody {
            id,
            state: if cfg.steps == 0 { SessionState::Ready } else { SessionState::Training },
            step: 0,
            steps: cfg.steps,
            revision: scene.revision(),
            layout_revision: scene.layout_revision(),
            distilled: false,
            last: None,
            error: None,
            elapsed_ms: 0.0,
        };
        let session = Arc::new(Self {
            id,
            camera,
            cfg,
            priors,
            snapshot: RwLock::new(Arc::new(Snapshot {
                scene: scene.snapshot(),
                step: 0,
                distilled: false,
            })),
            status: Mutex::new(status),
            commands: Mutex::new(tx),
            frames,
        });
        let writer = Writer {
            session: session.clone(),
            scene,
            trainer,
            distilled: false,
            step: 0,
        };
        std::thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || writer.run(rx))
            .expect("spawn session writer");
        session
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    pub fn status(&self) -> StatusBody {
        self.status.lock().expect("status lock poisoned").clone()
    }

    pub(crate) async fn send(&self, make: impl FnOnce(oneshot::Sender<Result<u64, ApiError>>) -> Command) -> Result<u64, ApiError> {
        let (reply, rx) = oneshot::channel();
        let gone = || ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, "internal", "session writer stopped");
        self.commands.lock().expect("command lock poisoned").send(make(reply)).map_err(|_| gone())?;
        rx.await.map_err(|_| gone())?
    }
}

struct Writer {
    session: Arc<Session>,
    scene: GaussianScene,
    trainer: Trainer,
    distilled: bool,
    step: usize,
}

impl Writer {
    fn run(mut self, rx: mpsc::Receiver<Command>) {
        let start = Instant::now();
        let steps = self.trainer.cfg.steps;
        while self.step < steps {
            while let Ok(cmd) = rx.try_recv() {
                self.handle(cmd);
            }
            let priors = self.session.priors.clone();
            match train_step(&mut self.scene, &mut self.trainer, &priors, self.step as u64) {
                Ok(rec) => {
                    self.distilled |= rec.distill > 0.0;
                    self.step += 1;
                    let mut st = self.session.status.lock().expect("status lock poisoned");
                    st.step = self.step;
                    st.last = Some(rec);
                    st.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
                }
                Err(e) => {
                    log::warn!("session {} training failed: {e}", self.session.id);
                    let mut st = self.session.status.lock().expect("status lock poisoned");
                    st.state = SessionState::Failed;
                    st.error = Some(e.to_string());
                    break;
                }
            }
            if self.step % SNAPSHOT_EVERY == 0 || self.step == steps {
                self.publish();
            }
        }
        {
            let mut st = self.session.status.lock().expect("status lock poisoned");
            if st.state == SessionState::Training {
                st.state = SessionState::Ready;
            }
        }
        self.publish();
        while let Ok(cmd) = rx.recv() {
            self.handle(cmd);
        }
    }

    fn published_revision(&self) -> u64 {
        self.session.snapshot().revision()
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Edit { op, revision, reply } => {
                let current = self.published_revision();
                let out = match revision {
                    Some(r) if r != current => Err(ApiError::stale_revision(r, current)),
                    _ => apply_edit(&mut self.scene, &op).map_err(ApiError::from),
                };
                if out.is_ok() {
                    self.publish();
                }
                let _ = reply.send(out);
            }
            Command::Undo { reply } => {
                let out = undo(&mut self.scene).map_err(|e| match e {
                    splatedit::Error::InvalidState(m) => ApiError::new(axum::http::StatusCode::CONFLICT, "nothing_to_undo", m),
                    e => e.into(),
                });
                if out.is_ok() {
                    self.publish();
                }
                let _ = reply.send(out);
            }
        }
    }

    fn publish(&self) {
        let snap = Arc::new(Snapshot {
            scene: self.scene.snapshot(),
            step: self.step,
            distilled: self.distilled,
        });
        let (revision, layout) = (snap.revision(), snap.scene.layout_revision());
        *self.session.snapshot.write().expect("snapshot lock poisoned") = snap;
        {
            let mut st = self.session.status.lock().expect("status lock poisoned");
            st.revision = revision;
            st.layout_revision = layout;
            st.distilled = self.distilled;
        }
        let _ = self.session.frames.send(revision);
    }
}
