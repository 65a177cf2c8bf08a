//! Concurrent front for [`Central`]: one writer task owns the service and
//! assigns event sequence numbers; readers work from published snapshots.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use thiserror::Error;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;

use super::state::{CentralState, StateEvent};
use super::store::{StateDir, StoreError};
use super::{snapshot_of, Central, CentralConfig, Selector, Snapshot};
use crate::domain::{Clock, Millis, VirtualClock, WallClock};

const QUEUE_DEPTH: usize = 256;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub central: CentralConfig,
    pub state_dir: Option<PathBuf>,
    pub virtual_clock: bool,
    /// Write a state snapshot after this many new events.
    pub snapshot_every: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            central: CentralConfig::default(),
            state_dir: None,
            virtual_clock: false,
            snapshot_every: 1_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot restore state: {0}")]
    Restore(String),
    #[error("service writer has stopped")]
    Closed,
}

type Job = Box<dyn FnOnce(&mut Central) + Send>;

enum TimeSource {
    Wall(WallClock),
    Virtual(VirtualClock),
}

struct Shared {
    jobs: mpsc::Sender<Job>,
    state: watch::Receiver<Arc<CentralState>>,
    head: watch::Receiver<u64>,
    log: Arc<RwLock<Vec<StateEvent>>>,
    time: TimeSource,
}

#[derive(Clone)]
pub struct ServiceHandle {
    shared: Arc<Shared>,
}

impl ServiceHandle {
    /// Loads any persisted state and spawns the writer task. Must be called
    /// from within a Tokio runtime.
    pub fn start(config: ServiceConfig) -> Result<(Self, JoinHandle<()>), ServiceError> {
        let (store, central) = match &config.state_dir {
            Some(dir) => {
                let (store, snapshot, events) = StateDir::open(dir)?;
                let central = match snapshot {
                    Some(s) => Central::restore(config.central.clone(), s, events),
                    None => Central::from_events(config.central.clone(), events),
                }
                .map_err(|e| ServiceError::Restore(e.to_string()))?;
                (Some(store), central)
            }
            None => (None, Central::new(config.central.clone())),
        };
        let time = if config.virtual_clock {
            let start = central.events().last().map(|e| e.at).unwrap_or(0);
            TimeSource::Virtual(VirtualClock::new(start))
        } else {
            TimeSource::Wall(WallClock)
        };

        let (jobs_tx, mut jobs_rx) = mpsc::channel::<Job>(QUEUE_DEPTH);
        let (state_tx, state_rx) = watch::channel(Arc::new(central.state().clone()));
        let (head_tx, head_rx) = watch::channel(central.last_seq());
        let log = Arc::new(RwLock::new(central.events().to_vec()));
        // The writer must not hold the job sender, or the queue never closes.
        let writer_log = Arc::clone(&log);
        let shared = Arc::new(Shared {
            jobs: jobs_tx,
            state: state_rx,
            head: head_rx,
            log,
            time,
        });

        let snapshot_every = config.snapshot_every.max(1);
        let task = tokio::spawn(async move {
            let mut central = central;
            let mut store = store;
            let mut since_snapshot = 0u64;
            while let Some(job) = jobs_rx.recv().await {
                let before = central.events().len();
                job(&mut central);
                let fresh = &central.events()[before..];
                if fresh.is_empty() {
                    continue;
                }
                if let Some(store) = store.as_mut() {
                    if let Err(e) = store.append(fresh) {
                        tracing::error!(error = %e, "failed to persist events");
                    }
                    since_snapshot += fresh.len() as u64;
                    if since_snapshot >= snapshot_every {
                        since_snapshot = 0;
                        if let Err(e) = store.write_snapshot(central.state()) {
                            tracing::error!(error = %e, "failed to write snapshot");
                        }
                    }
                }
                writer_log
                    .write()
                    .expect("event log lock poisoned")
                    .extend_from_slice(fresh);
                state_tx.send_replace(Arc::new(central.state().clone()));
                head_tx.send_replace(central.last_seq());
            }
            if let Some(store) = store.as_ref() {
                if let Err(e) = store.write_snapshot(central.state()) {
                    tracing::error!(error = %e, "failed to write final snapshot");
                }
            }
        });
        Ok((Self { shared }, task))
    }

    /// Runs `f` on the writer task and returns its result.
    pub async fn call<R, F>(&self, f: F) -> Result<R, ServiceError>
    where
        R: Send + 'static,
        F: FnOnce(&mut Central) -> R + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        let job: Job = Box::new(move |central| {
            let _ = tx.send(f(central));
        });
        self.shared.jobs.send(job).await.map_err(|_| ServiceError::Closed)?;
        rx.await.map_err(|_| ServiceError::Closed)
    }

    /// Current service time. In virtual mode a caller-supplied instant moves
    /// the clock forward; it never moves back.
    pub fn now(&self, requested: Option<Millis>) -> Millis {
        match &self.shared.time {
            TimeSource::Wall(c) => c.now_ms(),
            TimeSource::Virtual(c) => match requested {
                Some(t) => c.advance_to(t),
                None => c.now_ms(),
            },
        }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self.shared.time, TimeSource::Virtual(_))
    }

    pub fn state(&self) -> Arc<CentralState> {
        self.shared.state.borrow().clone()
    }

    pub fn snapshot(&self, selector: &Selector) -> Snapshot {
        let state = self.state();
        let log = self.shared.log.read().expect("event log lock poisoned");
        let upto = (state.last_seq as usize).min(log.len());
        snapshot_of(&state, &log[..upto], selector)
    }

    pub fn events_after(&self, seq: u64) -> Vec<StateEvent> {
        let log = self.shared.log.read().expect("event log lock poisoned");
        let start = (seq as usize).min(log.len());
        log[start..].to_vec()
    }

    /// Watch channel carrying the latest committed event seq.
    pub fn head(&self) -> watch::Receiver<u64> {
        self.shared.head.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::central::Topology;

    #[tokio::test]
    async fn writes_are_serialized_and_published() {
        let (svc, _task) = ServiceHandle::start(ServiceConfig::default()).unwrap();
        svc.call(|c| c.provision(Topology::default(), 0)).await.unwrap().unwrap();
        let mut handles = Vec::new();
        for i in 0..20u64 {
            let svc = svc.clone();
            handles.push(tokio::spawn(async move {
                let nid = format!("{:010}", 1_000_000_000 + i);
                svc.call(move |c| c.register_citizen(&nid, "x", "y", 1)).await.unwrap()
            }));
        }
        for h in handles {
            h.await.unwrap().unwrap();
        }
        let mut head = svc.head();
        while *head.borrow_and_update() < 21 {
            head.changed().await.unwrap();
        }
        let state = svc.state();
        assert_eq!(state.citizens.len(), 20);
        assert_eq!(svc.events_after(0).len(), 21);
        let rebuilt = CentralState::replay(&svc.events_after(0)).unwrap();
        assert_eq!(&rebuilt, state.as_ref());
    }

    #[tokio::test]
    async fn state_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let config = ServiceConfig {
            state_dir: Some(dir.path().to_owned()),
            snapshot_every: 2,
            ..ServiceConfig::default()
        };
        {
            let (svc, task) = ServiceHandle::start(config.clone()).unwrap();
            svc.call(|c| c.provision(Topology::default(), 0)).await.unwrap().unwrap();
            for i in 0..3u64 {
                let nid = format!("{:013}", i);
                svc.call(move |c| c.register_citizen(&nid, "n", "p", 5)).await.unwrap().unwrap();
            }
            drop(svc);
            task.await.unwrap();
        }
        let (svc, _task) = ServiceHandle::start(config).unwrap();
        assert_eq!(svc.state().citizens.len(), 3);
        assert_eq!(svc.events_after(0).len(), 4);
        let err = svc
            .call(|c| c.register_citizen("0000000000000", "n", "p", 6))
            .await
            .unwrap()
            .unwrap_err();
        assert_eq!(err.code(), "duplicate_nid");
    }

    #[tokio::test]
    async fn virtual_clock_only_moves_forward() {
        let (svc, _task) = ServiceHandle::start(ServiceConfig {
            virtual_clock: true,
            ..ServiceConfig::default()
        })
        .unwrap();
        assert_eq!(svc.now(Some(5_000)), 5_000);
        assert_eq!(svc.now(Some(1_000)), 5_000);
        assert_eq!(svc.now(None), 5_000);
    }
}
