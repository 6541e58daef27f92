//! Topic-based publish/subscribe transport.
//!
//! The bus is in-process. Remote clients reach it through the WebSocket
//! [`bridge`], which speaks the same binary [`frame`] format.

pub mod bridge;
pub mod frame;
pub mod schema;

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock, Weak};
use std::time::{Duration, Instant};

use bytes::Bytes;
use thiserror::Error;

pub use bridge::{serve_bridge, serve_bridge_on, BridgeError, BridgeHandle};
pub use frame::{decode_exact, decode_frame, encode_frame, Envelope, FrameError, SchemaId};

/// Canonical topic names.
pub mod topics {
    pub const GRIPPER_GOAL: &str = "/gripper/goal";
    pub const GRIPPER_CMD: &str = "/gripper/cmd";
    pub const PLAN_JOINT_STATES: &str = "/plan/joint_states";
    pub const ROBOT_JOINT_STATES: &str = "/robot/joint_states";
    pub const TWIN_STATE: &str = "/twin/state";
    pub const CLOUD_FUSED: &str = "/cloud/fused";
    pub const WORLD_EVENTS: &str = "/world/events";
    pub const WORLD_GEOMETRY: &str = "/world/geometry";
    pub const SESSION_CLOCK: &str = "/session/clock";

    pub fn cam_depth(id: &str) -> String {
        format!("/cam/{id}/depth")
    }

    pub fn cam_color(id: &str) -> String {
        format!("/cam/{id}/color")
    }

    /// Point-cloud topics are always delivered latest-wins to remote clients.
    pub fn is_cloud(topic: &str) -> bool {
        topic.starts_with("/cloud/")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BusError {
    #[error("bus is shut down")]
    Shutdown,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("queue capacity must be positive")]
    ZeroCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubscriptionMode {
    LatestWins,
    Queued { capacity: usize },
}

/// Source of session-relative timestamps.
#[derive(Debug, Clone)]
pub enum BusClock {
    Wall(Instant),
    /// Driven externally, e.g. by the simulation loop.
    Manual(Arc<AtomicU64>),
}

impl BusClock {
    pub fn now_ns(&self) -> u64 {
        match self {
            BusClock::Wall(start) => start.elapsed().as_nanos() as u64,
            BusClock::Manual(t) => t.load(Ordering::Acquire),
        }
    }
}

#[derive(Debug, Default)]
struct SubState {
    latest: Option<Envelope>,
    queue: VecDeque<Envelope>,
    dropped: u64,
    closed: bool,
}

#[derive(Debug)]
struct SubShared {
    mode: SubscriptionMode,
    state: Mutex<SubState>,
    ready: Condvar,
}

impl SubShared {
    fn deliver(&self, env: Envelope) {
        let mut st = self.state.lock().unwrap();
        match self.mode {
            SubscriptionMode::LatestWins => {
                if st.latest.is_some() {
                    st.dropped += 1;
                }
                st.latest = Some(env);
            }
            SubscriptionMode::Queued { capacity } => {
                if st.queue.len() == capacity {
                    st.queue.pop_front();
                    st.dropped += 1;
                }
                st.queue.push_back(env);
            }
        }
        drop(st);
        self.ready.notify_all();
    }
}

#[derive(Debug)]
struct Inner {
    topics: RwLock<HashMap<String, Vec<Weak<SubShared>>>>,
    shutdown: AtomicBool,
    clock: BusClock,
    last_ts: AtomicU64,
}

/// Cheaply cloneable handle to one bus instance.
#[derive(Debug, Clone)]
pub struct Bus {
    inner: Arc<Inner>,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

impl Bus {
    /// A bus stamping messages with wall time since creation.
    pub fn new() -> Self {
        Self::with_clock(BusClock::Wall(Instant::now()))
    }

    /// A bus whose clock is set through the returned counter (nanoseconds).
    pub fn with_manual_clock() -> (Self, Arc<AtomicU64>) {
        let t = Arc::new(AtomicU64::new(0));
        (Self::with_clock(BusClock::Manual(t.clone())), t)
    }

    pub fn with_clock(clock: BusClock) -> Self {
        Self {
            inner: Arc::new(Inner {
                topics: RwLock::new(HashMap::new()),
                shutdown: AtomicBool::new(false),
                clock,
                last_ts: AtomicU64::new(0),
            }),
        }
    }

    pub fn now_ns(&self) -> u64 {
        self.inner.clock.now_ns()
    }

    pub fn is_shutdown(&self) -> bool {
        self.inner.shutdown.load(Ordering::Acquire)
    }

    pub fn subscribe(&self, topic: &str, mode: SubscriptionMode) -> Result<Subscription, BusError> {
        if self.is_shutdown() {
            return Err(BusError::Shutdown);
        }
        frame::validate_topic(topic)?;
        if let SubscriptionMode::Queued { capacity: 0 } = mode {
            return Err(BusError::ZeroCapacity);
        }
        let shared = Arc::new(SubShared {
            mode,
            state: Mutex::new(SubState::default()),
            ready: Condvar::new(),
        });
        self.inner
            .topics
            .write()
            .unwrap()
            .entry(topic.to_owned())
            .or_default()
            .push(Arc::downgrade(&shared));
        Ok(Subscription {
            topic: topic.to_owned(),
            shared,
            bus: Arc::downgrade(&self.inner),
        })
    }

    /// Publishes with a bus-assigned timestamp. Timestamps never decrease.
    pub fn publish(&self, topic: &str, schema: SchemaId, payload: impl Into<Bytes>) -> Result<u64, BusError> {
        if self.is_shutdown() {
            return Err(BusError::Shutdown);
        }
        let now = self.inner.clock.now_ns();
        let ts = self.inner.last_ts.fetch_max(now, Ordering::AcqRel).max(now);
        let env = Envelope::new(topic, schema, ts, payload)?;
        self.forward(env)?;
        Ok(ts)
    }

    /// Delivers an already-stamped envelope unchanged (bridge passthrough, replay).
    pub fn forward(&self, env: Envelope) -> Result<(), BusError> {
        if self.is_shutdown() {
            return Err(BusError::Shutdown);
        }
        let subs: Vec<Arc<SubShared>> = {
            let topics = self.inner.topics.read().unwrap();
            match topics.get(&env.topic) {
                Some(list) => list.iter().filter_map(Weak::upgrade).collect(),
                None => return Ok(()),
            }
        };
        let n = subs.len();
        for (i, s) in subs.into_iter().enumerate() {
            if i + 1 == n {
                s.deliver(env);
                break;
            }
            s.deliver(env.clone());
        }
        Ok(())
    }

    /// Stops the bus. Idempotent; wakes every blocked receiver.
    pub fn shutdown(&self) {
        if self.inner.shutdown.swap(true, Ordering::AcqRel) {
            return;
        }
        let topics = self.inner.topics.read().unwrap();
        for s in topics.values().flatten().filter_map(Weak::upgrade) {
            s.state.lock().unwrap().closed = true;
            s.ready.notify_all();
        }
    }

    pub fn subscriber_count(&self, topic: &str) -> usize {
        self.inner
            .topics
            .read()
            .unwrap()
            .get(topic)
            .map_or(0, |l| l.iter().filter(|w| w.strong_count() > 0).count())
    }
}

/// Receiving end of a subscription. Unsubscribes on drop.
#[derive(Debug)]
pub struct Subscription {
    topic: String,
    shared: Arc<SubShared>,
    bus: Weak<Inner>,
}

impl Subscription {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn mode(&self) -> SubscriptionMode {
        self.shared.mode
    }

    /// Messages discarded because the consumer fell behind.
    pub fn dropped(&self) -> u64 {
        self.shared.state.lock().unwrap().dropped
    }

    fn take(st: &mut SubState) -> Option<Envelope> {
        st.latest.take().or_else(|| st.queue.pop_front())
    }

    /// Non-blocking receive.
    pub fn poll(&self) -> Option<Envelope> {
        Self::take(&mut self.shared.state.lock().unwrap())
    }

    /// Everything currently pending, oldest first.
    pub fn drain(&self) -> Vec<Envelope> {
        let mut st = self.shared.state.lock().unwrap();
        let mut out: Vec<Envelope> = st.queue.drain(..).collect();
        out.extend(st.latest.take());
        out
    }

    /// Blocks until a message arrives, the timeout passes, or the bus shuts down.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Envelope>, BusError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.state.lock().unwrap();
        loop {
            if let Some(e) = Self::take(&mut st) {
                return Ok(Some(e));
            }
            if st.closed {
                return Err(BusError::Shutdown);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            st = self.shared.ready.wait_timeout(st, deadline - now).unwrap().0;
        }
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        if let Some(inner) = self.bus.upgrade() {
            if let Ok(mut topics) = inner.topics.write() {
                if let Some(list) = topics.get_mut(&self.topic) {
                    list.retain(|w| w.strong_count() > 0 && !std::ptr::eq(w.as_ptr(), Arc::as_ptr(&self.shared)));
                    if list.is_empty() {
                        topics.remove(&self.topic);
                    }
                }
            }
        }
    }
}
