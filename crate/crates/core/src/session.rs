//! Namespaced per-user state.
//!
//! Every session owns a set of namespaces (`derm`, `pubmed`, ...) holding
//! key/value pairs. Whole namespaces can be reset without touching the
//! others. Writers that must not interleave (a case reset and a chat append,
//! say) take the per-namespace async lock from [`SessionStore::lock_namespace`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use rand::RngCore;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const DEFAULT_IDLE_TTL: Duration = Duration::from_secs(24 * 60 * 60);
pub const SNAPSHOT_FILE: &str = "sessions.json";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("unknown or expired session")]
    UnknownSession,
    #[error("invalid session key: {0}")]
    InvalidKey(&'static str),
    #[error("numbers stored in session state must be finite")]
    NonFiniteNumber,
    #[error("cannot encode value: {0}")]
    Encode(String),
    #[error("cannot decode stored value: {0}")]
    Decode(String),
    #[error("snapshot error: {0}")]
    Snapshot(String),
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    pub fn parse(token: &str) -> Option<Self> {
        let ok = !token.is_empty()
            && token.len() <= 128
            && token.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
        ok.then(|| Self(token.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn generate() -> Self {
        let mut bytes = [0u8; 24];
        rand::rng().fill_bytes(&mut bytes);
        Self(bytes.iter().map(|b| format!("{b:02x}")).collect())
    }
}

impl fmt::Debug for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Tokens are bearer credentials; keep them out of debug output.
        let prefix: String = self.0.chars().take(6).collect();
        write!(f, "SessionId({prefix}…)")
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SessionKey {
    pub session_id: SessionId,
    pub namespace: String,
    pub key: String,
}

impl SessionKey {
    pub fn new(session_id: &SessionId, namespace: &str, key: &str) -> Result<Self, SessionError> {
        if namespace.is_empty() {
            return Err(SessionError::InvalidKey("namespace must not be empty"));
        }
        if key.is_empty() {
            return Err(SessionError::InvalidKey("key must not be empty"));
        }
        Ok(Self {
            session_id: session_id.clone(),
            namespace: namespace.to_string(),
            key: key.to_string(),
        })
    }
}

/// A stored datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum StateValue {
    Text(String),
    Number(f64),
    Boolean(bool),
    List(Vec<StateValue>),
    Record(BTreeMap<String, StateValue>),
    /// Reference to out-of-line binary content, such as an image path.
    BinaryRef(String),
}

impl StateValue {
    fn check_finite(&self) -> Result<(), SessionError> {
        match self {
            StateValue::Number(n) if !n.is_finite() => Err(SessionError::NonFiniteNumber),
            StateValue::List(items) => items.iter().try_for_each(Self::check_finite),
            StateValue::Record(fields) => fields.values().try_for_each(Self::check_finite),
            _ => Ok(()),
        }
    }

    /// Converts any serde-serializable value. `null`s (e.g. `None` fields)
    /// are rejected; skip them at the source.
    pub fn encode<T: Serialize + ?Sized>(value: &T) -> Result<Self, SessionError> {
        let json = serde_json::to_value(value).map_err(|e| SessionError::Encode(e.to_string()))?;
        Self::from_json(json)
    }

    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, SessionError> {
        serde_json::from_value(self.to_json()).map_err(|e| SessionError::Decode(e.to_string()))
    }

    fn from_json(json: serde_json::Value) -> Result<Self, SessionError> {
        use serde_json::Value;
        Ok(match json {
            Value::Null => return Err(SessionError::Encode("null is not storable".into())),
            Value::Bool(b) => StateValue::Boolean(b),
            Value::Number(n) => StateValue::Number(
                n.as_f64().ok_or_else(|| SessionError::Encode(format!("number {n} not representable")))?,
            ),
            Value::String(s) => StateValue::Text(s),
            Value::Array(items) => {
                StateValue::List(items.into_iter().map(Self::from_json).collect::<Result<_, _>>()?)
            }
            Value::Object(map) => StateValue::Record(
                map.into_iter()
                    .map(|(k, v)| Ok((k, Self::from_json(v)?)))
                    .collect::<Result<_, SessionError>>()?,
            ),
        })
    }

    fn to_json(&self) -> serde_json::Value {
        use serde_json::Value;
        match self {
            StateValue::Text(s) | StateValue::BinaryRef(s) => Value::String(s.clone()),
            StateValue::Number(n) => {
                // Integral values go back as integers so they decode into integer fields.
                if n.fract() == 0.0 && n.abs() < 9.007_199_254_740_992e15 {
                    Value::from(*n as i64)
                } else {
                    serde_json::Number::from_f64(*n).map(Value::Number).unwrap_or(Value::Null)
                }
            }
            StateValue::Boolean(b) => Value::Bool(*b),
            StateValue::List(items) => Value::Array(items.iter().map(Self::to_json).collect()),
            StateValue::Record(fields) => {
                Value::Object(fields.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
            }
        }
    }
}

type Namespaces = HashMap<String, BTreeMap<String, StateValue>>;

struct SessionSlot {
    data: Mutex<Namespaces>,
    last_access: Mutex<Instant>,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl SessionSlot {
    fn new(data: Namespaces) -> Self {
        Self {
            data: Mutex::new(data),
            last_access: Mutex::new(Instant::now()),
            locks: Mutex::new(HashMap::new()),
        }
    }

    fn touch(&self) {
        *self.last_access.lock().unwrap_or_else(|p| p.into_inner()) = Instant::now();
    }

    fn data(&self) -> std::sync::MutexGuard<'_, Namespaces> {
        self.data.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    sessions: BTreeMap<SessionId, BTreeMap<String, BTreeMap<String, StateValue>>>,
}

/// In-memory session store with idle eviction and optional JSON snapshots.
pub struct SessionStore {
    sessions: RwLock<HashMap<SessionId, Arc<SessionSlot>>>,
    idle_ttl: Duration,
}

impl Default for SessionStore {
    fn default() -> Self {
        Self::new(DEFAULT_IDLE_TTL)
    }
}

impl fmt::Debug for SessionStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionStore")
            .field("sessions", &self.session_count())
            .field("idle_ttl", &self.idle_ttl)
            .finish()
    }
}

impl SessionStore {
    pub fn new(idle_ttl: Duration) -> Self {
        Self {
            sessions: RwLock::new(HashMap::new()),
            idle_ttl,
        }
    }

    fn slot(&self, id: &SessionId) -> Result<Arc<SessionSlot>, SessionError> {
        let slot = self
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or(SessionError::UnknownSession)?;
        let idle = slot.last_access.lock().unwrap_or_else(|p| p.into_inner()).elapsed();
        if idle > self.idle_ttl {
            self.sessions.write().unwrap_or_else(|p| p.into_inner()).remove(id);
            return Err(SessionError::UnknownSession);
        }
        slot.touch();
        Ok(slot)
    }

    pub fn create_session(&self) -> SessionId {
        let mut map = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        loop {
            let id = SessionId::generate();
            if !map.contains_key(&id) {
                map.insert(id.clone(), Arc::new(SessionSlot::new(Namespaces::new())));
                return id;
            }
        }
    }

    pub fn exists(&self, id: &SessionId) -> bool {
        self.slot(id).is_ok()
    }

    pub fn end_session(&self, id: &SessionId) -> bool {
        self.sessions.write().unwrap_or_else(|p| p.into_inner()).remove(id).is_some()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn put(&self, key: &SessionKey, value: StateValue) -> Result<(), SessionError> {
        value.check_finite()?;
        let slot = self.slot(&key.session_id)?;
        slot.data()
            .entry(key.namespace.clone())
            .or_default()
            .insert(key.key.clone(), value);
        Ok(())
    }

    pub fn get(&self, key: &SessionKey) -> Result<Option<StateValue>, SessionError> {
        let slot = self.slot(&key.session_id)?;
        let data = slot.data();
        Ok(data.get(&key.namespace).and_then(|ns| ns.get(&key.key)).cloned())
    }

    pub fn remove(&self, key: &SessionKey) -> Result<Option<StateValue>, SessionError> {
        let slot = self.slot(&key.session_id)?;
        let mut data = slot.data();
        Ok(data.get_mut(&key.namespace).and_then(|ns| ns.remove(&key.key)))
    }

    /// Removes every key in `namespace`, returning how many were removed.
    pub fn reset_namespace(&self, id: &SessionId, namespace: &str) -> Result<usize, SessionError> {
        let slot = self.slot(id)?;
        let removed = slot.data().remove(namespace).map(|ns| ns.len()).unwrap_or(0);
        Ok(removed)
    }

    /// Keys currently set in `namespace`, sorted.
    pub fn keys(&self, id: &SessionId, namespace: &str) -> Result<Vec<String>, SessionError> {
        let slot = self.slot(id)?;
        let data = slot.data();
        Ok(data
            .get(namespace)
            .map(|ns| ns.keys().cloned().collect())
            .unwrap_or_default())
    }

    /// Full contents of `namespace`.
    pub fn entries(&self, id: &SessionId, namespace: &str) -> Result<BTreeMap<String, StateValue>, SessionError> {
        let slot = self.slot(id)?;
        let data = slot.data();
        Ok(data.get(namespace).cloned().unwrap_or_default())
    }

    pub fn put_as<T: Serialize + ?Sized>(&self, key: &SessionKey, value: &T) -> Result<(), SessionError> {
        self.put(key, StateValue::encode(value)?)
    }

    pub fn get_as<T: DeserializeOwned>(&self, key: &SessionKey) -> Result<Option<T>, SessionError> {
        self.get(key)?.map(|v| v.decode()).transpose()
    }

    /// Async lock serializing writers of one namespace in one session.
    pub async fn lock_namespace(
        &self,
        id: &SessionId,
        namespace: &str,
    ) -> Result<tokio::sync::OwnedMutexGuard<()>, SessionError> {
        let slot = self.slot(id)?;
        let lock = slot
            .locks
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .entry(namespace.to_string())
            .or_default()
            .clone();
        Ok(lock.lock_owned().await)
    }

    /// Drops sessions idle for longer than the TTL as of `now`.
    pub fn evict_idle_at(&self, now: Instant) -> usize {
        let mut map = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        let before = map.len();
        map.retain(|_, slot| {
            let last = *slot.last_access.lock().unwrap_or_else(|p| p.into_inner());
            now.saturating_duration_since(last) <= self.idle_ttl
        });
        before - map.len()
    }

    pub fn evict_idle(&self) -> usize {
        self.evict_idle_at(Instant::now())
    }

    pub fn snapshot_json(&self) -> Result<String, SessionError> {
        let map = self.sessions.read().unwrap_or_else(|p| p.into_inner());
        let snapshot = Snapshot {
            sessions: map
                .iter()
                .map(|(id, slot)| {
                    let data = slot.data();
                    let ns = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
                    (id.clone(), ns)
                })
                .collect(),
        };
        serde_json::to_string(&snapshot).map_err(|e| SessionError::Snapshot(e.to_string()))
    }

    /// Loads sessions from a snapshot, replacing any with the same id.
    /// Restored sessions start a fresh idle period.
    pub fn restore_json(&self, json: &str) -> Result<usize, SessionError> {
        let snapshot: Snapshot =
            serde_json::from_str(json).map_err(|e| SessionError::Snapshot(e.to_string()))?;
        let mut map = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        let n = snapshot.sessions.len();
        for (id, namespaces) in snapshot.sessions {
            let data: Namespaces = namespaces.into_iter().collect();
            map.insert(id, Arc::new(SessionSlot::new(data)));
        }
        Ok(n)
    }

    pub fn save_snapshot(&self, dir: &Path) -> Result<(), SessionError> {
        std::fs::create_dir_all(dir).map_err(|e| SessionError::Snapshot(e.to_string()))?;
        let json = self.snapshot_json()?;
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        std::fs::write(&tmp, json).map_err(|e| SessionError::Snapshot(e.to_string()))?;
        std::fs::rename(&tmp, dir.join(SNAPSHOT_FILE)).map_err(|e| SessionError::Snapshot(e.to_string()))
    }

    /// Restores from `dir` if a snapshot exists there; returns sessions loaded.
    pub fn load_snapshot(&self, dir: &Path) -> Result<usize, SessionError> {
        let path = dir.join(SNAPSHOT_FILE);
        if !path.exists() {
            return Ok(0);
        }
        let json = std::fs::read_to_string(&path).map_err(|e| SessionError::Snapshot(e.to_string()))?;
        self.restore_json(&json)
    }
}
