//! Model-based check of the session store: random operations are applied to
//! both the store and a plain map, and every observation must agree.

#![allow(dead_code)]

use std::collections::BTreeMap;

use meditools_core::session::{SessionId, SessionKey, SessionStore, StateValue};
use rand::Rng;

pub const NAMESPACES: [&str; 4] = ["derm", "pubmed", "news", "prefs"];
const KEYS: [&str; 6] = ["case", "transcript", "phase", "guess", "selection", "history"];

type Model = BTreeMap<(usize, String), BTreeMap<String, StateValue>>;

pub fn random_value<R: Rng + ?Sized>(rng: &mut R, depth: u32) -> StateValue {
    match rng.random_range(0..if depth == 0 { 4 } else { 6 }) {
        0 => StateValue::Text((0..rng.random_range(0..12)).map(|_| rng.random_range('a'..='z')).collect()),
        1 => StateValue::Number(rng.random_range(-1e6..1e6)),
        2 => StateValue::Boolean(rng.random()),
        3 => StateValue::BinaryRef(format!("images/{}.png", rng.random_range(0..100))),
        4 => StateValue::List((0..rng.random_range(0..4)).map(|_| random_value(rng, depth - 1)).collect()),
        _ => StateValue::Record(
            (0..rng.random_range(0..4))
                .map(|i| (format!("f{i}"), random_value(rng, depth - 1)))
                .collect(),
        ),
    }
}

/// Runs `ops` random operations over three sessions, checking each result
/// against the model. Ends with a snapshot round trip.
pub fn run_random_ops<R: Rng + ?Sized>(rng: &mut R, ops: usize) -> Result<(), String> {
    let store = SessionStore::default();
    let ids: Vec<SessionId> = (0..3).map(|_| store.create_session()).collect();
    let mut model = Model::new();
    let key = |s: usize, ns: &str, k: &str| SessionKey::new(&ids[s], ns, k).unwrap();

    for step in 0..ops {
        let s = rng.random_range(0..ids.len());
        let ns = NAMESPACES[rng.random_range(0..NAMESPACES.len())];
        let k = KEYS[rng.random_range(0..KEYS.len())];
        let slot = model.entry((s, ns.to_string())).or_default();
        match rng.random_range(0..100) {
            0..=39 => {
                let v = random_value(rng, 2);
                store.put(&key(s, ns, k), v.clone()).map_err(|e| e.to_string())?;
                slot.insert(k.to_string(), v);
            }
            40..=64 => {
                let got = store.get(&key(s, ns, k)).map_err(|e| e.to_string())?;
                if got.as_ref() != slot.get(k) {
                    return Err(format!("step {step}: get {ns}/{k} diverged"));
                }
            }
            65..=74 => {
                let got = store.remove(&key(s, ns, k)).map_err(|e| e.to_string())?;
                if got != slot.remove(k) {
                    return Err(format!("step {step}: remove {ns}/{k} diverged"));
                }
            }
            75..=84 => {
                let removed = store.reset_namespace(&ids[s], ns).map_err(|e| e.to_string())?;
                if removed != slot.len() {
                    return Err(format!("step {step}: reset {ns} removed {removed}, expected {}", slot.len()));
                }
                slot.clear();
                if !store.keys(&ids[s], ns).map_err(|e| e.to_string())?.is_empty() {
                    return Err(format!("step {step}: reset {ns} left keys behind"));
                }
            }
            _ => {
                let entries = store.entries(&ids[s], ns).map_err(|e| e.to_string())?;
                if &entries != slot {
                    return Err(format!("step {step}: entries {ns} diverged"));
                }
            }
        }
    }

    let copy = SessionStore::default();
    copy.restore_json(&store.snapshot_json().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    for ((s, ns), want) in &model {
        if &copy.entries(&ids[*s], ns).map_err(|e| e.to_string())? != want {
            return Err(format!("snapshot lost {ns} for session {s}"));
        }
    }
    Ok(())
}

/// Writes into one namespace and resets another; the first must not change.
pub fn check_isolation<R: Rng + ?Sized>(rng: &mut R) -> Result<(), String> {
    let store = SessionStore::default();
    let a = store.create_session();
    let b = store.create_session();
    let v = random_value(rng, 2);
    store.put(&SessionKey::new(&a, "derm", "case").unwrap(), v.clone()).map_err(|e| e.to_string())?;
    for ns in ["news", "pubmed"] {
        store.put(&SessionKey::new(&a, ns, "case").unwrap(), random_value(rng, 2)).map_err(|e| e.to_string())?;
        store.reset_namespace(&a, ns).map_err(|e| e.to_string())?;
    }
    store.reset_namespace(&b, "derm").map_err(|e| e.to_string())?;
    let got = store.get(&SessionKey::new(&a, "derm", "case").unwrap()).map_err(|e| e.to_string())?;
    if got != Some(v) {
        return Err("derm value changed by activity elsewhere".into());
    }
    if store.get(&SessionKey::new(&b, "derm", "case").unwrap()).map_err(|e| e.to_string())?.is_some() {
        return Err("value leaked across sessions".into());
    }
    Ok(())
}
