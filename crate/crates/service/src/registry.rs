//! Naming registry: which endpoints serve which shard of which table.
//!
//! The registry holds endpoints and rollout locks only. Version ids and
//! shard counts travel in the query protocol and never appear here.
//!
//! # File format
//!
//! [`FileRegistry`] keeps an append-only UTF-8 file. The first line is the
//! header `# nbkv-registry v1`; each following line is one revision:
//!
//! ```text
//! rev=<n> ts_us=<unix micros> table=<id> op=register shard=<i> endpoint=<host:port>
//! rev=<n> ts_us=<unix micros> table=<id> op=deregister shard=<i> endpoint=<host:port>
//! rev=<n> ts_us=<unix micros> table=<id> op=lock owner=<name>
//! rev=<n> ts_us=<unix micros> table=<id> op=unlock owner=<name>
//! ```
//!
//! Revisions start at 1 and increase by one per line. Writers hold an
//! exclusive `flock` while they catch up on the file and append, so
//! processes sharing the file see one linear history.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::os::fd::AsRawFd;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use thiserror::Error;

pub const REGISTRY_HEADER: &str = "# nbkv-registry v1";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid {what} {value:?}")]
    Invalid { what: &'static str, value: String },
    #[error("table {table} is locked by {owner:?}")]
    NotOwner { table: u64, owner: Option<String> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Change {
    Register { shard: u32, endpoint: String },
    Deregister { shard: u32, endpoint: String },
    Lock { owner: String },
    Unlock { owner: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub revision: u64,
    pub timestamp_us: u64,
    pub table_id: u64,
    pub change: Change,
}

impl Event {
    pub fn to_line(&self) -> String {
        let head = format!("rev={} ts_us={} table={}", self.revision, self.timestamp_us, self.table_id);
        match &self.change {
            Change::Register { shard, endpoint } => format!("{head} op=register shard={shard} endpoint={endpoint}"),
            Change::Deregister { shard, endpoint } => format!("{head} op=deregister shard={shard} endpoint={endpoint}"),
            Change::Lock { owner } => format!("{head} op=lock owner={owner}"),
            Change::Unlock { owner } => format!("{head} op=unlock owner={owner}"),
        }
    }

    pub fn parse_line(line: &str) -> Result<Event, String> {
        let fields: BTreeMap<&str, &str> = line
            .split(' ')
            .map(|f| f.split_once('=').ok_or_else(|| format!("bad field {f:?}")))
            .collect::<Result<_, _>>()?;
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| format!("missing {k}"));
        let num = |k: &str| -> Result<u64, String> { get(k)?.parse().map_err(|e| format!("{k}: {e}")) };
        let change = match get("op")? {
            "register" | "deregister" => {
                let shard = u32::try_from(num("shard")?).map_err(|e| format!("shard: {e}"))?;
                let endpoint = get("endpoint")?.to_owned();
                if get("op")? == "register" {
                    Change::Register { shard, endpoint }
                } else {
                    Change::Deregister { shard, endpoint }
                }
            }
            "lock" => Change::Lock {
                owner: get("owner")?.to_owned(),
            },
            "unlock" => Change::Unlock {
                owner: get("owner")?.to_owned(),
            },
            op => return Err(format!("unknown op {op:?}")),
        };
        Ok(Event {
            revision: num("rev")?,
            timestamp_us: num("ts_us")?,
            table_id: num("table")?,
            change,
        })
    }
}

/// Parses a whole registry file.
pub fn parse_registry(text: &str) -> Result<Vec<Event>, RegistryError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, REGISTRY_HEADER)) => {}
        _ => {
            return Err(RegistryError::Parse {
                line: 1,
                reason: "missing header".into(),
            })
        }
    }
    let mut events = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let e = Event::parse_line(line).map_err(|reason| RegistryError::Parse { line: i + 1, reason })?;
        if e.revision != events.len() as u64 + 1 {
            return Err(RegistryError::Parse {
                line: i + 1,
                reason: format!("revision {} out of sequence", e.revision),
            });
        }
        events.push(e);
    }
    Ok(events)
}

/// Endpoints of one table at one revision.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Endpoints {
    pub revision: u64,
    pub shards: BTreeMap<u32, Vec<String>>,
}

impl Endpoints {
    pub fn is_empty(&self) -> bool {
        self.shards.values().all(Vec::is_empty)
    }
}

pub trait Registry: Send + Sync {
    /// Adds `endpoint` to `shard`. Registering a present endpoint changes
    /// nothing. Returns the revision after the call.
    fn register(&self, table_id: u64, shard: u32, endpoint: &str) -> Result<u64, RegistryError>;
    /// Removes `endpoint`; absent endpoints are a no-op.
    fn deregister(&self, table_id: u64, shard: u32, endpoint: &str) -> Result<u64, RegistryError>;
    fn endpoints(&self, table_id: u64) -> Result<Endpoints, RegistryError>;
    /// Every event with revision greater than `revision`, in order.
    fn events_since(&self, revision: u64) -> Result<Vec<Event>, RegistryError>;
    /// Takes the rollout lock of `table_id`; true if `owner` now holds it.
    fn try_lock(&self, table_id: u64, owner: &str) -> Result<bool, RegistryError>;
    fn unlock(&self, table_id: u64, owner: &str) -> Result<(), RegistryError>;
    /// Releases the lock whoever holds it, e.g. after an updater crashed.
    fn force_unlock(&self, table_id: u64) -> Result<(), RegistryError>;
    fn lock_owner(&self, table_id: u64) -> Result<Option<String>, RegistryError>;
}

fn check_token(what: &'static str, v: &str) -> Result<(), RegistryError> {
    if v.is_empty() || v.contains(|c: char| c.is_whitespace() || c == '=') {
        return Err(RegistryError::Invalid {
            what,
            value: v.to_owned(),
        });
    }
    Ok(())
}

fn now_us() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_micros() as u64)
}

#[derive(Default)]
struct State {
    events: Vec<Event>,
    tables: BTreeMap<u64, BTreeMap<u32, Vec<String>>>,
    locks: BTreeMap<u64, String>,
}

impl State {
    fn revision(&self) -> u64 {
        self.events.len() as u64
    }

    /// Whether `change` would alter the state.
    fn effective(&self, table: u64, change: &Change) -> bool {
        let shard_eps = |s: &u32| self.tables.get(&table).and_then(|t| t.get(s));
        match change {
            Change::Register { shard, endpoint } => !shard_eps(shard).is_some_and(|e| e.contains(endpoint)),
            Change::Deregister { shard, endpoint } => shard_eps(shard).is_some_and(|e| e.contains(endpoint)),
            Change::Lock { .. } => !self.locks.contains_key(&table),
            Change::Unlock { owner } => self.locks.get(&table) == Some(owner),
        }
    }

    fn apply(&mut self, e: Event) {
        let t = self.tables.entry(e.table_id).or_default();
        match &e.change {
            Change::Register { shard, endpoint } => {
                let eps = t.entry(*shard).or_default();
                if !eps.contains(endpoint) {
                    eps.push(endpoint.clone());
                }
            }
            Change::Deregister { shard, endpoint } => {
                if let Some(eps) = t.get_mut(shard) {
                    eps.retain(|x| x != endpoint);
                    if eps.is_empty() {
                        t.remove(shard);
                    }
                }
            }
            Change::Lock { owner } => {
                self.locks.insert(e.table_id, owner.clone());
            }
            Change::Unlock { .. } => {
                self.locks.remove(&e.table_id);
            }
        }
        self.events.push(e);
    }

    fn endpoints(&self, table: u64) -> Endpoints {
        Endpoints {
            revision: self.revision(),
            shards: self.tables.get(&table).cloned().unwrap_or_default(),
        }
    }

    fn next_event(&self, table: u64, change: Change) -> Event {
        Event {
            revision: self.revision() + 1,
            timestamp_us: now_us(),
            table_id: table,
            change,
        }
    }
}

/// Shared logic: `commit` persists a new event before it is applied.
trait Store {
    fn with_state<R>(&self, f: impl FnOnce(&mut State, &mut dyn FnMut(&Event) -> Result<(), RegistryError>) -> Result<R, RegistryError>) -> Result<R, RegistryError>;
}

fn change<S: Store>(s: &S, table: u64, c: Change) -> Result<u64, RegistryError> {
    s.with_state(|st, commit| {
        if st.effective(table, &c) {
            let e = st.next_event(table, c);
            commit(&e)?;
            st.apply(e);
        }
        Ok(st.revision())
    })
}

fn try_lock<S: Store>(s: &S, table: u64, owner: &str) -> Result<bool, RegistryError> {
    check_token("owner", owner)?;
    s.with_state(|st, commit| match st.locks.get(&table) {
        Some(o) => Ok(o == owner),
        None => {
            let e = st.next_event(table, Change::Lock { owner: owner.into() });
            commit(&e)?;
            st.apply(e);
            Ok(true)
        }
    })
}

fn unlock<S: Store>(s: &S, table: u64, owner: Option<&str>) -> Result<(), RegistryError> {
    s.with_state(|st, commit| match (st.locks.get(&table), owner) {
        (None, _) => Ok(()),
        (Some(held), Some(o)) if held != o => Err(RegistryError::NotOwner {
            table,
            owner: Some(held.clone()),
        }),
        (Some(held), _) => {
            let e = st.next_event(table, Change::Unlock { owner: held.clone() });
            commit(&e)?;
            st.apply(e);
            Ok(())
        }
    })
}

macro_rules! impl_registry {
    ($t:ty) => {
        impl Registry for $t {
            fn register(&self, table_id: u64, shard: u32, endpoint: &str) -> Result<u64, RegistryError> {
                check_token("endpoint", endpoint)?;
                change(self, table_id, Change::Register {
                    shard,
                    endpoint: endpoint.into(),
                })
            }
            fn deregister(&self, table_id: u64, shard: u32, endpoint: &str) -> Result<u64, RegistryError> {
                check_token("endpoint", endpoint)?;
                change(self, table_id, Change::Deregister {
                    shard,
                    endpoint: endpoint.into(),
                })
            }
            fn endpoints(&self, table_id: u64) -> Result<Endpoints, RegistryError> {
                self.with_state(|st, _| Ok(st.endpoints(table_id)))
            }
            fn events_since(&self, revision: u64) -> Result<Vec<Event>, RegistryError> {
                self.with_state(|st, _| Ok(st.events.get(revision as usize..).unwrap_or(&[]).to_vec()))
            }
            fn try_lock(&self, table_id: u64, owner: &str) -> Result<bool, RegistryError> {
                try_lock(self, table_id, owner)
            }
            fn unlock(&self, table_id: u64, owner: &str) -> Result<(), RegistryError> {
                unlock(self, table_id, Some(owner))
            }
            fn force_unlock(&self, table_id: u64) -> Result<(), RegistryError> {
                unlock(self, table_id, None)
            }
            fn lock_owner(&self, table_id: u64) -> Result<Option<String>, RegistryError> {
                self.with_state(|st, _| Ok(st.locks.get(&table_id).cloned()))
            }
        }
    };
}

/// Registry living in this process.
#[derive(Default)]
pub struct MemoryRegistry {
    state: Mutex<State>,
}

impl MemoryRegistry {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Store for MemoryRegistry {
    fn with_state<R>(&self, f: impl FnOnce(&mut State, &mut dyn FnMut(&Event) -> Result<(), RegistryError>) -> Result<R, RegistryError>) -> Result<R, RegistryError> {
        f(&mut self.state.lock(), &mut |_| Ok(()))
    }
}

impl_registry!(MemoryRegistry);

/// Registry shared through a file; see the module docs for the format.
pub struct FileRegistry {
    path: PathBuf,
    cache: Mutex<(State, u64)>,
}

struct Flock<'a>(&'a File);

impl<'a> Flock<'a> {
    fn exclusive(f: &'a File) -> std::io::Result<Self> {
        // SAFETY: flock on a valid open descriptor.
        if unsafe { libc::flock(f.as_raw_fd(), libc::LOCK_EX) } != 0 {
            return Err(std::io::Error::last_os_error());
        }
        Ok(Flock(f))
    }
}

impl Drop for Flock<'_> {
    fn drop(&mut self) {
        // SAFETY: as above; unlocking cannot violate memory safety.
        unsafe { libc::flock(self.0.as_raw_fd(), libc::LOCK_UN) };
    }
}

impl FileRegistry {
    /// Opens `path`, creating it with a header if missing.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let r = FileRegistry {
            path: path.into(),
            cache: Mutex::new((State::default(), 0)),
        };
        r.with_state(|_, _| Ok(()))?;
        Ok(r)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Store for FileRegistry {
    fn with_state<R>(&self, f: impl FnOnce(&mut State, &mut dyn FnMut(&Event) -> Result<(), RegistryError>) -> Result<R, RegistryError>) -> Result<R, RegistryError> {
        let mut cache = self.cache.lock();
        let handle = OpenOptions::new().read(true).append(true).create(true).open(&self.path)?;
        let _lock = Flock::exclusive(&handle)?;
        let mut file = &handle;
        let (state, offset) = &mut *cache;
        let len = file.metadata()?.len();
        if len == 0 {
            file.write_all(format!("{REGISTRY_HEADER}\n").as_bytes())?;
            *offset = 0;
        }
        if *offset == 0 {
            *state = State::default();
        }
        file.seek(SeekFrom::Start(*offset))?;
        let mut fresh = String::new();
        file.read_to_string(&mut fresh)?;
        for (line_no, line) in (state.events.len() + 2..).zip(fresh.split_inclusive('\n')) {
            // a line without newline is a write in progress elsewhere; stop
            if !line.ends_with('\n') {
                break;
            }
            *offset += line.len() as u64;
            let line = line.trim_end();
            if line.is_empty() || line == REGISTRY_HEADER {
                continue;
            }
            let e = Event::parse_line(line).map_err(|reason| RegistryError::Parse { line: line_no, reason })?;
            if e.revision != state.revision() + 1 {
                return Err(RegistryError::Parse {
                    line: line_no,
                    reason: format!("revision {} out of sequence", e.revision),
                });
            }
            state.apply(e);
        }
        let mut appended = 0u64;
        let mut commit = |e: &Event| -> Result<(), RegistryError> {
            let line = format!("{}\n", e.to_line());
            file.write_all(line.as_bytes())?;
            appended += line.len() as u64;
            Ok(())
        };
        let r = f(state, &mut commit);
        *offset += appended;
        r
    }
}

impl_registry!(FileRegistry);

/// Follows a registry's history from a revision onward.
pub struct Watcher {
    registry: Arc<dyn Registry>,
    next: u64,
}

impl Watcher {
    pub fn new(registry: Arc<dyn Registry>, from_revision: u64) -> Self {
        Watcher {
            registry,
            next: from_revision,
        }
    }

    /// Events since the last poll.
    pub fn poll(&mut self) -> Result<Vec<Event>, RegistryError> {
        let ev = self.registry.events_since(self.next)?;
        if let Some(last) = ev.last() {
            self.next = last.revision;
        }
        Ok(ev)
    }

    /// Waits until at least one new event arrives or `timeout` passes.
    pub async fn changed(&mut self, every: Duration, timeout: Duration) -> Result<Vec<Event>, RegistryError> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let ev = self.poll()?;
            if !ev.is_empty() || tokio::time::Instant::now() >= deadline {
                return Ok(ev);
            }
            tokio::time::sleep(every).await;
        }
    }
}

/// Replays `events` and returns, for `table_id`, the smallest number of
/// endpoints any of `shards` had after `from_revision` (inclusive of the
/// state at that revision).
pub fn min_registered(events: &[Event], table_id: u64, shards: u32, from_revision: u64) -> usize {
    let mut st = State::default();
    let mut min = usize::MAX;
    for e in events {
        let rev = e.revision;
        st.apply(e.clone());
        if rev >= from_revision {
            let t = st.tables.get(&table_id);
            for s in 0..shards {
                min = min.min(t.and_then(|t| t.get(&s)).map_or(0, Vec::len));
            }
        }
    }
    min
}

#[cfg(test)]
mod tests {
    use super::*;

    fn both() -> Vec<(Box<dyn Registry>, Option<tempfile::TempDir>)> {
        let d = tempfile::tempdir().unwrap();
        let file = FileRegistry::open(d.path().join("reg")).unwrap();
        vec![(Box::new(MemoryRegistry::new()), None), (Box::new(file), Some(d))]
    }

    #[test]
    fn register_list_deregister() {
        for (r, _d) in both() {
            assert!(r.endpoints(1).unwrap().is_empty());
            assert_eq!(r.register(1, 0, "a:1").unwrap(), 1);
            assert_eq!(r.register(1, 0, "a:1").unwrap(), 1);
            r.register(1, 1, "b:1").unwrap();
            let e = r.endpoints(1).unwrap();
            assert_eq!(e.revision, 2);
            assert_eq!(e.shards[&0], vec!["a:1".to_string()]);
            assert_eq!(r.deregister(1, 0, "zz:1").unwrap(), 2);
            assert_eq!(r.deregister(1, 0, "a:1").unwrap(), 3);
            assert!(!r.endpoints(1).unwrap().shards.contains_key(&0));
            assert!(r.endpoints(2).unwrap().is_empty());
        }
    }

    #[test]
    fn locks_are_exclusive() {
        for (r, _d) in both() {
            assert!(r.try_lock(1, "u1").unwrap());
            assert!(r.try_lock(1, "u1").unwrap());
            assert!(!r.try_lock(1, "u2").unwrap());
            assert!(matches!(r.unlock(1, "u2"), Err(RegistryError::NotOwner { .. })));
            r.unlock(1, "u1").unwrap();
            assert!(r.try_lock(1, "u2").unwrap());
            r.force_unlock(1).unwrap();
            assert_eq!(r.lock_owner(1).unwrap(), None);
        }
    }

    #[test]
    fn rejects_whitespace_tokens() {
        for (r, _d) in both() {
            assert!(r.register(1, 0, "a b").is_err());
            assert!(r.try_lock(1, "").is_err());
        }
    }

    #[test]
    fn watchers_see_identical_sequences() {
        let reg: Arc<dyn Registry> = Arc::new(MemoryRegistry::new());
        let mut w1 = Watcher::new(Arc::clone(&reg), 0);
        reg.register(1, 0, "a:1").unwrap();
        let mut w2 = Watcher::new(Arc::clone(&reg), 0);
        let mut s1 = w1.poll().unwrap();
        reg.register(1, 0, "b:1").unwrap();
        reg.deregister(1, 0, "a:1").unwrap();
        s1.extend(w1.poll().unwrap());
        let s2 = w2.poll().unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.iter().map(|e| e.revision).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn file_registry_is_shared_between_handles() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("reg");
        let a = FileRegistry::open(&p).unwrap();
        let b = FileRegistry::open(&p).unwrap();
        a.register(7, 0, "h:1").unwrap();
        b.register(7, 1, "h:2").unwrap();
        assert!(!a.try_lock(7, "x").unwrap() || !b.try_lock(7, "y").unwrap());
        assert_eq!(a.endpoints(7).unwrap(), b.endpoints(7).unwrap());
        let text = std::fs::read_to_string(&p).unwrap();
        let parsed = parse_registry(&text).unwrap();
        assert_eq!(parsed, a.events_since(0).unwrap());
        assert!(text.starts_with(REGISTRY_HEADER));
    }

    #[test]
    fn file_registry_survives_threads() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("reg");
        let hs: Vec<_> = (0..4)
            .map(|t| {
                let p = p.clone();
                std::thread::spawn(move || {
                    let r = FileRegistry::open(&p).unwrap();
                    for i in 0..50 {
                        r.register(1, t, &format!("h{t}:{i}")).unwrap();
                    }
                })
            })
            .collect();
        hs.into_iter().for_each(|h| h.join().unwrap());
        let events = parse_registry(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(events.len(), 200);
    }

    #[test]
    fn min_registered_tracks_dips() {
        let r = MemoryRegistry::new();
        r.register(1, 0, "a").unwrap();
        r.register(1, 0, "b").unwrap();
        r.register(1, 1, "c").unwrap();
        r.deregister(1, 0, "a").unwrap();
        r.register(1, 0, "a").unwrap();
        let ev = r.events_since(0).unwrap();
        assert_eq!(min_registered(&ev, 1, 2, 3), 1);
        assert_eq!(min_registered(&ev, 1, 3, 3), 0);
    }

    #[test]
    fn parse_rejects_gaps_and_garbage() {
        assert!(parse_registry("").is_err());
        let ok = format!("{REGISTRY_HEADER}\nrev=1 ts_us=0 table=1 op=lock owner=x\n");
        assert_eq!(parse_registry(&ok).unwrap().len(), 1);
        let gap = format!("{REGISTRY_HEADER}\nrev=2 ts_us=0 table=1 op=lock owner=x\n");
        assert!(parse_registry(&gap).is_err());
        let bad = format!("{REGISTRY_HEADER}\nrev=1 ts_us=0 table=1 op=fly\n");
        assert!(parse_registry(&bad).is_err());
    }
}
