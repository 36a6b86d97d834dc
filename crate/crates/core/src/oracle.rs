//! Reference separate-chaining map used as a test oracle.
//!
//! Deliberately naive: a vector of vectors, grown by rehashing everything.
//! It shares no code with the tables it checks.

use std::collections::{BTreeMap, BTreeSet};

use crate::mix::hash_key;

pub struct ChainingMap {
    heads: Vec<Vec<(u64, u64)>>,
    len: usize,
    seed: u64,
}

impl ChainingMap {
    pub fn new(seed: u64) -> Self {
        ChainingMap {
            heads: vec![Vec::new(); 64],
            len: 0,
            seed,
        }
    }

    fn head(&self, key: u64) -> usize {
        (hash_key(key, self.seed) % self.heads.len() as u64) as usize
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, key: u64, value: u64) -> Option<u64> {
        let h = self.head(key);
        for entry in self.heads[h].iter_mut() {
            if entry.0 == key {
                return Some(std::mem::replace(&mut entry.1, value));
            }
        }
        self.heads[h].push((key, value));
        self.len += 1;
        if self.len > self.heads.len() {
            let old = std::mem::take(&mut self.heads);
            self.heads = vec![Vec::new(); old.len() * 2];
            for (k, v) in old.into_iter().flatten() {
                let h = self.head(k);
                self.heads[h].push((k, v));
            }
        }
        None
    }

    pub fn get(&self, key: u64) -> Option<u64> {
        self.heads[self.head(key)]
            .iter()
            .find(|e| e.0 == key)
            .map(|e| e.1)
    }

    pub fn remove(&mut self, key: u64) -> Option<u64> {
        let h = self.head(key);
        let pos = self.heads[h].iter().position(|e| e.0 == key)?;
        self.len -= 1;
        Some(self.heads[h].swap_remove(pos).1)
    }

    pub fn entries(&self) -> BTreeMap<u64, u64> {
        self.heads.iter().flatten().copied().collect()
    }

    /// Keys grouped by an external home function, for comparing chain
    /// membership of a coalesced table with separate chaining.
    pub fn chains_by(&self, home: impl Fn(u64) -> usize) -> BTreeMap<usize, BTreeSet<u64>> {
        let mut out: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
        for &(k, _) in self.heads.iter().flatten() {
            out.entry(home(k)).or_default().insert(k);
        }
        out
    }
}
