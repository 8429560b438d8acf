use std::collections::HashMap;
use std::sync::Mutex;

use super::{Coalition, Game};
use crate::error::Result;

/// Caches rewards by coalition bitmask.
///
/// The lock is not held while the inner reward runs, so two threads may
/// compute the same coalition concurrently; the inner game is deterministic,
/// so whichever insert lands first is the value both would have stored.
pub struct MemoGame<G> {
    inner: G,
    cache: Mutex<HashMap<u64, f64>>,
}

impl<G: Game> MemoGame<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Number of distinct coalitions evaluated so far.
    pub fn evaluations(&self) -> usize {
        self.cache.lock().expect("memo lock poisoned").len()
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }
}

impl<G: Game> Game for MemoGame<G> {
    fn num_players(&self) -> usize {
        self.inner.num_players()
    }

    fn reward(&self, c: Coalition) -> Result<f64> {
        if let Some(&v) = self.cache.lock().expect("memo lock poisoned").get(&c.0) {
            return Ok(v);
        }
        let v = self.inner.reward(c)?;
        Ok(*self
            .cache
            .lock()
            .expect("memo lock poisoned")
            .entry(c.0)
            .or_insert(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::FnGame;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn evaluates_each_coalition_once_serially() {
        let calls = AtomicUsize::new(0);
        let g = FnGame::new(3, |c| {
            calls.fetch_add(1, Ordering::SeqCst);
            c.len() as f64
        });
        let m = MemoGame::new(g);
        for _ in 0..3 {
            assert_eq!(m.reward(Coalition(5)).unwrap(), 2.0);
        }
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(m.evaluations(), 1);
    }
}
