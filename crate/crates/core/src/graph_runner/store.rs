use std::collections::BTreeMap;

use thiserror::Error;

use crate::tensor::{Tensor, VarAccess};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("a graph pass is in flight")]
pub struct InFlightPass;

/// Persistent variables with a per-pass overlay for uncommitted writes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VariableStore {
    committed: BTreeMap<String, Tensor>,
    overlay: BTreeMap<String, Tensor>,
    in_flight: bool,
    just_committed: bool,
    misuse: bool,
}

impl VariableStore {
    pub fn new(committed: BTreeMap<String, Tensor>) -> Self {
        VariableStore { committed, ..Default::default() }
    }

    pub fn committed(&self) -> &BTreeMap<String, Tensor> {
        &self.committed
    }

    /// Direct access for imperative execution between passes.
    pub fn committed_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        debug_assert!(!self.in_flight, "imperative write during a pass");
        &mut self.committed
    }

    pub fn overlay(&self) -> &BTreeMap<String, Tensor> {
        &self.overlay
    }

    pub fn in_flight(&self) -> bool {
        self.in_flight
    }

    pub fn begin_pass(&mut self) {
        debug_assert!(self.overlay.is_empty());
        self.in_flight = true;
        self.just_committed = false;
    }

    pub fn commit(&mut self) {
        let overlay = std::mem::take(&mut self.overlay);
        self.committed.extend(overlay);
        self.in_flight = false;
        self.just_committed = true;
    }

    /// Discards uncommitted writes. Rolling back right after a commit is a
    /// caller bug; debug builds flag it (see [`VariableStore::misuse_flagged`]).
    pub fn rollback(&mut self) {
        if cfg!(debug_assertions) && self.just_committed {
            self.misuse = true;
        }
        self.overlay.clear();
        self.in_flight = false;
    }

    pub fn misuse_flagged(&self) -> bool {
        self.misuse
    }

    pub fn snapshot_vars(&self) -> Result<BTreeMap<String, Tensor>, InFlightPass> {
        if self.in_flight {
            return Err(InFlightPass);
        }
        Ok(self.committed.clone())
    }

    pub fn pass_vars(&mut self) -> PassVars<'_> {
        PassVars { store: self }
    }
}

/// Variable view used by a pass: reads see the overlay first.
pub struct PassVars<'s> {
    store: &'s mut VariableStore,
}

impl VarAccess for PassVars<'_> {
    fn read_var(&self, name: &str) -> Option<Tensor> {
        self.store.overlay.get(name).or_else(|| self.store.committed.get(name)).cloned()
    }

    fn write_var(&mut self, name: &str, value: Tensor) {
        self.store.overlay.insert(name.to_string(), value);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> VariableStore {
        VariableStore::new(BTreeMap::from([("w".to_string(), Tensor::vector(vec![0.0, 0.0]))]))
    }

    #[test]
    fn rollback_keeps_committed() {
        let mut s = store();
        s.begin_pass();
        s.pass_vars().write_var("w", Tensor::vector(vec![1.0, 1.0]));
        assert_eq!(s.pass_vars().read_var("w"), Some(Tensor::vector(vec![1.0, 1.0])));
        s.rollback();
        assert_eq!(s.committed()["w"], Tensor::vector(vec![0.0, 0.0]));
        s.rollback();
        assert!(s.overlay().is_empty());
        assert!(!s.misuse_flagged());
    }

    #[test]
    fn commit_then_rollback_is_flagged() {
        let mut s = store();
        s.begin_pass();
        s.pass_vars().write_var("w", Tensor::vector(vec![1.0, 1.0]));
        s.commit();
        assert_eq!(s.snapshot_vars().unwrap()["w"], Tensor::vector(vec![1.0, 1.0]));
        s.rollback();
        assert_eq!(s.misuse_flagged(), cfg!(debug_assertions));
    }

    #[test]
    fn snapshot_during_pass_fails() {
        let mut s = store();
        assert_eq!(s.snapshot_vars().unwrap()["w"], Tensor::vector(vec![0.0, 0.0]));
        s.begin_pass();
        assert_eq!(s.snapshot_vars(), Err(InFlightPass));
    }
}
