use std::collections::BTreeSet;

use crate::types::UserId;

use super::CacheError;

/// Users whose pages are being read by an in-flight offload.
#[derive(Debug, Default, Clone)]
pub struct LockRegistry {
    locked: BTreeSet<UserId>,
}

impl LockRegistry {
    pub fn is_locked(&self, user: UserId) -> bool {
        self.locked.contains(&user)
    }

    pub fn lock(&mut self, user: UserId) -> Result<(), CacheError> {
        if !self.locked.insert(user) {
            return Err(CacheError::AlreadyLocked(user));
        }
        Ok(())
    }

    pub fn unlock(&mut self, user: UserId) -> Result<(), CacheError> {
        if !self.locked.remove(&user) {
            return Err(CacheError::NotLocked(user));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.locked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locked.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = UserId> + '_ {
        self.locked.iter().copied()
    }
}
