use std::collections::HashMap;

use crate::types::UserId;

#[derive(Debug, Clone)]
struct Node {
    user: UserId,
    prev: Option<usize>,
    next: Option<usize>,
}

/// Recency order over users: a doubly-linked list in a slab plus a map from
/// user to node. Touch, insert and remove are O(1).
///
/// `head` is the most recently used user, `tail` the least.
#[derive(Debug, Default)]
pub struct LruIndex {
    nodes: Vec<Node>,
    vacant: Vec<usize>,
    index: HashMap<UserId, usize>,
    head: Option<usize>,
    tail: Option<usize>,
}

impl LruIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, user: UserId) -> bool {
        self.index.contains_key(&user)
    }

    fn unlink(&mut self, idx: usize) {
        let (prev, next) = (self.nodes[idx].prev, self.nodes[idx].next);
        match prev {
            Some(p) => self.nodes[p].next = next,
            None => self.head = next,
        }
        match next {
            Some(n) => self.nodes[n].prev = prev,
            None => self.tail = prev,
        }
    }

    fn push_front(&mut self, idx: usize) {
        self.nodes[idx].prev = None;
        self.nodes[idx].next = self.head;
        if let Some(h) = self.head {
            self.nodes[h].prev = Some(idx);
        }
        self.head = Some(idx);
        if self.tail.is_none() {
            self.tail = Some(idx);
        }
    }

    /// Marks `user` as most recently used, inserting it if absent.
    pub fn touch(&mut self, user: UserId) {
        if let Some(&idx) = self.index.get(&user) {
            if self.head != Some(idx) {
                self.unlink(idx);
                self.push_front(idx);
            }
            return;
        }
        let node = Node {
            user,
            prev: None,
            next: None,
        };
        let idx = match self.vacant.pop() {
            Some(i) => {
                self.nodes[i] = node;
                i
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        };
        self.index.insert(user, idx);
        self.push_front(idx);
    }

    pub fn remove(&mut self, user: UserId) -> bool {
        match self.index.remove(&user) {
            Some(idx) => {
                self.unlink(idx);
                self.vacant.push(idx);
                true
            }
            None => false,
        }
    }

    /// Least recently used user for which `skip` is false.
    pub fn victim(&self, mut skip: impl FnMut(UserId) -> bool) -> Option<UserId> {
        let mut cur = self.tail;
        while let Some(idx) = cur {
            let node = &self.nodes[idx];
            if !skip(node.user) {
                return Some(node.user);
            }
            cur = node.prev;
        }
        None
    }

    /// Users from least to most recently used.
    pub fn iter_lru(&self) -> impl Iterator<Item = UserId> + '_ {
        let mut cur = self.tail;
        std::iter::from_fn(move || {
            let idx = cur?;
            cur = self.nodes[idx].prev;
            Some(self.nodes[idx].user)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_follows_touches() {
        let mut l = LruIndex::new();
        for u in [1, 2, 3] {
            l.touch(u);
        }
        l.touch(1);
        assert_eq!(l.iter_lru().collect::<Vec<_>>(), vec![2, 3, 1]);
        assert_eq!(l.victim(|_| false), Some(2));
        assert_eq!(l.victim(|u| u == 2), Some(3));
        assert!(l.remove(3));
        assert!(!l.remove(3));
        assert_eq!(l.iter_lru().collect::<Vec<_>>(), vec![2, 1]);
        l.touch(4);
        assert_eq!(l.iter_lru().collect::<Vec<_>>(), vec![2, 1, 4]);
        assert_eq!(l.len(), 3);
    }

    #[test]
    fn all_skipped_gives_none() {
        let mut l = LruIndex::new();
        l.touch(1);
        assert_eq!(l.victim(|_| true), None);
        assert_eq!(LruIndex::new().victim(|_| false), None);
    }
}
