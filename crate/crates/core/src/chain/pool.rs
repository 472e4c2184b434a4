use indexmap::IndexMap;

use crate::tx::{Transaction, TxId};

/// Pending transactions in insertion order, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct TransactionPool {
    txs: IndexMap<TxId, Transaction>,
}

impl TransactionPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn contains(&self, id: &TxId) -> bool {
        self.txs.contains_key(id)
    }

    pub fn get(&self, id: &TxId) -> Option<&Transaction> {
        self.txs.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transaction> {
        self.txs.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &TxId> {
        self.txs.keys()
    }

    /// Owned copy of the pool in insertion order.
    pub fn snapshot(&self) -> Vec<Transaction> {
        self.txs.values().cloned().collect()
    }

    /// Appends; returns false if the id was already present.
    pub fn push(&mut self, tx: Transaction) -> bool {
        if self.txs.contains_key(&tx.id()) {
            return false;
        }
        self.txs.insert(tx.id(), tx);
        true
    }

    pub fn remove(&mut self, id: &TxId) -> Option<Transaction> {
        self.txs.shift_remove(id)
    }

    /// Puts `txs` ahead of every existing entry, keeping their order.
    /// Ids already present are moved to the front as well.
    pub fn prepend(&mut self, txs: Vec<Transaction>) {
        let rest = std::mem::take(&mut self.txs);
        for tx in txs {
            self.txs.insert(tx.id(), tx);
        }
        for (id, tx) in rest {
            self.txs.entry(id).or_insert(tx);
        }
    }

    pub(crate) fn replace(&mut self, txs: Vec<Transaction>) {
        self.txs = txs.into_iter().map(|t| (t.id(), t)).collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::NodeIdentity;
    use crate::petrinet::fixtures::seq;
    use crate::tx::TxBody;

    fn tx(n: u64) -> Transaction {
        Transaction::sign(&NodeIdentity::for_name("n1"), n, TxBody::ModelUpdate { model: seq("a", "b") }).unwrap()
    }

    #[test]
    fn push_is_idempotent() {
        let mut p = TransactionPool::new();
        assert!(p.push(tx(0)));
        assert!(!p.push(tx(0)));
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn prepend_keeps_order_and_dedups() {
        let mut p = TransactionPool::new();
        p.push(tx(0));
        p.push(tx(1));
        p.prepend(vec![tx(2), tx(1)]);
        let order: Vec<u64> = p.iter().map(|t| t.seq()).collect();
        assert_eq!(order, [2, 1, 0]);
    }
}
