use serde::{Deserialize, Serialize};

use super::tx::Transaction;
use crate::crypto::{sha256, Address, Canonical, Hash32, Keypair, PublicKey, Signature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Success,
    Revert,
}

/// Result of applying one transaction inside a block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOutcome {
    pub status: TxStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl TxOutcome {
    pub fn success() -> Self {
        TxOutcome {
            status: TxStatus::Success,
            reason: None,
        }
    }

    pub fn revert(reason: impl Into<String>) -> Self {
        TxOutcome {
            status: TxStatus::Revert,
            reason: Some(reason.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub parent_hash: Hash32,
    pub timestamp: u64,
    pub sealer: Address,
    pub sealer_key: PublicKey,
    /// Commits to the ordered transactions and their outcomes.
    pub tx_root: Hash32,
    pub state_root: Hash32,
    pub block_hash: Hash32,
    pub seal: Signature,
    pub transactions: Vec<Transaction>,
    pub outcomes: Vec<TxOutcome>,
}

pub fn tx_root(transactions: &[Transaction], outcomes: &[TxOutcome]) -> Hash32 {
    let mut c = Canonical::new().field("mdm/txroot/v1");
    for (tx, outcome) in transactions.iter().zip(outcomes) {
        c = c
            .field(tx.hash().as_bytes())
            .field([matches!(outcome.status, TxStatus::Success) as u8])
            .field(outcome.reason.as_deref().unwrap_or(""));
    }
    sha256(&c.finish())
}

impl Block {
    pub(crate) fn seal(
        authority: &Keypair,
        height: u64,
        parent_hash: Hash32,
        timestamp: u64,
        state_root: Hash32,
        transactions: Vec<Transaction>,
        outcomes: Vec<TxOutcome>,
    ) -> Block {
        let tx_root = tx_root(&transactions, &outcomes);
        let sealer = authority.address();
        let block_hash = header_hash(height, &parent_hash, timestamp, &sealer, &tx_root, &state_root);
        Block {
            height,
            parent_hash,
            timestamp,
            sealer,
            sealer_key: authority.public_key(),
            tx_root,
            state_root,
            block_hash,
            seal: authority.sign(block_hash.as_bytes()),
            transactions,
            outcomes,
        }
    }

    pub fn total_weight(&self, weight_of: impl Fn(&Transaction) -> u64) -> u64 {
        self.transactions.iter().map(weight_of).sum()
    }

    /// Checks the header hash, the transaction root and the sealer signature.
    pub fn verify_integrity(&self) -> bool {
        self.transactions.len() == self.outcomes.len()
            && self.sealer_key.address() == self.sealer
            && tx_root(&self.transactions, &self.outcomes) == self.tx_root
            && header_hash(
                self.height,
                &self.parent_hash,
                self.timestamp,
                &self.sealer,
                &self.tx_root,
                &self.state_root,
            ) == self.block_hash
            && self.sealer_key.verify(self.block_hash.as_bytes(), &self.seal)
    }
}

fn header_hash(
    height: u64,
    parent: &Hash32,
    timestamp: u64,
    sealer: &Address,
    tx_root: &Hash32,
    state_root: &Hash32,
) -> Hash32 {
    sha256(
        &Canonical::new()
            .field("mdm/block/v1")
            .u64(height)
            .field(parent.as_bytes())
            .u64(timestamp)
            .field(sealer.as_bytes())
            .field(tx_root.as_bytes())
            .field(state_root.as_bytes())
            .finish(),
    )
}
