//! Embedded single-authority ledger.
//!
//! Transactions enter a FIFO pool after signature and nonce checks. A sealer
//! drains the pool once per block interval, up to the configured block
//! capacity, applies each transaction to the hosted [`StateMachine`] in
//! order and publishes an immutable snapshot of the post-block state. Reads
//! only ever see published snapshots.
//!
//! When a data directory is configured every block is appended as one JSON
//! line to `chain.ndjson`; reopening the directory replays the file and
//! checks every stored state root.

mod block;
mod tx;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use futures::channel::oneshot;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use block::{tx_root, Block, TxOutcome, TxStatus};
pub use tx::{Target, Transaction};

use crate::crypto::{Address, Hash32, Keypair};

/// File name of the block log inside a data directory.
pub const CHAIN_FILE: &str = "chain.ndjson";

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// A failed precondition inside a transaction. The transaction is recorded
/// but leaves state untouched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Revert(pub String);

/// Deterministic state hosted by the ledger.
///
/// `apply` must either fully succeed or return `Err` without having modified
/// `self`.
pub trait StateMachine: Clone + Default + Send + Sync + 'static {
    fn apply(&mut self, sender: &Address, target: &Target, payload: &[u8]) -> Result<(), Revert>;

    fn state_root(&self) -> Hash32;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub block_interval_ms: u64,
    pub block_capacity: u64,
    pub max_pool: usize,
    pub data_dir: Option<PathBuf>,
    /// Per-operation weights keyed by `registry.operation`; missing entries weigh 1.
    pub weights: BTreeMap<String, u64>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            block_interval_ms: 1000,
            block_capacity: 200,
            max_pool: 100_000,
            data_dir: None,
            weights: BTreeMap::new(),
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), LedgerError> {
        if self.block_interval_ms == 0 {
            return Err(LedgerError::Config("block_interval_ms must be positive".into()));
        }
        let max_weight = self.weights.values().copied().max().unwrap_or(1).max(1);
        if self.block_capacity < max_weight {
            return Err(LedgerError::Config(format!(
                "block_capacity {} is below the largest transaction weight {max_weight}",
                self.block_capacity
            )));
        }
        if self.weights.values().any(|w| *w == 0) {
            return Err(LedgerError::Config("write weights must be positive".into()));
        }
        Ok(())
    }

    pub fn weight_of(&self, target: &Target) -> u64 {
        self.weights.get(&target.to_string()).copied().unwrap_or(1)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubmitError {
    #[error("bad-signature")]
    BadSignature,
    #[error("stale-nonce: expected {expected}, got {got}")]
    StaleNonce { expected: u64, got: u64 },
    #[error("pool-full")]
    PoolFull,
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("bad config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt-log: {0}")]
    CorruptLog(String),
    #[error("ledger shut down before the transaction was sealed")]
    Closed,
}

/// Final result of a submitted transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_hash: Hash32,
    pub height: u64,
    #[serde(flatten)]
    pub outcome: TxOutcome,
}

impl Receipt {
    pub fn is_success(&self) -> bool {
        self.outcome.status == TxStatus::Success
    }
}

/// Resolves once the transaction has been sealed into a block.
#[derive(Debug)]
pub struct ReceiptHandle {
    tx_hash: Hash32,
    rx: oneshot::Receiver<Receipt>,
}

impl ReceiptHandle {
    pub fn tx_hash(&self) -> Hash32 {
        self.tx_hash
    }

    pub async fn confirmed(self) -> Result<Receipt, LedgerError> {
        self.rx.await.map_err(|_| LedgerError::Closed)
    }

    /// Blocks the current thread. Requires a running sealer.
    pub fn wait(self) -> Result<Receipt, LedgerError> {
        futures::executor::block_on(self.confirmed())
    }

    /// Non-blocking check, for callers driving `seal_tick` by hand.
    pub fn try_receipt(&mut self) -> Option<Receipt> {
        self.rx.try_recv().ok().flatten()
    }
}

/// Committed state as of one block.
#[derive(Debug)]
pub struct Snapshot<S> {
    pub height: u64,
    pub block_hash: Hash32,
    pub state_root: Hash32,
    pub timestamp: u64,
    pub state: S,
}

struct Pending {
    tx: Transaction,
    hash: Hash32,
    weight: u64,
    notify: oneshot::Sender<Receipt>,
}

#[derive(Default)]
struct Pool {
    queue: VecDeque<Pending>,
    /// Next acceptable nonce per sender, counting pending transactions.
    next_nonce: HashMap<Address, u64>,
}

struct Chain {
    blocks: Vec<Block>,
    receipts: HashMap<Hash32, Receipt>,
    log: Option<File>,
}

pub struct Ledger<S: StateMachine> {
    config: ChainConfig,
    authority: Keypair,
    pool: Mutex<Pool>,
    pool_signal: Condvar,
    chain: Mutex<Chain>,
    committed: RwLock<Arc<Snapshot<S>>>,
}

/// Replays transactions against a fresh state, enforcing signatures and
/// per-sender nonce order.
struct Replayer<S> {
    state: S,
    nonces: HashMap<Address, u64>,
}

impl<S: StateMachine> Replayer<S> {
    fn new() -> Self {
        Replayer {
            state: S::default(),
            nonces: HashMap::new(),
        }
    }

    fn step(&mut self, index: usize, tx: &Transaction) -> Result<TxOutcome, LedgerError> {
        if !tx.verify_signature() {
            return Err(LedgerError::CorruptLog(format!("transaction {index}: bad signature")));
        }
        let last = self.nonces.get(&tx.sender).copied().unwrap_or(0);
        if tx.nonce != last + 1 {
            return Err(LedgerError::CorruptLog(format!(
                "transaction {index}: sender {} nonce {} follows {last}",
                tx.sender, tx.nonce
            )));
        }
        self.nonces.insert(tx.sender, tx.nonce);
        Ok(apply_one(&mut self.state, tx))
    }
}

fn apply_one<S: StateMachine>(state: &mut S, tx: &Transaction) -> TxOutcome {
    match state.apply(&tx.sender, &tx.target, &tx.payload) {
        Ok(()) => TxOutcome::success(),
        Err(Revert(reason)) => TxOutcome::revert(reason),
    }
}

/// Rebuilds state from a committed transaction log and returns its root.
pub fn replay<S: StateMachine>(log: &[Transaction]) -> Result<Hash32, LedgerError> {
    let mut replayer = Replayer::<S>::new();
    for (i, tx) in log.iter().enumerate() {
        replayer.step(i, tx)?;
    }
    Ok(replayer.state.state_root())
}

/// Parses a newline-delimited transaction log.
pub fn read_log(reader: impl BufRead) -> Result<Vec<Transaction>, LedgerError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tx = serde_json::from_str(&line)
            .map_err(|e| LedgerError::CorruptLog(format!("line {}: {e}", i + 1)))?;
        out.push(tx);
    }
    Ok(out)
}

pub fn write_log(mut writer: impl Write, log: &[Transaction]) -> std::io::Result<()> {
    for tx in log {
        serde_json::to_writer(&mut writer, tx)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

impl<S: StateMachine> Ledger<S> {
    /// Opens a ledger. With a data directory, existing blocks are loaded and
    /// fully re-verified; otherwise a fresh chain starts at genesis.
    pub fn open(config: ChainConfig, authority: Keypair) -> Result<Self, LedgerError> {
        config.validate()?;
        let genesis_state = S::default();
        let genesis = Block::seal(
            &authority,
            0,
            Hash32::default(),
            0,
            genesis_state.state_root(),
            Vec::new(),
            Vec::new(),
        );

        let mut chain = Chain {
            blocks: vec![genesis.clone()],
            receipts: HashMap::new(),
            log: None,
        };
        let mut replayer = Replayer::<S>::new();

        if let Some(dir) = &config.data_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(CHAIN_FILE);
            if path.exists() {
                let blocks = load_blocks(&path)?;
                verify_loaded(&authority, &genesis, &blocks, &mut replayer, &mut chain)?;
                chain.blocks = blocks;
            } else {
                append_block(&mut File::create(&path)?, &genesis)?;
            }
            chain.log = Some(OpenOptions::new().append(true).open(&path)?);
        }

        let tip = chain.blocks.last().expect("chain always holds genesis");
        let snapshot = Snapshot {
            height: tip.height,
            block_hash: tip.block_hash,
            state_root: tip.state_root,
            timestamp: tip.timestamp,
            state: replayer.state,
        };
        let pool = Pool {
            queue: VecDeque::new(),
            next_nonce: replayer.nonces.into_iter().map(|(a, n)| (a, n + 1)).collect(),
        };
        Ok(Ledger {
            config,
            authority,
            pool: Mutex::new(pool),
            pool_signal: Condvar::new(),
            chain: Mutex::new(chain),
            committed: RwLock::new(Arc::new(snapshot)),
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn authority(&self) -> Address {
        self.authority.address()
    }

    /// Latest committed state. Never reflects pending transactions.
    pub fn snapshot(&self) -> Arc<Snapshot<S>> {
        self.committed.read().expect("snapshot lock poisoned").clone()
    }

    pub fn height(&self) -> u64 {
        self.snapshot().height
    }

    pub fn pending(&self) -> usize {
        self.pool.lock().expect("pool lock poisoned").queue.len()
    }

    /// Nonce the next transaction from `sender` must carry.
    pub fn next_nonce(&self, sender: &Address) -> u64 {
        let pool = self.pool.lock().expect("pool lock poisoned");
        pool.next_nonce.get(sender).copied().unwrap_or(1)
    }

    pub fn submit(&self, tx: Transaction) -> Result<ReceiptHandle, SubmitError> {
        if !tx.verify_signature() {
            return Err(SubmitError::BadSignature);
        }
        let mut pool = self.pool.lock().expect("pool lock poisoned");
        let expected = pool.next_nonce.get(&tx.sender).copied().unwrap_or(1);
        if tx.nonce != expected {
            return Err(SubmitError::StaleNonce {
                expected,
                got: tx.nonce,
            });
        }
        self.enqueue(&mut pool, tx)
    }

    /// Assigns the sender's next nonce, signs and submits atomically, so
    /// concurrent callers sharing one key never race on nonces.
    pub fn submit_signed(
        &self,
        keys: &Keypair,
        target: Target,
        payload: Vec<u8>,
    ) -> Result<ReceiptHandle, SubmitError> {
        let mut pool = self.pool.lock().expect("pool lock poisoned");
        let nonce = pool.next_nonce.get(&keys.address()).copied().unwrap_or(1);
        let tx = Transaction::sign(keys, nonce, target, payload);
        self.enqueue(&mut pool, tx)
    }

    fn enqueue(&self, pool: &mut Pool, tx: Transaction) -> Result<ReceiptHandle, SubmitError> {
        if pool.queue.len() >= self.config.max_pool {
            return Err(SubmitError::PoolFull);
        }
        let (notify, rx) = oneshot::channel();
        let hash = tx.hash();
        pool.next_nonce.insert(tx.sender, tx.nonce + 1);
        pool.queue.push_back(Pending {
            weight: self.config.weight_of(&tx.target),
            tx,
            hash,
            notify,
        });
        self.pool_signal.notify_all();
        Ok(ReceiptHandle { tx_hash: hash, rx })
    }

    /// Seals a block if the interval has elapsed since the tip and the pool
    /// is nonempty.
    pub fn seal_tick(&self, now: u64) -> Option<Block> {
        let mut chain = self.chain.lock().expect("chain lock poisoned");
        let tip = chain.blocks.last().expect("chain always holds genesis");
        if now.saturating_sub(tip.timestamp) < self.config.block_interval_ms {
            return None;
        }
        let (height, parent) = (tip.height + 1, tip.block_hash);

        let batch = {
            let mut pool = self.pool.lock().expect("pool lock poisoned");
            let mut used = 0;
            let mut batch = Vec::new();
            while let Some(next) = pool.queue.front() {
                if used + next.weight > self.config.block_capacity {
                    break;
                }
                used += next.weight;
                batch.extend(pool.queue.pop_front());
            }
            batch
        };
        if batch.is_empty() {
            return None;
        }

        let mut state = self.snapshot().state.clone();
        let outcomes: Vec<TxOutcome> = batch.iter().map(|p| apply_one(&mut state, &p.tx)).collect();
        let state_root = state.state_root();
        let (txs, notifiers): (Vec<_>, Vec<_>) = batch
            .into_iter()
            .map(|p| (p.tx, (p.hash, p.notify)))
            .unzip();
        let block = Block::seal(&self.authority, height, parent, now, state_root, txs, outcomes);

        if let Some(log) = chain.log.as_mut() {
            if let Err(err) = append_block(log, &block) {
                tracing::error!(height, %err, "failed to persist block");
            }
        }
        *self.committed.write().expect("snapshot lock poisoned") = Arc::new(Snapshot {
            height,
            block_hash: block.block_hash,
            state_root,
            timestamp: now,
            state,
        });

        let mut receipts = Vec::with_capacity(notifiers.len());
        for ((hash, notify), outcome) in notifiers.into_iter().zip(&block.outcomes) {
            let receipt = Receipt {
                tx_hash: hash,
                height,
                outcome: outcome.clone(),
            };
            chain.receipts.insert(hash, receipt.clone());
            receipts.push((notify, receipt));
        }
        chain.blocks.push(block.clone());
        drop(chain);
        for (notify, receipt) in receipts {
            let _ = notify.send(receipt);
        }
        Some(block)
    }

    pub fn receipt(&self, tx_hash: &Hash32) -> Option<Receipt> {
        self.chain
            .lock()
            .expect("chain lock poisoned")
            .receipts
            .get(tx_hash)
            .cloned()
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.chain.lock().expect("chain lock poisoned").blocks.clone()
    }

    pub fn block(&self, height: u64) -> Option<Block> {
        let chain = self.chain.lock().expect("chain lock poisoned");
        chain.blocks.get(height as usize).cloned()
    }

    /// Every committed transaction in block/index order.
    pub fn export_log(&self) -> Vec<Transaction> {
        let chain = self.chain.lock().expect("chain lock poisoned");
        chain
            .blocks
            .iter()
            .flat_map(|b| b.transactions.iter().cloned())
            .collect()
    }

    /// Spawns the sealing thread. The thread stops when the handle drops.
    pub fn start_sealer(self: &Arc<Self>) -> SealerHandle {
        let stop = Arc::new(AtomicBool::new(false));
        let ledger = Arc::clone(self);
        let flag = Arc::clone(&stop);
        let join = std::thread::Builder::new()
            .name("mdm-sealer".into())
            .spawn(move || ledger.seal_loop(&flag))
            .expect("failed to spawn sealer thread");
        SealerHandle {
            stop,
            join: Some(join),
        }
    }

    fn seal_loop(&self, stop: &AtomicBool) {
        const IDLE: Duration = Duration::from_millis(50);
        while !stop.load(Ordering::Acquire) {
            let now = now_ms();
            if self.seal_tick(now).is_some() {
                continue;
            }
            let due = self.snapshot().timestamp + self.config.block_interval_ms;
            let pool = self.pool.lock().expect("pool lock poisoned");
            if pool.queue.is_empty() {
                let _ = self.pool_signal.wait_timeout(pool, IDLE);
            } else {
                drop(pool);
                let wait = Duration::from_millis(due.saturating_sub(now).max(1)).min(IDLE);
                std::thread::sleep(wait);
            }
        }
    }
}

pub struct SealerHandle {
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl Drop for SealerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

fn append_block(file: &mut File, block: &Block) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(block)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.flush()
}

fn load_blocks(path: &Path) -> Result<Vec<Block>, LedgerError> {
    let reader = BufReader::new(File::open(path)?);
    let mut blocks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let block: Block = serde_json::from_str(&line)
            .map_err(|e| LedgerError::CorruptLog(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        blocks.push(block);
    }
    Ok(blocks)
}

fn verify_loaded<S: StateMachine>(
    authority: &Keypair,
    genesis: &Block,
    blocks: &[Block],
    replayer: &mut Replayer<S>,
    chain: &mut Chain,
) -> Result<(), LedgerError> {
    let corrupt = |h: u64, what: &str| LedgerError::CorruptLog(format!("block {h}: {what}"));
    match blocks.first() {
        Some(first) if first == genesis => {}
        _ => return Err(LedgerError::CorruptLog("genesis does not match this authority".into())),
    }
    let mut index = 0;
    for pair in blocks.windows(2) {
        let (prev, block) = (&pair[0], &pair[1]);
        let h = block.height;
        if h != prev.height + 1 || block.parent_hash != prev.block_hash {
            return Err(corrupt(h, "broken parent link"));
        }
        if !block.verify_integrity() || block.sealer != authority.address() {
            return Err(corrupt(h, "bad header or seal"));
        }
        for (tx, stored) in block.transactions.iter().zip(&block.outcomes) {
            let outcome = replayer.step(index, tx)?;
            index += 1;
            if &outcome != stored {
                return Err(corrupt(h, "recorded outcome differs from replay"));
            }
            let hash = tx.hash();
            chain.receipts.insert(
                hash,
                Receipt {
                    tx_hash: hash,
                    height: h,
                    outcome,
                },
            );
        }
        if replayer.state.state_root() != block.state_root {
            return Err(corrupt(h, "state root differs from replay"));
        }
    }
    Ok(())
}
