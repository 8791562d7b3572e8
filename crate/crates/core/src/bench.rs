//! Closed-loop load generator for the seven core services.
//!
//! For each selected service, `batch_size` workers each issue
//! `total_requests / batch_size` synchronous requests back to back against a
//! fresh in-process gateway. Every worker signs with its own accounts, and
//! each service draws on its own fixture pool, so no two services contend
//! for the same records. Fixtures are seeded directly through the ledger
//! before timing starts; request bodies are signed before timing starts too,
//! so the measurement covers the gateway round trip only.

use std::future::Future;
use std::io::Write;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::ValidTime;
use crate::client::GatewayClient;
use crate::crypto::{sha256, Keypair};
use crate::gateway::{spawn, GatewayError, RunningGateway};
use crate::ledger::{now_ms, ChainConfig, ReceiptHandle, Transaction};
use crate::registry::{upload_ref, Call, DidDocument, DidRegisterArgs, MediaIdArgs, MediaRegistration};
use crate::rights::{AccessRights, Right};
use crate::scenario::{Cast, Participant};
use crate::service::{AccessRequest, Platform};
use crate::store::BlobStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchService {
    DidRegistration,
    DidResolution,
    AgreementGeneration,
    MultimediaRegistration,
    MultimediaDeregistration,
    TokenGeneration,
    TokenVerification,
}

impl BenchService {
    pub const ALL: [BenchService; 7] = [
        BenchService::DidRegistration,
        BenchService::DidResolution,
        BenchService::AgreementGeneration,
        BenchService::MultimediaRegistration,
        BenchService::MultimediaDeregistration,
        BenchService::TokenGeneration,
        BenchService::TokenVerification,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchService::DidRegistration => "did-registration",
            BenchService::DidResolution => "did-resolution",
            BenchService::AgreementGeneration => "agreement-generation",
            BenchService::MultimediaRegistration => "multimedia-registration",
            BenchService::MultimediaDeregistration => "multimedia-deregistration",
            BenchService::TokenGeneration => "token-generation",
            BenchService::TokenVerification => "token-verification",
        }
    }

    /// Read services never submit transactions.
    pub fn is_read(self) -> bool {
        matches!(self, BenchService::DidResolution | BenchService::TokenVerification)
    }
}

impl std::str::FromStr for BenchService {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BenchService::ALL
            .into_iter()
            .find(|svc| svc.name() == s)
            .ok_or_else(|| format!("unknown service {s:?}"))
    }
}

/// Bench parameters. The TOML file mirrors these fields; omitted fields
/// take the desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub total_requests: usize,
    pub batch_size: usize,
    pub services: Vec<BenchService>,
    pub block_interval_ms: u64,
    pub block_capacity: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            total_requests: 2_000,
            batch_size: 20,
            services: BenchService::ALL.to_vec(),
            block_interval_ms: 1_000,
            block_capacity: 200,
        }
    }
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.total_requests == 0 {
            return Ok(());
        }
        if self.batch_size == 0 {
            return Err(BenchError::Config("batch_size must be positive".into()));
        }
        if self.total_requests % self.batch_size != 0 {
            return Err(BenchError::Config(format!(
                "total_requests {} is not divisible by batch_size {}",
                self.total_requests, self.batch_size
            )));
        }
        self.chain_config()
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            block_interval_ms: self.block_interval_ms,
            block_capacity: self.block_capacity,
            ..ChainConfig::default()
        }
    }

    fn per_worker(&self) -> usize {
        self.total_requests / self.batch_size
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bad bench config: {0}")]
    Config(String),
    #[error("gateway-unreachable: {0}")]
    GatewayUnreachable(String),
    #[error("fixture-exhausted: {0}")]
    FixtureExhausted(String),
    #[error("fixture seeding failed: {0}")]
    Seed(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl From<GatewayError> for BenchError {
    fn from(e: GatewayError) -> Self {
        BenchError::GatewayUnreachable(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceReport {
    pub service: BenchService,
    pub requests: usize,
    pub completed: usize,
    pub errors: usize,
    pub wall_secs: f64,
    /// Completed requests per second of wall time.
    pub tps: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// Blocks sealed while this service was being driven.
    pub blocks_sealed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub crate_version: String,
    pub total_requests: usize,
    pub batch_size: usize,
    pub block_interval_ms: u64,
    pub block_capacity: u64,
    pub started_at_ms: u64,
}

impl Environment {
    fn capture(config: &BenchConfig) -> Self {
        Environment {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            total_requests: config.total_requests,
            batch_size: config.batch_size,
            block_interval_ms: config.block_interval_ms,
            block_capacity: config.block_capacity,
            started_at_ms: now_ms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub environment: Environment,
    pub services: Vec<ServiceReport>,
}

impl BenchReport {
    pub fn service(&self, svc: BenchService) -> Option<&ServiceReport> {
        self.services.iter().find(|r| r.service == svc)
    }

    pub fn total_errors(&self) -> usize {
        self.services.iter().map(|r| r.errors).sum()
    }

    /// Throughput ceiling the chain imposes on write services, in tx/s.
    pub fn write_ceiling_tps(&self) -> f64 {
        self.environment.block_capacity as f64 * 1000.0 / self.environment.block_interval_ms as f64
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<26} {:>10} {:>10} {:>10} {:>7} {:>7}\n",
            "service", "tps", "p50_ms", "p95_ms", "errors", "blocks"
        );
        for r in &self.services {
            out.push_str(&format!(
                "{:<26} {:>10.2} {:>10.2} {:>10.2} {:>7} {:>7}\n",
                r.service.name(),
                r.tps,
                r.p50_ms,
                r.p95_ms,
                r.errors,
                r.blocks_sealed
            ));
        }
        out
    }
}

/// Writes `name,tps,p50,p95,errors`, one row per service.
pub fn write_csv(report: &BenchReport, writer: impl Write) -> Result<(), BenchError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["name", "tps", "p50", "p95", "errors"])?;
    for r in &report.services {
        csv.write_record([
            r.service.name().to_string(),
            format!("{:.2}", r.tps),
            format!("{:.2}", r.p50_ms),
            format!("{:.2}", r.p95_ms),
            r.errors.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn emit_csv(report: &BenchReport, path: &Path) -> Result<(), BenchError> {
    write_csv(report, std::fs::File::create(path)?)
}

/// Nearest-rank percentile of an ascending sample, in milliseconds.
pub fn percentile_ms(sorted: &[Duration], pct: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1].as_secs_f64() * 1000.0
}

/// One pre-built request.
#[derive(Debug, Clone)]
enum Job {
    Write(Call, Transaction),
    Resolve(String),
    Grant(AccessRequest),
    Verify(String),
}

async fn execute(client: &GatewayClient, job: &Job) -> Result<(), String> {
    match job {
        Job::Write(call, tx) => match client.submit(call, tx).await {
            Ok(r) if r.is_success() => Ok(()),
            Ok(r) => Err(format!("reverted: {}", r.outcome.reason.unwrap_or_default())),
            Err(e) => Err(e.to_string()),
        },
        Job::Resolve(did) => client.resolve_did(did).await.map(drop).map_err(|e| e.to_string()),
        Job::Grant(req) => client.request_access_signed(req).await.map(drop).map_err(|e| e.to_string()),
        Job::Verify(token) => match client.verify_token(token, None).await {
            Ok(v) if v.report.accepted() => Ok(()),
            Ok(v) => Err(format!("rejected at {:?}", v.report.failed_step)),
            Err(e) => Err(e.to_string()),
        },
    }
}

fn did_call(keys: &Keypair, did: &str) -> Call {
    Call::DidRegister(DidRegisterArgs {
        bound_account: keys.address(),
        did: did.to_string(),
        ddo: DidDocument::for_key(did, &keys.public_key(), None).to_canonical(),
    })
}

fn media_call(owner: &Participant, id: &str) -> Call {
    let content_hash = sha256(id.as_bytes());
    Call::MediaRegister(MediaRegistration {
        id: id.to_string(),
        owner_did: owner.did.clone(),
        content_hash,
        owner_sig: owner.keys.sign(content_hash.as_bytes()),
        upload_ref: upload_ref(&content_hash),
    })
}

fn signed(keys: &Keypair, nonce: u64, call: Call) -> Job {
    let tx = Transaction::sign(keys, nonce, call.target(), call.payload());
    Job::Write(call, tx)
}

/// Seeds fixtures straight into the ledger, in submission order, and waits
/// for all of them to commit successfully.
struct Seeder<'a> {
    platform: &'a Platform,
    handles: Vec<(String, ReceiptHandle)>,
}

impl<'a> Seeder<'a> {
    fn new(platform: &'a Platform) -> Self {
        Seeder {
            platform,
            handles: Vec::new(),
        }
    }

    fn push(&mut self, keys: &Keypair, call: Call) -> Result<(), BenchError> {
        let label = format!("{} {}", call.target(), call.subject());
        let handle = self
            .platform
            .ledger()
            .submit_signed(keys, call.target(), call.payload())
            .map_err(|e| BenchError::Seed(format!("{label}: {e}")))?;
        self.handles.push((label, handle));
        Ok(())
    }

    async fn commit(&mut self) -> Result<(), BenchError> {
        for (label, handle) in self.handles.drain(..) {
            let receipt = handle
                .confirmed()
                .await
                .map_err(|e| BenchError::Seed(format!("{label}: {e}")))?;
            if !receipt.is_success() {
                return Err(BenchError::Seed(format!(
                    "{label}: {}",
                    receipt.outcome.reason.unwrap_or_default()
                )));
            }
        }
        Ok(())
    }
}

fn worker_keys(service: BenchService, w: usize) -> Participant {
    Participant::from_seed(&format!("bench/{}/{w}", service.name()))
}

/// Builds the fixtures for `svc` and returns each worker's job list.
async fn prepare(
    svc: BenchService,
    config: &BenchConfig,
    platform: &Platform,
    cast: &Cast,
) -> Result<Vec<Vec<Job>>, BenchError> {
    let (workers, n) = (config.batch_size, config.per_worker());
    let mut seeder = Seeder::new(platform);
    let mut jobs = Vec::with_capacity(workers);
    for w in 0..workers {
        let me = worker_keys(svc, w);
        let list: Vec<Job> = match svc {
            BenchService::DidRegistration => (0..n)
                .map(|i| signed(&me.keys, i as u64 + 1, did_call(&me.keys, &format!("did:mdm:bench-{w}-{i}"))))
                .collect(),
            BenchService::DidResolution => {
                seeder.push(&me.keys, did_call(&me.keys, &me.did))?;
                (0..n).map(|_| Job::Resolve(me.did.clone())).collect()
            }
            BenchService::AgreementGeneration => (0..n)
                .map(|i| {
                    let terms = cast.terms(&format!("bench-agreement-{w}-{i}"), b"bench", AccessRights::all());
                    signed(&me.keys, i as u64 + 1, Call::AgreementGenerate(terms))
                })
                .collect(),
            BenchService::MultimediaRegistration => {
                seeder.push(&me.keys, did_call(&me.keys, &me.did))?;
                (0..n)
                    .map(|i| signed(&me.keys, i as u64 + 2, media_call(&me, &format!("bench-new-{w}-{i}"))))
                    .collect()
            }
            BenchService::MultimediaDeregistration => {
                seeder.push(&me.keys, did_call(&me.keys, &me.did))?;
                for i in 0..n {
                    seeder.push(&me.keys, media_call(&me, &format!("bench-old-{w}-{i}")))?;
                }
                let first = n as u64 + 2;
                (0..n)
                    .map(|i| {
                        let call = Call::MediaDeregister(MediaIdArgs {
                            id: format!("bench-old-{w}-{i}"),
                        });
                        signed(&me.keys, first + i as u64, call)
                    })
                    .collect()
            }
            BenchService::TokenGeneration | BenchService::TokenVerification => {
                seeder.push(&me.keys, did_call(&me.keys, &me.did))?;
                Vec::new()
            }
        };
        jobs.push(list);
    }
    seeder.commit().await?;

    if matches!(svc, BenchService::TokenGeneration | BenchService::TokenVerification) {
        let base = now_ms();
        let hour = 3_600_000;
        let rights: AccessRights = [Right::Publication].into_iter().collect();
        for (w, list) in jobs.iter_mut().enumerate() {
            let me = worker_keys(svc, w);
            let request = |i: usize| {
                let mut req = cast.token_request(GRANT_MEDIA, rights, ValidTime::starting_at(base + i as u64, hour));
                req.enduser_did = me.did.clone();
                AccessRequest::sign(&me.keys, req)
            };
            if svc == BenchService::TokenGeneration {
                *list = (0..n).map(|i| Job::Grant(request(i))).collect();
            } else {
                let grant = platform
                    .request_access(&request(0), now_ms())
                    .await
                    .map_err(|e| BenchError::Seed(format!("token for worker {w}: {e}")))?;
                *list = (0..n).map(|_| Job::Verify(grant.token.clone())).collect();
            }
        }
    }

    for (w, list) in jobs.iter().enumerate() {
        if list.len() != n {
            return Err(BenchError::FixtureExhausted(format!(
                "{}: worker {w} has {} of {n} requests",
                svc.name(),
                list.len()
            )));
        }
    }
    Ok(jobs)
}

const GRANT_MEDIA: &str = "bench-granted-work";

/// Registers the shared owner and provider, one approved work and its
/// settled agreement.
async fn seed_common(platform: &Platform, cast: &Cast) -> Result<(), BenchError> {
    let mut seeder = Seeder::new(platform);
    seeder.push(&cast.owner.keys, cast.owner.register_did())?;
    seeder.push(&cast.provider.keys, cast.provider.register_did())?;
    seeder.push(&cast.owner.keys, cast.owner.register_media(GRANT_MEDIA, b"bench work"))?;
    let terms = cast.terms("bench-license", b"bench license", AccessRights::all());
    let hash = terms.agreement_hash;
    let (os, ps) = (cast.owner.sign_terms(&terms), cast.provider.sign_terms(&terms));
    seeder.push(&cast.provider.keys, Call::AgreementGenerate(terms))?;
    seeder.push(&cast.owner.keys, Call::AgreementOwnerSign(os))?;
    seeder.push(&cast.provider.keys, Call::AgreementProviderSign(ps))?;
    seeder.push(&cast.provider.keys, cast.approve(GRANT_MEDIA, hash))?;
    seeder.commit().await
}

/// Runs `per_worker` jobs on each of `jobs.len()` concurrent workers.
async fn drive<F, Fut>(jobs: Vec<Vec<Job>>, run: F) -> (Duration, Vec<(Duration, Result<(), String>)>)
where
    F: Fn(Job) -> Fut + Send + Sync + 'static,
    Fut: Future<Output = Result<(), String>> + Send,
{
    let run = Arc::new(run);
    let start = Instant::now();
    let tasks: Vec<_> = jobs
        .into_iter()
        .map(|list| {
            let run = Arc::clone(&run);
            tokio::spawn(async move {
                let mut samples = Vec::with_capacity(list.len());
                for job in list {
                    let t = Instant::now();
                    let result = run(job).await;
                    samples.push((t.elapsed(), result));
                }
                samples
            })
        })
        .collect();
    let mut samples = Vec::new();
    for task in tasks {
        samples.extend(task.await.expect("bench worker panicked"));
    }
    (start.elapsed(), samples)
}

async fn measure(
    svc: BenchService,
    client: &GatewayClient,
    platform: &Platform,
    jobs: Vec<Vec<Job>>,
) -> ServiceReport {
    let requests = jobs.iter().map(Vec::len).sum();
    let height_before = platform.snapshot().height;
    let client = client.clone();
    let (wall, samples) = drive(jobs, move |job| {
        let client = client.clone();
        async move { execute(&client, &job).await }
    })
    .await;
    let blocks_sealed = platform.snapshot().height - height_before;

    let mut durations: Vec<Duration> = samples.iter().map(|(d, _)| *d).collect();
    durations.sort();
    let first_error = samples.iter().find_map(|(_, r)| r.clone().err());
    let errors = samples.iter().filter(|(_, r)| r.is_err()).count();
    let completed = requests - errors;
    let wall_secs = wall.as_secs_f64();
    ServiceReport {
        service: svc,
        requests,
        completed,
        errors,
        wall_secs,
        tps: if wall_secs > 0.0 { completed as f64 / wall_secs } else { 0.0 },
        p50_ms: percentile_ms(&durations, 50.0),
        p95_ms: percentile_ms(&durations, 95.0),
        blocks_sealed,
        first_error,
    }
}

/// Starts a fresh ledger and gateway with the config's chain parameters,
/// seeds fixtures, and drives each selected service in turn.
pub async fn run_bench(config: &BenchConfig) -> Result<BenchReport, BenchError> {
    config.validate()?;
    let environment = Environment::capture(config);
    if config.total_requests == 0 || config.services.is_empty() {
        return Ok(BenchReport {
            environment,
            services: Vec::new(),
        });
    }

    let dir = tempfile::tempdir()?;
    let store = BlobStore::open(dir.path().join("blobs")).map_err(|e| BenchError::Seed(e.to_string()))?;
    let cast = Cast::from_seed("bench");
    let mut platform = Platform::start(config.chain_config(), Keypair::generate(), store)
        .map_err(|e| BenchError::Config(e.to_string()))?;
    platform.host_provider(cast.provider.keys.clone());
    let gateway: RunningGateway = spawn(Arc::new(platform), SocketAddr::from((Ipv4Addr::LOCALHOST, 0))).await?;
    let client = GatewayClient::new(&gateway.url()).map_err(|e| BenchError::GatewayUnreachable(e.to_string()))?;
    client
        .status()
        .await
        .map_err(|e| BenchError::GatewayUnreachable(e.to_string()))?;
    let platform = Arc::clone(gateway.platform());

    seed_common(&platform, &cast).await?;
    let mut services = Vec::new();
    for &svc in &config.services {
        let jobs = prepare(svc, config, &platform, &cast).await?;
        services.push(measure(svc, &client, &platform, jobs).await);
    }
    gateway.shutdown().await?;
    Ok(BenchReport { environment, services })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(services: Vec<BenchService>, capacity: u64) -> BenchConfig {
        BenchConfig {
            total_requests: 40,
            batch_size: 20,
            services,
            block_interval_ms: 200,
            block_capacity: capacity,
        }
    }

    #[test]
    fn config_validation() {
        assert!(BenchConfig::default().validate().is_ok());
        let mut c = BenchConfig::default();
        c.total_requests = 2_001;
        assert!(matches!(c.validate(), Err(BenchError::Config(_))));
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let parsed: BenchConfig = toml::from_str("total_requests = 100\nservices = [\"did-resolution\"]").unwrap();
        assert_eq!(parsed.batch_size, 20);
        assert_eq!(parsed.services, vec![BenchService::DidResolution]);
        assert!(toml::from_str::<BenchConfig>("bogus = 1").is_err());
    }

    #[test]
    fn percentiles() {
        let d: Vec<Duration> = (1..=100).map(Duration::from_millis).collect();
        assert_eq!(percentile_ms(&d, 50.0), 50.0);
        assert_eq!(percentile_ms(&d, 95.0), 95.0);
        assert_eq!(percentile_ms(&[], 95.0), 0.0);
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn zero_requests_give_an_empty_report() {
        let config = BenchConfig {
            total_requests: 0,
            ..BenchConfig::default()
        };
        let report = run_bench(&config).await.unwrap();
        assert!(report.services.is_empty());
        assert_eq!(report.total_errors(), 0);
        let mut out = Vec::new();
        write_csv(&report, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "name,tps,p50,p95,errors\n");
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn every_service_completes_without_errors() {
        let report = run_bench(&small(BenchService::ALL.to_vec(), 200)).await.unwrap();
        assert_eq!(report.services.len(), 7);
        for r in &report.services {
            assert_eq!(r.errors, 0, "{}: {:?}", r.service.name(), r.first_error);
            assert_eq!(r.completed, 40);
            if r.service.is_read() {
                assert_eq!(r.blocks_sealed, 0, "{} sealed blocks", r.service.name());
            }
        }
        let mut out = Vec::new();
        write_csv(&report, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 8);
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn halving_capacity_does_not_raise_write_throughput() {
        let svc = vec![BenchService::DidRegistration];
        let full = run_bench(&small(svc.clone(), 20)).await.unwrap();
        let half = run_bench(&small(svc, 10)).await.unwrap();
        let (full, half) = (&full.services[0], &half.services[0]);
        assert_eq!(full.errors + half.errors, 0);
        // Capacity 20 per 200 ms allows 100 tx/s; capacity 10 allows 50.
        assert!(half.tps <= full.tps * 1.1, "half {} vs full {}", half.tps, full.tps);
        assert!(half.tps <= 50.0 * 1.1);
        assert!(full.tps <= 100.0 * 1.1);
    }
}
