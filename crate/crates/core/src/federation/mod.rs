//! One-shot federation: sites push signatures, the coordinator pools them,
//! fits a learner and pushes the model back.

mod coordinator;
mod site;
mod transport;
pub mod wire;

use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dml::DmlError;
use crate::learners::{self, FitInfo, LearnerConfig, LearnerError, ModelArtifact};
use crate::numerics::{Dataset, RngHandle, WeightedDesign};

pub use coordinator::{Coordinator, RoundOutcome};
pub use site::{leaked_rows, run_site, SiteNode, SiteStats};
pub use transport::{accept_hub, channel_hub, read_frame, ChannelSiteLink, Hub, SiteLink, TcpSiteLink};
pub use wire::{MessageKind, WireError, WireMessage};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("timed out waiting for {site} ({phase})")]
    Timeout { site: String, phase: &'static str },
    #[error("site {site} has dimension {found}, expected {expected}")]
    DimensionMismatch { site: String, expected: usize, found: usize },
    #[error("site {0} has a different task from the other sites")]
    TaskMismatch(String),
    #[error("duplicate site id {0}")]
    DuplicateSite(String),
    #[error("no sites")]
    NoSites,
    #[error("site {site} failed: {message}")]
    SiteFailed { site: String, message: String },
    #[error("coordinator reported: {0}")]
    Remote(String),
    #[error("connection {conn} lost: {message}")]
    Disconnected { conn: usize, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Dml(#[from] DmlError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    InProcess,
    Socket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Federated,
    NonDistributed,
    LocalAverage,
}

#[derive(Debug, Clone)]
pub struct FederationOptions {
    pub transport: Transport,
    pub timeout: Duration,
    /// Drives the learner (holdout split, forest bootstraps).
    pub learner_rng: RngHandle,
    /// Keep a copy of every frame each site sends.
    pub capture: bool,
}

impl Default for FederationOptions {
    fn default() -> Self {
        Self {
            transport: Transport::InProcess,
            timeout: Duration::from_secs(600),
            learner_rng: RngHandle::new(0),
            capture: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    /// Slowest site's compression time.
    pub compress_secs: f64,
    pub collect_secs: f64,
    pub fit_secs: f64,
    pub populate_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: RunMode,
    pub transport: Option<Transport>,
    /// Per-site measurements in site-id order.
    pub sites: Vec<SiteStats>,
    pub pooled_reps: usize,
    pub pooled_weight: f64,
    pub bytes_to_coordinator: usize,
    pub bytes_to_sites: usize,
    pub phases: PhaseTimes,
    pub fit: FitInfo,
    /// Local-average runs: each site's own test error, in site order.
    pub site_test_errors: Vec<f64>,
    pub test_error: Option<f64>,
    #[serde(skip)]
    pub pooled: Option<WeightedDesign>,
    /// Captured uplink frames, `(site id, frame)`, when requested.
    #[serde(skip)]
    pub transcript: Vec<(String, Vec<u8>)>,
}

impl RunReport {
    fn empty(mode: RunMode) -> Self {
        Self {
            mode,
            transport: None,
            sites: Vec::new(),
            pooled_reps: 0,
            pooled_weight: 0.0,
            bytes_to_coordinator: 0,
            bytes_to_sites: 0,
            phases: PhaseTimes::default(),
            fit: FitInfo::default(),
            site_test_errors: Vec::new(),
            test_error: None,
            pooled: None,
            transcript: Vec::new(),
        }
    }
}

/// Records every frame passed to `send`.
struct Tap<L> {
    inner: L,
    frames: Vec<Vec<u8>>,
    on: bool,
}

impl<L: SiteLink> SiteLink for Tap<L> {
    fn send(&mut self, frame: &[u8]) -> Result<(), FederationError> {
        if self.on {
            self.frames.push(frame.to_vec());
        }
        self.inner.send(frame)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, FederationError> {
        self.inner.recv(timeout)
    }
}

type SiteResult = (Result<(ModelArtifact, SiteStats), FederationError>, Vec<Vec<u8>>);

fn site_thread<L: SiteLink>(node: &SiteNode, link: L, opts: &FederationOptions) -> SiteResult {
    let mut tap = Tap {
        inner: link,
        frames: Vec::new(),
        on: opts.capture,
    };
    let r = run_site(node, &mut tap, opts.timeout);
    (r, tap.frames)
}

/// Runs one federated round over `sites`.
pub fn run_federated(
    sites: &[SiteNode],
    learner: &LearnerConfig,
    opts: &FederationOptions,
) -> Result<(ModelArtifact, RunReport), FederationError> {
    let ids: Vec<String> = sites.iter().map(|s| s.id().to_string()).collect();
    let coordinator = Coordinator::new(&ids, learner.clone(), opts.learner_rng, opts.timeout)?;
    let t0 = Instant::now();

    let (outcome, site_results) = match opts.transport {
        Transport::InProcess => {
            let (hub, links) = channel_hub(sites.len());
            thread::scope(|scope| {
                let handles: Vec<_> = sites
                    .iter()
                    .zip(links)
                    .map(|(node, link)| scope.spawn(move || site_thread(node, link, opts)))
                    .collect();
                let outcome = {
                    let mut hub = hub;
                    coordinator.run(&mut hub)
                };
                let results: Vec<SiteResult> = handles.into_iter().map(|h| h.join().expect("site thread panicked")).collect();
                (outcome, results)
            })
        }
        Transport::Socket => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?.to_string();
            thread::scope(|scope| {
                let handles: Vec<_> = sites
                    .iter()
                    .map(|node| {
                        let addr = addr.clone();
                        scope.spawn(move || match TcpSiteLink::connect(&addr, opts.timeout) {
                            Ok(link) => site_thread(node, link, opts),
                            Err(e) => (Err(e), Vec::new()),
                        })
                    })
                    .collect();
                let outcome = accept_hub(&listener, sites.len(), opts.timeout).and_then(|mut hub| coordinator.run(&mut hub));
                let results: Vec<SiteResult> = handles.into_iter().map(|h| h.join().expect("site thread panicked")).collect();
                (outcome, results)
            })
        }
    };
    let outcome = outcome?;
    let mut stats = Vec::with_capacity(sites.len());
    let mut transcript = Vec::new();
    for (node, (r, frames)) in sites.iter().zip(site_results) {
        let (model, s) = r?;
        if model != outcome.model {
            return Err(FederationError::Protocol(format!("site {} decoded a different model", node.id())));
        }
        stats.push(s);
        transcript.extend(frames.into_iter().map(|f| (node.id().to_string(), f)));
    }
    stats.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    let report = RunReport {
        transport: Some(opts.transport),
        pooled_reps: outcome.pooled.m(),
        pooled_weight: outcome.pooled.total_weight(),
        bytes_to_coordinator: outcome.bytes_in.iter().sum(),
        bytes_to_sites: outcome.bytes_out.iter().sum(),
        phases: PhaseTimes {
            compress_secs: stats.iter().map(|s| s.compress_secs).fold(0.0, f64::max),
            collect_secs: outcome.collect_secs,
            fit_secs: outcome.fit_secs,
            populate_secs: outcome.populate_secs,
            total_secs: t0.elapsed().as_secs_f64(),
        },
        sites: stats,
        fit: outcome.fit_info,
        pooled: Some(outcome.pooled),
        transcript,
        ..RunReport::empty(RunMode::Federated)
    };
    Ok((outcome.model, report))
}

/// Fits the learner on all rows with unit weights, no transform.
pub fn run_nondistributed(
    data: &Dataset,
    learner: &LearnerConfig,
    rng: RngHandle,
) -> Result<(ModelArtifact, RunReport), FederationError> {
    let t0 = Instant::now();
    let design = WeightedDesign::unit(data);
    let (model, fit) = learners::fit(&design, learner, rng)?;
    let secs = t0.elapsed().as_secs_f64();
    let report = RunReport {
        pooled_reps: design.m(),
        pooled_weight: design.total_weight(),
        phases: PhaseTimes {
            fit_secs: secs,
            total_secs: secs,
            ..Default::default()
        },
        fit,
        pooled: Some(design),
        ..RunReport::empty(RunMode::NonDistributed)
    };
    Ok((model, report))
}

/// Each site fits on its own rows; the report's test error is the
/// unweighted mean of the per-site errors on `test`.
pub fn run_local_average(
    sites: &[SiteNode],
    learner: &LearnerConfig,
    test: &Dataset,
    rng: RngHandle,
) -> Result<RunReport, FederationError> {
    if sites.is_empty() {
        return Err(FederationError::NoSites);
    }
    let t0 = Instant::now();
    let mut errors = Vec::with_capacity(sites.len());
    for s in sites {
        let model = s.fit_local(learner, rng.fork_str(s.id())).map_err(|e| FederationError::SiteFailed {
            site: s.id().to_string(),
            message: e.to_string(),
        })?;
        errors.push(model.test_error(test)?);
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok(RunReport {
        phases: PhaseTimes {
            fit_secs: t0.elapsed().as_secs_f64(),
            total_secs: t0.elapsed().as_secs_f64(),
            ..Default::default()
        },
        site_test_errors: errors,
        test_error: Some(mean),
        ..RunReport::empty(RunMode::LocalAverage)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dml::{DmlConfig, DmlKind};
    use crate::learners::L1Config;
    use crate::numerics::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn regression(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()).unwrap();
        let y = (0..n)
            .map(|i| 1.0 + x.row(i).iter().enumerate().map(|(j, v)| (j + 1) as f64 * v).sum::<f64>() + rng.random::<f64>() - 0.5)
            .collect();
        Dataset::regression(x, y).unwrap()
    }

    fn classes(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let x = Matrix::from_vec(n, 2, (0..n * 2).map(|k| rng.random::<f64>() + labels[k / 2] as f64 * 0.8).collect()).unwrap();
        Dataset::classification(x, labels, 3).unwrap()
    }

    fn lossless() -> DmlConfig {
        DmlConfig::new(DmlKind::Kmeans, 1.0)
    }

    #[test]
    fn single_lossless_site_equals_nondistributed() {
        let data = regression(60, 3, 1);
        let node = SiteNode::new("a", data.clone(), lossless(), RngHandle::new(1));
        let (fed, report) = run_federated(&[node], &LearnerConfig::Lm, &FederationOptions::default()).unwrap();
        let (base, _) = run_nondistributed(&data, &LearnerConfig::Lm, RngHandle::new(0)).unwrap();
        let (ModelArtifact::Linear(a), ModelArtifact::Linear(b)) = (fed, base) else { panic!() };
        for (x, y) in a.beta().iter().zip(b.beta()) {
            assert!((x - y).abs() < 1e-8);
        }
        assert_eq!(report.pooled_weight, 60.0);
    }

    #[test]
    fn identical_copies_equal_doubled_weights() {
        let data = regression(400, 2, 2);
        let dml = DmlConfig::new(DmlKind::Rptree, 8.0);
        let a = SiteNode::new("a", data.clone(), dml.clone(), RngHandle::new(5));
        let b = SiteNode::new("b", data.clone(), dml.clone(), RngHandle::new(5));
        let (fed, _) = run_federated(&[a.clone(), b], &LearnerConfig::Lm, &FederationOptions::default()).unwrap();
        let sig = a.signature().unwrap();
        let single = sig.to_design().unwrap();
        let doubled = WeightedDesign::new(
            single.points().clone(),
            single.responses().clone(),
            single.weights().iter().map(|w| 2.0 * w).collect(),
        )
        .unwrap();
        let direct = learners::fit_linear(&doubled).unwrap();
        let ModelArtifact::Linear(m) = fed else { panic!() };
        for (x, y) in m.beta().iter().zip(direct.beta()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn transports_agree_bit_for_bit() {
        let data = classes(300, 3);
        let parts: Vec<SiteNode> = (0..3)
            .map(|s| {
                let idx: Vec<usize> = (0..300).filter(|i| i % 3 == s).collect();
                SiteNode::new(format!("s{s}"), data.subset(&idx).unwrap(), DmlConfig::new(DmlKind::Kmeans, 4.0), RngHandle::new(s as u64))
            })
            .collect();
        let learner = LearnerConfig::L1logit(L1Config::default());
        let mut opts = FederationOptions::default();
        let (m1, r1) = run_federated(&parts, &learner, &opts).unwrap();
        opts.transport = Transport::Socket;
        let (m2, r2) = run_federated(&parts, &learner, &opts).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.pooled, r2.pooled);
        assert_eq!(r1.bytes_to_coordinator, r2.bytes_to_coordinator);
    }

    #[test]
    fn site_order_does_not_matter() {
        let data = regression(300, 2, 4);
        let mk = |id: &str, lo: usize| {
            let idx: Vec<usize> = (lo..lo + 100).collect();
            SiteNode::new(id, data.subset(&idx).unwrap(), DmlConfig::new(DmlKind::Kdtree, 5.0), RngHandle::new(lo as u64))
        };
        let sites = vec![mk("x", 0), mk("y", 100), mk("z", 200)];
        let rev: Vec<SiteNode> = sites.iter().rev().cloned().collect();
        let (a, ra) = run_federated(&sites, &LearnerConfig::Lm, &FederationOptions::default()).unwrap();
        let (b, rb) = run_federated(&rev, &LearnerConfig::Lm, &FederationOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.pooled, rb.pooled);
    }

    #[test]
    fn errors_name_the_problem() {
        let a = SiteNode::new("a", regression(50, 2, 1), lossless(), RngHandle::new(0));
        let b = SiteNode::new("b", regression(50, 3, 2), lossless(), RngHandle::new(0));
        match run_federated(&[a.clone(), b], &LearnerConfig::Lm, &FederationOptions::default()) {
            Err(FederationError::DimensionMismatch { site, expected: 2, found: 3 }) => assert_eq!(site, "b"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            run_federated(&[a.clone(), a.clone()], &LearnerConfig::Lm, &FederationOptions::default()),
            Err(FederationError::DuplicateSite(id)) if id == "a"
        ));
        assert!(matches!(run_federated(&[], &LearnerConfig::Lm, &FederationOptions::default()), Err(FederationError::NoSites)));
    }

    #[test]
    fn silent_site_times_out_by_name() {
        let coordinator = Coordinator::new(
            &["quiet".to_string(), "talker".to_string()],
            LearnerConfig::Lm,
            RngHandle::new(0),
            Duration::from_millis(200),
        )
        .unwrap();
        let (mut hub, mut links) = channel_hub(2);
        let talker = SiteNode::new("talker", regression(20, 1, 0), lossless(), RngHandle::new(0));
        let sig = talker.signature().unwrap();
        let hello = wire::encode_hello(&wire::Hello {
            site_id: "talker".into(),
            dim: 1,
            task: sig.task,
            n: 20,
        })
        .unwrap();
        links[1].send(&wire::encode(&WireMessage::new(MessageKind::Hello, hello)).unwrap()).unwrap();
        links[1]
            .send(&wire::encode(&WireMessage::new(MessageKind::SignaturePush, wire::encode_signature(&sig).unwrap())).unwrap())
            .unwrap();
        match coordinator.run(&mut hub) {
            Err(FederationError::Timeout { site, .. }) => assert_eq!(site, "quiet"),
            other => panic!("{other:?}"),
        }
        // the waiting site is told the round failed
        let frame = links[1].recv(Duration::from_secs(1)).unwrap();
        assert_eq!(wire::decode_exact(&frame).unwrap().kind, MessageKind::Error);
    }

    #[test]
    fn uplink_never_carries_raw_rows() {
        let data = regression(500, 3, 9);
        for kind in [DmlKind::Kmeans, DmlKind::Kdtree, DmlKind::Rptree] {
            let node = SiteNode::new("p", data.clone(), DmlConfig::new(kind, 5.0), RngHandle::new(3));
            let opts = FederationOptions {
                capture: true,
                ..Default::default()
            };
            let sig = node.signature().unwrap();
            if kind != DmlKind::Kmeans {
                assert!(sig.min_weight() >= 2);
            }
            if sig.min_weight() < 2 {
                // a singleton group's centroid is the row itself
                continue;
            }
            let (_, report) = run_federated(std::slice::from_ref(&node), &LearnerConfig::Lm, &opts).unwrap();
            assert_eq!(report.transcript.len(), 3);
            let bytes: Vec<u8> = report.transcript.iter().flat_map(|(_, f)| f.iter().copied()).collect();
            for x in data.features().rows() {
                let needle: Vec<u8> = x.iter().flat_map(|v| v.to_le_bytes()).collect();
                assert!(!bytes.windows(needle.len()).any(|w| w == needle.as_slice()));
            }
            assert!(node.leaked_rows(&sig).is_empty());
        }
    }

    #[test]
    fn local_average_of_one_site_is_nondistributed() {
        let data = regression(100, 2, 7);
        let test = regression(50, 2, 8);
        let node = SiteNode::new("only", data.clone(), lossless(), RngHandle::new(0));
        let rep = run_local_average(&[node], &LearnerConfig::Lm, &test, RngHandle::new(0)).unwrap();
        let (m, _) = run_nondistributed(&data, &LearnerConfig::Lm, RngHandle::new(0)).unwrap();
        assert_eq!(rep.test_error.unwrap(), m.test_error(&test).unwrap());
    }

    #[test]
    fn bytes_scale_with_reps_not_rows() {
        let learner = LearnerConfig::Lm;
        let mut sent = Vec::new();
        for n in [2000, 8000] {
            let node = SiteNode::new("s", regression(n, 6, 1), DmlConfig::new(DmlKind::Kmeans, n as f64 / 100.0), RngHandle::new(0));
            let (_, r) = run_federated(&[node], &learner, &FederationOptions::default()).unwrap();
            assert_eq!(r.sites[0].reps, 100);
            sent.push(r.sites[0].bytes_sent);
        }
        assert_eq!(sent[0], sent[1]);
        assert!(sent[0] <= 100 * 8 * 8 + 200);
    }
}
