use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use super::transport::Hub;
use super::wire::{self, Hello, MessageKind, WireMessage};
use super::FederationError;
use crate::dml::{pool, Signature};
use crate::learners::{self, FitInfo, LearnerConfig, ModelArtifact};
use crate::numerics::{RngHandle, WeightedDesign};

/// Collects one signature per site, fits the learner on the pooled design
/// and pushes the model back.
#[derive(Debug, Clone)]
pub struct Coordinator {
    /// Expected site ids, sorted; empty when only a site count is known.
    registered: Vec<String>,
    expected: usize,
    pub learner: LearnerConfig,
    pub learner_rng: RngHandle,
    pub timeout: Duration,
}

/// Everything the coordinator learned in one round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub model: ModelArtifact,
    pub fit_info: FitInfo,
    /// Signatures in site-id order, as received.
    pub signatures: Vec<Signature>,
    pub pooled: WeightedDesign,
    /// Bytes received from / sent to each site, in site-id order.
    pub bytes_in: Vec<usize>,
    pub bytes_out: Vec<usize>,
    pub collect_secs: f64,
    pub fit_secs: f64,
    pub populate_secs: f64,
}

#[derive(Default)]
struct Slot {
    hello: Option<Hello>,
    signature: Option<Signature>,
    acked: bool,
}

impl Coordinator {
    /// A coordinator expecting exactly the given site ids.
    pub fn new(site_ids: &[String], learner: LearnerConfig, learner_rng: RngHandle, timeout: Duration) -> Result<Self, FederationError> {
        let mut registered = site_ids.to_vec();
        registered.sort();
        if let Some(w) = registered.windows(2).find(|w| w[0] == w[1]) {
            return Err(FederationError::DuplicateSite(w[0].clone()));
        }
        if registered.is_empty() {
            return Err(FederationError::NoSites);
        }
        Ok(Self {
            expected: registered.len(),
            registered,
            learner,
            learner_rng,
            timeout,
        })
    }

    /// A coordinator expecting `n` sites with ids learned from their hellos.
    pub fn with_count(n: usize, learner: LearnerConfig, learner_rng: RngHandle, timeout: Duration) -> Result<Self, FederationError> {
        if n == 0 {
            return Err(FederationError::NoSites);
        }
        Ok(Self {
            registered: Vec::new(),
            expected: n,
            learner,
            learner_rng,
            timeout,
        })
    }

    pub fn expected_sites(&self) -> usize {
        self.expected
    }

    /// Runs one round over `hub`. On failure every connection is sent an
    /// Error frame so sites stop waiting.
    pub fn run(&self, hub: &mut Hub) -> Result<RoundOutcome, FederationError> {
        let result = self.round(hub);
        if let Err(e) = &result {
            if let Ok(frame) = wire::encode(&WireMessage::new(MessageKind::Error, e.to_string().into_bytes())) {
                for conn in 0..hub.connections() {
                    if !hub.done[conn] {
                        let _ = hub.send(conn, &frame);
                    }
                }
            }
        }
        result
    }

    fn site_name(&self, slots: &[Slot], conn: usize) -> String {
        match &slots[conn].hello {
            Some(h) => h.site_id.clone(),
            None => format!("connection {conn}"),
        }
    }

    fn missing(&self, slots: &[Slot], pending: impl Fn(&Slot) -> bool) -> String {
        let seen: Vec<&str> = slots
            .iter()
            .filter_map(|s| s.hello.as_ref().filter(|_| !pending(s)).map(|h| h.site_id.as_str()))
            .collect();
        if !self.registered.is_empty() {
            let missing: Vec<&str> = self
                .registered
                .iter()
                .map(String::as_str)
                .filter(|id| !seen.contains(id))
                .collect();
            return missing.join(", ");
        }
        (0..slots.len())
            .filter(|&c| pending(&slots[c]))
            .map(|c| self.site_name(slots, c))
            .collect::<Vec<_>>()
            .join(", ")
    }

    fn round(&self, hub: &mut Hub) -> Result<RoundOutcome, FederationError> {
        if hub.connections() != self.expected {
            return Err(FederationError::Protocol(format!(
                "{} connections for {} sites",
                hub.connections(),
                self.expected
            )));
        }
        let t0 = Instant::now();
        let deadline = t0 + self.timeout;
        let mut slots: Vec<Slot> = (0..self.expected).map(|_| Slot::default()).collect();
        let mut remaining = self.expected;
        while remaining > 0 {
            let Some((conn, frame)) = hub.recv(deadline)? else {
                return Err(FederationError::Timeout {
                    site: self.missing(&slots, |s| s.signature.is_none()),
                    phase: "signature push",
                });
            };
            let msg = wire::decode_exact(&frame)?;
            match (msg.kind, slots[conn].hello.is_some(), slots[conn].signature.is_some()) {
                (MessageKind::Hello, false, _) => {
                    let hello = wire::decode_hello(&msg.payload)?;
                    if !self.registered.is_empty() && !self.registered.contains(&hello.site_id) {
                        return Err(FederationError::Protocol(format!("unregistered site {}", hello.site_id)));
                    }
                    if slots.iter().any(|s| s.hello.as_ref().is_some_and(|h| h.site_id == hello.site_id)) {
                        return Err(FederationError::DuplicateSite(hello.site_id));
                    }
                    slots[conn].hello = Some(hello);
                }
                (MessageKind::SignaturePush, true, false) => {
                    let sig = wire::decode_signature(&msg.payload)?;
                    let hello = slots[conn].hello.as_ref().unwrap();
                    if sig.site_id != hello.site_id {
                        return Err(FederationError::Protocol(format!(
                            "site {} pushed a signature labelled {}",
                            hello.site_id, sig.site_id
                        )));
                    }
                    sig.validate()?;
                    if sig.total_weight() != hello.n {
                        return Err(FederationError::Protocol(format!(
                            "site {} announced {} rows but its signature weighs {}",
                            hello.site_id,
                            hello.n,
                            sig.total_weight()
                        )));
                    }
                    slots[conn].signature = Some(sig);
                    remaining -= 1;
                }
                (MessageKind::Error, _, _) => {
                    return Err(FederationError::SiteFailed {
                        site: self.site_name(&slots, conn),
                        message: String::from_utf8_lossy(&msg.payload).into_owned(),
                    })
                }
                (kind, ..) => {
                    return Err(FederationError::Protocol(format!(
                        "unexpected {kind:?} from {}",
                        self.site_name(&slots, conn)
                    )))
                }
            }
        }
        let collect_secs = t0.elapsed().as_secs_f64();

        // site-id order makes the pooled design independent of arrival order
        let order: BTreeMap<String, usize> = slots
            .iter()
            .enumerate()
            .map(|(c, s)| (s.hello.as_ref().unwrap().site_id.clone(), c))
            .collect();
        let signatures: Vec<Signature> = order.values().map(|&c| slots[c].signature.clone().unwrap()).collect();
        let first = &signatures[0];
        for s in &signatures[1..] {
            if s.dim != first.dim {
                return Err(FederationError::DimensionMismatch {
                    site: s.site_id.clone(),
                    expected: first.dim,
                    found: s.dim,
                });
            }
            if s.task != first.task {
                return Err(FederationError::TaskMismatch(s.site_id.clone()));
            }
        }
        let t1 = Instant::now();
        let pooled = pool(&signatures)?;
        let total_n: u64 = slots.iter().map(|s| s.hello.as_ref().unwrap().n).sum();
        debug_assert_eq!(pooled.total_weight(), total_n as f64);
        let (model, fit_info) = learners::fit(&pooled, &self.learner, self.learner_rng)?;
        let fit_secs = t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let frame = wire::encode(&WireMessage::new(MessageKind::ModelPush, model.to_json().into_bytes()))?;
        for conn in 0..self.expected {
            hub.send(conn, &frame)?;
        }
        let deadline = t2 + self.timeout;
        let mut acks = 0;
        while acks < self.expected {
            let Some((conn, frame)) = hub.recv(deadline)? else {
                return Err(FederationError::Timeout {
                    site: self.missing(&slots, |s| !s.acked),
                    phase: "model acknowledgement",
                });
            };
            let msg = wire::decode_exact(&frame)?;
            match msg.kind {
                MessageKind::Ack if !slots[conn].acked => {
                    slots[conn].acked = true;
                    hub.done[conn] = true;
                    acks += 1;
                }
                MessageKind::Error => {
                    return Err(FederationError::SiteFailed {
                        site: self.site_name(&slots, conn),
                        message: String::from_utf8_lossy(&msg.payload).into_owned(),
                    })
                }
                kind => {
                    return Err(FederationError::Protocol(format!(
                        "unexpected {kind:?} from {}",
                        self.site_name(&slots, conn)
                    )))
                }
            }
        }
        let populate_secs = t2.elapsed().as_secs_f64();
        Ok(RoundOutcome {
            model,
            fit_info,
            bytes_in: order.values().map(|&c| hub.bytes_in[c]).collect(),
            bytes_out: order.values().map(|&c| hub.bytes_out[c]).collect(),
            signatures,
            pooled,
            collect_secs,
            fit_secs,
            populate_secs,
        })
    }
}
