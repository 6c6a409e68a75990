use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::transport::SiteLink;
use super::wire::{self, Hello, MessageKind, WireMessage};
use super::FederationError;
use crate::dml::{compress, DmlConfig, Signature};
use crate::learners::{self, LearnerConfig, ModelArtifact};
use crate::numerics::{Dataset, RngHandle, WeightedDesign};

/// One data-holding site. Its rows stay inside this value: the protocol only
/// ever encodes the site's signature.
#[derive(Debug, Clone)]
pub struct SiteNode {
    id: String,
    data: Dataset,
    pub dml: DmlConfig,
    pub rng: RngHandle,
}

/// What a site measured during one round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteStats {
    pub site_id: String,
    pub n: usize,
    pub reps: usize,
    pub compression_ratio: f64,
    pub bytes_sent: usize,
    pub bytes_received: usize,
    pub compress_secs: f64,
}

impl SiteNode {
    pub fn new(id: impl Into<String>, data: Dataset, dml: DmlConfig, rng: RngHandle) -> Self {
        Self {
            id: id.into(),
            data,
            dml,
            rng,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn dim(&self) -> usize {
        self.data.d()
    }

    /// The local signature, with its row assignment kept for local use.
    pub fn signature(&self) -> Result<Signature, FederationError> {
        Ok(compress(&self.data, &self.dml, &self.id, self.rng)?)
    }

    /// Fits `learner` on this site's raw rows only.
    pub fn fit_local(&self, learner: &LearnerConfig, rng: RngHandle) -> Result<ModelArtifact, FederationError> {
        Ok(learners::fit(&WeightedDesign::unit(&self.data), learner, rng)?.0)
    }

    /// Centroids in `sig` that coincide exactly with one of this site's rows.
    pub fn leaked_rows(&self, sig: &Signature) -> Vec<usize> {
        leaked_rows(&self.data, sig)
    }
}

/// Indices of rows of `data` that appear verbatim as a centroid of `sig`.
pub fn leaked_rows(data: &Dataset, sig: &Signature) -> Vec<usize> {
    use std::collections::HashSet;
    let centroids: HashSet<Vec<u64>> = sig
        .reps
        .iter()
        .map(|r| r.centroid.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    data.features()
        .rows()
        .enumerate()
        .filter(|(_, x)| centroids.contains(&x.iter().map(|v| (v + 0.0).to_bits()).collect::<Vec<_>>()))
        .map(|(i, _)| i)
        .collect()
}

fn send(link: &mut dyn SiteLink, kind: MessageKind, payload: Vec<u8>, sent: &mut usize) -> Result<(), FederationError> {
    let frame = wire::encode(&WireMessage::new(kind, payload))?;
    *sent += frame.len();
    link.send(&frame)
}

/// Runs the site half of one round: compress, announce, push the signature,
/// wait for the model and acknowledge it.
pub fn run_site(
    node: &SiteNode,
    link: &mut dyn SiteLink,
    timeout: Duration,
) -> Result<(ModelArtifact, SiteStats), FederationError> {
    let t0 = Instant::now();
    let sig = match node.signature() {
        Ok(sig) => sig,
        Err(e) => {
            // tell the coordinator instead of leaving it to time out
            let mut sent = 0;
            let _ = send(link, MessageKind::Error, e.to_string().into_bytes(), &mut sent);
            return Err(e);
        }
    };
    let compress_secs = t0.elapsed().as_secs_f64();
    let mut stats = SiteStats {
        site_id: node.id.clone(),
        n: node.n(),
        reps: sig.len(),
        compression_ratio: node.n() as f64 / sig.len() as f64,
        compress_secs,
        ..Default::default()
    };
    let hello = Hello {
        site_id: node.id.clone(),
        dim: node.dim(),
        task: node.data.task(),
        n: node.n() as u64,
    };
    send(link, MessageKind::Hello, wire::encode_hello(&hello)?, &mut stats.bytes_sent)?;
    send(
        link,
        MessageKind::SignaturePush,
        wire::encode_signature(&sig)?,
        &mut stats.bytes_sent,
    )?;
    let frame = link.recv(timeout)?;
    stats.bytes_received += frame.len();
    let msg = wire::decode_exact(&frame)?;
    match msg.kind {
        MessageKind::ModelPush => {
            let text = std::str::from_utf8(&msg.payload)
                .map_err(|_| FederationError::Protocol("model payload is not utf-8".into()))?;
            let model = ModelArtifact::from_json(text)?;
            send(link, MessageKind::Ack, Vec::new(), &mut stats.bytes_sent)?;
            Ok((model, stats))
        }
        MessageKind::Error => Err(FederationError::Remote(String::from_utf8_lossy(&msg.payload).into_owned())),
        k => Err(FederationError::Protocol(format!("site {} expected a model, got {k:?}", node.id))),
    }
}
