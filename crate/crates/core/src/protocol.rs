//! In-process simulation of the rado crafting protocol.
//!
//! A coordinator enumerates the observed (signature, class) pairs and, for
//! each, sends a `PART` request to every peer. A peer answers with the sum
//! of its matching edge vectors over its own non-shared features and the
//! number of rows that matched. Only the coordinator sees replies; peers
//! never see each other's data. Rounds are independent and run in parallel.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{BinningRule, LabeledRows, PeerView};
use crate::error::{Error, Result};
use crate::rado::{assemble_block, peer_rado, PeerContribution, RadoSet, Signature};

/// `PART(s, y)` sent by the coordinator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartRequest {
    pub round: usize,
    pub signature: Signature,
}

/// A peer's answer to a [`PartRequest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartReply {
    pub round: usize,
    pub peer: usize,
    /// Coordinates over the peer's non-shared features, ascending.
    pub rado: Vec<f64>,
    pub count: u64,
}

/// One line of a protocol trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Request { to: usize, request: PartRequest },
    Reply { reply: PartReply },
}

impl TraceEvent {
    fn round(&self) -> usize {
        match self {
            TraceEvent::Request { request, .. } => request.round,
            TraceEvent::Reply { reply } => reply.round,
        }
    }
}

/// Traffic attributed to one peer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerTraffic {
    pub requests_received: u64,
    pub replies_sent: u64,
    pub scalars_sent: u64,
    pub counter_values_sent: u64,
}

/// Communication totals of one crafting session.
///
/// `scalars_sent` counts real-valued rado coordinates carried by replies.
/// The integer match counts travel in the same replies and are tallied in
/// `counter_values_sent`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub scalars_sent: u64,
    pub counter_values_sent: u64,
    pub requests_sent: u64,
    pub replies_received: u64,
    pub per_peer: Vec<PeerTraffic>,
}

impl CommLedger {
    pub fn messages_sent(&self) -> u64 {
        self.requests_sent + self.replies_received
    }

    pub fn total_values_sent(&self) -> u64 {
        self.scalars_sent + self.counter_values_sent
    }

    /// Adds another session's totals, peer by peer.
    pub fn absorb(&mut self, other: &CommLedger) {
        self.scalars_sent += other.scalars_sent;
        self.counter_values_sent += other.counter_values_sent;
        self.requests_sent += other.requests_sent;
        self.replies_received += other.replies_received;
        if self.per_peer.len() < other.per_peer.len() {
            self.per_peer
                .resize(other.per_peer.len(), PeerTraffic::default());
        }
        for (a, b) in self.per_peer.iter_mut().zip(&other.per_peer) {
            a.requests_received += b.requests_received;
            a.replies_sent += b.replies_sent;
            a.scalars_sent += b.scalars_sent;
            a.counter_values_sent += b.counter_values_sent;
        }
    }
}

#[derive(Default)]
struct PeerCounters {
    requests: AtomicU64,
    replies: AtomicU64,
    scalars: AtomicU64,
    counters: AtomicU64,
}

/// Ledger shared by concurrent rounds. Totals do not depend on the order
/// in which increments land.
struct LiveLedger {
    peers: Vec<PeerCounters>,
}

impl LiveLedger {
    fn new(p: usize) -> Self {
        Self {
            peers: (0..p).map(|_| PeerCounters::default()).collect(),
        }
    }

    fn request(&self, peer: usize) {
        self.peers[peer].requests.fetch_add(1, Ordering::Relaxed);
    }

    fn reply(&self, reply: &PartReply) {
        let c = &self.peers[reply.peer];
        c.replies.fetch_add(1, Ordering::Relaxed);
        c.scalars
            .fetch_add(reply.rado.len() as u64, Ordering::Relaxed);
        c.counters.fetch_add(1, Ordering::Relaxed);
    }

    fn snapshot(&self) -> CommLedger {
        let per_peer: Vec<PeerTraffic> = self
            .peers
            .iter()
            .map(|c| PeerTraffic {
                requests_received: c.requests.load(Ordering::Relaxed),
                replies_sent: c.replies.load(Ordering::Relaxed),
                scalars_sent: c.scalars.load(Ordering::Relaxed),
                counter_values_sent: c.counters.load(Ordering::Relaxed),
            })
            .collect();
        CommLedger {
            scalars_sent: per_peer.iter().map(|t| t.scalars_sent).sum(),
            counter_values_sent: per_peer.iter().map(|t| t.counter_values_sent).sum(),
            requests_sent: per_peer.iter().map(|t| t.requests_received).sum(),
            replies_received: per_peer.iter().map(|t| t.replies_sent).sum(),
            per_peer,
        }
    }
}

/// Peer side of the protocol: answers requests from its local view only.
pub struct PeerNode<'a> {
    view: &'a PeerView,
}

impl<'a> PeerNode<'a> {
    pub fn new(view: &'a PeerView) -> Self {
        Self { view }
    }

    pub fn handle(&self, request: &PartRequest) -> PartReply {
        let local = peer_rado(self.view, &request.signature);
        PartReply {
            round: request.round,
            peer: self.view.peer_id(),
            rado: local.rado.iter().copied().collect(),
            count: local.count as u64,
        }
    }
}

/// Observed (binned shared values, class) pairs across all peers, sorted.
pub fn enumerate_signatures(peers: &[PeerView]) -> Vec<Signature> {
    let mut set = BTreeSet::new();
    for view in peers {
        for i in 0..view.len() {
            set.insert(Signature::new(
                view.shared_values(i).collect(),
                view.labels()[i],
            ));
        }
    }
    set.into_iter().collect()
}

fn check_schema(peers: &[PeerView], rule: &BinningRule) -> Result<()> {
    if peers.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 peers, got {}",
            peers.len()
        )));
    }
    let first = &peers[0];
    for view in peers {
        if view.total_dim() != first.total_dim() || view.shared_idx() != first.shared_idx() {
            return Err(Error::SchemaMismatch(format!(
                "peer {} disagrees on the shared schema",
                view.peer_id()
            )));
        }
    }
    if rule.dim != first.total_dim() || rule.shared_idx() != first.shared_idx() {
        return Err(Error::SchemaMismatch(
            "binning rule does not match the peers' schema".into(),
        ));
    }
    for (j, view) in peers.iter().enumerate() {
        if view.peer_id() != j {
            return Err(Error::SchemaMismatch(format!(
                "peer at position {j} has id {}",
                view.peer_id()
            )));
        }
    }
    Ok(())
}

/// Runs the crafting protocol over `peers`. See [`radocraft_traced`].
pub fn radocraft(peers: &[PeerView], rule: &BinningRule) -> Result<(RadoSet, CommLedger)> {
    let (set, ledger, _) = run(peers, rule, false)?;
    Ok((set, ledger))
}

/// Runs the crafting protocol and also returns every request and reply,
/// ordered by round, then requests before replies, then peer.
pub fn radocraft_traced(
    peers: &[PeerView],
    rule: &BinningRule,
) -> Result<(RadoSet, CommLedger, Vec<TraceEvent>)> {
    run(peers, rule, true)
}

fn run(
    peers: &[PeerView],
    rule: &BinningRule,
    trace: bool,
) -> Result<(RadoSet, CommLedger, Vec<TraceEvent>)> {
    check_schema(peers, rule)?;
    let signatures = enumerate_signatures(peers);
    for sig in &signatures {
        for (bins, &v) in rule.shared.iter().zip(&sig.values) {
            if !bins.is_representative(v) {
                return Err(Error::SchemaMismatch(format!(
                    "shared feature {} holds unbinned value {v}",
                    bins.feature
                )));
            }
        }
    }

    let dim = peers[0].total_dim();
    let shared_idx = peers[0].shared_idx().to_vec();
    let nodes: Vec<PeerNode> = peers.iter().map(PeerNode::new).collect();
    let own: Vec<Vec<usize>> = peers.iter().map(PeerView::own_features).collect();
    let ledger = LiveLedger::new(peers.len());
    let events = Mutex::new(Vec::new());

    let rounds: Vec<Option<_>> = signatures
        .par_iter()
        .enumerate()
        .map(|(round, sig)| -> Result<_> {
            let request = PartRequest {
                round,
                signature: sig.clone(),
            };
            let mut contributions = Vec::with_capacity(nodes.len());
            let mut log = Vec::new();
            for (j, node) in nodes.iter().enumerate() {
                ledger.request(j);
                let reply = node.handle(&request);
                if reply.rado.len() != own[j].len() {
                    return Err(Error::ReplyDimension {
                        peer: j,
                        expected: own[j].len(),
                        got: reply.rado.len(),
                    });
                }
                ledger.reply(&reply);
                if trace {
                    log.push(TraceEvent::Request {
                        to: j,
                        request: request.clone(),
                    });
                    log.push(TraceEvent::Reply {
                        reply: reply.clone(),
                    });
                }
                contributions.push(PeerContribution {
                    features: own[j].clone(),
                    rado: DVector::from_vec(reply.rado),
                    count: reply.count as usize,
                });
            }
            if trace {
                events.lock().expect("trace lock").extend(log);
            }
            let block = assemble_block(sig, &contributions, dim, &shared_idx)?;
            Ok(block.is_populated().then_some(block))
        })
        .collect::<Result<_>>()?;

    let mut events = events.into_inner().expect("trace lock");
    events.sort_by_key(|e| {
        let (order, peer) = match e {
            TraceEvent::Request { to, .. } => (0, *to),
            TraceEvent::Reply { reply } => (1, reply.peer),
        };
        (e.round(), order, peer)
    });
    let set = RadoSet {
        blocks: rounds.into_iter().flatten().collect(),
        feature_dim: dim,
        shared_idx,
    };
    Ok((set, ledger.snapshot(), events))
}

/// Writes trace events as JSON lines.
pub fn write_trace<W: Write>(mut out: W, events: &[TraceEvent]) -> Result<()> {
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n").map_err(|e| Error::Io {
            path: "<trace>".into(),
            source: e,
        })?;
    }
    Ok(())
}
