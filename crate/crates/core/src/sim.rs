//! Deterministic discrete-event broadcast network.
//!
//! Nodes own a [`CertificateDb`] and a [`WalletState`]; one node also hosts
//! the issuer. Events run in strict `(tick, seq)` order, and the only source
//! of randomness is a seeded SplitMix64 stream, so a `(SimConfig, script)`
//! pair always produces the same trace.
//!
//! Node handlers see the delivered payload and their own state, never the
//! sending node id. Honest nodes react automatically: an issued note or a
//! payment that passes the wallet checks is countersigned, applied locally
//! and broadcast. Adversarial nodes stay passive and act only through
//! [`AdversaryScript`]s.
//!
//! Trace lines have the form `tick seq from to kind note_number epoch result`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use crate::crypto::{self, PublicKey};
use crate::db::{CertificateDb, DbPolicy, Rejection};
use crate::error::SimError;
use crate::issuer::IssuerState;
use crate::note::{Note, OwnershipCert};
use crate::wallet::{QuorumCheck, WalletReject, WalletState};

pub type NodeId = usize;

/// SplitMix64 (Steele, Lea, Flood 2014). Constants:
/// increment `0x9E3779B97F4A7C15`, multipliers `0xBF58476D1CE4E5B9` and
/// `0x94D049BB133111EB`, shifts 30/27/31. Output for seed 0 starts
/// `0xE220A8397B1DCDAF`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeliveryPolicy {
    /// Every message arrives one tick later; per-sender order is kept.
    ReliableFifo,
    /// Delay drawn uniformly from `1..=max_ticks` as `1 + r % max_ticks`.
    RandomDelay { max_ticks: u64 },
    /// Reliable, except that messages on the listed `(from, to)` links are lost.
    DropList(BTreeSet<(NodeId, NodeId)>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub node_count: usize,
    pub delivery: DeliveryPolicy,
    pub max_ticks: u64,
}

impl SimConfig {
    pub fn reliable(seed: u64, node_count: usize) -> Self {
        Self { seed, node_count, delivery: DeliveryPolicy::ReliableFifo, max_ticks: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    /// A broadcast part A.
    Certificate(OwnershipCert),
    /// Issuer to first owner.
    IssuedNote(Note),
    /// Payer to payee, with the key the payee expects to be paid by.
    Payment { note: Note, payer: PublicKey },
    /// A scripted adversary step, delivered to the acting node itself.
    Script(AdversaryAction),
}

impl Payload {
    fn kind(&self) -> &'static str {
        match self {
            Payload::Certificate(_) => "cert",
            Payload::IssuedNote(_) => "issue",
            Payload::Payment { .. } => "pay",
            Payload::Script(_) => "script",
        }
    }

    fn position(&self) -> (u64, u64) {
        match self {
            Payload::Certificate(c) => (c.note_number, c.epoch),
            Payload::IssuedNote(n) | Payload::Payment { note: n, .. } => (n.part_a.note_number, n.part_a.epoch),
            Payload::Script(AdversaryAction::Broadcast(c)) => (c.note_number, c.epoch),
            Payload::Script(AdversaryAction::Send { payload, .. }) => payload.position(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdversaryAction {
    /// Broadcast a certificate of the adversary's choosing. The sender's own
    /// database is not touched.
    Broadcast(OwnershipCert),
    /// Send an arbitrary payload to one node.
    Send { to: NodeId, payload: Box<Payload> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversaryStep {
    /// Ticks after injection.
    pub delay: u64,
    pub node: NodeId,
    pub action: AdversaryAction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdversaryScript {
    pub steps: Vec<AdversaryStep>,
}

impl AdversaryScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn broadcast(mut self, delay: u64, node: NodeId, cert: OwnershipCert) -> Self {
        self.steps.push(AdversaryStep { delay, node, action: AdversaryAction::Broadcast(cert) });
        self
    }

    pub fn send(mut self, delay: u64, node: NodeId, to: NodeId, payload: Payload) -> Self {
        self.steps.push(AdversaryStep { delay, node, action: AdversaryAction::Send { to, payload: Box::new(payload) } });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub tick: u64,
    pub seq: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Applied,
    Rejected(Rejection),
    Accepted,
    Refused(WalletReject),
    Ignored,
    Dropped,
    Executed,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Applied => f.write_str("applied"),
            Outcome::Rejected(r) => write!(f, "rejected:{}", r.name()),
            Outcome::Accepted => f.write_str("accepted"),
            Outcome::Refused(r) => write!(f, "refused:{}", r.name()),
            Outcome::Ignored => f.write_str("ignored"),
            Outcome::Dropped => f.write_str("dropped"),
            Outcome::Executed => f.write_str("executed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub tick: u64,
    pub seq: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub kind: &'static str,
    pub note_number: u64,
    pub epoch: u64,
    pub outcome: Outcome,
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {} {} {}",
            self.tick, self.seq, self.from, self.to, self.kind, self.note_number, self.epoch, self.outcome
        )
    }
}

/// A certificate reaching a node's database, by broadcast or local apply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertDelivery {
    pub tick: u64,
    pub node: NodeId,
    pub cert: OwnershipCert,
    pub result: Result<(), Rejection>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuorumConfig {
    pub peers: Vec<NodeId>,
    pub threshold: usize,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub db: CertificateDb,
    pub wallet: WalletState,
    pub adversarial: bool,
    pub quorum: Option<QuorumConfig>,
}

#[derive(Debug, Clone)]
pub struct Sim {
    config: SimConfig,
    nodes: Vec<Node>,
    issuer_node: NodeId,
    issuer: IssuerState,
    queue: BTreeMap<(u64, u64), SimEvent>,
    now: u64,
    next_seq: u64,
    rng: SplitMix64,
    trace: Vec<TraceEntry>,
    deliveries: Vec<CertDelivery>,
}

const WALLET_SEED_LABEL: &str = "owncash/sim-wallet";

impl Sim {
    /// Builds `config.node_count` nodes trusting `issuer`, with the issuer
    /// hosted on `issuer_node`. Wallet seeds derive from `config.seed` and the
    /// node id.
    pub fn new(config: SimConfig, issuer: IssuerState, issuer_node: NodeId, policy: DbPolicy) -> Result<Self, SimError> {
        if config.node_count == 0 {
            return Err(SimError::UnknownNode(0));
        }
        if issuer_node >= config.node_count {
            return Err(SimError::UnknownNode(issuer_node));
        }
        let trusted = issuer.public_key();
        let nodes = (0..config.node_count)
            .map(|id| {
                let mut ctx = config.seed.to_be_bytes().to_vec();
                ctx.extend_from_slice(&(id as u64).to_be_bytes());
                Node {
                    db: CertificateDb::new(trusted, policy),
                    wallet: WalletState::new(trusted, crypto::derive_seed(WALLET_SEED_LABEL, &ctx)),
                    adversarial: false,
                    quorum: None,
                }
            })
            .collect();
        let rng = SplitMix64::new(config.seed);
        Ok(Self {
            config,
            nodes,
            issuer_node,
            issuer,
            queue: BTreeMap::new(),
            now: 0,
            next_seq: 0,
            rng,
            trace: Vec::new(),
            deliveries: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, SimError> {
        self.nodes.get(id).ok_or(SimError::UnknownNode(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut Node, SimError> {
        self.nodes.get_mut(id).ok_or(SimError::UnknownNode(id))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn honest_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| !self.nodes[i].adversarial)
    }

    pub fn issuer(&self) -> &IssuerState {
        &self.issuer
    }

    pub fn issuer_mut(&mut self) -> &mut IssuerState {
        &mut self.issuer
    }

    pub fn issuer_node(&self) -> NodeId {
        self.issuer_node
    }

    pub fn set_adversarial(&mut self, id: NodeId, adversarial: bool) -> Result<(), SimError> {
        self.node_mut(id)?.adversarial = adversarial;
        Ok(())
    }

    pub fn set_quorum(&mut self, id: NodeId, quorum: Option<QuorumConfig>) -> Result<(), SimError> {
        if let Some(q) = &quorum {
            for &p in &q.peers {
                self.node(p)?;
            }
        }
        self.node_mut(id)?.quorum = quorum;
        Ok(())
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for e in &self.trace {
            let _ = writeln!(out, "{e}");
        }
        out
    }

    pub fn deliveries(&self) -> &[CertDelivery] {
        &self.deliveries
    }

    fn seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    fn delivery_tick(&mut self, from: NodeId, to: NodeId) -> Option<u64> {
        match &self.config.delivery {
            DeliveryPolicy::ReliableFifo => Some(self.now + 1),
            DeliveryPolicy::RandomDelay { max_ticks } => {
                let max = (*max_ticks).max(1);
                Some(self.now + 1 + self.rng.next_u64() % max)
            }
            DeliveryPolicy::DropList(links) => (!links.contains(&(from, to))).then_some(self.now + 1),
        }
    }

    fn schedule(&mut self, from: NodeId, to: NodeId, payload: Payload) {
        match self.delivery_tick(from, to) {
            Some(tick) => {
                let seq = self.seq();
                self.queue.insert((tick, seq), SimEvent { tick, seq, from, to, payload });
            }
            None => {
                let seq = self.seq();
                let (note_number, epoch) = payload.position();
                self.trace.push(TraceEntry {
                    tick: self.now,
                    seq,
                    from,
                    to,
                    kind: payload.kind(),
                    note_number,
                    epoch,
                    outcome: Outcome::Dropped,
                });
            }
        }
    }

    /// Schedules one delivery of `cert` to every node other than `from`.
    pub fn broadcast(&mut self, from: NodeId, cert: OwnershipCert) -> Result<(), SimError> {
        self.node(from)?;
        for to in 0..self.nodes.len() {
            if to != from {
                self.schedule(from, to, Payload::Certificate(cert.clone()));
            }
        }
        Ok(())
    }

    /// Applies to the sender's own database, then broadcasts.
    fn announce(&mut self, from: NodeId, cert: OwnershipCert) {
        let seq = self.seq();
        let result = self.apply_at(from, &cert);
        self.trace.push(TraceEntry {
            tick: self.now,
            seq,
            from,
            to: from,
            kind: "local",
            note_number: cert.note_number,
            epoch: cert.epoch,
            outcome: result.map_or_else(Outcome::Rejected, |_| Outcome::Applied),
        });
        self.broadcast(from, cert).expect("sender exists");
    }

    fn apply_at(&mut self, node: NodeId, cert: &OwnershipCert) -> Result<(), Rejection> {
        let n = &mut self.nodes[node];
        let result = n.db.apply_certificate(cert);
        n.wallet.sync(&n.db);
        self.deliveries.push(CertDelivery { tick: self.now, node, cert: cert.clone(), result });
        result
    }

    /// Mints a note at the issuer and sends it, with a genesis certificate
    /// naming the recipient's active key, to node `to`.
    pub fn issue(&mut self, to: NodeId, picture: &[u8], amount_minor: u64, currency: &str) -> Result<u64, SimError> {
        let owner = self.node(to)?.wallet.active_key();
        let (body, _) = self.issuer.mint_note(picture, amount_minor, currency)?;
        let genesis = self.issuer.issue_to(body.note_number, owner)?;
        let note = self.issuer.package(genesis)?;
        self.schedule(self.issuer_node, to, Payload::IssuedNote(note));
        Ok(body.note_number)
    }

    /// Payer side of a transfer: signs a certificate for the payee's active
    /// key and sends the note. Returns what was sent.
    pub fn pay(&mut self, from: NodeId, to: NodeId, note_number: u64) -> Result<Note, SimError> {
        let payee = self.node(to)?.wallet.active_key();
        let node = self.node_mut(from)?;
        let payer = node.db.current_owner(note_number).ok_or(crate::error::WalletError::NotOwnerLocally(note_number))?;
        let note = node.wallet.make_transfer(note_number, payee, &node.db)?;
        self.schedule(from, to, Payload::Payment { note: note.clone(), payer });
        Ok(note)
    }

    /// Moves a held note to a fresh identity of the same node and announces it.
    pub fn rotate(&mut self, node: NodeId, note_number: u64) -> Result<PublicKey, SimError> {
        let n = self.node_mut(node)?;
        let (fresh, note) = n.wallet.rotate_identity(note_number, &n.db)?;
        self.announce(node, note.part_a);
        Ok(fresh)
    }

    /// Schedules each step relative to the current tick. Acting nodes are
    /// marked adversarial.
    pub fn inject_adversary(&mut self, script: AdversaryScript) -> Result<(), SimError> {
        let count = self.nodes.len();
        for step in &script.steps {
            if step.node >= count {
                return Err(SimError::Script(format!("step names unknown node {}", step.node)));
            }
            if let AdversaryAction::Send { to, .. } = &step.action {
                if *to >= count {
                    return Err(SimError::Script(format!("step sends to unknown node {to}")));
                }
            }
        }
        for step in script.steps {
            self.nodes[step.node].adversarial = true;
            let tick = self.now + step.delay;
            let seq = self.seq();
            let event = SimEvent { tick, seq, from: step.node, to: step.node, payload: Payload::Script(step.action) };
            self.queue.insert((tick, seq), event);
        }
        Ok(())
    }

    /// Processes events until none remain. Fails, leaving the rest queued,
    /// if the next event lies beyond `max_ticks`.
    pub fn run_until_quiescent(&mut self) -> Result<u64, SimError> {
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > self.config.max_ticks {
                return Err(SimError::QuiescenceTimeout { max_ticks: self.config.max_ticks, pending: self.queue.len() });
            }
            let event = entry.remove();
            self.now = event.tick;
            self.dispatch(event);
        }
        Ok(self.now)
    }

    fn dispatch(&mut self, event: SimEvent) {
        let SimEvent { tick, seq, from, to, payload } = event;
        let kind = payload.kind();
        let (note_number, epoch) = payload.position();
        let outcome = self.handle(to, payload);
        self.trace.push(TraceEntry { tick, seq, from, to, kind, note_number, epoch, outcome });
    }

    /// Everything a node decides is a function of its own state and `payload`.
    fn handle(&mut self, node: NodeId, payload: Payload) -> Outcome {
        match payload {
            Payload::Certificate(cert) => match self.apply_at(node, &cert) {
                Ok(()) => Outcome::Applied,
                Err(r) => Outcome::Rejected(r),
            },
            Payload::IssuedNote(note) => {
                if self.nodes[node].adversarial {
                    return Outcome::Ignored;
                }
                match self.nodes[node].wallet.receive_issued(note) {
                    Ok(cert) => {
                        self.announce(node, cert);
                        Outcome::Accepted
                    }
                    Err(r) => Outcome::Refused(r),
                }
            }
            Payload::Payment { note, payer } => {
                if self.nodes[node].adversarial {
                    return Outcome::Ignored;
                }
                let peer_dbs: Vec<CertificateDb> = match &self.nodes[node].quorum {
                    Some(q) => q.peers.iter().map(|&p| self.nodes[p].db.clone()).collect(),
                    None => Vec::new(),
                };
                let peer_refs: Vec<&CertificateDb> = peer_dbs.iter().collect();
                let n = &mut self.nodes[node];
                let quorum = n.quorum.as_ref().map(|q| QuorumCheck { peers: &peer_refs, threshold: q.threshold });
                match n.wallet.accept_transfer_checked(note, &payer, &n.db, quorum) {
                    Ok(cert) => {
                        self.announce(node, cert);
                        Outcome::Accepted
                    }
                    Err(r) => Outcome::Refused(r),
                }
            }
            Payload::Script(AdversaryAction::Broadcast(cert)) => {
                self.broadcast(node, cert).expect("validated at injection");
                Outcome::Executed
            }
            Payload::Script(AdversaryAction::Send { to, payload }) => {
                self.schedule(node, to, *payload);
                Outcome::Executed
            }
        }
    }

    /// Every node's database export, in node order.
    pub fn db_exports(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.db.export_db()).collect()
    }
}
