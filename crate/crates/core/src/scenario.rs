//! Named end-to-end scenarios and their verdicts.
//!
//! Every scenario runs on five nodes: node 0 hosts the issuer, nodes 1..=4
//! are users. All keys, pictures and amounts derive from the seed, so a
//! `(name, seed, overrides)` triple fully determines the report and trace.
//!
//! Report format: one `PASS|FAIL <check> <detail>` line per verdict, then
//! for every node an `OWNERS <node>` line followed by that node's database
//! export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::crypto::{self, Digest, KeyPair, PublicKey, Signature};
use crate::db::{CertificateDb, DbPolicy, Rejection};
use crate::error::{ScenarioError, SimError};
use crate::issuer::{audit_issuance, IssuerState};
use crate::note::{verify_genesis, verify_transfer_link, Note, OwnershipCert};
use crate::sim::{AdversaryScript, DeliveryPolicy, NodeId, Outcome, Payload, QuorumConfig, Sim, SimConfig, SplitMix64};
use crate::wallet::WalletReject;

pub const NODE_COUNT: usize = 5;
pub const ISSUER_NODE: NodeId = 0;
pub const FIRST_NOTE_NUMBER: u64 = 12345;
pub const CURRENCY: &str = "EUR";

/// Attempts made by the registered `theft_without_key` scenario.
pub const THEFT_ATTEMPTS: usize = 100;

/// Default quorum threshold for the merchant in `quorum_check_payment`.
pub const DEFAULT_QUORUM_THRESHOLD: usize = 2;

/// Cap used by `over_issuance_audit`.
pub const AUDIT_CAP: u64 = 3;

const U1: NodeId = 1;
const U2: NodeId = 2;
const U3: NodeId = 3;
const U4: NodeId = 4;

type ScenarioFn = fn(&mut Ctx) -> Result<(), Halt>;

const REGISTRY: [(&str, ScenarioFn); 8] = [
    ("honest_issue_and_pay", honest_issue_and_pay),
    ("double_spend", double_spend),
    ("bank_accomplice", bank_accomplice),
    ("theft_without_key", theft_without_key),
    ("replay_old_certificate", replay_old_certificate),
    ("key_rotation", key_rotation),
    ("over_issuance_audit", over_issuance_audit),
    ("quorum_check_payment", quorum_check_payment),
];

pub fn scenario_names() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|(n, _)| *n)
}

/// The policy knobs a run may override.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub require_acceptance: Option<bool>,
    pub retain_history: Option<bool>,
    pub quorum_threshold: Option<usize>,
}

impl Overrides {
    pub const KEYS: [&'static str; 3] = ["require_acceptance", "retain_history", "quorum_threshold"];

    pub fn parse<S: AsRef<str>>(pairs: &[S]) -> Result<Self, ScenarioError> {
        let mut o = Overrides::default();
        for pair in pairs {
            let pair = pair.as_ref();
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| ScenarioError::BadPolicy(format!("`{pair}` is not key=value")))?;
            let as_bool = || match value {
                "true" | "1" | "on" => Ok(true),
                "false" | "0" | "off" => Ok(false),
                _ => Err(ScenarioError::BadPolicy(format!("`{key}` expects true/false, got `{value}`"))),
            };
            match key {
                "require_acceptance" => o.require_acceptance = Some(as_bool()?),
                "retain_history" => o.retain_history = Some(as_bool()?),
                "quorum_threshold" => {
                    o.quorum_threshold = Some(value.parse().map_err(|_| {
                        ScenarioError::BadPolicy(format!("`quorum_threshold` expects a count, got `{value}`"))
                    })?)
                }
                _ => {
                    return Err(ScenarioError::BadPolicy(format!(
                        "unknown key `{key}` (known: {})",
                        Self::KEYS.join(", ")
                    )))
                }
            }
        }
        Ok(o)
    }

    pub fn db_policy(&self) -> DbPolicy {
        DbPolicy {
            require_acceptance_signature: self.require_acceptance.unwrap_or(false),
            retain_history: self.retain_history.unwrap_or(false),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub check: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioReport {
    pub scenario_name: String,
    pub seed: u64,
    pub verdicts: Vec<Verdict>,
    pub final_owners: BTreeMap<NodeId, BTreeMap<u64, PublicKey>>,
    pub db_exports: Vec<String>,
    pub trace: String,
    /// Where [`write_files`](Self::write_files) last put the trace.
    pub trace_path: Option<PathBuf>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        !self.verdicts.is_empty() && self.verdicts.iter().all(|v| v.pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for v in &self.verdicts {
            let _ = writeln!(out, "{} {} {}", if v.pass { "PASS" } else { "FAIL" }, v.check, v.detail);
        }
        for (node, export) in self.db_exports.iter().enumerate() {
            let _ = writeln!(out, "OWNERS {node}");
            out.push_str(export);
        }
        out
    }

    pub fn write_files(&mut self, report: Option<&Path>, trace: Option<&Path>) -> Result<(), ScenarioError> {
        if let Some(path) = report {
            fs::write(path, self.render())?;
        }
        if let Some(path) = trace {
            fs::write(path, &self.trace)?;
            self.trace_path = Some(path.to_path_buf());
        }
        Ok(())
    }
}

/// Why a scenario script stopped early. Already recorded as a verdict.
#[derive(Debug)]
struct Halt;

struct Ctx {
    sim: Sim,
    overrides: Overrides,
    verdicts: Vec<Verdict>,
    rng: SplitMix64,
    seed: u64,
    /// Rejection checks only look at deliveries from this index on.
    mark: usize,
}

impl Ctx {
    fn new(seed: u64, overrides: Overrides, issuer: IssuerState) -> Result<Self, SimError> {
        let sim = Sim::new(SimConfig::reliable(seed, NODE_COUNT), issuer, ISSUER_NODE, overrides.db_policy())?;
        let mut ctx = Ctx { sim, overrides, verdicts: Vec::new(), rng: SplitMix64::new(seed ^ 0x6f77_6e63_6173_6821), seed, mark: 0 };
        if let Some(t) = overrides.quorum_threshold {
            for node in 0..NODE_COUNT {
                ctx.sim.set_quorum(node, Some(QuorumConfig { peers: others(node), threshold: t }))?;
            }
        }
        Ok(ctx)
    }

    fn check(&mut self, check: &str, pass: bool, detail: impl Into<String>) {
        self.verdicts.push(Verdict { check: check.to_string(), pass, detail: detail.into() });
    }

    fn settle(&mut self) -> Result<(), Halt> {
        match self.sim.run_until_quiescent() {
            Ok(_) => Ok(()),
            Err(e) => {
                self.check("quiescence", false, e.to_string());
                Err(Halt)
            }
        }
    }

    /// Records an unexpected simulator error as a failed verdict.
    fn step<T>(&mut self, r: Result<T, SimError>) -> Result<T, Halt> {
        r.map_err(|e| {
            self.check("scenario_script", false, e.to_string());
            Halt
        })
    }

    fn picture(&mut self) -> Vec<u8> {
        let mut p = format!("picture:{}:", self.seed).into_bytes();
        p.extend_from_slice(&self.rng.next_u64().to_be_bytes());
        p
    }

    fn amount(&mut self) -> u64 {
        100 * (1 + self.rng.next_u64() % 50)
    }

    fn issue(&mut self, to: NodeId) -> Result<u64, Halt> {
        let picture = self.picture();
        let amount = self.amount();
        let r = self.sim.issue(to, &picture, amount, CURRENCY);
        self.step(r)
    }

    fn key(&self, node: NodeId) -> PublicKey {
        self.sim.nodes()[node].wallet.active_key()
    }

    fn adversary_key(&self, label: &str) -> KeyPair {
        let mut ctx = self.seed.to_be_bytes().to_vec();
        ctx.extend_from_slice(label.as_bytes());
        KeyPair::from_seed(&crypto::derive_seed("owncash/scenario-adversary", &ctx))
    }

    /// Payer signs a transfer without sending it, so it can be delivered
    /// later (or twice).
    fn sign_transfer(&mut self, from: NodeId, to: NodeId, n: u64) -> Result<Note, Halt> {
        let payee = self.key(to);
        let r = {
            let node = self.sim.node_mut(from).expect("scenario node");
            node.wallet.make_transfer(n, payee, &node.db).map_err(SimError::from)
        };
        self.step(r)
    }

    fn honest(&self) -> Vec<NodeId> {
        self.sim.honest_nodes().collect()
    }

    fn owners_agree(&self, nodes: &[NodeId], n: u64, owner: &PublicKey) -> usize {
        nodes
            .iter()
            .filter(|&&i| self.sim.nodes()[i].db.current_owner(n).as_ref() == Some(owner))
            .count()
    }

    fn check_owner(&mut self, check: &str, nodes: &[NodeId], n: u64, owner: PublicKey) {
        let agree = self.owners_agree(nodes, n, &owner);
        self.check(check, agree == nodes.len() && !nodes.is_empty(), format!("note={n} agreeing={agree}/{}", nodes.len()));
    }

    /// Outcomes of `cert` arriving at each of `nodes`, by broadcast or local apply.
    fn outcomes_for(&self, cert: &OwnershipCert, nodes: &[NodeId], since: usize) -> Vec<(NodeId, Result<(), Rejection>)> {
        let digest = cert.digest();
        self.sim.deliveries()[since..]
            .iter()
            .filter(|d| nodes.contains(&d.node) && d.cert.digest() == digest)
            .map(|d| (d.node, d.result))
            .collect()
    }

    fn check_applied_everywhere(&mut self, check: &str, cert: &OwnershipCert, nodes: &[NodeId]) {
        let outcomes = self.outcomes_for(cert, nodes, 0);
        let applied: Vec<NodeId> = outcomes.iter().filter(|(_, r)| r.is_ok()).map(|(n, _)| *n).collect();
        let each_once = nodes.iter().all(|n| applied.iter().filter(|a| *a == n).count() == 1);
        self.check(check, each_once, format!("applied_at={}/{}", applied.len(), nodes.len()));
    }

    /// Every node in `nodes` received `cert` at least once and rejected it
    /// every time, for one of `reasons`.
    fn check_rejected_everywhere(&mut self, check: &str, cert: &OwnershipCert, nodes: &[NodeId], reasons: &[Rejection]) {
        let outcomes = self.outcomes_for(cert, nodes, self.mark);
        let all_received = nodes.iter().all(|n| outcomes.iter().any(|(m, _)| m == n));
        let bad: Vec<String> = outcomes
            .iter()
            .filter(|(_, r)| !matches!(r, Err(x) if reasons.contains(x)))
            .map(|(n, r)| format!("{n}:{}", r.map_or_else(|e| e.name().to_string(), |_| "applied".into())))
            .collect();
        let mut reasons_seen: Vec<&str> = outcomes.iter().filter_map(|(_, r)| r.err().map(|e| e.name())).collect();
        reasons_seen.sort();
        reasons_seen.dedup();
        self.check(
            check,
            all_received && bad.is_empty(),
            format!(
                "rejected_at={}/{} reasons={} unexpected=[{}]",
                outcomes.len() - bad.len(),
                nodes.len(),
                reasons_seen.join(","),
                bad.join(",")
            ),
        );
    }

    fn wallet_outcome(&self, node: NodeId, kind: &str, n: u64, epoch: u64) -> Option<&Outcome> {
        self.sim
            .trace()
            .iter()
            .rev()
            .find(|e| e.to == node && e.kind == kind && e.note_number == n && e.epoch == epoch)
            .map(|e| &e.outcome)
    }

    fn check_refused(&mut self, check: &str, node: NodeId, n: u64, epoch: u64, reason: WalletReject) {
        let got = self.wallet_outcome(node, "pay", n, epoch).cloned();
        let detail = match &got {
            Some(o) => format!("node={node} outcome={o}"),
            None => format!("node={node} outcome=none"),
        };
        self.check(check, got == Some(Outcome::Refused(reason)), detail);
    }

    fn check_holdings_coherent(&mut self) {
        let mut incoherent = 0;
        let mut total = 0;
        for i in self.honest() {
            let node = &self.sim.nodes()[i];
            for (n, note) in node.wallet.holdings() {
                total += 1;
                if node.db.current(*n) != Some(&note.part_a) {
                    incoherent += 1;
                }
            }
        }
        self.check("holdings_coherent", incoherent == 0, format!("holdings={total} incoherent={incoherent}"));
    }

    fn check_chains_valid(&mut self) {
        let issuer = self.sim.issuer().public_key();
        let mut broken = 0;
        let mut links = 0;
        for i in self.honest() {
            for (_, record) in self.sim.nodes()[i].db.records() {
                let chain = record.chain();
                if !verify_genesis(chain[0], &issuer) {
                    broken += 1;
                }
                for w in chain.windows(2) {
                    // Without history the chain is genesis + current and may skip epochs.
                    if w[1].epoch == w[0].epoch + 1 {
                        links += 1;
                        if !verify_transfer_link(w[0], w[1]) {
                            broken += 1;
                        }
                    }
                }
            }
        }
        self.check("chain_links_valid", broken == 0, format!("links={links} broken={broken}"));
    }

    /// With history on, replaying each stored chain into an empty database
    /// must reproduce the stored record.
    fn check_history_replay(&mut self) {
        if !self.overrides.db_policy().retain_history {
            return;
        }
        let mut mismatched = 0;
        let mut records = 0;
        for node in self.sim.nodes() {
            for (n, record) in node.db.records() {
                records += 1;
                let mut fresh = CertificateDb::new(node.db.trusted_issuer(), node.db.policy());
                let replay_ok = record.chain().into_iter().all(|c| fresh.apply_certificate(c).is_ok());
                if !replay_ok || fresh.record(n) != Some(record) {
                    mismatched += 1;
                }
            }
        }
        self.check("history_replay_matches", mismatched == 0, format!("records={records} mismatched={mismatched}"));
    }

    fn finish(mut self, name: &str) -> ScenarioReport {
        self.check_history_replay();
        let final_owners = self
            .sim
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, node)| (i, node.db.records().map(|(n, r)| (n, r.current.owner_public_key)).collect()))
            .collect();
        ScenarioReport {
            scenario_name: name.to_string(),
            seed: self.seed,
            verdicts: self.verdicts,
            final_owners,
            db_exports: self.sim.db_exports(),
            trace: self.sim.trace_text(),
            trace_path: None,
        }
    }
}

fn others(node: NodeId) -> Vec<NodeId> {
    (0..NODE_COUNT).filter(|&i| i != node).collect()
}

fn issuer_keypair(seed: u64) -> KeyPair {
    KeyPair::from_seed(&crypto::derive_seed("owncash/scenario-issuer", &seed.to_be_bytes()))
}

fn unsigned_cert(n: u64, epoch: u64, owner: PublicKey, prev: Digest) -> OwnershipCert {
    OwnershipCert {
        note_number: n,
        epoch,
        owner_public_key: owner,
        prev_cert_digest: prev,
        transfer_signature: Signature([0; 64]),
        acceptance_signature: None,
    }
}

fn signed_cert(n: u64, epoch: u64, owner: &KeyPair, prev: Digest, signer: &KeyPair) -> OwnershipCert {
    let mut c = unsigned_cert(n, epoch, owner.public_key(), prev);
    c.transfer_signature = crypto::sign(&c.statement(), signer);
    c.acceptance_signature = Some(crypto::sign(&c.statement(), owner));
    c
}

pub fn run_scenario(name: &str, seed: u64, overrides: &Overrides) -> Result<ScenarioReport, ScenarioError> {
    let (name, f) = REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ScenarioError::UnknownScenario(name.to_string()))?;
    let issuer = match *name {
        "bank_accomplice" | "over_issuance_audit" => {
            IssuerState::dishonest(issuer_keypair(seed), FIRST_NOTE_NUMBER).with_cap(AUDIT_CAP)
        }
        _ => IssuerState::with_first_note_number(issuer_keypair(seed), FIRST_NOTE_NUMBER),
    };
    let mut overrides = *overrides;
    // Audits keep full history unless told otherwise.
    if *name == "over_issuance_audit" && overrides.retain_history.is_none() {
        overrides.retain_history = Some(true);
    }
    let mut ctx = Ctx::new(seed, overrides, issuer)?;
    // A halted script has already recorded its failing verdict.
    let _ = f(&mut ctx);
    Ok(ctx.finish(name))
}

/// Issue to U1, U1 pays U2.
fn honest_issue_and_pay(ctx: &mut Ctx) -> Result<(), Halt> {
    let n = ctx.issue(U1)?;
    ctx.settle()?;
    let all: Vec<NodeId> = (0..NODE_COUNT).collect();
    let genesis = ctx.sim.nodes()[U1].db.current(n).cloned();
    match genesis {
        Some(g) => ctx.check_applied_everywhere("genesis_applied_everywhere", &g, &all),
        None => ctx.check("genesis_applied_everywhere", false, "first owner has no record"),
    }

    let r = ctx.sim.pay(U1, U2, n);
    let sent = ctx.step(r)?;
    ctx.settle()?;
    let accepted = ctx.wallet_outcome(U2, "pay", n, 1) == Some(&Outcome::Accepted);
    ctx.check("payment_accepted", accepted, format!("note={n} epoch=1"));
    let paid = ctx.sim.nodes()[U2].db.current(n).cloned().unwrap_or_else(|| sent.part_a.clone());
    ctx.check_applied_everywhere("transfer_applied_everywhere", &paid, &all);
    let payee = ctx.key(U2);
    ctx.check_owner("all_nodes_agree_owner", &all, n, payee);
    let released = ctx.sim.nodes()[U1].wallet.holding(n).is_none();
    ctx.check("payer_released_note", released, format!("note={n}"));

    let issued = &ctx.sim.issuer().issued()[&n];
    let frozen = ctx.sim.nodes()[U2]
        .wallet
        .holding(n)
        .is_some_and(|h| h.part_b == issued.body && h.part_c == issued.authenticity);
    ctx.check("frozen_parts_unchanged", frozen, format!("note={n}"));
    ctx.check_holdings_coherent();
    ctx.check_chains_valid();
    Ok(())
}

/// U1 signs the same note over to U2 and U3. U2 settles first; U1 then
/// pushes the U3 certificate to U3 and to the whole network.
fn double_spend(ctx: &mut Ctx) -> Result<(), Halt> {
    let n = ctx.issue(U1)?;
    ctx.settle()?;
    let payer = ctx.key(U1);
    let to_u2 = ctx.sign_transfer(U1, U2, n)?;
    let to_u3 = ctx.sign_transfer(U1, U3, n)?;
    let same_position = to_u2.part_a.epoch == to_u3.part_a.epoch && to_u2.part_a.prev_cert_digest == to_u3.part_a.prev_cert_digest;
    ctx.check("conflicting_certificates_signed", same_position, format!("note={n} epoch={}", to_u2.part_a.epoch));

    let script = AdversaryScript::new().send(0, U1, U2, Payload::Payment { note: to_u2.clone(), payer });
    let r = ctx.sim.inject_adversary(script);
    ctx.step(r)?;
    ctx.settle()?;

    // The order of the two follow-up moves varies with the seed.
    let pay = Payload::Payment { note: to_u3.clone(), payer };
    let script = if ctx.rng.next_u64() % 2 == 0 {
        AdversaryScript::new().send(1, U1, U3, pay).broadcast(2, U1, to_u3.part_a.clone())
    } else {
        AdversaryScript::new().broadcast(1, U1, to_u3.part_a.clone()).send(2, U1, U3, pay)
    };
    let r = ctx.sim.inject_adversary(script);
    ctx.step(r)?;
    ctx.settle()?;

    let honest = ctx.honest();
    let first = ctx.sim.nodes()[U2].db.current(n).cloned().unwrap_or_else(|| to_u2.part_a.clone());
    ctx.check_applied_everywhere("first_payee_applied_everywhere", &first, &honest);
    ctx.check_rejected_everywhere(
        "competitor_rejected_everywhere",
        &to_u3.part_a,
        &honest,
        &[Rejection::EpochMismatch, Rejection::NotSignedByCurrentOwner],
    );
    ctx.check_refused("second_merchant_refused", U3, n, 1, WalletReject::PayerNotCurrentOwner);
    let first_payee = ctx.key(U2);
    ctx.check_owner("zero_divergence", &honest, n, first_payee);
    Ok(())
}

/// A dishonest issuer signs a second genesis for an issued note to an
/// accomplice, who broadcasts it, tries to spend it, and tries to pin a
/// transfer on the legitimate owner.
fn bank_accomplice(ctx: &mut Ctx) -> Result<(), Halt> {
    let accomplice_node = U2;
    let r = ctx.sim.set_adversarial(ISSUER_NODE, true).and_then(|_| ctx.sim.set_adversarial(accomplice_node, true));
    ctx.step(r)?;
    let accomplice = ctx.adversary_key("accomplice");

    let n = ctx.issue(U1)?;
    ctx.settle()?;
    let victim = ctx.key(U1);
    let honest = ctx.honest();
    ctx.check_owner("first_genesis_settled", &honest, n, victim);

    let r = ctx.sim.issuer_mut().issue_to(n, accomplice.public_key()).map_err(SimError::from);
    let mut dup = ctx.step(r)?;
    dup.acceptance_signature = Some(crypto::sign(&dup.statement(), &accomplice));
    let dup_note = {
        let r = ctx.sim.issuer().package(dup.clone()).map_err(SimError::from);
        ctx.step(r)?
    };

    // Accomplice spends its copy, and the bank signs a transfer "from" the
    // victim to the accomplice.
    let spend = signed_cert(n, 1, &ctx.adversary_key("accomplice-payee"), dup.digest(), &accomplice);
    let mut spend_note = dup_note.clone();
    spend_note.part_a = unsigned_cert(n, 1, ctx.key(U3), dup.digest());
    spend_note.part_a.transfer_signature = crypto::sign(&spend_note.part_a.statement(), &accomplice);
    let victim_genesis = ctx.sim.nodes()[U1].db.current(n).cloned().expect("settled above");
    let bank_key = issuer_keypair(ctx.seed);
    let frame = signed_cert(n, 1, &accomplice, victim_genesis.digest(), &bank_key);

    let script = AdversaryScript::new()
        .broadcast(1, accomplice_node, dup.clone())
        .send(2, accomplice_node, U3, Payload::Payment { note: spend_note, payer: accomplice.public_key() })
        .broadcast(3, accomplice_node, spend.clone())
        .broadcast(4, ISSUER_NODE, frame.clone());
    let r = ctx.sim.inject_adversary(script);
    ctx.step(r)?;
    ctx.settle()?;

    // Nodes that held the first genesis when the duplicate arrived.
    let holders: Vec<NodeId> = (0..NODE_COUNT)
        .filter(|&i| i != accomplice_node && ctx.sim.nodes()[i].db.record(n).is_some_and(|r| r.genesis == victim_genesis))
        .collect();
    ctx.check_rejected_everywhere("accomplice_genesis_rejected", &dup, &holders, &[Rejection::DuplicateGenesis]);
    ctx.check_refused("accomplice_spend_refused", U3, n, 1, WalletReject::PayerNotCurrentOwner);
    ctx.check_rejected_everywhere(
        "accomplice_transfer_rejected",
        &spend,
        &honest,
        &[Rejection::BadPrevDigest, Rejection::NotSignedByCurrentOwner],
    );
    ctx.check_rejected_everywhere("frame_transfer_rejected", &frame, &honest, &[Rejection::NotSignedByCurrentOwner]);

    // Exculpability: nothing signed under the victim's keys reached an honest
    // node unless the victim actually signed it.
    let victim_wallet = &ctx.sim.nodes()[U1].wallet;
    let victim_keys: Vec<PublicKey> = victim_wallet.identity_keys().collect();
    let signed = victim_wallet.signed_transfers().clone();
    let attributed: Vec<&OwnershipCert> = ctx
        .sim
        .deliveries()
        .iter()
        .filter(|d| honest.contains(&d.node) && d.cert.epoch > 0)
        .map(|d| &d.cert)
        .filter(|c| victim_keys.iter().any(|k| c.transfer_signed_by(k)))
        .collect();
    let framed = attributed.iter().filter(|c| !signed.contains(&c.digest())).count();
    ctx.check("no_frame_of_honest_owner", framed == 0, format!("attributed={} unsigned_by_owner={framed}", attributed.len()));
    ctx.check_owner("owner_unchanged", &honest, n, victim);
    Ok(())
}

/// Kinds of transfer an attacker holding a full note copy, but not the
/// owner's private key, can attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheftKind {
    /// Transfer to the thief, signed with the thief's own key.
    SelfSigned,
    /// Genesis re-pointed at the thief, keeping the issuer's signature.
    RewrittenGenesis,
    /// Transfer with a random previous-certificate digest.
    RandomPrev,
    /// Stolen note presented to a merchant, claiming to be the owner.
    PoseAsOwner,
    /// The stolen genesis rebroadcast verbatim.
    ReplayGenesis,
}

impl TheftKind {
    const ALL: [TheftKind; 5] =
        [TheftKind::SelfSigned, TheftKind::RewrittenGenesis, TheftKind::RandomPrev, TheftKind::PoseAsOwner, TheftKind::ReplayGenesis];
}

/// Result of [`theft_campaign`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TheftOutcome {
    pub attempts: usize,
    pub broadcast_certs: usize,
    pub applied_anywhere: usize,
    pub merchant_payments: usize,
    pub merchant_accepted: usize,
    pub report: ScenarioReport,
}

#[derive(Debug, Default)]
struct TheftStats {
    broadcast_certs: usize,
    applied: usize,
    merchant_payments: usize,
    merchant_accepted: usize,
}

/// Runs `theft_without_key` with a chosen number of attempts.
pub fn theft_campaign(seed: u64, overrides: &Overrides, attempts: usize) -> Result<TheftOutcome, ScenarioError> {
    let issuer = IssuerState::with_first_note_number(issuer_keypair(seed), FIRST_NOTE_NUMBER);
    let mut ctx = Ctx::new(seed, *overrides, issuer)?;
    let mut stats = TheftStats::default();
    let _ = theft_run(&mut ctx, attempts, &mut stats);
    Ok(TheftOutcome {
        attempts,
        broadcast_certs: stats.broadcast_certs,
        applied_anywhere: stats.applied,
        merchant_payments: stats.merchant_payments,
        merchant_accepted: stats.merchant_accepted,
        report: ctx.finish("theft_without_key"),
    })
}

fn theft_without_key(ctx: &mut Ctx) -> Result<(), Halt> {
    theft_run(ctx, THEFT_ATTEMPTS, &mut TheftStats::default())
}

fn theft_run(ctx: &mut Ctx, attempts: usize, stats: &mut TheftStats) -> Result<(), Halt> {
    let thief_node = U4;
    let r = ctx.sim.set_adversarial(thief_node, true);
    ctx.step(r)?;
    let n = ctx.issue(U1)?;
    ctx.settle()?;
    let owner = ctx.key(U1);
    let stolen = ctx.sim.nodes()[U1].wallet.holding(n).cloned().expect("owner holds note");
    let genesis = stolen.part_a.clone();
    let thief = ctx.adversary_key("thief");

    let mut script = AdversaryScript::new();
    let mut forged = std::collections::BTreeSet::new();
    for i in 0..attempts {
        let delay = 1 + i as u64;
        let kind = TheftKind::ALL[(ctx.rng.next_u64() % TheftKind::ALL.len() as u64) as usize];
        let cert = match kind {
            TheftKind::SelfSigned => signed_cert(n, 1, &thief, genesis.digest(), &thief),
            TheftKind::RewrittenGenesis => {
                let mut c = genesis.clone();
                c.owner_public_key = thief.public_key();
                c.acceptance_signature = Some(crypto::sign(&c.statement(), &thief));
                c
            }
            TheftKind::RandomPrev => {
                let mut prev = [0u8; 32];
                for chunk in prev.chunks_mut(8) {
                    chunk.copy_from_slice(&ctx.rng.next_u64().to_be_bytes());
                }
                signed_cert(n, 1, &thief, Digest(prev), &thief)
            }
            TheftKind::PoseAsOwner => {
                let merchant = if ctx.rng.next_u64() % 2 == 0 { U2 } else { U3 };
                let mut note = stolen.clone();
                note.part_a = unsigned_cert(n, 1, ctx.key(merchant), genesis.digest());
                note.part_a.transfer_signature = crypto::sign(&note.part_a.statement(), &thief);
                script = script.send(delay, thief_node, merchant, Payload::Payment { note, payer: owner });
                stats.merchant_payments += 1;
                continue;
            }
            TheftKind::ReplayGenesis => genesis.clone(),
        };
        forged.insert(cert.digest());
        script = script.broadcast(delay, thief_node, cert);
        stats.broadcast_certs += 1;
    }
    let deliveries_before = ctx.sim.deliveries().len();
    let trace_before = ctx.sim.trace().len();
    let r = ctx.sim.inject_adversary(script);
    ctx.step(r)?;
    ctx.settle()?;

    stats.applied = ctx.sim.deliveries()[deliveries_before..]
        .iter()
        .filter(|d| d.result.is_ok() && forged.contains(&d.cert.digest()))
        .count();
    ctx.check(
        "no_forged_transfer_applied",
        stats.applied == 0,
        format!("broadcast_attempts={} applied={}", stats.broadcast_certs, stats.applied),
    );
    let merchant_results: Vec<&Outcome> = ctx.sim.trace()[trace_before..]
        .iter()
        .filter(|e| e.kind == "pay" && e.from == thief_node)
        .map(|e| &e.outcome)
        .collect();
    stats.merchant_accepted = merchant_results.iter().filter(|o| ***o == Outcome::Accepted).count();
    let refused = merchant_results
        .iter()
        .filter(|o| matches!(o, Outcome::Refused(WalletReject::BadChainLink)))
        .count();
    ctx.check(
        "merchants_refused_stolen_note",
        refused == merchant_results.len() && merchant_results.len() == stats.merchant_payments,
        format!("payments={} refused_bad_link={refused}", merchant_results.len()),
    );
    let honest = ctx.honest();
    ctx.check_owner("owner_unchanged", &honest, n, owner);

    // The real owner can still spend.
    let r = ctx.sim.pay(U1, U2, n);
    ctx.step(r)?;
    ctx.settle()?;
    let payee = ctx.key(U2);
    ctx.check_owner("owner_can_still_spend", &honest, n, payee);
    Ok(())
}

/// Chain U1 -> U2 -> U1, then an observer rebroadcasts the first U1 -> U2
/// certificate.
fn replay_old_certificate(ctx: &mut Ctx) -> Result<(), Halt> {
    let observer = U4;
    let n = ctx.issue(U1)?;
    ctx.settle()?;
    let r = ctx.sim.pay(U1, U2, n);
    ctx.step(r)?;
    ctx.settle()?;
    let first_transfer = ctx.sim.nodes()[observer].db.current(n).cloned().expect("settled transfer");
    let r = ctx.sim.pay(U2, U1, n);
    ctx.step(r)?;
    ctx.settle()?;

    let epoch = ctx.sim.nodes()[U1].db.current(n).map_or(0, |c| c.epoch);
    ctx.check("chain_advanced", epoch == 2, format!("note={n} epoch={epoch}"));
    let replayed_genesis = ctx.sim.nodes()[observer].db.record(n).map(|r| r.genesis.clone()).expect("settled");

    ctx.mark = ctx.sim.deliveries().len();
    let script = AdversaryScript::new().broadcast(1, observer, first_transfer.clone()).broadcast(2, observer, replayed_genesis.clone());
    let r = ctx.sim.inject_adversary(script);
    ctx.step(r)?;
    ctx.settle()?;

    let honest = ctx.honest();
    ctx.check_rejected_everywhere("replay_rejected_everywhere", &first_transfer, &honest, &[Rejection::EpochMismatch]);
    let after_replay: Vec<(NodeId, Result<(), Rejection>)> = ctx
        .outcomes_for(&replayed_genesis, &honest, ctx.mark)
        .into_iter()
        .filter(|(_, r)| *r == Err(Rejection::DuplicateGenesis))
        .collect();
    ctx.check(
        "genesis_replay_rejected",
        after_replay.len() == honest.len(),
        format!("rejected_at={}/{}", after_replay.len(), honest.len()),
    );
    let owner = ctx.key(U1);
    ctx.check_owner("owner_unchanged", &honest, n, owner);
    ctx.check_chains_valid();
    Ok(())
}

/// The owner moves the note to fresh keys one to three times, then spends
/// from the newest key.
fn key_rotation(ctx: &mut Ctx) -> Result<(), Halt> {
    let n = ctx.issue(U1)?;
    ctx.settle()?;
    let rotations = 1 + (ctx.rng.next_u64() % 3);
    let mut previous: Vec<PublicKey> = vec![ctx.key(U1)];
    let mut fresh = ctx.key(U1);
    for _ in 0..rotations {
        let r = ctx.sim.rotate(U1, n);
        fresh = ctx.step(r)?;
        ctx.settle()?;
        previous.push(fresh);
    }
    previous.pop();

    let all: Vec<NodeId> = (0..NODE_COUNT).collect();
    ctx.check_owner("fresh_key_owns_everywhere", &all, n, fresh);
    let current = ctx.sim.nodes()[U2].db.current(n).cloned();
    let epoch = current.as_ref().map_or(0, |c| c.epoch);
    ctx.check("epoch_advanced", epoch == rotations, format!("rotations={rotations} epoch={epoch}"));
    let leaks = current.as_ref().map_or(1, |c| {
        let statement = c.statement();
        previous
            .iter()
            .filter(|k| c.owner_public_key == **k || statement.windows(32).any(|w| w == k.as_bytes()))
            .count()
    });
    ctx.check("prior_keys_absent_from_current_cert", leaks == 0 && current.is_some(), format!("prior_identities={} found={leaks}", previous.len()));
    let keys: Vec<PublicKey> = ctx.sim.nodes()[U1].wallet.identity_keys().collect();
    let mut unique = keys.clone();
    unique.sort();
    unique.dedup();
    ctx.check("identity_keys_distinct", unique.len() == keys.len(), format!("identities={}", keys.len()));
    ctx.check_holdings_coherent();

    let r = ctx.sim.pay(U1, U3, n);
    ctx.step(r)?;
    ctx.settle()?;
    let payee = ctx.key(U3);
    ctx.check_owner("fresh_identity_can_spend", &all, n, payee);
    ctx.check_chains_valid();
    Ok(())
}

/// A capped issuer mints one note more than allowed; every node's audit
/// notices.
fn over_issuance_audit(ctx: &mut Ctx) -> Result<(), Halt> {
    let r = ctx.sim.set_adversarial(ISSUER_NODE, true);
    ctx.step(r)?;
    let issuer = ctx.sim.issuer().public_key();
    let users = [U1, U2, U3, U4];
    for i in 0..AUDIT_CAP as usize {
        ctx.issue(users[i % users.len()])?;
    }
    ctx.settle()?;
    let honest = ctx.honest();
    let within: Vec<bool> = honest
        .iter()
        .map(|&i| {
            let a = audit_issuance(&ctx.sim.nodes()[i].db, &issuer, AUDIT_CAP);
            a.count == AUDIT_CAP && !a.over_cap
        })
        .collect();
    ctx.check(
        "audit_within_cap_before",
        within.iter().all(|b| *b),
        format!("cap={AUDIT_CAP} nodes_ok={}/{}", within.iter().filter(|b| **b).count(), honest.len()),
    );

    ctx.issue(users[AUDIT_CAP as usize % users.len()])?;
    ctx.settle()?;
    let mut flagged = 0;
    let mut exact = 0;
    for &i in &honest {
        let a = audit_issuance(&ctx.sim.nodes()[i].db, &issuer, AUDIT_CAP);
        if a.over_cap {
            flagged += 1;
        }
        // Recount from the node's applied genesis deliveries.
        let mut recount: Vec<u64> = ctx
            .sim
            .deliveries()
            .iter()
            .filter(|d| d.node == i && d.result.is_ok() && d.cert.epoch == 0 && d.cert.transfer_signed_by(&issuer))
            .map(|d| d.cert.note_number)
            .collect();
        recount.sort();
        recount.dedup();
        if recount == a.note_numbers && a.count == recount.len() as u64 {
            exact += 1;
        }
    }
    ctx.check("audit_flags_over_cap", flagged == honest.len(), format!("cap={AUDIT_CAP} flagged={flagged}/{}", honest.len()));
    ctx.check("audit_count_exact", exact == honest.len(), format!("issued={} exact={exact}/{}", AUDIT_CAP + 1, honest.len()));

    let mut honest_issuer = IssuerState::new(issuer_keypair(ctx.seed)).with_cap(AUDIT_CAP);
    let mut minted = 0;
    while honest_issuer.mint_note(b"p", 100, CURRENCY).is_ok() {
        minted += 1;
        if minted > AUDIT_CAP {
            break;
        }
    }
    ctx.check("honest_issuer_stops_at_cap", minted == AUDIT_CAP, format!("minted={minted} cap={AUDIT_CAP}"));
    Ok(())
}

/// The merchant's database is rolled back to a stale snapshot, so locally a
/// double spend looks valid; consulting peer databases exposes it.
fn quorum_check_payment(ctx: &mut Ctx) -> Result<(), Halt> {
    let merchant = U3;
    let n = ctx.issue(U1)?;
    ctx.settle()?;
    let snapshot = ctx.sim.nodes()[merchant].db.export_db();
    let payer = ctx.key(U1);
    let to_u2 = ctx.sign_transfer(U1, U2, n)?;
    let to_u3 = ctx.sign_transfer(U1, U3, n)?;
    let script = AdversaryScript::new().send(0, U1, U2, Payload::Payment { note: to_u2, payer });
    let r = ctx.sim.inject_adversary(script);
    ctx.step(r)?;
    ctx.settle()?;

    let (issuer, policy) = {
        let db = &ctx.sim.nodes()[merchant].db;
        (db.trusted_issuer(), db.policy())
    };
    let stale = CertificateDb::import_db(&snapshot, issuer, policy).expect("own export parses");
    ctx.sim.node_mut(merchant).expect("merchant").db = stale;
    let stale_owner = ctx.sim.nodes()[merchant].db.current_owner(n) == Some(payer);
    ctx.check("tampered_db_shows_stale_owner", stale_owner, format!("node={merchant} note={n}"));

    let local_only = {
        let node = &ctx.sim.nodes()[merchant];
        node.wallet.clone().accept_transfer(to_u3.clone(), &payer, &node.db).is_ok()
    };
    ctx.check("local_check_alone_would_accept", local_only, format!("node={merchant}"));

    let threshold = ctx.overrides.quorum_threshold.unwrap_or(DEFAULT_QUORUM_THRESHOLD);
    let r = ctx.sim.set_quorum(merchant, Some(QuorumConfig { peers: others(merchant), threshold }));
    ctx.step(r)?;
    let script = AdversaryScript::new().send(1, U1, merchant, Payload::Payment { note: to_u3.clone(), payer });
    let r = ctx.sim.inject_adversary(script);
    ctx.step(r)?;
    ctx.settle()?;

    ctx.check_refused("merchant_refused_via_quorum", merchant, n, 1, WalletReject::QuorumDisagreement);
    let honest: Vec<NodeId> = ctx.honest().into_iter().filter(|&i| i != merchant).collect();
    let applied_anywhere = ctx.outcomes_for(&to_u3.part_a, &(0..NODE_COUNT).collect::<Vec<_>>(), 0).iter().filter(|(_, r)| r.is_ok()).count();
    ctx.check("double_spend_never_applied", applied_anywhere == 0, format!("applied={applied_anywhere}"));
    let first_payee = ctx.key(U2);
    ctx.check_owner("peers_keep_first_payee", &honest, n, first_payee);
    let holds = ctx.sim.nodes()[merchant].wallet.holding(n).is_some();
    ctx.check("merchant_holds_nothing", !holds, format!("node={merchant}"));
    Ok(())
}

/// Informational only: how far honest views drift when two payees of the
/// same note accept concurrently under random delays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DivergenceStats {
    pub honest_nodes: usize,
    pub distinct_owner_views: usize,
    pub nodes_with_second_payee: usize,
}

pub fn double_spend_divergence(seed: u64, max_delay: u64) -> Result<DivergenceStats, ScenarioError> {
    let issuer = IssuerState::with_first_note_number(issuer_keypair(seed), FIRST_NOTE_NUMBER);
    let mut config = SimConfig::reliable(seed, NODE_COUNT);
    config.delivery = DeliveryPolicy::RandomDelay { max_ticks: max_delay };
    let mut sim = Sim::new(config, issuer, ISSUER_NODE, DbPolicy::default())?;
    let n = sim.issue(U1, b"divergence", 100, CURRENCY)?;
    sim.run_until_quiescent()?;
    let payer = sim.node(U1)?.wallet.active_key();
    let mut notes = Vec::new();
    for payee in [U2, U3] {
        let key = sim.node(payee)?.wallet.active_key();
        let node = sim.node_mut(U1)?;
        notes.push((payee, node.wallet.make_transfer(n, key, &node.db).map_err(SimError::from)?));
    }
    let mut script = AdversaryScript::new();
    for (payee, note) in notes {
        script = script.send(0, U1, payee, Payload::Payment { note, payer });
    }
    sim.inject_adversary(script)?;
    sim.run_until_quiescent()?;

    let honest: Vec<NodeId> = sim.honest_nodes().collect();
    let mut views: Vec<Option<PublicKey>> = honest.iter().map(|&i| sim.nodes()[i].db.current_owner(n)).collect();
    let second = sim.node(U3)?.wallet.active_key();
    let nodes_with_second_payee = views.iter().filter(|v| **v == Some(second)).count();
    views.sort();
    views.dedup();
    Ok(DivergenceStats { honest_nodes: honest.len(), distinct_owner_views: views.len(), nodes_with_second_payee })
}
