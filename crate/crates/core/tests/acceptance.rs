//! Acceptance suite. Prints one `PASS|FAIL` line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::panic;
use std::time::{Duration, Instant};

use owncash::crypto::{self, generate_keypair, Digest, KeyPair, PublicKey, Signature};
use owncash::db::{CertificateDb, DbPolicy, EXPORT_HEADER};
use owncash::note::{encode_note_body, encode_ownership_statement, Currency, NoteBody, OwnershipCert};
use owncash::scenario::{run_scenario, scenario_names, theft_campaign, Overrides, ScenarioReport};
use owncash::sim::{AdversaryScript, Sim, SimConfig, SplitMix64};
use owncash::{audit_issuance, IssuerState};

const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fresh_key(rng: &mut SplitMix64) -> KeyPair {
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&rng.next_u64().to_be_bytes());
    }
    KeyPair::from_seed(&seed)
}

fn random_bytes<const N: usize>(rng: &mut SplitMix64) -> [u8; N] {
    let mut out = [0u8; N];
    for chunk in out.chunks_mut(8) {
        let word = rng.next_u64().to_be_bytes();
        chunk.copy_from_slice(&word[..chunk.len()]);
    }
    out
}

fn cert(n: u64, epoch: u64, owner: PublicKey, prev: Digest, signer: &KeyPair) -> OwnershipCert {
    let mut c = OwnershipCert {
        note_number: n,
        epoch,
        owner_public_key: owner,
        prev_cert_digest: prev,
        transfer_signature: Signature([0; 64]),
        acceptance_signature: None,
    };
    c.transfer_signature = crypto::sign(&c.statement(), signer);
    c
}

fn scenario(name: &str, seed: u64, overrides: &Overrides) -> Result<ScenarioReport, String> {
    run_scenario(name, seed, overrides).map_err(|e| format!("{name} seed {seed}: {e}"))
}

fn failing_lines(report: &ScenarioReport) -> String {
    report.render().lines().filter(|l| l.starts_with("FAIL ")).collect::<Vec<_>>().join("; ")
}

fn verdict<'a>(report: &'a ScenarioReport, check: &str) -> Result<&'a owncash::scenario::Verdict, String> {
    report
        .verdicts
        .iter()
        .find(|v| v.check == check)
        .ok_or_else(|| format!("{} seed {}: no `{check}` verdict", report.scenario_name, report.seed))
}

/// Randomized forged and tampered certificates broadcast by an adversary
/// must never be applied by an honest node.
fn unforgeability() -> Outcome {
    const ATTEMPTS: usize = 1000;
    let started = Instant::now();
    let issuer = IssuerState::with_first_note_number(generate_keypair(&[7; 32]).unwrap(), 12345);
    let mut sim = Sim::new(SimConfig::reliable(42, 5), issuer, 0, DbPolicy::default()).map_err(|e| e.to_string())?;
    let adversary = 4;
    sim.set_adversarial(adversary, true).map_err(|e| e.to_string())?;

    // A small live economy: three notes, one of them moved twice.
    let mut notes = Vec::new();
    for to in 1..=3 {
        notes.push(sim.issue(to, format!("pic{to}").as_bytes(), 500, "EUR").map_err(|e| e.to_string())?);
    }
    sim.run_until_quiescent().map_err(|e| e.to_string())?;
    sim.pay(1, 2, notes[0]).map_err(|e| e.to_string())?;
    sim.run_until_quiescent().map_err(|e| e.to_string())?;
    sim.pay(2, 3, notes[0]).map_err(|e| e.to_string())?;
    sim.run_until_quiescent().map_err(|e| e.to_string())?;

    let honest: Vec<usize> = sim.honest_nodes().collect();
    let observer = sim.node(0).map_err(|e| e.to_string())?.db.clone();
    let exports_before: Vec<String> = honest.iter().map(|&i| sim.nodes()[i].db.export_db()).collect();
    let mut rng = SplitMix64::new(0xf0f0_1234);
    let mut script = AdversaryScript::new();
    for i in 0..ATTEMPTS {
        let n = notes[(rng.next_u64() % notes.len() as u64) as usize];
        let rec = observer.record(n).unwrap();
        let current = rec.current.clone();
        let attacker = fresh_key(&mut rng);
        let forged = match rng.next_u64() % 7 {
            // Genesis for a note that was never issued.
            0 => cert(20_000 + rng.next_u64() % 1000, 0, attacker.public_key(), Digest::ZERO, &attacker),
            // Competing genesis for an existing note, self-signed.
            1 => cert(n, 0, attacker.public_key(), Digest::ZERO, &attacker),
            // Correctly chained transfer signed with the wrong key.
            2 => cert(n, current.epoch + 1, attacker.public_key(), current.digest(), &attacker),
            // Random signature bytes on an otherwise plausible transfer.
            3 => {
                let mut c = cert(n, current.epoch + 1, attacker.public_key(), current.digest(), &attacker);
                c.transfer_signature = Signature(random_bytes::<64>(&mut rng));
                c
            }
            // One byte of a valid certificate's statement or signature flipped.
            4 => {
                let mut c = rec.chain()[(rng.next_u64() % rec.chain().len() as u64) as usize].clone();
                let bit = 1u8 << (rng.next_u64() % 8);
                match rng.next_u64() % 4 {
                    0 => c.owner_public_key.0[(rng.next_u64() % 32) as usize] ^= bit,
                    1 => c.prev_cert_digest.0[(rng.next_u64() % 32) as usize] ^= bit,
                    2 => c.transfer_signature.0[(rng.next_u64() % 64) as usize] ^= bit,
                    _ => c.epoch ^= bit as u64,
                }
                c
            }
            // Random owner and previous digest with a valid-looking epoch.
            5 => cert(n, current.epoch + 1, PublicKey(random_bytes::<32>(&mut rng)), Digest(random_bytes::<32>(&mut rng)), &attacker),
            // Current certificate re-pointed at the attacker, signature kept.
            _ => {
                let mut c = current.clone();
                c.owner_public_key = attacker.public_key();
                c.epoch += 1;
                c
            }
        };
        script = script.broadcast(1 + i as u64, adversary, forged);
    }
    let before = sim.deliveries().len();
    sim.inject_adversary(script).map_err(|e| e.to_string())?;
    sim.run_until_quiescent().map_err(|e| e.to_string())?;

    let received: Vec<_> = sim.deliveries()[before..].iter().filter(|d| honest.contains(&d.node)).collect();
    let applied = received.iter().filter(|d| d.result.is_ok()).count();
    for (&i, before) in honest.iter().zip(&exports_before) {
        ensure(sim.nodes()[i].db.export_db() == *before, format!("node {i} database changed"))?;
    }
    let elapsed = started.elapsed();
    ensure(received.len() == ATTEMPTS * honest.len(), format!("only {} deliveries", received.len()))?;
    ensure(applied == 0, format!("{applied} forged certificates applied"))?;
    ensure(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!("attempts={ATTEMPTS} honest_deliveries={} applied=0 runtime={:.2}s", received.len(), elapsed.as_secs_f64()))
}

fn double_spend_rejection() -> Outcome {
    let mut checked = 0;
    for seed in SEEDS {
        let r = scenario("double_spend", seed, &Overrides::default())?;
        ensure(r.passed(), format!("seed {seed}: {}", failing_lines(&r)))?;
        for check in ["first_payee_applied_everywhere", "competitor_rejected_everywhere", "zero_divergence"] {
            ensure(verdict(&r, check)?.pass, format!("seed {seed}: {check} failed"))?;
        }
        // Independently: every honest node's final owner map is identical.
        let honest_views: BTreeSet<_> = [0usize, 2, 3, 4].iter().map(|i| r.final_owners[i].clone()).collect();
        ensure(honest_views.len() == 1, format!("seed {seed}: {} distinct honest views", honest_views.len()))?;
        checked += 1;
    }
    Ok(format!("seeds={checked} divergence=0"))
}

fn bank_accomplice_failure() -> Outcome {
    let mut holders_total = 0;
    for seed in SEEDS {
        let r = scenario("bank_accomplice", seed, &Overrides::default())?;
        ensure(r.passed(), format!("seed {seed}: {}", failing_lines(&r)))?;
        let v = verdict(&r, "accomplice_genesis_rejected")?;
        let counts = v
            .detail
            .split_whitespace()
            .find_map(|t| t.strip_prefix("rejected_at="))
            .and_then(|s| s.split_once('/'))
            .ok_or_else(|| format!("seed {seed}: unparsable detail `{}`", v.detail))?;
        ensure(counts.0 == counts.1 && counts.1 != "0", format!("seed {seed}: rejected at {}/{}", counts.0, counts.1))?;
        ensure(v.detail.contains("reasons=DuplicateGenesis "), format!("seed {seed}: {}", v.detail))?;
        holders_total += counts.1.parse::<usize>().unwrap_or(0);
    }
    Ok(format!("seeds=10 holders_rejecting={holders_total}/{holders_total}"))
}

fn theft_without_key() -> Outcome {
    let t = theft_campaign(1, &Overrides::default(), 1000).map_err(|e| e.to_string())?;
    ensure(t.attempts == 1000, "wrong attempt count")?;
    ensure(t.broadcast_certs + t.merchant_payments == 1000, "attempts not all made")?;
    ensure(t.applied_anywhere == 0, format!("{} forged certificates applied", t.applied_anywhere))?;
    ensure(t.merchant_accepted == 0, format!("{} merchants accepted stolen notes", t.merchant_accepted))?;
    ensure(t.report.passed(), failing_lines(&t.report))?;
    Ok(format!(
        "attempts=1000 broadcast={} merchant_payments={} applied=0 accepted=0",
        t.broadcast_certs, t.merchant_payments
    ))
}

fn replay_resistance() -> Outcome {
    for seed in SEEDS {
        let r = scenario("replay_old_certificate", seed, &Overrides::default())?;
        ensure(r.passed(), format!("seed {seed}: {}", failing_lines(&r)))?;
        let v = verdict(&r, "replay_rejected_everywhere")?;
        ensure(v.pass && v.detail.contains("reasons=EpochMismatch "), format!("seed {seed}: {}", v.detail))?;
    }
    Ok("seeds=10 rejected_at_all_honest_nodes".into())
}

fn key_rotation() -> Outcome {
    for seed in SEEDS {
        let r = scenario("key_rotation", seed, &Overrides::default())?;
        ensure(r.passed(), format!("seed {seed}: {}", failing_lines(&r)))?;
    }

    const ROTATIONS: usize = 1000;
    let issuer = IssuerState::with_first_note_number(generate_keypair(&[9; 32]).unwrap(), 12345);
    let mut sim = Sim::new(SimConfig::reliable(3, 5), issuer, 0, DbPolicy::default()).map_err(|e| e.to_string())?;
    let n = sim.issue(1, b"rotating", 100, "EUR").map_err(|e| e.to_string())?;
    sim.run_until_quiescent().map_err(|e| e.to_string())?;
    for i in 0..ROTATIONS {
        let fresh = sim.rotate(1, n).map_err(|e| e.to_string())?;
        sim.run_until_quiescent().map_err(|e| e.to_string())?;
        for (node, state) in sim.nodes().iter().enumerate() {
            ensure(state.db.current_owner(n) == Some(fresh), format!("rotation {i}: node {node} disagrees"))?;
        }
    }
    let keys: Vec<[u8; 32]> = sim.nodes()[1].wallet.identity_keys().map(|k| k.0).collect();
    let distinct: BTreeSet<_> = keys.iter().collect();
    ensure(keys.len() == ROTATIONS + 1, format!("{} identities", keys.len()))?;
    ensure(distinct.len() == keys.len(), format!("{} duplicate keys", keys.len() - distinct.len()))?;
    Ok(format!("scenario_seeds=10 rotations={ROTATIONS} identities={} distinct={}", keys.len(), distinct.len()))
}

/// Recounts issuer-signed genesis blocks straight from the export text,
/// rebuilding each statement byte by byte.
fn brute_force_genesis_count(export: &str, issuer: &PublicKey) -> Vec<u64> {
    let lines: Vec<&str> = export.lines().collect();
    assert_eq!(lines[0], EXPORT_HEADER);
    let mut found = BTreeSet::new();
    for block in lines[1..].chunks(3) {
        let fields: Vec<(&str, &str)> = block[0].split(' ').filter_map(|f| f.split_once('=')).collect();
        let get = |k: &str| fields.iter().find(|(a, _)| *a == k).map(|(_, v)| *v).unwrap();
        if get("EPOCH") != "0" {
            continue;
        }
        let n: u64 = get("N").parse().unwrap();
        let mut statement = Vec::with_capacity(84);
        statement.extend_from_slice(b"EA01");
        statement.extend_from_slice(&n.to_be_bytes());
        statement.extend_from_slice(&0u64.to_be_bytes());
        statement.extend_from_slice(&hex::decode(get("OWNER")).unwrap());
        statement.extend_from_slice(&hex::decode(get("PREV")).unwrap());
        let sig = hex::decode(block[1].strip_prefix("XFER=").unwrap()).unwrap();
        if crypto::verify(&statement, &sig, issuer.as_bytes()).unwrap() {
            found.insert(n);
        }
    }
    found.into_iter().collect()
}

fn issuance_audit() -> Outcome {
    let mut rng = SplitMix64::new(0xa0d1);
    let mut total_counted = 0;
    let mut over = 0;
    for db_index in 0..100 {
        let issuers: Vec<IssuerState> = (0..3)
            .map(|i| IssuerState::dishonest(fresh_key(&mut rng), 1 + 1000 * i as u64 + rng.next_u64() % 50))
            .collect();
        let audited = (rng.next_u64() % 3) as usize;
        let audited_key = issuers[audited].public_key();
        let policy = DbPolicy { retain_history: rng.next_u64() % 2 == 0, require_acceptance_signature: false };
        let mut db = CertificateDb::new(audited_key, policy);
        let mut issuers = issuers;
        let owners: Vec<KeyPair> = (0..4).map(|_| fresh_key(&mut rng)).collect();
        for _ in 0..(rng.next_u64() % 25) {
            let who = (rng.next_u64() % 3) as usize;
            let owner = &owners[(rng.next_u64() % 4) as usize];
            let iss = &mut issuers[who];
            let n = if iss.issued().is_empty() || rng.next_u64() % 4 != 0 {
                iss.mint_note(b"p", 1 + rng.next_u64() % 999, "EUR").unwrap().0.note_number
            } else {
                // Re-issue an existing number (a duplicate genesis attempt).
                *iss.issued().keys().nth((rng.next_u64() % iss.issued().len() as u64) as usize).unwrap()
            };
            let genesis = iss.issue_to(n, owner.public_key()).unwrap();
            let _ = db.apply_certificate(&genesis);
            // Sometimes move the note along so history blocks appear too.
            if rng.next_u64() % 2 == 0 {
                if let Some(current) = db.current(n).cloned() {
                    if let Some(signer) = owners.iter().find(|k| k.public_key() == current.owner_public_key) {
                        let next = owners[(rng.next_u64() % 4) as usize].public_key();
                        let _ = db.apply_certificate(&cert(n, current.epoch + 1, next, current.digest(), signer));
                    }
                }
            }
        }
        let cap = rng.next_u64() % 12;
        let report = audit_issuance(&db, &audited_key, cap);
        let recount = brute_force_genesis_count(&db.export_db(), &audited_key);
        ensure(report.note_numbers == recount, format!("db {db_index}: audit {:?} vs recount {recount:?}", report.note_numbers))?;
        ensure(report.count == recount.len() as u64, format!("db {db_index}: count mismatch"))?;
        ensure(report.over_cap == (recount.len() as u64 > cap), format!("db {db_index}: over_cap mismatch"))?;
        // Other issuers' notes never count toward the audited issuer.
        for (i, other) in issuers.iter().enumerate() {
            if i != audited {
                let other_count = audit_issuance(&db, &other.public_key(), cap).count;
                ensure(other_count == brute_force_genesis_count(&db.export_db(), &other.public_key()).len() as u64, "cross-issuer mismatch")?;
            }
        }
        total_counted += report.count;
        over += report.over_cap as u32;
    }
    Ok(format!("dbs=100 genesis_counted={total_counted} over_cap_flags={over} mismatches=0"))
}

fn determinism() -> Outcome {
    let policies = [Overrides::default(), Overrides::parse(&["retain_history=true", "require_acceptance=true"]).unwrap()];
    let mut runs = 0;
    for name in scenario_names() {
        for seed in SEEDS {
            for o in &policies {
                let a = scenario(name, seed, o)?;
                let b = scenario(name, seed, o)?;
                ensure(a.trace == b.trace, format!("{name} seed {seed}: traces differ"))?;
                ensure(a.render() == b.render(), format!("{name} seed {seed}: reports differ"))?;
                ensure(a.db_exports == b.db_exports, format!("{name} seed {seed}: exports differ"))?;
                ensure(!a.trace.is_empty(), format!("{name} seed {seed}: empty trace"))?;
                runs += 1;
            }
        }
    }
    Ok(format!("scenario_runs={runs} pairs_identical={runs}"))
}

fn oracle_replay() -> Outcome {
    let retain = Overrides::parse(&["retain_history=true"]).unwrap();
    let policy = retain.db_policy();
    let mut records = 0;
    for name in scenario_names() {
        for seed in SEEDS {
            let r = scenario(name, seed, &retain)?;
            ensure(r.passed(), format!("{name} seed {seed}: {}", failing_lines(&r)))?;
            let issuer = issuer_for(name, seed);
            for (node, export) in r.db_exports.iter().enumerate() {
                let stored = CertificateDb::import_db(export, issuer, policy)
                    .map_err(|e| format!("{name} seed {seed} node {node}: {e}"))?;
                let mut replayed = CertificateDb::new(issuer, policy);
                for (n, record) in stored.records() {
                    for c in record.chain() {
                        replayed
                            .apply_certificate(c)
                            .map_err(|e| format!("{name} seed {seed} node {node} note {n} epoch {}: {}", c.epoch, e.name()))?;
                    }
                    ensure(replayed.record(n) == Some(record), format!("{name} seed {seed} node {node} note {n}: record differs"))?;
                    records += 1;
                }
                ensure(replayed.export_db() == *export, format!("{name} seed {seed} node {node}: export differs"))?;
            }
        }
    }
    Ok(format!("scenarios=8 seeds=10 records_replayed={records} mismatches=0"))
}

/// The scenario issuer key, derived the same way the scenario runner does.
fn issuer_for(_name: &str, seed: u64) -> PublicKey {
    KeyPair::from_seed(&crypto::derive_seed("owncash/scenario-issuer", &seed.to_be_bytes())).public_key()
}

fn encoding_stability() -> Outcome {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");
    let read = |f: &str| std::fs::read_to_string(format!("{dir}/{f}")).map(|s| s.trim().to_string()).map_err(|e| e.to_string());
    let body = NoteBody {
        version: 1,
        note_number: 12345,
        amount_minor: 1000,
        currency: Currency::new("EUR").unwrap(),
        picture_digest: Digest::ZERO,
    };
    let body_bytes = encode_note_body(&body).map_err(|e| e.to_string())?;
    ensure(body_bytes.len() == 56, "body length")?;
    ensure(hex::encode(body_bytes) == read("note_body_12345.hex")?, "note body bytes differ from fixture")?;

    let owner = generate_keypair(&[0; 32]).unwrap().public_key();
    let genesis = OwnershipCert {
        note_number: 12345,
        epoch: 0,
        owner_public_key: owner,
        prev_cert_digest: Digest::ZERO,
        transfer_signature: Signature([0; 64]),
        acceptance_signature: None,
    };
    let statement = encode_ownership_statement(&genesis);
    ensure(statement.len() == 84, "statement length")?;
    ensure(hex::encode(statement) == read("genesis_statement_12345.hex")?, "statement bytes differ from fixture")?;
    Ok("note_body=56B statement=84B match".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("unforgeability", unforgeability),
        ("double_spend_rejection", double_spend_rejection),
        ("bank_accomplice_failure", bank_accomplice_failure),
        ("theft_without_key", theft_without_key),
        ("replay_resistance", replay_resistance),
        ("key_rotation", key_rotation),
        ("issuance_audit", issuance_audit),
        ("determinism", determinism),
        ("oracle_replay", oracle_replay),
        ("encoding_stability", encoding_stability),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name} {detail} ({secs:.2}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} {why} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
