//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its number and name. Tolerances and thresholds are pinned in the
//! assertions themselves.

mod common;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use common::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use reqwest::{Method, StatusCode};
use serde_json::json;

use capgate_core::bench;
use capgate_core::credential::{
    Bitstring, Capability, CapabilityCredential, CredentialClaims, CredentialStatus,
    CredentialVerdict, KeyPair, Presentation, PresentationVerdict, StatusList, TrustedIssuers,
};
use capgate_core::pdp::StatusListSupply;
use capgate_core::policy::{decide, MapOracle, Operation, Policy, ResourceUrl, UrlKind};
use capgate_core::wire::{epoch_now, percent_encode, Decision};

fn entity_path(id: &str) -> String {
    format!("/ngsi-ld/v1/entities/{}", percent_encode(id))
}

// ---- criterion 1 + 2: the randomized decision universe ----------------------

/// Brute-force re-statement of the coverage relation over raw strings: the
/// four conditions by direct case analysis, independent of the library path.
fn brute_covers(
    a: (UrlKind, &str),
    b: (UrlKind, &str),
    types: &HashMap<String, String>,
) -> bool {
    if a.0 == b.0 && a.1 == b.1 {
        return true;
    }
    match (a.0, b.0) {
        (UrlKind::Type, UrlKind::Object) => types.get(b.1).map(String::as_str) == Some(a.1),
        (UrlKind::Type, UrlKind::Attribute) => match b.1.rsplit_once('/') {
            Some((parent, _)) => types.get(parent).map(String::as_str) == Some(a.1),
            None => false,
        },
        (UrlKind::Object, UrlKind::Attribute) => match b.1.rsplit_once('/') {
            Some((parent, _)) => parent == a.1,
            None => false,
        },
        _ => false,
    }
}

fn brute_decide(
    policies: &[(String, Operation, UrlKind, String)],
    consumer: &str,
    operation: Operation,
    target: (UrlKind, &str),
    types: &HashMap<String, String>,
) -> bool {
    policies.iter().any(|(p_consumer, p_op, p_kind, p_url)| {
        p_consumer == consumer && *p_op == operation && brute_covers((*p_kind, p_url), target, types)
    })
}

struct Universe {
    resources: Vec<ResourceUrl>,
    types: HashMap<String, String>,
    oracle: MapOracle,
}

/// ≤20 resources: 3 type URLs, 5 objects with randomized type assignment,
/// 2 attributes per object, plus one object the oracle does not know.
fn random_universe(rng: &mut StdRng) -> Universe {
    let type_urls: Vec<String> =
        (0..3).map(|i| format!("https://ds.example/types/T{i}")).collect();
    let mut resources = Vec::new();
    let mut types = HashMap::new();
    let mut oracle = MapOracle::new();
    for t in &type_urls {
        resources.push(ResourceUrl::type_url(t).unwrap());
    }
    for i in 0..5 {
        let obj_url = format!("https://ds.example/entities/dev{i}");
        let obj = ResourceUrl::object_url(&obj_url).unwrap();
        let assigned = &type_urls[rng.random_range(0..type_urls.len())];
        types.insert(obj_url.clone(), assigned.clone());
        oracle.insert(&obj, ResourceUrl::type_url(assigned).unwrap());
        for attr in ["status", "consumption"] {
            resources.push(ResourceUrl::attr_of(&obj, attr).unwrap());
        }
        resources.push(obj);
    }
    // one object of unknown type plus its attribute
    let ghost = ResourceUrl::object_url("https://ds.example/entities/ghost").unwrap();
    resources.push(ResourceUrl::attr_of(&ghost, "status").unwrap());
    resources.push(ghost);
    assert!(resources.len() <= 20);
    Universe { resources, types, oracle }
}

const CONSUMERS: [&str; 3] = ["alice", "bob", "carol"];

fn random_policies(rng: &mut StdRng, universe: &Universe) -> Vec<Policy> {
    let count = rng.random_range(0..12);
    (0..count)
        .map(|_| {
            Policy::new(
                CONSUMERS[rng.random_range(0..3)],
                Operation::ALL[rng.random_range(0..3)],
                universe.resources[rng.random_range(0..universe.resources.len())].clone(),
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn criterion_1_decision_algorithm_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5EED_0001);
    let mut instances = 0u64;
    while instances < 10_000 {
        let universe = random_universe(&mut rng);
        let policies = random_policies(&mut rng, &universe);
        let raw: Vec<(String, Operation, UrlKind, String)> = policies
            .iter()
            .map(|p| {
                (
                    p.consumer_id.clone(),
                    p.operation,
                    p.resource.kind(),
                    p.resource.as_str().to_string(),
                )
            })
            .collect();
        for _ in 0..5 {
            let consumer = CONSUMERS[rng.random_range(0..3)];
            let operation = Operation::ALL[rng.random_range(0..3)];
            let target = &universe.resources[rng.random_range(0..universe.resources.len())];
            let got = decide(&policies, consumer, operation, target, &universe.oracle);
            let want = brute_decide(
                &raw,
                consumer,
                operation,
                (target.kind(), target.as_str()),
                &universe.types,
            );
            assert_eq!(
                got, want,
                "disagreement: consumer={consumer} op={operation:?} target={target}"
            );
            instances += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}, budget 10s");
    println!(
        "criterion 1 (decision-algorithm oracle equivalence, {instances} instances in {elapsed:?}): PASS"
    );
}

#[test]
fn criterion_2_semantic_hierarchy_property() {
    let mut rng = StdRng::seed_from_u64(0x5EED_0002);
    let mut checked = 0u64;
    for _ in 0..500 {
        let universe = random_universe(&mut rng);
        let mut policies = random_policies(&mut rng, &universe);
        // ensure a type-level grant exists
        let granted_type = format!("https://ds.example/types/T{}", rng.random_range(0..3));
        let consumer = CONSUMERS[rng.random_range(0..3)];
        let operation = Operation::ALL[rng.random_range(0..3)];
        policies.push(
            Policy::new(consumer, operation, ResourceUrl::type_url(&granted_type).unwrap())
                .unwrap(),
        );
        for (obj_url, obj_type) in &universe.types {
            if obj_type != &granted_type {
                continue;
            }
            let obj = ResourceUrl::object_url(obj_url).unwrap();
            assert!(
                decide(&policies, consumer, operation, &obj, &universe.oracle),
                "object {obj_url} of granted type not permitted"
            );
            for attr in ["status", "consumption"] {
                let target = ResourceUrl::attr_of(&obj, attr).unwrap();
                assert!(
                    decide(&policies, consumer, operation, &target, &universe.oracle),
                    "attribute {attr} of {obj_url} not permitted"
                );
                checked += 1;
            }
            checked += 1;
        }
    }
    assert!(checked > 1_000, "hierarchy property exercised only {checked} times");
    println!("criterion 2 (semantic hierarchy property, {checked} checks, 0 violations): PASS");
}

#[tokio::test]
async fn criterion_3_worked_example() {
    let stack = Stack::launch(StackOptions::default()).await;
    // policy: C may Read all objects of type smart lamp
    stack.grant(0, "consumer-c", Operation::Read, type_url(LAMP_TYPE));
    let c = stack.consumer("consumer-c").await;

    // O1 is of type T: reading the status of smart lamp 1 is accepted
    let lamp1 = stack.seed_lamp("lamp1");
    let resp = stack
        .centralized_request(
            &c,
            Method::GET,
            &format!("{}?attrs=status", entity_path(&lamp1)),
            None,
        )
        .await;
    assert_eq!(resp.status(), StatusCode::OK);
    let body: serde_json::Value = resp.json().await.unwrap();
    assert_eq!(body["status"], json!("on"));

    // O1 of a different type: the same request is rejected
    let meter = "urn:ngsi-ld:Meter:m1";
    stack
        .broker
        .create_entity(
            capgate_core::broker::Entity::new(meter, METER_TYPE)
                .with_attr("status", json!("idle")),
        )
        .unwrap();
    let resp = stack
        .centralized_request(
            &c,
            Method::GET,
            &format!("{}?attrs=status", entity_path(meter)),
            None,
        )
        .await;
    assert_eq!(resp.status(), StatusCode::FORBIDDEN);
    let decision: Decision = resp.json().await.unwrap();
    assert_eq!(decision.reason.as_deref(), Some("no_matching_policy"));
    println!("criterion 3 (worked example: type grant + PIP type inference): PASS");
}

#[tokio::test]
async fn criterion_4_replay_rejection() {
    let stack = Stack::launch(StackOptions::default()).await;
    let lamp1 = stack.seed_lamp("lamp1");
    stack.grant(0, "alice", Operation::Read, type_url(LAMP_TYPE));
    let mut alice = stack.consumer("alice").await;
    stack.issue_vc(&mut alice, 0).await;
    stack.broker.clear_access_log();

    let mut rng = StdRng::seed_from_u64(0x5EED_0004);
    let mut rejected = 0;
    for trial in 0..100 {
        // the legitimate intermediary issues the nonce, but the consumer was
        // talking to a malicious intermediary and bound the VP to its URL
        let challenge = stack.challenge(Method::GET, &entity_path(&lamp1), None).await;
        let mal_audience = format!("https://mal-{}.example/{}", trial, rng.random_range(0..1_000));
        let vp = Presentation::create(
            vec![alice.vc.clone().unwrap()],
            &challenge.nonce,
            &mal_audience,
            epoch_now(),
            &alice.key,
        )
        .unwrap();
        let resp = stack.send_presentation(&vp, Method::GET, &entity_path(&lamp1), None).await;
        assert_eq!(resp.status(), StatusCode::FORBIDDEN, "trial {trial} not rejected");
        let decision: Decision = resp.json().await.unwrap();
        assert_eq!(
            decision.reason.as_deref(),
            Some("wrong_audience"),
            "trial {trial} rejected for the wrong reason"
        );
        rejected += 1;
    }
    assert_eq!(rejected, 100);
    assert!(
        stack.broker.access_log().is_empty(),
        "replayed presentations must never reach the broker"
    );
    println!("criterion 4 (replay rejection, 100/100 denied wrong_audience, 0 forwarded): PASS");
}

#[tokio::test]
async fn criterion_5_automatic_unsubscription() {
    let period = Duration::from_millis(500);
    let stack = Stack::launch(StackOptions {
        refresh_interval: period,
        sweep_interval: period,
        spawn_background: true,
        ..StackOptions::default()
    })
    .await;
    let lamp1 = stack.seed_lamp("lamp1");
    stack.grant(0, "alice", Operation::Subscribe, type_url(LAMP_TYPE));
    let mut alice = stack.consumer("alice").await;
    stack.issue_vc(&mut alice, 0).await;

    let sink = WebhookSink::start().await;
    let resp = stack
        .distributed_request(
            &alice,
            Method::POST,
            "/ngsi-ld/v1/subscriptions",
            Some(subscription_body(LAMP_TYPE, &sink.url)),
        )
        .await;
    assert_eq!(resp.status(), StatusCode::CREATED);
    let sub_id = resp.json::<serde_json::Value>().await.unwrap()["id"]
        .as_str()
        .unwrap()
        .to_string();

    // at least one notification arrives while authorized
    stack
        .http
        .patch(format!("{}{}/attrs/status", stack.broker_url, entity_path(&lamp1)))
        .json(&json!("off"))
        .send()
        .await
        .unwrap();
    assert!(
        wait_for(|| sink.count() >= 1, Duration::from_secs(3)).await,
        "no notification before revocation"
    );

    // revoke; one refresh + one sweep period later the subscription is gone
    stack.pap().revoke_consumer(OWNER_KEY, "alice", epoch_now()).unwrap();
    let deleted = wait_for(
        || !stack.broker.has_subscription(&sub_id),
        2 * period + Duration::from_millis(1_500),
    )
    .await;
    assert!(deleted, "subscription survived refresh + sweep");
    assert!(stack.pdp.subscription_records().is_empty());

    // observation window: 10 sweep periods of further updates, zero deliveries
    let baseline = sink.count();
    let observation_end = tokio::time::Instant::now() + 10 * period;
    while tokio::time::Instant::now() < observation_end {
        stack
            .http
            .patch(format!("{}{}/attrs/status", stack.broker_url, entity_path(&lamp1)))
            .json(&json!("flicker"))
            .send()
            .await
            .unwrap();
        tokio::time::sleep(Duration::from_millis(250)).await;
    }
    tokio::time::sleep(Duration::from_millis(300)).await;
    assert_eq!(
        sink.count(),
        baseline,
        "notifications kept arriving after revocation + un-subscription"
    );
    println!("criterion 5 (automatic un-subscription end-to-end): PASS");
}

#[tokio::test]
async fn criterion_6_offline_verification_availability() {
    let stack = Stack::launch(StackOptions::default()).await;
    let lamp1 = stack.seed_lamp("lamp1");
    stack.grant(0, "alice", Operation::Read, type_url(LAMP_TYPE));
    let mut alice = stack.consumer("alice").await;
    stack.issue_vc(&mut alice, 0).await;

    // capture the signed list as a relayable file, then kill the PAP process
    let status_list = stack.pap().publish_status_list(None, epoch_now()).unwrap();
    let status_list_url = stack.pap().status_list_url(0);
    let pap_id = stack.pap().id().to_string();
    stack.paps[0].stop();
    tokio::time::sleep(Duration::from_millis(50)).await;

    // a third party supplies the list to the PDP
    let resp = stack
        .http
        .post(format!("{}/status-lists", stack.pdp_url))
        .json(&StatusListSupply { issuer: pap_id, url: status_list_url, list: status_list })
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::NO_CONTENT);

    let before = stack.pdp.metrics();
    let resp = stack.distributed_request(&alice, Method::GET, &entity_path(&lamp1), None).await;
    assert_eq!(resp.status(), StatusCode::OK, "offline authorization failed");
    let after = stack.pdp.metrics();
    assert_eq!(
        after.status_list_fetch_attempts, before.status_list_fetch_attempts,
        "authorization with a supplied fresh list must not call the PAP"
    );
    assert_eq!(after.policy_fetches, before.policy_fetches);
    println!("criterion 6 (offline verification with PAP stopped, third-party list): PASS");
}

#[tokio::test]
async fn criterion_7_privacy_property() {
    let stack = Stack::launch(StackOptions::default()).await;
    let lamp1 = stack.seed_lamp("lamp1");
    let names = ["alice", "bob", "carol"];
    for name in names {
        stack.grant(0, name, Operation::Read, type_url(LAMP_TYPE));
    }
    stack.pap().clear_request_log();

    // full run: each consumer gets one credential and reads three times
    for name in names {
        let mut consumer = stack.consumer(name).await;
        stack.issue_vc(&mut consumer, 0).await;
        for _ in 0..3 {
            let resp = stack
                .distributed_request(&consumer, Method::GET, &entity_path(&lamp1), None)
                .await;
            assert_eq!(resp.status(), StatusCode::OK);
        }
    }
    // plus a periodic refresh cycle
    stack.pdp.refresh_status_lists(epoch_now()).await;

    let log = stack.pap().request_log();
    let issuance: Vec<_> =
        log.iter().filter(|e| e.method == "POST" && e.path == "/credentials").collect();
    assert_eq!(issuance.len(), names.len(), "one issuance request per consumer");
    let status_fetches: Vec<_> =
        log.iter().filter(|e| e.path.starts_with("/status-list")).collect();
    assert!(!status_fetches.is_empty(), "expected some status-list fetches");
    for fetch in &status_fetches {
        assert_eq!(
            fetch.query, None,
            "status-list fetch carried a query parameter: {:?}",
            fetch.query
        );
    }
    // nothing else touches the PAP: no per-consumer policy queries at all
    assert!(
        !log.iter().any(|e| e.path.starts_with("/policies")),
        "distributed flow must not query policies per consumer"
    );
    println!(
        "criterion 7 (privacy: {} issuances, {} parameterless status fetches): PASS",
        issuance.len(),
        status_fetches.len()
    );
}

#[test]
fn criterion_8_revocation_list_size_trend() {
    let started = Instant::now();
    let densities = [0.0001, 0.001, 0.01, 0.1, 0.5];
    let rows = bench::revocation_size_bench(1_000_000, &densities, 5);
    for row in &rows {
        assert_eq!(row.raw_bytes, 125_000, "raw size is 10^6 / 8 bytes");
    }
    bench::check_monotonic(&rows).expect("compressed mean must not shrink as density grows");
    let zero = bench::revocation_size_bench(1_000_000, &[0.0], 1);
    assert!(
        zero[0].compressed_mean < 2_000.0,
        "all-zero list compressed to {} bytes",
        zero[0].compressed_mean
    );
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}, budget 60s");
    println!(
        "criterion 8 (revocation-list size trend over {:?} in {elapsed:?}): PASS",
        densities
    );
}

#[tokio::test]
async fn criterion_9_one_fetch_per_pap_per_cycle() {
    let stack = Stack::launch(StackOptions { pap_count: 2, ..StackOptions::default() }).await;
    let lamp1 = stack.seed_lamp("lamp1");

    // ten consumers spread over two PAPs
    for i in 0..10 {
        let name = format!("consumer-{i}");
        let pap_idx = i % 2;
        stack.grant(pap_idx, &name, Operation::Read, type_url(LAMP_TYPE));
        let mut consumer = stack.consumer(&name).await;
        stack.issue_vc(&mut consumer, pap_idx).await;
        let resp =
            stack.distributed_request(&consumer, Method::GET, &entity_path(&lamp1), None).await;
        assert_eq!(resp.status(), StatusCode::OK);
    }
    assert_eq!(stack.pdp.cached_capability_count(), 10);

    let before = stack.pdp.metrics();
    stack.pdp.refresh_status_lists(epoch_now()).await;
    let after = stack.pdp.metrics();
    assert_eq!(
        after.status_list_fetch_attempts - before.status_list_fetch_attempts,
        2,
        "one refresh cycle must issue exactly |P| = 2 fetches"
    );
    for handle in &stack.paps {
        let url = handle.pap.status_list_url(0);
        let delta = after.status_list_fetches_by_url.get(&url).copied().unwrap_or(0)
            - before.status_list_fetches_by_url.get(&url).copied().unwrap_or(0);
        assert_eq!(delta, 1, "exactly one fetch for {url}");
    }
    println!("criterion 9 (|P|-requests: 10 consumers, 2 PAPs, 2 fetches per cycle): PASS");
}

#[test]
fn criterion_10_credential_tamper_suite() {
    let now = 1_700_000_000u64;
    let pap_key = KeyPair::generate("pap-1#k1");
    let other_pap_key = KeyPair::generate("pap-2#k1");
    let subject = KeyPair::generate("alice#k1");
    let trusted = TrustedIssuers::new()
        .with("pap-1", pap_key.public_key())
        .with("pap-2", other_pap_key.public_key());
    let list = StatusList::issue("pap-1", now, &Bitstring::new(64), &pap_key);
    let lists: std::collections::BTreeMap<String, StatusList> =
        [("pap-1".to_string(), list.clone())].into();

    let vc = CapabilityCredential::sign(
        CredentialClaims {
            issuer: "pap-1".into(),
            subject_id: "alice".into(),
            subject_public_key: subject.public_key(),
            capabilities: vec![Capability {
                operation: Operation::Read,
                resource: ResourceUrl::type_url(LAMP_TYPE).unwrap(),
            }],
            issued_at: now,
            expires_at: now + 3600,
            credential_status: CredentialStatus {
                status_list_url: "http://pap-1.example/status-lists/0".into(),
                status_index: 3,
            },
        },
        &pap_key,
    )
    .unwrap();
    assert_eq!(vc.verify(&trusted, now, Some(&list)), CredentialVerdict::Ok);

    let mut cases = 0;
    let mut check_vc = |mutate: &dyn Fn(&mut CapabilityCredential), want: CredentialVerdict| {
        let mut copy = vc.clone();
        mutate(&mut copy);
        assert_eq!(copy.verify(&trusted, now, Some(&list)), want, "case {cases}");
        cases += 1;
    };
    // issuer swapped to an unknown party
    check_vc(&|vc| vc.issuer = "pap-9".into(), CredentialVerdict::UntrustedIssuer);
    // issuer swapped to another *trusted* party: the signature no longer fits
    check_vc(&|vc| vc.issuer = "pap-2".into(), CredentialVerdict::BadSignature);
    // capabilities widened
    check_vc(
        &|vc| vc.capabilities[0].operation = Operation::Write,
        CredentialVerdict::BadSignature,
    );
    check_vc(
        &|vc| {
            vc.capabilities.push(Capability {
                operation: Operation::Subscribe,
                resource: ResourceUrl::type_url(METER_TYPE).unwrap(),
            })
        },
        CredentialVerdict::BadSignature,
    );
    check_vc(&|vc| vc.capabilities.clear(), CredentialVerdict::BadSignature);
    // lifetime stretched or backdated
    check_vc(&|vc| vc.expires_at += 86_400, CredentialVerdict::BadSignature);
    check_vc(&|vc| vc.issued_at -= 86_400, CredentialVerdict::BadSignature);
    // status pointer moved to someone else's bit
    check_vc(
        &|vc| vc.credential_status.status_index = 4,
        CredentialVerdict::BadSignature,
    );
    check_vc(
        &|vc| vc.credential_status.status_list_url = "http://pap-1.example/status-lists/1".into(),
        CredentialVerdict::BadSignature,
    );
    // subject key replaced
    check_vc(
        &|vc| vc.subject_public_key = KeyPair::generate("mallory").public_key(),
        CredentialVerdict::BadSignature,
    );
    // signature bits flipped
    check_vc(
        &|vc| vc.signature = vc.signature.with_flipped_bit(17),
        CredentialVerdict::BadSignature,
    );

    let vp = Presentation::create(
        vec![vc.clone()],
        "nonce-1",
        "https://leg.example",
        now,
        &subject,
    )
    .unwrap();
    assert_eq!(
        vp.verify("nonce-1", "https://leg.example", &trusted, now, &lists),
        PresentationVerdict::Ok
    );

    let mut check_vp = |mutate: &dyn Fn(&mut Presentation), want: PresentationVerdict| {
        let mut copy = vp.clone();
        mutate(&mut copy);
        assert_eq!(
            copy.verify("nonce-1", "https://leg.example", &trusted, now, &lists),
            want,
            "case {cases}"
        );
        cases += 1;
    };
    // post-signing mutations break the proof
    check_vp(&|vp| vp.nonce = "nonce-2".into(), PresentationVerdict::BadProof);
    check_vp(&|vp| vp.audience = "https://mal.example".into(), PresentationVerdict::BadProof);
    check_vp(&|vp| vp.created_at += 60, PresentationVerdict::BadProof);
    check_vp(
        &|vp| vp.signature = vp.signature.with_flipped_bit(100),
        PresentationVerdict::BadProof,
    );
    // honestly signed, but for the wrong nonce or audience
    let stale = Presentation::create(
        vec![vc.clone()],
        "stale-nonce",
        "https://leg.example",
        now,
        &subject,
    )
    .unwrap();
    assert_eq!(
        stale.verify("nonce-1", "https://leg.example", &trusted, now, &lists),
        PresentationVerdict::WrongNonce
    );
    cases += 1;
    let misbound = Presentation::create(
        vec![vc.clone()],
        "nonce-1",
        "https://mal.example",
        now,
        &subject,
    )
    .unwrap();
    assert_eq!(
        misbound.verify("nonce-1", "https://leg.example", &trusted, now, &lists),
        PresentationVerdict::WrongAudience
    );
    cases += 1;
    // attacker tries to wrap someone else's credential under their own key
    let attacker = KeyPair::generate("mallory#k1");
    let forged = Presentation::create(
        vec![vc.clone()],
        "nonce-1",
        "https://leg.example",
        now,
        &attacker,
    );
    assert!(forged.is_err(), "creation must refuse a mismatched subject key");
    cases += 1;

    println!("criterion 10 (credential tamper suite, {cases}/{cases} rejected correctly): PASS");
}

#[tokio::test]
async fn criterion_11_proxy_transparency_differential() {
    let stack = Stack::launch(StackOptions::default()).await;
    stack.grant(0, "alice", Operation::Read, type_url(LAMP_TYPE));
    stack.grant(0, "alice", Operation::Read, type_url(METER_TYPE));
    stack.grant(0, "alice", Operation::Write, type_url(LAMP_TYPE));
    let alice = stack.consumer("alice").await;

    let mut lamp_ids = Vec::new();
    for i in 0..12 {
        lamp_ids.push(stack.seed_lamp(&format!("lamp{i}")));
    }
    for i in 0..3 {
        stack
            .broker
            .create_entity(
                capgate_core::broker::Entity::new(
                    format!("urn:ngsi-ld:Meter:m{i}"),
                    METER_TYPE,
                )
                .with_attr("reading", json!(i)),
            )
            .unwrap();
    }

    // corpus: reads with and without projections, type queries, and writes
    let mut corpus: Vec<(Method, String, Option<serde_json::Value>)> = Vec::new();
    for id in &lamp_ids {
        corpus.push((Method::GET, entity_path(id), None));
        corpus.push((Method::GET, format!("{}?attrs=status", entity_path(id)), None));
        corpus.push((
            Method::GET,
            format!("{}?attrs=status,consumption", entity_path(id)),
            None,
        ));
    }
    corpus.push((
        Method::GET,
        format!("/ngsi-ld/v1/entities?type={}", percent_encode(LAMP_TYPE)),
        None,
    ));
    corpus.push((
        Method::GET,
        format!("/ngsi-ld/v1/entities?type={}", percent_encode(METER_TYPE)),
        None,
    ));
    for id in lamp_ids.iter().take(12) {
        corpus.push((
            Method::PATCH,
            format!("{}/attrs/status", entity_path(id)),
            Some(json!("steady")),
        ));
    }
    assert!(corpus.len() >= 50, "corpus holds {} requests", corpus.len());

    let mut compared = 0;
    for (method, path, body) in corpus {
        // direct to the broker
        let mut direct = stack
            .http
            .request(method.clone(), format!("{}{}", stack.broker_url, path));
        if let Some(body) = &body {
            direct = direct.json(body);
        }
        let direct = direct.send().await.unwrap();
        let direct_status = direct.status();
        let direct_type = direct
            .headers()
            .get("content-type")
            .map(|v| v.as_bytes().to_vec());
        let direct_body = direct.bytes().await.unwrap();

        // same request through the enforcement proxy
        let proxied = stack
            .centralized_request(&alice, method.clone(), &path, body.clone())
            .await;
        let proxied_status = proxied.status();
        let proxied_type = proxied
            .headers()
            .get("content-type")
            .map(|v| v.as_bytes().to_vec());
        let proxied_body = proxied.bytes().await.unwrap();

        assert_eq!(proxied_status, direct_status, "{method} {path}: status diverged");
        assert_eq!(proxied_type, direct_type, "{method} {path}: content-type diverged");
        assert_eq!(
            proxied_body.as_ref(),
            direct_body.as_ref(),
            "{method} {path}: body diverged"
        );
        compared += 1;
    }
    println!(
        "criterion 11 (proxy transparency, {compared} permitted requests byte-identical): PASS"
    );
}
