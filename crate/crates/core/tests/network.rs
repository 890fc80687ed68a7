mod common;

use common::*;
use redchain::ledger::{load_chain, validate_chain};
use redchain::network::{run_scenario, FetchError, LinkConfig, Node, Scenario};
use redchain::tx::{make_update, new_data_tx, new_funds_tx, Transaction};
use redchain::Digest;

#[test]
fn broadcast_reaches_all_pools_and_dedups() {
    let mut r = rng(1);
    let cs = clients(2, 64, &mut r);
    let g = genesis(&cs, 100, &mut r);
    let mut sim = network(3, &g, round_robin(), LinkConfig::default(), 1);
    let tx = new_funds_tx(&cs[0], cs[1].address(), 5, 1, 1, vec![], &mut r).unwrap();
    assert_eq!(sim.broadcast_tx(0, tx.clone(), 0).unwrap(), 2);
    let pools: Vec<usize> = sim.nodes.iter().map(|n| n.pool.len()).collect();
    assert_eq!(pools, vec![1, 1, 1]);
    let trace_len = sim.trace.len();
    assert_eq!(sim.broadcast_tx(0, tx, 0).unwrap(), 2);
    assert_eq!(sim.trace.len(), trace_len);
    assert_eq!(sim.nodes.iter().map(|n| n.pool.len()).collect::<Vec<_>>(), pools);
}

#[test]
fn lossy_links_converge_with_retries() {
    let mut r = rng(2);
    let cs = clients(2, 64, &mut r);
    let g = genesis(&cs, 100, &mut r);
    let mut drops = 0;
    for seed in 0..10 {
        let link = LinkConfig {
            delay_ms: 5,
            drop_rate: 0.5,
        };
        let mut sim = network(3, &g, round_robin(), link, seed);
        let tx = new_funds_tx(&cs[0], cs[1].address(), 5, 1, 1, vec![], &mut r).unwrap();
        assert_eq!(sim.broadcast_tx(0, tx, 20).unwrap(), 2, "seed {seed}");
        drops += sim.trace.iter().filter(|l| l.ends_with("dropped")).count();
    }
    assert!(drops > 0);
}

#[test]
fn fetch_update_tx_present_absent_and_timeout() {
    let mut r = rng(3);
    let cs = clients(2, 64, &mut r);
    let g = genesis(&cs, 100, &mut r);
    let mut sim = network(3, &g, round_robin(), LinkConfig::default(), 3);
    let tx = new_data_tx(&cs[0], cs[1].address(), 1, 1, b"a".to_vec(), &mut r).unwrap();
    sim.submit(0, tx.clone()).unwrap();
    sim.run_until_quiet(1_000);
    sim.mine(0).unwrap();
    sim.run_until_quiet(1_000);
    let u = make_update(&tx, b"b".to_vec(), b"why".to_vec(), 1, &cs[0], &mut r).unwrap();
    let ud = sim.submit(1, Transaction::Update(u.clone())).unwrap();
    sim.run_until_quiet(1_000);
    sim.mine(1).unwrap();
    sim.run_until_quiet(1_000);

    let fetched = sim.fetch_update_tx(2, 1, ud, 500).unwrap().unwrap();
    let stored = sim.nodes[1].store.get("updatetx", ud.as_bytes()).unwrap().unwrap().to_vec();
    assert_eq!(Transaction::Update(fetched).encode(), stored);
    assert_eq!(sim.fetch_update_tx(2, 1, Digest([9; 32]), 500), Ok(None));
    sim.nodes[1].online = false;
    assert_eq!(sim.fetch_update_tx(2, 1, ud, 500), Err(FetchError::Timeout(500)));
}

#[test]
fn joiner_receives_already_updated_transactions() {
    let mut r = rng(4);
    let cs = clients(2, 64, &mut r);
    let g = genesis(&cs, 100, &mut r);
    let mut sim = network(2, &g, round_robin(), LinkConfig::default(), 4);
    let late = sim.add_node(Node::new("late", &g, round_robin()).unwrap());
    sim.nodes[late].online = false;
    sim.connect(late, 0, LinkConfig::default());
    sim.connect(late, 1, LinkConfig::default());

    let tx = new_data_tx(&cs[0], cs[1].address(), 1, 1, b"Alise".to_vec(), &mut r).unwrap();
    let d = sim.submit(0, tx.clone()).unwrap();
    sim.run_until_quiet(1_000);
    sim.mine(0).unwrap();
    sim.run_until_quiet(1_000);
    let u = make_update(&tx, b"Alice".to_vec(), b"typo".to_vec(), 1, &cs[0], &mut r).unwrap();
    sim.submit(0, u.into()).unwrap();
    sim.run_until_quiet(1_000);
    sim.mine(1).unwrap();
    sim.run_until_quiet(1_000);

    sim.join(late, 0);
    assert!(sim.run_until_quiet(10_000));
    let joiner = &sim.nodes[late];
    assert!(joiner.sync_error.is_none(), "{:?}", joiner.sync_error);
    assert_eq!(joiner.stored_tx(&d).unwrap().data(), Some(&b"Alice"[..]));
    assert_eq!(joiner.store.dump(), sim.nodes[0].store.dump());
    validate_chain(&load_chain(&joiner.store), &joiner.config.consensus, &joiner.store, &joiner.store).unwrap();
}

#[test]
fn joining_an_empty_chain_yields_genesis_only() {
    let mut r = rng(5);
    let cs = clients(1, 64, &mut r);
    let g = genesis(&cs, 100, &mut r);
    let mut sim = network(2, &g, round_robin(), LinkConfig::default(), 5);
    sim.nodes[1].online = false;
    sim.join(1, 0);
    assert!(sim.run_until_quiet(1_000));
    assert_eq!(sim.nodes[1].height(), 0);
    assert!(sim.nodes[1].is_active());
    assert_eq!(sim.nodes[1].store.dump(), sim.nodes[0].store.dump());
}

#[test]
fn tampered_body_aborts_sync_at_its_block() {
    let mut r = rng(6);
    let cs = clients(2, 64, &mut r);
    let g = genesis(&cs, 100, &mut r);
    let mut sim = network(3, &g, round_robin(), LinkConfig::default(), 6);
    sim.nodes[2].online = false;
    sim.mine(0).unwrap();
    sim.run_until_quiet(1_000);
    let tx = new_funds_tx(&cs[0], cs[1].address(), 5, 1, 1, vec![], &mut r).unwrap();
    let d = sim.submit(0, tx).unwrap();
    sim.run_until_quiet(1_000);
    let mined = sim.mine(0).unwrap();
    sim.run_until_quiet(1_000);
    assert_eq!(mined.block.height, 2);
    assert!(sim.nodes[1].tamper(&d));
    sim.join(2, 1);
    sim.run_until_quiet(5_000);
    let err = sim.nodes[2].sync_error.clone().expect("sync must abort");
    assert_eq!(err.height, 2);
    assert!(!sim.nodes[2].is_active());
}

const SCENARIO: &str = r#"
bits 64
consensus roundrobin
blocktime 1000
node n1
node n2
node n3
node n4 late
client alice balance=1000
client bob balance=1000
link all delay=15 drop=0.1
at 100 data alice bob "{name: Alise}" fee=1 as=t1
at 150 funds alice bob 5 fee=1 as=f1
at 200 funds alice bob 7 fee=1 as=f2
at 2500 update alice t1 "{name: Alice}" reason="typo fix" fee=1 as=u1
at 3500 aggregate f1 f2 as=a1
at 4500 erase alice t1 fee=1 as=u2
at 6000 join n4
"#;

#[test]
fn scenario_runs_are_deterministic_and_converge() {
    let s = Scenario::parse(SCENARIO).unwrap();
    let a = run_scenario(&s, Some(11)).unwrap();
    let b = run_scenario(&s, Some(11)).unwrap();
    assert_eq!(a.render(), b.render());
    assert!(a.converged, "{}", a.render());
    let c = run_scenario(&s, Some(12)).unwrap();
    assert_ne!(a.trace_digest, c.trace_digest);
    for u in &a.updates {
        assert!(u.latency_blocks.unwrap() <= 2, "{}", a.render());
    }
}

#[test]
fn divergence_is_reported() {
    let text = format!("{SCENARIO}at 7000 tamper n2 t1\n");
    let s = Scenario::parse(&text).unwrap();
    let report = run_scenario(&s, Some(11)).unwrap();
    assert!(!report.converged);
}

#[test]
fn malformed_scenarios_are_rejected() {
    assert!(Scenario::parse("link all").is_err());
    assert!(Scenario::parse("node a\nat x mine a").is_err());
    assert!(Scenario::parse("node a\nat 1 fly a").is_err());
    assert!(Scenario::parse("node a\nlink all drop=2").is_err());
    assert!(Scenario::parse("node a\nclient b balance=\"unterminated").is_err());
}
