//! Line-oriented scenario scripts for the simulator.
//!
//! ```text
//! seed 7
//! bits 64
//! consensus roundrobin          # or: consensus pow 4
//! blocktime 1000
//! node n1
//! node n3 late
//! client alice balance=1000
//! link all delay=10 drop=0
//! at 100 data alice bob "{name: Alise}" fee=1 as=t1
//! at 1500 update alice t1 "{name: Alice}" reason="typo fix" fee=1 as=u1
//! at 4000 join n3 from=n1
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::node::Node;
use super::sim::{LinkConfig, SimNetwork};
use crate::digest::{inner_hash, Digest};
use crate::keys::ClientKeys;
use crate::ledger::{aggregate_data, aggregate_funds, load_chain, validate_chain, ConsensusConfig, ConsensusMode};
use crate::miner::{Genesis, NodeConfig};
use crate::tx::{make_update, new_data_tx, new_funds_tx, AccountTx, Transaction};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("at tick {tick}: {msg}")]
    Run { tick: u64, msg: String },
}

#[derive(Clone, Debug, PartialEq)]
enum LinkTarget {
    All,
    Pair(String, String),
}

#[derive(Clone, Debug, PartialEq)]
enum Command {
    Funds {
        from: String,
        to: String,
        amount: u64,
        fee: u64,
        data: Vec<u8>,
    },
    Data {
        from: String,
        to: String,
        data: Vec<u8>,
        fee: u64,
    },
    Update {
        client: String,
        target: String,
        data: Vec<u8>,
        reason: Vec<u8>,
        fee: u64,
    },
    Mine(String),
    Join {
        node: String,
        from: Option<String>,
    },
    Aggregate(Vec<String>),
    Tamper {
        node: String,
        target: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
struct Event {
    tick: u64,
    command: Command,
    via: Option<String>,
    label: Option<String>,
    line: usize,
}

/// A parsed scenario script.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub bits: u64,
    pub consensus: ConsensusConfig,
    /// Round-robin block interval in ms; no automatic blocks when absent.
    pub block_time: Option<u64>,
    pub public_mode: bool,
    pub retry_ms: u64,
    pub end: Option<u64>,
    nodes: Vec<(String, bool)>,
    clients: Vec<(String, u64)>,
    links: Vec<(LinkTarget, LinkConfig)>,
    events: Vec<Event>,
}

fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut in_token = false;
    let mut quoted = false;
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                quoted = !quoted;
                in_token = true;
            }
            '\\' if quoted => match chars.next() {
                Some(n) => cur.push(n),
                None => return Err("dangling escape".into()),
            },
            '#' if !quoted => break,
            c if c.is_whitespace() && !quoted => {
                if in_token {
                    tokens.push(std::mem::take(&mut cur));
                    in_token = false;
                }
            }
            c => {
                cur.push(c);
                in_token = true;
            }
        }
    }
    if quoted {
        return Err("unterminated quote".into());
    }
    if in_token {
        tokens.push(cur);
    }
    Ok(tokens)
}

/// Splits `key=value` options from positional arguments.
fn split_options(tokens: &[String]) -> (Vec<&str>, BTreeMap<&str, &str>) {
    let mut positional = Vec::new();
    let mut options = BTreeMap::new();
    for t in tokens {
        match t.split_once('=') {
            Some((k, v)) if !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                options.insert(k, v);
            }
            _ => positional.push(t.as_str()),
        }
    }
    (positional, options)
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut s = Scenario {
            seed: 0,
            bits: 64,
            consensus: ConsensusConfig::pow(4),
            block_time: None,
            public_mode: false,
            retry_ms: 200,
            end: None,
            nodes: Vec::new(),
            clients: Vec::new(),
            links: Vec::new(),
            events: Vec::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| ScenarioError::Parse { line, msg };
            let tokens = tokenize(raw).map_err(err)?;
            if tokens.is_empty() {
                continue;
            }
            let (pos, opts) = split_options(&tokens[1..]);
            let num = |v: &str, what: &str| -> Result<u64, ScenarioError> {
                v.parse()
                    .map_err(|_| ScenarioError::Parse {
                        line,
                        msg: format!("{what}: expected a number, got {v:?}"),
                    })
            };
            match tokens[0].as_str() {
                "seed" => s.seed = num(pos.first().copied().unwrap_or(""), "seed")?,
                "bits" => s.bits = num(pos.first().copied().unwrap_or(""), "bits")?,
                "blocktime" => s.block_time = Some(num(pos.first().copied().unwrap_or(""), "blocktime")?),
                "retry" => s.retry_ms = num(pos.first().copied().unwrap_or(""), "retry")?,
                "end" => s.end = Some(num(pos.first().copied().unwrap_or(""), "end")?),
                "public_mode" => s.public_mode = true,
                "consensus" => {
                    let mode: ConsensusMode = pos.first().copied().unwrap_or("").parse().map_err(err)?;
                    s.consensus = match mode {
                        ConsensusMode::RoundRobin => ConsensusConfig::round_robin(),
                        ConsensusMode::ProofOfWork => {
                            let d = pos.get(1).map(|v| num(v, "difficulty")).transpose()?.unwrap_or(4);
                            ConsensusConfig::pow(u8::try_from(d).unwrap_or(u8::MAX))
                        }
                    };
                }
                "node" => {
                    let id = pos.first().ok_or_else(|| err("node needs an id".into()))?;
                    s.nodes.push((id.to_string(), pos.get(1) == Some(&"late")));
                }
                "client" => {
                    let name = pos.first().ok_or_else(|| err("client needs a name".into()))?;
                    let balance = opts.get("balance").map(|v| num(v, "balance")).transpose()?.unwrap_or(0);
                    s.clients.push((name.to_string(), balance));
                }
                "link" => {
                    let target = match pos.as_slice() {
                        ["all"] => LinkTarget::All,
                        [a, b] => LinkTarget::Pair(a.to_string(), b.to_string()),
                        _ => return Err(err("link needs `all` or two node ids".into())),
                    };
                    let delay_ms = opts.get("delay").map(|v| num(v, "delay")).transpose()?.unwrap_or(10);
                    let drop_rate: f64 = match opts.get("drop") {
                        Some(v) => v.parse().map_err(|_| err(format!("drop: bad probability {v:?}")))?,
                        None => 0.0,
                    };
                    if !(0.0..=1.0).contains(&drop_rate) {
                        return Err(err("drop must be within [0, 1]".into()));
                    }
                    s.links.push((target, LinkConfig { delay_ms, drop_rate }));
                }
                "at" => {
                    let tick = num(pos.first().copied().unwrap_or(""), "tick")?;
                    let args = &pos[1..];
                    let fee = opts.get("fee").map(|v| num(v, "fee")).transpose()?.unwrap_or(0);
                    let need = |n: usize, usage: &str| -> Result<(), ScenarioError> {
                        if args.len() < n {
                            Err(ScenarioError::Parse {
                                line,
                                msg: format!("usage: at <tick> {usage}"),
                            })
                        } else {
                            Ok(())
                        }
                    };
                    let command = match args.first().copied() {
                        Some("funds") => {
                            need(4, "funds <from> <to> <amount>")?;
                            Command::Funds {
                                from: args[1].into(),
                                to: args[2].into(),
                                amount: num(args[3], "amount")?,
                                fee,
                                data: opts.get("data").map(|d| d.as_bytes().to_vec()).unwrap_or_default(),
                            }
                        }
                        Some("data") => {
                            need(4, "data <from> <to> <payload>")?;
                            Command::Data {
                                from: args[1].into(),
                                to: args[2].into(),
                                data: args[3].as_bytes().to_vec(),
                                fee,
                            }
                        }
                        Some("update") => {
                            need(4, "update <client> <target> <new data>")?;
                            Command::Update {
                                client: args[1].into(),
                                target: args[2].into(),
                                data: args[3].as_bytes().to_vec(),
                                reason: opts.get("reason").map(|r| r.as_bytes().to_vec()).unwrap_or_default(),
                                fee,
                            }
                        }
                        Some("erase") => {
                            need(3, "erase <client> <target>")?;
                            Command::Update {
                                client: args[1].into(),
                                target: args[2].into(),
                                data: Vec::new(),
                                reason: opts.get("reason").map(|r| r.as_bytes().to_vec()).unwrap_or_default(),
                                fee,
                            }
                        }
                        Some("mine") => {
                            need(2, "mine <node>")?;
                            Command::Mine(args[1].into())
                        }
                        Some("join") => {
                            need(2, "join <node>")?;
                            Command::Join {
                                node: args[1].into(),
                                from: opts.get("from").map(|f| f.to_string()),
                            }
                        }
                        Some("aggregate") => {
                            need(2, "aggregate <label>...")?;
                            Command::Aggregate(args[1..].iter().map(|a| a.to_string()).collect())
                        }
                        Some("tamper") => {
                            need(3, "tamper <node> <target>")?;
                            Command::Tamper {
                                node: args[1].into(),
                                target: args[2].into(),
                            }
                        }
                        other => return Err(err(format!("unknown command {other:?}"))),
                    };
                    s.events.push(Event {
                        tick,
                        command,
                        via: opts.get("via").map(|v| v.to_string()),
                        label: opts.get("as").map(|v| v.to_string()),
                        line,
                    });
                }
                other => return Err(err(format!("unknown directive {other:?}"))),
            }
        }
        if s.nodes.is_empty() {
            return Err(ScenarioError::Parse {
                line: 0,
                msg: "scenario declares no nodes".into(),
            });
        }
        s.events.sort_by_key(|e| e.tick);
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeReport {
    pub id: String,
    pub online: bool,
    pub height: u64,
    pub tip: Digest,
    pub dump_digest: Digest,
    pub chain_valid: bool,
    pub sync_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateReport {
    pub label: String,
    pub digest: Digest,
    /// Tip height of the receiving node when the update was submitted.
    pub submitted_height: u64,
    /// Height of the block carrying the update, per node.
    pub applied_heights: Vec<Option<u64>>,
    /// Blocks from submission until every participating node applied it.
    pub latency_blocks: Option<u64>,
    /// Simulated milliseconds until every live participant applied it.
    pub latency_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioReport {
    pub seed: u64,
    pub nodes: Vec<NodeReport>,
    pub updates: Vec<UpdateReport>,
    pub labels: BTreeMap<String, Digest>,
    pub notes: Vec<String>,
    /// `node<TAB>round<TAB>digest<TAB>step<TAB>verdict` for every mining
    /// decision.
    pub decisions: Vec<String>,
    pub trace_digest: Digest,
    pub converged: bool,
}

impl ScenarioReport {
    /// Tab-separated report, one record per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed\t{}", self.seed);
        for n in &self.nodes {
            let _ = writeln!(
                out,
                "node\t{}\tonline={}\theight={}\ttip={}\tdump={}\tvalid={}{}",
                n.id,
                n.online,
                n.height,
                n.tip,
                n.dump_digest,
                n.chain_valid,
                n.sync_error
                    .as_ref()
                    .map(|e| format!("\tsync_error={e}"))
                    .unwrap_or_default()
            );
        }
        for u in &self.updates {
            let opt = |v: Option<u64>| v.map_or("-".to_string(), |v| v.to_string());
            let _ = writeln!(
                out,
                "update\t{}\t{}\tsubmitted_height={}\tlatency_blocks={}\tlatency_ms={}",
                u.label,
                u.digest,
                u.submitted_height,
                opt(u.latency_blocks),
                opt(u.latency_ms)
            );
        }
        for (label, d) in &self.labels {
            let _ = writeln!(out, "label\t{label}\t{d}");
        }
        for note in &self.notes {
            let _ = writeln!(out, "note\t{note}");
        }
        for d in &self.decisions {
            let _ = writeln!(out, "decision\t{d}");
        }
        let _ = writeln!(out, "trace\t{}", self.trace_digest);
        let _ = writeln!(out, "converged\t{}", self.converged);
        out
    }
}

struct Runner {
    sim: SimNetwork,
    clients: BTreeMap<String, (ClientKeys, u32)>,
    labels: BTreeMap<String, Digest>,
    updates: Vec<(String, Digest, u64, u64)>,
    notes: Vec<String>,
    joined: Vec<bool>,
}

impl Runner {
    fn node(&self, id: &str, tick: u64) -> Result<usize, ScenarioError> {
        self.sim.index_of(id).ok_or_else(|| ScenarioError::Run {
            tick,
            msg: format!("unknown node {id:?}"),
        })
    }

    fn client(&mut self, name: &str, tick: u64) -> Result<&mut (ClientKeys, u32), ScenarioError> {
        self.clients.get_mut(name).ok_or_else(|| ScenarioError::Run {
            tick,
            msg: format!("unknown client {name:?}"),
        })
    }

    fn label(&self, label: &str, tick: u64) -> Result<Digest, ScenarioError> {
        self.labels.get(label).copied().ok_or_else(|| ScenarioError::Run {
            tick,
            msg: format!("unknown label {label:?}"),
        })
    }

    fn default_via(&self) -> usize {
        self.sim.nodes.iter().position(|n| n.is_active()).unwrap_or(0)
    }

    fn run_event(&mut self, ev: &Event, rng: &mut ChaCha20Rng) -> Result<(), ScenarioError> {
        let tick = ev.tick;
        let run_err = |msg: String| ScenarioError::Run { tick, msg };
        let via = match &ev.via {
            Some(v) => self.node(v, tick)?,
            None => self.default_via(),
        };
        let tx = match &ev.command {
            Command::Funds {
                from,
                to,
                amount,
                fee,
                data,
            } => {
                let to = self.client(to, tick)?.0.address();
                let (keys, cnt) = self.client(from, tick)?;
                *cnt += 1;
                Some(new_funds_tx(keys, to, *amount, *fee, *cnt, data.clone(), rng).map_err(|e| run_err(e.to_string()))?)
            }
            Command::Data { from, to, data, fee } => {
                let to = self.client(to, tick)?.0.address();
                let (keys, cnt) = self.client(from, tick)?;
                *cnt += 1;
                Some(new_data_tx(keys, to, *fee, *cnt, data.clone(), rng).map_err(|e| run_err(e.to_string()))?)
            }
            Command::Update {
                client,
                target,
                data,
                reason,
                fee,
            } => {
                let target = self.label(target, tick)?;
                let Some(current) = self.sim.nodes[via].stored_tx(&target) else {
                    self.notes.push(format!("{tick}: update of {target} skipped: target not stored at {}", self.sim.nodes[via].id));
                    return Ok(());
                };
                let keys = &self.client(client, tick)?.0;
                let u = make_update(&current, data.clone(), reason.clone(), *fee, keys, rng)
                    .map_err(|e| run_err(e.to_string()))?;
                Some(Transaction::Update(u))
            }
            Command::Aggregate(labels) => {
                let mut funds = Vec::new();
                let mut datas = Vec::new();
                for l in labels {
                    let d = self.label(l, tick)?;
                    match self.sim.nodes[via].stored_tx(&d) {
                        Some(Transaction::Funds(f)) => funds.push((f, d)),
                        Some(Transaction::Data(t)) => datas.push((t, d)),
                        Some(_) => return Err(run_err(format!("{l} is not a funds or data transaction"))),
                        None => {
                            self.notes.push(format!(
                                "{tick}: aggregation skipped: {l} not stored at {}",
                                self.sim.nodes[via].id
                            ));
                            return Ok(());
                        }
                    }
                }
                let agg = match (funds.is_empty(), datas.is_empty()) {
                    (false, true) => aggregate_funds(&funds),
                    (true, false) => aggregate_data(&datas),
                    _ => return Err(run_err("cannot mix funds and data in one aggregation".into())),
                };
                match agg {
                    Ok(a) => Some(Transaction::Agg(a)),
                    Err(e) => {
                        self.notes.push(format!("{tick}: aggregation refused: {e}"));
                        return Ok(());
                    }
                }
            }
            Command::Mine(node) => {
                let n = self.node(node, tick)?;
                if self.sim.nodes[n].is_active() {
                    self.sim.mine(n).map_err(|e| run_err(e.to_string()))?;
                }
                None
            }
            Command::Join { node, from } => {
                let n = self.node(node, tick)?;
                let peer = match from {
                    Some(p) => self.node(p, tick)?,
                    None => self
                        .sim
                        .peers(n)
                        .into_iter()
                        .find(|&p| self.sim.nodes[p].is_active())
                        .ok_or_else(|| run_err(format!("{node} has no active peer")))?,
                };
                self.joined[n] = true;
                self.sim.join(n, peer);
                None
            }
            Command::Tamper { node, target } => {
                let n = self.node(node, tick)?;
                let d = self.label(target, tick)?;
                if !self.sim.nodes[n].tamper(&d) {
                    self.notes.push(format!("{tick}: tamper of {d} at {node} had no effect"));
                }
                None
            }
        };
        if let Some(tx) = tx {
            let is_update = tx.kind() == crate::tx::TxKind::Update;
            let height = self.sim.nodes[via].height();
            match self.sim.submit(via, tx) {
                Ok(d) => {
                    if let Some(l) = &ev.label {
                        self.labels.insert(l.clone(), d);
                    }
                    if is_update {
                        let label = ev.label.clone().unwrap_or_else(|| d.to_hex()[..12].to_string());
                        self.updates.push((label, d, height, tick));
                    }
                }
                Err(e) => self.notes.push(format!("{tick}: submission at line {} refused: {e}", ev.line)),
            }
        }
        Ok(())
    }

    fn mine_round_robin(&mut self) -> Result<(), ScenarioError> {
        let active: Vec<usize> = (0..self.sim.nodes.len()).filter(|&i| self.sim.nodes[i].is_active()).collect();
        if active.is_empty() {
            return Ok(());
        }
        let height = active.iter().map(|&i| self.sim.nodes[i].height()).max().unwrap_or(0);
        let proposer = active[((height + 1) % active.len() as u64) as usize];
        if self.sim.nodes[proposer].height() < height {
            self.notes.push(format!(
                "{}: proposer {} behind at height {}, slot skipped",
                self.sim.now(),
                self.sim.nodes[proposer].id,
                self.sim.nodes[proposer].height()
            ));
            self.sim.exchange_tips(proposer);
            return Ok(());
        }
        self.sim.mine(proposer).map_err(|e| ScenarioError::Run {
            tick: self.sim.now(),
            msg: e.to_string(),
        })?;
        Ok(())
    }
}

/// Runs `scenario` with the given seed (overriding the script's) and
/// reports every node's final state.
pub fn run_scenario(scenario: &Scenario, seed: Option<u64>) -> Result<ScenarioReport, ScenarioError> {
    let seed = seed.unwrap_or(scenario.seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let setup_err = |msg: String| ScenarioError::Run { tick: 0, msg };
    let mut clients = BTreeMap::new();
    let mut genesis = Genesis::default();
    for (name, balance) in &scenario.clients {
        let keys = ClientKeys::generate(scenario.bits, &mut rng).map_err(|e| setup_err(e.to_string()))?;
        let account = AccountTx::create(&keys, 0, Vec::new(), &mut rng).map_err(|e| setup_err(e.to_string()))?;
        genesis.accounts.push((account, *balance));
        clients.insert(name.clone(), (keys, 0u32));
    }
    let config = NodeConfig {
        public_mode: scenario.public_mode,
        consensus: scenario.consensus,
    };
    let mut sim = SimNetwork::new(seed ^ 0x5eed_5eed_5eed_5eed);
    sim.set_retry_ms(scenario.retry_ms);
    let mut joined = Vec::new();
    for (id, late) in &scenario.nodes {
        let mut node = Node::new(id.clone(), &genesis, config).map_err(|e| setup_err(e.to_string()))?;
        node.online = !late;
        sim.add_node(node);
        joined.push(!late);
    }
    for (target, link) in &scenario.links {
        match target {
            LinkTarget::All => sim.connect_all(*link),
            LinkTarget::Pair(a, b) => {
                let (a, b) = (
                    sim.index_of(a).ok_or_else(|| setup_err(format!("unknown node {a:?}")))?,
                    sim.index_of(b).ok_or_else(|| setup_err(format!("unknown node {b:?}")))?,
                );
                sim.connect(a, b, *link);
            }
        }
    }
    let mut runner = Runner {
        sim,
        clients,
        labels: BTreeMap::new(),
        updates: Vec::new(),
        notes: Vec::new(),
        joined,
    };

    let last_event = scenario.events.last().map_or(0, |e| e.tick);
    let auto = match (scenario.consensus.mode, scenario.block_time) {
        (ConsensusMode::RoundRobin, Some(bt)) if bt > 0 => Some(bt),
        _ => None,
    };
    let end = scenario
        .end
        .unwrap_or(last_event + auto.map_or(1_000, |bt| 3 * bt));
    let mut events = scenario.events.iter().peekable();
    let mut next_block = auto;
    loop {
        let next_event = events.peek().map(|e| e.tick);
        let next = match (next_event, next_block) {
            (Some(e), Some(b)) => e.min(b),
            (Some(e), None) => e,
            (None, Some(b)) if b <= end => b,
            _ => break,
        };
        if next > end && next_event.is_none_or(|e| e > end) {
            break;
        }
        runner.sim.run_until(next);
        if next_event == Some(next) {
            let ev = events.next().expect("peeked");
            runner.run_event(ev, &mut rng)?;
        } else if let (Some(b), Some(bt)) = (next_block, auto) {
            runner.mine_round_robin()?;
            next_block = Some(b + bt);
        }
    }
    runner.sim.run_until(end);
    runner.sim.run_until_quiet(60_000);
    for _ in 0..10 {
        let active: Vec<usize> = (0..runner.sim.nodes.len()).filter(|&i| runner.sim.nodes[i].is_active()).collect();
        let top = active.iter().map(|&i| runner.sim.nodes[i].height()).max().unwrap_or(0);
        let behind: Vec<usize> = active.into_iter().filter(|&i| runner.sim.nodes[i].height() < top).collect();
        if behind.is_empty() {
            break;
        }
        for i in behind {
            runner.sim.exchange_tips(i);
        }
        runner.sim.run_until_quiet(60_000);
    }

    let nodes: Vec<NodeReport> = runner
        .sim
        .nodes
        .iter()
        .map(|n| NodeReport {
            id: n.id.clone(),
            online: n.online,
            height: n.height(),
            tip: n.tip_key(),
            dump_digest: n.store.dump_digest(),
            chain_valid: validate_chain(&load_chain(&n.store), &config.consensus, &n.store, &n.store).is_ok(),
            sync_error: n.sync_error.as_ref().map(ToString::to_string),
        })
        .collect();
    let participants: Vec<usize> = (0..nodes.len()).filter(|&i| runner.joined[i]).collect();
    let converged = participants.windows(2).all(|w| {
        let (a, b) = (&nodes[w[0]], &nodes[w[1]]);
        a.tip == b.tip && a.dump_digest == b.dump_digest
    }) && participants
        .iter()
        .all(|&i| nodes[i].chain_valid && nodes[i].sync_error.is_none());

    let updates = runner
        .updates
        .iter()
        .map(|(label, d, submitted_height, tick)| {
            let applied: Vec<Option<(u64, u64)>> = runner
                .sim
                .nodes
                .iter()
                .map(|n| n.applied_updates.get(d).copied())
                .collect();
            let part: Vec<Option<(u64, u64)>> = participants.iter().map(|&i| applied[i]).collect();
            let all_applied = part.iter().all(Option::is_some) && !part.is_empty();
            let latency_blocks = all_applied
                .then(|| part.iter().flatten().map(|(h, _)| h.saturating_sub(*submitted_height)).max())
                .flatten();
            let latency_ms = all_applied
                .then(|| {
                    part.iter()
                        .flatten()
                        .filter(|(_, t)| *t > 0)
                        .map(|(_, t)| t.saturating_sub(*tick))
                        .max()
                })
                .flatten();
            UpdateReport {
                label: label.clone(),
                digest: *d,
                submitted_height: *submitted_height,
                applied_heights: applied.iter().map(|a| a.map(|(h, _)| h)).collect(),
                latency_blocks,
                latency_ms,
            }
        })
        .collect();

    let decisions = runner
        .sim
        .nodes
        .iter()
        .flat_map(|n| n.decision_log.iter().map(move |l| format!("{}\t{l}", n.id)))
        .collect();
    Ok(ScenarioReport {
        seed,
        decisions,
        nodes,
        updates,
        labels: runner.labels,
        notes: runner.notes,
        trace_digest: inner_hash(runner.sim.trace.join("\n").as_bytes()),
        converged,
    })
}
