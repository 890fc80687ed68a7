use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use redchain::explorer::{to_json, BlockRecord, TxRecord};
use redchain::ledger::{self, AccountLookup, ConsensusConfig, ConsensusMode};
use redchain::miner::{digest_of, mining_round, Genesis, NodeConfig, OpenTxPool};
use redchain::network::{run_scenario, Scenario, ScenarioError};
use redchain::storage::{KvRead, Store, BUCKET_META};
use redchain::tx::{new_data_tx, new_funds_tx, AccountTx, TxError};
use redchain::{make_update, ChfError, ClientKeys, Digest, Transaction};

use crate::pool::PoolFile;
use crate::{AccountCmd, Cli, CliError, Command, GlobalOpts, SendCmd};

const KEY_FILE: &str = "account.key";
const TX_FILE: &str = "account.tx";
const META_CONFIG: &[u8] = b"config";

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Account(AccountCmd::Create { out, bits, fee, force }) => account_create(g, &out, bits, fee, force),
        Command::Account(AccountCmd::Address { keys }) => {
            println!("{}", load_keys(&keys)?.address());
            Ok(())
        }
        Command::Init { accounts, timestamp } => init(g, &accounts, timestamp),
        Command::Submit { file } => {
            let bytes = fs::read(&file)?;
            let tx = Transaction::decode(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
            queue(g, tx)
        }
        Command::Send(cmd) => send(g, cmd),
        Command::Update {
            keys,
            target,
            data,
            erase,
            reason,
            fee,
        } => {
            let new_data = if erase { Vec::new() } else { data.unwrap_or_default().into_bytes() };
            update(g, &keys, target, new_data, reason.into_bytes(), fee)
        }
        Command::Mine { timestamp } => mine(g, timestamp),
        Command::Explore { selector } => explore(g, &selector),
        Command::Dump => {
            let store = open_chain(g)?;
            print!("{}", store.dump());
            println!("dump_digest\t{}", store.dump_digest());
            Ok(())
        }
        Command::Validate => validate(g),
        Command::Simulate { file } => simulate(g, &file),
    }
}

fn store_path(g: &GlobalOpts) -> PathBuf {
    if let Some(p) = &g.store {
        return p.clone();
    }
    match std::env::var_os("CHAIN_HOME") {
        Some(home) => PathBuf::from(home).join("chain.db"),
        None => PathBuf::from(".redchain").join("chain.db"),
    }
}

fn rng(g: &GlobalOpts) -> ChaCha20Rng {
    match g.seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}

fn open_chain(g: &GlobalOpts) -> Result<Store> {
    let path = store_path(g);
    if !path.exists() {
        return Err(CliError::NotFound(format!("no store at {}; run `init` first", path.display())));
    }
    let store = Store::open(&path)?;
    if ledger::chain_height(&store).is_none() {
        return Err(CliError::NotFound(format!("store {} has no genesis block", path.display())));
    }
    Ok(store)
}

fn encode_config(c: &NodeConfig) -> Vec<u8> {
    let mode = match c.consensus.mode {
        ConsensusMode::ProofOfWork => 0,
        ConsensusMode::RoundRobin => 1,
    };
    vec![mode, c.consensus.difficulty, u8::from(c.public_mode)]
}

fn decode_config(bytes: &[u8]) -> Option<NodeConfig> {
    let [mode, difficulty, public] = *bytes else {
        return None;
    };
    let consensus = match mode {
        0 => ConsensusConfig::pow(difficulty),
        1 => ConsensusConfig::round_robin(),
        _ => return None,
    };
    Some(NodeConfig {
        public_mode: public != 0,
        consensus,
    })
}

/// Stored chain settings, with any command-line flags taking precedence.
fn node_config(g: &GlobalOpts, store: Option<&Store>) -> NodeConfig {
    let mut c = store
        .and_then(|s| s.read(BUCKET_META, META_CONFIG))
        .and_then(decode_config)
        .unwrap_or_default();
    if let Some(mode) = g.consensus {
        c.consensus = match mode.into() {
            ConsensusMode::ProofOfWork => ConsensusConfig::pow(c.consensus.difficulty.max(1)),
            ConsensusMode::RoundRobin => ConsensusConfig::round_robin(),
        };
    }
    if let Some(d) = g.difficulty {
        if c.consensus.mode == ConsensusMode::ProofOfWork {
            c.consensus = ConsensusConfig::pow(d);
        }
    }
    c.public_mode |= g.public_mode;
    c
}

fn key_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(KEY_FILE)
    } else {
        path.to_path_buf()
    }
}

fn load_keys(path: &Path) -> Result<ClientKeys> {
    let file = key_file(path);
    let bytes = fs::read(&file).map_err(|e| CliError::NotFound(format!("{}: {e}", file.display())))?;
    ClientKeys::decode_secret(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))
}

fn account_create(g: &GlobalOpts, out: &Path, bits: u64, fee: u64, force: bool) -> Result<()> {
    let key_path = out.join(KEY_FILE);
    let tx_path = out.join(TX_FILE);
    if !force {
        if let Some(p) = [&key_path, &tx_path].into_iter().find(|p| p.exists()) {
            return Err(CliError::Rejected(format!("{} exists (use --force to overwrite)", p.display())));
        }
    }
    let mut rng = rng(g);
    let keys = ClientKeys::generate(bits, &mut rng).map_err(|e| CliError::Usage(e.to_string()))?;
    let tx = AccountTx::create(&keys, fee, Vec::new(), &mut rng).map_err(|e| CliError::Failed(e.to_string()))?;
    let Transaction::Account(a) = &tx else { unreachable!() };
    let digest = tx.tx_hash(&a.parameters).map_err(|e| CliError::Failed(e.to_string()))?;
    fs::create_dir_all(out)?;
    fs::write(&key_path, keys.encode_secret().map_err(|e| CliError::Failed(e.to_string()))?)?;
    fs::write(&tx_path, tx.encode())?;
    println!("address\t{}", keys.address());
    println!("account_tx\t{digest}");
    Ok(())
}

fn init(g: &GlobalOpts, accounts: &[(PathBuf, u64)], timestamp: u64) -> Result<()> {
    let path = store_path(g);
    let mut store = Store::open(&path)?;
    if ledger::chain_height(&store).is_some() {
        return Err(CliError::Rejected(format!("{} is already initialized", path.display())));
    }
    let config = node_config(g, None);
    let mut genesis = Genesis {
        timestamp,
        accounts: Vec::new(),
    };
    for (dir, balance) in accounts {
        let file = dir.join(TX_FILE);
        let bytes = fs::read(&file).map_err(|e| CliError::NotFound(format!("{}: {e}", file.display())))?;
        let tx = Transaction::decode(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
        genesis.accounts.push((tx, *balance));
    }
    let block = genesis
        .install(&mut store)
        .map_err(|e| CliError::Rejected(e.to_string()))?;
    store.put(BUCKET_META, META_CONFIG, &encode_config(&config))?;
    store.close()?;
    PoolFile::for_store(&path).save(&[])?;
    println!("genesis\t{}", block.hash());
    Ok(())
}

fn queue(g: &GlobalOpts, tx: Transaction) -> Result<()> {
    let store = open_chain(g)?;
    let pool = PoolFile::for_store(&store_path(g));
    let digest = digest_of(&tx, &store)
        .ok_or_else(|| CliError::Rejected("issuer account unknown or parameters invalid".into()))?;
    let pending = pool.load()?;
    if pending.iter().any(|p| digest_of(p, &store) == Some(digest)) || store.read_tx_any(&digest).is_some() {
        return Err(CliError::Rejected(format!("{digest} already known")));
    }
    pool.push(tx)?;
    println!("{digest}");
    Ok(())
}

fn send(g: &GlobalOpts, cmd: SendCmd) -> Result<()> {
    let (keys_path, to) = match &cmd {
        SendCmd::Funds { keys, to, .. } | SendCmd::Data { keys, to, .. } => (keys, *to),
    };
    let keys = load_keys(keys_path)?;
    let store = open_chain(g)?;
    let sender = keys.address();
    let committed = store
        .account(&sender)
        .ok_or_else(|| CliError::Rejected(format!("account {sender} not on chain")))?
        .tx_cnt;
    let queued = PoolFile::for_store(&store_path(g))
        .load()?
        .iter()
        .filter(|t| matches!(t, Transaction::Funds(_) | Transaction::Data(_)) && t.owner() == Some(sender))
        .count() as u32;
    let tx_cnt = committed + queued + 1;
    let mut rng = rng(g);
    let tx = match cmd {
        SendCmd::Funds { amount, data, fee, .. } => {
            new_funds_tx(&keys, to, amount, fee, tx_cnt, data.into_bytes(), &mut rng)
        }
        SendCmd::Data { data, fee, .. } => new_data_tx(&keys, to, fee, tx_cnt, data.into_bytes(), &mut rng),
    }
    .map_err(|e| CliError::Failed(e.to_string()))?;
    drop(store);
    queue(g, tx)
}

fn update(g: &GlobalOpts, keys: &Path, target: Digest, new_data: Vec<u8>, reason: Vec<u8>, fee: u64) -> Result<()> {
    let keys = load_keys(keys)?;
    let store = open_chain(g)?;
    if node_config(g, Some(&store)).public_mode && fee == 0 {
        return Err(CliError::Rejected("updates need a positive --fee in public mode".into()));
    }
    let (_, body) = store
        .read_tx_any(&target)
        .ok_or_else(|| CliError::NotFound(format!("transaction {target} not found")))?;
    let original = Transaction::decode(body).map_err(|e| CliError::Failed(e.to_string()))?;
    match original.owner() {
        None => return Err(CliError::Rejected(format!("{target} has no data to update"))),
        Some(owner) if owner != keys.address() => {
            return Err(CliError::Rejected(format!("{target} is owned by {owner}")))
        }
        Some(_) => {}
    }
    let u = make_update(&original, new_data, reason, fee, &keys, &mut rng(g)).map_err(|e| match e {
        TxError::Chf(ChfError::MissingTrapdoor) => CliError::Rejected("keys lack the trapdoor".into()),
        other => CliError::Rejected(other.to_string()),
    })?;
    if u.tx_to_update_hash != target {
        return Err(CliError::Rejected(format!("{target} is not the stored digest of that body")));
    }
    drop(store);
    queue(g, u.into())
}

fn mine(g: &GlobalOpts, timestamp: Option<u64>) -> Result<()> {
    let path = store_path(g);
    let mut store = open_chain(g)?;
    let config = node_config(g, Some(&store));
    let pool_file = PoolFile::for_store(&path);
    let mut pool = OpenTxPool::new();
    let mut unknown = 0;
    for tx in pool_file.load()? {
        match digest_of(&tx, &store) {
            Some(d) => {
                pool.insert(d, tx);
            }
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        eprintln!("dropped {unknown} queued transaction(s) from unknown issuers");
    }
    let timestamp = timestamp.unwrap_or_else(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let round = ledger::chain_height(&store).unwrap_or(0) + 1;
    let outcome = mining_round(&mut pool, &mut store, &config, timestamp, round)?;
    pool_file.save(&[])?;
    store.close()?;
    for d in &outcome.decisions {
        println!("{}", d.log_line());
    }
    println!(
        "block\t{}\t{}\t{}",
        outcome.block.height,
        outcome.key,
        outcome.block.txs.len()
    );
    Ok(())
}

fn explore(g: &GlobalOpts, selector: &str) -> Result<()> {
    let store = open_chain(g)?;
    let not_found = || CliError::NotFound(format!("{selector} not found"));
    if selector.len() < 64 {
        let height: u64 = selector
            .parse()
            .map_err(|_| CliError::Usage(format!("{selector:?} is neither a height nor a digest")))?;
        let key = ledger::block_key_at(&store, height).ok_or_else(not_found)?;
        let block = ledger::load_block(&store, &key).ok_or_else(not_found)?;
        println!("{}", to_json(&BlockRecord::from_block(&block, key)));
        return Ok(());
    }
    let digest = Digest::from_hex(selector).ok_or_else(|| CliError::Usage(format!("{selector:?} is not a digest")))?;
    if let Some((_, body)) = store.read_tx_any(&digest) {
        let tx = Transaction::decode(body).map_err(|e| CliError::Failed(e.to_string()))?;
        println!("{}", to_json(&TxRecord::from_tx(&tx, digest)));
    } else if let Some(block) = ledger::load_block(&store, &digest) {
        println!("{}", to_json(&BlockRecord::from_block(&block, digest)));
    } else {
        return Err(not_found());
    }
    Ok(())
}

fn validate(g: &GlobalOpts) -> Result<()> {
    let store = open_chain(g)?;
    let config = node_config(g, Some(&store));
    let blocks = ledger::load_chain(&store);
    match ledger::validate_chain(&blocks, &config.consensus, &store, &store) {
        Ok(()) => {
            println!("valid\theight={}", blocks.len().saturating_sub(1));
            Ok(())
        }
        Err(v) => {
            println!("invalid\theight={}\t{:?}", v.height, v.kind);
            Err(CliError::Failed(String::new()))
        }
    }
}

fn simulate(g: &GlobalOpts, file: &Path) -> Result<()> {
    let text = fs::read_to_string(file).map_err(|e| CliError::NotFound(format!("{}: {e}", file.display())))?;
    let scenario = Scenario::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
    let report = run_scenario(&scenario, g.seed).map_err(|e| match e {
        ScenarioError::Parse { .. } => CliError::Usage(e.to_string()),
        ScenarioError::Run { .. } => CliError::Failed(e.to_string()),
    })?;
    print!("{}", report.render());
    if report.converged {
        Ok(())
    } else {
        Err(CliError::Failed("nodes diverged".into()))
    }
}
