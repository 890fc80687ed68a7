use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

struct Env {
    dir: TempDir,
    extra: Vec<String>,
}

impl Env {
    fn new() -> Self {
        Self {
            dir: TempDir::new().unwrap(),
            extra: Vec::new(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_redchain"))
            .current_dir(self.dir.path())
            .env("CHAIN_HOME", self.path("home"))
            .args(&self.extra)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn code(&self, args: &[&str]) -> i32 {
        self.run(args).status.code().unwrap()
    }

    fn account(&self, name: &str, seed: u64) -> String {
        let out = self.ok(&["--seed", &seed.to_string(), "account", "create", "--out", name, "--bits", "64"]);
        field(&out, "address")
    }

    /// Two accounts `a` and `b` founded with 100 and 50.
    fn chain(flags: &[&str]) -> (Self, String, String) {
        let mut env = Self::new();
        let a = env.account("a", 1);
        let b = env.account("b", 2);
        env.extra = flags.iter().map(|s| s.to_string()).collect();
        env.ok(&["--difficulty", "4", "init", "--account", "a=100", "--account", "b=50"]);
        (env, a, b)
    }
}

fn field(out: &str, name: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(name)?.strip_prefix('\t'))
        .unwrap_or_else(|| panic!("no {name} in {out}"))
        .to_string()
}

fn json(out: &str) -> Value {
    serde_json::from_str(out).unwrap()
}

#[test]
fn account_create_writes_files_and_refuses_overwrite() {
    let env = Env::new();
    env.account("a", 1);
    assert!(env.path("a/account.key").exists());
    assert!(env.path("a/account.tx").exists());
    assert_eq!(env.code(&["account", "create", "--out", "a", "--bits", "64"]), 4);
    env.ok(&["account", "create", "--out", "a", "--bits", "64", "--force"]);
}

#[test]
fn created_account_carries_no_trapdoor() {
    let (env, a, _) = Env::chain(&[]);
    let genesis = json(&env.ok(&["explore", "0"]));
    let digest = genesis["account_tx_list"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| json(&env.ok(&["explore", d.as_str().unwrap()])))
        .find(|r| r["issuer"] == a.as_str())
        .unwrap();
    let params = digest["parameters"].as_object().unwrap();
    let mut names: Vec<&str> = params.keys().map(String::as_str).collect();
    names.sort_unstable();
    assert_eq!(names, ["g", "hk", "p", "q"]);
}

#[test]
fn send_update_and_explore() {
    let (env, _, b) = Env::chain(&[]);
    let funds = env.ok(&["send", "funds", "--keys", "a", "--to", &b, "--amount", "5"]);
    let data = env.ok(&["send", "data", "--keys", "a", "--to", &b, "--data", "Alise"]);
    let (funds, data) = (funds.trim(), data.trim());
    let mined = env.ok(&["mine", "--timestamp", "1"]);
    assert_eq!(mined.matches("\tok").count(), 2, "{mined}");

    let u = env.ok(&[
        "update", "--keys", "a", "--target", data, "--data", "Alice", "--reason", "typo fix", "--fee", "1",
    ]);
    let mined = env.ok(&["mine", "--timestamp", "2"]);
    assert!(mined.contains(&format!("{}\t5\tok", u.trim())), "{mined}");

    let tx = json(&env.ok(&["explore", data]));
    assert_eq!(tx["data_text"], "Alice");
    let record = json(&env.ok(&["explore", u.trim()]));
    assert_eq!(record["type"], "update");
    assert_eq!(record["reason_text"], "typo fix");
    assert_eq!(record["target_hash"], data);
    assert_eq!(record["issuer"].as_str().unwrap().len(), 64);
    assert_eq!(record["fee"], 1);
    assert_eq!(record["new_data_text"], "Alice");

    let block = json(&env.ok(&["explore", "2"]));
    assert_eq!(block["nr_update_tx"], 1);
    assert_eq!(block["update_tx_list"].as_array().unwrap().len(), 1);
    assert_eq!(json(&env.ok(&["explore", "1"]))["funds_tx_list"][0], funds);
    env.ok(&["validate"]);

    env.ok(&["update", "--keys", "a", "--target", data, "--erase", "--reason", "gdpr"]);
    env.ok(&["mine", "--timestamp", "3"]);
    let tx = json(&env.ok(&["explore", data]));
    assert_eq!(tx["data"], "");
    env.ok(&["validate"]);
}

#[test]
fn not_found_usage_and_rejection_codes() {
    let (env, _, b) = Env::chain(&[]);
    let unknown = "ab".repeat(32);
    assert_eq!(env.code(&["explore", &unknown]), 3);
    assert_eq!(env.code(&["explore", "99"]), 3);
    assert_eq!(env.code(&["send", "funds", "--keys", "a", "--to", "zz", "--amount", "1"]), 2);
    assert_eq!(env.code(&["update", "--keys", "a", "--target", &unknown, "--data", "x"]), 3);
    let d = env.ok(&["send", "data", "--keys", "a", "--to", &b, "--data", "x"]);
    env.ok(&["mine", "--timestamp", "1"]);
    assert_eq!(env.code(&["update", "--keys", "b", "--target", d.trim(), "--data", "y"]), 4);
    assert_eq!(env.code(&["frobnicate"]), 2);

    let bare = Env::new();
    assert_eq!(bare.code(&["dump"]), 3);
}

#[test]
fn insufficient_balance_shows_in_decision_log() {
    let (env, _, b) = Env::chain(&[]);
    let d = env.ok(&["send", "funds", "--keys", "a", "--to", &b, "--amount", "1000"]);
    let mined = env.ok(&["mine", "--timestamp", "1"]);
    assert!(mined.contains(&format!("{}\t0\treject:insufficient_balance", d.trim())), "{mined}");
}

#[test]
fn public_mode_requires_update_fee() {
    let (env, _, b) = Env::chain(&["--public-mode"]);
    let d = env.ok(&["send", "data", "--keys", "a", "--to", &b, "--data", "x"]);
    env.ok(&["mine", "--timestamp", "1"]);
    assert_eq!(env.code(&["update", "--keys", "a", "--target", d.trim(), "--data", "y", "--fee", "0"]), 4);
    env.ok(&["update", "--keys", "a", "--target", d.trim(), "--data", "y", "--fee", "2"]);
}

#[test]
fn explorer_record_round_trips_to_stored_bytes() {
    let (env, _, b) = Env::chain(&[]);
    let d = env.ok(&["send", "funds", "--keys", "a", "--to", &b, "--amount", "3", "--data", "memo"]);
    env.ok(&["mine", "--timestamp", "1"]);
    let text = env.ok(&["explore", d.trim()]);
    let record: redchain::explorer::TxRecord = serde_json::from_str(&text).unwrap();
    let rebuilt = record.to_tx().unwrap();
    let store = redchain::storage::Store::open(env.path("home/chain.db")).unwrap();
    let digest = redchain::Digest::from_hex(d.trim()).unwrap();
    let (_, body) = redchain::storage::KvRead::read_tx_any(&store, &digest).unwrap();
    let stored = redchain::Transaction::decode(body).unwrap();
    assert_eq!(rebuilt.message_bytes(), stored.message_bytes());
    assert_eq!(rebuilt.encode(), body);
}

#[test]
fn dump_is_stable_across_reopen() {
    let (env, _, b) = Env::chain(&["--store", "custom.db"]);
    assert!(env.path("custom.db").exists());
    env.ok(&["send", "data", "--keys", "a", "--to", &b, "--data", "x"]);
    env.ok(&["mine", "--timestamp", "1"]);
    let first = env.ok(&["dump"]);
    assert_eq!(first, env.ok(&["dump"]));
    assert_eq!(field(&first, "dump_digest").len(), 64);
}

const SCENARIO: &str = r#"
bits 64
consensus roundrobin
blocktime 1000
node n1
node n2
node n3
client alice balance=100
client bob balance=100
link all delay=20
at 100 data alice bob "Alise" fee=1 as=t1
at 2500 update alice t1 "Alice" reason="typo fix" fee=1
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn simulate_converges_and_is_reproducible() {
    let env = Env::new();
    let file = write(env.dir.path(), "s.txt", SCENARIO);
    let a = env.ok(&["--seed", "3", "simulate", &file]);
    assert_eq!(a, env.ok(&["--seed", "3", "simulate", &file]));
    let dumps: Vec<&str> = a
        .lines()
        .filter(|l| l.starts_with("node\t"))
        .map(|l| l.split('\t').find(|f| f.starts_with("dump=")).unwrap())
        .collect();
    assert_eq!(dumps.len(), 3);
    assert!(dumps.iter().all(|d| *d == dumps[0]), "{a}");
}

#[test]
fn simulate_divergence_and_malformed_exit_codes() {
    let env = Env::new();
    let bad = write(env.dir.path(), "bad.txt", &format!("{SCENARIO}at 4000 tamper n2 t1\n"));
    assert_eq!(env.code(&["--seed", "3", "simulate", &bad]), 1);
    let broken = write(env.dir.path(), "broken.txt", "node a\nat x mine a\n");
    assert_eq!(env.code(&["simulate", &broken]), 2);
}

fn occurrences(haystack: &[u8], needle: &[u8]) -> usize {
    haystack.windows(needle.len()).filter(|w| *w == needle).count()
}

#[test]
fn erased_value_survives_only_in_update_bodies() {
    let (env, _, b) = Env::chain(&[]);
    let original = "Alise Example, 1990-01-01";
    let rectified = "Alice Example, 1990-01-01";
    let d = env.ok(&["send", "data", "--keys", "a", "--to", &b, "--data", original]);
    let d = d.trim();
    env.ok(&["mine", "--timestamp", "1"]);
    let fix = env.ok(&["update", "--keys", "a", "--target", d, "--data", rectified, "--reason", "typo fix", "--fee", "1"]);
    env.ok(&["mine", "--timestamp", "2"]);
    env.ok(&["update", "--keys", "a", "--target", d, "--erase", "--reason", "erasure request", "--fee", "1"]);
    env.ok(&["mine", "--timestamp", "3"]);
    assert_eq!(json(&env.ok(&["explore", d]))["data"], "");

    let file = std::fs::read(env.path("home/chain.db")).unwrap();
    assert_eq!(occurrences(&file, original.as_bytes()), 0);
    let store = redchain::storage::Store::open(env.path("home/chain.db")).unwrap();
    let fix_digest = redchain::Digest::from_hex(fix.trim()).unwrap();
    let fix_body = redchain::storage::KvRead::read(&store, "updatetx", fix_digest.as_bytes()).unwrap();
    assert_eq!(occurrences(fix_body, rectified.as_bytes()), 1);
    assert_eq!(occurrences(&file, fix_body), 1);
    assert_eq!(occurrences(&file, rectified.as_bytes()), 1);
}
