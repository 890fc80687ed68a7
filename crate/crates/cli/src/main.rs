//! `redchain`: accounts, transactions, updates and erasures, mining, a JSON
//! explorer and the network simulator, against a local store file.
//!
//! Exit codes: 0 ok, 1 invalid chain or diverged simulation, 2 usage,
//! 3 not found, 4 rejected.

mod commands;
mod pool;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use redchain::ledger::ConsensusMode;
use redchain::Digest;

#[derive(Debug, Parser)]
#[command(name = "redchain", version, about = "Redactable blockchain node and client")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Store file. Defaults to `$CHAIN_HOME/chain.db`, else `.redchain/chain.db`.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Seed for key generation and check strings (entropy when absent).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Require a positive fee on every update.
    #[arg(long, global = true)]
    pub public_mode: bool,
    /// Proof-of-work difficulty in leading zero bits.
    #[arg(long, global = true)]
    pub difficulty: Option<u8>,
    #[arg(long, global = true, value_enum)]
    pub consensus: Option<ConsensusArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ConsensusArg {
    Pow,
    Roundrobin,
}

impl From<ConsensusArg> for ConsensusMode {
    fn from(c: ConsensusArg) -> Self {
        match c {
            ConsensusArg::Pow => ConsensusMode::ProofOfWork,
            ConsensusArg::Roundrobin => ConsensusMode::RoundRobin,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Key and account management.
    #[command(subcommand)]
    Account(AccountCmd),
    /// Create the store with a genesis block founding the given accounts.
    Init {
        /// `DIR=BALANCE`, where DIR holds `account.tx`.
        #[arg(long = "account", value_parser = parse_genesis_account, required = true)]
        accounts: Vec<(PathBuf, u64)>,
        #[arg(long, default_value_t = 0)]
        timestamp: u64,
    },
    /// Queue an encoded transaction file for the next block.
    Submit { file: PathBuf },
    /// Build, sign and queue a transaction.
    #[command(subcommand)]
    Send(SendCmd),
    /// Rewrite or erase the data of one of your stored transactions.
    Update {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long, value_parser = parse_digest)]
        target: Digest,
        #[arg(long, conflicts_with = "erase", required_unless_present = "erase")]
        data: Option<String>,
        #[arg(long)]
        erase: bool,
        #[arg(long, default_value = "")]
        reason: String,
        #[arg(long, default_value_t = 0)]
        fee: u64,
    },
    /// Mine one block from the queued transactions and print the decisions.
    Mine {
        /// Block timestamp in seconds (wall clock when absent).
        #[arg(long)]
        timestamp: Option<u64>,
    },
    /// Print a block (by height) or a transaction or block (by digest) as JSON.
    Explore { selector: String },
    /// Print every stored record, one per line, and the dump digest.
    Dump,
    /// Check every block link, proof of work and Merkle root.
    Validate,
    /// Run a network scenario file and print the report.
    Simulate { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum AccountCmd {
    /// Generate keys and a signed account transaction.
    Create {
        #[arg(long)]
        out: PathBuf,
        /// Bit length of the chameleon hash group.
        #[arg(long, default_value_t = 512)]
        bits: u64,
        #[arg(long, default_value_t = 0)]
        fee: u64,
        /// Overwrite existing files.
        #[arg(long)]
        force: bool,
    },
    /// Print the address of a key directory.
    Address { keys: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum SendCmd {
    Funds {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long, value_parser = parse_digest)]
        to: Digest,
        #[arg(long)]
        amount: u64,
        #[arg(long, default_value = "")]
        data: String,
        #[arg(long, default_value_t = 1)]
        fee: u64,
    },
    Data {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long, value_parser = parse_digest)]
        to: Digest,
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 1)]
        fee: u64,
    },
}

fn parse_digest(s: &str) -> Result<Digest, String> {
    Digest::from_hex(s).ok_or_else(|| format!("{s:?} is not a 64-digit hex digest"))
}

fn parse_genesis_account(s: &str) -> Result<(PathBuf, u64), String> {
    let (dir, balance) = s.rsplit_once('=').ok_or("expected DIR=BALANCE")?;
    let balance = balance.parse().map_err(|_| format!("bad balance {balance:?}"))?;
    Ok((PathBuf::from(dir), balance))
}

#[derive(Debug)]
pub enum CliError {
    Failed(String),
    Usage(String),
    NotFound(String),
    Rejected(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::NotFound(_) => 3,
            CliError::Rejected(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Failed(m) | CliError::Usage(m) | CliError::NotFound(m) | CliError::Rejected(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<redchain::storage::StoreError> for CliError {
    fn from(e: redchain::storage::StoreError) -> Self {
        CliError::Failed(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.message().is_empty() {
                eprintln!("error: {}", e.message());
            }
            ExitCode::from(e.code())
        }
    }
}
