#![allow(dead_code)]

pub mod oracle;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use redchain::ledger::ConsensusConfig;
use redchain::miner::{Genesis, NodeConfig};
use redchain::network::{LinkConfig, Node, SimNetwork};
use redchain::tx::AccountTx;
use redchain::ClientKeys;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn clients(n: usize, bits: u64, rng: &mut ChaCha20Rng) -> Vec<ClientKeys> {
    (0..n).map(|_| ClientKeys::generate(bits, rng).unwrap()).collect()
}

pub fn genesis(clients: &[ClientKeys], balance: u64, rng: &mut ChaCha20Rng) -> Genesis {
    Genesis {
        timestamp: 0,
        accounts: clients
            .iter()
            .map(|c| (AccountTx::create(c, 0, Vec::new(), rng).unwrap(), balance))
            .collect(),
    }
}

pub fn round_robin() -> NodeConfig {
    NodeConfig {
        public_mode: false,
        consensus: ConsensusConfig::round_robin(),
    }
}

/// `n` fully connected nodes sharing `genesis`.
pub fn network(n: usize, genesis: &Genesis, config: NodeConfig, link: LinkConfig, seed: u64) -> SimNetwork {
    let mut sim = SimNetwork::new(seed);
    for i in 0..n {
        sim.add_node(Node::new(format!("n{i}"), genesis, config).unwrap());
    }
    sim.connect_all(link);
    sim
}
