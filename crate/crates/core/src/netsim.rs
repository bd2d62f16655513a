//! Free-space radio model: where workers sit, who talks to whom, and how
//! many joules each transmission costs.
//!
//! A transmitter sending `bits` within one slot of length `τ` over bandwidth
//! `B` needs rate `bits/τ`; inverting the Shannon capacity under free-space
//! path loss gives the power `τ·D²·N0·B·(2^{rate/B} − 1)` and the energy is
//! that power held for one slot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetsimError {
    #[error("deployment has {positions} positions but chain order of length {chain}")]
    ChainLength { positions: usize, chain: usize },
    #[error("chain order is not a permutation of 0..{0}")]
    NotPermutation(usize),
    #[error("parameter-server index {index} out of range for {workers} workers")]
    PsIndex { index: usize, workers: usize },
    #[error("position {index} lies outside the deployment area")]
    OutOfArea { index: usize },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Who sent a transmission.
///
/// For decentralized runs the worker index is the position along the chain;
/// for parameter-server runs it is the worker's index in the deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sender {
    Worker(usize),
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Head-group broadcast in a decentralized iteration.
    Head,
    /// Tail-group broadcast in a decentralized iteration.
    Tail,
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transmission {
    pub sender: Sender,
    pub phase: Phase,
    pub bits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Decentralized,
    ParameterServer,
}

/// Which transmit-power expression to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerFormula {
    /// `τ·D²·N0·B·(2^{R/B} − 1)`.
    #[default]
    SlotScaled,
    /// `D²·N0·B·(2^{R/B} − 1)`, the dimensionally plain form.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Total system bandwidth W in Hz.
    pub total_bandwidth: f64,
    /// Noise power spectral density N0 in W/Hz.
    pub noise_density: f64,
    /// Slot time τ in seconds.
    pub slot_time: f64,
    pub formula: PowerFormula,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            total_bandwidth: 2e6,
            noise_density: 1e-6,
            slot_time: 1e-3,
            formula: PowerFormula::SlotScaled,
        }
    }
}

impl LinkBudget {
    /// Bandwidth available to one transmitter: `2W/N` when only half the chain
    /// transmits at once, `W/N` when every worker shares the band.
    pub fn per_transmitter_bandwidth(&self, topology: Topology, n_workers: usize) -> f64 {
        let n = n_workers as f64;
        match topology {
            Topology::Decentralized => 2.0 * self.total_bandwidth / n,
            Topology::ParameterServer => self.total_bandwidth / n,
        }
    }
}

/// Transmit power in watts for sending `bits` in one slot.
pub fn tx_power(bits: u64, slot_time: f64, distance: f64, noise_density: f64, bandwidth: f64, formula: PowerFormula) -> f64 {
    if bits == 0 {
        return 0.0;
    }
    let rate = bits as f64 / slot_time;
    let base = distance * distance * noise_density * bandwidth * ((rate / bandwidth).exp2() - 1.0);
    match formula {
        PowerFormula::SlotScaled => slot_time * base,
        PowerFormula::Standard => base,
    }
}

/// Energy in joules for one slot at [`tx_power`].
pub fn tx_energy(bits: u64, slot_time: f64, distance: f64, noise_density: f64, bandwidth: f64, formula: PowerFormula) -> f64 {
    tx_power(bits, slot_time, distance, noise_density, bandwidth, formula) * slot_time
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// I.i.d. uniform positions in `[0, side]²`.
pub fn place_workers(n: usize, side: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.gen::<f64>() * side, rng.gen::<f64>() * side])
        .collect()
}

/// Worker with the smallest summed distance to all others; lowest index on ties.
pub fn choose_ps(positions: &[[f64; 2]]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, &p) in positions.iter().enumerate() {
        let total: f64 = positions.iter().map(|&q| distance(p, q)).sum();
        if total < best.1 {
            best = (i, total);
        }
    }
    best.0
}

/// Greedy nearest-neighbour path starting from the worker closest to the
/// origin corner. Ties go to the lower index.
pub fn build_chain(positions: &[[f64; 2]]) -> Vec<usize> {
    let n = positions.len();
    if n == 0 {
        return Vec::new();
    }
    let nearest = |from: [f64; 2], visited: &[bool]| -> usize {
        let mut best = (usize::MAX, f64::INFINITY);
        for (j, &q) in positions.iter().enumerate() {
            if !visited[j] {
                let dist = distance(from, q);
                if dist < best.1 {
                    best = (j, dist);
                }
            }
        }
        best.0
    };
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut current = nearest([0.0, 0.0], &visited);
    loop {
        visited[current] = true;
        order.push(current);
        if order.len() == n {
            break;
        }
        current = nearest(positions[current], &visited);
    }
    order
}

/// Worker geometry plus the two topologies built on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub positions: Vec<[f64; 2]>,
    pub ps_index: usize,
    pub chain_order: Vec<usize>,
}

impl Deployment {
    pub fn generate(n: usize, side: f64, seed: u64) -> Self {
        Self::from_positions(place_workers(n, side, seed))
    }

    pub fn from_positions(positions: Vec<[f64; 2]>) -> Self {
        let ps_index = choose_ps(&positions);
        let chain_order = build_chain(&positions);
        Self {
            positions,
            ps_index,
            chain_order,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self, side: Option<f64>) -> Result<(), NetsimError> {
        let n = self.positions.len();
        if self.chain_order.len() != n {
            return Err(NetsimError::ChainLength {
                positions: n,
                chain: self.chain_order.len(),
            });
        }
        let mut seen = vec![false; n];
        for &w in &self.chain_order {
            if w >= n || std::mem::replace(&mut seen[w], true) {
                return Err(NetsimError::NotPermutation(n));
            }
        }
        if self.ps_index >= n {
            return Err(NetsimError::PsIndex {
                index: self.ps_index,
                workers: n,
            });
        }
        if let Some(side) = side {
            if let Some(index) = self
                .positions
                .iter()
                .position(|p| !(0.0..=side).contains(&p[0]) || !(0.0..=side).contains(&p[1]))
            {
                return Err(NetsimError::OutOfArea { index });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, NetsimError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, NetsimError> {
        let d: Self = serde_json::from_str(s)?;
        d.validate(None)?;
        Ok(d)
    }

    /// Distance a chain position's broadcast must cover: the farther of its
    /// one or two chain neighbours.
    pub fn broadcast_distance(&self, chain_position: usize) -> f64 {
        let here = self.positions[self.chain_order[chain_position]];
        let mut reach: f64 = 0.0;
        if chain_position > 0 {
            reach = reach.max(distance(here, self.positions[self.chain_order[chain_position - 1]]));
        }
        if let Some(&next) = self.chain_order.get(chain_position + 1) {
            reach = reach.max(distance(here, self.positions[next]));
        }
        reach
    }

    pub fn distance_to_ps(&self, worker: usize) -> f64 {
        distance(self.positions[worker], self.positions[self.ps_index])
    }

    /// Distance from the parameter server to the farthest worker.
    pub fn downlink_distance(&self) -> f64 {
        (0..self.len()).map(|w| self.distance_to_ps(w)).fold(0.0, f64::max)
    }

    pub fn chain_length(&self) -> f64 {
        self.chain_order
            .windows(2)
            .map(|w| distance(self.positions[w[0]], self.positions[w[1]]))
            .sum()
    }
}

/// Energy and bits charged for one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LedgerDelta {
    pub bits: u64,
    pub uplink_energy: f64,
    pub downlink_energy: f64,
    pub transmitters: usize,
}

impl LedgerDelta {
    pub fn energy(&self) -> f64 {
        self.uplink_energy + self.downlink_energy
    }
}

/// Running totals across iterations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub cumulative_bits: u64,
    pub cumulative_energy: f64,
    pub uplink_energy: f64,
    pub downlink_energy: f64,
}

impl EnergyLedger {
    pub fn record(&mut self, delta: &LedgerDelta) {
        self.cumulative_bits += delta.bits;
        self.uplink_energy += delta.uplink_energy;
        self.downlink_energy += delta.downlink_energy;
        self.cumulative_energy += delta.energy();
    }
}

/// Prices a list of transmissions against the deployment.
///
/// Decentralized broadcasts cover the farther chain neighbour. Parameter
/// server uplinks cover the distance to the server, and the server's
/// downlink covers the farthest worker.
pub fn account_round(
    transmissions: &[Transmission],
    deployment: &Deployment,
    budget: &LinkBudget,
    topology: Topology,
) -> LedgerDelta {
    let bandwidth = budget.per_transmitter_bandwidth(topology, deployment.len());
    let energy = |bits: u64, dist: f64| {
        tx_energy(bits, budget.slot_time, dist, budget.noise_density, bandwidth, budget.formula)
    };
    let mut delta = LedgerDelta::default();
    for t in transmissions {
        delta.bits += t.bits;
        delta.transmitters += 1;
        match (topology, t.sender) {
            (Topology::Decentralized, Sender::Worker(pos)) => {
                delta.uplink_energy += energy(t.bits, deployment.broadcast_distance(pos));
            }
            (Topology::ParameterServer, Sender::Worker(w)) => {
                delta.uplink_energy += energy(t.bits, deployment.distance_to_ps(w));
            }
            (_, Sender::Server) => {
                delta.downlink_energy += energy(t.bits, deployment.downlink_distance());
            }
        }
    }
    delta
}
