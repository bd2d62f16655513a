use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qgadmm::netsim::{
    account_round, place_workers, Deployment, LinkBudget, Phase, PowerFormula, Sender, Topology, Transmission,
};

fn budget() -> LinkBudget {
    LinkBudget {
        total_bandwidth: 2e6,
        noise_density: 1e-6,
        slot_time: 1e-3,
        formula: PowerFormula::SlotScaled,
    }
}

fn decentralized_round(n: usize, bits: u64) -> Vec<Transmission> {
    (0..n)
        .map(|pos| Transmission {
            sender: Sender::Worker(pos),
            phase: if pos % 2 == 0 { Phase::Head } else { Phase::Tail },
            bits,
        })
        .collect()
}

fn ps_round(n: usize, bits: u64) -> Vec<Transmission> {
    let mut t: Vec<_> = (0..n)
        .map(|w| Transmission {
            sender: Sender::Worker(w),
            phase: Phase::Uplink,
            bits,
        })
        .collect();
    t.push(Transmission {
        sender: Sender::Server,
        phase: Phase::Downlink,
        bits,
    });
    t
}

proptest! {
    #[test]
    fn relabeling_workers_keeps_round_energy(n in 2usize..20, seed: u64, bits in 1u64..400) {
        let positions = place_workers(n, 250.0, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let relabeled = perm.iter().map(|&i| positions[i]).collect();
        let a = Deployment::from_positions(positions);
        let b = Deployment::from_positions(relabeled);
        let chain_a: Vec<_> = a.chain_order.iter().map(|&w| a.positions[w]).collect();
        let chain_b: Vec<_> = b.chain_order.iter().map(|&w| b.positions[w]).collect();
        prop_assert_eq!(chain_a, chain_b);
        for (topology, round) in [
            (Topology::Decentralized, decentralized_round(n, bits)),
            (Topology::ParameterServer, ps_round(n, bits)),
        ] {
            let ea = account_round(&round, &a, &budget(), topology).energy();
            let eb = account_round(&round, &b, &budget(), topology).energy();
            prop_assert!((ea - eb).abs() <= 1e-12 * ea.abs());
        }
    }

    #[test]
    fn fewer_bits_cost_less_energy(n in 2usize..12, seed: u64, bits in 1u64..400) {
        let deployment = Deployment::generate(n, 250.0, seed);
        for topology in [Topology::Decentralized, Topology::ParameterServer] {
            let round = |b| match topology {
                Topology::Decentralized => decentralized_round(n, b),
                Topology::ParameterServer => ps_round(n, b),
            };
            let small = account_round(&round(bits), &deployment, &budget(), topology);
            let large = account_round(&round(bits + 1), &deployment, &budget(), topology);
            prop_assert!(small.energy() < large.energy());
            prop_assert!(small.bits < large.bits);
        }
    }
}
