use basisn::crossbar::CrossbarConfig;
use basisn::linalg::{code_range, CoefficientSet, LayerShape};
use basisn::mask::Mask;
use basisn::network::NetworkSpec;
use basisn::scheduler::{
    greedy_slot_count, pack_exact_small, pack_greedy, schedule_network, ContestInstance,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng, max_kernels: usize, dim: usize, groups: usize) -> ContestInstance {
    let n = rng.random_range(0..=max_kernels);
    let density = rng.random_range(0.02..0.5);
    let masks = (0..n)
        .map(|_| Mask::from_fn(dim, |_| rng.random_bool(density)))
        .collect();
    ContestInstance::new(dim, groups, masks).unwrap()
}

fn instance_strategy() -> impl Strategy<Value = ContestInstance> {
    (1usize..48, 1usize..6, any::<u64>()).prop_map(|(dim, groups, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_instance(&mut rng, 60, dim, groups)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn greedy_output_is_feasible_and_complete(inst in instance_strategy()) {
        let slots = pack_greedy(&inst);
        let mut placed: Vec<usize> = Vec::new();
        for (i, slot) in slots.iter().enumerate() {
            prop_assert!(!slot.entries.is_empty());
            slot.validate(inst.tg_groups, || format!("slot {i}")).unwrap();
            for e in &slot.entries {
                prop_assert_eq!(&e.mask, &inst.masks[e.kernel]);
                placed.push(e.kernel);
            }
        }
        placed.sort_unstable();
        prop_assert_eq!(placed, inst.active().collect::<Vec<_>>());
    }

    #[test]
    fn greedy_respects_lower_bound(inst in instance_strategy()) {
        let slots = greedy_slot_count(&inst);
        prop_assert!(slots >= inst.slot_lower_bound());
        prop_assert!(slots >= inst.max_column_usage());
        prop_assert!(slots <= inst.active_count());
    }
}

#[test]
fn more_tg_groups_never_add_slots() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..100 {
        let dim = rng.random_range(4..64);
        let base = random_instance(&mut rng, 80, dim, 1);
        let mut prev = usize::MAX;
        for g in 1..=8 {
            let inst = ContestInstance::new(dim, g, base.masks.clone()).unwrap();
            let slots = greedy_slot_count(&inst);
            assert!(slots <= prev, "case {case}: G={g} gives {slots} > {prev}");
            prev = slots;
        }
    }
}

#[test]
fn greedy_within_twice_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut above = 0;
    for _ in 0..100 {
        let dim = rng.random_range(3..12);
        let groups = rng.random_range(1..4);
        let inst = random_instance(&mut rng, 10, dim, groups);
        let exact = pack_exact_small(&inst, 12).unwrap();
        let greedy = greedy_slot_count(&inst);
        assert!(greedy >= exact);
        assert!(greedy <= 2 * exact.max(1) || exact == 0 && greedy == 0);
        if 2 * greedy > 3 * exact {
            above += 1;
        }
    }
    eprintln!("instances above 1.5x optimum: {above}");
}

#[test]
fn toy_network_packs_disjoint_kernels_together() {
    // kernel k uses only column k, so every plane packs into ceil(4 / G) slots
    let net = NetworkSpec::new("toy", "", vec![LayerShape::dense(4, 4).unwrap()]).unwrap();
    let mut codes = vec![0; 16];
    for k in 0..4 {
        codes[k * 4 + k] = 3;
    }
    let set = CoefficientSet::new(0, 3, 1.0, (4, 1, 4), codes).unwrap();
    for (groups, crossbars, cycles) in [(1, 1, 8), (2, 1, 4), (4, 1, 2), (4, 2, 1), (1, 3, 3)] {
        let config = CrossbarConfig {
            dim: 4,
            num_crossbars: crossbars,
            tg_groups: groups,
            coeff_bits: 3,
            cell_bits: None,
        };
        let schedule = schedule_network(&net, std::slice::from_ref(&set), &config).unwrap();
        schedule.validate().unwrap();
        schedule.check_covers(std::slice::from_ref(&set)).unwrap();
        assert_eq!(schedule.total_cycles, cycles, "G={groups} A={crossbars}");
    }
}

#[test]
fn overlapping_kernels_never_share_a_slot() {
    let net = NetworkSpec::new("toy", "", vec![LayerShape::dense(3, 2).unwrap()]).unwrap();
    let set = CoefficientSet::new(0, 2, 1.0, (3, 1, 2), vec![1, 1, 1, 0, 0, 1]).unwrap();
    let config = CrossbarConfig {
        dim: 2,
        num_crossbars: 1,
        tg_groups: 3,
        coeff_bits: 2,
        cell_bits: None,
    };
    let schedule = schedule_network(&net, &[set], &config).unwrap();
    // plane 0 masks 11, 10, 01: the first contests both others
    assert_eq!(schedule.total_cycles, 2);
}

#[test]
fn schedules_of_random_codes_validate() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let dim = rng.random_range(2..24);
        let bits = rng.random_range(1..6);
        let shape = LayerShape::dense(rng.random_range(1..30), rng.random_range(1..50)).unwrap();
        let net = NetworkSpec::new("r", "", vec![shape]).unwrap();
        let (lo, hi) = code_range(bits);
        let parts = shape.partitions(dim);
        let codes = (0..shape.n * parts * dim).map(|_| rng.random_range(lo..=hi)).collect();
        let set = CoefficientSet::new(0, bits, 1.0, (shape.n, parts, dim), codes).unwrap();
        let config = CrossbarConfig {
            dim,
            num_crossbars: rng.random_range(1..5),
            tg_groups: rng.random_range(1..5),
            coeff_bits: bits,
            cell_bits: None,
        };
        let schedule = schedule_network(&net, std::slice::from_ref(&set), &config).unwrap();
        schedule.validate().unwrap();
        schedule.check_covers(&[set]).unwrap();
    }
}
