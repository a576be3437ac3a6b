use basisn::cost::{
    basisn_breakdown, compare, crossbars_needed, crossing_point, synthetic_profile,
    weight_stationary_cycles, BaselineCostParams, ReprogramMode, SlotProfile,
};
use basisn::linalg::LayerShape;
use basisn::network::NetworkSpec;
use proptest::prelude::*;

fn net_strategy() -> impl Strategy<Value = NetworkSpec> {
    prop::collection::vec((1usize..80, 1usize..40, 1usize..4), 1..4).prop_map(|layers| {
        let shapes = layers
            .into_iter()
            .map(|(n, t, k)| LayerShape::new(n, t, k, k).unwrap())
            .collect();
        NetworkSpec::new("p", "", shapes).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn basisn_never_writes(net in net_strategy(), dim in 4usize..40, bits in 1u32..6, groups in 1usize..5,
                           crossbars in 1u64..64, seed in any::<u64>()) {
        let params = BaselineCostParams::default();
        let prof = synthetic_profile(&net, dim, bits, groups, seed).unwrap();
        let b = basisn_breakdown(&net, &prof, crossbars, &params).unwrap();
        prop_assert_eq!(b.write_cycles, 0);
        prop_assert_eq!(b.events.cell_writes, 0);
        let r = compare(&net, &prof, groups, crossbars, &params).unwrap();
        prop_assert_eq!(r.basisn.write_cycles, 0);
        prop_assert!(r.basisn.cycles > 0 && r.row_based.cycles > 0 && r.block_based.cycles > 0);
        prop_assert!(r.cycle_ratio_row > 0.0 && r.edp_ratio_block > 0.0);
    }

    #[test]
    fn cycles_are_monotone_in_crossbars(net in net_strategy(), dim in 4usize..40, seed in any::<u64>()) {
        let params = BaselineCostParams::default();
        let prof = synthetic_profile(&net, dim, 3, 2, seed).unwrap();
        let mut prev = (u64::MAX, u64::MAX, u64::MAX);
        for a in 1..=crossbars_needed(&net, dim) + 3 {
            let cur = (
                basisn_breakdown(&net, &prof, a, &params).unwrap().total(),
                weight_stationary_cycles(&net, dim, a, &params, ReprogramMode::Row).unwrap().total(),
                weight_stationary_cycles(&net, dim, a, &params, ReprogramMode::Block).unwrap().total(),
            );
            prop_assert!(cur.0 <= prev.0 && cur.1 <= prev.1 && cur.2 <= prev.2);
            prev = cur;
        }
    }

    #[test]
    fn weight_stationary_never_wins_early(net in net_strategy(), dim in 4usize..40, seed in any::<u64>()) {
        let params = BaselineCostParams::default();
        let prof = synthetic_profile(&net, dim, 4, 4, seed).unwrap();
        let needed = crossbars_needed(&net, dim);
        let sweep: Vec<u64> = (1..=2 * needed).collect();
        for mode in [ReprogramMode::Row, ReprogramMode::Block] {
            if let Some(a) = crossing_point(&net, &prof, &params, mode, &sweep).unwrap() {
                prop_assert!(a >= needed);
            }
        }
    }
}

#[test]
fn profiles_are_deterministic() {
    let net = NetworkSpec::builtin("resnet34_cifar100").unwrap();
    let a = synthetic_profile(&net, 128, 4, 4, 3).unwrap();
    assert_eq!(a, synthetic_profile(&net, 128, 4, 4, 3).unwrap());
    let serial = SlotProfile::serial_upper_bound(&net, 128, 4);
    assert!(a.cycles(48) <= serial.cycles(48));
}
