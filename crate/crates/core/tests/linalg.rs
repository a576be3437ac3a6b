use basisn::linalg::{
    decompose_layer, decompose_tile, init_orthogonal_basis, orthogonality_deviation, quantize_cells,
    reconstruct_tile, tile_layer, LayerShape, QuantizationConfig, SubkernelTile,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fresh_bases_are_orthonormal(dim in 1usize..80, seed in any::<u64>()) {
        let basis = init_orthogonal_basis(dim, seed).unwrap();
        prop_assert!(orthogonality_deviation(basis.rows()) <= 1e-6);
    }

    #[test]
    fn tiling_is_lossless(
        n in 1usize..6, t in 1usize..9, w in 1usize..4, h in 1usize..4, dim in 1usize..40,
        seed in any::<u64>(),
    ) {
        let shape = LayerShape::new(n, t, w, h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<f64> = (0..shape.weight_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tiled = tile_layer(0, shape, &weights, dim).unwrap();
        prop_assert_eq!(tiled.untile(), weights);
        for tile in &tiled.tiles {
            prop_assert_eq!(tile.values.len(), dim);
            prop_assert!(tile.values[tile.valid..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn cell_error_is_at_most_half_a_level(dim in 1usize..40, cell_bits in 1u32..=6, seed in any::<u64>()) {
        let basis = init_orthogonal_basis(dim, seed).unwrap();
        let cells = quantize_cells(&basis, cell_bits).unwrap();
        let maxabs = basis.rows().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let half_step = maxabs / ((1u32 << cell_bits) - 1) as f64;
        for (q, v) in cells.iter().zip(basis.rows().iter()) {
            prop_assert!((q - v).abs() <= half_step * (1.0 + 1e-12));
        }
    }

    #[test]
    fn codes_stay_in_range(bits in 1u32..=16, seed in any::<u64>()) {
        let basis = init_orthogonal_basis(12, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let k: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tile = SubkernelTile { layer_id: 0, kernel: 0, partition: 0, valid: 12, values: k };
        let cfg = QuantizationConfig::new(bits, None).unwrap();
        let (codes, _) = decompose_tile(&tile, &basis, &cfg).unwrap();
        let (lo, hi) = basisn::linalg::code_range(bits);
        prop_assert!(codes.iter().all(|&c| (lo..=hi).contains(&c)));
    }
}

#[test]
fn mean_reconstruction_error_falls_with_coefficient_bits() {
    let dim = 16;
    let basis = init_orthogonal_basis(dim, 42).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let tiles: Vec<SubkernelTile> = (0..120)
        .map(|i| SubkernelTile {
            layer_id: 0,
            kernel: i,
            partition: 0,
            valid: dim,
            values: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let mut prev = f64::INFINITY;
    for bits in 2..=16 {
        let cfg = QuantizationConfig::new(bits, None).unwrap();
        let mean = tiles
            .iter()
            .map(|t| {
                let (codes, scale) = decompose_tile(t, &basis, &cfg).unwrap();
                rel_err(&reconstruct_tile(&codes, scale, bits, &basis).unwrap(), &t.values)
            })
            .sum::<f64>()
            / tiles.len() as f64;
        assert!(mean <= prev, "N={bits}: {mean} > {prev}");
        prev = mean;
    }
    assert!(prev <= 1e-3);
}

#[test]
fn layer_codes_do_not_depend_on_thread_count() {
    let shape = LayerShape::new(20, 7, 3, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w: Vec<f64> = (0..shape.weight_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let basis = init_orthogonal_basis(32, 6).unwrap();
    let tiled = tile_layer(0, shape, &w, 32).unwrap();
    let cfg = QuantizationConfig::new(5, None).unwrap();
    let runs: Vec<_> = [1, 2, 5]
        .iter()
        .map(|&threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| decompose_layer(&tiled, &basis, &cfg).unwrap())
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
    assert_eq!(runs[0], decompose_layer(&tiled, &basis, &cfg).unwrap());
}
