//! Randomized invariants for the move proposal and the grid text format.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pdsopt::anneal::propose_move;
use pdsopt::grid::{build_base_surface, BaseSurfaceSpec};
use pdsopt::io::{grid_from_string, grid_to_string};
use pdsopt::nlp::BoundsSpec;

proptest! {
    #[test]
    fn proposed_moves_stay_within_bounds(
        seed in any::<u64>(),
        sigma in 0.0f64..10.0,
        lo in -5.0f64..0.0,
        width in 0.001f64..10.0,
        z_frac in proptest::collection::vec(0.0f64..=1.0, 1..6),
    ) {
        let n = z_frac.len();
        let bounds = BoundsSpec { lower: vec![lo; n], upper: vec![lo + width; n] };
        let z: Vec<f64> = z_frac.iter().map(|f| lo + f * width).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let zp = propose_move(&z, sigma, &bounds, &mut rng);
            prop_assert!(bounds.contains(&zp), "{zp:?} outside [{lo}, {}]", lo + width);
        }
    }

    #[test]
    fn grid_text_round_trip_is_lossless(
        seed in any::<u64>(),
        nu in 3usize..8,
        nv in 3usize..8,
        rise in -3.0f64..3.0,
    ) {
        let grid = build_base_surface(&BaseSurfaceSpec {
            nu,
            nv,
            lx: 10.0,
            ly: 10.0,
            rise,
            jitter: 0.02,
            seed,
        })
        .unwrap();
        let text = grid_to_string(&grid);
        let back = grid_from_string(&text).unwrap();
        prop_assert_eq!(&grid.points, &back.points);
        prop_assert_eq!(&grid.roles, &back.roles);
        prop_assert_eq!(text, grid_to_string(&back));
    }
}
