mod common;

use envelope_core::entropy::output_entropy;
use envelope_core::montecarlo::monte_carlo_output_entropy;
use envelope_core::quadrature::build_polar_grid;
use envelope_core::GridSpec;

#[test]
fn quadrature_agrees_with_sampling() {
    let mut rng = common::rng(5);
    for i in 0..3 {
        let ch = common::random_channel(&mut rng);
        let dist = common::random_general(&mut rng);
        let grid = build_polar_grid(&ch, &GridSpec::default()).unwrap();
        let quad = output_entropy(&dist, &ch, &grid).unwrap();
        let mc = monte_carlo_output_entropy(&dist, &ch, 1_000_000, 40 + i).unwrap();
        assert!((quad.h_output - mc.value).abs() <= 3.0 * mc.std_error, "{quad:?} {mc:?}");
        assert!(quad.err_hint < 1e-6);
    }
}

#[test]
fn estimate_does_not_depend_on_thread_count() {
    let mut rng = common::rng(6);
    let ch = common::random_channel(&mut rng);
    let dist = common::random_canonical(&mut rng);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| monte_carlo_output_entropy(&dist, &ch, 50_000, 9).unwrap())
    };
    assert_eq!(run(1), run(3));
}
