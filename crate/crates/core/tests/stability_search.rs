use dtstab::registry::{example_2_3, example_3_4};
use dtstab::stability::{
    falsify, test_output_attractivity, test_output_stability, EnvelopeClaim, FalsifyBudget,
};

fn budget(trajectories: usize) -> FalsifyBudget {
    FalsifyBudget {
        trajectories,
        horizon: 60,
        ..FalsifyBudget::default()
    }
}

#[test]
fn delta_grows_with_eps() {
    let e = example_2_3().unwrap();
    let deltas: Vec<f64> = [0.01, 0.1, 1.0]
        .iter()
        .map(|&eps| {
            test_output_stability(&e.system, eps, 0, &budget(60))
                .unwrap()
                .delta
                .unwrap()
        })
        .collect();
    assert!(deltas.windows(2).all(|w| w[0] <= w[1]), "{deltas:?}");
}

#[test]
fn tau_hat_never_shrinks_with_budget() {
    let e = example_2_3().unwrap();
    let small = test_output_attractivity(&e.system, 0.1, 5, 10.0, &budget(50)).unwrap();
    let large = test_output_attractivity(&e.system, 0.1, 5, 10.0, &budget(150)).unwrap();
    assert!(large.tau_hat.unwrap() >= small.tau_hat.unwrap());
    assert_eq!(large.trajectories_run, 150);
}

// The 6K e^{-ct} s envelope scales linearly in the initial norm while the
// output x2 = 2^{-t} d |x1|^{1/2} scales like its square root, so the claim
// cannot hold for very small initial states.
#[test]
fn envelope_fails_near_the_origin() {
    let e = example_3_4().unwrap();
    let claim = EnvelopeClaim::kl(e.envelope.clone());
    let near = FalsifyBudget {
        x0_radius: 0.005,
        ..budget(100)
    };
    let rep = falsify(&e.unforced, &claim, &near).unwrap();
    assert!(rep.violated);
    assert!(rep.ratio > 1.0, "ratio {}", rep.ratio);

    let wide = falsify(&e.unforced, &claim, &budget(100)).unwrap();
    assert!(!wide.violated, "ratio {}", wide.ratio);
}
