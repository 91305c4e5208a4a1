use latentbrush_testkit::energy::{check_edit_energy, check_hog_instance, check_recon_instance, hog_value_gap};

const INSTANCES: u64 = 20;

#[test]
fn hog_matches_reference_descriptor() {
    for seed in 0..5 {
        let gap = hog_value_gap(seed);
        assert!(gap < 1e-4, "seed {seed}: {gap}");
    }
}

#[test]
fn hog_gradient_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let r = check_hog_instance(seed);
        assert!(r.max_rel_err < 1e-2, "seed {seed}: {r:?}");
    }
}

#[test]
fn recon_loss_gradient_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let r = check_recon_instance(seed, 48);
        assert!(r.max_rel_err < 1e-3, "seed {seed}: {r:?}");
    }
}

#[test]
fn edit_energy_gradient_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let kinds = (seed % 7 + 1) as u8;
        let r = check_edit_energy(seed, kinds, false, false);
        assert!(r.max_rel_err < 1e-3, "seed {seed}: {r:?}");
    }
}

// With the realism term on, plain differences over the HOG terms sit near 1e-3; extrapolation
// removes the truncation error.
#[test]
fn edit_energy_gradient_with_realism_term() {
    for seed in 0..INSTANCES {
        let kinds = (seed % 7 + 1) as u8;
        let r = check_edit_energy(seed, kinds, true, true);
        assert!(r.max_rel_err < 1e-3, "seed {seed}: {r:?}");
    }
}
