use gensr_core::analysis::{run_separability_experiment, GaussianSandboxConfig};
use gensr_core::par::Exec;

/// Both estimators converge towards the true direction as the sample grows.
#[test]
fn sandbox_errors_shrink_with_sample_size() {
    for seed in [0, 1] {
        let mut last = (f64::INFINITY, f64::INFINITY);
        for n in [100, 1_000, 10_000] {
            let cfg = GaussianSandboxConfig { seed, ..GaussianSandboxConfig::with_size(5, n, 10) };
            let r = run_separability_experiment(&cfg, Exec::auto()).unwrap();
            assert!(r.mean_gen_error < last.0 && r.mean_disc_error < last.1, "seed {seed}, n = {n}: errors {} {}", r.mean_gen_error, r.mean_disc_error);
            assert!(r.mean_gen_mi_sum <= r.true_mi_sum + 1e-9 && r.mean_disc_mi_sum <= r.true_mi_sum + 1e-9);
            last = (r.mean_gen_error, r.mean_disc_error);
        }
    }
}
