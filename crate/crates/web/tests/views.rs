use sbfm_web::{flow_paths_native, marginal_band_native, sde_paths_native};

#[test]
fn sde_paths_have_requested_shape_and_start_at_x0() {
    let out = sde_paths_native(-1.0, 2.0, 0.8, 7, 50, 3).unwrap();
    assert_eq!(out.len(), 7 * 51);
    for p in 0..7 {
        assert_eq!(out[p * 51], -1.0);
    }
}

#[test]
fn band_brackets_the_sample_mean() {
    let (n_paths, n_steps) = (4000, 40);
    let paths = sde_paths_native(-1.0, 2.0, 1.0, n_paths, n_steps, 9).unwrap();
    let band = marginal_band_native(-1.0, 2.0, 1.0, 100).unwrap();
    assert_eq!(band.len(), 4 * 101);
    let (t, mean) = (&band[..101], &band[101..202]);
    assert_eq!(t[0], 0.0);
    assert_eq!(t[100], 1.0);
    assert_eq!(band[202], band[303]);
    // Halfway along the SDE grid: t = 0.5 · (1 − ε).
    let k = n_steps / 2;
    let sample: f64 = (0..n_paths).map(|p| paths[p * (n_steps + 1) + k]).sum::<f64>() / n_paths as f64;
    let t_mid = 0.5 * (1.0 - 1e-3);
    let expected = t_mid * 2.0 - (1.0 - t_mid);
    assert!((sample - expected).abs() < 0.05, "{sample} vs {expected}");
    assert!((mean[50] - 0.5).abs() < 1e-12);
}

#[test]
fn flows_from_x0_reach_x1() {
    for kind in ["sb", "cfm"] {
        let out = flow_paths_native(kind, [0.0, 0.0], [3.0, -1.0], 0.5, 0.0, 2, 200, 1).unwrap();
        assert_eq!(out.len(), 2 * 201 * 2);
        let end = &out[201 * 2 - 2..201 * 2];
        assert!((end[0] - 3.0).abs() < 0.02 && (end[1] + 1.0).abs() < 0.02, "{kind}: {end:?}");
    }
}

#[test]
fn bad_sigma_is_an_error() {
    assert!(sde_paths_native(0.0, 1.0, -1.0, 1, 10, 0).is_err());
    assert!(marginal_band_native(0.0, 1.0, f64::NAN, 10).is_err());
}
