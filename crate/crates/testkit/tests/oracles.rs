use ces_testkit::oracles::{circle_mid_speed, dp_cases, grid_cases, speed_vs_dp, straight_bang_bang, stretch_vs_grid};
use ces_testkit::vehicle;

fn grid(name: &str) {
    let case = grid_cases().into_iter().find(|c| c.name == name).unwrap();
    let out = stretch_vs_grid(&case).unwrap();
    out.check().unwrap();
}

#[test]
fn stretch_matches_grid_search_n5() {
    grid("n5");
}

#[test]
fn stretch_matches_grid_search_n6() {
    grid("n6");
}

#[test]
fn stretch_matches_grid_search_n7() {
    grid("n7");
}

fn dp(name: &str) {
    let case = dp_cases().into_iter().find(|c| c.name == name).unwrap();
    let out = speed_vs_dp(&case.waypoints, &case.vehicle).unwrap();
    eprintln!("{name}: solver {:.6} s, DP {:.6} s, grid bound {:.6} s", out.solver, out.dp, out.grid_bound);
    out.check().unwrap();
}

#[test]
fn speed_matches_dp_on_straight() {
    dp("straight");
}

#[test]
fn speed_matches_dp_on_s_curve() {
    dp("s-curve");
}

#[test]
fn speed_matches_dp_on_tight_arc() {
    dp("tight arc");
}

#[test]
fn straight_rest_to_rest_bang_bang() {
    let (t, t_star) = straight_bang_bang(&vehicle(0.8, 0.5, 4.0), 100.0, 257).unwrap();
    assert!((t - t_star).abs() < 0.01 * t_star, "{t} vs {t_star}");
}

#[test]
fn circle_steady_state_speed() {
    let (v, v_ss) = circle_mid_speed(&vehicle(0.8, 0.5, 4.0), 20.0, 257).unwrap();
    assert!((v - v_ss).abs() < 0.005 * v_ss, "{v} vs {v_ss}");
}
