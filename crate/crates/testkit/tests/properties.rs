use ces_testkit::props::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(config())]

    #[test]
    fn pipeline_is_deterministic(sc in small_scenario()) {
        check_deterministic(&sc)?;
    }

    #[test]
    fn pipeline_mirrors_about_the_x_axis(sc in small_scenario()) {
        check_mirror(&sc)?;
    }

    #[test]
    fn pipeline_invariants(sc in small_scenario()) {
        check_pipeline(&sc)?;
    }

    #[test]
    fn speed_time_monotone_in_friction_and_traction(c in grip_case()) {
        check_grip_monotone(&c)?;
    }

    #[test]
    fn stretch_is_a_fixed_point(w in wave(3.0)) {
        check_stretch_fixed_point(w)?;
    }

    #[test]
    fn speed_warm_start_is_a_fixed_point(w in wave(5.0)) {
        check_speed_fixed_point(w)?;
    }
}
