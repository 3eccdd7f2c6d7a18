use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const TAG: ConstraintTag = ConstraintTag::new("test", 0);

fn tight() -> SolverSettings {
    SolverSettings { feas_tol: 1e-9, opt_tol: 1e-9, ..Default::default() }
}

#[test]
fn interval_projection() {
    // min x² s.t. |x - 3| <= 1
    let mut p = ConeProgram::new(1);
    p.add_quadratic(0, 0, 2.0);
    p.add_cone(SocConstraint::norm_bound(vec![vec![(0, 1.0)]], vec![-3.0], 1.0, TAG));
    let sol = solve(&p, &tight(), None).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.x[0] - 2.0).abs() < 1e-6, "{:?}", sol.x);
    assert!((sol.objective_value - 4.0).abs() < 1e-5);
}

#[test]
fn ball_projection() {
    let c = [3.0, -4.0, 12.0];
    let r = 2.0;
    let mut p = ConeProgram::new(3);
    let rows: Vec<SparseRow> = (0..3).map(|i| vec![(i, 1.0)]).collect();
    let offs: Vec<f64> = c.iter().map(|v| -v).collect();
    p.add_squared_norm(&rows, &offs, 1.0);
    p.add_cone(SocConstraint::norm_bound(rows, vec![0.0; 3], r, TAG));
    let sol = solve(&p, &tight(), None).unwrap();
    assert!(sol.is_optimal());
    let nc = 13.0;
    for i in 0..3 {
        assert!((sol.x[i] - r * c[i] / nc).abs() < 1e-6);
    }
    assert!((sol.objective_value - (nc - r).powi(2)).abs() < 1e-5);
}

#[test]
fn equality_constrained_least_norm() {
    let mut p = ConeProgram::new(2);
    p.add_quadratic(0, 0, 2.0);
    p.add_quadratic(1, 1, 2.0);
    p.add_equality(vec![(0, 1.0), (1, 1.0)], 1.0, TAG);
    let sol = solve(&p, &tight(), None).unwrap();
    assert!(sol.is_optimal());
    assert!((sol.x[0] - 0.5).abs() < 1e-7 && (sol.x[1] - 0.5).abs() < 1e-7);
    assert!((sol.equality_duals[0].abs() - 1.0).abs() < 1e-5);
}

#[test]
fn linear_objective_over_disk() {
    // min -x - y s.t. ‖(x, y)‖ <= 1
    let mut p = ConeProgram::new(2);
    p.add_linear(0, -1.0);
    p.add_linear(1, -1.0);
    p.add_cone(SocConstraint::norm_bound(vec![vec![(0, 1.0)], vec![(1, 1.0)]], vec![0.0, 0.0], 1.0, TAG));
    let sol = solve(&p, &tight(), None).unwrap();
    assert!(sol.is_optimal());
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert!((sol.x[0] - h).abs() < 1e-6 && (sol.x[1] - h).abs() < 1e-6);
}

#[test]
fn infeasible_is_detected() {
    // x >= 1 and x <= 0
    let mut p = ConeProgram::new(1);
    p.add_quadratic(0, 0, 1.0);
    p.add_cone(SocConstraint::linear(vec![(0, 1.0)], -1.0, ConstraintTag::new("lower", 0)));
    p.add_cone(SocConstraint::linear(vec![(0, -1.0)], 0.0, ConstraintTag::new("upper", 0)));
    let sol = solve(&p, &SolverSettings::default(), None).unwrap();
    assert_eq!(sol.status, SolveStatus::InfeasibleDetected);
    assert!(sol.binding.iter().any(|t| t.kind == "lower"));
    assert!(sol.binding.iter().any(|t| t.kind == "upper"));
}

#[test]
fn infeasible_disjoint_balls() {
    let mut p = ConeProgram::new(2);
    let rows: Vec<SparseRow> = vec![vec![(0, 1.0)], vec![(1, 1.0)]];
    p.add_squared_norm(&rows, &[0.0, 0.0], 1.0);
    p.add_cone(SocConstraint::norm_bound(rows.clone(), vec![0.0, 0.0], 1.0, TAG));
    p.add_cone(SocConstraint::norm_bound(rows, vec![-3.0, 0.0], 1.0, TAG));
    let sol = solve(&p, &SolverSettings::default(), None).unwrap();
    assert_eq!(sol.status, SolveStatus::InfeasibleDetected);
}

#[test]
fn data_errors() {
    let mut p = ConeProgram::new(2);
    p.add_quadratic(0, 0, 1.0);
    p.add_quadratic(1, 1, 1.0);
    p.add_quadratic(0, 1, 3.0);
    assert!(matches!(solve(&p, &SolverSettings::default(), None), Err(SolverError::NotPsd { .. })));

    let mut p = ConeProgram::new(1);
    p.add_equality(vec![(4, 1.0)], 0.0, TAG);
    assert!(matches!(solve(&p, &SolverSettings::default(), None), Err(SolverError::Dimension { index: 4, .. })));

    let mut p = ConeProgram::new(1);
    p.add_cone(SocConstraint { a_rows: vec![vec![(0, 1.0)]], b: vec![], c: vec![], d: 1.0, tag: TAG });
    assert!(matches!(solve(&p, &SolverSettings::default(), None), Err(SolverError::ConeShape { .. })));
}

/// Random strongly convex QP over a product of shifted second-order cones
/// on disjoint variable blocks, so the feasible set has a closed-form
/// projection for the oracle.
struct RandomInstance {
    program: ConeProgram,
    p: Vec<Vec<f64>>,
    q: Vec<f64>,
    /// per block: (first var, shift of the cone apex `d`, center `c`)
    blocks: Vec<(usize, f64, Vec<f64>)>,
}

fn random_instance(seed: u64) -> RandomInstance {
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
    let mut pm = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            pm[i][j] = (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 0.2 } else { 0.0 };
        }
    }
    let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let mut program = ConeProgram::new(n);
    for i in 0..n {
        for j in i..n {
            program.add_quadratic(i, j, pm[i][j]);
        }
        program.add_linear(i, q[i]);
    }
    let mut blocks = Vec::new();
    for b in 0..5 {
        let s = 4 * b;
        let d = rng.gen_range(0.1..1.0);
        let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rows: Vec<SparseRow> = (1..4).map(|k| vec![(s + k, 1.0)]).collect();
        let offs: Vec<f64> = c.iter().map(|v| -v).collect();
        program.add_cone(SocConstraint { a_rows: rows, b: offs, c: vec![(s, 1.0)], d, tag: ConstraintTag::new("block", b) });
        blocks.push((s, d, c));
    }
    RandomInstance { program, p: pm, q, blocks }
}

impl RandomInstance {
    fn project(&self, x: &mut [f64]) {
        for (s, d, c) in &self.blocks {
            let mut v = [x[*s] + d, x[s + 1] - c[0], x[s + 2] - c[1], x[s + 3] - c[2]];
            let t = v[0];
            let nv = (v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt();
            if nv > t {
                if nv <= -t {
                    v = [0.0; 4];
                } else {
                    let a = 0.5 * (t + nv);
                    v[0] = a;
                    for k in 1..4 {
                        v[k] *= a / nv;
                    }
                }
            }
            x[*s] = v[0] - d;
            for k in 0..3 {
                x[s + 1 + k] = v[1 + k] + c[k];
            }
        }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut v = 0.0;
        for i in 0..n {
            v += self.q[i] * x[i];
            for j in 0..n {
                v += 0.5 * self.p[i][j] * x[i] * x[j];
            }
        }
        v
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            g[i] = self.q[i] + (0..n).map(|j| self.p[i][j] * x[j]).sum::<f64>();
        }
    }

    /// Projected gradient with step 1/L.
    fn oracle(&self, iters: usize) -> Vec<f64> {
        let n = self.q.len();
        // Gershgorin bound on the largest eigenvalue
        let lip = (0..n).map(|i| self.p[i].iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let mut x = vec![0.0; n];
        self.project(&mut x);
        let mut g = vec![0.0; n];
        for _ in 0..iters {
            self.gradient(&x, &mut g);
            for i in 0..n {
                x[i] -= g[i] / lip;
            }
            self.project(&mut x);
        }
        x
    }
}

#[test]
fn random_instance_matches_projected_gradient() {
    for seed in [1u64, 2, 3] {
        let inst = random_instance(seed);
        let reference = inst.objective(&inst.oracle(1_000_000));
        let sol = solve(&inst.program, &SolverSettings::default(), None).unwrap();
        assert!(sol.is_optimal(), "seed {seed}: {:?}", sol.status);
        let rel = (sol.objective_value - reference).abs() / reference.abs().max(1.0);
        assert!(rel < 1e-5, "seed {seed}: {} vs {}", sol.objective_value, reference);
    }
}

#[test]
fn optimality_against_feasible_perturbations() {
    let inst = random_instance(11);
    let sol = solve(&inst.program, &tight(), None).unwrap();
    assert!(sol.is_optimal());
    let f0 = inst.objective(&sol.x);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let mut y: Vec<f64> = sol.x.iter().map(|v| v + rng.gen_range(-1e-3..1e-3)).collect();
        inst.project(&mut y);
        let f = inst.objective(&y);
        assert!(f >= f0 - 1e-4 * f0.abs().max(1.0), "{f} < {f0}");
    }
}

#[test]
fn feasibility_invariant_per_cone() {
    for seed in 20..25 {
        let inst = random_instance(seed);
        let s = SolverSettings::default();
        let sol = solve(&inst.program, &s, None).unwrap();
        assert!(sol.is_optimal());
        for cone in inst.program.cones() {
            assert!(cone.rhs(&sol.x) - cone.lhs(&sol.x) >= -s.feas_tol * cone.scale());
        }
    }
}

#[test]
fn residual_trend_and_determinism() {
    let inst = random_instance(5);
    let s = SolverSettings::default();
    let a = solve(&inst.program, &s, None).unwrap();
    let b = solve(&inst.program, &s, None).unwrap();
    assert_eq!(a, b);
    assert!(a.is_optimal());
    let first = a.residual_history[0].1;
    let last = a.residual_history.last().unwrap().1;
    assert!(last <= 1e-3 * first, "{first} -> {last}");
}

#[test]
fn warm_start_is_used() {
    let inst = random_instance(8);
    let s = SolverSettings::default();
    let cold = solve(&inst.program, &s, None).unwrap();
    let warm = solve(&inst.program, &s, Some(&cold.x)).unwrap();
    assert!(warm.is_optimal());
    assert!(warm.iterations <= cold.iterations);
    // wrong length is ignored
    let ignored = solve(&inst.program, &s, Some(&[1.0, 2.0])).unwrap();
    assert_eq!(ignored, cold);
}

#[test]
fn listing_mentions_every_constraint() {
    let inst = random_instance(3);
    let mut buf = Vec::new();
    inst.program.write_listing(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.matches("soc block").count(), 5);
    assert!(text.starts_with("# cone program: 20 variables"));
}

#[test]
fn operator_splitting_agrees() {
    let inst = random_instance(11);
    let ipm = solve(&inst.program, &SolverSettings::default(), None).unwrap();
    let admm = solve(&inst.program, &SolverSettings { method: Method::Admm, ..Default::default() }, None).unwrap();
    assert!(ipm.is_optimal() && admm.is_optimal());
    assert!((ipm.objective_value - admm.objective_value).abs() < 1e-4 * (1.0 + ipm.objective_value.abs()));
}

#[test]
fn polish_lands_on_the_boundary() {
    // projection of (3, -4, 12) onto the ball of radius 2, exact after polishing
    let c = [3.0, -4.0, 12.0];
    let mut p = ConeProgram::new(3);
    let rows: Vec<SparseRow> = (0..3).map(|i| vec![(i, 1.0)]).collect();
    let offs: Vec<f64> = c.iter().map(|v| -v).collect();
    p.add_squared_norm(&rows, &offs, 1.0);
    p.add_cone(SocConstraint::norm_bound(rows, vec![0.0; 3], 2.0, TAG));
    let polished = solve(&p, &tight(), None).unwrap();
    let raw = solve(&p, &SolverSettings { polish: false, ..tight() }, None).unwrap();
    for i in 0..3 {
        assert!((polished.x[i] - 2.0 * c[i] / 13.0).abs() < 1e-13, "{:?}", polished.x);
    }
    let err = |x: &[f64]| (0..3).map(|i| (x[i] - 2.0 * c[i] / 13.0).abs()).fold(0.0, f64::max);
    assert!(err(&polished.x) <= err(&raw.x));
}

#[test]
fn polish_drops_inactive_constraints() {
    // min (x-1)² + (y-1)² with x ≤ 0.5 binding and y ≤ 5 slack
    let mut p = ConeProgram::new(2);
    p.add_squared_norm(&[vec![(0, 1.0)], vec![(1, 1.0)]], &[-1.0, -1.0], 1.0);
    p.add_cone(SocConstraint::linear(vec![(0, -1.0)], 0.5, TAG));
    p.add_cone(SocConstraint::linear(vec![(1, -1.0)], 5.0, TAG));
    let sol = solve(&p, &tight(), None).unwrap();
    assert!((sol.x[0] - 0.5).abs() < 1e-14 && (sol.x[1] - 1.0).abs() < 1e-12, "{:?}", sol.x);
}
