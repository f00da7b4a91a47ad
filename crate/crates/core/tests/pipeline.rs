use kgs::domain::{Grid, Subdomains, TimeGrid, TimeSpec};
use kgs::forward::{make_manufactured, solve_forward, ManufacturedSpec, Profile};
use kgs::inverse::{reduce, relative_error, variational_reconstruct, ReductionOptions, VariationalOptions};
use kgs::measure::{add_noise, observe, Variant};

fn spec() -> TimeSpec {
    TimeSpec {
        horizon: 0.4,
        dt: 2e-3,
        t0: 0.2,
        delta: 0.06,
        delta0: 0.1,
        r: 0.04,
    }
}

#[test]
fn rectangle_reconstruction_through_m3() {
    let grid = Grid::rectangle(1.0, 1.0, 21, 21).unwrap();
    let sub = Subdomains::from_boxes(
        &grid,
        &[(0.4, 0.6), (0.4, 0.6)],
        &[(0.25, 0.75), (0.25, 0.75)],
        &[(0.1, 0.9), (0.1, 0.9)],
    )
    .unwrap();
    let tg = TimeGrid::new(&spec()).unwrap();
    let m = make_manufactured(
        &grid,
        &ManufacturedSpec {
            profile: Profile::SineWater { v: 1.5 },
            d1: 0.2,
            d2: 0.02,
            a1: 0.1,
        },
    )
    .unwrap();
    let mut problem = m.problem;
    for (k, v) in problem.v0.iter_mut().enumerate() {
        let [x, y] = grid.coord(k);
        *v *= 1.0 + 0.2 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
    }
    let traj = solve_forward(&problem, &grid, &tg).unwrap();
    let ms = observe(&traj, Variant::M3, &sub, Some(&problem.f)).unwrap();
    let (m1, diag) = reduce(&ms, &problem, &ReductionOptions::default()).unwrap();
    assert!(diag.m0_u.is_some_and(|m| m > 0.0));
    let res = variational_reconstruct(&problem, &m1, &vec![0.0; grid.len()], &VariationalOptions::default()).unwrap();
    let err = relative_error(&res.f_hat, &m.exact_f, Some(sub.omega_big.as_slice()), &grid);
    assert!(err < 5e-2, "error {err}");
}

#[test]
fn noisy_data_degrade_gracefully() {
    let grid = Grid::interval(1.0, 41).unwrap();
    let sub = Subdomains::from_boxes(&grid, &[(0.45, 0.55)], &[(0.3, 0.7)], &[(0.1, 0.9)]).unwrap();
    let tg = TimeGrid::new(&spec()).unwrap();
    let m = make_manufactured(
        &grid,
        &ManufacturedSpec {
            profile: Profile::Hump,
            d1: 0.1,
            d2: 0.05,
            a1: 0.5,
        },
    )
    .unwrap();
    let mut problem = m.problem;
    for (k, v) in problem.v0.iter_mut().enumerate() {
        *v *= 1.0 + 0.2 * (std::f64::consts::PI * grid.coord(k)[0]).sin();
    }
    let traj = solve_forward(&problem, &grid, &tg).unwrap();
    let clean = observe(&traj, Variant::M1, &sub, None).unwrap();
    let mut errs = Vec::new();
    for level in [1e-4, 1e-2] {
        let noisy = add_noise(&clean, level, 9).unwrap();
        let opts = VariationalOptions {
            gamma: 1e-6,
            max_iter: 100,
            ..Default::default()
        };
        let res = variational_reconstruct(&problem, &noisy, &vec![0.0; grid.len()], &opts).unwrap();
        let err = relative_error(&res.f_hat, &m.exact_f, Some(sub.omega_big.as_slice()), &grid);
        assert!(err.is_finite());
        errs.push(err);
    }
    assert!(errs[0] < errs[1], "{errs:?}");
    assert!(errs[0] < 5e-2, "{errs:?}");
}
