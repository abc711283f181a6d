use waveguide_dirac::ab_pipeline::{
    ab_design, map_density_to_phi, prepare_ab_input, run_and_reconstruct, ABConfig, Evolution,
};
use waveguide_dirac::design::{compile, CompileOptions, LatticeGeometry};
use waveguide_dirac::dynamics::{evolve_effective, IntegratorConfig};
use waveguide_dirac::io;
use waveguide_dirac::spacetime::SpacetimeSpec;
use waveguide_dirac::states::{decode, encode, SpinorField};
use waveguide_dirac::C64;

fn quick() -> ABConfig {
    ABConfig { fine_step: 0.25, fine_half_width: 40.0, time: 0.0, ..Default::default() }
}

#[test]
fn zero_time_reconstruction_is_input_density() {
    let cfg = quick();
    let input = prepare_ab_input(&cfg).unwrap();
    let rec = run_and_reconstruct(&ab_design(&cfg).unwrap(), &input.state, 0.0, Evolution::Effective, cfg.dz).unwrap();
    let want = input.state.density();
    let worst = rec.density.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-10, "{worst}");
}

fn interior_packet(g: LatticeGeometry, centre: [f64; 2], k: f64) -> SpinorField {
    // spinor (1, i) is the even eigenvector of σ_y, the spin part of the y-reflection
    SpinorField::from_fn(g, |x, y| {
        let r2 = (x - centre[0]).powi(2) + (y - centre[1]).powi(2);
        let w = C64::from_polar((-r2 / 6.0).exp(), k * x);
        [w, w * C64::new(0.0, 1.0)]
    })
}

#[test]
fn massless_flat_run_keeps_reflection_symmetry() {
    let g = LatticeGeometry::new(32, 32, 1.0, 1.0).unwrap();
    let design = compile(&SpacetimeSpec::conical(0.0, 0.0), &g, &CompileOptions::default()).unwrap();
    let input = interior_packet(g, [-3.0, 0.0], 0.4);
    let rec = run_and_reconstruct(&design, &input, 6.0, Evolution::Effective, 0.01).unwrap();
    let mut worst: f64 = 0.0;
    for m in 0..g.ny {
        for n in 0..g.nx {
            worst = worst.max((rec.density[m * g.nx + n] - rec.density[(g.ny - 1 - m) * g.nx + n]).abs());
        }
    }
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn reconstructed_mass_matches_amplitude_norm() {
    let g = LatticeGeometry::new(48, 48, 1.0, 1.0).unwrap();
    let design = compile(&SpacetimeSpec::conical(0.2, 1.0), &g, &CompileOptions::default()).unwrap();
    let input = interior_packet(g, [-2.0, 2.0], 0.3);
    let cfg = IntegratorConfig { dz: Some(0.01), record_every: 0, ..Default::default() };
    let traj = evolve_effective(
        &waveguide_dirac::design::effective_couplings(&design).unwrap(),
        &design.detuning,
        &encode(&input, &design.f_grid).unwrap(),
        2.0,
        &cfg,
    )
    .unwrap();
    assert!(traj.warnings.is_empty(), "{:?}", traj.warnings);
    let rec = run_and_reconstruct(&design, &input, 2.0, Evolution::Effective, 0.01).unwrap();
    // Σ|c|² equals the g²-weighted spinor norm
    let direct = traj.last().norm_sqr() * g.cell_area();
    assert!((rec.mass_final - direct).abs() < 1e-12 * direct);
    assert!((rec.mass_final - rec.mass_initial).abs() < 1e-6 * rec.mass_initial);
    let back = decode(traj.last(), &design.f_grid, &g).unwrap();
    assert_eq!(back.density(), rec.density);
}

#[test]
fn outputs_round_trip_through_readers() {
    let cfg = quick();
    let input = prepare_ab_input(&cfg).unwrap();
    let design = ab_design(&cfg).unwrap();
    let map = map_density_to_phi(&input.state.density(), &cfg.geometry, cfg.delta);

    let mut buf = Vec::new();
    io::write_density_csv(&mut buf, &map).unwrap();
    let back = io::read_density_csv(&buf[..]).unwrap();
    assert_eq!(back.samples, map.samples);

    let mut buf = Vec::new();
    io::write_spinor_csv(&mut buf, &input.state).unwrap();
    assert_eq!(io::read_spinor_csv(&buf[..], cfg.geometry).unwrap(), input.state);

    let c = encode(&input.state, &design.f_grid).unwrap();
    let mut buf = Vec::new();
    io::write_wga1(&mut buf, &io::ComplexGrids::from_amplitudes(&[c.clone(), c.clone()]).unwrap()).unwrap();
    let grids = io::read_wga1(&buf[..]).unwrap();
    assert_eq!(grids.snapshots.len(), 2);
    assert_eq!(grids.to_amplitudes()[1].values, c.values);

    let mut buf = Vec::new();
    io::write_site_csv(&mut buf, c.cols, &c.intensity()).unwrap();
    let (cols, rows, vals) = io::read_site_csv(&buf[..]).unwrap();
    assert_eq!((cols, rows), (c.cols, c.rows));
    assert_eq!(vals, c.intensity());
}

#[test]
fn sampled_field_csv_round_trip() {
    let f = waveguide_dirac::spacetime::SampledField {
        x0: -1.5,
        y0: -2.0,
        hx: 0.5,
        hy: 0.25,
        nx: 7,
        ny: 17,
        values: (0..7 * 17).map(|i| (i as f64 * 0.37).sin() + 1.5).collect(),
    };
    let mut buf = Vec::new();
    io::write_sampled_field_csv(&mut buf, &f).unwrap();
    let back = io::read_sampled_field_csv(&buf[..]).unwrap();
    assert_eq!(back.values, f.values);
    assert_eq!((back.nx, back.ny), (7, 17));
    assert!((back.hx - 0.5).abs() < 1e-15 && (back.hy - 0.25).abs() < 1e-15);
}
