use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use sislab_core::dynamics::{step_imex, CoefficientSet, SimState};
use sislab_core::expr::parse;
use sislab_core::grid::{assemble_neumann_laplacian, build_domain, DiscreteDomain, DomainSpec, ScalarField};
use sislab_core::linalg::{spd_solve, ShiftedOperator};
use sislab_core::spectral::{compute_lambda0, compute_r0};

fn disk() -> Arc<DiscreteDomain> {
    Arc::new(build_domain(&DomainSpec::disk_with_cell_size([0.0, 0.0], 1.0, 1.0 / 32.0)).unwrap())
}

fn coefficients(dom: &Arc<DiscreteDomain>, d_s: f64, d_i: f64) -> CoefficientSet {
    let beta = ScalarField::from_fn(dom, |x, y| 3.0 + 2.0 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()).unwrap();
    let one = ScalarField::constant(dom, 1.0);
    CoefficientSet::new(dom.clone(), beta, one.clone(), one.clone(), one, d_s, d_i, 1.0, 0.5).unwrap()
}

fn kernels(c: &mut Criterion) {
    let dom = disk();

    c.bench_function("assemble_laplacian_disk", |b| b.iter(|| assemble_neumann_laplacian(black_box(&dom))));

    let shift: Vec<f64> = dom.cell_measures().iter().map(|w| 11.0 * w).collect();
    let a = ShiftedOperator::new(dom.stiffness(), 1.0, shift);
    let rhs: Vec<f64> = dom.coords().iter().zip(dom.cell_measures()).map(|(p, w)| w * (p[0] - 0.3 * p[1])).collect();
    c.bench_function("cg_solve_disk", |b| b.iter(|| spd_solve(&a, black_box(&rhs), 1e-10)));

    let coeffs = coefficients(&dom, 1.0, 1e-3);
    let state = SimState::constant(&dom, 0.8, 0.2).unwrap();
    c.bench_function("imex_step_disk", |b| b.iter(|| step_imex(black_box(&state), &coeffs, 0.1).unwrap()));

    let mut group = c.benchmark_group("eigenpair");
    group.sample_size(10);
    group.bench_function("r0_disk", |b| b.iter(|| compute_r0(black_box(&coeffs)).unwrap()));
    group.bench_function("lambda0_disk", |b| b.iter(|| compute_lambda0(black_box(&coeffs)).unwrap()));
    group.finish();

    let expr = parse("3 + 2*sin(pi*x)*sin(pi*y)").unwrap();
    c.bench_function("formula_eval", |b| b.iter(|| expr.eval(black_box(0.3), black_box(-0.7)).unwrap()));
}

criterion_group!(benches, kernels);
criterion_main!(benches);
