//! Sequential vs rayon execution of the data-parallel kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mvstdm::basis::{build_basis_matrix_with, BasisSpec};
use mvstdm::evaluate::crps_empirical;
use mvstdm::grid::build_icosahedral_grid;
use mvstdm::ingest::LatLonGrid;
use mvstdm::model::{Priors, TransitionBlocks};
use mvstdm::parallel::{map_range, Exec};
use mvstdm::rng::{fill_std_normal, stream_rng};
use mvstdm::sampler::{forward_filter, run_chains, sigma2_posterior, DynamicModel, SamplerConfig, TransitionMode};
use mvstdm::simulate::{reduced_spec, simulate_dataset, SimOutput};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn sim(n_times: usize) -> SimOutput {
    let mut spec = reduced_spec(5).unwrap();
    spec.n_times = n_times;
    simulate_dataset(&spec).unwrap()
}

fn model(out: &SimOutput, mode: TransitionMode) -> DynamicModel {
    let gram = mvstdm::basis::build_sar_matrix(&out.grid, 2.0).unwrap().gram();
    DynamicModel::new(out.phi.clone(), gram, out.obs.n_vars(), mode).unwrap()
}

fn basis(c: &mut Criterion) {
    let grid = build_icosahedral_grid(2).unwrap();
    let locs = LatLonGrid::new(24, 48).unwrap().locations();
    let spec = BasisSpec::new(&grid, &locs);
    let mut g = c.benchmark_group("basis_k162_n1152");
    for (name, exec) in POLICIES {
        g.bench_function(name, |b| b.iter(|| build_basis_matrix_with(black_box(&spec), exec).unwrap()));
    }
    g.finish();
}

fn sigma2(c: &mut Criterion) {
    let out = sim(60);
    let priors = Priors::standard(out.states.state_dim());
    let mut g = c.benchmark_group("sigma2_posterior");
    for (name, exec) in POLICIES {
        g.bench_function(name, |b| {
            b.iter(|| sigma2_posterior(&out.obs, &out.states, &out.phi, &priors, exec).unwrap())
        });
    }
    g.finish();
}

fn filter(c: &mut Criterion) {
    let out = sim(60);
    let m = model(&out, TransitionMode::Estimate);
    let blocks = TransitionBlocks::identity(3, m.basis_size()).unwrap();
    let priors = Priors::standard(m.state_dim());
    let tau2 = vec![5.0; 3];
    let mut g = c.benchmark_group("forward_filter");
    for (name, exec) in POLICIES {
        g.bench_function(name, |b| {
            b.iter(|| forward_filter(&m, &out.obs, &blocks, &tau2, &out.sigma2, &priors, exec).unwrap())
        });
    }
    g.finish();
}

fn crps(c: &mut Criterion) {
    let mut rng = stream_rng(1, 0);
    let samples: Vec<Vec<f64>> = (0..2000)
        .map(|_| {
            let mut v = vec![0.0; 1000];
            fill_std_normal(&mut rng, &mut v);
            v
        })
        .collect();
    let mut g = c.benchmark_group("crps_2000x1000");
    for (name, exec) in POLICIES {
        g.bench_function(name, |b| b.iter(|| map_range(exec, samples.len(), |e| crps_empirical(&samples[e], 0.3))));
    }
    g.finish();
}

fn chains(c: &mut Criterion) {
    let out = sim(20);
    let m = model(&out, TransitionMode::Estimate);
    let priors = Priors::standard(m.state_dim());
    let mut g = c.benchmark_group("run_chains");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        let config = SamplerConfig { n_chains: 2, burn_in: 5, exec, ..SamplerConfig::new(20, 3) };
        g.bench_with_input(BenchmarkId::new(name, "2x20"), &config, |b, cfg| {
            b.iter(|| run_chains(&m, &out.obs, &priors, cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, basis, sigma2, filter, crps, chains);
criterion_main!(benches);
