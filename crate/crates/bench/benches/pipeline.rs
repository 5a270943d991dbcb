use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ppln_bench::{joint_configs, rank_groups, sphere_cloud, tour_problem};
use ppln_core::analysis::{dunn_posthoc, kruskal_wallis, PMethod};
use ppln_core::arm::{inverse_kinematics, IkConfig};
use ppln_core::geometry::{estimate_point_normals, NormalParams};
use ppln_core::orchard::{default_camera_pose, render_frame, RenderConfig};
use ppln_core::sequencing::{solve_tour, TourConfig};
use ppln_core::{generate_scene, run_mission, ArmModel, CameraModel, MissionConfig, SceneConfig};

fn normals(c: &mut Criterion) {
    let mut group = c.benchmark_group("normals");
    for n in [1_000, 10_000] {
        let cloud = sphere_cloud(n, 0.1, 1);
        let params = NormalParams {
            radius: 0.015,
            ..NormalParams::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(n), &cloud, |b, cloud| {
            b.iter(|| estimate_point_normals(black_box(cloud), &params).unwrap())
        });
    }
    group.finish();
}

fn render(c: &mut Criterion) {
    let scene = generate_scene(&SceneConfig::benchmark(), 7).unwrap();
    let camera = CameraModel::depth_sensor();
    let pose = default_camera_pose();
    let config = RenderConfig::default();
    c.bench_function("render_1280x720", |b| {
        b.iter(|| render_frame(black_box(&scene), &camera, &pose, &config, 7))
    });
}

fn tour(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_tour");
    for n in [8, 16, 64] {
        let problem = tour_problem(n, 3);
        group.bench_with_input(BenchmarkId::from_parameter(n), &problem, |b, p| {
            b.iter(|| solve_tour(black_box(p), &TourConfig::default()))
        });
    }
    group.finish();
}

fn inverse_kinematics_bench(c: &mut Criterion) {
    let model = ArmModel::ur5e();
    let cases: Vec<_> = joint_configs(64, 5)
        .into_iter()
        .map(|q| {
            let mut seed = q;
            seed.q[0] += 0.1;
            (model.forward_kinematics(&q), seed)
        })
        .collect();
    c.bench_function("ik_64_targets", |b| {
        b.iter(|| {
            for (target, seed) in &cases {
                let _ = black_box(inverse_kinematics(
                    &model,
                    target,
                    seed,
                    &IkConfig::default(),
                ));
            }
        })
    });
}

fn rank_tests(c: &mut Criterion) {
    let mut group = c.benchmark_group("rank_tests");
    let small = rank_groups(5, 1);
    group.bench_function("kruskal_wallis_exact_3x5", |b| {
        b.iter(|| kruskal_wallis(black_box(&small), PMethod::Exact))
    });
    group.bench_function("dunn_exact_3x5", |b| {
        b.iter(|| dunn_posthoc(black_box(&small), 0.05, PMethod::Exact))
    });
    let large = rank_groups(200, 2);
    group.bench_function("kruskal_wallis_asymptotic_3x200", |b| {
        b.iter(|| kruskal_wallis(black_box(&large), PMethod::Asymptotic))
    });
    group.finish();
}

fn mission(c: &mut Criterion) {
    let scene = generate_scene(&SceneConfig::benchmark(), 7).unwrap();
    let config = MissionConfig::default();
    let mut group = c.benchmark_group("mission");
    group.sample_size(10);
    group.bench_function("benchmark_scene", |b| {
        b.iter(|| run_mission(black_box(&scene), &config, &[], 7).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    normals,
    render,
    tour,
    inverse_kinematics_bench,
    rank_tests,
    mission
);
criterion_main!(benches);
