use metricforge::geometry::{
    make_synthetic_scene, project_points, unproject_depth, CameraIntrinsics, PointCloud, RigidTransform, SceneKind,
    SceneSpec,
};
use metricforge::DepthGrid;
use nalgebra::Vector3;
use proptest::prelude::*;

fn transform() -> impl Strategy<Value = RigidTransform> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        -3.0f64..3.0,
        prop::array::uniform3(-10.0f64..10.0),
    )
        .prop_filter("non-zero axis", |(a, _, _)| a.iter().map(|v| v * v).sum::<f64>() > 1e-3)
        .prop_map(|(a, angle, t)| RigidTransform::from_axis_angle(Vector3::from(a), angle, Vector3::from(t)).unwrap())
}

/// Per-pixel minimum over the points that land in it, first point on ties.
fn zbuffer_oracle(cloud: &PointCloud, pose: &RigidTransform, cam: &CameraIntrinsics) -> Vec<Option<f64>> {
    let mut out = vec![None; cam.width * cam.height];
    for (y, x) in (0..cam.height).flat_map(|y| (0..cam.width).map(move |x| (y, x))) {
        let mut best: Option<f64> = None;
        for p in cloud.points() {
            let pc = pose.apply(p);
            if cam.pixel_of(&pc) == Some((x, y)) && best.is_none_or(|b| pc.z < b) {
                best = Some(pc.z);
            }
        }
        out[y * cam.width + x] = best;
    }
    out
}

fn as_options(grid: &DepthGrid) -> Vec<Option<f64>> {
    grid.depth()
        .iter()
        .zip(grid.mask())
        .map(|(&d, &m)| m.then_some(d))
        .collect()
}

proptest! {
    #[test]
    fn composition_is_associative(a in transform(), b in transform(), c in transform()) {
        let left = a.compose(&b).compose(&c);
        let right = a.compose(&b.compose(&c));
        prop_assert!((left.rotation() - right.rotation()).abs().max() < 1e-12);
        prop_assert!((left.translation() - right.translation()).abs().max() < 1e-12);
    }

    #[test]
    fn inverse_undoes_transform(t in transform(), p in prop::array::uniform3(-5.0f64..5.0)) {
        let p = Vector3::from(p);
        prop_assert!((t.inverse().apply(&t.apply(&p)) - p).abs().max() < 1e-12);
    }

    #[test]
    fn zbuffer_matches_oracle(
        pts in prop::collection::vec((0usize..8, 0usize..6, prop::sample::select(vec![1.0, 1.5, 2.0, 2.5])), 1..60),
        jitter in prop::collection::vec(0.0f64..0.9, 60),
    ) {
        // Few distinct depths so that exact ties occur.
        let cam = CameraIntrinsics::centered(10.0, 8, 6).unwrap();
        let points: Vec<_> = pts
            .iter()
            .zip(&jitter)
            .map(|(&(x, y, d), &j)| cam.unproject(x as f64 + j, y as f64 + j, d))
            .collect();
        let cloud = PointCloud::new(points).unwrap();
        let pose = RigidTransform::identity();
        let grid = project_points(&cloud, &pose, &cam).unwrap();
        prop_assert_eq!(as_options(&grid), zbuffer_oracle(&cloud, &pose, &cam));
    }

    #[test]
    fn synthetic_projection_round_trip(seed in any::<u64>(), kind in 0usize..3) {
        let kind = [
            SceneKind::Plane { depth: 4.0 },
            SceneKind::Sphere { center: [0.2, -0.1, 6.0], radius: 2.0 },
            SceneKind::BoxRoom { half_width: 3.0, half_height: 2.0, depth: 8.0 },
        ][kind];
        let scene = make_synthetic_scene(seed, &SceneSpec::new(kind, 24, 18, 20.0)).unwrap();
        let grid = project_points(&scene.cloud, &scene.pose, &scene.intrinsics).unwrap();
        prop_assert_eq!(grid.mask(), scene.depth.mask());
        for (a, b) in grid.depth().iter().zip(scene.depth.depth()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        // Unprojecting and re-projecting the grid reproduces it.
        let pm = unproject_depth(&grid, &scene.intrinsics).unwrap();
        let pts: Vec<_> = pm.coords().iter().zip(pm.mask()).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
        let again = project_points(&PointCloud::new(pts).unwrap(), &RigidTransform::identity(), &scene.intrinsics).unwrap();
        prop_assert_eq!(again.mask(), grid.mask());
        for (a, b) in again.depth().iter().zip(grid.depth()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn synthetic_scene_zbuffer_matches_oracle() {
    let spec = SceneSpec::new(
        SceneKind::Sphere {
            center: [0.0, 0.0, 5.0],
            radius: 2.5,
        },
        16,
        12,
        14.0,
    );
    for seed in 0..5 {
        let scene = make_synthetic_scene(seed, &spec).unwrap();
        let grid = project_points(&scene.cloud, &scene.pose, &scene.intrinsics).unwrap();
        assert_eq!(
            as_options(&grid),
            zbuffer_oracle(&scene.cloud, &scene.pose, &scene.intrinsics)
        );
    }
}

#[test]
fn scene_kinds_parse_from_cli_syntax() {
    assert_eq!("plane:3".parse::<SceneKind>().unwrap(), SceneKind::Plane { depth: 3.0 });
    assert!("cylinder:1".parse::<SceneKind>().is_err());
}
