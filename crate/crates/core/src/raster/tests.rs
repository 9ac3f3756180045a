use super::*;
use crate::geom::Quat;
use crate::scene::random_scene;

fn axis_camera(w: u32, h: u32, f: f64) -> Camera {
    Camera {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
        fx: f,
        fy: f,
        cx: (w as f64 - 1.0) / 2.0,
        cy: (h as f64 - 1.0) / 2.0,
        width: w,
        height: h,
        near: 0.1,
        far: 100.0,
    }
}

fn blob(position: Vec3, s: f64, opacity: f64) -> GaussianPrimitive {
    GaussianPrimitive {
        position,
        rotation: Quat::IDENTITY,
        scale: [s; 3],
        opacity,
        sh_dc: [0.0; 3],
    }
}

#[test]
fn optical_axis_projects_to_principal_point() {
    let cam = axis_camera(33, 21, 40.0);
    let g = project_gaussian(&blob([0.0, 0.0, 5.0], 0.1, 1.0), 0, &cam, &RasterSettings::default()).unwrap();
    assert_eq!(g.mean2d, [cam.cx, cam.cy]);
    assert_eq!(g.depth, 5.0);
}

#[test]
fn isotropic_covariance_on_axis() {
    let cam = axis_camera(64, 64, 50.0);
    let (s, z) = (0.2, 4.0);
    let g = project_gaussian(&blob([0.0, 0.0, z], s, 1.0), 0, &cam, &RasterSettings::default()).unwrap();
    let expect = (cam.fx * s / z).powi(2) + 0.3;
    assert!((g.cov2d[0] - expect).abs() < 1e-12);
    assert!((g.cov2d[2] - expect).abs() < 1e-12);
    assert!(g.cov2d[1].abs() < 1e-12);
}

#[test]
fn off_axis_covariance_matches_jacobian_product() {
    let cam = axis_camera(64, 64, 50.0);
    let q = Quat::from_axis_angle([0.3, -0.2, 0.9], 0.7);
    let p = GaussianPrimitive {
        position: [0.4, -0.3, 3.0],
        rotation: q,
        scale: [0.05, 0.2, 0.1],
        opacity: 1.0,
        sh_dc: [0.0; 3],
    };
    let g = project_gaussian(&p, 0, &cam, &RasterSettings::default()).unwrap();
    // Independent oracle: Σ = Σ_k s_k² r_k r_kᵀ with r_k the rotated axes.
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].map(|e| q.rotate(e));
    let [x, y, z] = p.position;
    let j = [[cam.fx / z, 0.0, -cam.fx * x / (z * z)], [0.0, cam.fy / z, -cam.fy * y / (z * z)]];
    let mut cov = [[0.0; 2]; 2];
    for k in 0..3 {
        let ja = [geom::dot(j[0], axes[k]), geom::dot(j[1], axes[k])];
        for r in 0..2 {
            for c in 0..2 {
                cov[r][c] += p.scale[k].powi(2) * ja[r] * ja[c];
            }
        }
    }
    assert!((g.cov2d[0] - cov[0][0] - 0.3).abs() < 1e-10);
    assert!((g.cov2d[1] - cov[0][1]).abs() < 1e-10);
    assert!((g.cov2d[2] - cov[1][1] - 0.3).abs() < 1e-10);
}

#[test]
fn behind_near_plane_is_culled() {
    let cam = axis_camera(16, 16, 10.0);
    let s = RasterSettings::default();
    assert!(project_gaussian(&blob([0.0, 0.0, 0.05], 0.1, 1.0), 0, &cam, &s).is_none());
    assert!(project_gaussian(&blob([0.0, 0.0, -1.0], 0.1, 1.0), 0, &cam, &s).is_none());
    assert!(project_gaussian(&blob([100.0, 0.0, 1.0], 0.01, 1.0), 0, &cam, &s).is_none());
}

#[test]
fn single_gaussian_at_its_mean() {
    let cam = axis_camera(17, 17, 20.0);
    let scene = GaussianScene::new(vec![blob([0.0, 0.0, 2.0], 0.1, 0.6)]);
    let vw = render_weights(&scene, &cam);
    let recs = vw.pixel(8, 8);
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].weight, 0.6);
}

#[test]
fn two_coincident_gaussians_composite_sequentially() {
    let cam = axis_camera(17, 17, 20.0);
    let scene = GaussianScene::new(vec![
        blob([0.0, 0.0, 2.0], 0.1, 0.5),
        blob([0.0, 0.0, 2.0], 0.1, 0.5),
    ]);
    let recs = render_weights(&scene, &cam).pixel(8, 8).to_vec();
    assert_eq!(recs.len(), 2);
    assert_eq!((recs[0].gaussian, recs[0].weight), (0, 0.5));
    assert_eq!((recs[1].gaussian, recs[1].weight), (1, 0.25));
}

#[test]
fn empty_scene_renders_background() {
    let cam = axis_camera(8, 6, 5.0);
    let scene = GaussianScene::new(vec![]);
    let vw = render_weights(&scene, &cam);
    assert!(vw.records.is_empty());
    let img = render_rgb(&scene, &cam, [0.1, 0.2, 0.3]);
    assert!(img.pixels.iter().all(|&c| c == [0.1, 0.2, 0.3]));
}

#[test]
fn opaque_red_pixel() {
    let cam = axis_camera(17, 17, 20.0);
    let mut g = blob([0.0, 0.0, 2.0], 0.5, 1.0);
    g.sh_dc = GaussianPrimitive::sh_from_rgb([1.0, 0.0, 0.0]);
    let scene = GaussianScene::new(vec![g]);
    let bg = [0.0, 0.0, 1.0];
    let c = render_rgb(&scene, &cam, bg).get(8, 8);
    let expect = [0.99, 0.0, 0.01];
    for k in 0..3 {
        assert!((c[k] - expect[k]).abs() < 1e-9, "{c:?}");
    }
}

#[test]
fn rgb_is_blend_of_weights() {
    let scene = random_scene(300, 5);
    let cam = &default_view_ring(&scene, 3, (48, 40)).unwrap()[1];
    let bg = [0.2, 0.7, 0.4];
    let img = render_rgb(&scene, cam, bg);
    let vw = render_weights(&scene, cam);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let p = (y * cam.width + x) as usize;
            let mut manual = bg.map(|b| b * vw.t_final[p]);
            for r in vw.pixel(x, y) {
                let c = scene.primitives[r.gaussian as usize].rgb();
                for k in 0..3 {
                    manual[k] += r.weight * c[k];
                }
            }
            for k in 0..3 {
                assert!((img.get(x, y)[k] - manual[k]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn weights_sum_to_one_minus_transmittance() {
    let settings = RasterSettings {
        weight_cutoff: 0.0,
        ..RasterSettings::default()
    };
    for seed in 0..10 {
        let scene = random_scene(200, seed);
        for cam in default_view_ring(&scene, 2, (32, 32)).unwrap() {
            let vw = render_weights_with(&scene, &cam, &settings);
            for p in 0..cam.num_pixels() {
                let recs = &vw.records[vw.offsets[p]..vw.offsets[p + 1]];
                assert!(recs.iter().all(|r| r.weight >= 0.0));
                let s: f64 = recs.iter().map(|r| r.weight).sum();
                assert!((s - (1.0 - vw.t_final[p])).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn opaque_front_scales_later_weights_by_one_percent() {
    let cam = axis_camera(17, 17, 20.0);
    let behind = blob([0.0, 0.0, 3.0], 0.2, 0.7);
    let alone = render_weights(&GaussianScene::new(vec![behind.clone()]), &cam);
    let scene = GaussianScene::new(vec![blob([0.0, 0.0, 2.0], 0.5, 1.0), behind]);
    let both = render_weights(&scene, &cam);
    let w_alone = alone.pixel(8, 8)[0].weight;
    let recs = both.pixel(8, 8);
    assert_eq!(recs[0].weight, 0.99);
    assert_eq!(recs[1].weight, w_alone * (1.0 - 0.99));
}

#[test]
fn parallel_and_serial_agree() {
    let scene = random_scene(500, 9);
    let cam = &default_view_ring(&scene, 1, (70, 50)).unwrap()[0];
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| render_weights(&scene, cam))
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn view_ring_geometry() {
    let scene = random_scene(100, 2);
    let (center, radius) = scene.bounding_sphere().unwrap();
    let cams = default_view_ring(&scene, 4, (64, 64)).unwrap();
    for (k, cam) in cams.iter().enumerate() {
        let d = geom::sub(cam.eye(), center);
        assert!((geom::norm(d) - 1.5 * radius).abs() < 1e-9);
        let az = d[1].atan2(d[0]).to_degrees().rem_euclid(360.0);
        assert!((az - 90.0 * k as f64).abs() < 1e-9 || (az - 360.0).abs() < 1e-9);
        let el = (d[2] / geom::norm(d)).asin().to_degrees();
        assert!((el - 30.0).abs() < 1e-9);
        let c = cam.world_to_camera(center);
        assert!(c[0].abs() < 1e-9 && c[1].abs() < 1e-9);
    }
    assert_eq!(default_view_ring(&scene, 1, (8, 8)).unwrap().len(), 1);
    assert!(default_view_ring(&scene, 0, (8, 8)).is_err());
    let single = GaussianScene::new(vec![blob([1.0, 1.0, 1.0], 0.1, 1.0)]);
    assert!(default_view_ring(&single, 2, (8, 8)).is_err());
}

#[test]
fn view_ring_sees_whole_bounding_sphere() {
    let scene = random_scene(100, 4);
    let (center, radius) = scene.bounding_sphere().unwrap();
    for cam in default_view_ring(&scene, 8, (64, 48)).unwrap() {
        // Sample the sphere surface and check every point lands in the image.
        for i in 0..200 {
            let t = std::f64::consts::PI * (i as f64 + 0.5) / 200.0;
            let ph = 2.399963229728653 * i as f64;
            let dir = [t.sin() * ph.cos(), t.sin() * ph.sin(), t.cos()];
            let p = cam.world_to_camera(geom::add(center, geom::scale(dir, radius)));
            assert!(p[2] > cam.near && p[2] < cam.far);
            let u = cam.fx * p[0] / p[2] + cam.cx;
            let v = cam.fy * p[1] / p[2] + cam.cy;
            assert!(u >= 0.0 && u <= cam.width as f64 - 1.0, "u={u}");
            assert!(v >= 0.0 && v <= cam.height as f64 - 1.0, "v={v}");
        }
    }
}

#[test]
fn resolution_doubling_preserves_weight_density() {
    let scene = GaussianScene::new(vec![blob([0.0, 0.0, 4.0], 0.3, 0.8), blob([0.5, 0.2, 5.0], 0.25, 0.6)]);
    let lo = render_weights(&scene, &axis_camera(64, 64, 60.0));
    let hi = render_weights(&scene, &axis_camera(128, 128, 120.0));
    let (a, b) = (lo.total_per_gaussian(2), hi.total_per_gaussian(2));
    for i in 0..2 {
        let ratio = (b[i] / 4.0) / a[i];
        assert!((ratio - 1.0).abs() < 0.1, "gaussian {i}: {ratio}");
    }
}

#[test]
fn weight_dump_roundtrip() {
    let scene = random_scene(100, 1);
    let cam = &default_view_ring(&scene, 1, (24, 24)).unwrap()[0];
    let vw = render_weights(&scene, cam);
    let mut buf = Vec::new();
    write_weight_dump(&vw.records, &mut buf).unwrap();
    assert_eq!(buf.len(), 4 + 12 * vw.records.len());
    let back = read_weight_dump(&mut buf.as_slice()).unwrap();
    for (a, b) in vw.records.iter().zip(&back) {
        assert_eq!((a.x, a.y, a.gaussian), (b.x, b.y, b.gaussian));
        assert_eq!(b.weight, a.weight as f32 as f64);
    }
    assert!(read_weight_dump(&mut &buf[..buf.len() - 1]).is_err());
}

#[test]
fn ppm_header_and_size() {
    let img = Image::filled(3, 2, [1.0, 0.5, 0.0]);
    let mut buf = Vec::new();
    write_ppm(&img, &mut buf).unwrap();
    assert!(buf.starts_with(b"P6\n3 2\n255\n"));
    assert_eq!(buf.len(), 11 + 18);
    assert_eq!(&buf[11..14], &[255, 128, 0]);
}
