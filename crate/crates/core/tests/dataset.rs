use std::collections::HashMap;

use lmnet::dataset::{
    augment_rotate_z, decode_kitti_bin, encode_kitti_bin, rasterize_with_map, read_kitti_bin, synth_dataset,
    synth_scene, write_kitti_bin, ClassStats, Scene, SynthConfig, CONTAINMENT_EPS,
};
use lmnet::geom::{decode_box, encode_frontal_view, BoxEncoding, ObjectClass, ProjectionConfig, BACKGROUND};
use proptest::prelude::*;

fn scenes(count: usize, seed: u64) -> Vec<Scene> {
    let cfg = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    synth_dataset(&cfg, &ProjectionConfig::default(), count).unwrap()
}

#[test]
fn synthetic_points_lie_in_their_boxes() {
    let base = SynthConfig::default();
    let beams = ProjectionConfig::default();
    for i in 0..100 {
        let scene = synth_scene(&base.for_index(i), &beams).unwrap();
        for (p, inst) in scene.points.iter().zip(&scene.point_instance) {
            if let Some(k) = inst {
                let b = &scene.instances[*k as usize];
                assert!(
                    b.contains(&p.position(), CONTAINMENT_EPS),
                    "scene {i}: point outside instance {k}"
                );
            }
        }
        scene.validate().unwrap();
    }
}

#[test]
fn corner_targets_decode_to_their_boxes() {
    let beams = ProjectionConfig::default();
    for scene in scenes(8, 3) {
        let map = encode_frontal_view(&scene.points, &beams);
        let t = rasterize_with_map(&scene, &map).unwrap();
        let n = t.height * t.width;
        let mut objects = 0;
        for row in 0..t.height {
            for col in 0..t.width {
                let p = row * t.width + col;
                let finite = (0..24).all(|ch| t.corners.data()[ch * n + p].is_finite());
                let is_object = t.classes[p] != BACKGROUND;
                assert_eq!(finite, is_object, "pixel ({row}, {col})");
                assert_eq!(t.instance_size[p] > 0.0, is_object);
                if !is_object {
                    continue;
                }
                objects += 1;
                let point = map.point_at(row, col).unwrap();
                let enc = BoxEncoding(std::array::from_fn(|ch| t.corners.data()[ch * n + p] as f64));
                let truth = &scene.instances[t.pixel_instance[p].unwrap() as usize];
                let decoded = decode_box(&point, &enc, truth.class).unwrap();
                assert!(decoded.max_corner_distance(truth) < 1e-4);
            }
        }
        assert_eq!(objects, t.object_count());
        assert_eq!(t.object_count() + t.background_count(), map.valid_count());
    }
}

#[test]
fn class_means_match_a_recount() {
    let beams = ProjectionConfig::default();
    let data = scenes(12, 5);
    let mut per_class: HashMap<ObjectClass, Vec<usize>> = HashMap::new();
    let mut targets = Vec::new();
    for scene in &data {
        let map = encode_frontal_view(&scene.points, &beams);
        let mut counts = vec![0usize; scene.instances.len()];
        for row in 0..map.height() {
            for col in 0..map.width() {
                if let Some(k) = map.source(row, col).and_then(|s| scene.point_instance[s]) {
                    counts[k as usize] += 1;
                }
            }
        }
        for (b, c) in scene.instances.iter().zip(counts) {
            if c > 0 {
                per_class.entry(b.class).or_default().push(c);
            }
        }
        targets.push(rasterize_with_map(scene, &map).unwrap());
    }
    let stats = ClassStats::from_targets(&targets);
    for class in ObjectClass::ALL {
        let counts = &per_class[&class];
        let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        assert!((stats.mean_size(class) as f64 - mean).abs() < 1e-3 * mean, "{class:?}");
        assert_eq!(stats.instance_count(class), counts.len() as u64);
    }
}

#[test]
fn rotation_keeps_object_pixels() {
    let beams = ProjectionConfig::default();
    for scene in scenes(4, 9) {
        let count = |s: &Scene| {
            rasterize_with_map(s, &encode_frontal_view(&s.points, &beams))
                .unwrap()
                .object_count()
        };
        let before = count(&scene);
        assert_eq!(count(&augment_rotate_z(&scene, 0.0)), before);
        // Whole-column turns keep every return in its own cell; objects sit
        // clear of the field-of-view edges.
        let turned = count(&augment_rotate_z(&scene, 5.0 * beams.azimuth_step));
        assert!(
            (turned as f64 - before as f64).abs() <= 0.01 * before as f64,
            "{before} -> {turned}"
        );
    }
}

#[test]
fn kitti_bin_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = &scenes(1, 11)[0];
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    write_kitti_bin(&a, &scene.points).unwrap();
    write_kitti_bin(&b, &read_kitti_bin(&a).unwrap()).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

proptest! {
    #[test]
    fn kitti_bin_bytes_round_trip(points in prop::collection::vec(any::<[u8; 16]>(), 0..64)) {
        let bytes: Vec<u8> = points.concat();
        prop_assert_eq!(encode_kitti_bin(&decode_kitti_bin(&bytes).unwrap()), bytes);
    }
}
