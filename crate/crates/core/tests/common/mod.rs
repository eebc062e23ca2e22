#![allow(dead_code)]

use std::path::Path;

use hdrfield::io::Dataset;
use hdrfield::math::Aabb;
use hdrfield::oracle::{synthesize, Primitive, RigSpec, SceneSpec, Shape, MANIFEST_FILE};
use hdrfield::trainer::TrainConfig;

/// A handful of emitters spanning dark, mid and over-bright radiance.
pub fn tiny_scene() -> SceneSpec {
    let b = |center, half, emission| Primitive {
        shape: Shape::Box { half },
        center,
        emission,
        sigma: 40.0,
    };
    SceneSpec {
        bounds: Aabb::cube(1.0),
        resolution: [16, 16, 16],
        background_sigma: 0.0,
        glossy: false,
        primitives: vec![
            b([-0.4, -0.4, 0.8], [0.4, 0.4, 0.15], [0.05, 0.03, 0.02]),
            b([0.4, -0.4, 0.8], [0.4, 0.4, 0.15], [0.3, 0.35, 0.25]),
            b([-0.4, 0.4, 0.8], [0.4, 0.4, 0.15], [0.12, 0.1, 0.15]),
            b([0.4, 0.4, 0.8], [0.4, 0.4, 0.15], [0.5, 0.45, 0.4]),
            Primitive {
                shape: Shape::Sphere { radius: 0.3 },
                center: [0.0, 0.0, 0.1],
                emission: [1.4, 0.8, 0.01],
                sigma: 8.0,
            },
        ],
    }
}

pub fn tiny_rig() -> RigSpec {
    RigSpec {
        views: 6,
        test_views: 1,
        width: 16,
        height: 16,
        focal: 18.0,
        ..RigSpec::default()
    }
}

pub fn tiny_dataset(dir: &Path, profile: &str, seed: u64) -> Dataset {
    synthesize(&tiny_scene(), &tiny_rig(), profile, seed, dir).unwrap();
    Dataset::load(&dir.join(MANIFEST_FILE)).unwrap()
}

/// Short schedule on an 8³ grid.
pub fn tiny_config(steps: u64) -> TrainConfig {
    TrainConfig {
        iters_per_epoch: steps,
        total_lr_steps: steps,
        rays_per_batch: 128,
        ..TrainConfig::smoke()
    }
}
