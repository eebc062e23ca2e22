mod common;

use std::time::{Duration, Instant};

use hdrfield::field::sh::C0;
use hdrfield::field::{DEFAULT_COLOR_OFFSET, SH_COEFFS, SIGMA_SLOT};
use hdrfield::io::Dataset;
use hdrfield::math::Aabb;
use hdrfield::oracle::{build_scene, camera_rig, render_gt_dataset, GtToneProfile, MANIFEST_FILE};
use hdrfield::render::RenderOptions;
use hdrfield::trainer::{TrainCheckpoint, TrainConfig, Trainer};
use hdrfield::Error;

fn train(ds: &Dataset, cfg: TrainConfig) -> Trainer {
    let mut t = Trainer::new(ds, cfg).unwrap();
    t.run(None, |_, _| Ok(())).unwrap();
    t
}

#[test]
fn smoke_run_is_fast_and_reduces_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::tiny_dataset(dir.path(), "varying", 1);
    let start = Instant::now();
    let mut t = Trainer::new(&ds, TrainConfig::smoke()).unwrap();
    let logs = t.run(None, |_, _| Ok(())).unwrap();
    assert!(start.elapsed() < Duration::from_secs(60));
    assert_eq!(logs.len(), 200);
    assert!(t.is_done());
    let first = logs[0].losses.recon;
    let last = logs[logs.len() - 10..].iter().map(|l| l.losses.recon).sum::<f64>() / 10.0;
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert!(t.grid().is_finite());
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::tiny_dataset(dir.path(), "varying", 2);
    let a = train(&ds, common::tiny_config(60)).checkpoint().to_bytes();
    let b = train(&ds, common::tiny_config(60)).checkpoint().to_bytes();
    assert_eq!(a, b);
    let c = train(&ds, TrainConfig { seed: 1, ..common::tiny_config(60) }).checkpoint().to_bytes();
    assert_ne!(a, c);
}

#[test]
fn parallel_mode_matches_itself() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::tiny_dataset(dir.path(), "varying", 2);
    let cfg = TrainConfig {
        deterministic: false,
        ..common::tiny_config(30)
    };
    let a = train(&ds, cfg.clone()).checkpoint().to_bytes();
    let b = train(&ds, cfg).checkpoint().to_bytes();
    assert_eq!(a, b);
}

#[test]
fn resuming_from_a_checkpoint_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::tiny_dataset(dir.path(), "varying", 3);
    let cfg = TrainConfig {
        ladder: vec![hdrfield::trainer::LadderStep {
            resolution: [12, 12, 12],
            at_step: 50,
        }],
        ..common::tiny_config(100)
    };
    let full = train(&ds, cfg.clone()).checkpoint().to_bytes();

    let mut first = Trainer::new(&ds, cfg).unwrap();
    first.run(Some(37), |_, _| Ok(())).unwrap();
    let bytes = first.checkpoint().to_bytes();
    let ck = TrainCheckpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ck.step, 37);
    let mut second = Trainer::resume(&ds, ck).unwrap();
    second.run(None, |_, _| Ok(())).unwrap();
    assert_eq!(second.checkpoint().to_bytes(), full);
}

#[test]
fn reference_view_stays_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::tiny_dataset(dir.path(), "varying", 4);
    for freeze_crf in [false, true] {
        let cfg = TrainConfig {
            freeze_reference_crf: freeze_crf,
            ..common::tiny_config(50)
        };
        let before = Trainer::new(&ds, cfg.clone()).unwrap();
        let r = before.reference();
        let t0 = before.tone()[r].clone();
        let after = train(&ds, cfg);
        let t1 = &after.tone()[r];
        assert!(t1.frozen);
        assert_eq!(t0.wb, t1.wb);
        assert_eq!(t0.crf == t1.crf, freeze_crf);
        // every other view moved
        for (i, (a, b)) in before.tone().iter().zip(after.tone()).enumerate() {
            if i != r {
                assert_ne!(a.wb, b.wb);
            }
        }
    }
}

#[test]
fn masked_sh_bands_do_not_move() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::tiny_dataset(dir.path(), "varying", 5);
    let cfg = TrainConfig {
        sh_mask_epochs: 10,
        ..common::tiny_config(80)
    };
    let t = train(&ds, cfg);
    let g = t.grid();
    let mut dc_moved = false;
    for i in 0..g.vertex_count() {
        let p = g.payload(i);
        for c in 0..3 {
            for k in 1..SH_COEFFS {
                assert_eq!(p[c * SH_COEFFS + k].to_bits(), 0f64.to_bits());
            }
            dc_moved |= p[c * SH_COEFFS] != 0.0;
        }
    }
    assert!(dc_moved);

    // masking only l = 2 lets l = 1 learn
    let cfg = TrainConfig {
        sh_mask_epochs: 10,
        sh_mask_min_band: 2,
        ..common::tiny_config(80)
    };
    let t = train(&ds, cfg);
    let g = t.grid();
    let band1 = (0..g.vertex_count()).any(|i| g.payload(i)[1] != 0.0);
    let band2 = (0..g.vertex_count()).any(|i| (4..SH_COEFFS).any(|k| g.payload(i)[k] != 0.0));
    assert!(band1 && !band2);
}

#[test]
fn scaling_radiance_against_white_balance_leaves_training_unchanged() {
    // Same geometry, radiance exactly ×2 and ground-truth gains ÷2: the LDR
    // observations are identical, so are the trajectories. Rendering the
    // oracle without the colour offset keeps the doubling exact.
    let (_, mut grid_a) = build_scene(&common::tiny_scene(), 11).unwrap();
    for i in 0..grid_a.vertex_count() {
        let p = grid_a.payload_mut(i);
        for c in 0..3 {
            p[c * SH_COEFFS] += DEFAULT_COLOR_OFFSET / C0;
        }
    }
    let mut grid_b = grid_a.clone();
    for i in 0..grid_b.vertex_count() {
        let p = grid_b.payload_mut(i);
        p[..SIGMA_SLOT].iter_mut().for_each(|v| *v *= 2.0);
    }
    let rig = camera_rig(&Aabb::cube(1.0), &common::tiny_rig(), 11).unwrap();
    let prof_a = GtToneProfile::varying(rig.len());
    let mut prof_b = prof_a.clone();
    prof_b.views.iter_mut().for_each(|v| v.wb = v.wb.map(|w| w / 2.0));
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let opts = RenderOptions {
        color_offset: 0.0,
        ..RenderOptions::for_grid(&grid_a)
    };
    let a = render_gt_dataset(&grid_a, &rig, &prof_a, &opts, da.path()).unwrap();
    let b = render_gt_dataset(&grid_b, &rig, &prof_b, &opts, db.path()).unwrap();
    assert_eq!(a.ldr, b.ldr);
    assert!(a.hdr.iter().any(|h| h.data.iter().any(|&v| v > 0.0)));
    for (x, y) in a.hdr.iter().zip(&b.hdr) {
        assert!(x.data.iter().zip(&y.data).all(|(u, v)| 2.0 * u == *v));
    }

    let ds_a = Dataset::load(&da.path().join(MANIFEST_FILE)).unwrap();
    let ds_b = Dataset::load(&db.path().join(MANIFEST_FILE)).unwrap();
    let cfg = TrainConfig {
        f32_params: false,
        ..common::tiny_config(40)
    };
    let ta = train(&ds_a, cfg.clone());
    let tb = train(&ds_b, cfg);
    assert_eq!(ta.grid().data(), tb.grid().data());
    assert_eq!(ta.tone(), tb.tone());
}

#[test]
fn divergence_stops_training_and_names_the_culprit() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::tiny_dataset(dir.path(), "varying", 6);
    let cfg = TrainConfig {
        lr_init: 50.0,
        lr_final: 50.0,
        sigma_lr_init: 1e4,
        sigma_lr_final: 1e4,
        sigma_lr_delay_steps: 0,
        ..common::tiny_config(100)
    };
    let mut t = Trainer::new(&ds, cfg).unwrap();
    match t.run(None, |_, _| Ok(())) {
        Err(Error::Divergence { component, value, initial, .. }) => {
            assert!(value > 10.0 * initial);
            assert!(
                ["recon", "tv_sigma", "tv_sh", "smooth"].iter().any(|n| component.starts_with(n)),
                "{component}"
            );
        }
        Err(Error::NonFinite { group }) => assert!(!group.is_empty()),
        other => panic!("expected divergence, got {:?}", other.map(|l| l.len())),
    }
}

#[test]
fn sigma_and_colour_are_learned_where_the_scene_is() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::tiny_dataset(dir.path(), "static", 7);
    let t = train(&ds, common::tiny_config(200));
    let g = t.grid();
    // the back wall is dense, the empty front is not
    let wall = g.interp_payload([0.4, 0.4, 0.8]).unwrap().sigma;
    let front = g.interp_payload([0.0, 0.0, -0.8]).unwrap().sigma;
    assert!(wall > 1.0, "wall {wall}");
    assert!(wall > 10.0 * front.max(0.0), "wall {wall}, front {front}");
    assert!(g.payload(0)[SIGMA_SLOT].is_finite());
}
