//! Analytic emission-only scenes and their rasterization onto a voxel grid.
//!
//! Scene files are flat text:
//!
//! ```text
//! bounds = -1,-1,-1, 1,1,1
//! resolution = 64,64,64
//! background_sigma = 0
//! glossy = false
//! sphere center=0,0,0 radius=0.3 emission=2,1.5,1 sigma=20
//! box center=0,0,0.9 half=1,1,0.1 emission=0.1,0.1,0.1 sigma=60
//! ```
//!
//! Later primitives overwrite earlier ones where they overlap.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::sh::C0;
use crate::field::{VertexPayload, VoxelGrid, SH_COEFFS};
use crate::math::{Aabb, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub center: Vec3,
    pub emission: [f64; 3],
    pub sigma: f64,
}

impl Primitive {
    pub fn contains(&self, p: Vec3) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        match self.shape {
            Shape::Sphere { radius } => d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius,
            Shape::Box { half } => (0..3).all(|a| d[a].abs() <= half[a]),
        }
    }

    pub fn volume(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
            Shape::Box { half } => 8.0 * half[0] * half[1] * half[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub bounds: Aabb,
    pub resolution: [usize; 3],
    pub background_sigma: f64,
    /// Adds seeded view-dependent (l = 1, 2) coefficients to every primitive.
    pub glossy: bool,
    pub primitives: Vec<Primitive>,
}

fn parse_list<const N: usize>(v: &str) -> std::result::Result<[f64; N], String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated numbers, got {v:?}"));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("bad number {p:?}"))?;
    }
    Ok(out)
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl SceneSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SceneSpec {
            bounds: Aabb::cube(1.0),
            resolution: [64; 3],
            background_sigma: 0.0,
            glossy: false,
            primitives: Vec::new(),
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |d: String| Error::format("scene spec", format!("line {}: {d}", lineno + 1));
            let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            if head == "sphere" || head == "box" {
                spec.primitives.push(parse_primitive(head, rest).map_err(err)?);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value or a primitive".into()))?;
            let value = value.trim();
            match key.trim() {
                "bounds" => {
                    let b: [f64; 6] = parse_list(value).map_err(err)?;
                    spec.bounds = Aabb::new([b[0], b[1], b[2]], [b[3], b[4], b[5]])
                        .map_err(|e| err(e.to_string()))?;
                }
                "resolution" => {
                    let r: [f64; 3] = parse_list(value).map_err(err)?;
                    if r.iter().any(|&v| !(v >= 1.0) || v.fract() != 0.0) {
                        return Err(err("resolution must be positive integers".into()));
                    }
                    spec.resolution = r.map(|v| v as usize);
                }
                "background_sigma" => {
                    spec.background_sigma = value.parse().map_err(|_| err(format!("bad number {value:?}")))?;
                    if !(spec.background_sigma >= 0.0) {
                        return Err(err("background_sigma must be >= 0".into()));
                    }
                }
                "glossy" => spec.glossy = value.parse().map_err(|_| err(format!("bad boolean {value:?}")))?,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        if spec.primitives.is_empty() {
            return Err(Error::format("scene spec", "no primitives"));
        }
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let b = &self.bounds;
        let mut s = String::new();
        let _ = writeln!(s, "bounds = {}", fmt_list(&[b.min[0], b.min[1], b.min[2], b.max[0], b.max[1], b.max[2]]));
        let r = self.resolution;
        let _ = writeln!(s, "resolution = {},{},{}", r[0], r[1], r[2]);
        let _ = writeln!(s, "background_sigma = {}", self.background_sigma);
        let _ = writeln!(s, "glossy = {}", self.glossy);
        for p in &self.primitives {
            let (name, size) = match p.shape {
                Shape::Sphere { radius } => ("sphere", format!("radius={radius}")),
                Shape::Box { half } => ("box", format!("half={}", fmt_list(&half))),
            };
            let _ = writeln!(
                s,
                "{name} center={} {size} emission={} sigma={}",
                fmt_list(&p.center),
                fmt_list(&p.emission),
                p.sigma
            );
        }
        s
    }
}

fn parse_primitive(kind: &str, rest: &str) -> std::result::Result<Primitive, String> {
    let mut center = None;
    let mut size = None;
    let mut emission = None;
    let mut sigma = None;
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| format!("expected key=value, got {tok:?}"))?;
        match (kind, k) {
            (_, "center") => center = Some(parse_list::<3>(v)?),
            ("sphere", "radius") => {
                let r: f64 = v.parse().map_err(|_| format!("bad radius {v:?}"))?;
                size = Some(Shape::Sphere { radius: r });
            }
            ("box", "half") => size = Some(Shape::Box { half: parse_list::<3>(v)? }),
            (_, "emission") => emission = Some(parse_list::<3>(v)?),
            (_, "sigma") => sigma = Some(v.parse::<f64>().map_err(|_| format!("bad sigma {v:?}"))?),
            _ => return Err(format!("unknown {kind} attribute {k:?}")),
        }
    }
    let p = Primitive {
        shape: size.ok_or(format!("{kind} needs a size"))?,
        center: center.ok_or(format!("{kind} needs center="))?,
        emission: emission.ok_or(format!("{kind} needs emission="))?,
        sigma: sigma.ok_or(format!("{kind} needs sigma="))?,
    };
    let size_ok = match p.shape {
        Shape::Sphere { radius } => radius > 0.0,
        Shape::Box { half } => half.iter().all(|&h| h > 0.0),
    };
    if !size_ok || !(p.sigma >= 0.0) || !p.emission.iter().all(|&e| e >= 0.0 && e.is_finite()) {
        return Err(format!("{kind}: sizes must be positive, sigma and emission nonnegative"));
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleScene {
    pub spec: SceneSpec,
    /// Per-primitive SH payloads (DC encodes the emission; higher bands are
    /// nonzero only for glossy scenes).
    pub payloads: Vec<VertexPayload>,
    pub background: VertexPayload,
}

/// Payload whose radiance (with the default 0.5 offset) is `emission` in
/// every direction.
pub fn emission_payload(emission: [f64; 3], sigma: f64) -> VertexPayload {
    let mut p = VertexPayload {
        sigma,
        ..VertexPayload::ZERO
    };
    for c in 0..3 {
        p.sh[c][0] = (emission[c] - crate::field::DEFAULT_COLOR_OFFSET) / C0;
    }
    p
}

/// Builds the scene and rasterizes it by point-sampling vertex positions.
/// Vertices whose whole neighbourhood is empty space are marked unoccupied,
/// which does not change any rendering when the background is transparent.
pub fn build_scene(spec: &SceneSpec, seed: u64) -> Result<(OracleScene, VoxelGrid)> {
    if spec.primitives.is_empty() {
        return Err(Error::invalid("scene has no primitives"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let payloads: Vec<VertexPayload> = spec
        .primitives
        .iter()
        .map(|p| {
            let mut v = emission_payload(p.emission, p.sigma);
            if spec.glossy {
                // Keep the view-dependent swing well below the DC level.
                let amp = 0.15 * p.emission.iter().cloned().fold(0.0, f64::max) / C0;
                for c in 0..3 {
                    for k in 1..SH_COEFFS {
                        v.sh[c][k] = amp * rng.gen_range(-1.0..1.0) / SH_COEFFS as f64;
                    }
                }
            }
            v
        })
        .collect();
    let background = emission_payload([0.0; 3], spec.background_sigma);
    let mut grid = VoxelGrid::filled(spec.resolution, spec.bounds, &background)?;
    for idx in 0..grid.vertex_count() {
        let pos = grid.vertex_position(idx);
        if let Some(i) = spec.primitives.iter().rposition(|p| p.contains(pos)) {
            grid.set_vertex(idx, &payloads[i]);
        }
    }
    if spec.background_sigma == 0.0 {
        grid = grid.prune(f64::MIN_POSITIVE)?;
    }
    Ok((
        OracleScene {
            spec: spec.clone(),
            payloads,
            background,
        },
        grid,
    ))
}

/// The default closed-loop scene: an open-fronted box "room" whose walls
/// are tiled with a log-spaced step wedge, semi-transparent coloured
/// spheres (their mixtures with the walls behind constrain the response
/// curve's shape), a bright emitter above 1 and an object with a near-black
/// channel.
pub fn default_scene_spec() -> SceneSpec {
    let levels: Vec<f64> = (0..16)
        .map(|i| 0.008 * (0.5f64 / 0.008).powf(i as f64 / 15.0))
        .collect();
    let tints = [[1.0, 0.85, 0.7], [0.75, 1.0, 0.85], [0.8, 0.8, 1.0], [1.0, 1.0, 1.0]];
    let mut prims = Vec::new();
    let mut tile = 0usize;
    let mut add_tile = |center: Vec3, half: Vec3, prims: &mut Vec<Primitive>| {
        // Interleave bright and dark tiles so neighbours contrast.
        let level = levels[(tile * 7) % levels.len()];
        let tint = tints[tile % tints.len()];
        prims.push(Primitive {
            shape: Shape::Box { half },
            center,
            emission: [level * tint[0], level * tint[1], level * tint[2]],
            sigma: 60.0,
        });
        tile += 1;
    };
    let t = 0.1; // wall half-thickness
    // Back wall: 4×4 tiles at z ∈ [0.8, 1].
    for j in 0..4 {
        for i in 0..4 {
            let c = [-0.75 + 0.5 * i as f64, -0.75 + 0.5 * j as f64, 1.0 - t];
            add_tile(c, [0.25, 0.25, t], &mut prims);
        }
    }
    // Side walls, floor and ceiling: 4 tiles deep along z ∈ [-1, 0.8].
    for k in 0..4 {
        let z = -1.0 + 0.225 + 0.45 * k as f64;
        for s in 0..4 {
            let u = -0.6 + 0.4 * s as f64;
            for (center, half) in [
                ([-1.0 + t, u, z], [t, 0.2, 0.225]),
                ([1.0 - t, u, z], [t, 0.2, 0.225]),
                ([u, 1.0 - t, z], [0.2, t, 0.225]),
                ([u, -1.0 + t, z], [0.2, t, 0.225]),
            ] {
                add_tile(center, half, &mut prims);
            }
        }
    }
    let sphere = |center: Vec3, radius: f64, emission: [f64; 3], sigma: f64| Primitive {
        shape: Shape::Sphere { radius },
        center,
        emission,
        sigma,
    };
    prims.push(sphere([-0.35, 0.2, 0.1], 0.3, [0.3, 0.08, 0.04], 2.5));
    prims.push(sphere([0.3, -0.25, -0.15], 0.28, [0.03, 0.12, 0.35], 2.5));
    prims.push(sphere([0.05, 0.35, 0.45], 0.25, [0.12, 0.3, 0.06], 2.0));
    prims.push(sphere([0.45, 0.45, 0.35], 0.12, [2.5, 2.0, 1.6], 60.0));
    prims.push(Primitive {
        shape: Shape::Box { half: [0.14, 0.14, 0.14] },
        center: [-0.45, -0.45, 0.25],
        emission: [0.4, 0.25, 0.03],
        sigma: 60.0,
    });
    SceneSpec {
        bounds: Aabb::cube(1.0),
        resolution: [64; 3],
        background_sigma: 0.0,
        glossy: false,
        primitives: prims,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_sphere(res: usize) -> SceneSpec {
        SceneSpec::parse(&format!(
            "resolution = {res},{res},{res}\nbackground_sigma = 0.5\nsphere center=0,0,0 radius=0.5 emission=2,1,0.5 sigma=7\n"
        ))
        .unwrap()
    }

    #[test]
    fn sphere_inclusion() {
        let (_, g) = build_scene(&single_sphere(8), 0).unwrap();
        let c = g.vertex_index(4, 4, 4);
        assert_eq!(g.vertex(c).sigma, 7.0);
        assert_eq!(g.vertex(0).sigma, 0.5);
        let e = crate::field::eval_radiance(&g.vertex(c), [0.0, 0.0, 1.0]).unwrap();
        for (a, b) in e.iter().zip([2.0, 1.0, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
        let bg = crate::field::eval_radiance(&g.vertex(0), [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(bg, [0.0; 3]);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut spec = default_scene_spec();
        spec.resolution = [16; 3];
        spec.glossy = true;
        let (_, a) = build_scene(&spec, 3).unwrap();
        let (_, b) = build_scene(&spec, 3).unwrap();
        let (_, c) = build_scene(&spec, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sphere_volume_count() {
        let (_, g) = build_scene(&single_sphere(64), 0).unwrap();
        let inside = (0..g.vertex_count()).filter(|&i| g.vertex(i).sigma == 7.0).count() as f64;
        let v = g.voxel_size();
        let expect = 4.0 / 3.0 * std::f64::consts::PI * 0.125 / (v[0] * v[1] * v[2]);
        assert!((inside / expect - 1.0).abs() < 0.1, "{inside} vs {expect}");
    }

    #[test]
    fn spec_text_round_trip_and_errors() {
        let spec = default_scene_spec();
        assert_eq!(SceneSpec::parse(&spec.to_text()).unwrap(), spec);
        assert!(SceneSpec::parse("").is_err());
        assert!(SceneSpec::parse("bounds = 0,0,0,1,1,1\n").is_err());
        assert!(SceneSpec::parse("sphere center=0,0,0 radius=-1 emission=1,1,1 sigma=1").is_err());
        assert!(SceneSpec::parse("cone center=0,0,0").is_err());
    }

    #[test]
    fn default_scene_covers_both_saturation_extremes() {
        let spec = default_scene_spec();
        let all = spec.primitives.iter().flat_map(|p| p.emission);
        let (lo, hi) = all.fold((f64::INFINITY, 0.0f64), |(l, h), e| (l.min(e), h.max(e)));
        assert!(hi > 1.0 && lo < 0.05);
    }
}
