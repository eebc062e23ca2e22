//! Versioned training checkpoint.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "HFCK", version u32
//! step u64, reference view u32, initial loss f64 (NaN when unset)
//! config: u32 length + UTF-8 `key = value` text
//! views u32, then per view:
//!   id (u32 length + UTF-8), fx fy cx cy f64, width height u32,
//!   rotation 9 × f64 (row-major camera-to-world), translation 3 × f64,
//!   wb 3 × f64, alpha f64, frozen u8, crf 3 × 256 × f64
//! grid: u64 length + grid checkpoint bytes (f32 payloads when the config
//!   rounds parameters to f32, f64 otherwise)
//! optimizer present u8, then grid second moments (f64 per scalar), last
//!   update step (u64 per vertex) and per-view wb/crf second moments
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use crate::field::{read_grid, write_grid_with, Precision, VoxelGrid, PAYLOAD_LEN};
use crate::render::Camera;
use crate::tonemap::{ToneGrad, ToneMapParams, CRF_KNOTS};
use crate::trainer::{OptimizerState, TrainConfig};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainCheckpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub reference: usize,
    pub initial_loss: Option<f64>,
    pub view_ids: Vec<String>,
    pub cameras: Vec<Camera>,
    pub tone: Vec<ToneMapParams>,
    pub grid: VoxelGrid,
    pub optimizer: Option<OptimizerState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::format("training checkpoint", "truncated"))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn vec(&mut self, n: usize) -> Result<Vec<u8>> {
        let remaining = self.0.get_ref().len() as u64 - self.0.position();
        if n as u64 > remaining {
            return Err(Error::format("training checkpoint", "truncated"));
        }
        let mut v = vec![0u8; n];
        self.0.read_exact(&mut v).expect("length checked");
        Ok(v)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.vec(n)?).map_err(|_| Error::format("training checkpoint", "invalid UTF-8"))
    }
}

impl TrainCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u64(self.step);
        w.u32(self.reference as u32);
        w.f64(self.initial_loss.unwrap_or(f64::NAN));
        w.str(&self.config.to_text());
        w.u32(self.view_ids.len() as u32);
        for ((id, cam), tone) in self.view_ids.iter().zip(&self.cameras).zip(&self.tone) {
            w.str(id);
            for v in [cam.fx, cam.fy, cam.cx, cam.cy] {
                w.f64(v);
            }
            w.u32(cam.width);
            w.u32(cam.height);
            for v in cam.rotation.iter().flatten().chain(&cam.translation) {
                w.f64(*v);
            }
            for v in tone.wb {
                w.f64(v);
            }
            w.f64(tone.alpha);
            w.u8(tone.frozen as u8);
            for v in tone.crf.iter().flatten() {
                w.f64(*v);
            }
        }
        let precision = if self.config.f32_params {
            Precision::F32
        } else {
            Precision::F64
        };
        let mut grid = Vec::new();
        write_grid_with(&self.grid, precision, &mut grid).expect("writing to memory");
        w.u64(grid.len() as u64);
        w.0.extend_from_slice(&grid);
        match &self.optimizer {
            None => w.u8(0),
            Some(o) => {
                w.u8(1);
                for v in &o.grid_v {
                    w.f64(*v);
                }
                for v in &o.grid_last {
                    w.u64(*v);
                }
                for t in &o.tone_v {
                    for v in t.wb.iter().chain(t.crf.iter().flatten()) {
                        w.f64(*v);
                    }
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::format("training checkpoint", d);
        let mut r = Reader(Cursor::new(bytes));
        if &r.bytes::<4>()? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let step = r.u64()?;
        let reference = r.u32()? as usize;
        let initial = r.f64()?;
        let config = TrainConfig::from_text(&r.str()?, TrainConfig::desk())?;
        let nviews = r.u32()? as usize;
        if reference >= nviews {
            return Err(bad(format!("reference view {reference} out of range")));
        }
        let mut view_ids = Vec::with_capacity(nviews);
        let mut cameras = Vec::with_capacity(nviews);
        let mut tone = Vec::with_capacity(nviews);
        for _ in 0..nviews {
            view_ids.push(r.str()?);
            let (fx, fy, cx, cy) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let (width, height) = (r.u32()?, r.u32()?);
            let mut rotation = [[0.0; 3]; 3];
            for v in rotation.iter_mut().flatten() {
                *v = r.f64()?;
            }
            let translation = [r.f64()?, r.f64()?, r.f64()?];
            let cam = Camera {
                fx,
                fy,
                cx,
                cy,
                width,
                height,
                rotation,
                translation,
            };
            cam.validate()?;
            cameras.push(cam);
            let mut p = ToneMapParams::identity(1.0);
            for v in &mut p.wb {
                *v = r.f64()?;
            }
            p.alpha = r.f64()?;
            p.frozen = r.u8()? != 0;
            for v in p.crf.iter_mut().flatten() {
                *v = r.f64()?;
            }
            p.validate()?;
            tone.push(p);
        }
        let glen = r.u64()? as usize;
        let gbytes = r.vec(glen)?;
        let grid = read_grid(&mut &gbytes[..])?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let n = grid.vertex_count();
                let mut o = OptimizerState::new(n, nviews);
                debug_assert_eq!(o.grid_v.len(), n * PAYLOAD_LEN);
                for v in &mut o.grid_v {
                    *v = r.f64()?;
                }
                for v in &mut o.grid_last {
                    *v = r.u64()?;
                }
                for t in &mut o.tone_v {
                    *t = ToneGrad::default();
                    for v in t.wb.iter_mut().chain(t.crf.iter_mut().flatten()) {
                        *v = r.f64()?;
                    }
                }
                if !o.is_valid() {
                    return Err(bad("optimizer state is negative or non-finite".into()));
                }
                Some(o)
            }
            f => return Err(bad(format!("bad optimizer flag {f}"))),
        };
        if (r.0.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes".into()));
        }
        debug_assert_eq!(CRF_KNOTS, 256);
        Ok(TrainCheckpoint {
            config,
            step,
            reference,
            initial_loss: (!initial.is_nan()).then_some(initial),
            view_ids,
            cameras,
            tone,
            grid,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Index of the view with the given id.
    pub fn view_index(&self, id: &str) -> Option<usize> {
        self.view_ids.iter().position(|v| v == id)
    }
}
