//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic "PCSRCKPT" | version u32 | settings text (u64 len + utf8)
//! phase u8 | epoch, batch, step u64 | epoch sums 3×f64 | epoch count u64
//! generator adam t u64 | discriminator adam t u64
//! tensor count u64, then per tensor:
//!     name (u32 len + utf8) | rank u32 | dims u64… | data f64…
//! sha256 of everything above (32 bytes)
//! ```
//!
//! Tensors are the generator parameters and their two Adam moments, then
//! the same for the discriminator, each in declaration order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Phase, Progress, TrainSettings, Trainer};
use crate::autodiff::ParamSet;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PCSRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
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
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn tensor(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        self.u32(name.len() as u32);
        self.bytes(name.as_bytes());
        self.u32(shape.len() as u32);
        shape.iter().for_each(|&d| self.u64(d as u64));
        data.iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflow"))
    }
    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid utf-8"))
    }
}

/// Named tensor groups in file order.
fn groups(t: &Trainer) -> [(&'static str, &ParamSet, Option<&Vec<Vec<f64>>>); 6] {
    let (g, d) = (t.generator.params(), t.discriminator.params());
    [
        ("generator", g, None),
        ("generator.adam_m", g, Some(&t.g_adam.m)),
        ("generator.adam_v", g, Some(&t.g_adam.v)),
        ("discriminator", d, None),
        ("discriminator.adam_m", d, Some(&t.d_adam.m)),
        ("discriminator.adam_v", d, Some(&t.d_adam.v)),
    ]
}

pub fn to_bytes(t: &Trainer) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.bytes(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let text = t.settings.to_text();
    w.u64(text.len() as u64);
    w.bytes(text.as_bytes());
    let p = &t.progress;
    w.u8(p.phase.code());
    w.u64(p.epoch);
    w.u64(p.batch);
    w.u64(p.step);
    p.epoch_sums.iter().for_each(|&v| w.f64(v));
    w.u64(p.epoch_count);
    w.u64(t.g_adam.t);
    w.u64(t.d_adam.t);
    let groups = groups(t);
    w.u64(groups.iter().map(|g| g.1.len() as u64).sum());
    for (prefix, set, moments) in groups {
        for (i, param) in set.iter().enumerate() {
            let data = moments.map_or(&param.data, |m| &m[i]);
            w.tensor(&format!("{prefix}/{}", param.name), &param.shape, data);
        }
    }
    let digest = Sha256::digest(&w.0);
    w.bytes(&digest);
    w.0
}

pub fn from_bytes(buf: &[u8]) -> Result<Trainer> {
    if buf.len() < MAGIC.len() + 4 + 32 {
        return Err(corrupt("file too short"));
    }
    if &buf[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let (body, sum) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body)[..] != *sum {
        return Err(corrupt("checksum mismatch (file truncated or corrupted)"));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let n = r.len()?;
    let text = r.string(n)?;
    let settings = TrainSettings::from_text(&text).map_err(|e| corrupt(format!("settings: {e}")))?;
    let phase = Phase::from_code(r.u8()?).ok_or_else(|| corrupt("invalid phase"))?;
    let mut progress = Progress {
        phase,
        epoch: r.u64()?,
        batch: r.u64()?,
        step: r.u64()?,
        ..Progress::default()
    };
    for s in &mut progress.epoch_sums {
        *s = r.f64()?;
    }
    progress.epoch_count = r.u64()?;
    let (gt, dt) = (r.u64()?, r.u64()?);

    let mut t = Trainer::new(settings).map_err(|e| corrupt(format!("settings: {e}")))?;
    t.progress = progress;
    t.g_adam.t = gt;
    t.d_adam.t = dt;
    let count = r.len()?;
    let expected: Vec<(String, Vec<usize>)> = groups(&t)
        .iter()
        .flat_map(|(prefix, set, _)| set.iter().map(move |p| (format!("{prefix}/{}", p.name), p.shape.clone())))
        .collect();
    if count != expected.len() {
        return Err(corrupt(format!("{count} tensors stored, architecture has {}", expected.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let n = r.u32()? as usize;
        let got = r.string(n)?;
        if &got != name {
            return Err(corrupt(format!("expected tensor {name}, found {got}")));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(corrupt(format!("tensor {name} has shape {dims:?}, expected {shape:?}")));
        }
        let numel = shape.iter().product::<usize>();
        tensors.push((0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }

    let mut it = tensors.into_iter();
    let (ng, nd) = (t.generator.params().len(), t.discriminator.params().len());
    let mut take = |n: usize| it.by_ref().take(n).collect::<Vec<_>>();
    let (gp, gm, gv) = (take(ng), take(ng), take(ng));
    let (dp, dm, dv) = (take(nd), take(nd), take(nd));
    for (p, data) in t.generator.params_mut().iter_mut().zip(gp) {
        p.data = data;
    }
    for (p, data) in t.discriminator.params_mut().iter_mut().zip(dp) {
        p.data = data;
    }
    (t.g_adam.m, t.g_adam.v, t.d_adam.m, t.d_adam.v) = (gm, gv, dm, dv);
    Ok(t)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Human-readable listing of tensor names and shapes.
pub fn sidecar_text(t: &Trainer) -> String {
    let mut s = format!("version {CHECKPOINT_VERSION}\nstep {}\n", t.progress.step);
    s.push_str(&t.settings.to_text());
    for (prefix, set, _) in groups(t) {
        for p in set.iter() {
            let _ = writeln!(s, "{prefix}/{} {:?}", p.name, p.shape);
        }
    }
    s
}

/// Writes to a temporary file and renames it into place, so an interrupted
/// save leaves the previous checkpoint intact. Also writes `<path>.txt`.
pub fn save_checkpoint(t: &Trainer, path: &Path) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, to_bytes(t)).map_err(Error::file(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::file(path))?;
    let sidecar = sidecar_path(path);
    fs::write(&sidecar, sidecar_text(t)).map_err(Error::file(&sidecar))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    from_bytes(&fs::read(path).map_err(Error::file(path))?)
}
