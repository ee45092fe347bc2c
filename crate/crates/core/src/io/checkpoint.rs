//! Versioned little-endian binary checkpoints.
//!
//! Layout: magic `YMLABCKP`, `u32` version, then the header (dimension,
//! sizes, spacing, rank, scalar kind, transition matrices, declared Chern
//! numbers), the run block (experiment, clock, step counters, config text,
//! monitor state) and the field payload in storage order. Matrices are
//! row-major `(re, im)` pairs of `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::io::config::Experiment;
use crate::lattice::{build_torus, LatticeGeometry, Torus, TwistCocycle};
use crate::lie::{GroupElement, MatrixValue, ScalarKind, C64};
use crate::monitors::MonitorSnapshot;

pub const MAGIC: &[u8; 8] = b"YMLABCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub experiment: Experiment,
    pub torus: Arc<Torus>,
    pub t: f64,
    pub dt: f64,
    pub dissipation: f64,
    pub accepted: u64,
    pub rejected: u64,
    /// Series rows written so far.
    pub rows: u64,
    pub config_text: String,
    pub monitor: Option<MonitorSnapshot>,
    /// Yang-Mills: `[A]`. HYM: `[H, H_0]`.
    pub fields: Vec<Vec<MatrixValue>>,
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
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn matrix(&mut self, m: &MatrixValue) {
        for c in m.as_slice() {
            self.f64(c.re);
            self.f64(c.im);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, limit: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > limit {
            return Err(Error::Checkpoint(format!("length {n} exceeds the remaining data")));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len((self.buf.len() - self.pos) / 8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self, rank: usize) -> Result<MatrixValue> {
        let mut m = MatrixValue::zeros(rank);
        for c in m.as_mut_slice() {
            *c = C64::new(self.f64()?, self.f64()?);
        }
        Ok(m)
    }
}

fn kind_code(k: ScalarKind) -> u8 {
    match k {
        ScalarKind::Real => 0,
        ScalarKind::Complex => 1,
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let g = self.torus.geometry();
        w.u32(g.dim() as u32);
        g.sizes().iter().for_each(|&s| w.u64(s as u64));
        w.f64(g.spacing());
        w.u32(self.torus.rank() as u32);
        w.u8(kind_code(self.torus.kind()));
        for t in self.torus.twist().transitions() {
            w.matrix(t.value());
        }
        self.torus.twist().chern_numbers().iter().for_each(|&c| w.i64(c));

        w.u8(match self.experiment {
            Experiment::Ym => 0,
            Experiment::Hym => 1,
        });
        w.f64(self.t);
        w.f64(self.dt);
        w.f64(self.dissipation);
        w.u64(self.accepted);
        w.u64(self.rejected);
        w.u64(self.rows);
        w.u64(self.config_text.len() as u64);
        w.0.extend_from_slice(self.config_text.as_bytes());
        match &self.monitor {
            None => w.u8(0),
            Some(m) => {
                w.u8(1);
                match &m.chern0 {
                    None => w.u8(0),
                    Some(c) => {
                        w.u8(1);
                        w.f64s(c);
                    }
                }
                w.u64(m.streak as u64);
                w.u8(m.fired as u8);
                w.u64(m.eps_checks);
                w.u64(m.eps_violations);
                w.u64(m.archive.len() as u64);
                for (t, d) in &m.archive {
                    w.f64(*t);
                    w.f64s(d);
                }
            }
        }
        w.u32(self.fields.len() as u32);
        for f in &self.fields {
            w.u64(f.len() as u64);
            f.iter().for_each(|m| w.matrix(m));
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("version {version} is not supported (expected {VERSION})")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 || dim > crate::lattice::MAX_DIM {
            return Err(Error::Checkpoint(format!("bad dimension {dim}")));
        }
        let sizes: Vec<usize> = (0..dim).map(|_| r.u64().map(|v| v as usize)).collect::<Result<_>>()?;
        let spacing = r.f64()?;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > crate::lie::MAX_RANK {
            return Err(Error::Checkpoint(format!("bad rank {rank}")));
        }
        let kind = match r.u8()? {
            0 => ScalarKind::Real,
            1 => ScalarKind::Complex,
            k => return Err(Error::Checkpoint(format!("bad scalar kind {k}"))),
        };
        let transitions = (0..dim)
            .map(|_| GroupElement::new(r.matrix(rank)?))
            .collect::<Result<Vec<_>>>()?;
        let chern = (0..dim * (dim - 1) / 2).map(|_| r.i64()).collect::<Result<Vec<_>>>()?;
        let geometry = LatticeGeometry::new(dim, &sizes, spacing)?;
        let torus = build_torus(geometry, TwistCocycle::new(rank, kind, transitions, chern))?;

        let experiment = match r.u8()? {
            0 => Experiment::Ym,
            1 => Experiment::Hym,
            e => return Err(Error::Checkpoint(format!("bad experiment tag {e}"))),
        };
        let t = r.f64()?;
        let dt = r.f64()?;
        let dissipation = r.f64()?;
        let accepted = r.u64()?;
        let rejected = r.u64()?;
        let rows = r.u64()?;
        let n = r.len(buf.len())?;
        let config_text = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
        let monitor = match r.u8()? {
            0 => None,
            _ => {
                let chern0 = match r.u8()? {
                    0 => None,
                    _ => Some(r.f64s()?),
                };
                let streak = r.u64()? as usize;
                let fired = r.u8()? != 0;
                let eps_checks = r.u64()?;
                let eps_violations = r.u64()?;
                let count = r.len(buf.len())?;
                let archive = (0..count)
                    .map(|_| Ok((r.f64()?, r.f64s()?)))
                    .collect::<Result<Vec<_>>>()?;
                Some(MonitorSnapshot {
                    chern0,
                    archive,
                    streak,
                    fired,
                    eps_checks,
                    eps_violations,
                })
            }
        };
        let nfields = r.u32()? as usize;
        let per = 16 * rank * rank;
        let mut fields = Vec::with_capacity(nfields);
        for _ in 0..nfields {
            let len = r.len((buf.len() - r.pos) / per)?;
            fields.push((0..len).map(|_| r.matrix(rank)).collect::<Result<Vec<_>>>()?);
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self {
            experiment,
            torus,
            t,
            dt,
            dissipation,
            accepted,
            rejected,
            rows,
            config_text,
            monitor,
            fields,
        })
    }

    /// Writes through a temporary file so a crash never leaves a partial checkpoint.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{random_connection, LatticeField};

    fn sample() -> Checkpoint {
        let g = LatticeGeometry::new(3, &[4, 5, 4], 0.3).unwrap();
        let torus = build_torus(g, TwistCocycle::clock_shift(3, 2, &[(0, 1, 1)]).unwrap()).unwrap();
        let a = random_connection(&torus, 0.7, 5);
        Checkpoint {
            experiment: Experiment::Ym,
            torus: torus.clone(),
            t: 0.1 + 0.2,
            dt: 1.0 / 3.0,
            dissipation: std::f64::consts::PI,
            accepted: 17,
            rejected: 2,
            rows: 3,
            config_text: "[flow]\nt_end = 1.0\n".into(),
            monitor: Some(MonitorSnapshot {
                chern0: Some(vec![1.0, -0.0, 1e-300]),
                archive: vec![(0.0, vec![0.5; 24]), (0.25, vec![f64::MIN_POSITIVE; 24])],
                streak: 4,
                fired: true,
                eps_checks: 10,
                eps_violations: 0,
            }),
            fields: vec![a.data().to_vec()],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.fields, c.fields);
        assert_eq!(back.monitor, c.monitor);
        assert!(back.torus.same_bundle(&c.torus));
        assert_eq!(back.t.to_bits(), c.t.to_bits());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        for cut in [0, 7, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        let msg = Checkpoint::from_bytes(&wrong).unwrap_err().to_string();
        assert!(msg.contains("version 9"), "{msg}");
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let c = sample();
        c.write(&p).unwrap();
        assert_eq!(Checkpoint::read(&p).unwrap().to_bytes(), c.to_bytes());
    }
}
