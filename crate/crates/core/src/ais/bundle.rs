//! Versioned binary population bundle.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "AIS1"  u16 version
//! u32 antibody_count  u32 clone_count  u32 genes  u64 mutation_cycle
//! f64 remove_threshold  f64 selection_threshold  f64 diversity  f64 tp
//! u64 rng_seed  u128 rng_word_pos  u32 top_streak
//! u32 n_self   n_self x [21-byte signature]
//! u32 n_slt    n_slt x [21-byte signature, f64 priority, u64 age, u64 wins,
//!                       u8 has_antigen, (21-byte antigen if has_antigen)]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AisParams, Antibody, Population};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::signature::{Signature, SignatureVector, PACKED_BYTES};

pub const MAGIC: &[u8; 4] = b"AIS1";
pub const VERSION: u16 = 1;

fn put_vector(out: &mut Vec<u8>, v: &SignatureVector) {
    out.extend_from_slice(&v.quantize().pack());
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Integrity(format!("population bundle truncated at byte {}", self.at))
        })?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn vector(&mut self) -> Result<SignatureVector> {
        Signature::unpack(self.take(PACKED_BYTES)?)?.dequantize()
    }
}

impl Population {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(p.antibody_count as u32).to_le_bytes());
        out.extend_from_slice(&(p.clone_count as u32).to_le_bytes());
        out.extend_from_slice(&p.genes.to_le_bytes());
        out.extend_from_slice(&p.mutation_cycle.to_le_bytes());
        for f in [p.remove_threshold, p.selection_threshold, p.diversity, p.tp] {
            out.extend_from_slice(&f.to_le_bytes());
        }
        out.extend_from_slice(&self.rng_seed.to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        out.extend_from_slice(&self.top_streak.to_le_bytes());
        out.extend_from_slice(&(self.self_set.len() as u32).to_le_bytes());
        for s in &self.self_set {
            put_vector(&mut out, s);
        }
        out.extend_from_slice(&(self.slt.len() as u32).to_le_bytes());
        for ab in &self.slt {
            put_vector(&mut out, &ab.vector);
            out.extend_from_slice(&ab.priority.to_le_bytes());
            out.extend_from_slice(&ab.age_windows.to_le_bytes());
            out.extend_from_slice(&ab.wins.to_le_bytes());
            match &ab.last_antigen {
                Some(v) => {
                    out.push(1);
                    put_vector(&mut out, v);
                }
                None => out.push(0),
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, at: 0 };
        if r.take(4).map_err(|_| Error::Format("not a population bundle".into()))? != MAGIC {
            return Err(Error::Format("population bundle magic is not AIS1".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("population bundle version {version} is not supported")));
        }
        let params = AisParams {
            antibody_count: r.u32()? as usize,
            clone_count: r.u32()? as usize,
            genes: r.u32()?,
            mutation_cycle: r.u64()?,
            remove_threshold: r.f64()?,
            selection_threshold: r.f64()?,
            diversity: r.f64()?,
            tp: r.f64()?,
        };
        params.validate()?;
        let rng_seed = r.u64()?;
        let word_pos = r.u128()?;
        let top_streak = r.u32()?;
        let n_self = r.u32()? as usize;
        let self_set = (0..n_self).map(|_| r.vector()).collect::<Result<Vec<_>>>()?;
        let n_slt = r.u32()? as usize;
        let mut slt = Vec::with_capacity(n_slt.min(buf.len()));
        for _ in 0..n_slt {
            let vector = r.vector()?;
            let priority = r.f64()?;
            let age_windows = r.u64()?;
            let wins = r.u64()?;
            let last_antigen = match r.u8()? {
                0 => None,
                1 => Some(r.vector()?),
                other => return Err(Error::Format(format!("bad antigen flag {other}"))),
            };
            if !(priority >= 0.0) {
                return Err(Error::Validation(format!("negative priority {priority}")));
            }
            slt.push(Antibody { vector, priority, age_windows, wins, last_antigen });
        }
        if r.at != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes in population bundle", buf.len() - r.at)));
        }
        if slt.len() > params.antibody_count {
            return Err(Error::Validation("bundle holds more antibodies than its capacity".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_word_pos(word_pos);
        Ok(Population { slt, self_set, params, rng_seed, rng, top_streak, exec: Execution::default() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}
