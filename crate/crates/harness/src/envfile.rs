//! Binary environment windows.
//!
//! Layout, all integers little-endian: the five bytes `OPBW1`, `d` as u32,
//! `L`, `t_min`, `t_max` as i64, `p` as f64, `seed` as u64, then the site
//! states packed eight per byte in site order (time slowest, first axis
//! fastest, least significant bit first). Explicit windows store `p = NaN`
//! and `seed = 0`.

use std::io::{self, Read, Write};

use opwalk_core::env::{EnvironmentWindow, Provenance};
use opwalk_core::geometry::LatticeGeometry;

pub const MAGIC: &[u8; 5] = b"OPBW1";

pub fn write_window<W: Write>(mut w: W, env: &EnvironmentWindow) -> io::Result<()> {
    let g = env.geometry();
    let (p, seed) = match env.provenance() {
        Provenance::Bernoulli { p, seed } => (p, seed),
        Provenance::Explicit => (f64::NAN, 0),
    };
    w.write_all(MAGIC)?;
    w.write_all(&(g.dim() as u32).to_le_bytes())?;
    for v in [g.half_width(), g.t_min(), g.t_max()] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&p.to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    w.write_all(&env.to_packed_bytes())?;
    w.flush()
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn read_window<R: Read>(mut r: R) -> io::Result<EnvironmentWindow> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not an OPBW1 environment file"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    let mut ints = [0i64; 3];
    for v in &mut ints {
        r.read_exact(&mut b8)?;
        *v = i64::from_le_bytes(b8);
    }
    r.read_exact(&mut b8)?;
    let p = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    let g = LatticeGeometry::new(d, ints[0], ints[1], ints[2]).map_err(|e| invalid(e.to_string()))?;
    let mut bytes = Vec::with_capacity(g.site_count().div_ceil(8));
    r.read_to_end(&mut bytes)?;
    let provenance = if p.is_nan() { Provenance::Explicit } else { Provenance::Bernoulli { p, seed } };
    EnvironmentWindow::from_packed_bytes(g, provenance, &bytes).map_err(|e| invalid(e.to_string()))
}
