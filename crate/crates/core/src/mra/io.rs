//! Dataset containers.
//!
//! Binary layout (little endian): magic `MRA1`, `u32 L`, `u64 n`, `f64 sigma`,
//! then `n·L` `f64` observations row-major in standard order.
//!
//! CSV layout: a `# mra-dataset L=<L> n=<n> sigma=<σ> group=<cyclic|dihedral>` line,
//! a header naming the standard indices, then one row per observation. Values
//! are written in shortest round-trip form, so the CSV is lossless too.

use std::io::{BufRead, Read, Write};

use super::{Dataset, MraConfig};
use crate::error::{MraError, Result};
use crate::ring::{self, GroupConfig};

pub const MAGIC: &[u8; 4] = b"MRA1";

pub fn write_binary<W: Write>(data: &Dataset, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(data.l() as u32).to_le_bytes())?;
    w.write_all(&(data.n() as u64).to_le_bytes())?;
    w.write_all(&data.sigma().to_le_bytes())?;
    let mut buf = Vec::with_capacity(data.observations().len() * 8);
    for v in data.observations() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a binary container. The group is not part of the header and must be supplied.
pub fn read_binary<R: Read>(mut r: R, group: GroupConfig) -> Result<Dataset> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(MraError::Format("bad magic, expected MRA1".into()));
    }
    let l = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let sigma = f64::from_le_bytes(head[16..24].try_into().unwrap());
    let cfg = MraConfig::new(l, sigma, group)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * l * 8 {
        return Err(MraError::Format(format!("expected {} payload bytes, found {}", n * l * 8, bytes.len())));
    }
    let obs = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Dataset::new(cfg, obs)
}

pub fn write_csv<W: Write>(data: &Dataset, mut w: W) -> Result<()> {
    let l = data.l();
    let group = if data.config().group.dihedral { "dihedral" } else { "cyclic" };
    writeln!(w, "# mra-dataset L={} n={} sigma={:?} group={}", l, data.n(), data.sigma(), group)?;
    let header: Vec<String> = (ring::lo(l)..=ring::hi(l)).map(|i| format!("y[{i}]")).collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..data.n() {
        let row: Vec<String> = data.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines();
    let first = lines.next().ok_or(MraError::Empty("csv dataset"))??;
    let meta = first
        .strip_prefix("# mra-dataset")
        .ok_or_else(|| MraError::Format("missing '# mra-dataset' line".into()))?;
    let (mut l, mut n, mut sigma, mut group) = (None, None, None, GroupConfig::cyclic());
    for kv in meta.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| MraError::Format(format!("bad field {kv}")))?;
        let bad = |_| MraError::Format(format!("bad value for {k}: {v}"));
        match k {
            "L" => l = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "n" => n = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "sigma" => sigma = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "group" => group = GroupConfig { dihedral: v == "dihedral" },
            _ => {}
        }
    }
    let (l, n, sigma) = match (l, n, sigma) {
        (Some(l), Some(n), Some(s)) => (l, n, s),
        _ => return Err(MraError::Format("header needs L, n and sigma".into())),
    };
    let cfg = MraConfig::new(l, sigma, group)?;
    lines.next().ok_or_else(|| MraError::Format("missing column header".into()))??;
    let mut obs = Vec::with_capacity(n * l);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let before = obs.len();
        for f in line.split(',') {
            obs.push(f.trim().parse::<f64>().map_err(|e| MraError::Format(format!("{f:?}: {e}")))?);
        }
        if obs.len() - before != l {
            return Err(MraError::Format(format!("row with {} fields, expected {l}", obs.len() - before)));
        }
    }
    if obs.len() != n * l {
        return Err(MraError::Format(format!("header says n={n}, found {} rows", obs.len() / l)));
    }
    Dataset::new(cfg, obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mra::simulate;
    use crate::ring::Signal;
    use crate::rng::stream;

    fn sample() -> Dataset {
        let theta = Signal::new(vec![0.1, -2.0, 1.0 / 3.0, 5.5, 0.0]).unwrap();
        let cfg = MraConfig::new(5, 0.7, GroupConfig::cyclic()).unwrap();
        let ds = simulate(&theta, &cfg, 17, &mut stream(4, 0)).unwrap();
        Dataset::new(cfg, ds.observations().to_vec()).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let ds = sample();
        let mut buf = Vec::new();
        write_binary(&ds, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"MRA1");
        assert_eq!(buf.len(), 24 + 17 * 5 * 8);
        assert_eq!(read_binary(&buf[..], GroupConfig::cyclic()).unwrap(), ds);
    }

    #[test]
    fn csv_round_trip() {
        let ds = sample();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        assert_eq!(read_csv(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn truncated_binary_rejected() {
        let ds = sample();
        let mut buf = Vec::new();
        write_binary(&ds, &mut buf).unwrap();
        buf.pop();
        assert!(read_binary(&buf[..], GroupConfig::cyclic()).is_err());
        buf[0] = b'X';
        assert!(read_binary(&buf[..], GroupConfig::cyclic()).is_err());
    }
}
