//! Little-endian binary helpers and the "NCM1" dataset format.
//!
//! Layout: magic `NCM1`; `u32` version (1), equation tag, `n_x`, trajectory count,
//! snapshot count, derivative flag; `f64` domain length, `t0`, snapshot spacing;
//! `u64` seed; one split byte per trajectory (0 train, 1 validation, 2 test);
//! the states as binary64 in trajectory-major, time-major, cell-minor order;
//! then the derivatives in the same layout when flagged. All fields little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Dataset, Equation, PeriodicGrid, Split, Trajectory};
use crate::scalar::Scalar;

pub(crate) fn write_u32<W: Write>(w: &mut W, x: u32) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, x: u64) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, x: f64) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("unexpected end of file".into())
        } else {
            Error::Io(e)
        }
    })?;
    Ok(b)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

const DATASET_MAGIC: &[u8; 4] = b"NCM1";
const DATASET_VERSION: u32 = 1;

pub fn write_dataset<T: Scalar, W: Write>(ds: &Dataset<T>, mut w: W) -> Result<()> {
    let first = ds
        .trajectories()
        .first()
        .ok_or_else(|| Error::Precondition("cannot write an empty dataset".into()))?;
    w.write_all(DATASET_MAGIC)?;
    write_u32(&mut w, DATASET_VERSION)?;
    write_u32(&mut w, ds.equation.tag())?;
    write_u32(&mut w, first.n_x() as u32)?;
    write_u32(&mut w, ds.len() as u32)?;
    write_u32(&mut w, first.n_snapshots() as u32)?;
    write_u32(&mut w, u32::from(first.has_derivatives()))?;
    write_f64(&mut w, first.grid.length().as_f64())?;
    write_f64(&mut w, first.t0.as_f64())?;
    write_f64(&mut w, first.dt_snap.as_f64())?;
    write_u64(&mut w, ds.seed)?;
    for s in ds.splits() {
        w.write_all(&[s.byte()])?;
    }
    for t in ds.trajectories() {
        for &x in t.states() {
            write_f64(&mut w, x.as_f64())?;
        }
    }
    if first.has_derivatives() {
        for t in ds.trajectories() {
            for &x in t.derivatives().expect("uniform derivative presence") {
                write_f64(&mut w, x.as_f64())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<T: Scalar, R: Read>(mut r: R) -> Result<Dataset<T>> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!("bad dataset magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let tag = read_u32(&mut r)?;
    let equation =
        Equation::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown equation tag {tag}")))?;
    let n_x = read_u32(&mut r)? as usize;
    let n_p = read_u32(&mut r)? as usize;
    let n_s = read_u32(&mut r)? as usize;
    let has_deriv = match read_u32(&mut r)? {
        0 => false,
        1 => true,
        f => return Err(Error::Format(format!("bad derivative flag {f}"))),
    };
    let length = read_f64(&mut r)?;
    let t0 = read_f64(&mut r)?;
    let dt_snap = read_f64(&mut r)?;
    let seed = read_u64(&mut r)?;
    if n_s == 0 {
        return Err(Error::Format("dataset with zero snapshots".into()));
    }
    let grid = PeriodicGrid::new(n_x, T::lit(length)).map_err(|e| Error::Format(e.to_string()))?;
    let mut splits = Vec::with_capacity(n_p);
    for _ in 0..n_p {
        let [b] = read_array::<1, _>(&mut r)?;
        splits.push(Split::from_byte(b).ok_or_else(|| Error::Format(format!("bad split byte {b}")))?);
    }
    let block = n_s * n_x;
    let read_block = |r: &mut R| -> Result<Vec<T>> {
        let mut v = Vec::with_capacity(block);
        for _ in 0..block {
            v.push(T::lit(read_f64(r)?));
        }
        Ok(v)
    };
    let mut states = Vec::with_capacity(n_p);
    for _ in 0..n_p {
        states.push(read_block(&mut r)?);
    }
    let mut derivs: Vec<Option<Vec<T>>> = Vec::with_capacity(n_p);
    for _ in 0..n_p {
        derivs.push(if has_deriv { Some(read_block(&mut r)?) } else { None });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after dataset payload".into()));
    }
    let trajectories = states
        .into_iter()
        .zip(derivs)
        .map(|(s, d)| Trajectory::new(grid, T::lit(t0), T::lit(dt_snap), s, d))
        .collect::<Result<Vec<_>>>()?;
    Dataset::with_splits(equation, seed, trajectories, splits)
}

pub fn save_dataset<T: Scalar>(ds: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    read_dataset(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::split_dataset;

    fn sample(with_deriv: bool) -> Dataset<f64> {
        let g = PeriodicGrid::new(8, 2.0).unwrap();
        let trajs = (0..3)
            .map(|j| {
                let s: Vec<f64> = (0..24).map(|i| (i * (j + 1)) as f64 * 0.1).collect();
                let d = with_deriv.then(|| s.iter().map(|x| -x).collect());
                Trajectory::new(g, 0.5, 0.25, s, d).unwrap()
            })
            .collect();
        let ds = Dataset::new(Equation::KuramotoSivashinsky, 42, trajs).unwrap();
        split_dataset(ds, (1, 1, 1)).unwrap()
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_dataset(&sample(false), &mut buf).unwrap();
        assert_eq!(&buf[..4], b"NCM1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[24..28].try_into().unwrap()), 0);
        assert_eq!(f64::from_le_bytes(buf[28..36].try_into().unwrap()), 2.0);
        assert_eq!(f64::from_le_bytes(buf[36..44].try_into().unwrap()), 0.5);
        assert_eq!(f64::from_le_bytes(buf[44..52].try_into().unwrap()), 0.25);
        assert_eq!(u64::from_le_bytes(buf[52..60].try_into().unwrap()), 42);
        assert_eq!(&buf[60..63], &[0, 1, 2]);
        assert_eq!(buf.len(), 63 + 3 * 24 * 8);
        // second trajectory, first value = 0, second = 0.2
        assert_eq!(f64::from_le_bytes(buf[63 + 24 * 8 + 8..63 + 24 * 8 + 16].try_into().unwrap()), 0.2);
    }

    #[test]
    fn roundtrip_with_derivatives() {
        let ds = sample(true);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back: Dataset<f64> = read_dataset(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        let mut buf = Vec::new();
        write_dataset(&sample(true), &mut buf).unwrap();
        assert!(matches!(read_dataset::<f64, _>(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(read_dataset::<f64, _>(&bad[..]), Err(Error::Format(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_dataset::<f64, _>(&extra[..]), Err(Error::Format(_))));
    }
}
