//! Little-endian primitives shared by the checkpoint and dataset formats.

use std::io::{self, Read, Write};

use crate::affordance::{IndicatorRange, NormalizationSpec, INDICATOR_COUNT};
use crate::render::CameraModel;

pub(crate) fn put_u8(w: &mut impl Write, v: u8) -> io::Result<()> {
    w.write_all(&[v])
}

pub(crate) fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f32(w: &mut impl Write, v: f32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn get_u8(r: &mut impl Read) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn get_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn get_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn get_f32(r: &mut impl Read) -> io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub(crate) fn get_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn get_str(r: &mut impl Read, max_len: usize) -> io::Result<String> {
    let n = get_u32(r)? as usize;
    if n > max_len {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("string length {n} exceeds {max_len}")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub(crate) fn put_spec(w: &mut impl Write, spec: &NormalizationSpec) -> io::Result<()> {
    put_u32(w, INDICATOR_COUNT as u32)?;
    for r in &spec.ranges {
        put_f64(w, r.lo)?;
        put_f64(w, r.hi)?;
        put_f64(w, r.sentinel)?;
    }
    put_f64(w, spec.sentinel_margin)
}

pub(crate) fn get_spec(r: &mut impl Read) -> io::Result<NormalizationSpec> {
    let n = get_u32(r)? as usize;
    if n != INDICATOR_COUNT {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("spec has {n} indicators")));
    }
    let mut ranges = [IndicatorRange { lo: 0.0, hi: 0.0, sentinel: 0.0 }; INDICATOR_COUNT];
    for slot in &mut ranges {
        *slot = IndicatorRange { lo: get_f64(r)?, hi: get_f64(r)?, sentinel: get_f64(r)? };
    }
    Ok(NormalizationSpec { ranges, sentinel_margin: get_f64(r)? })
}

pub(crate) fn put_camera(w: &mut impl Write, cam: &CameraModel) -> io::Result<()> {
    put_u32(w, cam.width as u32)?;
    put_u32(w, cam.rows as u32)?;
    for v in [cam.height, cam.focal, cam.cu, cam.cv] {
        put_f64(w, v)?;
    }
    Ok(())
}

pub(crate) fn get_camera(r: &mut impl Read) -> io::Result<CameraModel> {
    let width = get_u32(r)? as usize;
    let rows = get_u32(r)? as usize;
    Ok(CameraModel { width, rows, height: get_f64(r)?, focal: get_f64(r)?, cu: get_f64(r)?, cv: get_f64(r)? })
}
