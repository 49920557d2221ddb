//! On-disk formats.
//!
//! * particles: text, header `particles N`, then one line per particle
//!   `x y z vx vy vz px py pz` (position, velocity, previous position)
//! * masks: binary PGM (`P5`, maxval 255), pixel set iff gray >= 128
//! * cameras: text, header `cameras K`, then per camera
//!   `name fx fy cx cy width height` followed by the 12 row-major entries of
//!   the 3x4 world-to-camera matrix `[R | t]`
//! * SDF: magic `VSDF1`, dims as 3 x u32 LE, origin as 3 x f32 LE,
//!   resolution as f32 LE, then the values as f32 LE, x fastest
//! * surface clouds: ASCII PLY with per-vertex normals

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Matrix3;

use crate::camera::PinholeCamera;
use crate::collision::VoxelSdf;
use crate::error::{Error, Result};
use crate::image::BinaryMask;
use crate::state::{ParticleState, Vec3};
use crate::surface::SurfaceCloud;

const SDF_MAGIC: &[u8; 5] = b"VSDF1";

/// `frame_000042` style stem.
pub fn frame_stem(frame: usize) -> String {
    format!("frame_{frame:06}")
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_f64(tok: Option<&str>, ctx: &str) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::parse(ctx, "unexpected end of line"))?;
    tok.parse::<f64>()
        .map_err(|e| Error::parse(ctx, format!("bad number `{tok}`: {e}")))
}

fn parse_usize(tok: Option<&str>, ctx: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::parse(ctx, "unexpected end of line"))?;
    tok.parse::<usize>()
        .map_err(|e| Error::parse(ctx, format!("bad integer `{tok}`: {e}")))
}

/// Content lines with blank lines and `#` comments removed.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn header_count(line: Option<(usize, &str)>, keyword: &str, ctx: &str) -> Result<usize> {
    let (_, line) = line.ok_or_else(|| Error::parse(ctx, "empty file"))?;
    let mut toks = line.split_whitespace();
    if toks.next() != Some(keyword) {
        return Err(Error::parse(
            ctx,
            format!("expected `{keyword} <count>` header"),
        ));
    }
    parse_usize(toks.next(), ctx)
}

pub fn format_particles(state: &ParticleState) -> String {
    let mut out = format!("particles {}\n", state.len());
    for i in 0..state.len() {
        let (p, v, q) = (
            state.positions[i],
            state.velocities[i],
            state.prev_positions[i],
        );
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {} {}",
            p.x, p.y, p.z, v.x, v.y, v.z, q.x, q.y, q.z
        );
    }
    out
}

pub fn parse_particles(text: &str, ctx: &str) -> Result<ParticleState> {
    let mut lines = content_lines(text);
    let n = header_count(lines.next(), "particles", ctx)?;
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    let mut prev = Vec::with_capacity(n);
    for (lineno, line) in lines {
        let lctx = format!("{ctx}:{lineno}");
        let mut toks = line.split_whitespace();
        let mut vals = [0.0; 9];
        for v in vals.iter_mut() {
            *v = parse_f64(toks.next(), &lctx)?;
        }
        if toks.next().is_some() {
            return Err(Error::parse(lctx, "expected 9 numbers"));
        }
        positions.push(Vec3::new(vals[0], vals[1], vals[2]));
        velocities.push(Vec3::new(vals[3], vals[4], vals[5]));
        prev.push(Vec3::new(vals[6], vals[7], vals[8]));
    }
    if positions.len() != n {
        return Err(Error::parse(
            ctx,
            format!("header declares {n} particles, found {}", positions.len()),
        ));
    }
    let state = ParticleState::from_parts(positions, prev, velocities)
        .map_err(|e| Error::parse(ctx, e.to_string()))?;
    Ok(state)
}

pub fn read_particles(path: &Path) -> Result<ParticleState> {
    parse_particles(&read_text(path)?, &path.display().to_string())
}

pub fn write_particles(path: &Path, state: &ParticleState) -> Result<()> {
    write_bytes(path, format_particles(state).as_bytes())
}

pub fn encode_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.to_gray());
    out
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn pgm_token(bytes: &[u8], pos: &mut usize, ctx: &str) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::parse(ctx, "truncated PGM header"));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn decode_pgm(bytes: &[u8], ctx: &str) -> Result<BinaryMask> {
    let mut pos = 0;
    if pgm_token(bytes, &mut pos, ctx)? != "P5" {
        return Err(Error::parse(ctx, "not a binary PGM (P5) image"));
    }
    let mut field = |name: &str| -> Result<usize> {
        let tok = pgm_token(bytes, &mut pos, ctx)?;
        tok.parse::<usize>()
            .map_err(|_| Error::parse(ctx, format!("bad PGM {name} `{tok}`")))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if maxval != 255 {
        return Err(Error::parse(
            ctx,
            format!("unsupported PGM maxval {maxval}"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(Error::parse(
            ctx,
            format!(
                "PGM raster truncated: need {need} bytes, have {}",
                bytes.len().saturating_sub(pos)
            ),
        ));
    }
    BinaryMask::from_gray(width, height, &bytes[pos..pos + need])
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, &path.display().to_string())
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_bytes(path, &encode_pgm(mask))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedCamera {
    pub name: String,
    pub camera: PinholeCamera,
}

pub fn format_cameras(cameras: &[NamedCamera]) -> String {
    let mut out = format!("cameras {}\n", cameras.len());
    for nc in cameras {
        let c = &nc.camera;
        let _ = write!(
            out,
            "{} {} {} {} {} {} {}",
            nc.name, c.fx, c.fy, c.cx, c.cy, c.width, c.height
        );
        for r in 0..3 {
            for k in 0..3 {
                let _ = write!(out, " {}", c.rotation[(r, k)]);
            }
            let _ = write!(out, " {}", c.translation[r]);
        }
        out.push('\n');
    }
    out
}

pub fn parse_cameras(text: &str, ctx: &str) -> Result<Vec<NamedCamera>> {
    let mut lines = content_lines(text);
    let n = header_count(lines.next(), "cameras", ctx)?;
    let mut out: Vec<NamedCamera> = Vec::with_capacity(n);
    for (lineno, line) in lines {
        let lctx = format!("{ctx}:{lineno}");
        let mut toks = line.split_whitespace();
        let name = toks
            .next()
            .ok_or_else(|| Error::parse(&lctx, "missing camera name"))?
            .to_string();
        if out.iter().any(|c| c.name == name) {
            return Err(Error::parse(
                lctx,
                format!("duplicate camera name `{name}`"),
            ));
        }
        let fx = parse_f64(toks.next(), &lctx)?;
        let fy = parse_f64(toks.next(), &lctx)?;
        let cx = parse_f64(toks.next(), &lctx)?;
        let cy = parse_f64(toks.next(), &lctx)?;
        let width = parse_usize(toks.next(), &lctx)?;
        let height = parse_usize(toks.next(), &lctx)?;
        let mut m = [0.0; 12];
        for v in m.iter_mut() {
            *v = parse_f64(toks.next(), &lctx)?;
        }
        if toks.next().is_some() {
            return Err(Error::parse(lctx, "trailing tokens after camera matrix"));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vec3::new(m[3], m[7], m[11]);
        let camera = PinholeCamera::new(fx, fy, cx, cy, width, height, rotation, translation)
            .map_err(|e| Error::parse(&lctx, e.to_string()))?;
        out.push(NamedCamera { name, camera });
    }
    if out.len() != n {
        return Err(Error::parse(
            ctx,
            format!("header declares {n} cameras, found {}", out.len()),
        ));
    }
    Ok(out)
}

pub fn read_cameras(path: &Path) -> Result<Vec<NamedCamera>> {
    parse_cameras(&read_text(path)?, &path.display().to_string())
}

pub fn write_cameras(path: &Path, cameras: &[NamedCamera]) -> Result<()> {
    write_bytes(path, format_cameras(cameras).as_bytes())
}

pub fn encode_sdf(sdf: &VoxelSdf) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + 28 + 4 * sdf.values().len());
    out.extend_from_slice(SDF_MAGIC);
    for d in sdf.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for o in sdf.origin().iter() {
        out.extend_from_slice(&(*o as f32).to_le_bytes());
    }
    out.extend_from_slice(&(sdf.resolution() as f32).to_le_bytes());
    for v in sdf.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_sdf(bytes: &[u8], ctx: &str) -> Result<VoxelSdf> {
    if bytes.len() < 33 || &bytes[..5] != SDF_MAGIC {
        return Err(Error::parse(ctx, "missing VSDF1 header"));
    }
    let word = |i: usize| -> [u8; 4] { bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap() };
    let dims = [0, 1, 2].map(|i| u32::from_le_bytes(word(i)) as usize);
    let origin = Vec3::new(
        f32::from_le_bytes(word(3)) as f64,
        f32::from_le_bytes(word(4)) as f64,
        f32::from_le_bytes(word(5)) as f64,
    );
    let resolution = f32::from_le_bytes(word(6)) as f64;
    let count = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or_else(|| Error::parse(ctx, "SDF dimensions overflow"))?;
    let body = &bytes[33..];
    if body.len() != 4 * count {
        return Err(Error::parse(
            ctx,
            format!("SDF body has {} bytes, expected {}", body.len(), 4 * count),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    VoxelSdf::new(dims, origin, resolution, values).map_err(|e| Error::parse(ctx, e.to_string()))
}

pub fn read_sdf(path: &Path) -> Result<VoxelSdf> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_sdf(&bytes, &path.display().to_string())
}

pub fn write_sdf(path: &Path, sdf: &VoxelSdf) -> Result<()> {
    write_bytes(path, &encode_sdf(sdf))
}

pub fn format_ply(cloud: &SurfaceCloud) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty double nx\nproperty double ny\nproperty double nz\nend_header\n",
        cloud.len()
    );
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        let _ = writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z);
    }
    out
}

pub fn write_ply(path: &Path, cloud: &SurfaceCloud) -> Result<()> {
    write_bytes(path, format_ply(cloud).as_bytes())
}
