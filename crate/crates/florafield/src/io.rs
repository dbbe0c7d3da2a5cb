//! On-disk formats for everything the pipeline exchanges between stages:
//! netpbm images, raw depth maps, ASCII PLY clouds, binary parameter
//! checkpoints, the loss-trace CSV, JSON documents, and content hashes.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write as _};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cloud::LabeledPointCloud;
use crate::field::{Field, FieldConfig, HashGridConfig, ParamStore};
use crate::geom::Aabb;
use crate::render::{LossBreakdown, LossRow};
use crate::scene::RenderedView;
use crate::{Error, Result};

const DEPTH_MAGIC: &[u8; 8] = b"FFDEPTH1";
const CHECKPOINT_MAGIC: &[u8; 8] = b"FFPARAM1";
const CHECKPOINT_VERSION: u32 = 1;

fn bad_file(path: &Path, detail: impl Into<String>) -> Error {
    Error::format(path.display().to_string(), detail)
}

// --- netpbm ---------------------------------------------------------------

pub fn save_ppm(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    if rgb.len() != (width * height * 3) as usize {
        return Err(Error::invalid(format!(
            "rgb buffer {} does not fit {width}x{height}",
            rgb.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{width} {height}\n255\n")?;
    w.write_all(rgb)?;
    Ok(())
}

pub fn save_pgm8(path: &Path, width: u32, height: u32, data: &[u8]) -> Result<()> {
    if data.len() != (width * height) as usize {
        return Err(Error::invalid(format!(
            "gray buffer {} does not fit {width}x{height}",
            data.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(data)?;
    Ok(())
}

/// 16-bit PGM; samples are big-endian per the netpbm convention.
pub fn save_pgm16(path: &Path, width: u32, height: u32, data: &[u16]) -> Result<()> {
    if data.len() != (width * height) as usize {
        return Err(Error::invalid(format!(
            "gray buffer {} does not fit {width}x{height}",
            data.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n65535\n")?;
    for v in data {
        w.write_all(&v.to_be_bytes())?;
    }
    Ok(())
}

/// Reads the `P6`/`P5` magic, dimensions, and maxval; leaves the reader
/// positioned at the first raster byte.
fn read_netpbm_header(r: &mut impl BufRead, magic: &str, path: &Path) -> Result<(u32, u32, u32)> {
    let mut tokens = Vec::new();
    let mut token = String::new();
    let mut in_comment = false;
    while tokens.len() < 4 {
        let mut byte = [0u8; 1];
        if r.read(&mut byte)? == 0 {
            return Err(bad_file(path, "truncated netpbm header"));
        }
        let c = byte[0] as char;
        if in_comment {
            in_comment = c != '\n';
            continue;
        }
        if c == '#' {
            in_comment = true;
        } else if c.is_whitespace() {
            if !token.is_empty() {
                tokens.push(std::mem::take(&mut token));
            }
        } else {
            token.push(c);
        }
    }
    if tokens[0] != magic {
        return Err(bad_file(path, format!("expected {magic}, found {}", tokens[0])));
    }
    let parse = |s: &str| -> Result<u32> {
        s.parse().map_err(|_| bad_file(path, format!("bad netpbm number {s:?}")))
    };
    Ok((parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?))
}

pub fn load_ppm(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let (w, h, maxval) = read_netpbm_header(&mut r, "P6", path)?;
    if maxval != 255 {
        return Err(bad_file(path, format!("unsupported ppm maxval {maxval}")));
    }
    let mut data = vec![0u8; (w * h * 3) as usize];
    r.read_exact(&mut data)?;
    Ok((w, h, data))
}

pub fn load_pgm8(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let (w, h, maxval) = read_netpbm_header(&mut r, "P5", path)?;
    if maxval != 255 {
        return Err(bad_file(path, format!("expected 8-bit pgm, maxval {maxval}")));
    }
    let mut data = vec![0u8; (w * h) as usize];
    r.read_exact(&mut data)?;
    Ok((w, h, data))
}

pub fn load_pgm16(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    let mut r = BufReader::new(File::open(path)?);
    let (w, h, maxval) = read_netpbm_header(&mut r, "P5", path)?;
    if maxval != 65535 {
        return Err(bad_file(path, format!("expected 16-bit pgm, maxval {maxval}")));
    }
    let mut raw = vec![0u8; (w * h * 2) as usize];
    r.read_exact(&mut raw)?;
    let data = raw.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((w, h, data))
}

// --- depth maps -----------------------------------------------------------

pub fn save_depth(path: &Path, width: u32, height: u32, depth: &[f32]) -> Result<()> {
    if depth.len() != (width * height) as usize {
        return Err(Error::invalid(format!(
            "depth buffer {} does not fit {width}x{height}",
            depth.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DEPTH_MAGIC)?;
    w.write_all(&width.to_le_bytes())?;
    w.write_all(&height.to_le_bytes())?;
    for d in depth {
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_depth(path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DEPTH_MAGIC {
        return Err(bad_file(path, "not a depth map (bad magic)"));
    }
    let mut quad = [0u8; 4];
    r.read_exact(&mut quad)?;
    let w = u32::from_le_bytes(quad);
    r.read_exact(&mut quad)?;
    let h = u32::from_le_bytes(quad);
    let mut raw = vec![0u8; (w * h * 4) as usize];
    r.read_exact(&mut raw)?;
    let depth = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((w, h, depth))
}

// --- rendered views -------------------------------------------------------

/// The four files a saved view occupies, in (rgb, semantic, instance,
/// depth) order.
pub fn view_paths(dir: &Path, idx: usize) -> [std::path::PathBuf; 4] {
    [
        dir.join(format!("view_{idx:04}_rgb.ppm")),
        dir.join(format!("view_{idx:04}_semantic.pgm")),
        dir.join(format!("view_{idx:04}_instance.pgm")),
        dir.join(format!("view_{idx:04}_depth.bin")),
    ]
}

/// One view becomes four files: RGB, semantic, instance, depth. The
/// instance map widens to 16-bit samples only when an ID needs it.
pub fn save_view(dir: &Path, idx: usize, view: &RenderedView) -> Result<()> {
    fs::create_dir_all(dir)?;
    let [rgb_p, sem_p, inst_p, depth_p] = view_paths(dir, idx);
    save_ppm(&rgb_p, view.width, view.height, &view.rgb)?;
    save_pgm8(&sem_p, view.width, view.height, &view.semantic)?;
    let max_id = view.instance.iter().copied().max().unwrap_or(0);
    if max_id > u16::MAX as u32 {
        return Err(Error::invalid(format!("instance id {max_id} exceeds 16-bit storage")));
    }
    if max_id > u8::MAX as u32 {
        let wide: Vec<u16> = view.instance.iter().map(|&i| i as u16).collect();
        save_pgm16(&inst_p, view.width, view.height, &wide)?;
    } else {
        let narrow: Vec<u8> = view.instance.iter().map(|&i| i as u8).collect();
        save_pgm8(&inst_p, view.width, view.height, &narrow)?;
    }
    save_depth(&depth_p, view.width, view.height, &view.depth)
}

pub fn load_view(dir: &Path, idx: usize) -> Result<RenderedView> {
    let [rgb_p, sem_p, inst_p, depth_p] = view_paths(dir, idx);
    let (w, h, rgb) = load_ppm(&rgb_p)?;
    let (ws, hs, semantic) = load_pgm8(&sem_p)?;
    let instance: Vec<u32> = match load_pgm8(&inst_p) {
        Ok((wi, hi, narrow)) if (wi, hi) == (w, h) => {
            narrow.into_iter().map(u32::from).collect()
        }
        _ => {
            let (wi, hi, wide) = load_pgm16(&inst_p)?;
            if (wi, hi) != (w, h) {
                return Err(bad_file(&inst_p, "instance map size mismatch"));
            }
            wide.into_iter().map(u32::from).collect()
        }
    };
    let (wd, hd, depth) = load_depth(&depth_p)?;
    if (ws, hs) != (w, h) || (wd, hd) != (w, h) {
        return Err(bad_file(&rgb_p, "view layer sizes disagree"));
    }
    Ok(RenderedView { width: w, height: h, rgb, semantic, instance, depth })
}

/// Number of consecutive saved views (view_0000..) present in `dir`.
pub fn count_views(dir: &Path) -> usize {
    (0..).take_while(|&i| view_paths(dir, i)[0].exists()).count()
}

// --- labeled clouds (ASCII PLY) --------------------------------------------

/// ASCII PLY with x/y/z, red/green/blue, semantic (uchar), instance
/// (uint). The codebook hash rides along as a comment so a consumer can
/// check which encoding produced the labels.
pub fn save_cloud_ply(path: &Path, cloud: &LabeledPointCloud, codebook_hash: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "ply\nformat ascii 1.0\ncomment codebook {codebook_hash}\nelement vertex {}\n",
        cloud.len()
    )?;
    write!(
        w,
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property uchar semantic\nproperty uint instance\nend_header\n"
    )?;
    for i in 0..cloud.len() {
        let p = cloud.pos[i];
        let [r, g, b] = cloud.rgb[i];
        writeln!(
            w,
            "{} {} {} {r} {g} {b} {} {}",
            p.x, p.y, p.z, cloud.semantic[i], cloud.instance[i]
        )?;
    }
    Ok(())
}

/// Minimal reader for clouds written by [`save_cloud_ply`]. Returns the
/// embedded codebook hash when present.
pub fn load_cloud_ply(path: &Path) -> Result<(LabeledPointCloud, Option<String>)> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let mut n: Option<usize> = None;
    let mut hash = None;
    match lines.next().transpose()? {
        Some(l) if l.trim() == "ply" => {}
        _ => return Err(bad_file(path, "missing ply magic")),
    }
    loop {
        let line = lines.next().transpose()?.ok_or_else(|| bad_file(path, "truncated header"))?;
        let line = line.trim().to_string();
        if line == "end_header" {
            break;
        } else if let Some(rest) = line.strip_prefix("comment codebook ") {
            hash = Some(rest.to_string());
        } else if let Some(rest) = line.strip_prefix("element vertex ") {
            n = Some(rest.parse().map_err(|_| bad_file(path, "bad vertex count"))?);
        } else if line == "format ascii 1.0"
            || line.starts_with("property")
            || line.starts_with("comment")
        {
            // recognized but not needed
        } else {
            return Err(bad_file(path, format!("unsupported header line {line:?}")));
        }
    }
    let n = n.ok_or_else(|| bad_file(path, "no vertex element"))?;
    let mut cloud = LabeledPointCloud::with_capacity(n);
    for _ in 0..n {
        let line = lines.next().transpose()?.ok_or_else(|| bad_file(path, "truncated body"))?;
        let mut f = line.split_whitespace();
        let mut next = || f.next().ok_or_else(|| bad_file(path, "short vertex row"));
        let x: f64 = next()?.parse().map_err(|_| bad_file(path, "bad float"))?;
        let y: f64 = next()?.parse().map_err(|_| bad_file(path, "bad float"))?;
        let z: f64 = next()?.parse().map_err(|_| bad_file(path, "bad float"))?;
        let r: u8 = next()?.parse().map_err(|_| bad_file(path, "bad color"))?;
        let g: u8 = next()?.parse().map_err(|_| bad_file(path, "bad color"))?;
        let b: u8 = next()?.parse().map_err(|_| bad_file(path, "bad color"))?;
        let s: u8 = next()?.parse().map_err(|_| bad_file(path, "bad class"))?;
        let i: u32 = next()?.parse().map_err(|_| bad_file(path, "bad instance"))?;
        cloud.push(nalgebra::Vector3::new(x, y, z), [r, g, b], s, i);
    }
    Ok((cloud, hash))
}

// --- parameter checkpoints --------------------------------------------------

fn push_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Binary checkpoint: magic, version, grid shape, bounds, optimizer step,
/// then parameters and both Adam moment vectors, all little-endian.
pub fn save_checkpoint(path: &Path, cfg: &FieldConfig, store: &ParamStore) -> Result<()> {
    let mut out = Vec::with_capacity(64 + store.len() * 24);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.grid.levels as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.grid.features as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.grid.table_size as u64).to_le_bytes());
    out.extend_from_slice(&cfg.grid.base_resolution.to_le_bytes());
    out.extend_from_slice(&cfg.grid.max_resolution.to_le_bytes());
    push_f64s(&mut out, &cfg.bounds.min);
    push_f64s(&mut out, &cfg.bounds.max);
    out.extend_from_slice(&store.step.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    push_f64s(&mut out, &store.params);
    push_f64s(&mut out, &store.m);
    push_f64s(&mut out, &store.v);
    fs::write(path, out)?;
    Ok(())
}

struct ByteCursor<'a> {
    data: &'a [u8],
    at: usize,
}

impl ByteCursor<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let end = self.at + N;
        let slice = self.data.get(self.at..end)?;
        self.at = end;
        Some(slice.try_into().unwrap())
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take()?))
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        (0..n).map(|_| Some(f64::from_le_bytes(self.take()?))).collect()
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(FieldConfig, ParamStore)> {
    let data = fs::read(path)?;
    let mut c = ByteCursor { data: &data, at: 0 };
    let short = || bad_file(path, "truncated checkpoint");
    if &c.take::<8>().ok_or_else(short)? != CHECKPOINT_MAGIC {
        return Err(bad_file(path, "not a parameter checkpoint (bad magic)"));
    }
    let version = c.u32().ok_or_else(short)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad_file(path, format!("unsupported checkpoint version {version}")));
    }
    let grid = HashGridConfig {
        levels: c.u32().ok_or_else(short)? as usize,
        features: c.u32().ok_or_else(short)? as usize,
        table_size: c.u64().ok_or_else(short)? as usize,
        base_resolution: c.u32().ok_or_else(short)?,
        max_resolution: c.u32().ok_or_else(short)?,
    };
    let bmin = c.f64s(3).ok_or_else(short)?;
    let bmax = c.f64s(3).ok_or_else(short)?;
    let cfg = FieldConfig {
        bounds: Aabb::new([bmin[0], bmin[1], bmin[2]], [bmax[0], bmax[1], bmax[2]]),
        grid,
    };
    let field = Field::new(&cfg)?;
    let step = c.u64().ok_or_else(short)?;
    let len = c.u64().ok_or_else(short)? as usize;
    if len != field.param_len() {
        return Err(bad_file(
            path,
            format!("checkpoint holds {len} parameters but its shape needs {}", field.param_len()),
        ));
    }
    let params = c.f64s(len).ok_or_else(short)?;
    let m = c.f64s(len).ok_or_else(short)?;
    let v = c.f64s(len).ok_or_else(short)?;
    if c.at != data.len() {
        return Err(bad_file(path, "trailing bytes after checkpoint"));
    }
    let store = ParamStore {
        params,
        grads: vec![0.0; len],
        m,
        v,
        step,
        hash_len: field.grid.param_len(),
    };
    Ok((cfg, store))
}

// --- loss trace -------------------------------------------------------------

pub fn save_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "iteration,color_coarse,color_fine,instance_coarse,instance_fine,semantic_coarse,semantic_fine,total"
    )?;
    for r in rows {
        let t = &r.terms;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.iteration,
            t.color_coarse,
            t.color_fine,
            t.instance_coarse,
            t.instance_fine,
            t.semantic_coarse,
            t.semantic_fine,
            r.total
        )?;
    }
    Ok(())
}

pub fn load_loss_csv(path: &Path) -> Result<Vec<LossRow>> {
    let r = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if ln == 0 {
            continue; // header
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 8 {
            return Err(bad_file(path, format!("loss row {ln}: {} cells", cells.len())));
        }
        let f = |i: usize| -> Result<f64> {
            cells[i]
                .parse()
                .map_err(|_| bad_file(path, format!("loss row {ln}: bad number {:?}", cells[i])))
        };
        rows.push(LossRow {
            iteration: cells[0]
                .parse()
                .map_err(|_| bad_file(path, format!("loss row {ln}: bad iteration")))?,
            terms: LossBreakdown {
                color_coarse: f(1)?,
                color_fine: f(2)?,
                instance_coarse: f(3)?,
                instance_fine: f(4)?,
                semantic_coarse: f(5)?,
                semantic_fine: f(6)?,
            },
            total: f(7)?,
        });
    }
    Ok(rows)
}

// --- json + hashes ----------------------------------------------------------

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    fs::write(path, out)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Hash of a value's compact JSON serialization; stable because struct
/// fields serialize in declaration order.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn netpbm_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|i| i as u8).collect();
        let p = dir.path().join("a.ppm");
        save_ppm(&p, 3, 2, &rgb).unwrap();
        assert_eq!(load_ppm(&p).unwrap(), (3, 2, rgb));

        let gray: Vec<u8> = (0..6).map(|i| 40 * i as u8).collect();
        let p8 = dir.path().join("a.pgm");
        save_pgm8(&p8, 2, 3, &gray).unwrap();
        assert_eq!(load_pgm8(&p8).unwrap(), (2, 3, gray));

        let wide = vec![0u16, 255, 256, 65535];
        let p16 = dir.path().join("w.pgm");
        save_pgm16(&p16, 2, 2, &wide).unwrap();
        assert_eq!(load_pgm16(&p16).unwrap(), (2, 2, wide));
        // Big-endian on disk: 256 must serialize as 0x01 0x00.
        let raw = fs::read(&p16).unwrap();
        let body = &raw[raw.len() - 8..];
        assert_eq!(body, &[0, 0, 0, 255, 1, 0, 255, 255]);

        assert!(save_ppm(&p, 4, 4, &[0; 3]).is_err());
    }

    #[test]
    fn depth_round_trips_with_infinities() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        let depth = vec![1.5f32, f32::INFINITY, 0.0, 3.25];
        save_depth(&p, 2, 2, &depth).unwrap();
        let (w, h, back) = load_depth(&p).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(back[0], 1.5);
        assert!(back[1].is_infinite());
        assert_eq!(back[3], 3.25);

        fs::write(&p, b"NOTDEPTH00000000").unwrap();
        assert!(load_depth(&p).is_err());
    }

    #[test]
    fn views_round_trip_both_instance_widths() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for max_id in [200u32, 300u32] {
            let n = 4 * 3;
            let view = RenderedView {
                width: 4,
                height: 3,
                rgb: (0..n * 3).map(|_| rng.gen()).collect(),
                semantic: (0..n).map(|_| rng.gen_range(0..5)).collect(),
                instance: (0..n).map(|_| rng.gen_range(0..=max_id)).collect(),
                depth: (0..n).map(|_| rng.gen::<f32>() * 10.0).collect(),
            };
            save_view(dir.path(), 0, &view).unwrap();
            let back = load_view(dir.path(), 0).unwrap();
            assert_eq!(back.rgb, view.rgb);
            assert_eq!(back.semantic, view.semantic);
            assert_eq!(back.instance, view.instance);
            assert_eq!(back.depth, view.depth);
        }
        assert_eq!(count_views(dir.path()), 1);
    }

    #[test]
    fn ply_round_trips_and_carries_hash() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        let mut cloud = LabeledPointCloud::with_capacity(3);
        cloud.push(Vector3::new(0.125, -2.5, 3.0), [10, 20, 30], 1, 4);
        cloud.push(Vector3::new(1e-9, 0.0, -0.75), [0, 0, 0], 0, 0);
        cloud.push(Vector3::new(7.25, 8.5, -9.125), [255, 1, 2], 3, 70000);
        save_cloud_ply(&p, &cloud, "deadbeef").unwrap();
        let (back, hash) = load_cloud_ply(&p).unwrap();
        assert_eq!(hash.as_deref(), Some("deadbeef"));
        assert_eq!(back.len(), 3);
        assert_eq!(back.pos, cloud.pos);
        assert_eq!(back.rgb, cloud.rgb);
        assert_eq!(back.semantic, cloud.semantic);
        assert_eq!(back.instance, cloud.instance);
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.bin");
        let cfg = FieldConfig {
            bounds: Aabb::new([-1.0, -2.0, -3.0], [1.0, 2.0, 3.0]),
            grid: HashGridConfig { table_size: 1 << 9, ..Default::default() },
        };
        let field = Field::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = field.init_params(&mut rng);
        for i in 0..store.len() {
            store.m[i] = rng.gen();
            store.v[i] = rng.gen();
        }
        store.step = 1234;
        save_checkpoint(&p, &cfg, &store).unwrap();
        let (cfg2, store2) = load_checkpoint(&p).unwrap();
        assert_eq!(cfg2.bounds, cfg.bounds);
        assert_eq!(cfg2.grid.table_size, cfg.grid.table_size);
        assert_eq!(store2.params, store.params);
        assert_eq!(store2.m, store.m);
        assert_eq!(store2.v, store.v);
        assert_eq!(store2.step, 1234);
        assert_eq!(store2.hash_len, store.hash_len);

        let mut raw = fs::read(&p).unwrap();
        raw[0] = b'X';
        fs::write(&p, &raw).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }

    #[test]
    fn loss_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<LossRow> = (0..20)
            .map(|i| {
                let terms = LossBreakdown {
                    color_coarse: rng.gen(),
                    color_fine: rng.gen(),
                    instance_coarse: rng.gen(),
                    instance_fine: rng.gen(),
                    semantic_coarse: rng.gen(),
                    semantic_fine: rng.gen(),
                };
                LossRow { iteration: i, total: terms.total(), terms }
            })
            .collect();
        save_loss_csv(&p, &rows).unwrap();
        let back = load_loss_csv(&p).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.iteration, b.iteration);
            assert_eq!(a.terms, b.terms);
            assert_eq!(a.total, b.total);
        }
    }

    #[test]
    fn sha256_matches_reference_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        // Same value, same hash; any field change, new hash.
        let a = config_hash(&serde_json::json!({"k": 1})).unwrap();
        let b = config_hash(&serde_json::json!({"k": 1})).unwrap();
        let c = config_hash(&serde_json::json!({"k": 2})).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
