//! Text and binary file formats.
//!
//! CSV readers are strict: the header must match exactly. Every writer goes
//! through [`atomic_write`], so a reader never sees a half-written file.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::embed::{DenseLayer, EmbeddingModel};
use crate::error::{Error, Result};
use crate::geom2d::CameraPose2D;
use crate::geom3d::{CameraIntrinsics, PointCloud, Pose6DOF};
use crate::mining::{GradedPair, GradedPairSet};
use crate::retrieval::{Match, QueryResult, RankedMatches, WhitenTransform};
use crate::train::{BatchRecord, FeatureStore};

pub const POSES_2D_HEADER: &[&str] = &["id", "t0", "t1", "heading_deg"];
pub const POSES_6DOF_HEADER: &[&str] = &["id", "x", "y", "z", "qw", "qx", "qy", "qz"];
pub const PAIRS_HEADER: &[&str] = &["query_id", "map_id", "psi"];
pub const RESULTS_HEADER: &[&str] = &["query_id", "rank", "map_id", "distance"];
pub const TRACE_HEADER: &[&str] = &["batch", "pairs_seen", "lr", "loss"];
pub const SWEEP_HEADER: &[&str] = &["threshold", "recall"];

const DESCRIPTOR_MAGIC: &[u8; 4] = b"GDSC";
const MODEL_MAGIC: &[u8; 4] = b"GSIM";
const WHITEN_MAGIC: &[u8; 4] = b"GPCA";
pub const MODEL_FORMAT_VERSION: u16 = 1;
pub const WHITEN_FORMAT_VERSION: u16 = 1;

/// Writes to a temporary sibling, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// `<path>.<ext>` next to a binary file.
pub fn sidecar_path(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, e.to_string())
}

/// Strict-header CSV rows, each paired with its 1-based line number.
fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let file = fs::File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(BufReader::new(file));
    let mut records = rdr.records();
    let first = match records.next() {
        Some(r) => r.map_err(|e| csv_err(path, e))?,
        None => {
            return Err(parse_err(
                path,
                1,
                format!("empty file; expected header `{}`", header.join(",")),
            ))
        }
    };
    if first.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                first.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut out = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    rec: &csv::StringRecord,
    i: usize,
    name: &str,
) -> Result<T> {
    let raw = &rec[i];
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {name} value '{raw}'")))
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.write_record(&r).map_err(io_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    atomic_write(path, &bytes)
}

pub fn read_poses_2d(path: &Path) -> Result<Vec<CameraPose2D>> {
    read_csv(path, POSES_2D_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            let pose = CameraPose2D::new(
                r[0].to_string(),
                field(path, line, &r, 1, "t0")?,
                field(path, line, &r, 2, "t1")?,
                field(path, line, &r, 3, "heading_deg")?,
            );
            pose.validate()
                .map_err(|e| parse_err(path, line, e.to_string()))?;
            Ok(pose)
        })
        .collect()
}

pub fn write_poses_2d(path: &Path, poses: &[CameraPose2D]) -> Result<()> {
    write_csv(
        path,
        POSES_2D_HEADER,
        poses.iter().map(|p| {
            vec![
                p.id.clone(),
                p.t0.to_string(),
                p.t1.to_string(),
                p.heading_deg.to_string(),
            ]
        }),
    )
}

pub fn read_poses_6dof(path: &Path) -> Result<Vec<Pose6DOF>> {
    read_csv(path, POSES_6DOF_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            let mut v = [0.0; 7];
            for (i, name) in POSES_6DOF_HEADER[1..].iter().enumerate() {
                v[i] = field(path, line, &r, i + 1, name)?;
            }
            Pose6DOF::new(
                r[0].to_string(),
                [v[0], v[1], v[2]],
                [v[3], v[4], v[5], v[6]],
            )
            .map_err(|e| parse_err(path, line, e.to_string()))
        })
        .collect()
}

pub fn write_poses_6dof(path: &Path, poses: &[Pose6DOF]) -> Result<()> {
    write_csv(
        path,
        POSES_6DOF_HEADER,
        poses.iter().map(|p| {
            let mut row = vec![p.id.clone()];
            row.extend(
                p.translation
                    .iter()
                    .chain(&p.rotation)
                    .map(|v| v.to_string()),
            );
            row
        }),
    )
}

pub fn read_pairs(path: &Path) -> Result<Vec<GradedPair>> {
    read_csv(path, PAIRS_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            let psi: f64 = field(path, line, &r, 2, "psi")?;
            if !(0.0..=1.0).contains(&psi) {
                return Err(parse_err(path, line, format!("psi {psi} outside [0, 1]")));
            }
            Ok(GradedPair {
                query_id: r[0].to_string(),
                map_id: r[1].to_string(),
                psi,
            })
        })
        .collect()
}

/// Stored (non-zero) entries, query-major then map id, `psi` to 6 decimals.
pub fn write_pairs(path: &Path, pairs: &GradedPairSet) -> Result<()> {
    write_csv(
        path,
        PAIRS_HEADER,
        pairs.iter().map(|p| {
            vec![
                pairs.query_id(p.query).to_string(),
                pairs.map_id(p.map).to_string(),
                format!("{:.6}", p.psi),
            ]
        }),
    )
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let points = match ext.as_deref() {
        Some("xyz") => read_xyz(path)?,
        Some("ply") => read_ply(path)?,
        _ => {
            return Err(Error::invalid(format!(
                "unknown point-cloud extension: {}",
                path.display()
            )))
        }
    };
    PointCloud::new(points)
}

fn parse_triple(path: &Path, line: u64, toks: &[&str]) -> Result<[f64; 3]> {
    let mut p = [0.0; 3];
    for (v, t) in p.iter_mut().zip(toks) {
        *v = t
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad coordinate '{t}'")))?;
    }
    Ok(p)
}

fn read_xyz(path: &Path) -> Result<Vec<[f64; 3]>> {
    let mut points = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() || toks[0].starts_with('#') {
            continue;
        }
        if toks.len() != 3 {
            return Err(parse_err(
                path,
                i as u64 + 1,
                format!("expected 3 coordinates, found {}", toks.len()),
            ));
        }
        points.push(parse_triple(path, i as u64 + 1, &toks)?);
    }
    Ok(points)
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

fn read_ply(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let Some((n, line)) = lines.next() else {
            return Err(parse_err(path, 0, "header ends without 'end_header'"));
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(parse_err(
                    path,
                    n,
                    format!("unsupported PLY format '{other}'"),
                ))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(path, n, "bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", .., name] => match elements.last_mut() {
                Some(e) => e.properties.push(name.to_string()),
                None => return Err(parse_err(path, n, "property before any element")),
            },
            _ => {
                return Err(parse_err(
                    path,
                    n,
                    format!("unexpected header line '{line}'"),
                ))
            }
        }
    }
    let mut points = Vec::new();
    for e in &elements {
        let axes = if e.name == "vertex" {
            let find = |a: &str| {
                e.properties.iter().position(|p| p == a).ok_or_else(|| {
                    parse_err(path, 0, format!("vertex element lacks property '{a}'"))
                })
            };
            Some([find("x")?, find("y")?, find("z")?])
        } else {
            None
        };
        for _ in 0..e.count {
            let Some((n, line)) = lines.next() else {
                return Err(parse_err(
                    path,
                    0,
                    format!("file ends inside element '{}'", e.name),
                ));
            };
            if let Some(ax) = axes {
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() < e.properties.len() {
                    return Err(parse_err(path, n, "too few vertex values"));
                }
                points.push(parse_triple(
                    path,
                    n,
                    &[toks[ax[0]], toks[ax[1]], toks[ax[2]]],
                )?);
            }
        }
    }
    Ok(points)
}

pub fn write_cloud_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut s = String::new();
    for p in &cloud.points {
        s.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    atomic_write(path, s.as_bytes())
}

/// Flat `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            parse_err(
                path,
                i as u64 + 1,
                format!("expected key=value, found '{line}'"),
            )
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let kv = read_key_values(path)?;
    let get = |key: &str| -> Result<&str> {
        let mut found = kv.iter().filter(|(k, _)| k == key);
        let v = found
            .next()
            .ok_or_else(|| parse_err(path, 0, format!("missing key '{key}'")))?;
        if found.next().is_some() {
            return Err(parse_err(path, 0, format!("duplicate key '{key}'")));
        }
        Ok(v.1.as_str())
    };
    for (k, _) in &kv {
        if !["fx", "fy", "cx", "cy", "width", "height"].contains(&k.as_str()) {
            return Err(parse_err(path, 0, format!("unknown key '{k}'")));
        }
    }
    let real = |key: &str| -> Result<f64> {
        let v = get(key)?;
        v.parse()
            .map_err(|_| parse_err(path, 0, format!("bad {key} value '{v}'")))
    };
    let int = |key: &str| -> Result<u32> {
        let v = get(key)?;
        v.parse()
            .map_err(|_| parse_err(path, 0, format!("bad {key} value '{v}'")))
    };
    let k = CameraIntrinsics {
        fx: real("fx")?,
        fy: real("fy")?,
        cx: real("cx")?,
        cy: real("cy")?,
        width: int("width")?,
        height: int("height")?,
    };
    k.validate()?;
    Ok(k)
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    let s = format!(
        "fx={}\nfy={}\ncx={}\ncy={}\nwidth={}\nheight={}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    );
    atomic_write(path, s.as_bytes())
}

struct Bytes<'a> {
    path: &'a Path,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Bytes<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(parse_err(
                self.path,
                0,
                format!("truncated at byte {}", self.pos),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, m: &[u8; 4]) -> Result<()> {
        if self.take(4)? != m {
            return Err(parse_err(
                self.path,
                0,
                format!("bad magic; expected {}", String::from_utf8_lossy(m)),
            ));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| parse_err(self.path, 0, "size overflow"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(parse_err(
                self.path,
                0,
                format!("{} trailing bytes", self.data.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(str::to_string).collect())
}

/// GDSC store plus its `.ids` sidecar. Values are stored as f32.
pub fn write_descriptors(path: &Path, store: &FeatureStore) -> Result<()> {
    if store
        .ids()
        .iter()
        .any(|id| id.contains('\n') || id.contains('\r'))
    {
        return Err(Error::invalid(
            "descriptor ids must not contain line breaks",
        ));
    }
    let mut buf = Vec::with_capacity(16 + 4 * store.len() * store.dim());
    buf.extend_from_slice(DESCRIPTOR_MAGIC);
    buf.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (_, row) in store.rows() {
        push_f32s(&mut buf, row);
    }
    let mut ids = store.ids().join("\n");
    if !ids.is_empty() {
        ids.push('\n');
    }
    atomic_write(&sidecar_path(path, "ids"), ids.as_bytes())?;
    atomic_write(path, &buf)
}

pub fn read_descriptors(path: &Path) -> Result<FeatureStore> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    let mut b = Bytes {
        path,
        data: &data,
        pos: 0,
    };
    b.magic(DESCRIPTOR_MAGIC)?;
    let dim = b.u32()? as usize;
    let count = usize::try_from(b.u64()?).map_err(|_| parse_err(path, 0, "count too large"))?;
    let values = b.f32s(
        count
            .checked_mul(dim)
            .ok_or_else(|| parse_err(path, 0, "size overflow"))?,
    )?;
    b.finish()?;
    let ids_path = sidecar_path(path, "ids");
    let ids = read_ids(&ids_path)?;
    if ids.len() != count {
        return Err(parse_err(
            &ids_path,
            0,
            format!("{} ids for {count} descriptors", ids.len()),
        ));
    }
    FeatureStore::new(dim, ids, values)
}

/// GSIM checkpoint plus a JSON `metadata` sidecar.
pub fn write_model(
    path: &Path,
    model: &EmbeddingModel,
    metadata: &serde_json::Value,
) -> Result<()> {
    model.validate()?;
    let dims = model.dims();
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    buf.push(model.output_normalize as u8);
    buf.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for d in &dims {
        buf.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    push_f32s(&mut buf, &model.flat_params());
    let json =
        serde_json::to_string_pretty(metadata).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    atomic_write(&sidecar_path(path, "json"), format!("{json}\n").as_bytes())?;
    atomic_write(path, &buf)
}

pub fn read_model(path: &Path) -> Result<EmbeddingModel> {
    let data = fs::read(path)?;
    let mut b = Bytes {
        path,
        data: &data,
        pos: 0,
    };
    b.magic(MODEL_MAGIC)?;
    let version = b.u16()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(parse_err(
            path,
            0,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let normalize = match b.u8()? {
        0 => false,
        1 => true,
        v => return Err(parse_err(path, 0, format!("bad normalize flag {v}"))),
    };
    let n_layers = b.u32()? as usize;
    if !(1..=3).contains(&n_layers) {
        return Err(parse_err(
            path,
            0,
            format!("unsupported layer count {n_layers}"),
        ));
    }
    let dims: Vec<usize> = (0..=n_layers)
        .map(|_| b.u32().map(|d| d as usize))
        .collect::<Result<_>>()?;
    let layers = dims
        .windows(2)
        .map(|w| DenseLayer::zeros(w[0], w[1]))
        .collect();
    let mut model = EmbeddingModel::from_layers(layers, normalize)?;
    let params = b.f32s(model.param_count())?;
    b.finish()?;
    model.set_flat_params(&params)?;
    Ok(model)
}

pub fn read_model_metadata(path: &Path) -> Result<serde_json::Value> {
    let p = sidecar_path(path, "json");
    let text = fs::read_to_string(&p)?;
    serde_json::from_str(&text).map_err(|e| parse_err(&p, e.line() as u64, e.to_string()))
}

pub fn write_whitening(path: &Path, t: &WhitenTransform) -> Result<()> {
    t.validate()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(WHITEN_MAGIC);
    buf.extend_from_slice(&WHITEN_FORMAT_VERSION.to_le_bytes());
    buf.push(t.renormalize as u8);
    buf.extend_from_slice(&(t.input_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(t.output_dims as u32).to_le_bytes());
    push_f32s(&mut buf, &t.mean);
    push_f32s(&mut buf, &t.eigenvalues);
    push_f32s(&mut buf, &t.projection);
    atomic_write(path, &buf)
}

pub fn read_whitening(path: &Path) -> Result<WhitenTransform> {
    let data = fs::read(path)?;
    let mut b = Bytes {
        path,
        data: &data,
        pos: 0,
    };
    b.magic(WHITEN_MAGIC)?;
    let version = b.u16()?;
    if version != WHITEN_FORMAT_VERSION {
        return Err(parse_err(
            path,
            0,
            format!("unsupported whitening version {version}"),
        ));
    }
    let renormalize = b.u8()? != 0;
    let d = b.u32()? as usize;
    let out = b.u32()? as usize;
    let mean = b.f32s(d)?;
    let eigenvalues = b.f32s(out)?;
    let projection = b.f32s(out * d)?;
    b.finish()?;
    let t = WhitenTransform {
        mean,
        projection,
        eigenvalues,
        output_dims: out,
        renormalize,
    };
    t.validate()?;
    Ok(t)
}

/// Ranks are 1-based; distances use the shortest round-trip representation.
pub fn write_results(path: &Path, results: &[QueryResult]) -> Result<()> {
    write_csv(
        path,
        RESULTS_HEADER,
        results.iter().flat_map(|r| {
            r.ranked.matches.iter().enumerate().map(|(i, m)| {
                vec![
                    r.query_id.clone(),
                    (i + 1).to_string(),
                    m.map_id.clone(),
                    m.distance.to_string(),
                ]
            })
        }),
    )
}

/// Groups rows by query in order of first appearance; ranks must run 1, 2, ...
pub fn read_results(path: &Path) -> Result<Vec<QueryResult>> {
    let mut out: Vec<QueryResult> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (line, r) in read_csv(path, RESULTS_HEADER)? {
        let rank: usize = field(path, line, &r, 1, "rank")?;
        let distance: f64 = field(path, line, &r, 3, "distance")?;
        if !(distance >= 0.0 && distance.is_finite()) {
            return Err(parse_err(path, line, format!("bad distance {distance}")));
        }
        let qid = r[0].to_string();
        let slot = *index.entry(qid.clone()).or_insert_with(|| {
            out.push(QueryResult {
                query_id: qid,
                ranked: RankedMatches::default(),
            });
            out.len() - 1
        });
        let ranked = &mut out[slot].ranked;
        if rank != ranked.len() + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected rank {}, found {rank}", ranked.len() + 1),
            ));
        }
        ranked.matches.push(Match {
            map_id: r[2].to_string(),
            distance,
        });
    }
    Ok(out)
}

pub fn write_trace(path: &Path, trace: &[BatchRecord]) -> Result<()> {
    write_csv(
        path,
        TRACE_HEADER,
        trace.iter().map(|r| {
            vec![
                r.batch.to_string(),
                r.pairs_seen.to_string(),
                r.lr.to_string(),
                r.loss.to_string(),
            ]
        }),
    )
}

pub fn write_sweep(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    write_csv(
        path,
        SWEEP_HEADER,
        curve
            .iter()
            .map(|(t, r)| vec![t.to_string(), format!("{r:.6}")]),
    )
}
