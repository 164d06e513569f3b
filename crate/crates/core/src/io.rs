//! On-disk formats: point clouds, cameras, masks, poses, ground truth, scene
//! directories and debug dumps.
//!
//! Scene directory layout:
//!
//! ```text
//! scene.json              generator settings (synthetic scenes only)
//! cameras/camK.json       intrinsics and Base → camera extrinsic
//! frames/NNN.ply          lidar cloud in the Base frame (or NNN.csv)
//! frames/NNN_camK.png     semantic mask of camera K, 8- or 16-bit gray
//! frames/NNN_camK.json    class name → id vocabulary of that mask
//! poses.csv               Base → World pose per frame timestamp
//! gt.geojson              ground-truth curb polylines (or gt.csv)
//! truth_labels.csv        per-point generator labels (synthetic scenes only)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::association::SemanticMask;
use crate::delaunay::{TetraMesh, VoronoiSubgraph};
use crate::error::{Error, Result};
use crate::eval::GroundTruthCurb;
use crate::fisheye::{FisheyeCamera, DEFAULT_THETA_MAX_DEG};
use crate::frames::{FrameId, LabeledPointCloud, PoseLog, PoseRecord, RigidTransform};
use crate::pipeline::{FrameInput, SceneInput};
use crate::synth::{SynthScene, TruthClass, TruthLabel};
use crate::{Point3, Vector3};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::file(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

/// Writes `data`, creating missing parent directories.
pub fn write_file(path: &Path, data: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    std::fs::write(path, data).map_err(|e| Error::file(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    text.push('\n');
    write_file(path, text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e))
}

pub fn parse_frame_id(s: &str) -> Option<FrameId> {
    Some(match s {
        "B" => FrameId::Base,
        "L_L" => FrameId::LidarLeft,
        "L_R" => FrameId::LidarRight,
        "I" => FrameId::Imu,
        "W" => FrameId::World,
        _ => FrameId::Camera(s.strip_prefix("C_")?.parse().ok()?),
    })
}

// ---------------------------------------------------------------- PLY

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Little,
    Big,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], big: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().unwrap();
                (if big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Clone, Debug)]
struct PlyHeader {
    encoding: Encoding,
    elements: Vec<Element>,
    frame: Option<FrameId>,
    timestamp: Option<f64>,
    body: usize,
}

fn parse_ply_header(bytes: &[u8]) -> std::result::Result<PlyHeader, String> {
    let mut pos = 0;
    let mut next_line = || -> std::result::Result<&str, String> {
        let rest = &bytes[pos..];
        let n = rest.iter().position(|&b| b == b'\n').ok_or("truncated header")?;
        pos += n + 1;
        let line = std::str::from_utf8(&rest[..n]).map_err(|_| "header is not UTF-8")?;
        Ok(line.trim_end_matches('\r'))
    };
    if next_line()? != "ply" {
        return Err("missing `ply` magic".into());
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let (mut frame, mut timestamp) = (None, None);
    loop {
        let line = next_line()?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", f, _] => {
                encoding = Some(match *f {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Little,
                    "binary_big_endian" => Encoding::Big,
                    other => return Err(format!("unknown format `{other}`")),
                })
            }
            ["comment", "frame", f] => {
                frame = Some(parse_frame_id(f).ok_or_else(|| format!("unknown frame `{f}`"))?)
            }
            ["comment", "timestamp", t] => {
                timestamp = Some(t.parse().map_err(|_| format!("bad timestamp `{t}`"))?)
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => elements.push(Element {
                name: name.to_string(),
                count: n.parse().map_err(|_| format!("bad element count `{n}`"))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, _] => {
                let el = elements.last_mut().ok_or("property before element")?;
                let c = Scalar::parse(c).ok_or_else(|| format!("unknown type `{c}`"))?;
                let i = Scalar::parse(i).ok_or_else(|| format!("unknown type `{i}`"))?;
                el.props.push(Property::List(c, i));
            }
            ["property", t, name] => {
                let el = elements.last_mut().ok_or("property before element")?;
                let t = Scalar::parse(t).ok_or_else(|| format!("unknown type `{t}`"))?;
                el.props.push(Property::Scalar(name.to_string(), t));
            }
            _ => return Err(format!("unrecognized header line `{line}`")),
        }
    }
    Ok(PlyHeader {
        encoding: encoding.ok_or("missing format line")?,
        elements,
        frame,
        timestamp,
        body: pos,
    })
}

/// Scalar property values of every `vertex` record; list properties and
/// other elements are skipped.
fn read_ply_vertices(h: &PlyHeader, body: &[u8]) -> std::result::Result<Vec<Vec<f64>>, String> {
    let mut rows = Vec::new();
    match h.encoding {
        Encoding::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| "ASCII body is not UTF-8")?;
            let mut tok = text.split_ascii_whitespace();
            let mut num = || -> std::result::Result<f64, String> {
                let t = tok.next().ok_or("truncated body")?;
                t.parse().map_err(|_| format!("bad number `{t}`"))
            };
            for el in &h.elements {
                for _ in 0..el.count {
                    let mut row = Vec::new();
                    for p in &el.props {
                        match p {
                            Property::Scalar(..) => row.push(num()?),
                            Property::List(..) => {
                                let n = num()? as usize;
                                for _ in 0..n {
                                    num()?;
                                }
                            }
                        }
                    }
                    if el.name == "vertex" {
                        rows.push(row);
                    }
                }
            }
        }
        Encoding::Little | Encoding::Big => {
            let big = h.encoding == Encoding::Big;
            let mut at = 0usize;
            let mut take = |n: usize| -> std::result::Result<&[u8], String> {
                let s = body.get(at..at + n).ok_or("truncated body")?;
                at += n;
                Ok(s)
            };
            for el in &h.elements {
                for _ in 0..el.count {
                    let mut row = Vec::new();
                    for p in &el.props {
                        match *p {
                            Property::Scalar(_, t) => row.push(t.decode(take(t.size())?, big)),
                            Property::List(c, i) => {
                                let n = c.decode(take(c.size())?, big) as usize;
                                take(n * i.size())?;
                            }
                        }
                    }
                    if el.name == "vertex" {
                        rows.push(row);
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn label_value(v: f64) -> std::result::Result<u16, String> {
    if v.fract() == 0.0 && (0.0..=u16::MAX as f64).contains(&v) {
        Ok(v as u16)
    } else {
        Err(format!("label {v} is not a 16-bit class id"))
    }
}

/// Reads `x, y, z` and an optional integer `label` from the `vertex`
/// element. `comment frame F` and `comment timestamp T` header lines set the
/// cloud's frame (default Base) and timestamp (default 0).
pub fn read_ply(path: &Path) -> Result<LabeledPointCloud> {
    let bytes = read_bytes(path)?;
    let err = |m: String| Error::parse(path, m);
    let h = parse_ply_header(&bytes).map_err(err)?;
    let vertex = h.elements.iter().find(|e| e.name == "vertex").ok_or_else(|| err("no vertex element".into()))?;
    let scalars: Vec<&str> = vertex
        .props
        .iter()
        .filter_map(|p| match p {
            Property::Scalar(n, _) => Some(n.as_str()),
            Property::List(..) => None,
        })
        .collect();
    let col = |name: &str| scalars.iter().position(|n| *n == name);
    let (Some(ix), Some(iy), Some(iz)) = (col("x"), col("y"), col("z")) else {
        return Err(err("vertex element lacks x, y or z".into()));
    };
    let il = col("label");
    let rows = read_ply_vertices(&h, &bytes[h.body..]).map_err(err)?;
    let points = rows.iter().map(|r| Point3::new(r[ix], r[iy], r[iz])).collect();
    let labels = il
        .map(|i| rows.iter().map(|r| label_value(r[i])).collect::<std::result::Result<Vec<_>, _>>())
        .transpose()
        .map_err(err)?;
    LabeledPointCloud::new(points, h.frame.unwrap_or(FrameId::Base), labels, h.timestamp.unwrap_or(0.0))
}

/// Writes doubles for the coordinates and an unsigned short `label` when the
/// cloud is labeled.
pub fn write_ply(path: &Path, cloud: &LabeledPointCloud, format: PlyFormat) -> Result<()> {
    let mut head = String::from("ply\n");
    head += match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    };
    let _ = writeln!(head, "comment frame {}", cloud.frame);
    let _ = writeln!(head, "comment timestamp {}", cloud.timestamp);
    let _ = writeln!(head, "element vertex {}", cloud.len());
    head += "property double x\nproperty double y\nproperty double z\n";
    if cloud.labels.is_some() {
        head += "property ushort label\n";
    }
    head += "end_header\n";
    let mut out = head.into_bytes();
    for (i, p) in cloud.points.iter().enumerate() {
        let label = cloud.labels.as_ref().map(|l| l[i]);
        match format {
            PlyFormat::Ascii => {
                let mut line = format!("{} {} {}", p.x, p.y, p.z);
                if let Some(l) = label {
                    let _ = write!(line, " {l}");
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            PlyFormat::BinaryLittleEndian => {
                for c in [p.x, p.y, p.z] {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(l) = label {
                    out.extend_from_slice(&l.to_le_bytes());
                }
            }
        }
    }
    write_file(path, out)
}

// ---------------------------------------------------------------- CSV clouds

/// `x,y,z[,label]` rows; a non-numeric first row is taken as a header.
pub fn read_cloud_csv(path: &Path, frame: FrameId, timestamp: f64) -> Result<LabeledPointCloud> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let nums: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let nums = match nums {
            Ok(n) => n,
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::parse(path, format!("row {}: non-numeric field", i + 1))),
        };
        if !(3..=4).contains(&nums.len()) || width.is_some_and(|w| w != nums.len()) {
            return Err(Error::parse(path, format!("row {}: expected x,y,z[,label]", i + 1)));
        }
        width = Some(nums.len());
        points.push(Point3::new(nums[0], nums[1], nums[2]));
        if let Some(&l) = nums.get(3) {
            labels.push(label_value(l).map_err(|m| Error::parse(path, m))?);
        }
    }
    let labels = (width == Some(4)).then_some(labels);
    LabeledPointCloud::new(points, frame, labels, timestamp)
}

pub fn write_cloud_csv(path: &Path, cloud: &LabeledPointCloud) -> Result<()> {
    let mut out = String::from(if cloud.labels.is_some() { "x,y,z,label\n" } else { "x,y,z\n" });
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{},{},{}", p.x, p.y, p.z);
        if let Some(l) = &cloud.labels {
            let _ = write!(out, ",{}", l[i]);
        }
        out.push('\n');
    }
    write_file(path, out)
}

/// Dispatches on the extension: `.ply` or `.csv`.
pub fn read_cloud(path: &Path) -> Result<LabeledPointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path),
        Some("csv") => read_cloud_csv(path, FrameId::Base, 0.0),
        _ => Err(Error::parse(path, "unsupported cloud format (expected .ply or .csv)")),
    }
}

// ---------------------------------------------------------------- cameras

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtrinsicFile {
    t: [f64; 3],
    /// Row-major rotation.
    #[serde(rename = "R")]
    r: [f64; 9],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    k: [f64; 4],
    width: u32,
    height: u32,
    /// Radians.
    #[serde(default)]
    theta_max: Option<f64>,
    extrinsic: ExtrinsicFile,
}

fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    std::array::from_fn(|i| m[(i / 3, i % 3)])
}

/// Camera `id` with its Base → camera extrinsic.
pub fn read_camera(path: &Path, id: u8) -> Result<FisheyeCamera> {
    let f: CameraFile = read_json(path)?;
    let rot = Matrix3::from_row_slice(&f.extrinsic.r);
    let ext = RigidTransform::new(rot, Vector3::from(f.extrinsic.t), FrameId::Base, FrameId::Camera(id))?;
    FisheyeCamera::new(
        f.fx,
        f.fy,
        f.cx,
        f.cy,
        f.k,
        f.width,
        f.height,
        f.theta_max.unwrap_or(DEFAULT_THETA_MAX_DEG.to_radians()),
        ext,
    )
}

pub fn write_camera(path: &Path, cam: &FisheyeCamera) -> Result<()> {
    let f = CameraFile {
        fx: cam.fx,
        fy: cam.fy,
        cx: cam.cx,
        cy: cam.cy,
        k: cam.k,
        width: cam.width,
        height: cam.height,
        theta_max: Some(cam.theta_max),
        extrinsic: ExtrinsicFile {
            t: (*cam.extrinsic.translation()).into(),
            r: row_major(cam.extrinsic.rotation()),
        },
    };
    write_json(path, &f)
}

// ---------------------------------------------------------------- masks

/// `frames/NNN_camK.png` → `frames/NNN_camK.json`.
pub fn mask_sidecar(png: &Path) -> PathBuf {
    png.with_extension("json")
}

/// Single-channel 8- or 16-bit PNG plus its class vocabulary sidecar, which
/// must name a `curb` class.
pub fn read_mask(png: &Path) -> Result<SemanticMask> {
    let side = mask_sidecar(png);
    let classes: BTreeMap<String, u16> = read_json(&side)?;
    let curb = *classes
        .get("curb")
        .ok_or_else(|| Error::parse(&side, "vocabulary has no `curb` class"))?;
    let bytes = read_bytes(png)?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| Error::parse(png, e))?;
    let (w, h) = (img.width(), img.height());
    let labels: Vec<u16> = match img {
        image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u16::from).collect(),
        image::DynamicImage::ImageLuma16(b) => b.into_raw(),
        other => {
            return Err(Error::parse(png, format!("mask must be single-channel, found {:?}", other.color())))
        }
    };
    SemanticMask::new(w, h, labels, curb, classes)
}

/// 8-bit when every id fits, 16-bit otherwise.
pub fn write_mask(png: &Path, mask: &SemanticMask) -> Result<()> {
    if let Some(dir) = png.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    let (w, h) = (mask.width, mask.height);
    let res = if mask.labels.iter().all(|&l| l <= u8::MAX as u16) {
        let raw = mask.labels.iter().map(|&l| l as u8).collect();
        image::GrayImage::from_raw(w, h, raw).expect("mask size checked").save(png)
    } else {
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w, h, mask.labels.clone())
            .expect("mask size checked")
            .save(png)
    };
    res.map_err(|e| Error::parse(png, e))?;
    write_json(&mask_sidecar(png), &mask.classes)
}

// ---------------------------------------------------------------- poses

const POSE_HEADER: [&str; 13] = [
    "timestamp", "tx", "ty", "tz", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
];

/// `timestamp,tx,ty,tz,r00..r22`, Base → World, rotation row-major.
pub fn read_poses(path: &Path) -> Result<PoseLog> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let head = rdr.headers().map_err(|e| Error::parse(path, e))?;
    if head.iter().ne(POSE_HEADER) {
        return Err(Error::parse(path, format!("header must be `{}`", POSE_HEADER.join(","))));
    }
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let v: Vec<f64> = rec
            .iter()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, format!("row {}: non-numeric field", i + 2)))?;
        let rot = Matrix3::from_row_slice(&v[4..13]);
        let t = RigidTransform::new(rot, Vector3::new(v[1], v[2], v[3]), FrameId::Base, FrameId::World)
            .map_err(|e| Error::parse(path, format!("row {}: {e}", i + 2)))?;
        records.push(PoseRecord {
            timestamp: v[0],
            base_to_world: t,
        });
    }
    PoseLog::new(records)
}

pub fn write_poses(path: &Path, poses: &[PoseRecord]) -> Result<()> {
    let mut out = POSE_HEADER.join(",");
    out.push('\n');
    for r in poses {
        let t = r.base_to_world.translation();
        let mut fields = vec![r.timestamp, t.x, t.y, t.z];
        fields.extend(row_major(r.base_to_world.rotation()));
        let row: Vec<String> = fields.iter().map(f64::to_string).collect();
        out += &row.join(",");
        out.push('\n');
    }
    write_file(path, out)
}

// ---------------------------------------------------------------- ground truth

fn coord(v: &serde_json::Value) -> Option<Point3> {
    let a = v.as_array()?;
    let c = |i: usize| a.get(i).and_then(|x| x.as_f64());
    match a.len() {
        2 => Some(Point3::new(c(0)?, c(1)?, 0.0)),
        3 => Some(Point3::new(c(0)?, c(1)?, c(2)?)),
        _ => None,
    }
}

/// A FeatureCollection (or single Feature) of LineStrings. The segment id is
/// `properties.segment_id`, or the feature's position when absent. Missing
/// `z` reads as 0.
pub fn read_gt_geojson(path: &Path) -> Result<Vec<GroundTruthCurb>> {
    let doc: serde_json::Value = read_json(path)?;
    let bad = |m: String| Error::parse(path, m);
    let features = match doc["type"].as_str() {
        Some("FeatureCollection") => doc["features"].as_array().cloned().unwrap_or_default(),
        Some("Feature") => vec![doc.clone()],
        _ => return Err(bad("expected a Feature or FeatureCollection".into())),
    };
    let mut out = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let g = &f["geometry"];
        if g["type"].as_str() != Some("LineString") {
            return Err(bad(format!("feature {i}: geometry must be a LineString")));
        }
        let id = match &f["properties"]["segment_id"] {
            serde_json::Value::Null => i as u32,
            v => v
                .as_u64()
                .and_then(|x| u32::try_from(x).ok())
                .ok_or_else(|| bad(format!("feature {i}: bad segment_id")))?,
        };
        let pts = g["coordinates"]
            .as_array()
            .ok_or_else(|| bad(format!("feature {i}: missing coordinates")))?
            .iter()
            .map(coord)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad(format!("feature {i}: bad coordinate")))?;
        out.push(GroundTruthCurb::new(id, pts)?);
    }
    Ok(out)
}

pub fn write_gt_geojson(path: &Path, gt: &[GroundTruthCurb]) -> Result<()> {
    let features: Vec<serde_json::Value> = gt
        .iter()
        .map(|g| {
            serde_json::json!({
                "type": "Feature",
                "properties": { "segment_id": g.segment_id },
                "geometry": {
                    "type": "LineString",
                    "coordinates": g.points.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>(),
                },
            })
        })
        .collect();
    write_json(path, &serde_json::json!({ "type": "FeatureCollection", "features": features }))
}

#[derive(Serialize, Deserialize)]
struct GtRow {
    segment_id: u32,
    x: f64,
    y: f64,
    z: f64,
}

/// `segment_id,x,y,z` rows; vertex order is row order within a segment.
pub fn read_gt_csv(path: &Path) -> Result<Vec<GroundTruthCurb>> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut segs: Vec<(u32, Vec<Point3>)> = Vec::new();
    for row in rdr.deserialize::<GtRow>() {
        let r = row.map_err(|e| Error::parse(path, e))?;
        let p = Point3::new(r.x, r.y, r.z);
        match segs.iter_mut().find(|(id, _)| *id == r.segment_id) {
            Some((_, v)) => v.push(p),
            None => segs.push((r.segment_id, vec![p])),
        }
    }
    segs.into_iter().map(|(id, pts)| GroundTruthCurb::new(id, pts)).collect()
}

pub fn write_gt_csv(path: &Path, gt: &[GroundTruthCurb]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for g in gt {
        for p in &g.points {
            w.serialize(GtRow {
                segment_id: g.segment_id,
                x: p.x,
                y: p.y,
                z: p.z,
            })
            .map_err(|e| Error::parse(path, e))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::parse(path, e.to_string()))?;
    write_file(path, bytes)
}

/// Dispatches on the extension: `.geojson`/`.json` or `.csv`.
pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthCurb>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("geojson" | "json") => read_gt_geojson(path),
        Some("csv") => read_gt_csv(path),
        _ => Err(Error::parse(path, "unsupported ground-truth format (expected .geojson or .csv)")),
    }
}

// ---------------------------------------------------------------- truth labels

#[derive(Serialize, Deserialize)]
struct TruthRow {
    frame: u32,
    index: u32,
    class: TruthClass,
    segment: Option<u32>,
}

/// `frame,index,class,segment`, one row per lidar return.
pub fn write_truth_labels(path: &Path, frames: &[Vec<TruthLabel>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (f, labels) in frames.iter().enumerate() {
        for (i, l) in labels.iter().enumerate() {
            w.serialize(TruthRow {
                frame: f as u32,
                index: i as u32,
                class: l.class,
                segment: l.segment,
            })
            .map_err(|e| Error::parse(path, e))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::parse(path, e.to_string()))?;
    write_file(path, bytes)
}

pub fn read_truth_labels(path: &Path) -> Result<Vec<Vec<TruthLabel>>> {
    let text = read_text(path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out: Vec<Vec<TruthLabel>> = Vec::new();
    for row in rdr.deserialize::<TruthRow>() {
        let r = row.map_err(|e| Error::parse(path, e))?;
        let f = r.frame as usize;
        if out.len() <= f {
            out.resize(f + 1, Vec::new());
        }
        if out[f].len() != r.index as usize {
            return Err(Error::parse(path, format!("frame {f}: indices must be consecutive from 0")));
        }
        out[f].push(TruthLabel {
            class: r.class,
            segment: r.segment,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- scenes

pub fn frame_cloud_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join("frames").join(format!("{frame:03}.ply"))
}

pub fn frame_mask_path(dir: &Path, frame: usize, camera: u8) -> PathBuf {
    dir.join("frames").join(format!("{frame:03}_cam{camera}.png"))
}

fn camera_id(cam: &FisheyeCamera, fallback: usize) -> u8 {
    match cam.extrinsic.to_frame() {
        FrameId::Camera(k) => k,
        _ => fallback as u8,
    }
}

/// `gt.geojson` or `gt.csv`, whichever exists first.
pub fn find_ground_truth(dir: &Path) -> Option<PathBuf> {
    ["gt.geojson", "gt.csv"].iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

pub fn write_scene(dir: &Path, scene: &SynthScene) -> Result<()> {
    write_json(&dir.join("scene.json"), &scene.spec)?;
    let ids: Vec<u8> = scene.cameras.iter().enumerate().map(|(i, c)| camera_id(c, i)).collect();
    for (cam, &id) in scene.cameras.iter().zip(&ids) {
        write_camera(&dir.join("cameras").join(format!("cam{id}.json")), cam)?;
    }
    for (k, f) in scene.frames.iter().enumerate() {
        write_ply(&frame_cloud_path(dir, k), &f.cloud, PlyFormat::BinaryLittleEndian)?;
        for (mask, &id) in f.masks.iter().zip(&ids) {
            write_mask(&frame_mask_path(dir, k, id), mask)?;
        }
    }
    let poses: Vec<PoseRecord> = scene.frames.iter().map(|f| f.pose.clone()).collect();
    write_poses(&dir.join("poses.csv"), &poses)?;
    write_gt_geojson(&dir.join("gt.geojson"), &scene.gt)?;
    let truth: Vec<Vec<TruthLabel>> = scene.frames.iter().map(|f| f.truth.clone()).collect();
    write_truth_labels(&dir.join("truth_labels.csv"), &truth)
}

/// Files in `dir` named `<prefix><digits>.<ext>`, sorted by the number.
fn numbered(dir: &Path, prefix: &str, exts: &[&str]) -> Result<Vec<(u32, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()),
            path.extension().and_then(|s| s.to_str()),
        ) else {
            continue;
        };
        if !exts.contains(&ext) {
            continue;
        }
        if let Some(n) = stem.strip_prefix(prefix).filter(|n| n.bytes().all(|b| b.is_ascii_digit())) {
            if let Ok(n) = n.parse() {
                out.push((n, path));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Loads a scene directory. Clouds without a timestamp comment take the
/// timestamp of the pose row with the same position. Ground truth is empty
/// when the directory has none.
pub fn read_scene(dir: &Path) -> Result<SceneInput> {
    let cams = numbered(&dir.join("cameras"), "cam", &["json"])?;
    if cams.is_empty() {
        return Err(Error::parse(dir.join("cameras"), "no camera files"));
    }
    let cameras = cams
        .iter()
        .map(|(id, p)| read_camera(p, *id as u8))
        .collect::<Result<Vec<_>>>()?;
    let poses = read_poses(&dir.join("poses.csv"))?;
    let clouds = numbered(&dir.join("frames"), "", &["ply", "csv"])?;
    let mut frames = Vec::with_capacity(clouds.len());
    for (pos, (n, path)) in clouds.iter().enumerate() {
        let mut cloud = read_cloud(path)?;
        let stamped = path.extension().is_some_and(|e| e == "ply") && has_timestamp(path)?;
        if !stamped {
            cloud.timestamp = poses
                .records()
                .get(pos)
                .ok_or_else(|| Error::parse(path, "no timestamp and no matching pose row"))?
                .timestamp;
        }
        let masks = cams
            .iter()
            .map(|(id, _)| read_mask(&frame_mask_path(dir, *n as usize, *id as u8)))
            .collect::<Result<Vec<_>>>()?;
        frames.push(FrameInput { cloud, masks });
    }
    let gt = find_ground_truth(dir).map(|p| read_ground_truth(&p)).transpose()?.unwrap_or_default();
    Ok(SceneInput {
        cameras,
        frames,
        poses,
        gt,
    })
}

fn has_timestamp(path: &Path) -> Result<bool> {
    let bytes = read_bytes(path)?;
    let h = parse_ply_header(&bytes).map_err(|m| Error::parse(path, m))?;
    Ok(h.timestamp.is_some())
}

// ---------------------------------------------------------------- debug dumps

/// Every triangle of the tetrahedral mesh, each shared face once.
pub fn write_mesh_off(path: &Path, mesh: &TetraMesh) -> Result<()> {
    let mut faces = Vec::new();
    for (t, tet) in mesh.tets.iter().enumerate() {
        for i in 0..4 {
            if mesh.neighbors[t][i].is_none_or(|u| (t as u32) < u) {
                let f: Vec<u32> = (0..4).filter(|&j| j != i).map(|j| tet.v[j]).collect();
                faces.push(f);
            }
        }
    }
    let mut out = format!("OFF\n{} {} 0\n", mesh.points.len(), faces.len());
    for p in &mesh.points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    for f in &faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    write_file(path, out)
}

/// Kept Voronoi vertices with their circumradius, and the subgraph edges.
pub fn write_voronoi_ply(path: &Path, g: &VoronoiSubgraph) -> Result<()> {
    let mut out = String::from("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", g.vertices.len());
    out += "property double x\nproperty double y\nproperty double z\nproperty double radius\n";
    let _ = writeln!(out, "element edge {}", g.edges.len());
    out += "property int vertex1\nproperty int vertex2\nend_header\n";
    for v in &g.vertices {
        let _ = writeln!(out, "{} {} {} {}", v.center.x, v.center.y, v.center.z, v.radius);
    }
    for (a, b) in &g.edges {
        let _ = writeln!(out, "{a} {b}");
    }
    write_file(path, out)
}

pub fn write_polyline_ply(path: &Path, line: &[Point3]) -> Result<()> {
    let mut out = String::from("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", line.len());
    out += "property double x\nproperty double y\nproperty double z\n";
    let _ = writeln!(out, "element edge {}", line.len().saturating_sub(1));
    out += "property int vertex1\nproperty int vertex2\nend_header\n";
    for p in line {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    for i in 1..line.len() {
        let _ = writeln!(out, "{} {}", i - 1, i);
    }
    write_file(path, out)
}

/// Gnuplot data file, one `x y z` block per named series; blocks are
/// separated by two blank lines so `index N` selects one.
pub fn write_xy_dump(path: &Path, series: &[(&str, &[Point3])]) -> Result<()> {
    let mut out = String::new();
    for (i, (name, pts)) in series.iter().enumerate() {
        if i > 0 {
            out += "\n\n";
        }
        let _ = writeln!(out, "# {name}");
        for p in pts.iter() {
            let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
        }
    }
    write_file(path, out)
}
