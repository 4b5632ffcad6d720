//! COLMAP sparse model reader and writer (text and binary encodings).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use refsplat_core::math::{self, Mat3, Vec3};
use refsplat_core::Camera;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraModel {
    SimplePinhole,
    Pinhole,
    SimpleRadial,
}

/// COLMAP's model table: (id, name, parameter count).
const MODELS: [(i32, &str, usize); 11] = [
    (0, "SIMPLE_PINHOLE", 3),
    (1, "PINHOLE", 4),
    (2, "SIMPLE_RADIAL", 4),
    (3, "RADIAL", 5),
    (4, "OPENCV", 8),
    (5, "OPENCV_FISHEYE", 8),
    (6, "FULL_OPENCV", 12),
    (7, "FOV", 5),
    (8, "SIMPLE_RADIAL_FISHEYE", 4),
    (9, "RADIAL_FISHEYE", 5),
    (10, "THIN_PRISM_FISHEYE", 12),
];

impl CameraModel {
    fn from_name(name: &str) -> Result<Self> {
        match name {
            "SIMPLE_PINHOLE" => Ok(Self::SimplePinhole),
            "PINHOLE" => Ok(Self::Pinhole),
            "SIMPLE_RADIAL" => Ok(Self::SimpleRadial),
            other => Err(Error::UnsupportedCameraModel(other.to_string())),
        }
    }

    fn from_id(id: i32) -> Result<Self> {
        match MODELS.iter().find(|m| m.0 == id) {
            Some(m) => Self::from_name(m.1),
            None => Err(Error::UnsupportedCameraModel(format!("model id {id}"))),
        }
    }

    pub fn name(self) -> &'static str {
        MODELS[self.id() as usize].1
    }

    pub fn id(self) -> i32 {
        match self {
            Self::SimplePinhole => 0,
            Self::Pinhole => 1,
            Self::SimpleRadial => 2,
        }
    }

    pub fn param_count(self) -> usize {
        MODELS[self.id() as usize].2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapCamera {
    pub id: u32,
    pub model: CameraModel,
    pub width: u64,
    pub height: u64,
    pub params: Vec<f64>,
}

impl ColmapCamera {
    /// `(fx, fy, cx, cy)`; radial distortion is dropped.
    pub fn pinhole(&self) -> (f64, f64, f64, f64) {
        let p = &self.params;
        match self.model {
            CameraModel::Pinhole => (p[0], p[1], p[2], p[3]),
            CameraModel::SimplePinhole | CameraModel::SimpleRadial => (p[0], p[0], p[1], p[2]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub id: u32,
    /// World-to-camera rotation as `(w, x, y, z)`.
    pub qvec: [f64; 4],
    pub tvec: Vec3,
    pub camera_id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapPoint {
    pub id: u64,
    pub xyz: Vec3,
    pub rgb: [u8; 3],
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColmapModel {
    pub cameras: BTreeMap<u32, ColmapCamera>,
    pub images: Vec<ColmapImage>,
    pub points: Vec<ColmapPoint>,
}

impl ColmapModel {
    /// Pinhole camera for one registered image.
    pub fn camera_for(&self, image: &ColmapImage) -> Result<Camera> {
        let c = self
            .cameras
            .get(&image.camera_id)
            .ok_or_else(|| Error::Data(format!("image `{}` references unknown camera {}", image.name, image.camera_id)))?;
        if c.model == CameraModel::SimpleRadial {
            log::warn!("camera {}: SIMPLE_RADIAL distortion ignored", c.id);
        }
        let (fx, fy, cx, cy) = c.pinhole();
        let n = image.qvec.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0) {
            return Err(Error::Data(format!("image `{}` has a zero quaternion", image.name)));
        }
        let rotation: Mat3 = math::quat_to_mat(image.qvec.map(|v| v / n));
        Ok(Camera::new(fx, fy, cx, cy, c.width as usize, c.height as usize, rotation, image.tvec)?)
    }
}

/// Locates the sparse model: `sparse/0`, then `sparse`, then `root` itself.
pub fn find_model_dir(root: &Path) -> Result<PathBuf> {
    for dir in [root.join("sparse").join("0"), root.join("sparse"), root.to_path_buf()] {
        if dir.join("cameras.bin").is_file() || dir.join("cameras.txt").is_file() {
            return Ok(dir);
        }
    }
    Err(Error::Data(format!("no COLMAP model (cameras.bin or cameras.txt) under {}", root.display())))
}

/// Reads the binary model if present, otherwise the text one.
pub fn read_model(dir: &Path) -> Result<ColmapModel> {
    if dir.join("cameras.bin").is_file() {
        read_binary(dir)
    } else {
        read_text(dir)
    }
}

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter(|(_, l)| !l.trim_start().starts_with('#')).map(|(i, l)| (i + 1, l.trim()))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(path, format!("line {line}: missing {what}")))?;
    tok.parse().map_err(|_| Error::parse(path, format!("line {line}: invalid {what} `{tok}`")))
}

pub fn read_text(dir: &Path) -> Result<ColmapModel> {
    let mut model = ColmapModel::default();

    let path = dir.join("cameras.txt");
    let text = read_string(&path)?;
    for (ln, line) in records(&text).filter(|(_, l)| !l.is_empty()) {
        let mut it = line.split_whitespace();
        let id = field(&path, ln, it.next(), "camera id")?;
        let model_name: String = field(&path, ln, it.next(), "camera model")?;
        let cam_model = CameraModel::from_name(&model_name)?;
        let width = field(&path, ln, it.next(), "width")?;
        let height = field(&path, ln, it.next(), "height")?;
        let params = it.map(|t| field(&path, ln, Some(t), "camera parameter")).collect::<Result<Vec<f64>>>()?;
        if params.len() != cam_model.param_count() {
            return Err(Error::parse(
                &path,
                format!("line {ln}: {} expects {} parameters, found {}", cam_model.name(), cam_model.param_count(), params.len()),
            ));
        }
        model.cameras.insert(id, ColmapCamera { id, model: cam_model, width, height, params });
    }

    let path = dir.join("images.txt");
    let text = read_string(&path)?;
    // each image takes two lines; the second (2D observations) may be blank
    let lines: Vec<_> = records(&text).collect();
    for pair in lines.chunks(2) {
        let (ln, line) = pair[0];
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let id = field(&path, ln, it.next(), "image id")?;
        let mut q = [0.0; 4];
        for v in &mut q {
            *v = field(&path, ln, it.next(), "quaternion")?;
        }
        let mut t = [0.0; 3];
        for v in &mut t {
            *v = field(&path, ln, it.next(), "translation")?;
        }
        let camera_id = field(&path, ln, it.next(), "camera id")?;
        let name: String = field(&path, ln, it.next(), "image name")?;
        model.images.push(ColmapImage { id, qvec: q, tvec: t, camera_id, name });
    }

    let path = dir.join("points3D.txt");
    let text = read_string(&path)?;
    for (ln, line) in records(&text).filter(|(_, l)| !l.is_empty()) {
        let mut it = line.split_whitespace();
        let id = field(&path, ln, it.next(), "point id")?;
        let mut xyz = [0.0; 3];
        for v in &mut xyz {
            *v = field(&path, ln, it.next(), "coordinate")?;
        }
        let mut rgb = [0u8; 3];
        for v in &mut rgb {
            *v = field(&path, ln, it.next(), "color")?;
        }
        let error = field(&path, ln, it.next(), "reprojection error")?;
        model.points.push(ColmapPoint { id, xyz, rgb, error });
    }
    Ok(model)
}

struct Reader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path, bytes, pos: 0 })
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::parse(self.path, format!("unexpected end of file at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s.try_into().expect("slice of length N"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn cstr(&mut self) -> Result<String> {
        let rest = &self.bytes[self.pos..];
        let n = rest
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| Error::parse(self.path, format!("unterminated string at byte {}", self.pos)))?;
        let s = String::from_utf8_lossy(&rest[..n]).into_owned();
        self.pos += n + 1;
        Ok(s)
    }

    fn skip(&mut self, n: u64) -> Result<()> {
        let end = (self.pos as u64).checked_add(n).filter(|&e| e <= self.bytes.len() as u64);
        match end {
            Some(e) => {
                self.pos = e as usize;
                Ok(())
            }
            None => Err(Error::parse(self.path, format!("unexpected end of file at byte {}", self.pos))),
        }
    }
}

pub fn read_binary(dir: &Path) -> Result<ColmapModel> {
    let mut model = ColmapModel::default();

    let path = dir.join("cameras.bin");
    let mut r = Reader::open(&path)?;
    for _ in 0..r.u64()? {
        let id = r.i32()? as u32;
        let cam_model = CameraModel::from_id(r.i32()?)?;
        let width = r.u64()?;
        let height = r.u64()?;
        let params = (0..cam_model.param_count()).map(|_| r.f64()).collect::<Result<_>>()?;
        model.cameras.insert(id, ColmapCamera { id, model: cam_model, width, height, params });
    }

    let path = dir.join("images.bin");
    let mut r = Reader::open(&path)?;
    for _ in 0..r.u64()? {
        let id = r.u32()?;
        let qvec = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
        let tvec = [r.f64()?, r.f64()?, r.f64()?];
        let camera_id = r.u32()?;
        let name = r.cstr()?;
        let n2d = r.u64()?;
        r.skip(n2d.saturating_mul(24))?;
        model.images.push(ColmapImage { id, qvec, tvec, camera_id, name });
    }

    let path = dir.join("points3D.bin");
    let mut r = Reader::open(&path)?;
    for _ in 0..r.u64()? {
        let id = r.u64()?;
        let xyz = [r.f64()?, r.f64()?, r.f64()?];
        let rgb = [r.u8()?, r.u8()?, r.u8()?];
        let error = r.f64()?;
        let track = r.u64()?;
        r.skip(track.saturating_mul(8))?;
        model.points.push(ColmapPoint { id, xyz, rgb, error });
    }
    Ok(model)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `cameras.txt`, `images.txt` and `points3D.txt` (no 2D observations or tracks).
pub fn write_text(model: &ColmapModel, dir: &Path) -> Result<()> {
    let mut s = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    for c in model.cameras.values() {
        write!(s, "{} {} {} {}", c.id, c.model.name(), c.width, c.height).unwrap();
        for p in &c.params {
            write!(s, " {p:?}").unwrap();
        }
        s.push('\n');
    }
    write_file(&dir.join("cameras.txt"), s.as_bytes())?;

    let mut s = String::from(
        "# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n",
    );
    for im in &model.images {
        let [qw, qx, qy, qz] = im.qvec;
        let [tx, ty, tz] = im.tvec;
        writeln!(s, "{} {qw:?} {qx:?} {qy:?} {qz:?} {tx:?} {ty:?} {tz:?} {} {}\n", im.id, im.camera_id, im.name).unwrap();
    }
    write_file(&dir.join("images.txt"), s.as_bytes())?;

    let mut s = String::from("# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
    for p in &model.points {
        let [x, y, z] = p.xyz;
        let [r, g, b] = p.rgb;
        writeln!(s, "{} {x:?} {y:?} {z:?} {r} {g} {b} {:?}", p.id, p.error).unwrap();
    }
    write_file(&dir.join("points3D.txt"), s.as_bytes())
}

/// Writes `cameras.bin`, `images.bin` and `points3D.bin` (no 2D observations or tracks).
pub fn write_binary(model: &ColmapModel, dir: &Path) -> Result<()> {
    let mut b = Vec::new();
    b.extend((model.cameras.len() as u64).to_le_bytes());
    for c in model.cameras.values() {
        b.extend((c.id as i32).to_le_bytes());
        b.extend(c.model.id().to_le_bytes());
        b.extend(c.width.to_le_bytes());
        b.extend(c.height.to_le_bytes());
        c.params.iter().for_each(|p| b.extend(p.to_le_bytes()));
    }
    write_file(&dir.join("cameras.bin"), &b)?;

    let mut b = Vec::new();
    b.extend((model.images.len() as u64).to_le_bytes());
    for im in &model.images {
        b.extend(im.id.to_le_bytes());
        im.qvec.iter().chain(&im.tvec).for_each(|v| b.extend(v.to_le_bytes()));
        b.extend(im.camera_id.to_le_bytes());
        b.extend(im.name.as_bytes());
        b.push(0);
        b.extend(0u64.to_le_bytes());
    }
    write_file(&dir.join("images.bin"), &b)?;

    let mut b = Vec::new();
    b.extend((model.points.len() as u64).to_le_bytes());
    for p in &model.points {
        b.extend(p.id.to_le_bytes());
        p.xyz.iter().for_each(|v| b.extend(v.to_le_bytes()));
        b.extend(p.rgb);
        b.extend(p.error.to_le_bytes());
        b.extend(0u64.to_le_bytes());
    }
    write_file(&dir.join("points3D.bin"), &b)
}

/// World-to-camera rotation matrix to a unit quaternion `(w, x, y, z)` with `w ≥ 0`.
pub fn rotation_to_quat(r: &Mat3) -> [f64; 4] {
    let tr = r[0][0] + r[1][1] + r[2][2];
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [0.25 * s, (r[2][1] - r[1][2]) / s, (r[0][2] - r[2][0]) / s, (r[1][0] - r[0][1]) / s]
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
        [(r[2][1] - r[1][2]) / s, 0.25 * s, (r[0][1] + r[1][0]) / s, (r[0][2] + r[2][0]) / s]
    } else if r[1][1] > r[2][2] {
        let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
        [(r[0][2] - r[2][0]) / s, (r[0][1] + r[1][0]) / s, 0.25 * s, (r[1][2] + r[2][1]) / s]
    } else {
        let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
        [(r[1][0] - r[0][1]) / s, (r[0][2] + r[2][0]) / s, (r[1][2] + r[2][1]) / s, 0.25 * s]
    };
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sgn = if q[0] < 0.0 { -1.0 } else { 1.0 };
    q.map(|v| sgn * v / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quaternion_round_trip() {
        for q in [[1.0, 0.0, 0.0, 0.0], [0.5, 0.5, -0.5, 0.5], [0.1, 0.9, 0.3, -0.2], [0.0, 0.0, 1.0, 0.0]] {
            let n = q.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
            let q = q.map(|v| v / n);
            let back = rotation_to_quat(&math::quat_to_mat(q));
            let s = if q[0] < 0.0 { -1.0 } else { 1.0 };
            for k in 0..4 {
                assert!((back[k] - s * q[k]).abs() < 1e-12, "{q:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn model_names_and_ids_agree() {
        for m in [CameraModel::SimplePinhole, CameraModel::Pinhole, CameraModel::SimpleRadial] {
            assert_eq!(CameraModel::from_id(m.id()).unwrap(), m);
            assert_eq!(CameraModel::from_name(m.name()).unwrap(), m);
        }
        match CameraModel::from_name("OPENCV") {
            Err(Error::UnsupportedCameraModel(n)) => assert_eq!(n, "OPENCV"),
            other => panic!("{other:?}"),
        }
        match CameraModel::from_id(5) {
            Err(Error::UnsupportedCameraModel(n)) => assert_eq!(n, "OPENCV_FISHEYE"),
            other => panic!("{other:?}"),
        }
    }
}
