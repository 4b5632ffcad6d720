//! Extended 3D Gaussian Splatting PLY files.
//!
//! Shared fields keep the usual splatting property names (`x`, `f_dc_0`,
//! `f_rest_*`, `opacity`, `scale_*`, `rot_*`), so ordinary viewers still read
//! geometry and transmitted color. The reflected branch adds `f_ref_dc_*`,
//! `f_ref_rest_*`, `ref_opacity` and `beta`. Everything is stored as raw
//! little-endian doubles, which makes a round trip bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use refsplat_core::sh;
use refsplat_core::GaussianCloud;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

fn rest_count(max_sh_degree: usize) -> usize {
    (sh::coeff_count(max_sh_degree) - 1) * 3
}

/// Property names in file order for a cloud of the given SH degree.
pub fn property_names(max_sh_degree: usize) -> Vec<String> {
    let rest = rest_count(max_sh_degree);
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names.extend((0..3).map(|i| format!("f_ref_dc_{i}")));
    names.extend((0..rest).map(|i| format!("f_ref_rest_{i}")));
    names.push("ref_opacity".into());
    names.push("beta".into());
    names
}

/// Channel-major `f_rest` order from the coefficient-major in-memory layout.
fn push_sh(row: &mut Vec<f64>, coeffs: &[f64], k: usize) {
    row.extend_from_slice(&coeffs[..3]);
    for c in 0..3 {
        for j in 1..k {
            row.push(coeffs[j * 3 + c]);
        }
    }
}

fn header(cloud: &GaussianCloud) -> String {
    let mut h = String::new();
    h.push_str("ply\nformat binary_little_endian 1.0\n");
    writeln!(h, "comment active_sh_degree {}", cloud.active_sh_degree).unwrap();
    writeln!(h, "element vertex {}", cloud.len()).unwrap();
    for n in property_names(cloud.max_sh_degree) {
        writeln!(h, "property double {n}").unwrap();
    }
    h.push_str("end_header\n");
    h
}

/// Serializes a cloud to PLY bytes.
pub fn to_bytes(cloud: &GaussianCloud) -> Vec<u8> {
    let k = sh::coeff_count(cloud.max_sh_degree);
    let mut out = header(cloud).into_bytes();
    let mut row = Vec::with_capacity(property_names(cloud.max_sh_degree).len());
    for i in 0..cloud.len() {
        row.clear();
        row.extend_from_slice(&cloud.mean(i));
        row.extend_from_slice(&[0.0; 3]);
        push_sh(&mut row, cloud.sh_trans_of(i), k);
        row.push(cloud.opacity_logits[i]);
        row.extend_from_slice(&cloud.log_scale(i));
        row.extend_from_slice(&cloud.rotation(i));
        push_sh(&mut row, cloud.sh_ref_of(i), k);
        row.push(cloud.ref_opacity_logits[i]);
        row.push(cloud.beta_logits[i]);
        for v in &row {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

pub fn export_ply(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(cloud)).map_err(|e| Error::io(path, e))
}

pub fn import_ply(path: &Path) -> Result<GaussianCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

struct Header {
    vertices: usize,
    properties: Vec<(String, Scalar)>,
    active_sh_degree: Option<usize>,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let err = |offset: usize, message: String| Error::Ply {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let n = bytes[start..].iter().position(|&b| b == b'\n').ok_or_else(|| err(start, "unterminated header".into()))?;
        *pos = start + n + 1;
        Ok((start, String::from_utf8_lossy(&bytes[start..start + n]).trim_end_matches('\r').to_string()))
    };
    let (off, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(err(off, "missing `ply` magic".into()));
    }
    let mut h = Header {
        vertices: 0,
        properties: Vec::new(),
        active_sh_degree: None,
        data_offset: 0,
    };
    let mut element: Option<String> = None;
    let mut seen_format = false;
    loop {
        let (off, line) = next_line(&mut pos)?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => seen_format = true,
            ["format", f, ..] => return Err(err(off, format!("unsupported format `{f}` (binary_little_endian only)"))),
            ["comment", "active_sh_degree", d] => {
                h.active_sh_degree = Some(d.parse().map_err(|_| err(off, format!("bad active_sh_degree `{d}`")))?)
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count: usize = count.parse().map_err(|_| err(off, format!("bad element count `{count}`")))?;
                if *name == "vertex" {
                    h.vertices = count;
                } else if count > 0 {
                    return Err(err(off, format!("unexpected non-empty element `{name}`")));
                }
                element = Some(name.to_string());
            }
            ["property", "list", ..] => return Err(err(off, "list properties are not supported".into())),
            ["property", ty, name] => {
                if element.as_deref() == Some("vertex") {
                    let s = Scalar::parse(ty).ok_or_else(|| err(off, format!("unknown property type `{ty}`")))?;
                    h.properties.push((name.to_string(), s));
                }
            }
            _ => return Err(err(off, format!("malformed header line `{line}`"))),
        }
    }
    if !seen_format {
        return Err(err(0, "missing format line".into()));
    }
    h.data_offset = pos;
    Ok(h)
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<GaussianCloud> {
    let h = parse_header(bytes, path)?;
    let index = |name: &str| -> Result<usize> {
        h.properties.iter().position(|p| p.0 == name).ok_or_else(|| Error::MissingProperty {
            path: path.to_path_buf(),
            name: name.to_string(),
        })
    };
    let count_prefix = |prefix: &str| h.properties.iter().filter(|p| p.0.strip_prefix(prefix).is_some_and(|s| s.parse::<usize>().is_ok())).count();
    let rest = count_prefix("f_rest_");
    let ref_rest = count_prefix("f_ref_rest_");
    let mismatch = |message: String| Error::Ply {
        path: path.to_path_buf(),
        offset: 0,
        message,
    };
    if rest != ref_rest {
        return Err(mismatch(format!("{rest} f_rest properties but {ref_rest} f_ref_rest properties")));
    }
    let degree = (0..=sh::MAX_DEGREE)
        .find(|&d| rest_count(d) == rest)
        .ok_or_else(|| mismatch(format!("{rest} f_rest properties do not match any SH degree")))?;
    let k = sh::coeff_count(degree);

    let mut cols = Vec::new();
    for n in ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"] {
        cols.push(index(n)?);
    }
    for i in 0..rest {
        cols.push(index(&format!("f_rest_{i}"))?);
    }
    for n in ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "f_ref_dc_0", "f_ref_dc_1", "f_ref_dc_2"] {
        cols.push(index(n)?);
    }
    for i in 0..rest {
        cols.push(index(&format!("f_ref_rest_{i}"))?);
    }
    cols.push(index("ref_opacity")?);
    cols.push(index("beta")?);

    let offsets: Vec<usize> = h.properties.iter().scan(0, |acc, p| {
        let o = *acc;
        *acc += p.1.size();
        Some(o)
    }).collect();
    let stride: usize = h.properties.iter().map(|p| p.1.size()).sum();
    let expected = h.vertices * stride;
    let available = bytes.len() - h.data_offset;
    if available != expected {
        return Err(Error::Ply {
            path: path.to_path_buf(),
            offset: (h.data_offset + available.min(expected)) as u64,
            message: format!("{} vertices of {stride} bytes need {expected} data bytes, found {available}", h.vertices),
        });
    }

    let mut cloud = GaussianCloud::new(degree);
    cloud.active_sh_degree = h.active_sh_degree.unwrap_or(degree).min(degree);
    let stride_sh = k * 3;
    let mut vals = vec![0.0; cols.len()];
    for v in 0..h.vertices {
        let row = &bytes[h.data_offset + v * stride..];
        for (dst, &c) in vals.iter_mut().zip(&cols) {
            *dst = h.properties[c].1.read(&row[offsets[c]..]);
        }
        let mut it = vals.iter().copied();
        let mut take = |n: usize| (&mut it).take(n).collect::<Vec<f64>>();
        let mean = take(3);
        let dc = take(3);
        let rest_t = take(rest);
        let opacity = take(1)[0];
        let scale = take(3);
        let rot = take(4);
        let ref_dc = take(3);
        let rest_r = take(rest);
        let ref_opacity = take(1)[0];
        let beta = take(1)[0];

        cloud.means.extend_from_slice(&mean);
        cloud.rotations.extend_from_slice(&rot);
        cloud.log_scales.extend_from_slice(&scale);
        cloud.opacity_logits.push(opacity);
        cloud.ref_opacity_logits.push(ref_opacity);
        cloud.beta_logits.push(beta);
        for (dst, dc, rest) in [(&mut cloud.sh_trans, &dc, &rest_t), (&mut cloud.sh_ref, &ref_dc, &rest_r)] {
            let base = dst.len();
            dst.resize(base + stride_sh, 0.0);
            dst[base..base + 3].copy_from_slice(dc);
            for c in 0..3 {
                for j in 1..k {
                    dst[base + j * 3 + c] = rest[c * (k - 1) + j - 1];
                }
            }
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn property_layout() {
        let names = property_names(3);
        assert_eq!(names.len(), 6 + 3 + 45 + 1 + 3 + 4 + 3 + 45 + 2);
        assert!(names.contains(&"f_ref_rest_44".to_string()));
        assert_eq!(names.last().unwrap(), "beta");
        assert_eq!(property_names(0).len(), 6 + 3 + 1 + 3 + 4 + 3 + 2);
    }
}
