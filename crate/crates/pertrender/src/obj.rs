//! Wavefront OBJ meshes.
//!
//! Reads `v` and `f` records (1-based or negative indices, `v/vt/vn` face
//! tokens) plus two color sources: the common `v x y z r g b` vertex-color
//! extension and `usemtl` materials with a diffuse `Kd` from `mtllib` files.
//! A face takes its material color, else the mean of its vertex colors,
//! else the configured default.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pertrender_core::math::Vec3;
use pertrender_core::Mesh;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjOptions {
    /// Split polygons with more than three corners into triangle fans
    /// instead of rejecting them.
    pub fan_triangulate: bool,
    pub default_color: [f64; 3],
}

impl Default for ObjOptions {
    fn default() -> Self {
        Self {
            fan_triangulate: false,
            default_color: [0.8, 0.8, 0.8],
        }
    }
}

pub fn load_obj(path: &Path, options: &ObjOptions) -> Result<Mesh> {
    let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&src, path, options)
}

/// Parse OBJ text. `origin` names the source in errors and anchors relative
/// `mtllib` paths.
pub fn parse_obj(src: &str, origin: &Path, options: &ObjOptions) -> Result<Mesh> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut vertex_colors: Vec<Option<[f64; 3]>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut face_lines: Vec<usize> = Vec::new();
    let mut face_material: Vec<Option<[f64; 3]>> = Vec::new();
    let mut materials: HashMap<String, [f64; 3]> = HashMap::new();
    let mut current: Option<[f64; 3]> = None;

    for (k, raw) in src.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = body.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let rest: Vec<&str> = tokens.collect();
        match tag {
            "v" => {
                let nums = parse_floats(&rest).map_err(|m| err(line, m))?;
                match nums.len() {
                    3 | 4 => vertex_colors.push(None),
                    6 => vertex_colors.push(Some([nums[3], nums[4], nums[5]])),
                    n => return Err(err(line, format!("vertex needs 3 or 6 numbers, got {n}"))),
                }
                vertices.push(Vec3::new(nums[0], nums[1], nums[2]));
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(err(line, format!("face needs at least 3 vertices, got {}", rest.len())));
                }
                if rest.len() > 3 && !options.fan_triangulate {
                    return Err(err(
                        line,
                        format!("face has {} vertices; only triangles are accepted without fan triangulation", rest.len()),
                    ));
                }
                let idx = rest
                    .iter()
                    .map(|t| face_index(t, vertices.len()))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|m| err(line, m))?;
                for i in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[i], idx[i + 1]]);
                    face_lines.push(line);
                    face_material.push(current);
                }
            }
            "mtllib" => {
                for name in &rest {
                    let path = origin.parent().unwrap_or(Path::new("")).join(name);
                    materials.extend(load_mtl(&path)?);
                }
            }
            "usemtl" => {
                let name = rest.first().ok_or_else(|| err(line, "usemtl needs a name".into()))?;
                let color = materials
                    .get(*name)
                    .ok_or_else(|| err(line, format!("unknown material '{name}'")))?;
                current = Some(*color);
            }
            "vt" | "vn" | "vp" | "o" | "g" | "s" | "l" | "p" => {}
            other => return Err(err(line, format!("unsupported record '{other}'"))),
        }
    }

    let colors: Vec<[f64; 3]> = faces
        .iter()
        .zip(&face_material)
        .map(|(f, mat)| {
            if let Some(c) = mat {
                return *c;
            }
            let vc: Option<Vec<[f64; 3]>> = f.iter().map(|&v| vertex_colors[v]).collect();
            match vc {
                Some(vc) => core::array::from_fn(|c| vc.iter().map(|x| x[c]).sum::<f64>() / 3.0),
                None => options.default_color,
            }
        })
        .collect();
    Mesh::new(vertices, faces, colors).map_err(|e| match e {
        pertrender_core::Error::RepeatedFaceIndex { face }
        | pertrender_core::Error::ColorOutOfRange { face } => err(face_lines[face], e.to_string()),
        e => e.into(),
    })
}

fn parse_floats(tokens: &[&str]) -> std::result::Result<Vec<f64>, String> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("invalid number '{t}'"))
        })
        .collect()
}

/// Zero-based vertex index of a `v`, `v/vt`, `v//vn` or `v/vt/vn` token.
fn face_index(token: &str, count: usize) -> std::result::Result<usize, String> {
    let head = token.split('/').next().unwrap_or("");
    let i: i64 = head.parse().map_err(|_| format!("invalid face index '{token}'"))?;
    let resolved = match i {
        0 => None,
        i if i > 0 => Some(i as usize - 1),
        i => count.checked_sub(i.unsigned_abs() as usize),
    };
    match resolved {
        Some(r) if r < count => Ok(r),
        _ => Err(format!("face index {i} out of range ({count} vertices defined)")),
    }
}

fn load_mtl(path: &Path) -> Result<HashMap<String, [f64; 3]>> {
    let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        message,
    };
    let mut out = HashMap::new();
    let mut name: Option<String> = None;
    for (k, raw) in src.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = body.split_whitespace();
        match tokens.next() {
            Some("newmtl") => {
                let n = tokens.next().ok_or_else(|| err(k + 1, "newmtl needs a name".into()))?;
                name = Some(n.to_string());
            }
            Some("Kd") => {
                let rest: Vec<&str> = tokens.collect();
                let nums = parse_floats(&rest).map_err(|m| err(k + 1, m))?;
                let (Some(n), [r, g, b]) = (&name, nums.as_slice()) else {
                    return Err(err(k + 1, "Kd needs a preceding newmtl and 3 numbers".into()));
                };
                out.insert(n.clone(), [*r, *g, *b]);
            }
            _ => {}
        }
    }
    Ok(out)
}

/// OBJ text for the mesh geometry. Colors are not written.
pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        // `{}` prints the shortest representation that parses back exactly.
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn save_obj(path: &Path, mesh: &Mesh) -> Result<()> {
    fs::write(path, write_obj(mesh)).map_err(|e| Error::io(path, e))
}
