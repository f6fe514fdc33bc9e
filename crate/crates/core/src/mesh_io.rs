//! Mesh file formats: ASCII OFF and legacy ASCII VTK polydata readers, and a
//! legacy VTK writer with point-data scalars and vectors.

use crate::error::{Error, Result};
use crate::mesh::TriangleSurfaceMesh;
use crate::Vec3;
use std::fmt::Write as _;
use std::path::Path;

/// Supported mesh file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Off,
    Vtk,
}

impl MeshFormat {
    /// Guess from the file extension.
    pub fn from_path(path: &Path) -> Option<MeshFormat> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("off") | Some("OFF") => Some(MeshFormat::Off),
            Some("vtk") | Some("VTK") => Some(MeshFormat::Vtk),
            _ => None,
        }
    }
}

/// Load a mesh file and build all frames.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleSurfaceMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (vertices, triangles) = match format {
        MeshFormat::Off => parse_off(path, &text)?,
        MeshFormat::Vtk => parse_vtk(path, &text)?,
    };
    TriangleSurfaceMesh::build(vertices, triangles)
}

/// Scalar or vector attributes attached to mesh points for VTK export.
#[derive(Debug, Default, Clone)]
pub struct PointData {
    pub scalars: Vec<(String, Vec<f64>)>,
    pub vectors: Vec<(String, Vec<Vec3>)>,
}

impl PointData {
    pub fn with_scalar(mut self, name: &str, values: Vec<f64>) -> Self {
        self.scalars.push((name.to_string(), values));
        self
    }
    pub fn with_vector(mut self, name: &str, values: Vec<Vec3>) -> Self {
        self.vectors.push((name.to_string(), values));
        self
    }
}

/// Write a legacy ASCII VTK polydata file with optional point data.
pub fn write_vtk(path: &Path, mesh: &TriangleSurfaceMesh, data: &PointData) -> Result<()> {
    let n = mesh.vertex_count();
    for (name, values) in &data.scalars {
        if values.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "scalar field {name} has {} values for {n} points",
                values.len()
            )));
        }
    }
    for (name, values) in &data.vectors {
        if values.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "vector field {name} has {} values for {n} points",
                values.len()
            )));
        }
    }

    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("fiberflow surface export\n");
    out.push_str("ASCII\nDATASET POLYDATA\n");
    let _ = writeln!(out, "POINTS {n} double");
    for v in &mesh.vertices {
        let _ = writeln!(out, "{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z);
    }
    let m = mesh.triangle_count();
    let _ = writeln!(out, "POLYGONS {m} {}", 4 * m);
    for tri in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", tri[0], tri[1], tri[2]);
    }
    if !data.scalars.is_empty() || !data.vectors.is_empty() {
        let _ = writeln!(out, "POINT_DATA {n}");
        for (name, values) in &data.scalars {
            let _ = writeln!(out, "SCALARS {name} double 1");
            out.push_str("LOOKUP_TABLE default\n");
            for v in values {
                let _ = writeln!(out, "{v:.17e}");
            }
        }
        for (name, values) in &data.vectors {
            let _ = writeln!(out, "VECTORS {name} double");
            for v in values {
                let _ = writeln!(out, "{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z);
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_off(path: &Path, text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    // token stream with line tracking; comments start with '#'
    let mut tokens: Vec<(usize, &str)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            tokens.push((ln + 1, tok));
        }
    }
    let mut pos = 0usize;
    let mut next = |what: &str| -> Result<(usize, &str)> {
        let t = tokens
            .get(pos)
            .copied()
            .ok_or_else(|| parse_err(path, tokens.last().map_or(0, |t| t.0), format!("unexpected end of file, expected {what}")))?;
        pos += 1;
        Ok(t)
    };

    let (ln, magic) = next("OFF header")?;
    if magic != "OFF" {
        return Err(parse_err(path, ln, format!("expected OFF header, found '{magic}'")));
    }
    let (ln, nv) = next("vertex count")?;
    let nv: usize = nv.parse().map_err(|_| parse_err(path, ln, "bad vertex count"))?;
    let (ln, nf) = next("face count")?;
    let nf: usize = nf.parse().map_err(|_| parse_err(path, ln, "bad face count"))?;
    let _ = next("edge count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut c = [0.0f64; 3];
        for slot in &mut c {
            let (ln, tok) = next("vertex coordinate")?;
            *slot = tok
                .parse()
                .map_err(|_| parse_err(path, ln, format!("bad coordinate '{tok}'")))?;
        }
        vertices.push(Vec3::new(c[0], c[1], c[2]));
    }
    let mut triangles = Vec::with_capacity(nf);
    for f in 0..nf {
        let (ln, cnt) = next("face vertex count")?;
        let cnt: usize = cnt.parse().map_err(|_| parse_err(path, ln, "bad face size"))?;
        if cnt != 3 {
            return Err(parse_err(path, ln, format!("face {f} has {cnt} vertices, only triangles supported")));
        }
        let mut tri = [0usize; 3];
        for slot in &mut tri {
            let (ln, tok) = next("face index")?;
            let idx: usize = tok
                .parse()
                .map_err(|_| parse_err(path, ln, format!("bad index '{tok}'")))?;
            if idx >= nv {
                return Err(parse_err(path, ln, format!("triangle index {idx} out of range (mesh has {nv} vertices)")));
            }
            *slot = idx;
        }
        triangles.push(tri);
    }
    Ok((vertices, triangles))
}

fn parse_vtk(path: &Path, text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut tokens: Vec<(usize, &str)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        // line 2 is a free-form title; keep it out of the token stream
        if ln == 1 {
            continue;
        }
        for tok in line.split_whitespace() {
            tokens.push((ln + 1, tok));
        }
    }
    let find_kw = |kw: &str| tokens.iter().position(|(_, t)| *t == kw);

    if find_kw("ASCII").is_none() {
        return Err(parse_err(path, 3, "only ASCII legacy VTK is supported"));
    }
    let Some(pts_at) = find_kw("POINTS") else {
        return Err(parse_err(path, 1, "missing POINTS section"));
    };
    let (ln, nv_tok) = tokens[pts_at + 1];
    let nv: usize = nv_tok.parse().map_err(|_| parse_err(path, ln, "bad point count"))?;
    let mut vertices = Vec::with_capacity(nv);
    let mut pos = pts_at + 3; // skip count and dtype
    for _ in 0..nv {
        let mut c = [0.0f64; 3];
        for slot in &mut c {
            let (ln, tok) = *tokens
                .get(pos)
                .ok_or_else(|| parse_err(path, 0, "unexpected end of POINTS"))?;
            *slot = tok
                .parse()
                .map_err(|_| parse_err(path, ln, format!("bad coordinate '{tok}'")))?;
            pos += 1;
        }
        vertices.push(Vec3::new(c[0], c[1], c[2]));
    }

    let Some(poly_at) = find_kw("POLYGONS") else {
        return Err(parse_err(path, 1, "missing POLYGONS section"));
    };
    let (ln, nf_tok) = tokens[poly_at + 1];
    let nf: usize = nf_tok.parse().map_err(|_| parse_err(path, ln, "bad polygon count"))?;
    let mut pos = poly_at + 3; // skip count and total size
    let mut triangles = Vec::with_capacity(nf);
    for f in 0..nf {
        let (ln, cnt_tok) = *tokens
            .get(pos)
            .ok_or_else(|| parse_err(path, 0, "unexpected end of POLYGONS"))?;
        pos += 1;
        let cnt: usize = cnt_tok.parse().map_err(|_| parse_err(path, ln, "bad polygon size"))?;
        if cnt != 3 {
            return Err(parse_err(path, ln, format!("polygon {f} has {cnt} vertices, only triangles supported")));
        }
        let mut tri = [0usize; 3];
        for slot in &mut tri {
            let (ln, tok) = *tokens
                .get(pos)
                .ok_or_else(|| parse_err(path, 0, "unexpected end of POLYGONS"))?;
            pos += 1;
            let idx: usize = tok
                .parse()
                .map_err(|_| parse_err(path, ln, format!("bad index '{tok}'")))?;
            if idx >= nv {
                return Err(parse_err(path, ln, format!("triangle index {idx} out of range (mesh has {nv} points)")));
            }
            *slot = idx;
        }
        triangles.push(tri);
    }
    Ok((vertices, triangles))
}
