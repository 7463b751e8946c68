//! Triangle meshes with per-corner UVs and per-vertex tangent frames.
//!
//! Meshes are normalized so the bounding-box diagonal is 1 and centered at
//! the origin before any optimization; all distances elsewhere in the crate
//! assume that scale.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{vec3, Vec3};

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub positions: Vec<Vec3>,
    /// Position indices, one triple per triangle.
    pub triangles: Vec<[u32; 3]>,
    /// Per-corner UVs, parallel to `triangles`.
    pub corner_uvs: Vec<[[f64; 2]; 3]>,
    pub normals: Vec<Vec3>,
    pub tangents: Vec<Vec3>,
    pub bitangents: Vec<Vec3>,
}

impl TriMesh {
    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        for p in &self.positions {
            lo = lo.min_elem(*p);
            hi = hi.max_elem(*p);
        }
        (lo, hi)
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = [
                    self.positions[t[0] as usize],
                    self.positions[t[1] as usize],
                    self.positions[t[2] as usize],
                ];
                0.5 * (b - a).cross(c - a).length()
            })
            .sum()
    }

    /// Center on the origin and scale so the bounding-box diagonal is 1.
    /// Idempotent up to rounding.
    pub fn normalize_unit_scale(&mut self) {
        let (lo, hi) = self.bbox();
        let center = (lo + hi) * 0.5;
        let diag = (hi - lo).length();
        let scale = if diag > 0.0 { 1.0 / diag } else { 1.0 };
        for p in &mut self.positions {
            *p = (*p - center) * scale;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.positions.len() as u32;
        for (ti, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= nv) {
                return Err(Error::data(format!("triangle {ti} references a missing vertex")));
            }
        }
        for uvs in &self.corner_uvs {
            for uv in uvs {
                if !(-1e-9..=1.0 + 1e-9).contains(&uv[0]) || !(-1e-9..=1.0 + 1e-9).contains(&uv[1]) {
                    return Err(Error::data(format!("corner uv ({}, {}) outside [0,1]", uv[0], uv[1])));
                }
            }
        }
        for set in [&self.normals, &self.tangents, &self.bitangents] {
            if set.len() != self.positions.len() {
                return Err(Error::data("per-vertex attribute count mismatch"));
            }
            for v in set {
                if (v.length() - 1.0).abs() > 1e-6 {
                    return Err(Error::data("non-unit vertex frame vector"));
                }
            }
        }
        Ok(())
    }
}

/// Area-weighted face-normal average, used when the source provides none.
pub(crate) fn vertex_normals_from_faces(positions: &[Vec3], triangles: &[[u32; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::ZERO; positions.len()];
    for tri in triangles {
        let [a, b, c] = [
            positions[tri[0] as usize],
            positions[tri[1] as usize],
            positions[tri[2] as usize],
        ];
        let fnorm = (b - a).cross(c - a); // magnitude = 2 * area
        for &i in tri {
            acc[i as usize] += fnorm;
        }
    }
    acc.iter()
        .map(|n| {
            if n.length() > 1e-20 {
                n.normalized()
            } else {
                vec3(0.0, 0.0, 1.0)
            }
        })
        .collect()
}

/// Per-vertex tangent frames from the UV derivatives of incident faces,
/// area-weight averaged, then Gram-Schmidt orthogonalized against the
/// vertex normal. The bitangent is rebuilt as `n x t` with the handedness
/// of the accumulated UV frame. Faces with degenerate UVs contribute
/// nothing; vertices left without any contribution fall back to an
/// arbitrary unit vector orthogonal to n. Returns the fallback count.
pub fn compute_tangent_frames(mesh: &mut TriMesh) -> usize {
    let n_verts = mesh.positions.len();
    let mut t_acc = vec![Vec3::ZERO; n_verts];
    let mut b_acc = vec![Vec3::ZERO; n_verts];

    for (tri, uvs) in mesh.triangles.iter().zip(mesh.corner_uvs.iter()) {
        let [p0, p1, p2] = [
            mesh.positions[tri[0] as usize],
            mesh.positions[tri[1] as usize],
            mesh.positions[tri[2] as usize],
        ];
        let e1 = p1 - p0;
        let e2 = p2 - p0;
        let du1 = uvs[1][0] - uvs[0][0];
        let dv1 = uvs[1][1] - uvs[0][1];
        let du2 = uvs[2][0] - uvs[0][0];
        let dv2 = uvs[2][1] - uvs[0][1];
        let det = du1 * dv2 - du2 * dv1;
        if det.abs() < 1e-14 {
            continue;
        }
        let inv = 1.0 / det;
        let t = (e1 * dv2 - e2 * dv1) * inv;
        let b = (e2 * du1 - e1 * du2) * inv;
        if t.length() < 1e-20 || b.length() < 1e-20 {
            continue;
        }
        let area = 0.5 * e1.cross(e2).length();
        for &i in tri {
            t_acc[i as usize] += t.normalized() * area;
            b_acc[i as usize] += b.normalized() * area;
        }
    }

    let mut tangents = Vec::with_capacity(n_verts);
    let mut bitangents = Vec::with_capacity(n_verts);
    let mut fallbacks = 0;
    for i in 0..n_verts {
        let n = mesh.normals[i];
        let t_proj = t_acc[i] - n * t_acc[i].dot(n);
        let t = if t_proj.length() > 1e-12 {
            t_proj.normalized()
        } else {
            fallbacks += 1;
            n.any_orthogonal()
        };
        let b_ref = n.cross(t);
        let b = if b_acc[i].dot(b_ref) < 0.0 { -b_ref } else { b_ref };
        tangents.push(t);
        bitangents.push(b);
    }
    mesh.tangents = tangents;
    mesh.bitangents = bitangents;
    fallbacks
}

/// Load a Wavefront OBJ (v / vt / vn / triangular f). UVs are required,
/// normals optional. The result is unit-scaled with tangent frames built.
pub fn load_obj(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let mut positions: Vec<Vec3> = Vec::new();
    let mut uvs: Vec<[f64; 2]> = Vec::new();
    let mut src_normals: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut corner_uvs: Vec<[[f64; 2]; 3]> = Vec::new();
    let mut corner_normals: Vec<[Option<u32>; 3]> = Vec::new();

    let parse_f64 = |tok: &str, line_no: usize| -> Result<f64> {
        tok.parse::<f64>()
            .map_err(|_| Error::parse(path, format!("line {line_no}: bad number {tok:?}")))
    };

    for (line_no, raw_line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let keyword = toks.next().unwrap();
        let rest: Vec<&str> = toks.collect();
        match keyword {
            "v" => {
                if rest.len() < 3 {
                    return Err(Error::parse(path, format!("line {line_no}: short v record")));
                }
                positions.push(vec3(
                    parse_f64(rest[0], line_no)?,
                    parse_f64(rest[1], line_no)?,
                    parse_f64(rest[2], line_no)?,
                ));
            }
            "vt" => {
                if rest.len() < 2 {
                    return Err(Error::parse(path, format!("line {line_no}: short vt record")));
                }
                uvs.push([parse_f64(rest[0], line_no)?, parse_f64(rest[1], line_no)?]);
            }
            "vn" => {
                if rest.len() < 3 {
                    return Err(Error::parse(path, format!("line {line_no}: short vn record")));
                }
                src_normals.push(vec3(
                    parse_f64(rest[0], line_no)?,
                    parse_f64(rest[1], line_no)?,
                    parse_f64(rest[2], line_no)?,
                ));
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(Error::parse(
                        path,
                        format!("line {line_no}: face with {} corners (triangles only)", rest.len()),
                    ));
                }
                let mut tri = [0u32; 3];
                let mut tri_uv = [[0.0f64; 2]; 3];
                let mut tri_n: [Option<u32>; 3] = [None; 3];
                for (k, corner) in rest.iter().enumerate() {
                    let fields: Vec<&str> = corner.split('/').collect();
                    let v_idx: usize = fields[0].parse().map_err(|_| {
                        Error::parse(path, format!("line {line_no}: bad vertex index {corner:?}"))
                    })?;
                    if v_idx == 0 || v_idx > positions.len() {
                        return Err(Error::parse(
                            path,
                            format!("line {line_no}: vertex index {v_idx} out of range"),
                        ));
                    }
                    let vt_idx: usize = match fields.get(1) {
                        Some(s) if !s.is_empty() => s.parse().map_err(|_| {
                            Error::parse(path, format!("line {line_no}: bad uv index {corner:?}"))
                        })?,
                        _ => {
                            return Err(Error::parse(
                                path,
                                format!("line {line_no}: face corner without UV (vt required)"),
                            ))
                        }
                    };
                    if vt_idx == 0 || vt_idx > uvs.len() {
                        return Err(Error::parse(
                            path,
                            format!("line {line_no}: uv index {vt_idx} out of range"),
                        ));
                    }
                    if let Some(s) = fields.get(2) {
                        if !s.is_empty() {
                            let vn_idx: usize = s.parse().map_err(|_| {
                                Error::parse(path, format!("line {line_no}: bad normal index {corner:?}"))
                            })?;
                            if vn_idx == 0 || vn_idx > src_normals.len() {
                                return Err(Error::parse(
                                    path,
                                    format!("line {line_no}: normal index {vn_idx} out of range"),
                                ));
                            }
                            tri_n[k] = Some(vn_idx as u32 - 1);
                        }
                    }
                    tri[k] = v_idx as u32 - 1;
                    tri_uv[k] = uvs[vt_idx - 1];
                }
                triangles.push(tri);
                corner_uvs.push(tri_uv);
                corner_normals.push(tri_n);
            }
            _ => {} // o, g, s, usemtl, mtllib: ignored
        }
    }

    if positions.is_empty() || triangles.is_empty() {
        return Err(Error::parse(path, "no geometry found"));
    }

    // Per-vertex normals: accumulate provided corner normals when every
    // corner has one, otherwise area-weighted face normals.
    let all_have_normals = corner_normals
        .iter()
        .all(|c| c.iter().all(|n| n.is_some()));
    let normals = if all_have_normals && !src_normals.is_empty() {
        let mut acc = vec![Vec3::ZERO; positions.len()];
        for (tri, cn) in triangles.iter().zip(corner_normals.iter()) {
            for (k, &i) in tri.iter().enumerate() {
                acc[i as usize] += src_normals[cn[k].unwrap() as usize];
            }
        }
        acc.iter()
            .map(|n| if n.length() > 1e-20 { n.normalized() } else { vec3(0.0, 0.0, 1.0) })
            .collect()
    } else {
        vertex_normals_from_faces(&positions, &triangles)
    };

    let mut mesh = TriMesh {
        positions,
        triangles,
        corner_uvs,
        normals,
        tangents: Vec::new(),
        bitangents: Vec::new(),
    };
    mesh.normalize_unit_scale();
    let fallbacks = compute_tangent_frames(&mut mesh);
    if fallbacks > 0 {
        eprintln!(
            "load_obj: {} of {} vertices use fallback tangents (degenerate UVs)",
            fallbacks,
            mesh.vertex_count()
        );
    }
    mesh.validate()?;
    Ok(mesh)
}

/// Write a mesh back out as OBJ (v/vt/vn, faces indexed v/vt/vn). Corner
/// UVs are deduplicated by exact value.
pub fn save_obj(path: &Path, mesh: &TriMesh) -> Result<()> {
    let mut uv_index: std::collections::HashMap<(u64, u64), usize> = std::collections::HashMap::new();
    let mut uv_list: Vec<[f64; 2]> = Vec::new();
    let mut face_uvs: Vec<[usize; 3]> = Vec::with_capacity(mesh.triangles.len());
    for uvs in &mesh.corner_uvs {
        let mut f = [0usize; 3];
        for (k, uv) in uvs.iter().enumerate() {
            let key = (uv[0].to_bits(), uv[1].to_bits());
            let idx = *uv_index.entry(key).or_insert_with(|| {
                uv_list.push(*uv);
                uv_list.len() - 1
            });
            f[k] = idx;
        }
        face_uvs.push(f);
    }

    let mut out = String::new();
    for p in &mesh.positions {
        let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
    }
    for uv in &uv_list {
        let _ = writeln!(out, "vt {} {}", uv[0], uv[1]);
    }
    for n in &mesh.normals {
        let _ = writeln!(out, "vn {} {} {}", n.x, n.y, n.z);
    }
    for (tri, f_uv) in mesh.triangles.iter().zip(face_uvs.iter()) {
        let _ = writeln!(
            out,
            "f {}/{}/{} {}/{}/{} {}/{}/{}",
            tri[0] + 1,
            f_uv[0] + 1,
            tri[0] + 1,
            tri[1] + 1,
            f_uv[1] + 1,
            tri[1] + 1,
            tri[2] + 1,
            f_uv[2] + 1,
            tri[2] + 1,
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
