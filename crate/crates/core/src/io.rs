//! Point-cloud and mesh files (XYZ, ASCII PLY) and sequence manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FrameSequence, Point3, PointCloud, RigidTransform, Vec3};
use crate::metrics::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloudFormat {
    Xyz,
    PlyAscii,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(e) if e == "xyz" || e == "txt" => Ok(CloudFormat::Xyz),
            Some(e) if e == "ply" => Ok(CloudFormat::PlyAscii),
            _ => Err(Error::InvalidArgument(format!(
                "cannot infer cloud format from {}",
                path.display()
            ))),
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn parse_xyz(path: &Path, line_no: usize, tokens: &[&str]) -> Result<Point3> {
    if tokens.len() < 3 {
        return Err(parse_err(
            path,
            line_no,
            format!("expected 3 coordinates, found {}", tokens.len()),
        ));
    }
    let mut c = [0.0; 3];
    for (slot, tok) in c.iter_mut().zip(tokens) {
        *slot = tok
            .parse::<f64>()
            .map_err(|_| parse_err(path, line_no, format!("invalid number {tok:?}")))?;
        if !slot.is_finite() {
            return Err(parse_err(path, line_no, format!("non-finite coordinate {tok:?}")));
        }
    }
    Ok(Point3::new(c[0], c[1], c[2]))
}

pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read(path)?;
    let cloud = match format {
        CloudFormat::Xyz => {
            let text = String::from_utf8_lossy(&text);
            let mut points = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let body = line.split('#').next().unwrap_or("").trim();
                if body.is_empty() {
                    continue;
                }
                let tokens: Vec<&str> = body.split_whitespace().collect();
                points.push(parse_xyz(path, i + 1, &tokens)?);
            }
            PointCloud::new(points)?
        }
        CloudFormat::PlyAscii => read_ply(path, &text)?.0,
    };
    Ok(cloud.with_source(path.display().to_string()))
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

/// Parses an ASCII PLY; returns vertices and triangle faces (if any).
fn read_ply(path: &Path, bytes: &[u8]) -> Result<(PointCloud, Vec<[usize; 3]>)> {
    // header is ASCII even in binary files; stop at end_header
    let text = String::from_utf8_lossy(bytes);
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let (i, line) = lines.next().ok_or_else(|| parse_err(path, 0, "unterminated header"))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            Some("format") => {
                if tokens.get(1) != Some(&"ascii") {
                    return Err(Error::UnsupportedEncoding(tokens.get(1).unwrap_or(&"").to_string()));
                }
                saw_format = true;
            }
            Some("element") => {
                if tokens.len() != 3 {
                    return Err(parse_err(path, i + 1, "malformed element line"));
                }
                let count = tokens[2]
                    .parse()
                    .map_err(|_| parse_err(path, i + 1, "invalid element count"))?;
                elements.push(PlyElement {
                    name: tokens[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, i + 1, "property before element"))?;
                let name = tokens.last().copied().unwrap_or_default().to_string();
                if tokens.get(1) == Some(&"list") {
                    el.properties.push(format!("list:{name}"));
                } else {
                    el.properties.push(name);
                }
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(parse_err(path, i + 1, format!("unknown header keyword {other:?}"))),
        }
    }
    if !saw_format {
        return Err(parse_err(path, 0, "missing format line"));
    }

    let mut points = Vec::new();
    let mut faces = Vec::new();
    let mut found_vertex = false;
    for el in &elements {
        for _ in 0..el.count {
            let (i, line) = lines
                .next()
                .ok_or_else(|| parse_err(path, 0, format!("unexpected end of {} data", el.name)))?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if el.name == "vertex" {
                let pos = |n: &str| {
                    el.properties
                        .iter()
                        .position(|p| p == n)
                        .ok_or_else(|| parse_err(path, i + 1, format!("vertex has no {n} property")))
                };
                let (ix, iy, iz) = (pos("x")?, pos("y")?, pos("z")?);
                if tokens.len() < el.properties.len() {
                    return Err(parse_err(path, i + 1, "too few vertex values"));
                }
                let p = parse_xyz(path, i + 1, &[tokens[ix], tokens[iy], tokens[iz]])?;
                points.push(p);
            } else if el.name == "face" {
                let n: usize = tokens
                    .first()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(path, i + 1, "invalid face"))?;
                let idx: Vec<usize> = tokens
                    .iter()
                    .skip(1)
                    .take(n)
                    .map(|t| t.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| parse_err(path, i + 1, "invalid face index"))?;
                if idx.len() != n || n < 3 {
                    return Err(parse_err(path, i + 1, "invalid face"));
                }
                // fan triangulation
                for k in 1..n - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
        }
        if el.name == "vertex" {
            found_vertex = true;
        }
    }
    if !found_vertex {
        return Err(parse_err(path, 0, "no vertex element"));
    }
    Ok((PointCloud::new(points)?, faces))
}

fn fmt_coord(out: &mut String, v: f64) {
    // -0.000000 and 0.000000 must print identically
    let v = if v == 0.0 { 0.0 } else { v };
    let _ = write!(out, "{v:.6}");
}

fn ply_header(out: &mut String, vertices: usize, quality: bool, faces: Option<usize>) {
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {vertices}");
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    if quality {
        out.push_str("property float quality\n");
    }
    if let Some(f) = faces {
        let _ = writeln!(out, "element face {f}");
        out.push_str("property list uchar int vertex_indices\n");
    }
    out.push_str("end_header\n");
}

/// Serializes a cloud; an optional per-point scalar is written as a PLY
/// `quality` property (ignored for XYZ).
pub fn format_cloud(cloud: &PointCloud, format: CloudFormat, scalar: Option<&[f64]>) -> Result<String> {
    cloud.ensure_non_empty()?;
    if let Some(s) = scalar {
        if s.len() != cloud.len() {
            return Err(Error::InvalidArgument(format!(
                "scalar channel has {} values for {} points",
                s.len(),
                cloud.len()
            )));
        }
    }
    let mut out = String::with_capacity(cloud.len() * 40);
    if format == CloudFormat::PlyAscii {
        ply_header(&mut out, cloud.len(), scalar.is_some(), None);
    }
    for (i, p) in cloud.points.iter().enumerate() {
        fmt_coord(&mut out, p.x);
        out.push(' ');
        fmt_coord(&mut out, p.y);
        out.push(' ');
        fmt_coord(&mut out, p.z);
        if let (CloudFormat::PlyAscii, Some(s)) = (format, scalar) {
            out.push(' ');
            fmt_coord(&mut out, s[i]);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    write_cloud_with_scalar(cloud, path, format, None)
}

pub fn write_cloud_with_scalar(
    cloud: &PointCloud,
    path: &Path,
    format: CloudFormat,
    scalar: Option<&[f64]>,
) -> Result<()> {
    let text = format_cloud(cloud, format, scalar)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn write_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    ply_header(&mut out, mesh.vertices.len(), false, Some(mesh.faces.len()));
    for p in &mesh.vertices {
        fmt_coord(&mut out, p.x);
        out.push(' ');
        fmt_coord(&mut out, p.y);
        out.push(' ');
        fmt_coord(&mut out, p.z);
        out.push('\n');
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let bytes = fs::read(path)?;
    let (cloud, faces) = read_ply(path, &bytes)?;
    TriangleMesh::new(cloud.points, faces)
}

/// Serializable rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    /// Row-major rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub pivot: [f64; 3],
}

impl From<&RigidTransform> for TransformRecord {
    fn from(t: &RigidTransform) -> Self {
        let r = &t.rotation;
        Self {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: t.translation.into(),
            pivot: t.pivot.into(),
        }
    }
}

impl TryFrom<&TransformRecord> for RigidTransform {
    type Error = Error;

    fn try_from(r: &TransformRecord) -> Result<Self> {
        let m = crate::geometry::Mat3::from_fn(|i, j| r.rotation[i][j]);
        RigidTransform::new(m, Vec3::from(r.translation), Point3::from(r.pivot))
    }
}

pub const MANIFEST_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub path: String,
    pub format: CloudFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<String>,
}

/// JSON description of a frame sequence on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub version: String,
    pub name: String,
    #[serde(rename = "T")]
    pub frame_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub frames: Vec<FrameEntry>,
}

/// A sequence loaded from a manifest, with optional references.
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub noisy: FrameSequence,
    pub clean: Option<FrameSequence>,
    pub meshes: Option<Vec<TriangleMesh>>,
}

impl SequenceManifest {
    pub fn new(name: impl Into<String>, frames: Vec<FrameEntry>) -> Self {
        Self {
            version: MANIFEST_VERSION.to_string(),
            name: name.into(),
            frame_count: frames.len(),
            notes: None,
            frames,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::config(
                "manifest.version",
                format!("unsupported version {:?}", self.version),
            ));
        }
        if self.frames.is_empty() {
            return Err(Error::config("manifest.frames", "no frames"));
        }
        if self.frame_count != self.frames.len() {
            return Err(Error::config(
                "manifest.T",
                format!("T = {} but {} frame entries", self.frame_count, self.frames.len()),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let manifest: SequenceManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    fn resolve(base: &Path, p: &str) -> PathBuf {
        let pb = PathBuf::from(p);
        if pb.is_absolute() {
            pb
        } else {
            base.join(pb)
        }
    }

    /// Reads every frame; paths are relative to `base` (the manifest's directory).
    pub fn load_frames(&self, base: &Path) -> Result<LoadedSequence> {
        self.validate()?;
        let mut noisy = Vec::new();
        let mut clean = Vec::new();
        let mut meshes = Vec::new();
        for e in &self.frames {
            let p = Self::resolve(base, &e.path);
            let cloud = read_cloud(&p, e.format)?;
            cloud.ensure_non_empty()?;
            noisy.push(cloud);
            if let Some(c) = &e.clean {
                let p = Self::resolve(base, c);
                clean.push(read_cloud(&p, CloudFormat::from_path(&p).unwrap_or(e.format))?);
            }
            if let Some(m) = &e.mesh {
                meshes.push(read_mesh(&Self::resolve(base, m))?);
            }
        }
        let all_or_none = |n: usize| n == 0 || n == self.frames.len();
        if !all_or_none(clean.len()) || !all_or_none(meshes.len()) {
            return Err(Error::config(
                "manifest.frames",
                "clean/mesh references must be given for all frames or none",
            ));
        }
        Ok(LoadedSequence {
            noisy: FrameSequence::new(noisy)?,
            clean: if clean.is_empty() {
                None
            } else {
                Some(FrameSequence::new(clean)?)
            },
            meshes: if meshes.is_empty() { None } else { Some(meshes) },
        })
    }
}

pub fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xyz_two_points_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.xyz");
        fs::write(&p, "# header\n0 0 0\n\n1 2 3 # trailing\n").unwrap();
        let c = read_cloud(&p, CloudFormat::Xyz).unwrap();
        assert_eq!(c.points, vec![Point3::zeros(), Point3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn xyz_malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.xyz");
        fs::write(&p, "0 0 0\n1 2\n").unwrap();
        match read_cloud(&p, CloudFormat::Xyz) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ply_with_normals() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.ply");
        fs::write(
            &p,
            "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float nx\nproperty float x\nproperty float y\nproperty float z\nproperty float ny\nproperty float nz\nend_header\n9 1 2 3 8 7\n9 4 5 6 8 7\n",
        )
        .unwrap();
        let c = read_cloud(&p, CloudFormat::PlyAscii).unwrap();
        assert_eq!(c.points, vec![Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]);
    }

    #[test]
    fn binary_ply_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.ply");
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
        bytes.extend_from_slice(&[0u8, 0, 128, 63, 0, 0, 0, 0, 0, 0, 0, 0]);
        fs::write(&p, bytes).unwrap();
        match read_cloud(&p, CloudFormat::PlyAscii) {
            Err(e @ Error::UnsupportedEncoding(_)) => assert!(e.to_string().starts_with("unsupported encoding")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quality_channel_adds_fourth_property() {
        let c = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]).unwrap();
        let text = format_cloud(&c, CloudFormat::PlyAscii, Some(&[0.5, 0.25])).unwrap();
        assert_eq!(text.matches("property float").count(), 4);
        assert!(text.contains("1.000000 1.000000 1.000000 0.250000\n"));
    }

    #[test]
    fn empty_cloud_not_written() {
        assert!(matches!(
            format_cloud(&PointCloud::default(), CloudFormat::Xyz, None),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn mesh_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ply");
        let mesh = TriangleMesh::new(
            vec![Point3::zeros(), Point3::x(), Point3::y(), Point3::new(1.0, 1.0, 0.0)],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap();
        write_mesh(&mesh, &p).unwrap();
        let back = read_mesh(&p).unwrap();
        assert_eq!(back.faces, mesh.faces);
        assert_eq!(back.vertices, mesh.vertices);
    }

    #[test]
    fn manifest_frame_count_must_match() {
        let mut m = SequenceManifest::new(
            "x",
            vec![FrameEntry {
                path: "a.xyz".into(),
                format: CloudFormat::Xyz,
                clean: None,
                mesh: None,
            }],
        );
        assert!(m.validate().is_ok());
        m.frame_count = 2;
        assert!(m.validate().unwrap_err().is_config_error());
    }
}
