//! Point cloud and mesh file formats.
//!
//! * `xyz`: one point per line, three decimal floats separated by single
//!   spaces, `\n` terminated.
//! * `ply`: binary little-endian, `float x/y/z` plus optional `uchar
//!   red/green/blue`.
//! * `.outliers`: sibling file of the cloud holding one `0`/`1` per line.
//! * `obj`: the `v`/`f` subset with triangular (or fan-triangulated) faces.
//!
//! Coordinates are written as 32-bit floats using the shortest representation
//! that round-trips, so save followed by load is exact at `f32` precision.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::corruption::mesh::Mesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudFormat {
    Xyz,
    Ply,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "xyz" => Some(CloudFormat::Xyz),
            "ply" => Some(CloudFormat::Ply),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::Xyz => "xyz",
            CloudFormat::Ply => "ply",
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" | "xyz-ascii" => Ok(CloudFormat::Xyz),
            "ply" | "ply-binary-little-endian" => Ok(CloudFormat::Ply),
            other => Err(Error::Argument(format!("unknown cloud format `{other}`"))),
        }
    }
}

/// Path of the label file that accompanies `cloud_path`.
pub fn labels_path(cloud_path: &Path) -> PathBuf {
    cloud_path.with_extension("outliers")
}

/// Loads a cloud, picking up labels from the sibling `.outliers` file if it exists.
pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let points = match format {
        CloudFormat::Xyz => read_xyz(path)?,
        CloudFormat::Ply => read_ply(path)?.0,
    };
    let lp = labels_path(path);
    let labels = if lp.exists() {
        let labels = read_labels(&lp)?;
        if labels.len() != points.len() {
            return Err(Error::Structural(format!(
                "{}: {} labels for {} points",
                lp.display(),
                labels.len(),
                points.len()
            )));
        }
        Some(labels)
    } else {
        None
    };
    PointCloud::with_labels(points, labels)
}

/// Loads a cloud choosing the format from the file extension.
pub fn load_cloud_auto(path: &Path) -> Result<PointCloud> {
    let format = CloudFormat::from_path(path)
        .ok_or_else(|| Error::Argument(format!("cannot infer format of {}", path.display())))?;
    load_cloud(path, format)
}

/// Saves a cloud; labels (if any) go to the sibling `.outliers` file.
pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    match format {
        CloudFormat::Xyz => write_xyz(cloud, path)?,
        CloudFormat::Ply => write_ply(cloud, None, path)?,
    }
    if let Some(labels) = cloud.labels() {
        write_labels(labels, &labels_path(path))?;
    }
    Ok(())
}

fn read_xyz(path: &Path) -> Result<Vec<Point3<f64>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let mut coords = [0.0f64; 3];
        let mut tokens = line.split_whitespace();
        for c in coords.iter_mut() {
            let tok = tokens
                .next()
                .ok_or_else(|| parse_err("expected three coordinates".into()))?;
            *c = tok
                .parse::<f64>()
                .map_err(|_| parse_err(format!("`{tok}` is not a number")))?;
            if !c.is_finite() {
                return Err(parse_err(format!("`{tok}` is not finite")));
            }
        }
        if tokens.next().is_some() {
            return Err(parse_err("more than three values on line".into()));
        }
        points.push(Point3::from(coords));
    }
    Ok(points)
}

fn write_xyz(cloud: &PointCloud, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in cloud.points() {
        writeln!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        match line.trim() {
            "" => continue,
            "0" => labels.push(false),
            "1" => labels.push(true),
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: format!("expected 0 or 1, found `{other}`"),
                })
            }
        }
    }
    Ok(labels)
}

pub fn write_labels(labels: &[bool], path: &Path) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 2);
    for &l in labels {
        s.push(if l { '1' } else { '0' });
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes a binary little-endian PLY, optionally with per-vertex colors.
pub fn write_ply(cloud: &PointCloud, colors: Option<&[[u8; 3]]>, path: &Path) -> Result<()> {
    if let Some(c) = colors {
        if c.len() != cloud.len() {
            return Err(Error::Structural(format!(
                "{} colors for {} points",
                c.len(),
                cloud.len()
            )));
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(io)?;
    for (i, p) in cloud.points().iter().enumerate() {
        for c in [p.x, p.y, p.z] {
            w.write_all(&(c as f32).to_le_bytes()).map_err(io)?;
        }
        if let Some(c) = colors {
            w.write_all(&c[i]).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Copy)]
enum PlyType {
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "uchar" | "uint8" => PlyType::U8,
            "char" | "int8" => PlyType::I8,
            "ushort" | "uint16" => PlyType::U16,
            "short" | "int16" => PlyType::I16,
            "uint" | "uint32" => PlyType::U32,
            "int" | "int32" => PlyType::I32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::U8 | PlyType::I8 => 1,
            PlyType::U16 | PlyType::I16 => 2,
            PlyType::U32 | PlyType::I32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            PlyType::U8 => b[0] as f64,
            PlyType::I8 => b[0] as i8 as f64,
            PlyType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

/// Reads a binary little-endian PLY vertex list. Returns points and colors if present.
pub fn read_ply(path: &Path) -> Result<(Vec<Point3<f64>>, Option<Vec<[u8; 3]>>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let parse_err = |line: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    };
    let mut line_no = 0;
    let mut count = None;
    let mut props: Vec<(String, PlyType)> = Vec::new();
    let mut in_vertex = false;
    loop {
        let mut line = String::new();
        let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        line_no += 1;
        if n == 0 {
            return Err(parse_err(line_no, "unexpected end of header"));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["ply"] if line_no == 1 => {}
            _ if line_no == 1 => return Err(parse_err(1, "missing `ply` magic")),
            ["format", "binary_little_endian", _] => {}
            ["format", ..] => {
                return Err(parse_err(
                    line_no,
                    "only binary_little_endian PLY is supported",
                ))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(
                    n.parse::<usize>()
                        .map_err(|_| parse_err(line_no, "bad vertex count"))?,
                );
                in_vertex = true;
            }
            ["element", _, n] => {
                if n.parse::<usize>().ok() != Some(0) {
                    return Err(parse_err(line_no, "only vertex elements are supported"));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(parse_err(
                    line_no,
                    "list properties on vertices are not supported",
                ))
            }
            ["property", ty, name] if in_vertex => {
                let ty = PlyType::parse(ty)
                    .ok_or_else(|| parse_err(line_no, "unknown property type"))?;
                props.push((name.to_string(), ty));
            }
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(parse_err(line_no, "unrecognized header line")),
        }
    }
    let count = count.ok_or_else(|| parse_err(line_no, "no vertex element"))?;
    let find = |name: &str| props.iter().position(|(n, _)| n == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(line_no, "vertex element lacks x/y/z")),
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let mut offsets = Vec::with_capacity(props.len());
    let mut stride = 0;
    for (_, t) in &props {
        offsets.push(stride);
        stride += t.size();
    }
    let mut data = vec![0u8; stride * count];
    r.read_exact(&mut data)
        .map_err(|_| Error::Structural(format!("{}: truncated vertex data", path.display())))?;
    let mut points = Vec::with_capacity(count);
    let mut colors = rgb.map(|_| Vec::with_capacity(count));
    for v in 0..count {
        let rec = &data[v * stride..(v + 1) * stride];
        let get = |k: usize| props[k].1.read(&rec[offsets[k]..]);
        points.push(Point3::new(get(ix), get(iy), get(iz)));
        if let (Some(cs), Some(idx)) = (colors.as_mut(), rgb) {
            cs.push([get(idx[0]) as u8, get(idx[1]) as u8, get(idx[2]) as u8]);
        }
    }
    Ok((points, colors))
}

/// Reads the `v` / `f` subset of Wavefront OBJ. Polygons are fan-triangulated.
pub fn load_obj(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for x in c.iter_mut() {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| parse_err("vertex needs 3 coordinates".into()))?;
                    *x = tok
                        .parse()
                        .map_err(|_| parse_err(format!("`{tok}` is not a number")))?;
                }
                vertices.push(Point3::from(c));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in tokens {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| parse_err(format!("bad face index `{tok}`")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(parse_err("face index 0 is invalid".into()));
                    };
                    if resolved < 0 {
                        return Err(parse_err(format!("face index `{tok}` out of range")));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(parse_err("face needs at least 3 vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

pub fn save_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z).map_err(io)?;
    }
    for t in mesh.triangles() {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_token_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.xyz");
        let mut s = String::new();
        for i in 0..10 {
            if i == 6 {
                s.push_str("1 abc 3\n");
            } else {
                s.push_str("1 2 3\n");
            }
        }
        fs::write(&p, s).unwrap();
        match load_cloud(&p, CloudFormat::Xyz) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn short_label_file_is_structural_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.xyz");
        fs::write(&p, "0 0 0\n1 0 0\n2 0 0\n").unwrap();
        fs::write(labels_path(&p), "0\n1\n").unwrap();
        assert!(matches!(
            load_cloud(&p, CloudFormat::Xyz),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn ply_colors_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        let c = PointCloud::from_slices(&[[0.0, 1.0, 2.0], [3.5, -1.0, 0.25]]).unwrap();
        write_ply(&c, Some(&[[255, 0, 0], [0, 0, 255]]), &p).unwrap();
        let (pts, colors) = read_ply(&p).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1], Point3::new(3.5, -1.0, 0.25));
        assert_eq!(colors.unwrap(), vec![[255, 0, 0], [0, 0, 255]]);
    }

    #[test]
    fn obj_quads_are_triangulated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.obj");
        fs::write(
            &p,
            "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n",
        )
        .unwrap();
        let m = load_obj(&p).unwrap();
        assert_eq!(m.triangles().len(), 2);
        assert!((m.total_area() - 1.0).abs() < 1e-12);
    }
}
