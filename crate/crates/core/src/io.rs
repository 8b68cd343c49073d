//! Oriented point cloud and mesh file formats.
//!
//! ASCII output carries 9 significant digits; binary PLY stores little-endian
//! `float` positions and normals. OBJ faces are 1-indexed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::mesh::{Face, QuadMesh};
use crate::{Error, HermitePointSet, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointFormat {
    XyzAscii,
    PlyAscii,
    PlyBinaryLe,
}

impl PointFormat {
    /// Guesses the format from the file extension and, for `.ply`, the header.
    pub fn detect(path: &Path) -> Result<PointFormat> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        if ext != "ply" {
            return Ok(PointFormat::XyzAscii);
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        for _ in 0..4 {
            line.clear();
            reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            if line.starts_with("format") {
                return Ok(if line.contains("binary_little_endian") {
                    PointFormat::PlyBinaryLe
                } else {
                    PointFormat::PlyAscii
                });
            }
        }
        Err(Error::Parse {
            line: 2,
            message: "missing ply format line".into(),
        })
    }
}

impl PointFormat {
    /// Format for writing: ASCII PLY for `.ply`, XYZ otherwise.
    pub fn for_output(path: &Path) -> PointFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => PointFormat::PlyAscii,
            _ => PointFormat::XyzAscii,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    PlyAscii,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> MeshFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => MeshFormat::PlyAscii,
            _ => MeshFormat::Obj,
        }
    }
}

/// Result of loading an oriented point cloud.
#[derive(Clone, Debug)]
pub struct LoadedPoints {
    pub points: HermitePointSet,
    /// Points dropped because their normal had zero length.
    pub rejected_normals: usize,
}

/// Formats a value with 9 significant digits.
pub fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn load_points(path: &Path, format: PointFormat) -> Result<LoadedPoints> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let (points, normals) = match format {
        PointFormat::XyzAscii => read_xyz(&mut reader, path)?,
        PointFormat::PlyAscii | PointFormat::PlyBinaryLe => read_ply_points(&mut reader, path)?,
    };
    let (points, rejected_normals) = HermitePointSet::new(points, normals)?;
    if rejected_normals > 0 {
        log::warn!(
            "{}: dropped {rejected_normals} points with zero-length normals",
            path.display()
        );
    }
    Ok(LoadedPoints {
        points,
        rejected_normals,
    })
}

type Columns = (Vec<Vec3>, Vec<Vec3>);

fn read_xyz(reader: &mut impl BufRead, path: &Path) -> Result<Columns> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let vals = parse_floats(trimmed, i + 1)?;
        if vals.len() != 6 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 6 values (x y z nx ny nz), found {}", vals.len()),
            });
        }
        points.push(Vec3::new(vals[0], vals[1], vals[2]));
        normals.push(Vec3::new(vals[3], vals[4], vals[5]));
    }
    Ok((points, normals))
}

fn parse_floats(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("invalid number '{tok}'"),
            })
        })
        .collect()
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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
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

    fn read_le(self, r: &mut impl Read) -> std::io::Result<f64> {
        Ok(match self {
            Scalar::I8 => r.read_i8()? as f64,
            Scalar::U8 => r.read_u8()? as f64,
            Scalar::I16 => r.read_i16::<LittleEndian>()? as f64,
            Scalar::U16 => r.read_u16::<LittleEndian>()? as f64,
            Scalar::I32 => r.read_i32::<LittleEndian>()? as f64,
            Scalar::U32 => r.read_u32::<LittleEndian>()? as f64,
            Scalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            Scalar::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

struct PlyHeader {
    binary: bool,
    vertex_count: usize,
    props: Vec<(String, Scalar)>,
    lines: usize,
}

fn read_ply_header(reader: &mut impl BufRead, path: &Path) -> Result<PlyHeader> {
    let mut header = PlyHeader {
        binary: false,
        vertex_count: 0,
        props: Vec::new(),
        lines: 0,
    };
    let mut in_vertex = false;
    let mut seen_vertex = false;
    let mut line = String::new();
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        header.lines += 1;
        let ln = header.lines;
        let err = |message: String| Error::Parse { line: ln, message };
        if read == 0 {
            return Err(err("unexpected end of header".into()));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if ln == 1 {
            if toks != ["ply"] {
                return Err(err("missing 'ply' magic".into()));
            }
            continue;
        }
        match toks.as_slice() {
            ["format", "ascii", _] => header.binary = false,
            ["format", "binary_little_endian", _] => header.binary = true,
            ["format", other, _] => return Err(err(format!("unsupported ply format '{other}'"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                if seen_vertex && in_vertex {
                    in_vertex = false;
                }
                if *name == "vertex" {
                    if seen_vertex {
                        return Err(err("duplicate vertex element".into()));
                    }
                    seen_vertex = true;
                    in_vertex = true;
                    header.vertex_count = count.parse().map_err(|_| err(format!("invalid count '{count}'")))?;
                } else if !seen_vertex {
                    return Err(err("vertex element must come first".into()));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(err("list properties on vertices are not supported".into()))
            }
            ["property", ty, name] if in_vertex => {
                let ty = Scalar::parse(ty).ok_or_else(|| err(format!("unknown property type '{ty}'")))?;
                header.props.push((name.to_string(), ty));
            }
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(err(format!("unrecognized header line '{}'", line.trim()))),
        }
    }
    if !seen_vertex {
        return Err(Error::Parse {
            line: header.lines,
            message: "no vertex element".into(),
        });
    }
    Ok(header)
}

fn read_ply_points(reader: &mut impl BufRead, path: &Path) -> Result<Columns> {
    let header = read_ply_header(reader, path)?;
    let find = |name: &str| {
        header
            .props
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Parse {
                line: header.lines,
                message: format!("missing vertex property '{name}'"),
            })
    };
    let cols = [
        find("x")?,
        find("y")?,
        find("z")?,
        find("nx")?,
        find("ny")?,
        find("nz")?,
    ];
    let mut points = Vec::with_capacity(header.vertex_count);
    let mut normals = Vec::with_capacity(header.vertex_count);
    let mut row = vec![0.0; header.props.len()];
    if header.binary {
        for v in 0..header.vertex_count {
            for (slot, (_, ty)) in row.iter_mut().zip(&header.props) {
                *slot = ty.read_le(reader).map_err(|_| Error::Parse {
                    line: header.lines + 1,
                    message: format!("truncated binary data at vertex {v}"),
                })?;
            }
            points.push(Vec3::new(row[cols[0]], row[cols[1]], row[cols[2]]));
            normals.push(Vec3::new(row[cols[3]], row[cols[4]], row[cols[5]]));
        }
    } else {
        let mut lines = reader.lines();
        for v in 0..header.vertex_count {
            let ln = header.lines + v + 1;
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse {
                    line: ln,
                    message: format!("expected {} vertices, found {v}", header.vertex_count),
                })?
                .map_err(|e| Error::io(path, e))?;
            let vals = parse_floats(&line, ln)?;
            if vals.len() < header.props.len() {
                return Err(Error::Parse {
                    line: ln,
                    message: format!("expected {} values, found {}", header.props.len(), vals.len()),
                });
            }
            points.push(Vec3::new(vals[cols[0]], vals[cols[1]], vals[cols[2]]));
            normals.push(Vec3::new(vals[cols[3]], vals[cols[4]], vals[cols[5]]));
        }
    }
    Ok((points, normals))
}

pub fn save_points(ps: &HermitePointSet, path: &Path, format: PointFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        match format {
            PointFormat::XyzAscii => {
                for (p, n) in ps.points.iter().zip(&ps.normals) {
                    write_row(&mut w, &[p.x, p.y, p.z, n.x, n.y, n.z])?;
                }
            }
            PointFormat::PlyAscii | PointFormat::PlyBinaryLe => {
                let binary = format == PointFormat::PlyBinaryLe;
                let (fmt, ty) = if binary {
                    ("binary_little_endian", "float")
                } else {
                    ("ascii", "double")
                };
                writeln!(w, "ply\nformat {fmt} 1.0\nelement vertex {}", ps.len())?;
                for name in ["x", "y", "z", "nx", "ny", "nz"] {
                    writeln!(w, "property {ty} {name}")?;
                }
                writeln!(w, "end_header")?;
                for (p, n) in ps.points.iter().zip(&ps.normals) {
                    let row = [p.x, p.y, p.z, n.x, n.y, n.z];
                    if binary {
                        for v in row {
                            w.write_f32::<LittleEndian>(v as f32)?;
                        }
                    } else {
                        write_row(&mut w, &row)?;
                    }
                }
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

fn write_row(w: &mut impl Write, vals: &[f64]) -> std::io::Result<()> {
    let line: Vec<String> = vals.iter().map(|v| fmt_sig9(*v)).collect();
    writeln!(w, "{}", line.join(" "))
}

/// Writes a mesh. OBJ keeps quads; PLY is fan-triangulated.
pub fn save_mesh(mesh: &QuadMesh, path: &Path, format: MeshFormat) -> Result<()> {
    mesh.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        match format {
            MeshFormat::Obj => {
                for v in &mesh.vertices {
                    writeln!(w, "v {} {} {}", fmt_sig9(v.x), fmt_sig9(v.y), fmt_sig9(v.z))?;
                }
                for n in &mesh.vertex_normals {
                    writeln!(w, "vn {} {} {}", fmt_sig9(n.x), fmt_sig9(n.y), fmt_sig9(n.z))?;
                }
                let with_normals = mesh.vertex_normals.len() == mesh.vertices.len() && !mesh.vertices.is_empty();
                for f in &mesh.faces {
                    let toks: Vec<String> = f
                        .indices()
                        .iter()
                        .map(|i| {
                            if with_normals {
                                format!("{0}//{0}", i + 1)
                            } else {
                                (i + 1).to_string()
                            }
                        })
                        .collect();
                    writeln!(w, "f {}", toks.join(" "))?;
                }
            }
            MeshFormat::PlyAscii => {
                let tri = mesh.triangulated();
                let with_normals = tri.vertex_normals.len() == tri.vertices.len();
                writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", tri.vertices.len())?;
                writeln!(w, "property double x\nproperty double y\nproperty double z")?;
                if with_normals {
                    writeln!(w, "property double nx\nproperty double ny\nproperty double nz")?;
                }
                writeln!(w, "element face {}", tri.faces.len())?;
                writeln!(w, "property list uchar int vertex_indices\nend_header")?;
                for (i, v) in tri.vertices.iter().enumerate() {
                    if with_normals {
                        let n = tri.vertex_normals[i];
                        write_row(&mut w, &[v.x, v.y, v.z, n.x, n.y, n.z])?;
                    } else {
                        write_row(&mut w, &[v.x, v.y, v.z])?;
                    }
                }
                for f in &tri.faces {
                    let [a, b, c] = f.triangles().next().expect("triangle");
                    writeln!(w, "3 {a} {b} {c}")?;
                }
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Reads vertices, normals and polygon faces from an OBJ file. Polygons with
/// more than four corners are fan-split.
pub fn load_obj(path: &Path) -> Result<QuadMesh> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut mesh = QuadMesh::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let ln = i + 1;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let vals = parse_floats(&toks.collect::<Vec<_>>().join(" "), ln)?;
                if vals.len() < 3 {
                    return Err(Error::Parse {
                        line: ln,
                        message: "vertex needs 3 coordinates".into(),
                    });
                }
                mesh.vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
            }
            Some("vn") => {
                let vals = parse_floats(&toks.collect::<Vec<_>>().join(" "), ln)?;
                if vals.len() != 3 {
                    return Err(Error::Parse {
                        line: ln,
                        message: "normal needs 3 components".into(),
                    });
                }
                mesh.vertex_normals.push(Vec3::new(vals[0], vals[1], vals[2]));
            }
            Some("f") => {
                let idx = toks
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let k: i64 = head.parse().map_err(|_| Error::Parse {
                            line: ln,
                            message: format!("invalid face index '{t}'"),
                        })?;
                        let resolved = if k < 0 { mesh.vertices.len() as i64 + k } else { k - 1 };
                        if resolved < 0 {
                            return Err(Error::Parse {
                                line: ln,
                                message: format!("face index '{t}' out of range"),
                            });
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<Vec<usize>>>()?;
                match idx.len() {
                    3 => mesh.faces.push(Face::Tri([idx[0], idx[1], idx[2]])),
                    4 => mesh.faces.push(Face::Quad([idx[0], idx[1], idx[2], idx[3]])),
                    n if n > 4 => {
                        for k in 1..n - 1 {
                            mesh.faces.push(Face::Tri([idx[0], idx[k], idx[k + 1]]));
                        }
                    }
                    _ => {
                        return Err(Error::Parse {
                            line: ln,
                            message: "face needs at least 3 indices".into(),
                        })
                    }
                }
            }
            _ => {}
        }
    }
    if mesh.vertex_normals.len() != mesh.vertices.len() {
        mesh.vertex_normals.clear();
    }
    mesh.validate().map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(mesh)
}
