//! Minimal OBJ reader: vertex positions and faces only. Normals are derived
//! per-face by consumers; texture coordinates are ignored.

use crate::error::{ApfError, Result};
use crate::math::{vec3, Vec3};
use std::path::Path;

pub fn load_obj(path: &Path) -> Result<(Vec<Vec3>, Vec<[u32; 3]>)> {
    let text = std::fs::read_to_string(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
    parse_obj(&text).map_err(|msg| ApfError::Parse(format!("{}: {msg}", path.display())))
}

pub fn parse_obj(text: &str) -> std::result::Result<(Vec<Vec3>, Vec<[u32; 3]>), String> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coord = |what| {
                    tokens
                        .next()
                        .and_then(|t| t.parse::<f64>().ok())
                        .ok_or_else(|| format!("line {}: bad vertex {what}", lineno + 1))
                };
                let x = coord("x")?;
                let y = coord("y")?;
                let z = coord("z")?;
                vertices.push(vec3(x, y, z));
            }
            Some("f") => {
                let mut idx: Vec<u32> = Vec::new();
                for tok in tokens {
                    // "7", "7/1", "7//3", "7/1/3" all reference vertex 7
                    let v = tok.split('/').next().unwrap_or("");
                    let i: i64 = v
                        .parse()
                        .map_err(|_| format!("line {}: bad face index '{tok}'", lineno + 1))?;
                    let resolved = if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        i - 1
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(format!("line {}: face index out of range", lineno + 1));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(format!("line {}: face with fewer than 3 vertices", lineno + 1));
                }
                for i in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[i], idx[i + 1]]);
                }
            }
            _ => {} // comments, normals, groups, materials: ignored
        }
    }
    Ok((vertices, faces))
}

pub fn write_obj(path: &Path, vertices: &[Vec3], faces: &[[u32; 3]]) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| ApfError::io(path.display().to_string(), e);
    for v in vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z).map_err(io_err)?;
    }
    for f in faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
