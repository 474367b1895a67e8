//! OFF mesh parsing (the ModelNet distribution format).
//!
//! Accepts plain `OFF` and `COFF` headers, counts on the header line or the
//! next line, and the fused-header corruption (`OFF3 1 0`) found in real
//! ModelNet files. Faces with more than three vertices are fan-triangulated.
//! Errors carry the 1-based line number of the offending content.

use crate::{Error, Result};
use std::path::{Path, PathBuf};

/// Triangle mesh produced by [`parse_off`]: raw vertices plus triangle
/// index triples (fan-triangulated from the source polygons).
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    /// Vertex coordinates.
    pub vertices: Vec<[f64; 3]>,
    /// Triangles as indices into `vertices`.
    pub triangles: Vec<[usize; 3]>,
}

/// Internal cursor over non-empty, non-comment lines with their original
/// line numbers.
struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    /// Line number of the most recently yielded line (1-based).
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, path: &'a Path) -> Self {
        Lines {
            iter: text.lines().enumerate(),
            path,
            last: 0,
        }
    }

    /// Next significant line, or a truncation error mentioning `expecting`.
    fn next(&mut self, expecting: &str) -> Result<(usize, &'a str)> {
        for (idx, line) in self.iter.by_ref() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            self.last = idx + 1;
            return Ok((idx + 1, trimmed));
        }
        Err(Error::parse(
            self.path,
            self.last + 1,
            format!("unexpected end of file, expecting {expecting}"),
        ))
    }
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, token: &str, what: &str) -> Result<T> {
    token
        .parse::<T>()
        .map_err(|_| Error::parse(path, line, format!("invalid {what}: {token:?}")))
}

/// Parses OFF text into a triangle mesh.
///
/// `path` is used only to label error messages; pass the source file name
/// or any placeholder for in-memory input.
pub fn parse_off(text: &str, path: impl Into<PathBuf>) -> Result<Mesh> {
    let path = path.into();
    let mut lines = Lines::new(text, &path);

    // Header: "OFF" or "COFF", possibly with the counts fused onto the same
    // token ("OFF3 1 0") or following on the same line ("OFF 3 1 0").
    let (header_no, header) = lines.next("OFF header")?;
    let mut tokens = header.split_whitespace();
    let first = tokens.next().unwrap(); // non-empty by construction
    let keyword_len = if first.starts_with("COFF") {
        4
    } else if first.starts_with("OFF") {
        3
    } else {
        return Err(Error::parse(&path, header_no, format!("missing OFF header, found {first:?}")));
    };
    let fused = &first[keyword_len..];
    let rest: Vec<&str> = tokens.collect();

    // Assemble the counts tokens from whatever followed the keyword.
    let counts_line; // line number the counts came from, for errors
    let counts: Vec<String> = if fused.is_empty() && rest.is_empty() {
        let (no, line) = lines.next("vertex/face counts")?;
        counts_line = no;
        line.split_whitespace().map(str::to_string).collect()
    } else {
        counts_line = header_no;
        std::iter::once(fused.to_string())
            .filter(|s| !s.is_empty())
            .chain(rest.iter().map(|s| s.to_string()))
            .collect()
    };
    if counts.len() < 2 {
        return Err(Error::parse(
            &path,
            counts_line,
            format!("counts line must hold vertex and face counts, got {} token(s)", counts.len()),
        ));
    }
    let nv: usize = parse_num(&path, counts_line, &counts[0], "vertex count")?;
    let nf: usize = parse_num(&path, counts_line, &counts[1], "face count")?;

    // Vertex lines: first three numeric fields; COFF color fields ignored.
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (no, line) = lines.next("a vertex line")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(Error::parse(&path, no, format!("vertex line has {} field(s), need 3", toks.len())));
        }
        let mut v = [0.0f64; 3];
        for (k, item) in v.iter_mut().enumerate() {
            *item = parse_num(&path, no, toks[k], "vertex coordinate")?;
        }
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::parse(&path, no, "non-finite vertex coordinate"));
        }
        vertices.push(v);
    }

    // Face lines: "k i1 … ik", k ≥ 3, fan-triangulated. Trailing fields
    // (per-face colors) are ignored.
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (no, line) = lines.next("a face line")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let k: usize = parse_num(&path, no, toks[0], "face vertex count")?;
        if k < 3 {
            return Err(Error::parse(&path, no, format!("face has {k} vertices, need at least 3")));
        }
        if toks.len() < 1 + k {
            return Err(Error::parse(
                &path,
                no,
                format!("face declares {k} vertices but line has {} index field(s)", toks.len() - 1),
            ));
        }
        let mut idx = Vec::with_capacity(k);
        for t in &toks[1..1 + k] {
            let i: usize = parse_num(&path, no, t, "face vertex index")?;
            if i >= nv {
                return Err(Error::parse(&path, no, format!("face vertex index {i} out of range [0, {nv})")));
            }
            idx.push(i);
        }
        for j in 1..k - 1 {
            triangles.push([idx[0], idx[j], idx[j + 1]]);
        }
    }

    Ok(Mesh { vertices, triangles })
}

/// Writes a triangle mesh as canonical OFF text (inverse of [`parse_off`]
/// for meshes already made of triangles).
pub fn serialize_off(mesh: &Mesh) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "OFF").unwrap();
    writeln!(out, "{} {} 0", mesh.vertices.len(), mesh.triangles.len()).unwrap();
    for v in &mesh.vertices {
        writeln!(out, "{} {} {}", v[0], v[1], v[2]).unwrap();
    }
    for t in &mesh.triangles {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";

    #[test]
    fn parses_minimal_triangle_file() {
        let mesh = parse_off(MINIMAL, "mini.off").unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.triangles, vec![[0, 1, 2]]);
        assert_eq!(mesh.vertices[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn tolerates_fused_header() {
        let mesh = parse_off("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n", "fused.off").unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.triangles.len(), 1);
    }

    #[test]
    fn tolerates_counts_on_header_line() {
        let mesh = parse_off("OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n", "inline.off").unwrap();
        assert_eq!(mesh.vertices.len(), 3);
    }

    #[test]
    fn coff_color_fields_are_ignored() {
        let text = "COFF\n3 1 0\n0 0 0 255 0 0 255\n1 0 0 0 255 0 255\n0 1 0 0 0 255 255\n3 0 1 2\n";
        let mesh = parse_off(text, "c.off").unwrap();
        assert_eq!(mesh.vertices[2], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let text = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let mesh = parse_off(text, "quad.off").unwrap();
        assert_eq!(mesh.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn missing_header_is_an_error() {
        let err = parse_off("3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n", "bad.off").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.off:1"), "error should name line 1: {msg}");
        assert!(msg.contains("missing OFF header"), "{msg}");
    }

    #[test]
    fn out_of_range_face_index_names_its_line() {
        let err = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n", "oob.off").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("oob.off:6"), "error should name line 6: {msg}");
        assert!(msg.contains("index 5 out of range"), "{msg}");
    }

    #[test]
    fn non_numeric_token_names_its_line() {
        let err = parse_off("OFF\n3 1 0\n0 0 zero\n1 0 0\n0 1 0\n3 0 1 2\n", "nan.off").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nan.off:3"), "{msg}");
        assert!(msg.contains("invalid vertex coordinate"), "{msg}");
    }

    #[test]
    fn truncated_file_is_an_error() {
        let err = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n", "trunc.off").unwrap_err();
        assert!(err.to_string().contains("unexpected end of file"), "{err}");
    }

    #[test]
    fn blank_lines_and_comments_are_skipped() {
        let text = "OFF\n# a comment\n\n3 1 0\n0 0 0\n\n1 0 0\n0 1 0\n# faces\n3 0 1 2\n";
        let mesh = parse_off(text, "comments.off").unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.triangles.len(), 1);
    }

    #[test]
    fn serialize_then_parse_round_trips() {
        let mesh = Mesh {
            vertices: vec![[0.0, 0.25, -1.5], [1.0, 0.0, 0.0], [0.0, 1.0, 0.125], [2.0, 2.0, 2.0]],
            triangles: vec![[0, 1, 2], [1, 2, 3]],
        };
        let parsed = parse_off(&serialize_off(&mesh), "rt.off").unwrap();
        assert_eq!(parsed, mesh);
    }
}
