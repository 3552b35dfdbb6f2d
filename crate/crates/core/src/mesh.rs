//! Desk-scale duct meshes: structured triangulations of a rectangle with
//! five tagged boundary segments, plus a plain-text exchange format.
//!
//! Boundary tags: 1 = fan source (x = 0), 2 = liner segment of the top wall,
//! 3 = remaining top wall, 4 = far field (x = length), 5 = symmetry (y = 0).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const TAG_SOURCE: u8 = 1;
pub const TAG_LINER: u8 = 2;
pub const TAG_NEAR_FIELD: u8 = 3;
pub const TAG_FAR_FIELD: u8 = 4;
pub const TAG_SYMMETRY: u8 = 5;

/// Triangulated 2D domain with tagged boundary edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    /// node coordinates in meters
    pub nodes: Vec<[f64; 2]>,
    /// triangles as node-index triples, counterclockwise
    pub elements: Vec<[usize; 3]>,
    /// boundary edges as (node, node, tag)
    pub boundary_edges: Vec<(usize, usize, u8)>,
}

impl Mesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Twice the signed area of element `e`.
    pub fn signed_area2(&self, e: usize) -> f64 {
        let [a, b, c] = self.elements[e];
        let pa = self.nodes[a];
        let pb = self.nodes[b];
        let pc = self.nodes[c];
        (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])
    }

    /// Sorted, deduplicated indices of nodes on edges with the given tag.
    pub fn nodes_on_tag(&self, tag: u8) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|(_, _, t)| *t == tag)
            .flat_map(|(i, j, _)| [*i, *j])
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Checks all mesh invariants, returning the first violation found.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        for (e, tri) in self.elements.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(Error::MeshInvariant(format!(
                        "element {e} references node {v} out of {n}"
                    )));
                }
            }
            if self.signed_area2(e) <= 0.0 {
                return Err(Error::MeshInvariant(format!(
                    "element {e} has non-positive signed area"
                )));
            }
        }
        let mut seen = std::collections::HashMap::new();
        for (idx, &(i, j, tag)) in self.boundary_edges.iter().enumerate() {
            if i >= n || j >= n {
                return Err(Error::MeshInvariant(format!(
                    "boundary edge {idx} references node out of range"
                )));
            }
            if !(1..=5).contains(&tag) {
                return Err(Error::MeshInvariant(format!(
                    "unknown boundary tag {tag} on edge {idx}"
                )));
            }
            let key = (i.min(j), i.max(j));
            if let Some(prev) = seen.insert(key, tag) {
                return Err(Error::MeshInvariant(format!(
                    "boundary edge ({i},{j}) listed twice (tags {prev} and {tag})"
                )));
            }
        }
        // tagged edges must coincide with the element boundary
        let mut edge_count = std::collections::HashMap::new();
        for tri in &self.elements {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                *edge_count.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        let boundary: std::collections::HashSet<(usize, usize)> = edge_count
            .iter()
            .filter(|(_, c)| **c == 1)
            .map(|(e, _)| *e)
            .collect();
        let tagged: std::collections::HashSet<(usize, usize)> = self
            .boundary_edges
            .iter()
            .map(|&(i, j, _)| (i.min(j), i.max(j)))
            .collect();
        if boundary != tagged {
            return Err(Error::MeshInvariant(
                "tagged edges do not partition the mesh boundary".into(),
            ));
        }
        Ok(())
    }

    /// Serializes the mesh in the "ducfem 1" text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "ducfem 1").unwrap();
        writeln!(s, "nodes {}", self.nodes.len()).unwrap();
        for p in &self.nodes {
            writeln!(s, "{} {}", p[0], p[1]).unwrap();
        }
        writeln!(s, "elements {}", self.elements.len()).unwrap();
        for t in &self.elements {
            writeln!(s, "{} {} {}", t[0], t[1], t[2]).unwrap();
        }
        writeln!(s, "boundary {}", self.boundary_edges.len()).unwrap();
        for (i, j, tag) in &self.boundary_edges {
            writeln!(s, "{i} {j} {tag}").unwrap();
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Generates a structured triangulation of `[0,length] x [0,height]`.
///
/// Nodes are numbered with the y index fastest so the assembled systems
/// stay narrow-banded. Each cell is split along its SW-NE diagonal.
pub fn generate_duct_mesh(
    length: f64,
    height: f64,
    liner_start: f64,
    liner_length: f64,
    h: f64,
) -> Result<Mesh> {
    if length <= 0.0 || height <= 0.0 || liner_length <= 0.0 || h <= 0.0 {
        return Err(Error::InvalidArgument(
            "all duct dimensions and the target edge length must be positive".into(),
        ));
    }
    if liner_start < 0.0 || liner_start + liner_length > length + 1e-12 {
        return Err(Error::InvalidArgument(
            "liner segment must lie within [0, length]".into(),
        ));
    }
    if h > liner_length {
        return Err(Error::InvalidArgument(format!(
            "edge length h={h} exceeds liner length {liner_length}; liner would have no edges"
        )));
    }
    let nx = (length / h).ceil() as usize;
    let ny = (height / h).ceil().max(1.0) as usize;
    let dx = length / nx as f64;
    let dy = height / ny as f64;

    let node_id = |ix: usize, iy: usize| ix * (ny + 1) + iy;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for ix in 0..=nx {
        for iy in 0..=ny {
            nodes.push([ix as f64 * dx, iy as f64 * dy]);
        }
    }
    let mut elements = Vec::with_capacity(2 * nx * ny);
    for ix in 0..nx {
        for iy in 0..ny {
            let a = node_id(ix, iy);
            let b = node_id(ix + 1, iy);
            let c = node_id(ix, iy + 1);
            let d = node_id(ix + 1, iy + 1);
            elements.push([a, b, d]);
            elements.push([a, d, c]);
        }
    }

    // liner cells: the union of tagged edges covers [liner_start, liner_start+liner_length]
    let eps = 1e-9 * length;
    let i0 = ((liner_start + eps) / dx).floor() as usize;
    let i1 = (((liner_start + liner_length - eps) / dx).ceil() as usize).min(nx);

    let mut boundary_edges = Vec::new();
    for iy in 0..ny {
        boundary_edges.push((node_id(0, iy), node_id(0, iy + 1), TAG_SOURCE));
        boundary_edges.push((node_id(nx, iy), node_id(nx, iy + 1), TAG_FAR_FIELD));
    }
    for ix in 0..nx {
        boundary_edges.push((node_id(ix, 0), node_id(ix + 1, 0), TAG_SYMMETRY));
        let tag = if ix >= i0 && ix < i1 {
            TAG_LINER
        } else {
            TAG_NEAR_FIELD
        };
        boundary_edges.push((node_id(ix, ny), node_id(ix + 1, ny), tag));
    }

    let mesh = Mesh {
        nodes,
        elements,
        boundary_edges,
    };
    mesh.validate()?;
    Ok(mesh)
}

/// Parses the "ducfem 1" text format, validating all mesh invariants.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text, path)
}

pub fn parse_mesh(text: &str, path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let mut next_line = |expect: &str| -> Result<(usize, String)> {
        for (i, raw) in lines.by_ref() {
            let t = raw.trim();
            if !t.is_empty() {
                return Ok((i + 1, t.to_string()));
            }
        }
        Err(Error::Parse {
            path: path.to_path_buf(),
            line: text.lines().count(),
            msg: format!("unexpected end of file, expected {expect}"),
        })
    };

    let (ln, header) = next_line("header")?;
    if header != "ducfem 1" {
        return Err(perr(ln, format!("expected header 'ducfem 1', got '{header}'")));
    }

    let parse_count = |ln: usize, line: &str, kw: &str| -> Result<usize> {
        let mut it = line.split_whitespace();
        if it.next() != Some(kw) {
            return Err(perr(ln, format!("expected '{kw} <count>'")));
        }
        it.next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr(ln, format!("invalid count in '{kw}' line")))
    };

    let (ln, line) = next_line("nodes")?;
    let n_nodes = parse_count(ln, &line, "nodes")?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (ln, line) = next_line("node coordinates")?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| perr(ln, format!("invalid coordinate: {e}")))?;
        if vals.len() != 2 {
            return Err(perr(ln, "expected 2 coordinates".into()));
        }
        nodes.push([vals[0], vals[1]]);
    }

    let (ln, line) = next_line("elements")?;
    let n_elems = parse_count(ln, &line, "elements")?;
    let mut elements = Vec::with_capacity(n_elems);
    for _ in 0..n_elems {
        let (ln, line) = next_line("element indices")?;
        let vals: Vec<usize> = line
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| perr(ln, format!("invalid node index: {e}")))?;
        if vals.len() != 3 {
            return Err(perr(ln, "expected 3 node indices".into()));
        }
        elements.push([vals[0], vals[1], vals[2]]);
    }

    let (ln, line) = next_line("boundary")?;
    let n_bnd = parse_count(ln, &line, "boundary")?;
    let mut boundary_edges = Vec::with_capacity(n_bnd);
    for _ in 0..n_bnd {
        let (ln, line) = next_line("boundary edge")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(perr(ln, "expected 'i j tag'".into()));
        }
        let i: usize = toks[0]
            .parse()
            .map_err(|e| perr(ln, format!("invalid node index: {e}")))?;
        let j: usize = toks[1]
            .parse()
            .map_err(|e| perr(ln, format!("invalid node index: {e}")))?;
        let tag: u8 = toks[2]
            .parse()
            .map_err(|e| perr(ln, format!("invalid tag: {e}")))?;
        if !(1..=5).contains(&tag) {
            return Err(perr(ln, format!("unknown boundary tag {tag}")));
        }
        boundary_edges.push((i, j, tag));
    }

    let mesh = Mesh {
        nodes,
        elements,
        boundary_edges,
    };
    mesh.validate()?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_duct_has_expected_grid_and_liner() {
        let m = generate_duct_mesh(1.0, 0.5, 0.2, 0.4, 0.25).unwrap();
        // 4 x 2 cells
        assert_eq!(m.nodes.len(), 5 * 3);
        assert_eq!(m.elements.len(), 2 * 4 * 2);
        // liner edges cover x in [0.2, 0.6] on y = 0.5
        let liner: Vec<_> = m
            .boundary_edges
            .iter()
            .filter(|(_, _, t)| *t == TAG_LINER)
            .collect();
        assert!(!liner.is_empty());
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (i, j, _) in &liner {
            for v in [*i, *j] {
                assert_eq!(m.nodes[v][1], 0.5);
                lo = lo.min(m.nodes[v][0]);
                hi = hi.max(m.nodes[v][0]);
            }
        }
        assert!(lo <= 0.2 + 1e-12 && hi >= 0.6 - 1e-12);
        m.validate().unwrap();
    }

    #[test]
    fn desk_analog_of_paper_dimensions() {
        let m = generate_duct_mesh(5.0, 1.2, 0.21, 1.08, 0.05).unwrap();
        m.validate().unwrap();
        // 10 nodes per wavelength at k = 10: lambda = 2*pi/10, need spacing <= lambda/10
        let lambda = 2.0 * std::f64::consts::PI / 10.0;
        let nx = (5.0 / 0.05_f64).ceil();
        let dx = 5.0 / nx;
        assert!(dx <= lambda / 10.0 * 1.0001);
    }

    #[test]
    fn max_edge_length_bounded() {
        let h = 0.07;
        let m = generate_duct_mesh(1.0, 0.4, 0.1, 0.5, h).unwrap();
        let mut max_edge: f64 = 0.0;
        for tri in &m.elements {
            for k in 0..3 {
                let a = m.nodes[tri[k]];
                let b = m.nodes[tri[(k + 1) % 3]];
                max_edge = max_edge.max((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
        assert!(max_edge <= 1.5 * h);
    }

    #[test]
    fn rejects_h_larger_than_liner() {
        assert!(generate_duct_mesh(1.0, 0.5, 0.2, 0.1, 0.2).is_err());
    }

    #[test]
    fn round_trip_is_identical() {
        let m = generate_duct_mesh(1.0, 0.5, 0.2, 0.4, 0.1).unwrap();
        let text = m.to_text();
        let m2 = parse_mesh(&text, "mem").unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn unknown_tag_is_rejected() {
        let m = generate_duct_mesh(1.0, 0.5, 0.2, 0.4, 0.25).unwrap();
        let text = m.to_text().replace(" 5\n", " 6\n");
        let err = parse_mesh(&text, "mem").unwrap_err();
        assert!(err.to_string().contains("unknown boundary tag"));
    }

    #[test]
    fn duplicate_boundary_edge_is_rejected() {
        let mut m = generate_duct_mesh(1.0, 0.5, 0.2, 0.4, 0.25).unwrap();
        let (i, j, _) = m.boundary_edges[0];
        m.boundary_edges.push((j, i, TAG_NEAR_FIELD));
        let err = parse_mesh(&m.to_text(), "mem").unwrap_err();
        assert!(err.to_string().contains("listed twice"));
    }
}
