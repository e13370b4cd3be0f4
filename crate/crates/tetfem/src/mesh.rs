//! Tetrahedral meshes: the structured Kuhn cube, face/edge adjacency,
//! vertex and edge patches, boundary labeling, and an ASCII exchange format.
//!
//! Conventions fixed here and relied on everywhere else:
//! - tetrahedron vertex lists are sorted ascending by global index;
//! - local face i of a tet is the face opposite local vertex i;
//! - local edges are (0,1),(0,2),(0,3),(1,2),(1,3),(2,3);
//! - a face normal points out of the lower-indexed adjacent tet (outward on
//!   the domain boundary), and jumps read lower-side minus higher-side;
//! - face frames (t1, t2) and edge tangents are built from sorted global
//!   vertex ids, so every element sharing an entity sees the same frame.

use crate::quadrature::{TetRule, TriRule};
use crate::{Error, Result};
use nalgebra::{Point3, Vector3};
use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

/// Boundary condition label of a boundary face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone)]
pub struct Face {
    /// Ascending global vertex ids.
    pub v: [usize; 3],
    /// Adjacent tets, lower index first; `None` on the boundary.
    pub tets: (usize, Option<usize>),
    /// Unit normal, out of `tets.0`.
    pub normal: Vector3<f64>,
    pub area: f64,
    pub centroid: Point3<f64>,
    /// In-plane orthonormal frame: t1 along the first sorted edge, t2 = n x t1.
    pub t1: Vector3<f64>,
    pub t2: Vector3<f64>,
    /// Face diameter (longest edge).
    pub h: f64,
    pub label: Option<Bc>,
}

#[derive(Debug, Clone)]
pub struct Edge {
    /// Ascending global vertex ids.
    pub v: [usize; 2],
    /// Unit tangent from lower to higher vertex.
    pub tangent: Vector3<f64>,
    pub length: f64,
    pub midpoint: Point3<f64>,
}

#[derive(Debug, Clone)]
pub struct TetGeom {
    pub volume: f64,
    pub centroid: Point3<f64>,
    /// Element diameter (longest edge).
    pub h: f64,
    /// Inscribed sphere diameter 6V / (sum of face areas).
    pub rho: f64,
}

pub const LOCAL_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point3<f64>>,
    pub tets: Vec<[usize; 4]>,
    pub regions: Vec<u32>,
    pub faces: Vec<Face>,
    pub edges: Vec<Edge>,
    /// tet_faces[k][i] is the global face opposite local vertex i of tet k.
    pub tet_faces: Vec<[usize; 4]>,
    /// Global edge ids per tet in `LOCAL_EDGES` order.
    pub tet_edges: Vec<[usize; 6]>,
    pub vertex_tets: Vec<Vec<usize>>,
    pub edge_tets: Vec<Vec<usize>>,
    pub geom: Vec<TetGeom>,
}

impl Mesh {
    /// Assemble adjacency and geometry from raw cells. Tet vertex lists are
    /// sorted; degenerate (zero volume) cells are rejected.
    pub fn from_cells(
        vertices: Vec<Point3<f64>>,
        tets_in: Vec<[usize; 4]>,
        regions: Vec<u32>,
    ) -> Result<Mesh> {
        let nv = vertices.len();
        let mut tets = tets_in;
        for t in &mut tets {
            t.sort_unstable();
            if t[3] >= nv {
                return Err(Error::MeshFormat(format!("vertex id {} out of range", t[3])));
            }
            if t[0] == t[1] || t[1] == t[2] || t[2] == t[3] {
                return Err(Error::MeshFormat("repeated vertex in tet".into()));
            }
        }
        let regions = if regions.is_empty() { vec![0; tets.len()] } else { regions };
        if regions.len() != tets.len() {
            return Err(Error::MeshFormat("region list length mismatch".into()));
        }

        // Global faces and edges: sorted entity keys, deduplicated.
        let mut face_keys: Vec<[usize; 3]> = Vec::with_capacity(4 * tets.len());
        let mut edge_keys: Vec<[usize; 2]> = Vec::with_capacity(6 * tets.len());
        for t in &tets {
            for i in 0..4 {
                let mut f = [0usize; 3];
                let mut w = 0;
                for j in 0..4 {
                    if j != i {
                        f[w] = t[j];
                        w += 1;
                    }
                }
                face_keys.push(f);
            }
            for (a, b) in LOCAL_EDGES {
                edge_keys.push([t[a], t[b]]);
            }
        }
        face_keys.sort_unstable();
        face_keys.dedup();
        edge_keys.sort_unstable();
        edge_keys.dedup();

        let face_id = |f: &[usize; 3]| face_keys.binary_search(f).unwrap();
        let edge_id = |e: &[usize; 2]| edge_keys.binary_search(e).unwrap();

        let mut tet_faces = vec![[0usize; 4]; tets.len()];
        let mut tet_edges = vec![[0usize; 6]; tets.len()];
        let mut face_adj: Vec<(usize, Option<usize>)> = vec![(usize::MAX, None); face_keys.len()];
        let mut vertex_tets = vec![Vec::new(); nv];
        let mut edge_tets = vec![Vec::new(); edge_keys.len()];
        for (k, t) in tets.iter().enumerate() {
            for i in 0..4 {
                let mut f = [0usize; 3];
                let mut w = 0;
                for j in 0..4 {
                    if j != i {
                        f[w] = t[j];
                        w += 1;
                    }
                }
                let id = face_id(&f);
                tet_faces[k][i] = id;
                let slot = &mut face_adj[id];
                if slot.0 == usize::MAX {
                    slot.0 = k;
                } else if slot.1.is_none() {
                    slot.1 = Some(k);
                } else {
                    return Err(Error::MeshFormat("face shared by more than two tets".into()));
                }
                vertex_tets[t[i]].push(k);
            }
            for (le, (a, b)) in LOCAL_EDGES.iter().enumerate() {
                let id = edge_id(&[t[*a], t[*b]]);
                tet_edges[k][le] = id;
                edge_tets[id].push(k);
            }
        }
        for v in &mut vertex_tets {
            v.sort_unstable();
            v.dedup();
        }
        for v in &mut edge_tets {
            v.sort_unstable();
            v.dedup();
        }

        let mut geom = Vec::with_capacity(tets.len());
        for t in &tets {
            let p: Vec<&Point3<f64>> = t.iter().map(|&i| &vertices[i]).collect();
            let e1 = p[1] - p[0];
            let e2 = p[2] - p[0];
            let e3 = p[3] - p[0];
            let volume = e1.cross(&e2).dot(&e3).abs() / 6.0;
            if volume < 1e-300 {
                return Err(Error::MeshFormat("degenerate tetrahedron".into()));
            }
            let centroid = Point3::from((p[0].coords + p[1].coords + p[2].coords + p[3].coords) / 4.0);
            let mut h = 0.0f64;
            for (a, b) in LOCAL_EDGES {
                h = h.max((p[a] - p[b]).norm());
            }
            let mut area_sum = 0.0;
            for i in 0..4 {
                let q: Vec<&Point3<f64>> = (0..4).filter(|&j| j != i).map(|j| p[j]).collect();
                area_sum += 0.5 * (q[1] - q[0]).cross(&(q[2] - q[0])).norm();
            }
            geom.push(TetGeom { volume, centroid, h, rho: 6.0 * volume / area_sum });
        }

        let mut faces = Vec::with_capacity(face_keys.len());
        for (id, fv) in face_keys.iter().enumerate() {
            let a = &vertices[fv[0]];
            let b = &vertices[fv[1]];
            let c = &vertices[fv[2]];
            let e1 = b - a;
            let e2 = c - a;
            let nraw = e1.cross(&e2);
            let area = 0.5 * nraw.norm();
            let (lo, hi) = face_adj[id];
            let mut normal = nraw.normalize();
            let centroid = Point3::from((a.coords + b.coords + c.coords) / 3.0);
            if normal.dot(&(centroid - geom[lo].centroid)) < 0.0 {
                normal = -normal;
            }
            let t1 = e1.normalize();
            let t2 = normal.cross(&t1);
            let h = e1.norm().max(e2.norm()).max((c - b).norm());
            faces.push(Face {
                v: *fv,
                tets: (lo, hi),
                normal,
                area,
                centroid,
                t1,
                t2,
                h,
                label: None,
            });
        }

        let edges = edge_keys
            .iter()
            .map(|ev| {
                let p0 = &vertices[ev[0]];
                let p1 = &vertices[ev[1]];
                let d = p1 - p0;
                let length = d.norm();
                Edge {
                    v: *ev,
                    tangent: d / length,
                    length,
                    midpoint: Point3::from((p0.coords + p1.coords) / 2.0),
                }
            })
            .collect();

        Ok(Mesh {
            vertices,
            tets,
            regions,
            faces,
            edges,
            tet_faces,
            tet_edges,
            vertex_tets,
            edge_tets,
            geom,
        })
    }

    /// Kuhn triangulation of the unit cube: n^3 subcubes, six tets each,
    /// all sharing the subcube main diagonal. Vertex (i,j,k) has id
    /// i + (n+1) j + (n+1)^2 k.
    pub fn structured_cube(n: usize) -> Result<Mesh> {
        if n == 0 {
            return Err(Error::InvalidArgument("subdivision count must be positive".into()));
        }
        let s = n + 1;
        let mut vertices = Vec::with_capacity(s * s * s);
        for k in 0..s {
            for j in 0..s {
                for i in 0..s {
                    vertices.push(Point3::new(i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64));
                }
            }
        }
        let vid = |i: usize, j: usize, k: usize| i + s * j + s * s * k;
        const PERMS: [[usize; 3]; 6] =
            [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut tets = Vec::with_capacity(6 * n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    for perm in PERMS {
                        let mut c = [i, j, k];
                        let mut t = [vid(c[0], c[1], c[2]), 0, 0, 0];
                        for (step, &axis) in perm.iter().enumerate() {
                            c[axis] += 1;
                            t[step + 1] = vid(c[0], c[1], c[2]);
                        }
                        tets.push(t);
                    }
                }
            }
        }
        Mesh::from_cells(vertices, tets, Vec::new())
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }
    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }
    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_boundary_face(&self, f: usize) -> bool {
        self.faces[f].tets.1.is_none()
    }

    /// Global edge id of the vertex pair, if present. Edges are stored
    /// sorted by their vertex pair, so this is a binary search.
    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        let key = if a < b { [a, b] } else { [b, a] };
        self.edges.binary_search_by(|e| e.v.cmp(&key)).ok()
    }

    /// The three edges of face f.
    pub fn face_edges(&self, f: usize) -> [usize; 3] {
        let [a, b, c] = self.faces[f].v;
        [
            self.edge_id(a, b).unwrap(),
            self.edge_id(a, c).unwrap(),
            self.edge_id(b, c).unwrap(),
        ]
    }

    /// Faces carrying the given boundary label.
    pub fn labeled_faces(&self, label: Bc) -> Vec<usize> {
        (0..self.faces.len()).filter(|&f| self.faces[f].label == Some(label)).collect()
    }

    pub fn boundary_faces(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.faces.len()).filter(|&f| self.is_boundary_face(f))
    }

    /// Assign boundary labels through a predicate on the face.
    pub fn label_boundary(&mut self, rule: impl Fn(&Face, &[Point3<f64>]) -> Bc) {
        for f in 0..self.faces.len() {
            if self.faces[f].tets.1.is_none() {
                let label = rule(&self.faces[f], &self.vertices);
                self.faces[f].label = Some(label);
            }
        }
    }

    pub fn count_labels(&self) -> (usize, usize) {
        let mut d = 0;
        let mut n = 0;
        for f in &self.faces {
            match f.label {
                Some(Bc::Dirichlet) => d += 1,
                Some(Bc::Neumann) => n += 1,
                None => {}
            }
        }
        (d, n)
    }

    /// Sign of the stored face normal as seen from tet k: +1 when it is the
    /// outward normal of k.
    pub fn face_sign(&self, f: usize, k: usize) -> f64 {
        let face = &self.faces[f];
        if face.tets.0 == k {
            1.0
        } else {
            debug_assert_eq!(face.tets.1, Some(k));
            -1.0
        }
    }

    pub fn vertex_patch(&self, a: usize) -> Patch {
        Patch { kind: PatchKind::Vertex(a), tets: self.vertex_tets[a].clone() }
    }

    pub fn edge_patch(&self, e: usize) -> Patch {
        Patch { kind: PatchKind::Edge(e), tets: self.edge_tets[e].clone() }
    }

    /// Grow an element set by one layer of vertex adjacency: every tet
    /// sharing at least a vertex with the set joins it. Stays inside the
    /// mesh, so neighborhoods truncate at the domain boundary.
    pub fn extend_by_vertex(&self, tets: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = tets.to_vec();
        for &k in tets {
            for &v in &self.tets[k] {
                out.extend_from_slice(&self.vertex_tets[v]);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Faces of the given tet set that are not shared by two members:
    /// the boundary of the patch subdomain (may include domain boundary).
    pub fn patch_boundary_faces(&self, tets: &[usize]) -> Vec<usize> {
        let set: BTreeSet<usize> = tets.iter().copied().collect();
        let mut out = Vec::new();
        for &k in tets {
            for &f in &self.tet_faces[k] {
                let (lo, hi) = self.faces[f].tets;
                let inside = match hi {
                    None => 1,
                    Some(hi) => set.contains(&lo) as usize + set.contains(&hi) as usize,
                };
                if inside == 1 {
                    out.push(f);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Map a reference-tet quadrature rule to physical points and weights on
    /// tet k. Weights sum to the element volume.
    pub fn tet_quadrature(&self, k: usize, rule: &TetRule) -> (Vec<Point3<f64>>, Vec<f64>) {
        let t = &self.tets[k];
        let p0 = self.vertices[t[0]].coords;
        let e1 = self.vertices[t[1]].coords - p0;
        let e2 = self.vertices[t[2]].coords - p0;
        let e3 = self.vertices[t[3]].coords - p0;
        let scale = 6.0 * self.geom[k].volume;
        let pts = rule
            .points
            .iter()
            .map(|q| Point3::from(p0 + q.x * e1 + q.y * e2 + q.z * e3))
            .collect();
        let wts = rule.weights.iter().map(|w| w * scale).collect();
        (pts, wts)
    }

    /// Map a reference-triangle rule onto face f using the sorted-vertex
    /// chart, identical from both adjacent elements. Weights sum to the area.
    pub fn face_quadrature(&self, f: usize, rule: &TriRule) -> (Vec<Point3<f64>>, Vec<f64>) {
        let fv = &self.faces[f].v;
        let a = self.vertices[fv[0]].coords;
        let e1 = self.vertices[fv[1]].coords - a;
        let e2 = self.vertices[fv[2]].coords - a;
        let scale = 2.0 * self.faces[f].area;
        let pts = rule.points.iter().map(|q| Point3::from(a + q.x * e1 + q.y * e2)).collect();
        let wts = rule.weights.iter().map(|w| w * scale).collect();
        (pts, wts)
    }

    /// Gauss points along edge e; weights sum to the edge length.
    pub fn edge_quadrature(&self, e: usize, rule: &crate::quadrature::LineRule) -> (Vec<Point3<f64>>, Vec<f64>) {
        let ev = &self.edges[e].v;
        let p0 = self.vertices[ev[0]].coords;
        let d = self.vertices[ev[1]].coords - p0;
        let len = self.edges[e].length;
        let pts = rule.points.iter().map(|&t| Point3::from(p0 + t * d)).collect();
        let wts = rule.weights.iter().map(|w| w * len).collect();
        (pts, wts)
    }

    /// In-plane coordinates of a physical point in the face frame, scaled by
    /// the face diameter. Used to evaluate face moment functionals.
    pub fn face_local(&self, f: usize, x: &Point3<f64>) -> (f64, f64) {
        let face = &self.faces[f];
        let d = x - face.centroid;
        (d.dot(&face.t1) / face.h, d.dot(&face.t2) / face.h)
    }

    /// Arc-length coordinate of a physical point on edge e, centered at the
    /// midpoint and scaled by the length.
    pub fn edge_local(&self, e: usize, x: &Point3<f64>) -> f64 {
        let edge = &self.edges[e];
        (x - edge.midpoint).dot(&edge.tangent) / edge.length
    }

    pub fn save_ascii(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "tetmesh v1")?;
        writeln!(out, "{} {}", self.n_vertices(), self.n_tets())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z)?;
        }
        for (t, r) in self.tets.iter().zip(&self.regions) {
            writeln!(out, "{} {} {} {} {}", t[0], t[1], t[2], t[3], r)?;
        }
        writeln!(out, "B")?;
        for f in &self.faces {
            if let Some(label) = f.label {
                let tag = match label {
                    Bc::Dirichlet => "D",
                    Bc::Neumann => "N",
                };
                writeln!(out, "{} {} {} {}", f.v[0], f.v[1], f.v[2], tag)?;
            }
        }
        Ok(())
    }

    pub fn load_ascii(path: &Path) -> Result<Mesh> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let mut next = || -> Result<String> {
            loop {
                match lines.next() {
                    None => return Err(Error::MeshFormat("unexpected end of file".into())),
                    Some(line) => {
                        let line = line?;
                        let trimmed = line.trim().to_string();
                        if !trimmed.is_empty() {
                            return Ok(trimmed);
                        }
                    }
                }
            }
        };
        let header = next()?;
        if header != "tetmesh v1" {
            return Err(Error::MeshFormat(format!("bad header line: {header:?}")));
        }
        let counts = next()?;
        let mut it = counts.split_whitespace();
        let nv: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MeshFormat("bad count line".into()))?;
        let nt: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MeshFormat("bad count line".into()))?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let line = next()?;
            let c: Vec<f64> = line.split_whitespace().filter_map(|s| s.parse().ok()).collect();
            if c.len() != 3 {
                return Err(Error::MeshFormat(format!("bad vertex line: {line:?}")));
            }
            vertices.push(Point3::new(c[0], c[1], c[2]));
        }
        let mut tets = Vec::with_capacity(nt);
        let mut regions = Vec::with_capacity(nt);
        for _ in 0..nt {
            let line = next()?;
            let c: Vec<usize> = line.split_whitespace().filter_map(|s| s.parse().ok()).collect();
            if c.len() != 4 && c.len() != 5 {
                return Err(Error::MeshFormat(format!("bad tet line: {line:?}")));
            }
            tets.push([c[0], c[1], c[2], c[3]]);
            regions.push(if c.len() == 5 { c[4] as u32 } else { 0 });
        }
        let mut mesh = Mesh::from_cells(vertices, tets, regions)?;
        match next() {
            Ok(tag) if tag == "B" => {}
            Ok(other) => return Err(Error::MeshFormat(format!("expected B section, got {other:?}"))),
            Err(_) => return Err(Error::MeshFormat("missing B section".into())),
        }
        // Remaining lines label boundary faces by sorted vertex triple.
        let mut labeled = 0usize;
        loop {
            let line = match lines.next() {
                None => break,
                Some(line) => line?,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(Error::MeshFormat(format!("bad boundary line: {line:?}")));
            }
            let mut key = [
                parts[0].parse::<usize>().map_err(|_| Error::MeshFormat("bad face id".into()))?,
                parts[1].parse::<usize>().map_err(|_| Error::MeshFormat("bad face id".into()))?,
                parts[2].parse::<usize>().map_err(|_| Error::MeshFormat("bad face id".into()))?,
            ];
            key.sort_unstable();
            let label = match parts[3] {
                "D" => Bc::Dirichlet,
                "N" => Bc::Neumann,
                other => return Err(Error::MeshFormat(format!("unknown label {other:?}"))),
            };
            let fid = mesh
                .faces
                .binary_search_by(|f| f.v.cmp(&key))
                .map_err(|_| Error::MeshFormat(format!("labeled face {key:?} not in mesh")))?;
            if mesh.faces[fid].tets.1.is_some() {
                return Err(Error::MeshFormat(format!("labeled face {key:?} is interior")));
            }
            mesh.faces[fid].label = Some(label);
            labeled += 1;
        }
        let nb = mesh.boundary_faces().count();
        if labeled != nb {
            return Err(Error::MeshFormat(format!(
                "boundary section labels {labeled} of {nb} boundary faces"
            )));
        }
        Ok(mesh)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchKind {
    Vertex(usize),
    Edge(usize),
}

/// Union of the tets containing a vertex or an edge: the support of the
/// local equilibration problems.
#[derive(Debug, Clone)]
pub struct Patch {
    pub kind: PatchKind,
    pub tets: Vec<usize>,
}

/// Which boundary faces of a patch keep a free trace in the local problems;
/// everything else on the patch boundary is trace-constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeTrace {
    /// Closed-Neumann faces touching the patch seed entity.
    NeumannClosure,
    /// Closed-Dirichlet faces touching the patch seed entity (flux problems).
    DirichletClosure,
}

impl Patch {
    /// Patch boundary faces with free trace removed according to the rule.
    /// Free faces are always domain-boundary faces whose label matches and
    /// which contain the seed vertex (or have the seed edge as one of their
    /// edges).
    pub fn constrained_faces(&self, mesh: &Mesh, rule: FreeTrace) -> Vec<usize> {
        let boundary = mesh.patch_boundary_faces(&self.tets);
        let want = match rule {
            FreeTrace::NeumannClosure => Bc::Neumann,
            FreeTrace::DirichletClosure => Bc::Dirichlet,
        };
        boundary
            .into_iter()
            .filter(|&f| {
                let face = &mesh.faces[f];
                if face.label != Some(want) {
                    return true;
                }
                let touches = match self.kind {
                    PatchKind::Vertex(a) => face.v.contains(&a),
                    PatchKind::Edge(e) => {
                        let ev = mesh.edges[e].v;
                        face.v.contains(&ev[0]) && face.v.contains(&ev[1])
                    }
                };
                !touches
            })
            .collect()
    }

    /// True when some matching labeled face touches the seed entity, i.e.
    /// the local problem has a free trace part and needs no zero-mean
    /// compatibility condition.
    pub fn has_free_trace(&self, mesh: &Mesh, rule: FreeTrace) -> bool {
        let boundary = mesh.patch_boundary_faces(&self.tets);
        let want = match rule {
            FreeTrace::NeumannClosure => Bc::Neumann,
            FreeTrace::DirichletClosure => Bc::Dirichlet,
        };
        boundary.iter().any(|&f| {
            let face = &mesh.faces[f];
            face.label == Some(want)
                && match self.kind {
                    PatchKind::Vertex(a) => face.v.contains(&a),
                    PatchKind::Edge(e) => {
                        let ev = mesh.edges[e].v;
                        face.v.contains(&ev[0]) && face.v.contains(&ev[1])
                    }
                }
        })
    }
}

/// Label every boundary face Dirichlet.
pub fn label_all_dirichlet(mesh: &mut Mesh) {
    mesh.label_boundary(|_, _| Bc::Dirichlet);
}

/// Neumann on the two faces x = 0 and x = 1, Dirichlet elsewhere. Face
/// membership is decided by exact vertex coordinates, which the structured
/// cube represents exactly in floating point.
pub fn label_x_neumann(mesh: &mut Mesh) {
    mesh.label_boundary(|face, verts| {
        let on = |c: f64| face.v.iter().all(|&v| verts[v].x == c);
        if on(0.0) || on(1.0) {
            Bc::Neumann
        } else {
            Bc::Dirichlet
        }
    });
}

/// Dirichlet on the two faces x = 0 and x = 1, Neumann elsewhere.
pub fn label_x_dirichlet(mesh: &mut Mesh) {
    mesh.label_boundary(|face, verts| {
        let on = |c: f64| face.v.iter().all(|&v| verts[v].x == c);
        if on(0.0) || on(1.0) {
            Bc::Dirichlet
        } else {
            Bc::Neumann
        }
    });
}
