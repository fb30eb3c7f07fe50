//! MSH 2.2 ASCII subset: `$MeshFormat`, `$PhysicalNames`, `$Nodes` and
//! `$Elements` holding 2-node lines and 3-node triangles. 1-node point
//! elements are skipped; any other element type is rejected. Unknown sections
//! are ignored.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use super::{GeometryError, Point2, TaggedEdge, TriangleMesh};

const Z_TOL: f64 = 1e-9;

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            let l = l.trim();
            if !l.is_empty() {
                self.last = i + 1;
                return Some((i + 1, l));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), GeometryError> {
        let last = self.last;
        self.next().ok_or_else(|| err(last, format!("unexpected end of file, expected {what}")))
    }
}

fn err(line: usize, message: impl Into<String>) -> GeometryError {
    GeometryError::Parse { line, message: message.into() }
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, GeometryError> {
    let tok = tok.ok_or_else(|| err(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| err(line, format!("invalid {what} `{tok}`")))
}

fn count(lines: &mut Lines, section: &str) -> Result<usize, GeometryError> {
    let (ln, l) = lines.expect(&format!("{section} count"))?;
    num(Some(l), ln, &format!("{section} count"))
}

fn end(lines: &mut Lines, section: &str) -> Result<(), GeometryError> {
    let (ln, l) = lines.expect(&format!("$End{section}"))?;
    if l != format!("$End{section}") {
        return Err(err(ln, format!("expected $End{section}, found `{l}`")));
    }
    Ok(())
}

/// Parses an MSH 2.2 ASCII mesh.
pub fn parse_mesh(text: &str) -> Result<TriangleMesh, GeometryError> {
    let mut lines = Lines { inner: text.lines().enumerate(), last: 0 };
    let mut seen_format = false;
    let mut nodes: Vec<Point2> = Vec::new();
    let mut node_index: HashMap<u64, usize> = HashMap::new();
    let mut seen_nodes = false;
    let mut triangles = Vec::new();
    let mut triangle_tags = Vec::new();
    let mut edges = Vec::new();
    let mut physical_names = BTreeMap::new();
    let mut raw_elements: Vec<(usize, u32, i32, Vec<u64>)> = Vec::new();

    while let Some((ln, l)) = lines.next() {
        match l {
            "$MeshFormat" => {
                let (ln, l) = lines.expect("format line")?;
                let mut it = l.split_whitespace();
                let version: String = num(it.next(), ln, "version")?;
                let file_type: u32 = num(it.next(), ln, "file type")?;
                if !version.starts_with("2.") {
                    return Err(err(ln, format!("unsupported MSH version {version}")));
                }
                if file_type != 0 {
                    return Err(err(ln, "binary MSH is not supported"));
                }
                end(&mut lines, "MeshFormat")?;
                seen_format = true;
            }
            "$PhysicalNames" => {
                for _ in 0..count(&mut lines, "physical name")? {
                    let (ln, l) = lines.expect("physical name")?;
                    let mut it = l.splitn(3, char::is_whitespace);
                    let dim: u32 = num(it.next(), ln, "dimension")?;
                    let tag: i32 = num(it.next(), ln, "physical tag")?;
                    let name = it.next().map(|s| s.trim().trim_matches('"').to_string());
                    let name = name.ok_or_else(|| err(ln, "missing physical name"))?;
                    physical_names.insert(tag, (dim, name));
                }
                end(&mut lines, "PhysicalNames")?;
            }
            "$Nodes" => {
                let n = count(&mut lines, "node")?;
                nodes.reserve(n);
                for _ in 0..n {
                    let (ln, l) = lines.expect("node")?;
                    let mut it = l.split_whitespace();
                    let id: u64 = num(it.next(), ln, "node id")?;
                    let x: f64 = num(it.next(), ln, "x")?;
                    let y: f64 = num(it.next(), ln, "y")?;
                    let z: f64 = num(it.next(), ln, "z")?;
                    if z.abs() > Z_TOL {
                        return Err(err(ln, format!("node {id} has z = {z}; only planar meshes are supported")));
                    }
                    if node_index.insert(id, nodes.len()).is_some() {
                        return Err(err(ln, format!("duplicate node id {id}")));
                    }
                    nodes.push(Point2::new(x, y));
                }
                end(&mut lines, "Nodes")?;
                seen_nodes = true;
            }
            "$Elements" => {
                for _ in 0..count(&mut lines, "element")? {
                    let (ln, l) = lines.expect("element")?;
                    let mut it = l.split_whitespace();
                    let _id: u64 = num(it.next(), ln, "element id")?;
                    let kind: u32 = num(it.next(), ln, "element type")?;
                    let ntags: usize = num(it.next(), ln, "tag count")?;
                    let tags: Vec<i32> = (0..ntags).map(|_| num(it.next(), ln, "tag")).collect::<Result<_, _>>()?;
                    let arity = match kind {
                        1 => 2,
                        2 => 3,
                        15 => 1,
                        other => return Err(GeometryError::UnsupportedElement { line: ln, element_type: other }),
                    };
                    let ids: Vec<u64> =
                        (0..arity).map(|_| num(it.next(), ln, "element node")).collect::<Result<_, _>>()?;
                    if it.next().is_some() {
                        return Err(err(ln, "trailing tokens after element nodes"));
                    }
                    raw_elements.push((ln, kind, tags.first().copied().unwrap_or(0), ids));
                }
                end(&mut lines, "Elements")?;
            }
            s if s.starts_with('$') && !s.starts_with("$End") => {
                let closing = format!("$End{}", &s[1..]);
                loop {
                    let (_, l) = lines.expect(&closing)?;
                    if l == closing {
                        break;
                    }
                }
            }
            other => return Err(err(ln, format!("unexpected content `{other}`"))),
        }
    }
    if !seen_format {
        return Err(err(lines.last, "missing $MeshFormat section"));
    }
    if !seen_nodes {
        return Err(err(lines.last, "missing $Nodes section"));
    }

    for (ln, kind, tag, ids) in raw_elements {
        let idx: Vec<usize> = ids
            .iter()
            .map(|id| node_index.get(id).copied().ok_or_else(|| err(ln, format!("unknown node id {id}"))))
            .collect::<Result<_, _>>()?;
        match kind {
            1 => edges.push(TaggedEdge { nodes: [idx[0], idx[1]], tag }),
            2 => {
                triangles.push([idx[0], idx[1], idx[2]]);
                triangle_tags.push(tag);
            }
            _ => {}
        }
    }
    TriangleMesh::with_tags(nodes, triangles, triangle_tags, edges, physical_names)
}

/// Serializes to MSH 2.2 ASCII. Node ids are 1-based positions; lines precede triangles.
pub fn write_mesh(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    s.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n");
    if !mesh.physical_names.is_empty() {
        let _ = writeln!(s, "$PhysicalNames\n{}", mesh.physical_names.len());
        for (tag, (dim, name)) in &mesh.physical_names {
            let _ = writeln!(s, "{dim} {tag} \"{name}\"");
        }
        s.push_str("$EndPhysicalNames\n");
    }
    let _ = writeln!(s, "$Nodes\n{}", mesh.nodes.len());
    for (i, p) in mesh.nodes.iter().enumerate() {
        let _ = writeln!(s, "{} {:?} {:?} 0", i + 1, p.x, p.y);
    }
    s.push_str("$EndNodes\n");
    let _ = writeln!(s, "$Elements\n{}", mesh.edges.len() + mesh.triangles.len());
    let mut id = 0;
    for e in &mesh.edges {
        id += 1;
        let _ = writeln!(s, "{id} 1 2 {0} {0} {1} {2}", e.tag, e.nodes[0] + 1, e.nodes[1] + 1);
    }
    for (t, tag) in mesh.triangles.iter().zip(&mesh.triangle_tags) {
        id += 1;
        let _ = writeln!(s, "{id} 2 2 {tag} {tag} {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s.push_str("$EndElements\n");
    s
}
