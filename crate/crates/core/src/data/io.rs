//! XYZ point files, OFF meshes and dataset manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Lines that carry data, with 1-based line numbers; blank lines and lines
/// starting with `#` are skipped.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

/// Points and, when every row has a fourth column, integer per-point labels.
pub fn load_labeled_xyz(path: &Path) -> Result<(PointCloud, Option<Vec<usize>>)> {
    let text = fs::read_to_string(path)?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut columns = None;
    for (line, l) in data_lines(&text) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 3 && toks.len() != 4 {
            return Err(parse_err(
                path,
                line,
                format!("expected 3 or 4 columns, found {}", toks.len()),
            ));
        }
        if *columns.get_or_insert(toks.len()) != toks.len() {
            return Err(parse_err(path, line, "column count differs from earlier lines"));
        }
        points.push([
            parse_f64(path, line, toks[0])?,
            parse_f64(path, line, toks[1])?,
            parse_f64(path, line, toks[2])?,
        ]);
        if toks.len() == 4 {
            labels.push(
                toks[3]
                    .parse::<usize>()
                    .map_err(|_| parse_err(path, line, format!("bad part label {:?}", toks[3])))?,
            );
        }
    }
    if points.is_empty() {
        return Err(parse_err(path, 0, "file contains no points"));
    }
    let labels = (columns == Some(4)).then_some(labels);
    Ok((PointCloud::new(points)?, labels))
}

/// One whitespace-separated `x y z` triple per line.
pub fn load_xyz(path: &Path) -> Result<PointCloud> {
    let (cloud, labels) = load_labeled_xyz(path)?;
    if labels.is_some() {
        return Err(parse_err(path, 0, "expected 3 columns per line"));
    }
    Ok(cloud)
}

/// Writes coordinates with shortest round-trip formatting, optionally with
/// a label column.
pub fn write_xyz(path: &Path, points: &[Point], labels: Option<&[usize]>) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != points.len() {
            return Err(Error::Precondition("one label per point is required".into()));
        }
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for (i, p) in points.iter().enumerate() {
        match labels {
            Some(l) => writeln!(out, "{} {} {} {}", p[0], p[1], p[2], l[i])?,
            None => writeln!(out, "{} {} {}", p[0], p[1], p[2])?,
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
}

/// Object File Format; polygons are fan-triangulated. A header fused with
/// the counts (`OFF8 6 0`) is accepted.
pub fn load_off(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path)?;
    let mut lines = data_lines(&text);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(path, hline, "missing OFF header"))?
        .trim();
    let (cline, counts) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| parse_err(path, hline, "missing counts line"))?
    } else {
        (hline, rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| parse_err(path, cline, format!("bad count {t:?}")))
        })
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(parse_err(path, cline, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, l) = lines
            .next()
            .ok_or_else(|| parse_err(path, 0, "file ends inside the vertex list"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(path, line, "vertex needs three coordinates"));
        }
        vertices.push([
            parse_f64(path, line, toks[0])?,
            parse_f64(path, line, toks[1])?,
            parse_f64(path, line, toks[2])?,
        ]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line, l) = lines
            .next()
            .ok_or_else(|| parse_err(path, 0, "file ends inside the face list"))?;
        let toks: Vec<usize> = l
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| parse_err(path, line, format!("bad face entry {t:?}")))
            })
            .collect::<Result<_>>()?;
        let k = *toks.first().ok_or_else(|| parse_err(path, line, "empty face"))?;
        if k < 3 || toks.len() < k + 1 {
            return Err(parse_err(path, line, format!("face declares {k} vertices")));
        }
        let idx = &toks[1..=k];
        if let Some(&bad) = idx.iter().find(|&&i| i >= nv) {
            return Err(parse_err(
                path,
                line,
                format!("face vertex {bad} out of range for {nv} vertices"),
            ));
        }
        for j in 1..k - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    Ok(Mesh { vertices, faces })
}

/// One manifest row: `path,label[,category]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub category: Option<usize>,
    pub line: usize,
}

/// Relative paths are resolved against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (line, l) in data_lines(&text) {
        let fields: Vec<&str> = l.split(',').map(str::trim).collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(parse_err(path, line, "expected path,label[,category]"));
        }
        let label = fields[1]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad label {:?}", fields[1])))?;
        let category = match fields.get(2) {
            Some(c) => Some(
                c.parse()
                    .map_err(|_| parse_err(path, line, format!("bad category {c:?}")))?,
            ),
            None => None,
        };
        let p = Path::new(fields[0]);
        out.push(ManifestEntry {
            path: if p.is_absolute() { p.to_path_buf() } else { base.join(p) },
            label,
            category,
            line,
        });
    }
    if out.is_empty() {
        return Err(parse_err(path, 0, "manifest lists no samples"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn xyz_basic_and_comments() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "a.xyz", "# header\n0 0 0\n\n1 0 0\n");
        assert_eq!(load_xyz(&p).unwrap().points(), &[[0.0; 3], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn xyz_malformed_line_reports_position() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "a.xyz", "0 0 0\n1 x 0\n");
        match load_xyz(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn xyz_round_trip_is_exact() {
        let d = tempfile::tempdir().unwrap();
        let pts = vec![[0.1, -2.0 / 3.0, 1e-300], [std::f64::consts::PI, 5.0, -0.0]];
        let p = d.path().join("r.xyz");
        write_xyz(&p, &pts, None).unwrap();
        assert_eq!(load_xyz(&p).unwrap().points(), pts.as_slice());
    }

    #[test]
    fn labeled_xyz_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("l.xyz");
        write_xyz(&p, &[[0.0; 3], [1.0; 3]], Some(&[1, 0])).unwrap();
        let (c, l) = load_labeled_xyz(&p).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(l, Some(vec![1, 0]));
    }

    #[test]
    fn off_triangle_and_quad() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "t.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
        let m = load_off(&p).unwrap();
        assert_eq!((m.vertices.len(), m.faces.len()), (3, 1));
        let p = write(d.path(), "q.off", "OFF4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
        assert_eq!(load_off(&p).unwrap().faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn off_out_of_range_index_names_face_line() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "b.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n");
        match load_off(&p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 6);
                assert!(msg.contains('7'));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn off_bad_header_is_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "h.off", "PLY\n");
        assert!(matches!(load_off(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "m.csv", "# comment\na.xyz,2\n/abs/b.off,0,3\n");
        let m = load_manifest(&p).unwrap();
        assert_eq!(m[0].path, d.path().join("a.xyz"));
        assert_eq!((m[0].label, m[0].category), (2, None));
        assert_eq!(m[1].path, PathBuf::from("/abs/b.off"));
        assert_eq!(m[1].category, Some(3));
    }
}
