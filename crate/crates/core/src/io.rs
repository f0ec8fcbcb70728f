//! Mesh text format, Matrix Market files and CSV/JSON reports.
//!
//! Mesh files are plain text: a header line `dim n_vertices n_elements`,
//! then one line of `dim` coordinates per vertex, then one line of `dim + 1`
//! zero-based vertex indices per element. Blank lines and `#` comments are
//! ignored.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{ConvergenceTable, DmtResult, LambdaRow, SolverKind};
use crate::mesh::{Mesh, Point};
use crate::sparse::CsrMatrix;

/// Serializes a mesh; coordinates carry 17 significant digits and read back
/// bit-exactly.
pub fn mesh_to_string(mesh: &Mesh) -> String {
    let d = mesh.dim();
    let mut out = format!("{} {} {}\n", d, mesh.n_nodes(), mesh.n_elements());
    for p in mesh.coords() {
        let line: Vec<String> = p[..d].iter().map(|x| format!("{x:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    for k in 0..mesh.n_elements() {
        let line: Vec<String> = mesh.element(k).iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
    let (hl, header) = lines.next().ok_or_else(|| parse_err(0, "empty mesh file".into()))?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(hl, format!("bad header token '{t}'"))))
        .collect::<Result<_>>()?;
    let [dim, nv, ne] = head[..] else {
        return Err(parse_err(hl, "header must be 'dim n_vertices n_elements'".into()));
    };
    if !(2..=3).contains(&dim) {
        return Err(parse_err(hl, format!("dimension must be 2 or 3, got {dim}")));
    }
    let mut coords = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(0, "missing vertex lines".into()))?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad coordinate '{t}'"))))
            .collect::<Result<_>>()?;
        if vals.len() != dim {
            return Err(parse_err(ln, format!("expected {dim} coordinates, got {}", vals.len())));
        }
        let mut p: Point = [0.0; 3];
        p[..dim].copy_from_slice(&vals);
        coords.push(p);
    }
    let mut cells = Vec::with_capacity(ne * (dim + 1));
    for _ in 0..ne {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(0, "missing element lines".into()))?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(ln, format!("bad vertex index '{t}'"))))
            .collect::<Result<_>>()?;
        if idx.len() != dim + 1 {
            return Err(parse_err(
                ln,
                format!("expected {} vertex indices, got {}", dim + 1, idx.len()),
            ));
        }
        if let Some(v) = idx.iter().find(|&&v| v >= nv) {
            return Err(parse_err(ln, format!("vertex index {v} out of range")));
        }
        cells.extend_from_slice(&idx);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "trailing content after the last element".into()));
    }
    Mesh::new(dim, coords, cells)
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    parse_mesh(&fs::read_to_string(path)?)
}

pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    fs::write(path, mesh_to_string(mesh))?;
    Ok(())
}

/// Matrix Market `coordinate real general`, one-based indices.
pub fn matrix_market_string(a: &CsrMatrix) -> String {
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", a.nrows(), a.ncols(), a.nnz());
    for i in 0..a.nrows() {
        let (cols, vals) = a.row(i);
        for (j, v) in cols.iter().zip(vals) {
            let _ = writeln!(out, "{} {} {v:.16e}", i + 1, j + 1);
        }
    }
    out
}

/// Matrix Market `array real general` column vector.
pub fn matrix_market_vector_string(v: &[f64]) -> String {
    let mut out = String::from("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(out, "{} 1", v.len());
    for x in v {
        let _ = writeln!(out, "{x:.16e}");
    }
    out
}

/// Reads the coordinate format (general or symmetric).
pub fn parse_matrix_market(text: &str) -> Result<CsrMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, banner) = lines.next().ok_or(Error::Parse {
        line: 0,
        msg: "empty file".into(),
    })?;
    let banner = banner.to_ascii_lowercase();
    if !banner.starts_with("%%matrixmarket matrix coordinate real") {
        return Err(Error::Parse {
            line: 1,
            msg: "expected a real coordinate Matrix Market header".into(),
        });
    }
    let symmetric = banner.ends_with("symmetric");
    let mut body = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (sl, size) = body.next().ok_or(Error::Parse {
        line: 0,
        msg: "missing size line".into(),
    })?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| Error::Parse {
                line: sl,
                msg: format!("bad size token '{t}'"),
            })
        })
        .collect::<Result<_>>()?;
    let [nr, nc, nnz] = dims[..] else {
        return Err(Error::Parse {
            line: sl,
            msg: "size line must be 'rows cols entries'".into(),
        });
    };
    let mut trip = Vec::with_capacity(nnz);
    for (ln, l) in body {
        let t: Vec<&str> = l.split_whitespace().collect();
        let bad = || Error::Parse {
            line: ln,
            msg: format!("bad entry '{l}'"),
        };
        if t.len() != 3 {
            return Err(bad());
        }
        let i: usize = t[0].parse().map_err(|_| bad())?;
        let j: usize = t[1].parse().map_err(|_| bad())?;
        let v: f64 = t[2].parse().map_err(|_| bad())?;
        if i == 0 || j == 0 || i > nr || j > nc {
            return Err(bad());
        }
        trip.push((i - 1, j - 1, v));
        if symmetric && i != j {
            trip.push((j - 1, i - 1, v));
        }
    }
    Ok(CsrMatrix::from_triplets(nr, nc, &trip))
}

pub fn write_matrix_market(path: &Path, a: &CsrMatrix) -> Result<()> {
    fs::write(path, matrix_market_string(a))?;
    Ok(())
}

pub fn write_matrix_market_vector(path: &Path, v: &[f64]) -> Result<()> {
    fs::write(path, matrix_market_vector_string(v))?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6e}")).unwrap_or_default()
}

const ITERATION_COLUMNS: [SolverKind; 4] = [
    SolverKind::Cg,
    SolverKind::PcgAl,
    SolverKind::PcgMg1,
    SolverKind::PcgMg2,
];

/// One row per mesh; rates are empty on the first row. Wall times are left
/// out so identical runs produce identical files.
pub fn convergence_csv(table: &ConvergenceTable) -> String {
    let mut out = String::from(
        "case,m,n,h,n_p,threshold,lambda_m,l2_error,energy_error,l2_rate,energy_rate,kappa_a,kappa_pre,it_cg,it_pcg_al,it_pcg_mg1,it_pcg_mg2,converged,failure\n",
    );
    let (l2r, enr) = (table.l2_rates(), table.energy_rates());
    for (i, r) in table.rows.iter().enumerate() {
        let rate = |v: &[f64]| {
            if i == 0 {
                String::new()
            } else {
                format!("{:.4}", v[i - 1])
            }
        };
        let its: Vec<String> = ITERATION_COLUMNS
            .iter()
            .map(|k| {
                r.iterations_for(*k)
                    .map(|c| c.iterations.to_string())
                    .unwrap_or_default()
            })
            .collect();
        let failure = r.failure.as_deref().unwrap_or("").replace(['"', ','], ";");
        let _ = writeln!(
            out,
            "{},{},{},{:.6e},{},{},{:.6e},{:.6e},{:.6e},{},{},{},{},{},{},{}",
            table.case,
            table.m,
            r.n,
            r.h,
            r.n_p,
            r.threshold,
            r.lambda_m,
            r.l2_error,
            r.energy_error,
            rate(&l2r),
            rate(&enr),
            opt(r.kappa_a),
            opt(r.kappa_pre),
            its.join(","),
            r.converged,
            failure,
        );
    }
    out
}

pub fn lambda_csv(rows: &[LambdaRow]) -> String {
    let mut out = String::from("nm,lambda_m,max_depth\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.nm, opt(r.lambda_m), r.max_depth);
    }
    out
}

pub fn dmt_csv(rows: &[DmtResult]) -> String {
    let mut out = String::from("n,m,trials,seed,max_ratio,skipped\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6e},{}",
            r.n, r.m, r.trials, r.seed, r.max_ratio, r.skipped
        );
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("JSON encoding failed: {e}")))?;
    write_text(path, &(text + "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{ConvergenceRow, IterationCount};

    #[test]
    fn mesh_round_trip_is_exact() {
        for mesh in [Mesh::unit_square(5).unwrap(), Mesh::unit_cube(2).unwrap()] {
            let text = mesh_to_string(&mesh);
            let back = parse_mesh(&text).unwrap();
            assert_eq!(back.dim(), mesh.dim());
            assert_eq!(back.cells(), mesh.cells());
            assert_eq!(back.coords(), mesh.coords());
            assert_eq!(mesh_to_string(&back), text);
        }
    }

    #[test]
    fn awkward_coordinates_survive() {
        let coords = vec![
            [0.1, 1.0 / 3.0, 0.0],
            [1.0 + f64::EPSILON, 0.0, 0.0],
            [0.0, 2.0f64.sqrt(), 0.0],
        ];
        let mesh = Mesh::new(2, coords.clone(), vec![0, 1, 2]).unwrap();
        assert_eq!(parse_mesh(&mesh_to_string(&mesh)).unwrap().coords(), &coords[..]);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# unit triangle\n2 3 1\n\n0 0\n1 0 # right\n0 1\n0 1 2\n";
        let mesh = parse_mesh(text).unwrap();
        assert_eq!(mesh.n_elements(), 1);
        assert_eq!(mesh.point(1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn malformed_meshes_report_the_line() {
        let cases = [
            ("2 3 1\n0 0\n1 0\n0 1\n0 1 5\n", 5),
            ("2 3 1\n0 0\n1 x\n0 1\n0 1 2\n", 3),
            ("4 3 1\n", 1),
            ("2 3 1\n0 0\n1 0\n0 1\n0 1\n", 5),
            ("2 3 1\n0 0\n1 0\n0 1\n0 1 2\n7\n", 6),
        ];
        for (text, line) in cases {
            match parse_mesh(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(parse_mesh("2 3 1\n0 0\n1 0\n").is_err());
    }

    #[test]
    fn matrix_market_round_trip() {
        let a = CsrMatrix::from_triplets(3, 4, &[(0, 0, 1.5), (0, 3, -2.0), (2, 1, 1.0 / 3.0)]);
        let text = matrix_market_string(&a);
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general\n3 4 3\n"));
        let b = parse_matrix_market(&text).unwrap();
        assert_eq!(b.to_dense(), a.to_dense());
    }

    #[test]
    fn symmetric_matrix_market_is_expanded() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% note\n2 2 2\n1 1 4\n2 1 -1\n";
        let a = parse_matrix_market(text).unwrap();
        assert_eq!(a.get(0, 1), -1.0);
        assert_eq!(a.get(1, 0), -1.0);
    }

    #[test]
    fn vector_file_layout() {
        let text = matrix_market_vector_string(&[1.0, -0.5]);
        assert_eq!(text.lines().nth(1), Some("2 1"));
        assert_eq!(text.lines().count(), 4);
    }

    fn row(n: usize, l2: f64, en: f64) -> ConvergenceRow {
        ConvergenceRow {
            n,
            h: 1.0 / n as f64,
            n_p: (n - 1) * (n - 1),
            threshold: 9,
            lambda_m: 2.0,
            l2_error: l2,
            energy_error: en,
            kappa_a: None,
            kappa_pre: Some(10.0),
            iterations: vec![IterationCount {
                solver: SolverKind::PcgMg1,
                iterations: 20,
                converged: true,
                seconds: 0.5,
            }],
            converged: true,
            failure: None,
            seconds: 1.0,
        }
    }

    #[test]
    fn convergence_csv_layout() {
        let table = ConvergenceTable {
            case: "ex1".into(),
            m: 2,
            rows: vec![row(4, 1.0, 2.0), row(8, 0.25, 1.0), row(16, 0.0625, 0.5)],
        };
        let csv = convergence_csv(&table);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        let ncol = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == ncol));
        let second: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(second[9], "2.0000");
        assert_eq!(second[10], "1.0000");
        assert_eq!(second[11], "");
        assert_eq!(second[15], "20");
        assert!(lines[1].split(',').nth(9) == Some(""));
    }

    #[test]
    fn failure_messages_stay_in_one_column() {
        let mut r = row(4, 1.0, 1.0);
        r.failure = Some("bad, \"thing\"".into());
        let table = ConvergenceTable {
            case: "ex1".into(),
            m: 2,
            rows: vec![r],
        };
        let csv = convergence_csv(&table);
        let line = csv.lines().nth(1).unwrap();
        assert_eq!(line.split(',').count(), csv.lines().next().unwrap().split(',').count());
    }

    #[test]
    fn json_and_text_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/out.json");
        write_json(&path, &serde_json::json!({"a": 1})).unwrap();
        let back: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back["a"], 1);
        let mesh = Mesh::unit_square(2).unwrap();
        let mpath = dir.path().join("m.txt");
        write_mesh(&mpath, &mesh).unwrap();
        assert_eq!(read_mesh(&mpath).unwrap().n_elements(), 8);
    }
}
