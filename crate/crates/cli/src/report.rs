//! Plain-text tables for stdout.

use std::fmt::Write;

use biharm_core::experiments::{ConvergenceTable, DmtResult, LambdaRow, SolverKind};

fn sci(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.3e}")
    } else {
        "-".into()
    }
}

fn fixed(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.2}")
    } else {
        "-".into()
    }
}

/// Right-aligns every column to its widest cell.
fn render(header: &[String], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, header);
    for r in rows {
        line(&mut out, r);
    }
    out
}

/// Convergence table with rates, optional condition numbers and one
/// iteration column per solver that ran. `n_label` names the first column.
pub fn convergence(table: &ConvergenceTable, n_label: &str) -> String {
    let solvers: Vec<SolverKind> = [
        SolverKind::Cg,
        SolverKind::PcgAl,
        SolverKind::PcgMg1,
        SolverKind::PcgMg2,
    ]
    .into_iter()
    .filter(|&s| table.rows.iter().any(|r| r.iterations_for(s).is_some()))
    .collect();
    let conditions = table.rows.iter().any(|r| r.kappa_a.is_some());

    let mut header: Vec<String> = [
        n_label, "h", "n_p", "N_m", "Lambda_m", "L2 error", "rate", "energy", "rate",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if conditions {
        header.push("k(A)".into());
        header.push("k(AL^-1 A)".into());
    }
    header.extend(solvers.iter().map(|s| s.name().to_string()));

    let l2 = table.l2_rates();
    let en = table.energy_rates();
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let rate = |v: &[f64]| if i == 0 { String::new() } else { fixed(v[i - 1]) };
            let mut c = vec![
                r.n.to_string(),
                format!("{:.4}", r.h),
                r.n_p.to_string(),
                r.threshold.to_string(),
                fixed(r.lambda_m),
                sci(r.l2_error),
                rate(&l2),
                sci(r.energy_error),
                rate(&en),
            ];
            if conditions {
                c.push(r.kappa_a.map_or("-".into(), sci));
                c.push(r.kappa_pre.map_or("-".into(), fixed));
            }
            for &s in &solvers {
                c.push(match r.iterations_for(s) {
                    Some(it) if it.converged => it.iterations.to_string(),
                    Some(it) => format!("{}*", it.iterations),
                    None => "-".into(),
                });
            }
            c
        })
        .collect();

    let mut out = format!("{} m={}\n", table.case, table.m);
    out += &render(&header, &rows);
    let fitted = |h: &[f64], e: &[f64]| {
        if e.iter().all(|x| x.is_finite()) {
            fixed(biharm_core::experiments::fitted_rate(h, e))
        } else {
            "-".into()
        }
    };
    let h: Vec<f64> = table.rows.iter().map(|r| r.h).collect();
    let e2: Vec<f64> = table.rows.iter().map(|r| r.l2_error).collect();
    let ee: Vec<f64> = table.rows.iter().map(|r| r.energy_error).collect();
    let _ = writeln!(out, "fitted rates: L2 {}, energy {}", fitted(&h, &e2), fitted(&h, &ee));
    for r in &table.rows {
        if let Some(f) = &r.failure {
            let _ = writeln!(out, "row {}: {f}", r.n);
        }
    }
    if table.rows.iter().any(|r| r.iterations.iter().any(|it| !it.converged)) {
        let _ = writeln!(out, "* did not reach the tolerance");
    }
    out
}

pub fn lambda(rows: &[LambdaRow]) -> String {
    let header: Vec<String> = ["N_m", "Lambda_m", "t_max"].iter().map(|s| s.to_string()).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.nm.to_string(),
                r.lambda_m.map_or("singular".into(), fixed),
                r.max_depth.to_string(),
            ]
        })
        .collect();
    render(&header, &body)
}

pub fn dmt(rows: &[DmtResult], label: &str) -> String {
    let header: Vec<String> = [label, "m", "trials", "max ratio", "skipped"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.m.to_string(),
                r.trials.to_string(),
                format!("{:.4}", r.max_ratio),
                r.skipped.to_string(),
            ]
        })
        .collect();
    let mut out = render(&header, &body);
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        if first.max_ratio > 0.0 {
            let _ = writeln!(out, "growth first -> last: {:.3}", last.max_ratio / first.max_ratio);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_are_aligned() {
        let h = vec!["a".to_string(), "bbb".to_string()];
        let rows = vec![vec!["100".to_string(), "1".to_string()]];
        assert_eq!(render(&h, &rows), "  a  bbb\n100    1\n");
    }

    #[test]
    fn non_finite_prints_dash() {
        assert_eq!(sci(f64::NAN), "-");
        assert_eq!(fixed(2.0), "2.00");
    }
}
