//! Deterministic text rendering of distributions and values.
//!
//! Three formats are supported:
//! * `table`   — human-readable; the full support for tabular results,
//!               mean/covariance blocks for continuous ones.
//! * `moments` — first and second moments only, any representation.
//! * `machine` — stable line-oriented `key=value` output (see
//!               `docs/output.md`).
//!
//! All numbers go through [`fmt_num`], so output is byte-identical across
//! runs with the same seed.

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::value::Value;

use super::fmt_num;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Table,
    Moments,
    Machine,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Format> {
        match s {
            "table" => Ok(Format::Table),
            "moments" => Ok(Format::Moments),
            "machine" => Ok(Format::Machine),
            other => Err(Error::DomainMismatch(format!(
                "unknown format `{other}` (use table, moments, or machine)"
            ))),
        }
    }
}

pub fn render_value(v: &Value) -> String {
    match v {
        Value::Num(x) => fmt_num(*x),
        Value::Label(s) => s.clone(),
    }
}

/// Renders a distribution in the requested format. The returned string
/// ends with a newline.
pub fn render_distribution(d: &Distribution, format: Format) -> Result<String> {
    match format {
        Format::Table => render_table(d),
        Format::Moments => render_moments(d),
        Format::Machine => render_machine(d),
    }
}

fn render_table(d: &Distribution) -> Result<String> {
    match d {
        Distribution::Tabular(t) => {
            let mut headers: Vec<String> = t.vars.clone();
            headers.push("probability".to_string());
            let mut rows: Vec<Vec<String>> = Vec::with_capacity(t.rows.len());
            for (vals, w) in &t.rows {
                let mut row: Vec<String> = vals.iter().map(render_value).collect();
                row.push(fmt_num(*w));
                rows.push(row);
            }
            let mut out = format!("P({})\n", t.vars.join(", "));
            out.push_str(&aligned(&headers, &rows));
            Ok(out)
        }
        Distribution::Gaussian(g) => {
            let mut out = format!("gaussian over ({})\n", g.vars.join(", "));
            out.push_str("mean:\n");
            for (i, v) in g.vars.iter().enumerate() {
                out.push_str(&format!("  {v} = {}\n", fmt_num(g.mean[i])));
            }
            out.push_str("covariance:\n");
            let cov = snap_cov(&g.cov);
            for i in 0..g.vars.len() {
                for j in i..g.vars.len() {
                    out.push_str(&format!(
                        "  cov[{}, {}] = {}\n",
                        g.vars[i],
                        g.vars[j],
                        fmt_num(cov[(i, j)])
                    ));
                }
            }
            for eq in constraint_equations(g) {
                out.push_str(&format!("constraint: {eq}\n"));
            }
            Ok(out)
        }
        Distribution::Particles(_) => render_moments(d),
    }
}

fn render_moments(d: &Distribution) -> Result<String> {
    let vars = d.variables().to_vec();
    let mut out = format!("moments over ({})\n", vars.join(", "));
    out.push_str("mean:\n");
    for v in &vars {
        out.push_str(&format!("  {v} = {}\n", fmt_num(d.mean(v)?)));
    }
    out.push_str("covariance:\n");
    for (i, a) in vars.iter().enumerate() {
        for b in &vars[i..] {
            out.push_str(&format!(
                "  cov[{a}, {b}] = {}\n",
                fmt_num(d.covariance(a, b)?)
            ));
        }
    }
    if let Distribution::Particles(p) = d {
        out.push_str(&format!("ess = {}\n", fmt_num(p.ess())));
    }
    Ok(out)
}

fn render_machine(d: &Distribution) -> Result<String> {
    let mut out = String::new();
    match d {
        Distribution::Tabular(t) => {
            out.push_str("kind=tabular\n");
            out.push_str(&format!("vars={}\n", t.vars.join(",")));
            for (vals, w) in &t.rows {
                let cells: Vec<String> = vals.iter().map(render_value).collect();
                out.push_str(&format!("row={}:{}\n", cells.join(","), fmt_num(*w)));
            }
        }
        Distribution::Gaussian(g) => {
            out.push_str("kind=gaussian\n");
            out.push_str(&format!("vars={}\n", g.vars.join(",")));
            let means: Vec<String> = (0..g.vars.len()).map(|i| fmt_num(g.mean[i])).collect();
            out.push_str(&format!("mean={}\n", means.join(",")));
            let cov = snap_cov(&g.cov);
            let rows: Vec<String> = (0..g.vars.len())
                .map(|i| {
                    (0..g.vars.len())
                        .map(|j| fmt_num(cov[(i, j)]))
                        .collect::<Vec<_>>()
                        .join(",")
                })
                .collect();
            out.push_str(&format!("cov={}\n", rows.join(";")));
            for eq in constraint_equations(g) {
                out.push_str(&format!("constraint={eq}\n"));
            }
        }
        Distribution::Particles(p) => {
            out.push_str("kind=particles\n");
            out.push_str(&format!("vars={}\n", p.vars.join(",")));
            let means: Vec<String> = p
                .vars
                .iter()
                .map(|v| d.mean(v).map(fmt_num))
                .collect::<Result<_>>()?;
            out.push_str(&format!("mean={}\n", means.join(",")));
            let rows: Vec<String> = p
                .vars
                .iter()
                .map(|a| {
                    p.vars
                        .iter()
                        .map(|b| d.covariance(a, b).map(fmt_num))
                        .collect::<Result<Vec<_>>>()
                        .map(|r| r.join(","))
                })
                .collect::<Result<_>>()?;
            out.push_str(&format!("cov={}\n", rows.join(";")));
            out.push_str(&format!("ess={}\n", fmt_num(p.ess())));
        }
    }
    Ok(out)
}

/// Column-aligned table body (headers plus rows), two-space gutters.
fn aligned(headers: &[String], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let mut push_row = |cells: &[String]| {
        for (i, cell) in cells.iter().enumerate() {
            out.push_str(cell);
            if i + 1 < cols {
                out.push_str(&" ".repeat(widths[i] - cell.len() + 2));
            }
        }
        out.push('\n');
    };
    push_row(headers);
    for row in rows {
        push_row(row);
    }
    out
}

const COEFF_EPS: f64 = 1e-9;

/// Snaps numerical noise in covariance entries to zero relative to the
/// matrix scale; anything below this cut is already reported exactly via
/// the deterministic-constraint lines.
fn snap_cov(m: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
    let scale = m.amax().max(1.0);
    m.map(|x| if x.abs() < crate::gaussian::RANK_TOL * scale { 0.0 } else { x })
}

/// Human-readable equations for the almost-sure linear constraints of a
/// degenerate Gaussian, solved for a pivot variable: `U_Y* = 3 - U_X*`.
/// The constraint system is put into reduced row echelon form first, so
/// the equations are canonical regardless of the eigenbasis they came from.
pub fn constraint_equations(g: &Gaussian) -> Vec<String> {
    let constraints = g.deterministic_constraints();
    if constraints.is_empty() {
        return Vec::new();
    }
    let n = g.dim();
    let k = constraints.len();
    // augmented matrix [A | rhs]
    let mut m = nalgebra::DMatrix::zeros(k, n + 1);
    for (r, (v, rhs)) in constraints.iter().enumerate() {
        for c in 0..n {
            m[(r, c)] = v[c];
        }
        m[(r, n)] = *rhs;
    }
    // Gauss-Jordan with partial pivoting, pivots in variable order
    let mut row = 0;
    let mut pivots: Vec<(usize, usize)> = Vec::new(); // (row, col)
    for col in 0..n {
        if row >= k {
            break;
        }
        let best = (row..k)
            .max_by(|&a, &b| m[(a, col)].abs().partial_cmp(&m[(b, col)].abs()).unwrap())
            .unwrap();
        if m[(best, col)].abs() < COEFF_EPS {
            continue;
        }
        m.swap_rows(row, best);
        let p = m[(row, col)];
        for c in col..=n {
            m[(row, c)] /= p;
        }
        for r in 0..k {
            if r != row && m[(r, col)].abs() > 0.0 {
                let f = m[(r, col)];
                for c in col..=n {
                    m[(r, c)] -= f * m[(row, c)];
                }
            }
        }
        pivots.push((row, col));
        row += 1;
    }
    let mut out = Vec::new();
    for (r, pivot) in pivots {
        let mut rendered = format!("{} = ", g.vars[pivot]);
        let constant = m[(r, n)];
        let mut terms: Vec<(f64, &str)> = Vec::new();
        for i in 0..n {
            if i == pivot {
                continue;
            }
            let coeff = -m[(r, i)];
            if coeff.abs() >= COEFF_EPS {
                terms.push((coeff, &g.vars[i]));
            }
        }
        let mut first = true;
        if constant.abs() >= COEFF_EPS || terms.is_empty() {
            let c = if constant.abs() < COEFF_EPS { 0.0 } else { constant };
            rendered.push_str(&fmt_num(c));
            first = false;
        }
        for (k, name) in terms {
            if first {
                if k < 0.0 {
                    rendered.push('-');
                }
                first = false;
            } else {
                rendered.push_str(if k < 0.0 { " - " } else { " + " });
            }
            let mag = k.abs();
            if (mag - 1.0).abs() >= COEFF_EPS {
                rendered.push_str(&fmt_num(mag));
                rendered.push('*');
            }
            rendered.push_str(name);
        }
        out.push(rendered);
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::Tabular;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn tabular_table_is_aligned_and_complete() {
        let t = Tabular::new(
            vec!["X".into(), "P".into()],
            vec![
                (vec![Value::num(0.0), Value::num(1.0)], 0.25),
                (vec![Value::num(1.0), Value::num(0.0)], 0.75),
            ],
        )
        .unwrap();
        let s = render_table(&Distribution::Tabular(t)).unwrap();
        assert!(s.starts_with("P(X, P)\n"));
        assert!(s.contains("0.25"));
        assert!(s.contains("0.75"));
    }

    #[test]
    fn constraint_equation_solves_for_the_pivot() {
        // X + Y = 3 almost surely, X free
        let g = Gaussian::new(
            vec!["X".into(), "Y".into()],
            DVector::from_row_slice(&[1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]),
        )
        .unwrap();
        let eqs = constraint_equations(&g);
        assert_eq!(eqs.len(), 1);
        let eq = &eqs[0];
        assert!(eq == "X = 3 - Y" || eq == "Y = 3 - X", "{eq}");
    }

    #[test]
    fn machine_output_is_line_oriented() {
        let g = Gaussian::standard(vec!["A".into()]);
        let s = render_machine(&Distribution::Gaussian(g)).unwrap();
        assert_eq!(s, "kind=gaussian\nvars=A\nmean=0\ncov=1\n");
    }
}
