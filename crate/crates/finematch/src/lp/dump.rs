//! Plain-text model dump for cross-checking against external solvers.
//!
//! The format is line oriented, whitespace separated, and fully described by
//! this grammar (one record per line, `#` starts a comment):
//!
//! ```text
//! file      := header var* row* "end"
//! header    := "problem" name NL "direction" "min" NL
//!              "vars" count NL "rows" count NL
//! var       := "var" index name lower upper obj_coef NL
//! row       := "row" index name sense rhs nnz (index ":" coef)* NL
//! sense     := "le" | "ge" | "eq"
//! ```
//!
//! Bounds may be `-inf` or `inf`; every other number is a plain decimal.
//! Row entries list only nonzero coefficients, in increasing variable index.

use std::io::{self, Write};

use super::LinearProgram;

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Writes `lp` in the documented text format.
pub fn write_model(lp: &LinearProgram, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "# linear program dump, format v1")?;
    writeln!(out, "problem {}", lp.name)?;
    writeln!(out, "direction min")?;
    writeln!(out, "vars {}", lp.n)?;
    writeln!(out, "rows {}", lp.constraints.len())?;
    for j in 0..lp.n {
        writeln!(
            out,
            "var {} {} {} {} {}",
            j,
            lp.var_name(j),
            num(lp.lower[j]),
            num(lp.upper[j]),
            num(lp.objective[j])
        )?;
    }
    for (i, c) in lp.constraints.iter().enumerate() {
        let name = if c.name.is_empty() { format!("r{i}") } else { c.name.clone() };
        let entries: Vec<(usize, f64)> = c
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(j, &a)| (j, a))
            .collect();
        write!(out, "row {} {} {} {} {}", i, name, c.rel.symbol(), num(c.rhs), entries.len())?;
        for (j, a) in entries {
            write!(out, " {}:{}", j, num(a))?;
        }
        writeln!(out)?;
    }
    writeln!(out, "end")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{Constraint, Relation};

    #[test]
    fn dump_has_documented_shape() {
        let lp = LinearProgram {
            name: "demo".into(),
            n: 2,
            objective: vec![0.0, 1.0],
            constraints: vec![Constraint {
                name: "total".into(),
                coeffs: vec![1.0, 1.0],
                rel: Relation::Eq,
                rhs: 2.0,
            }],
            lower: vec![0.0, 0.0],
            upper: vec![1.0, f64::INFINITY],
            var_names: Some(vec!["z[0]".into(), "v[0]".into()]),
        };
        let mut buf = Vec::new();
        write_model(&lp, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "problem demo");
        assert_eq!(lines[2], "direction min");
        assert_eq!(lines[3], "vars 2");
        assert_eq!(lines[4], "rows 1");
        assert_eq!(lines[5], "var 0 z[0] 0 1 0");
        assert_eq!(lines[6], "var 1 v[0] 0 inf 1");
        assert_eq!(lines[7], "row 0 total eq 2 2 0:1 1:1");
        assert_eq!(lines.last().unwrap(), &"end");
    }
}
