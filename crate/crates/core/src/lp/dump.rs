use std::fmt::Write;

use super::{Layout, LpInstance, Sense};

fn var_name(layout: &Layout, j: usize) -> String {
    let n = layout.num_classes();
    match layout {
        Layout::SpTable { .. } => {
            let y = j % n;
            let jj = (j / n) % n;
            let block = j / (n * n);
            format!("z_a{}_c{}_j{}_y{}", block % 2, block / 2 + 1, jj + 1, y + 1)
        }
        _ => {
            let tp = 2 * n * layout.num_clients();
            if j < tp {
                let block = j / n;
                format!("z_a{}_c{}_y{}", block % 2, block / 2 + 1, j % n + 1)
            } else {
                let r = j - tp;
                let block = r / (n + 1);
                format!("f_a{}_c{}_{}", block % 2, block / 2 + 1, r % (n + 1))
            }
        }
    }
}

fn linear(out: &mut String, layout: &Layout, coeffs: &[f64]) {
    let mut first = true;
    for (j, c) in coeffs.iter().enumerate() {
        if *c == 0.0 {
            continue;
        }
        let sign = if *c < 0.0 {
            "-"
        } else if first {
            ""
        } else {
            "+"
        };
        let _ = write!(out, " {sign} {:.17e} {}", c.abs(), var_name(layout, j));
        first = false;
    }
    if first {
        out.push_str(" 0");
    }
}

/// Renders an instance in CPLEX LP text format.
pub fn to_lp_text(lp: &LpInstance) -> String {
    let mut out = String::new();
    out.push_str(match lp.sense {
        Sense::Minimize => "Minimize\n obj:",
        Sense::Maximize => "Maximize\n obj:",
    });
    linear(&mut out, &lp.layout, &lp.objective);
    out.push_str("\nSubject To\n");
    for r in &lp.fairness {
        let _ = write!(out, " {}_hi:", r.label);
        linear(&mut out, &lp.layout, &r.coeffs);
        let _ = writeln!(out, " <= {:.17e}", r.bound);
        let _ = write!(out, " {}_lo:", r.label);
        linear(&mut out, &lp.layout, &r.coeffs);
        let _ = writeln!(out, " >= {:.17e}", -r.bound);
    }
    let nv = lp.num_vars();
    for b in &lp.region {
        for (i, (row, l)) in b.k.iter().zip(&b.l).enumerate() {
            let mut coeffs = vec![0.0; nv];
            coeffs[b.offset..b.offset + row.len()].copy_from_slice(row);
            let _ = write!(out, " region_a{}_c{}_{}:", b.group, b.client + 1, i);
            linear(&mut out, &lp.layout, &coeffs);
            let _ = writeln!(out, " <= {:.17e}", l);
        }
    }
    for e in &lp.equalities {
        let _ = write!(out, " {}:", e.label);
        linear(&mut out, &lp.layout, &e.coeffs);
        let _ = writeln!(out, " = {:.17e}", e.rhs);
    }
    out.push_str("Bounds\n");
    for (j, u) in lp.upper.iter().enumerate() {
        let _ = writeln!(out, " 0 <= {} <= {:.17e}", var_name(&lp.layout, j), u);
    }
    out.push_str("End\n");
    out
}
