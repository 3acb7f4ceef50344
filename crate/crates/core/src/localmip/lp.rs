//! CPLEX-LP writer and reader.
//!
//! Threshold terms are linearized with a binary `z` (set when `e < th`) and
//! a bounded continuous `y = e·z`:
//!
//! ```text
//! e + M z ≤ th − ε + M        e + M z ≥ th
//! y − M z ≤ 0                 y + M z ≥ 0
//! y − e + M z ≤ M             y − e − M z ≥ −M
//! ```
//!
//! Each term is also written as a `\@piecewise` comment so that
//! [`parse_lp`] can restore the original program instead of the
//! linearization.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Constraint, IntegerProgram, Piecewise, Sense, Variable};
use crate::error::{Error, Result};

pub const EPSILON: f64 = 1e-6;
const TERMS_PER_LINE: usize = 8;

fn push_terms(out: &mut String, terms: impl IntoIterator<Item = (f64, String)>) -> bool {
    let mut any = false;
    for (k, (c, name)) in terms.into_iter().enumerate() {
        if k > 0 && k % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let sign = if c.is_sign_negative() { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {name}", c.abs());
        any = true;
    }
    any
}

fn sense_str(s: Sense) -> &'static str {
    match s {
        Sense::Le => "<=",
        Sense::Eq => "=",
        Sense::Ge => ">=",
    }
}

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && !name.starts_with(|c: char| c.is_ascii_digit() || c == '.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "_.[]".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("name {name:?} cannot be written to an LP file")))
    }
}

pub fn export_lp(ip: &IntegerProgram) -> Result<String> {
    for v in &ip.vars {
        check_name(&v.name)?;
    }
    for c in &ip.constraints {
        check_name(&c.name)?;
    }
    for p in &ip.piecewise {
        check_name(&p.name)?;
    }
    let m = ip.big_m();
    let name = |v: usize| ip.vars[v].name.clone();
    let mut out = String::new();
    let _ = writeln!(out, "\\ program {}", if ip.name.is_empty() { "-" } else { &ip.name });
    let _ = writeln!(out, "\\@constant {}", ip.constant);
    for p in &ip.piecewise {
        let _ = write!(out, "\\@piecewise {} {} {} {}", p.name, p.coef, p.threshold, p.constant);
        for &(v, a) in &p.terms {
            let _ = write!(out, " {}:{}", name(v), a);
        }
        out.push('\n');
    }
    out.push_str("Maximize\n obj:");
    let mut obj: Vec<(f64, String)> = ip.objective.iter().map(|&(v, c)| (c, name(v))).collect();
    obj.extend(ip.piecewise.iter().map(|p| (p.coef, format!("{}__y", p.name))));
    let any = push_terms(&mut out, obj);
    if ip.constant != 0.0 || !any {
        let sign = if ip.constant.is_sign_negative() { '-' } else { '+' };
        let _ = write!(out, " {sign} {}", ip.constant.abs());
    }
    out.push_str("\nSubject To\n");
    for c in &ip.constraints {
        let _ = write!(out, " {}:", c.name);
        if !push_terms(&mut out, c.terms.iter().map(|&(v, a)| (a, name(v)))) {
            out.push_str(" 0 __zero");
        }
        let _ = writeln!(out, " {} {}", sense_str(c.sense), c.rhs);
    }
    for p in &ip.piecewise {
        let e: Vec<(f64, String)> = p.terms.iter().map(|&(v, a)| (a, name(v))).collect();
        let (y, z) = (format!("{}__y", p.name), format!("{}__z", p.name));
        let rows: [(&str, Vec<(f64, String)>, Sense, f64); 6] = [
            ("lt", [e.clone(), vec![(m, z.clone())]].concat(), Sense::Le, p.threshold - EPSILON + m - p.constant),
            ("ge", [e.clone(), vec![(m, z.clone())]].concat(), Sense::Ge, p.threshold - p.constant),
            ("yu", vec![(1.0, y.clone()), (-m, z.clone())], Sense::Le, 0.0),
            ("yl", vec![(1.0, y.clone()), (m, z.clone())], Sense::Ge, 0.0),
            ("eu", [vec![(1.0, y.clone())], neg(&e), vec![(m, z.clone())]].concat(), Sense::Le, p.constant + m),
            ("el", [vec![(1.0, y.clone())], neg(&e), vec![(-m, z.clone())]].concat(), Sense::Ge, p.constant - m),
        ];
        for (tag, terms, sense, rhs) in rows {
            let _ = write!(out, " {}__{tag}:", p.name);
            push_terms(&mut out, terms);
            let _ = writeln!(out, " {} {}", sense_str(sense), rhs);
        }
    }
    out.push_str("Bounds\n");
    for v in &ip.vars {
        let _ = writeln!(out, " 0 <= {} <= {}", v.name, v.ub);
    }
    for p in &ip.piecewise {
        let _ = writeln!(out, " -{m} <= {}__y <= {m}", p.name);
    }
    out.push_str("General\n");
    for v in &ip.vars {
        let _ = writeln!(out, " {}", v.name);
    }
    out.push_str("Binary\n");
    for p in &ip.piecewise {
        let _ = writeln!(out, " {}__z", p.name);
    }
    out.push_str("End\n");
    Ok(out)
}

fn neg(e: &[(f64, String)]) -> Vec<(f64, String)> {
    e.iter().map(|(a, n)| (-a, n.clone())).collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Preamble,
    Objective,
    Constraints,
    Bounds,
    General,
    Binary,
    End,
}

fn parse_num(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::invalid(format!("bad number {s:?} in LP text")))
}

/// Parses `± c name ± c name ...` (coefficients required, as written by
/// [`export_lp`]). Bare numbers are returned as the constant.
fn parse_expr(text: &str) -> Result<(Vec<(f64, String)>, f64)> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let mut terms = Vec::new();
    let mut constant = 0.0;
    let mut k = 0;
    while k < toks.len() {
        let sign = match toks[k] {
            "+" => 1.0,
            "-" => -1.0,
            _ => return Err(Error::invalid(format!("expected sign, found {:?}", toks[k]))),
        };
        let coef = parse_num(toks.get(k + 1).ok_or_else(|| Error::invalid("dangling sign in LP text"))?)?;
        match toks.get(k + 2) {
            Some(&t) if t != "+" && t != "-" => {
                terms.push((sign * coef, t.to_string()));
                k += 3;
            }
            _ => {
                constant += sign * coef;
                k += 2;
            }
        }
    }
    Ok((terms, constant))
}

/// Reads text produced by [`export_lp`] back into the program it came from.
pub fn parse_lp(text: &str) -> Result<IntegerProgram> {
    let mut ip = IntegerProgram::new("");
    let mut pw_raw: Vec<(String, f64, f64, f64, Vec<(String, f64)>)> = Vec::new();
    let mut statements: Vec<(Section, String)> = Vec::new();
    let mut section = Section::Preamble;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('\\') {
            let mut it = rest.split_whitespace();
            match it.next() {
                Some("program") => ip.name = it.next().filter(|n| *n != "-").unwrap_or("").to_string(),
                Some("@constant") => ip.constant = parse_num(it.next().unwrap_or(""))?,
                Some("@piecewise") => {
                    let f: Vec<&str> = it.collect();
                    if f.len() < 4 {
                        return Err(Error::invalid("malformed piecewise annotation"));
                    }
                    let terms = f[4..]
                        .iter()
                        .map(|t| {
                            let (n, a) = t.rsplit_once(':').ok_or_else(|| Error::invalid("malformed piecewise term"))?;
                            Ok((n.to_string(), parse_num(a)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    pw_raw.push((f[0].to_string(), parse_num(f[1])?, parse_num(f[2])?, parse_num(f[3])?, terms));
                }
                _ => {}
            }
            continue;
        }
        let trimmed = line.trim();
        let header = match trimmed.to_ascii_lowercase().as_str() {
            "maximize" | "maximise" | "max" => Some(Section::Objective),
            "subject to" | "st" | "s.t." => Some(Section::Constraints),
            "bounds" => Some(Section::Bounds),
            "general" | "generals" | "gen" => Some(Section::General),
            "binary" | "binaries" | "bin" => Some(Section::Binary),
            "end" => Some(Section::End),
            _ => None,
        };
        if let Some(h) = header {
            section = h;
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        if line.starts_with("   ") && matches!(section, Section::Objective | Section::Constraints) {
            let last = statements.last_mut().ok_or_else(|| Error::invalid("continuation without statement"))?;
            last.1.push(' ');
            last.1.push_str(trimmed);
        } else {
            statements.push((section, trimmed.to_string()));
        }
    }
    let aux = |n: &str| pw_raw.iter().any(|p| n.starts_with(&format!("{}__", p.0)));
    let mut names: HashMap<String, usize> = HashMap::new();
    let mut objective_text = String::new();
    let mut rows = Vec::new();
    for (sec, s) in &statements {
        match sec {
            Section::Objective => objective_text = s.clone(),
            Section::Constraints => rows.push(s.clone()),
            Section::Bounds => {
                let parts: Vec<&str> = s.split_whitespace().collect();
                if parts.len() != 5 || parts[1] != "<=" || parts[3] != "<=" {
                    return Err(Error::invalid(format!("unsupported bound line {s:?}")));
                }
                if aux(parts[2]) {
                    continue;
                }
                let ub = parse_num(parts[4])?;
                if parse_num(parts[0])? != 0.0 || ub < 0.0 || ub.fract() != 0.0 {
                    return Err(Error::invalid(format!("bounds of {} are not an integer range from zero", parts[2])));
                }
                names.insert(parts[2].to_string(), ip.vars.len());
                ip.vars.push(Variable { name: parts[2].to_string(), ub: ub as u32 });
            }
            Section::General => {
                if !names.contains_key(s.as_str()) {
                    return Err(Error::invalid(format!("integer variable {s} has no bounds")));
                }
            }
            _ => {}
        }
    }
    let lookup = |n: &str| names.get(n).copied().ok_or_else(|| Error::invalid(format!("unknown variable {n}")));
    let body = objective_text.split_once(':').map_or(objective_text.as_str(), |(_, b)| b);
    let (terms, _) = parse_expr(body)?;
    for (c, n) in terms {
        if !aux(&n) {
            ip.objective.push((lookup(&n)?, c));
        }
    }
    for r in rows {
        let (cname, rest) = r.split_once(':').ok_or_else(|| Error::invalid(format!("constraint without name: {r:?}")))?;
        let cname = cname.trim();
        if aux(cname) {
            continue;
        }
        let (sense, pos) = ["<=", ">=", "="]
            .iter()
            .find_map(|op| rest.find(op).map(|p| (*op, p)))
            .ok_or_else(|| Error::invalid(format!("constraint {cname} has no sense")))?;
        let (lhs, rhs) = (&rest[..pos], &rest[pos + sense.len()..]);
        let sense = match sense {
            "<=" => Sense::Le,
            ">=" => Sense::Ge,
            _ => Sense::Eq,
        };
        let terms = if lhs.trim() == "0 __zero" {
            Vec::new()
        } else {
            parse_expr(lhs)?.0.into_iter().map(|(c, n)| Ok((lookup(&n)?, c))).collect::<Result<Vec<_>>>()?
        };
        ip.constraints.push(Constraint { name: cname.to_string(), terms, sense, rhs: parse_num(rhs.trim())? });
    }
    for (name, coef, threshold, constant, terms) in pw_raw {
        let terms = terms.into_iter().map(|(n, a)| Ok((lookup(&n)?, a))).collect::<Result<Vec<_>>>()?;
        ip.piecewise.push(Piecewise { name, coef, constant, terms, threshold });
    }
    Ok(ip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> IntegerProgram {
        let mut ip = IntegerProgram::new("toy");
        let a = ip.add_var("a", 3);
        let b = ip.add_var("b", 2);
        ip.objective = vec![(a, 1.5), (b, -0.25)];
        ip.constant = -2.0;
        ip.add_constraint("cap", vec![(a, 1.0), (b, 1.0)], Sense::Le, 4.0);
        ip.add_constraint("link", vec![(a, 2.0), (b, -1.0)], Sense::Ge, -1.0);
        ip.piecewise.push(Piecewise { name: "g0".into(), coef: 1.0, constant: -3.0, terms: vec![(a, 1.0), (b, -1.0)], threshold: 0.5 });
        ip
    }

    #[test]
    fn empty_program_round_trips() {
        let ip = IntegerProgram::new("empty");
        let text = export_lp(&ip).unwrap();
        assert!(text.contains("Maximize") && text.contains("Subject To") && text.contains("End"));
        assert_eq!(parse_lp(&text).unwrap(), ip);
    }

    #[test]
    fn small_program_round_trips() {
        let ip = sample();
        let text = export_lp(&ip).unwrap();
        assert_eq!(parse_lp(&text).unwrap(), ip);
    }

    #[test]
    fn long_rows_wrap_and_round_trip() {
        let mut ip = IntegerProgram::new("wide");
        let vars: Vec<usize> = (0..30).map(|k| ip.add_var(format!("x{k}"), 2)).collect();
        ip.objective = vars.iter().map(|&v| (v, 0.1 * v as f64 - 1.0)).collect();
        ip.add_constraint("row", vars.iter().map(|&v| (v, 1.0 / (1.0 + v as f64))).collect(), Sense::Le, 3.3);
        let text = export_lp(&ip).unwrap();
        assert!(text.lines().all(|l| l.len() < 255));
        assert_eq!(parse_lp(&text).unwrap(), ip);
    }

    #[test]
    fn linearization_rows_present() {
        let text = export_lp(&sample()).unwrap();
        for tag in ["lt", "ge", "yu", "yl", "eu", "el"] {
            assert!(text.contains(&format!("g0__{tag}:")), "{tag}");
        }
        assert!(text.contains("Binary\n g0__z"));
    }

    #[test]
    fn bad_names_rejected() {
        let mut ip = IntegerProgram::new("x");
        let a = ip.add_var("has space", 1);
        ip.objective.push((a, 1.0));
        assert!(export_lp(&ip).is_err());
    }
}
