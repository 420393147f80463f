//! Line-oriented native case format.
//!
//! ```text
//! # comment
//! BASEMVA 100
//! BUS
//! # id  type   vm    va_deg  pd    qd    gs  bs    base_kv
//!   1   SLACK  1.06  0       0     0     0   0     132
//! BRANCH
//! # from to  r        x        b       tap    shift_deg  status
//!   1    2   0.01938  0.05917  0.0528  1      0          1
//! GEN
//! # bus pg  qg  p_min p_max q_min q_max v_set cost_a cost_b
//!   1   200 0   0     300   -50   50    1.06  0.043  20
//! ```
//!
//! Bus types are `SLACK`, `PV` and `PQ`. Angles are degrees, powers MW/MVar,
//! impedances per-unit. Everything after `#` on a line is ignored.

use std::fmt::Write as _;

use crate::error::CaseError;
use crate::network::{Branch, Bus, BusKind, Generator, NetworkCase};

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Bus,
    Branch,
    Gen,
}

fn number(token: &str, line: usize, column: usize) -> Result<f64, CaseError> {
    token
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CaseError::Malformed {
            line,
            column,
            text: token.to_string(),
        })
}

fn integer(token: &str, line: usize, column: usize) -> Result<usize, CaseError> {
    token.parse::<usize>().map_err(|_| CaseError::Malformed {
        line,
        column,
        text: token.to_string(),
    })
}

fn expect_columns(fields: &[&str], n: usize, line: usize, what: &str) -> Result<(), CaseError> {
    if fields.len() != n {
        return Err(CaseError::Syntax {
            line,
            message: format!("{what} row needs {n} columns, found {}", fields.len()),
        });
    }
    Ok(())
}

/// Parse and validate a case in the native format.
pub fn parse_native_case(text: &str) -> Result<NetworkCase, CaseError> {
    let mut base_mva = None;
    let mut section = None;
    let mut seen = Vec::new();
    let mut case = NetworkCase {
        base_mva: 0.0,
        buses: Vec::new(),
        branches: Vec::new(),
        generators: Vec::new(),
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let header = fields[0].to_ascii_uppercase();
        let next = match header.as_str() {
            "BASEMVA" => {
                expect_columns(&fields, 2, line, "BASEMVA")?;
                if base_mva.is_some() {
                    return Err(CaseError::Syntax {
                        line,
                        message: "duplicate BASEMVA".into(),
                    });
                }
                base_mva = Some(number(fields[1], line, 2)?);
                continue;
            }
            "BUS" => Some(Section::Bus),
            "BRANCH" => Some(Section::Branch),
            "GEN" => Some(Section::Gen),
            _ => None,
        };
        if let Some(next) = next {
            if fields.len() != 1 {
                return Err(CaseError::Syntax {
                    line,
                    message: format!("section header {header} takes no arguments"),
                });
            }
            if seen.contains(&next) {
                return Err(CaseError::Syntax {
                    line,
                    message: format!("duplicate {header} section"),
                });
            }
            seen.push(next);
            section = Some(next);
            continue;
        }

        match section {
            None => {
                return Err(CaseError::Syntax {
                    line,
                    message: format!("data outside of a section: {content:?}"),
                })
            }
            Some(Section::Bus) => {
                expect_columns(&fields, 9, line, "BUS")?;
                let kind = match fields[1].to_ascii_uppercase().as_str() {
                    "SLACK" => BusKind::Slack,
                    "PV" => BusKind::Pv,
                    "PQ" => BusKind::Pq,
                    other => {
                        return Err(CaseError::Syntax {
                            line,
                            message: format!("unknown bus type {other:?}"),
                        })
                    }
                };
                case.buses.push(Bus {
                    id: integer(fields[0], line, 1)?,
                    kind,
                    vm: number(fields[2], line, 3)?,
                    va: number(fields[3], line, 4)?.to_radians(),
                    pd: number(fields[4], line, 5)?,
                    qd: number(fields[5], line, 6)?,
                    gs: number(fields[6], line, 7)?,
                    bs: number(fields[7], line, 8)?,
                    base_kv: number(fields[8], line, 9)?,
                });
            }
            Some(Section::Branch) => {
                expect_columns(&fields, 8, line, "BRANCH")?;
                let status = integer(fields[7], line, 8)?;
                if status > 1 {
                    return Err(CaseError::Syntax {
                        line,
                        message: format!("branch status must be 0 or 1, got {status}"),
                    });
                }
                case.branches.push(Branch {
                    from_bus: integer(fields[0], line, 1)?,
                    to_bus: integer(fields[1], line, 2)?,
                    r: number(fields[2], line, 3)?,
                    x: number(fields[3], line, 4)?,
                    b_charging: number(fields[4], line, 5)?,
                    tap: number(fields[5], line, 6)?,
                    shift: number(fields[6], line, 7)?.to_radians(),
                    in_service: status == 1,
                });
            }
            Some(Section::Gen) => {
                expect_columns(&fields, 10, line, "GEN")?;
                case.generators.push(Generator {
                    bus: integer(fields[0], line, 1)?,
                    pg: number(fields[1], line, 2)?,
                    qg: number(fields[2], line, 3)?,
                    p_min: number(fields[3], line, 4)?,
                    p_max: number(fields[4], line, 5)?,
                    q_min: number(fields[5], line, 6)?,
                    q_max: number(fields[6], line, 7)?,
                    v_set: number(fields[7], line, 8)?,
                    cost_a: number(fields[8], line, 9)?,
                    cost_b: number(fields[9], line, 10)?,
                });
            }
        }
    }

    let last = text.lines().count();
    case.base_mva = base_mva.ok_or(CaseError::Syntax {
        line: last,
        message: "missing BASEMVA".into(),
    })?;
    for (required, name) in [(Section::Bus, "BUS"), (Section::Gen, "GEN")] {
        if !seen.contains(&required) {
            return Err(CaseError::Syntax {
                line: last,
                message: format!("missing {name} section"),
            });
        }
    }
    case.validated()
}

/// Degrees value that maps back onto `radians` bit-exactly through
/// `f64::to_radians`, so that serialized cases re-parse to the same angles.
pub(crate) fn exact_degrees(radians: f64) -> f64 {
    let guess = radians.to_degrees();
    if guess.to_radians() == radians {
        return guess;
    }
    let mut lo = guess;
    let mut hi = guess;
    for _ in 0..64 {
        lo = lo.next_down();
        hi = hi.next_up();
        if lo.to_radians() == radians {
            return lo;
        }
        if hi.to_radians() == radians {
            return hi;
        }
    }
    guess
}

fn kind_token(kind: BusKind) -> &'static str {
    match kind {
        BusKind::Slack => "SLACK",
        BusKind::Pv => "PV",
        BusKind::Pq => "PQ",
    }
}

/// Render a case in the native format. Parsing the output yields a case
/// equal field-for-field to the input.
pub fn write_native_case(case: &NetworkCase) -> String {
    let mut out = String::new();
    writeln!(out, "BASEMVA {}", case.base_mva).unwrap();
    out.push_str("BUS\n# id type vm va_deg pd qd gs bs base_kv\n");
    for b in &case.buses {
        writeln!(
            out,
            "{} {} {} {} {} {} {} {} {}",
            b.id,
            kind_token(b.kind),
            b.vm,
            exact_degrees(b.va),
            b.pd,
            b.qd,
            b.gs,
            b.bs,
            b.base_kv
        )
        .unwrap();
    }
    out.push_str("BRANCH\n# from to r x b tap shift_deg status\n");
    for br in &case.branches {
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            br.from_bus,
            br.to_bus,
            br.r,
            br.x,
            br.b_charging,
            br.tap,
            exact_degrees(br.shift),
            u8::from(br.in_service)
        )
        .unwrap();
    }
    out.push_str("GEN\n# bus pg qg p_min p_max q_min q_max v_set cost_a cost_b\n");
    for g in &case.generators {
        writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {}",
            g.bus, g.pg, g.qg, g.p_min, g.p_max, g.q_min, g.q_max, g.v_set, g.cost_a, g.cost_b
        )
        .unwrap();
    }
    out
}

/// Parse a cost sidecar: one `<gen index> <cost_a> <cost_b>` row per line,
/// generator index 1-based in case order.
pub fn parse_costs(text: &str) -> Result<Vec<(usize, f64, f64)>, CaseError> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        expect_columns(&fields, 3, line, "cost")?;
        rows.push((
            integer(fields[0], line, 1)?,
            number(fields[1], line, 2)?,
            number(fields[2], line, 3)?,
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    const SINGLE: &str = "\
BASEMVA 100
BUS
1 SLACK 1.0 0 0 0 0 0 132
GEN
1 0 0 0 10 -10 10 1.0 0 0
";

    #[test]
    fn bundled_case_shape() {
        let case = parse_native_case(cases::IEEE14_CASE).unwrap();
        assert_eq!(case.buses.len(), 14);
        assert_eq!(case.branches.len(), 20);
        assert_eq!(case.generators.len(), 5);
        assert_eq!(case.branches.iter().filter(|b| b.is_transformer()).count(), 3);
        let loads = case.buses.iter().filter(|b| b.pd != 0.0 || b.qd != 0.0).count();
        assert_eq!(loads, 11);
    }

    #[test]
    fn single_bus_case_without_branches() {
        let case = parse_native_case(SINGLE).unwrap();
        assert_eq!(case.buses.len(), 1);
        assert!(case.branches.is_empty());
    }

    #[test]
    fn two_slack_buses_is_semantic_error() {
        let text = "\
BASEMVA 100
BUS
1 SLACK 1.0 0 0 0 0 0 132
2 SLACK 1.0 0 0 0 0 0 132
BRANCH
1 2 0 0.1 0 1 0 1
GEN
1 0 0 0 10 -10 10 1.0 0 0
2 0 0 0 10 -10 10 1.0 0 0
";
        match parse_native_case(text) {
            Err(CaseError::Invalid(v)) => {
                assert!(v.iter().any(|v| v.rule.contains("exactly one slack")))
            }
            other => panic!("expected semantic error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let bad = SINGLE.replace("1 SLACK 1.0 0 0 0 0 0 132", "1 SLACK 1.0 zero 0 0 0 0 132");
        match parse_native_case(&bad) {
            Err(CaseError::Malformed { line, column, .. }) => {
                assert_eq!((line, column), (3, 4));
            }
            other => panic!("{other:?}"),
        }
        let short = SINGLE.replace("1 SLACK 1.0 0 0 0 0 0 132", "1 SLACK 1.0");
        assert!(matches!(
            parse_native_case(&short),
            Err(CaseError::Syntax { line: 3, .. })
        ));
        let orphan = format!("1 2 3\n{SINGLE}");
        assert!(matches!(
            parse_native_case(&orphan),
            Err(CaseError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn dangling_generator_bus() {
        let bad = SINGLE.replace("1 0 0 0 10", "7 0 0 0 10");
        assert!(matches!(parse_native_case(&bad), Err(CaseError::Invalid(_))));
    }

    #[test]
    fn serialize_round_trip_of_bundled_case() {
        let case = cases::ieee14();
        let again = parse_native_case(&write_native_case(&case)).unwrap();
        assert_eq!(case, again);
    }

    #[test]
    fn costs_sidecar() {
        let rows = parse_costs("# gen a b\n1 0.043 20\n2 0.25 20 # G2\n").unwrap();
        assert_eq!(rows, vec![(1, 0.043, 20.0), (2, 0.25, 20.0)]);
        assert!(parse_costs("1 0.1\n").is_err());
    }

    #[test]
    fn exact_degrees_inverts_to_radians() {
        for x in [0.0, -4.98, 12.72, 1e-3, 179.99999, -0.1] {
            let r = f64::to_radians(x);
            assert_eq!(exact_degrees(r).to_radians(), r);
        }
    }
}
