//! Reader for a subset of the PSS/E v26 RAW format.
//!
//! Supported layout: three header lines (the first carries `IC, SBASE`),
//! then bus, load, generator, branch and transformer adjustment sections,
//! each terminated by a record whose first field is `0`. Transformer
//! adjustment records are skipped, as is everything after them. Records are
//! comma-delimited; `/` starts a comment outside quotes.
//!
//! RAW carries no cost data, so generator costs are zero until a cost
//! sidecar is applied with [`NetworkCase::apply_costs`].

use std::collections::HashMap;

use crate::error::CaseError;
use crate::network::{Branch, Bus, BusKind, Generator, NetworkCase};

/// Split one record into trimmed, unquoted fields.
fn fields(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut quoted = false;
    for c in line.chars() {
        match c {
            '\'' | '"' => quoted = !quoted,
            '/' if !quoted => break,
            ',' if !quoted => out.push(std::mem::take(&mut current).trim().to_string()),
            _ => current.push(c),
        }
    }
    let last = current.trim().to_string();
    if !last.is_empty() || !out.is_empty() {
        out.push(last);
    }
    out
}

struct Record<'a> {
    line: usize,
    fields: &'a [String],
}

impl Record<'_> {
    fn num(&self, column: usize) -> Result<f64, CaseError> {
        let text = self.fields.get(column - 1).map(String::as_str).unwrap_or("");
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| CaseError::Malformed {
                line: self.line,
                column,
                text: text.to_string(),
            })
    }

    fn int(&self, column: usize) -> Result<i64, CaseError> {
        let text = self.fields.get(column - 1).map(String::as_str).unwrap_or("");
        text.parse::<i64>().map_err(|_| CaseError::Malformed {
            line: self.line,
            column,
            text: text.to_string(),
        })
    }

    fn id(&self, column: usize) -> Result<usize, CaseError> {
        let v = self.int(column)?;
        Ok(v.unsigned_abs() as usize)
    }

    fn is_terminator(&self) -> bool {
        self.fields.first().is_some_and(|f| f.trim() == "0")
    }
}

fn require(record: &Record<'_>, min: usize, what: &str) -> Result<(), CaseError> {
    if record.fields.len() < min {
        return Err(CaseError::Syntax {
            line: record.line,
            message: format!(
                "{what} record needs at least {min} fields, found {}",
                record.fields.len()
            ),
        });
    }
    Ok(())
}

/// Parse a PSS/E v26 RAW file (subset) into a validated case.
pub fn parse_psse_raw_v26(text: &str) -> Result<NetworkCase, CaseError> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 3 {
        return Err(CaseError::Syntax {
            line: lines.len(),
            message: "missing three-line header".into(),
        });
    }
    let header = fields(lines[0]);
    let header = Record {
        line: 1,
        fields: &header,
    };
    require(&header, 2, "header")?;
    let base_mva = header.num(2)?;

    let parsed: Vec<(usize, Vec<String>)> = lines
        .iter()
        .enumerate()
        .skip(3)
        .map(|(i, l)| (i + 1, fields(l)))
        .filter(|(_, f)| !f.is_empty())
        .collect();
    let mut cursor = 0;
    let mut section = |name: &str| -> Result<Vec<(usize, Vec<String>)>, CaseError> {
        let mut rows = Vec::new();
        loop {
            let Some((line, f)) = parsed.get(cursor) else {
                return Err(CaseError::Syntax {
                    line: lines.len(),
                    message: format!("{name} data is missing its 0 terminator"),
                });
            };
            cursor += 1;
            let record = Record { line: *line, fields: f };
            if record.is_terminator() {
                return Ok(rows);
            }
            rows.push((*line, f.clone()));
        }
    };

    let bus_rows = section("bus")?;
    let mut buses = Vec::with_capacity(bus_rows.len());
    for (line, f) in &bus_rows {
        let r = Record { line: *line, fields: f };
        // I, 'NAME', BASKV, IDE, GL, BL, AREA, ZONE, VM, VA, OWNER
        if !(9..=11).contains(&f.len()) {
            return Err(CaseError::UnsupportedRecord {
                line: *line,
                message: format!("expected a bus record of 9-11 fields, found {}", f.len()),
            });
        }
        let kind = match r.int(4)? {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            other => {
                return Err(CaseError::UnsupportedRecord {
                    line: *line,
                    message: format!("bus type code {other}"),
                })
            }
        };
        buses.push(Bus {
            id: r.id(1)?,
            kind,
            vm: r.num(9)?,
            va: r.num(10)?.to_radians(),
            pd: 0.0,
            qd: 0.0,
            gs: r.num(5)?,
            bs: r.num(6)?,
            base_kv: r.num(3)?,
        });
    }
    let position: HashMap<usize, usize> =
        buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();

    let load_rows = section("load")?;
    let gen_rows = section("generator")?;
    let branch_rows = section("branch")?;
    section("transformer adjustment")?;

    for (line, f) in &load_rows {
        let r = Record { line: *line, fields: f };
        // I, ID, STATUS, AREA, ZONE, PL, QL, IP, IQ, YP, YQ, OWNER
        require(&r, 7, "load")?;
        if r.int(3)? == 0 {
            continue;
        }
        let bus = r.id(1)?;
        let Some(&k) = position.get(&bus) else {
            return Err(CaseError::Syntax {
                line: *line,
                message: format!("load at unknown bus {bus}"),
            });
        };
        buses[k].pd += r.num(6)?;
        buses[k].qd += r.num(7)?;
    }

    let mut generators = Vec::with_capacity(gen_rows.len());
    for (line, f) in &gen_rows {
        let r = Record { line: *line, fields: f };
        // I, ID, PG, QG, QT, QB, VS, IREG, MBASE, ZR, ZX, RT, XT, GTAP, STAT, RMPCT, PT, PB
        require(&r, 18, "generator")?;
        if r.int(15)? == 0 {
            continue;
        }
        generators.push(Generator {
            bus: r.id(1)?,
            pg: r.num(3)?,
            qg: r.num(4)?,
            q_max: r.num(5)?,
            q_min: r.num(6)?,
            v_set: r.num(7)?,
            p_max: r.num(17)?,
            p_min: r.num(18)?,
            cost_a: 0.0,
            cost_b: 0.0,
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (line, f) in &branch_rows {
        let r = Record { line: *line, fields: f };
        // I, J, CKT, R, X, B, RATEA, RATEB, RATEC, RATIO, ANGLE, GI, BI, GJ, BJ, ST
        require(&r, 16, "branch")?;
        let ratio = r.num(10)?;
        branches.push(Branch {
            from_bus: r.id(1)?,
            to_bus: r.id(2)?,
            r: r.num(4)?,
            x: r.num(5)?,
            b_charging: r.num(6)?,
            tap: if ratio == 0.0 { 1.0 } else { ratio },
            shift: r.num(11)?.to_radians(),
            in_service: r.int(16)? != 0,
        });
    }

    NetworkCase {
        base_mva,
        buses,
        branches,
        generators,
    }
    .validated()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::native::parse_costs;

    #[test]
    fn bus_record_fields() {
        let f = fields("1, 'BUS1', 132.0, 3, 0.0, 0.0, 1, 1, 1.06, 0.0, 1");
        assert_eq!(f.len(), 11);
        let text = "0, 100.0\nheader two\nheader three\n\
1, 'BUS1', 132.0, 3, 0.0, 0.0, 1, 1, 1.06, 0.0, 1\n0\n0\n\
1, '1', 0.0, 0.0, 10.0, -10.0, 1.06, 0, 100.0, 0, 1, 0, 0, 1, 1, 100, 50.0, 0.0\n0\n0\n0\n";
        let case = parse_psse_raw_v26(text).unwrap();
        let bus = &case.buses[0];
        assert_eq!(bus.id, 1);
        assert_eq!(bus.kind, BusKind::Slack);
        assert_eq!(bus.vm, 1.06);
        assert_eq!(bus.va, 0.0);
        assert_eq!(case.base_mva, 100.0);
        assert_eq!(case.generators[0].p_max, 50.0);
    }

    #[test]
    fn missing_bus_terminator() {
        let text = "0, 100.0\nh\nh\n1, 'BUS1', 132.0, 3, 0.0, 0.0, 1, 1, 1.06, 0.0, 1\n";
        assert!(matches!(
            parse_psse_raw_v26(text),
            Err(CaseError::Syntax { .. })
        ));
    }

    #[test]
    fn foreign_record_in_bus_section() {
        let text = "0, 100.0\nh\nh\n\
1, '1', 0.0, 0.0, 10.0, -10.0, 1.06, 0, 100.0, 0, 1, 0, 0, 1, 1, 100, 50.0, 0.0\n0\n";
        assert!(matches!(
            parse_psse_raw_v26(text),
            Err(CaseError::UnsupportedRecord { line: 4, .. })
        ));
    }

    #[test]
    fn malformed_number_reports_row_and_column() {
        let text = "0, 100.0\nh\nh\n1, 'BUS1', 132.0, 3, 0.0, 0.0, 1, 1, 1.O6, 0.0, 1\n0\n";
        match parse_psse_raw_v26(text) {
            Err(CaseError::Malformed { line, column, .. }) => assert_eq!((line, column), (4, 9)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn raw_encoding_matches_native_case() {
        let mut raw = parse_psse_raw_v26(cases::IEEE14_RAW).unwrap();
        assert!(raw.generators.iter().all(|g| g.cost_a == 0.0 && g.cost_b == 0.0));
        raw.apply_costs(&parse_costs(cases::IEEE14_COSTS).unwrap()).unwrap();
        let native = cases::ieee14();
        assert_eq!(raw.base_mva, native.base_mva);
        for (a, b) in raw.buses.iter().zip(&native.buses) {
            assert_eq!(a, b);
        }
        for (a, b) in raw.branches.iter().zip(&native.branches) {
            assert_eq!(a, b);
        }
        for (a, b) in raw.generators.iter().zip(&native.generators) {
            assert_eq!(a, b);
        }
        assert_eq!(raw, native);
    }
}
