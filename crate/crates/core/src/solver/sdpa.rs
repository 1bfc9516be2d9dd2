//! SDPA sparse format (`.dat-s`).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{SdpStandardForm, Sense, Side, SparseSym};
use crate::error::{Error, Result};

const TAG: &str = "\"seqnpa";

fn num(v: f64) -> String {
    // no `-0`
    let v = v + 0.0;
    format!("{v:.16e}")
}

/// Writes the problem; the first line is a `"` comment recording the
/// model's side, sense and offset.
pub fn write_sdpa(p: &SdpStandardForm, mut w: impl Write) -> Result<()> {
    p.validate()?;
    let reading = match p.side {
        Side::Primal => "model value = offset + sign*tr(F0 Y) over the SDPA dual",
        Side::Dual => "model value = offset + sign*c.x over the SDPA primal",
    };
    writeln!(
        w,
        "{TAG} side={} sense={} sign={} offset={} ; SDPA: min c.x s.t. sum x_k F_k - F_0 >= 0 ; {reading}",
        p.side,
        p.sense,
        p.value_sign() as i32,
        num(p.offset)
    )?;
    writeln!(w, "{}", p.num_constraints())?;
    writeln!(w, "{}", p.block_sizes.len())?;
    let sizes: Vec<String> = p.block_sizes.iter().map(usize::to_string).collect();
    writeln!(w, "{}", sizes.join(" "))?;
    let rhs: Vec<String> = p.rhs.iter().map(|&v| num(v)).collect();
    writeln!(w, "{}", rhs.join(" "))?;
    let mut put = |k: usize, m: &SparseSym| -> std::io::Result<()> {
        for &(b, i, j, v) in &m.canonical().entries {
            writeln!(w, "{k} {} {} {} {}", b + 1, i + 1, j + 1, num(v))?;
        }
        Ok(())
    };
    put(0, &p.objective)?;
    for (k, a) in p.constraints.iter().enumerate() {
        put(k + 1, a)?;
    }
    Ok(())
}

pub fn export_sdpa(p: &SdpStandardForm, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_sdpa(p, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn import_sdpa(path: impl AsRef<Path>) -> Result<SdpStandardForm> {
    read_sdpa(&fs::read_to_string(path)?)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn tokens(s: &str) -> Vec<&str> {
    s.split(|c: char| c.is_whitespace() || matches!(c, ',' | '{' | '}' | '(' | ')'))
        .filter(|t| !t.is_empty())
        .collect()
}

fn parse_meta(line: &str, p: &mut SdpStandardForm) {
    for t in line.split_whitespace() {
        if let Some((k, v)) = t.split_once('=') {
            match (k, v) {
                ("side", "dual") => p.side = Side::Dual,
                ("side", "primal") => p.side = Side::Primal,
                ("sense", "minimize") => p.sense = Sense::Minimize,
                ("sense", "maximize") => p.sense = Sense::Maximize,
                ("offset", v) => p.offset = v.parse().unwrap_or(0.0),
                _ => {}
            }
        }
    }
}

/// Parses a `.dat-s` document. Negative (diagonal) block sizes become runs
/// of 1×1 blocks.
pub fn read_sdpa(text: &str) -> Result<SdpStandardForm> {
    let mut p = SdpStandardForm::default();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| {
            if l.starts_with(TAG) {
                return true;
            }
            !(l.is_empty() || l.starts_with('"') || l.starts_with('*'))
        })
        .peekable();
    if let Some(&(_, l)) = lines.peek() {
        if l.starts_with(TAG) {
            parse_meta(l, &mut p);
            lines.next();
        }
    }
    let mut header = |what: &str| -> Result<(usize, &str)> {
        lines.next().ok_or_else(|| parse_err(text.lines().count() + 1, format!("missing {what}")))
    };
    let (ln, l) = header("number of constraints")?;
    let m: usize = tokens(l)
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(ln, "expected the number of constraints"))?;
    let (ln, l) = header("number of blocks")?;
    let nblocks: usize = tokens(l)
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(ln, "expected the number of blocks"))?;
    let (ln, l) = header("block sizes")?;
    let raw: Vec<i64> = tokens(l)
        .iter()
        .take(nblocks)
        .map(|t| t.parse::<i64>().map_err(|_| parse_err(ln, format!("invalid block size `{t}`"))))
        .collect::<Result<_>>()?;
    if raw.len() != nblocks || raw.iter().any(|&s| s == 0) {
        return Err(parse_err(ln, format!("expected {nblocks} nonzero block sizes")));
    }
    // file block → (first internal block, diagonal?)
    let mut map = Vec::with_capacity(nblocks);
    for &s in &raw {
        if s > 0 {
            map.push((p.block_sizes.len(), false, s as usize));
            p.block_sizes.push(s as usize);
        } else {
            map.push((p.block_sizes.len(), true, (-s) as usize));
            p.block_sizes.extend(std::iter::repeat_n(1, (-s) as usize));
        }
    }
    p.constraints = vec![SparseSym::new(); m];
    if m > 0 {
        let (ln, l) = header("right-hand side")?;
        let t = tokens(l);
        if t.len() < m {
            return Err(parse_err(ln, format!("expected {m} right-hand values, found {}", t.len())));
        }
        p.rhs = t[..m]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| parse_err(ln, format!("invalid number `{v}`"))))
            .collect::<Result<_>>()?;
    }
    for (ln, l) in lines {
        let t = tokens(l);
        if t.len() < 5 {
            return Err(parse_err(ln, "expected `k block i j value`"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| parse_err(ln, format!("invalid index `{s}`")));
        let (k, b, i, j) = (int(t[0])?, int(t[1])?, int(t[2])?, int(t[3])?);
        let v: f64 = t[4].parse().map_err(|_| parse_err(ln, format!("invalid number `{}`", t[4])))?;
        if k > m {
            return Err(parse_err(ln, format!("constraint {k} exceeds {m}")));
        }
        let &(first, diag, size) = map
            .get(b.wrapping_sub(1))
            .ok_or_else(|| parse_err(ln, format!("block {b} does not exist")))?;
        if i == 0 || j == 0 || i > size || j > size {
            return Err(parse_err(ln, format!("entry ({i}, {j}) outside block {b}")));
        }
        let (blk, i, j) = if diag {
            if i != j {
                return Err(parse_err(ln, "off-diagonal entry in a diagonal block"));
            }
            (first + i - 1, 0, 0)
        } else {
            (first, i - 1, j - 1)
        };
        let target = if k == 0 { &mut p.objective } else { &mut p.constraints[k - 1] };
        target.push(blk, i, j, v);
    }
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_blocks_split() {
        let text = "1\n1\n-2\n1.0\n0 1 1 1 1.0\n1 1 2 2 3.0\n";
        let p = read_sdpa(text).unwrap();
        assert_eq!(p.block_sizes, vec![1, 1]);
        assert_eq!(p.constraints[0].entries, vec![(1, 0, 0, 3.0)]);
    }

    #[test]
    fn punctuation_is_ignored() {
        let text = "* comment\n1 = mDIM\n1 = nBLOCK\n{2}\n{0.5}\n0,1,1,2,1.0\n";
        let p = read_sdpa(text).unwrap();
        assert_eq!(p.block_sizes, vec![2]);
        assert_eq!(p.objective.entries, vec![(0, 0, 1, 1.0)]);
    }

    #[test]
    fn bad_entry_names_its_line() {
        let text = "1\n1\n2\n1\n0 1 1 3 1.0\n";
        match read_sdpa(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }
}
