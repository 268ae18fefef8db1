//! Text trajectory formats.
//!
//! `dump` is the usual MD dump subset:
//!
//! ```text
//! ITEM: TIMESTEP
//! 0
//! ITEM: NUMBER OF ATOMS
//! 2
//! ITEM: BOX BOUNDS pp pp pp
//! 0 10
//! 0 10
//! 0 10
//! ITEM: ATOMS id type x y z
//! 1 1 0.5 0.5 0.5
//! 2 1 1.5 0.5 0.5
//! ```
//!
//! `xyz` carries the step and box on its comment line:
//! `step=<n> box=<lx> <ly> <lz>`, followed by `species x y z` rows.
//!
//! Reals are written with 9 significant digits, so a second conversion pass
//! reproduces the first byte for byte.

use std::fmt::Write as _;

use crate::error::ToolError;
use crate::frame::{Atom, Frame, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Dump,
    Xyz,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dump" => Ok(Format::Dump),
            "xyz" => Ok(Format::Xyz),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

/// Nine significant digits in scientific notation.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.8e}")
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    peeked: Option<(usize, &'a str)>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            peeked: None,
            last: 0,
        }
    }

    fn peek(&mut self) -> Option<(usize, &'a str)> {
        if self.peeked.is_none() {
            self.peeked = self.inner.next().map(|(i, l)| (i + 1, l));
        }
        self.peeked
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let item = self.peek();
        self.peeked = None;
        if let Some((n, _)) = item {
            self.last = n;
        }
        item
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), ToolError> {
        self.next()
            .ok_or_else(|| ToolError::parse(self.last + 1, format!("unexpected end of input, expected {what}")))
    }

    fn skip_blank(&mut self) {
        while self.peek().is_some_and(|(_, l)| l.trim().is_empty()) {
            self.next();
        }
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, tok: &str, what: &str) -> Result<T, ToolError> {
    tok.parse()
        .map_err(|_| ToolError::parse(line, format!("bad {what} {tok:?}")))
}

fn parse_real(line: usize, tok: &str) -> Result<f64, ToolError> {
    let x: f64 = parse_num(line, tok, "number")?;
    if !x.is_finite() {
        return Err(ToolError::parse(line, format!("non-finite number {tok:?}")));
    }
    Ok(x)
}

fn expect_item(lines: &mut Lines<'_>, header: &str) -> Result<(), ToolError> {
    let (n, l) = lines.expect(header)?;
    if l.trim() != header {
        return Err(ToolError::parse(n, format!("expected {header:?}, found {:?}", l.trim())));
    }
    Ok(())
}

fn check_count(frames: &[Frame], frame: &Frame) -> Result<(), ToolError> {
    if let Some(first) = frames.first() {
        if first.len() != frame.len() {
            return Err(ToolError::InconsistentAtomCount {
                frame: frames.len(),
                expected: first.len(),
                found: frame.len(),
            });
        }
    }
    Ok(())
}

pub fn read_dump(text: &str) -> Result<Trajectory, ToolError> {
    let mut lines = Lines::new(text);
    let mut frames: Vec<Frame> = Vec::new();
    loop {
        lines.skip_blank();
        if lines.peek().is_none() {
            break;
        }
        expect_item(&mut lines, "ITEM: TIMESTEP")?;
        let (n, l) = lines.expect("timestep")?;
        let step: u64 = parse_num(n, l.trim(), "timestep")?;
        expect_item(&mut lines, "ITEM: NUMBER OF ATOMS")?;
        let (n, l) = lines.expect("atom count")?;
        let count: usize = parse_num(n, l.trim(), "atom count")?;
        let (n, l) = lines.expect("box bounds")?;
        if !l.trim().starts_with("ITEM: BOX BOUNDS") {
            return Err(ToolError::parse(n, format!("expected box bounds, found {:?}", l.trim())));
        }
        let mut box_len = [0.0; 3];
        let mut lo = [0.0; 3];
        for k in 0..3 {
            let (n, l) = lines.expect("box bound")?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(ToolError::parse(n, "box bound needs lo and hi"));
            }
            lo[k] = parse_real(n, toks[0])?;
            box_len[k] = parse_real(n, toks[1])? - lo[k];
            if box_len[k] <= 0.0 {
                return Err(ToolError::parse(n, "box length must be positive"));
            }
        }
        let (n, l) = lines.expect("atoms header")?;
        let cols: Vec<&str> = l.split_whitespace().collect();
        if cols.get(..2) != Some(&["ITEM:", "ATOMS"][..]) || cols[2..] != ["id", "type", "x", "y", "z"] {
            return Err(ToolError::parse(n, "expected \"ITEM: ATOMS id type x y z\""));
        }
        let mut atoms = Vec::with_capacity(count);
        while atoms.len() < count {
            let Some((n, l)) = lines.peek() else {
                return Err(ToolError::parse(lines.last + 1, "unexpected end of input inside a frame"));
            };
            if l.starts_with("ITEM:") {
                return Err(ToolError::InconsistentAtomCount {
                    frame: frames.len(),
                    expected: count,
                    found: atoms.len(),
                });
            }
            lines.next();
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != 5 {
                return Err(ToolError::parse(n, "atom line needs id type x y z"));
            }
            let _id: u64 = parse_num(n, toks[0], "atom id")?;
            let species: u32 = parse_num(n, toks[1], "atom type")?;
            let mut pos = [0.0; 3];
            for k in 0..3 {
                pos[k] = parse_real(n, toks[2 + k])? - lo[k];
            }
            atoms.push(Atom { species, pos });
        }
        lines.skip_blank();
        if let Some((_, l)) = lines.peek() {
            if !l.starts_with("ITEM:") {
                return Err(ToolError::InconsistentAtomCount {
                    frame: frames.len(),
                    expected: count,
                    found: count + 1,
                });
            }
        }
        let frame = Frame::new(step, box_len, atoms);
        check_count(&frames, &frame)?;
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_dump(traj: &[Frame]) -> String {
    let mut s = String::new();
    for f in traj {
        let _ = writeln!(s, "ITEM: TIMESTEP\n{}\nITEM: NUMBER OF ATOMS\n{}", f.step, f.len());
        s.push_str("ITEM: BOX BOUNDS pp pp pp\n");
        for l in f.box_len {
            let _ = writeln!(s, "{} {}", fmt_real(0.0), fmt_real(l));
        }
        s.push_str("ITEM: ATOMS id type x y z\n");
        for (i, a) in f.atoms.iter().enumerate() {
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                i + 1,
                a.species,
                fmt_real(a.pos[0]),
                fmt_real(a.pos[1]),
                fmt_real(a.pos[2])
            );
        }
    }
    s
}

fn parse_xyz_comment(n: usize, line: &str) -> Result<(u64, [f64; 3]), ToolError> {
    let bad = || ToolError::parse(n, "comment line must read \"step=<n> box=<lx> <ly> <lz>\"");
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 4 {
        return Err(bad());
    }
    let step = toks[0].strip_prefix("step=").ok_or_else(bad)?;
    let lx = toks[1].strip_prefix("box=").ok_or_else(bad)?;
    let step = parse_num(n, step, "step")?;
    let box_len = [parse_real(n, lx)?, parse_real(n, toks[2])?, parse_real(n, toks[3])?];
    if box_len.iter().any(|l| *l <= 0.0) {
        return Err(ToolError::parse(n, "box length must be positive"));
    }
    Ok((step, box_len))
}

pub fn read_xyz(text: &str) -> Result<Trajectory, ToolError> {
    let mut lines = Lines::new(text);
    let mut frames: Vec<Frame> = Vec::new();
    loop {
        lines.skip_blank();
        let Some((n, l)) = lines.next() else { break };
        let count: usize = parse_num(n, l.trim(), "atom count")?;
        let (n, l) = lines.expect("comment line")?;
        let (step, box_len) = parse_xyz_comment(n, l)?;
        let mut atoms = Vec::with_capacity(count);
        while atoms.len() < count {
            let Some((n, l)) = lines.next() else {
                return Err(ToolError::parse(lines.last + 1, "unexpected end of input inside a frame"));
            };
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() == 1 {
                // the next frame's count line arrived early
                return Err(ToolError::InconsistentAtomCount {
                    frame: frames.len(),
                    expected: count,
                    found: atoms.len(),
                });
            }
            if toks.len() != 4 {
                return Err(ToolError::parse(n, "atom line needs species x y z"));
            }
            let species: u32 = parse_num(n, toks[0], "species")?;
            let pos = [parse_real(n, toks[1])?, parse_real(n, toks[2])?, parse_real(n, toks[3])?];
            atoms.push(Atom { species, pos });
        }
        let frame = Frame::new(step, box_len, atoms);
        check_count(&frames, &frame)?;
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_xyz(traj: &[Frame]) -> String {
    let mut s = String::new();
    for f in traj {
        let _ = writeln!(
            s,
            "{}\nstep={} box={} {} {}",
            f.len(),
            f.step,
            fmt_real(f.box_len[0]),
            fmt_real(f.box_len[1]),
            fmt_real(f.box_len[2])
        );
        for a in &f.atoms {
            let _ = writeln!(
                s,
                "{} {} {} {}",
                a.species,
                fmt_real(a.pos[0]),
                fmt_real(a.pos[1]),
                fmt_real(a.pos[2])
            );
        }
    }
    s
}

pub fn sniff(text: &str) -> Format {
    if text.trim_start().starts_with("ITEM:") {
        Format::Dump
    } else {
        Format::Xyz
    }
}

/// Parses either format, chosen by content.
pub fn read_trajectory(text: &str) -> Result<Trajectory, ToolError> {
    match sniff(text) {
        Format::Dump => read_dump(text),
        Format::Xyz => read_xyz(text),
    }
}

pub fn write_trajectory(traj: &[Frame], format: Format) -> String {
    match format {
        Format::Dump => write_dump(traj),
        Format::Xyz => write_xyz(traj),
    }
}

pub fn convert(text: &str, to: Format) -> Result<String, ToolError> {
    Ok(write_trajectory(&read_trajectory(text)?, to))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DUMP: &str = "ITEM: TIMESTEP\n0\nITEM: NUMBER OF ATOMS\n2\nITEM: BOX BOUNDS pp pp pp\n0 10\n0 10\n0 10\n\
ITEM: ATOMS id type x y z\n1 1 0.5 0.5 0.5\n2 2 1.5 0.25 0.125\n\
ITEM: TIMESTEP\n100\nITEM: NUMBER OF ATOMS\n2\nITEM: BOX BOUNDS pp pp pp\n0 10\n0 10\n0 10\n\
ITEM: ATOMS id type x y z\n1 1 0.6 0.5 0.5\n2 2 1.4 0.25 0.125\n";

    #[test]
    fn two_frame_dump_to_xyz() {
        let traj = read_dump(DUMP).unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj[1].step, 100);
        let xyz = write_xyz(&traj);
        let back = read_xyz(&xyz).unwrap();
        assert_eq!(back, traj);
        assert!(xyz.starts_with("2\nstep=0 box=1.00000000e1 1.00000000e1 1.00000000e1\n1 5.00000000e-1"));
    }

    #[test]
    fn truncated_frame() {
        let cut = DUMP.lines().take(10).collect::<Vec<_>>().join("\n");
        assert_eq!(
            read_dump(&cut),
            Err(ToolError::Parse {
                line: 11,
                message: "unexpected end of input inside a frame".into()
            })
        );
    }

    #[test]
    fn wrong_count_header() {
        let bad = DUMP.replacen("NUMBER OF ATOMS\n2", "NUMBER OF ATOMS\n3", 1);
        assert!(matches!(
            read_dump(&bad),
            Err(ToolError::InconsistentAtomCount {
                frame: 0,
                expected: 3,
                found: 2
            })
        ));
        let bad = DUMP.replacen("NUMBER OF ATOMS\n2", "NUMBER OF ATOMS\n1", 1);
        assert!(matches!(read_dump(&bad), Err(ToolError::InconsistentAtomCount { .. })));
    }

    #[test]
    fn bad_number_reports_line() {
        let bad = DUMP.replacen("1 1 0.5", "1 1 zz", 1);
        assert!(matches!(read_dump(&bad), Err(ToolError::Parse { line: 10, .. })));
    }

    #[test]
    fn shifted_lower_bound() {
        let shifted = DUMP.replace("0 10\n", "-5 5\n");
        let traj = read_dump(&shifted).unwrap();
        assert_eq!(traj[0].atoms[0].pos, [5.5, 5.5, 5.5]);
        assert_eq!(traj[0].box_len, [10.0; 3]);
    }

    #[test]
    fn xyz_count_mismatch_between_frames() {
        let text = "1\nstep=0 box=1 1 1\n1 0 0 0\n2\nstep=1 box=1 1 1\n1 0 0 0\n1 0.5 0 0\n";
        assert!(matches!(
            read_xyz(text),
            Err(ToolError::InconsistentAtomCount {
                frame: 1,
                expected: 1,
                found: 2
            })
        ));
    }
}
