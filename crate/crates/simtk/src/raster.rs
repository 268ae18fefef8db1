//! Plain PGM projections of atom positions.

use crate::analysis::coordination_histogram;
use crate::error::ToolError;
use crate::frame::Frame;

pub const BULK_LEVEL: u8 = 255;
pub const DEFECT_LEVEL: u8 = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    /// Image (column, row) coordinates for a projection along this axis.
    fn plane(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(format!("axis must be x, y or z, not {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectOptions {
    /// Pixels per length unit.
    pub scale: f64,
    /// Neighbour cutoff for the coordination classes.
    pub cutoff: f64,
    /// Atoms with fewer neighbours than this are drawn at [`DEFECT_LEVEL`].
    pub bulk: u32,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        ProjectOptions {
            scale: 8.0,
            cutoff: 1.3,
            bulk: 12,
        }
    }
}

pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Plain (ASCII) PGM.
    pub fn to_pgm(&self) -> String {
        let mut s = format!("P2\n{} {}\n255\n", self.width, self.height);
        for row in self.pixels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(u8::to_string).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Each atom becomes a plus-shaped five-pixel spot. Where spots overlap a
/// defect wins over bulk so that defects stay visible through the atom
/// columns behind them; drawing order does not matter. Row 0 is the top of
/// the image.
pub fn project_snapshot(frame: &Frame, axis: Axis, opts: &ProjectOptions) -> Result<Raster, ToolError> {
    if frame.is_empty() {
        return Err(ToolError::EmptyFrame);
    }
    if !(opts.scale.is_finite() && opts.scale > 0.0) {
        return Err(ToolError::InvalidConfig("scale must be positive".into()));
    }
    let coord = coordination_histogram(frame, opts.cutoff, true)?;
    let (u, v) = axis.plane();
    let width = (frame.box_len[u] * opts.scale).ceil() as usize + 1;
    let height = (frame.box_len[v] * opts.scale).ceil() as usize + 1;
    let mut pixels = vec![0u8; width * height];
    for (atom, &c) in frame.atoms.iter().zip(&coord.per_atom) {
        let level = if c >= opts.bulk { BULK_LEVEL } else { DEFECT_LEVEL };
        let col = (atom.pos[u] * opts.scale).round() as i64;
        let row = height as i64 - 1 - (atom.pos[v] * opts.scale).round() as i64;
        for (dc, dr) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (c, r) = (col + dc, row + dr);
            if c >= 0 && r >= 0 && (c as usize) < width && (r as usize) < height {
                let p = &mut pixels[r as usize * width + c as usize];
                if *p != DEFECT_LEVEL {
                    *p = level;
                }
            }
        }
    }
    Ok(Raster { width, height, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Atom;

    #[test]
    fn single_atom_spot() {
        let f = Frame::new(
            0,
            [4.0; 3],
            vec![Atom {
                species: 1,
                pos: [1.0, 2.0, 3.0],
            }],
        );
        let r = project_snapshot(&f, Axis::Z, &ProjectOptions::default()).unwrap();
        assert_eq!((r.width, r.height), (33, 33));
        // isolated atom is under-coordinated
        let row = 32 - 16;
        assert_eq!(r.get(8, row), DEFECT_LEVEL);
        assert_eq!(r.get(9, row), DEFECT_LEVEL);
        assert_eq!(r.get(8, row + 1), DEFECT_LEVEL);
        assert_eq!(r.pixels.iter().filter(|&&p| p > 0).count(), 5);
        assert!(r.to_pgm().starts_with("P2\n33 33\n255\n"));
    }

    #[test]
    fn empty_frame() {
        let f = Frame::new(0, [4.0; 3], vec![]);
        assert!(matches!(
            project_snapshot(&f, Axis::X, &ProjectOptions::default()),
            Err(ToolError::EmptyFrame)
        ));
    }
}
