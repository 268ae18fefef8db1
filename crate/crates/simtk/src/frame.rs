use crate::error::ToolError;

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub species: u32,
    pub pos: [f64; 3],
}

/// One snapshot in an orthorhombic box with its lower corner at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub step: u64,
    pub box_len: [f64; 3],
    pub atoms: Vec<Atom>,
}

pub type Trajectory = Vec<Frame>;

impl Frame {
    pub fn new(step: u64, box_len: [f64; 3], atoms: Vec<Atom>) -> Self {
        Frame { step, box_len, atoms }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn volume(&self) -> f64 {
        self.box_len.iter().product()
    }

    pub fn min_box(&self) -> f64 {
        self.box_len.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Minimum-image separation vector `a - b`.
    pub fn delta(&self, a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
        min_image(a, b, &self.box_len)
    }

    pub fn check(&self) -> Result<(), ToolError> {
        if self.box_len.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(ToolError::InvalidConfig(format!("box lengths {:?} must be positive", self.box_len)));
        }
        if self.atoms.iter().any(|a| a.pos.iter().any(|x| !x.is_finite())) {
            return Err(ToolError::InvalidConfig("non-finite coordinate".into()));
        }
        Ok(())
    }
}

pub fn min_image(a: &[f64; 3], b: &[f64; 3], box_len: &[f64; 3]) -> [f64; 3] {
    let mut d = [0.0; 3];
    for k in 0..3 {
        let l = box_len[k];
        let x = a[k] - b[k];
        d[k] = x - l * (x / l).round();
    }
    d
}

pub fn norm(d: &[f64; 3]) -> f64 {
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Face-centred cubic crystal of `cells` conventional cells with lattice
/// parameter `a`, species 1.
pub fn fcc(cells: [usize; 3], a: f64) -> Frame {
    const BASIS: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]];
    let mut atoms = Vec::with_capacity(4 * cells.iter().product::<usize>());
    for i in 0..cells[0] {
        for j in 0..cells[1] {
            for k in 0..cells[2] {
                for b in BASIS {
                    atoms.push(Atom {
                        species: 1,
                        pos: [(i as f64 + b[0]) * a, (j as f64 + b[1]) * a, (k as f64 + b[2]) * a],
                    });
                }
            }
        }
    }
    let box_len = [cells[0] as f64 * a, cells[1] as f64 * a, cells[2] as f64 * a];
    Frame::new(0, box_len, atoms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimum_image_wraps() {
        let d = min_image(&[0.1, 0.0, 0.0], &[9.9, 0.0, 0.0], &[10.0, 10.0, 10.0]);
        assert!((d[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn fcc_counts() {
        let f = fcc([2, 3, 4], 1.5);
        assert_eq!(f.len(), 96);
        assert_eq!(f.box_len, [3.0, 4.5, 6.0]);
    }
}
