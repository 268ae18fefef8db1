//! Lennard-Jones molecular dynamics in reduced units (ε = σ = m = 1).
//!
//! Truncated and shifted pair potential with cutoff 2.5, velocity-Verlet
//! integration, periodic boundaries, optional Berendsen velocity rescaling
//! and an optional uniaxial strain ramp along x.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ToolError;
use crate::frame::{fcc, min_image, Atom, Frame};
use crate::stress::StressRecord;

pub const CUTOFF: f64 = 2.5;
pub const MAX_ATOMS: usize = 4000;

fn lj(r2: f64) -> (f64, f64) {
    let inv6 = 1.0 / (r2 * r2 * r2);
    let u = 4.0 * inv6 * (inv6 - 1.0);
    // force magnitude divided by r
    let f = 24.0 * inv6 * (2.0 * inv6 - 1.0) / r2;
    (u, f)
}

fn shift() -> f64 {
    lj(CUTOFF * CUTOFF).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdConfig {
    /// Conventional FCC cells along x, y, z.
    pub cells: [usize; 3],
    pub lattice_constant: f64,
    pub dt: f64,
    pub steps: u64,
    /// Initial temperature; 0 starts from rest.
    pub temperature: f64,
    pub thermostat: bool,
    pub target_temperature: f64,
    /// Berendsen coupling time.
    pub tau: f64,
    /// Engineering strain rate along x; 0 disables the ramp.
    pub strain_rate: f64,
    pub sample_every: u64,
    pub seed: u64,
}

impl Default for MdConfig {
    fn default() -> Self {
        MdConfig {
            cells: [4, 4, 4],
            lattice_constant: 1.5496,
            dt: 0.005,
            steps: 1000,
            temperature: 0.0,
            thermostat: false,
            target_temperature: 0.0,
            tau: 0.5,
            strain_rate: 0.0,
            sample_every: 100,
            seed: 1,
        }
    }
}

impl MdConfig {
    pub fn validate(&self) -> Result<(), ToolError> {
        let bad = |m: &str| Err(ToolError::InvalidConfig(m.to_string()));
        if self.cells.contains(&0) {
            return bad("cells must be positive");
        }
        let n = 4 * self.cells.iter().product::<usize>();
        if n > MAX_ATOMS {
            return Err(ToolError::InvalidConfig(format!("{n} atoms exceeds the limit of {MAX_ATOMS}")));
        }
        let positive = [
            ("lattice_constant", self.lattice_constant),
            ("dt", self.dt),
            ("tau", self.tau),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ToolError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("temperature", self.temperature),
            ("target_temperature", self.target_temperature),
            ("strain_rate", self.strain_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ToolError::InvalidConfig(format!("{name} must be non-negative")));
            }
        }
        if self.sample_every == 0 {
            return bad("sample_every must be positive");
        }
        // minimum image needs the cutoff sphere inside half the box
        let min_len = *self.cells.iter().min().expect("three cells") as f64 * self.lattice_constant;
        if min_len < 2.0 * CUTOFF {
            return Err(ToolError::InvalidConfig(format!(
                "smallest box length {min_len} is below twice the cutoff"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct System {
    pub box_len: [f64; 3],
    pub pos: Vec<[f64; 3]>,
    pub vel: Vec<[f64; 3]>,
    pub force: Vec<[f64; 3]>,
    pub species: Vec<u32>,
    pub potential: f64,
    /// Σ over pairs of d_x·f_x.
    pub virial_xx: f64,
}

impl System {
    pub fn from_frame(frame: &Frame) -> Self {
        let n = frame.len();
        let mut s = System {
            box_len: frame.box_len,
            pos: frame.atoms.iter().map(|a| a.pos).collect(),
            vel: vec![[0.0; 3]; n],
            force: vec![[0.0; 3]; n],
            species: frame.atoms.iter().map(|a| a.species).collect(),
            potential: 0.0,
            virial_xx: 0.0,
        };
        s.wrap();
        s.compute_forces();
        s
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn volume(&self) -> f64 {
        self.box_len.iter().product()
    }

    fn wrap(&mut self) {
        for p in &mut self.pos {
            for k in 0..3 {
                let l = self.box_len[k];
                p[k] -= l * (p[k] / l).floor();
                if p[k] >= l {
                    p[k] -= l;
                }
            }
        }
    }

    /// Random velocities at temperature `t` with zero total momentum.
    pub fn thermalize(&mut self, t: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut self.vel {
            for c in v.iter_mut() {
                *c = rng.random::<f64>() - 0.5;
            }
        }
        let p = self.momentum();
        let n = self.len() as f64;
        for v in &mut self.vel {
            for k in 0..3 {
                v[k] -= p[k] / n;
            }
        }
        let current = self.temperature();
        let scale = if current > 0.0 { (t / current).sqrt() } else { 0.0 };
        for v in &mut self.vel {
            for c in v.iter_mut() {
                *c *= scale;
            }
        }
    }

    pub fn momentum(&self) -> [f64; 3] {
        let mut p = [0.0; 3];
        for v in &self.vel {
            for k in 0..3 {
                p[k] += v[k];
            }
        }
        p
    }

    pub fn kinetic(&self) -> f64 {
        0.5 * self.vel.iter().map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sum::<f64>()
    }

    pub fn total_energy(&self) -> f64 {
        self.kinetic() + self.potential
    }

    /// Kinetic temperature over 3N − 3 degrees of freedom.
    pub fn temperature(&self) -> f64 {
        let dof = (3 * self.len()).saturating_sub(3).max(1) as f64;
        2.0 * self.kinetic() / dof
    }

    /// xx stress, positive under tension.
    pub fn stress_xx(&self) -> f64 {
        let kin: f64 = self.vel.iter().map(|v| v[0] * v[0]).sum();
        -(kin + self.virial_xx) / self.volume()
    }

    fn pair(&mut self, i: usize, j: usize, rc2: f64, ushift: f64) {
        let d = min_image(&self.pos[i], &self.pos[j], &self.box_len);
        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        if r2 >= rc2 {
            return;
        }
        let (u, f) = lj(r2);
        self.potential += u - ushift;
        self.virial_xx += d[0] * d[0] * f;
        for k in 0..3 {
            self.force[i][k] += f * d[k];
            self.force[j][k] -= f * d[k];
        }
    }

    pub fn compute_forces(&mut self) {
        let n = self.len();
        for f in &mut self.force {
            *f = [0.0; 3];
        }
        self.potential = 0.0;
        self.virial_xx = 0.0;
        let rc2 = CUTOFF * CUTOFF;
        let ushift = shift();
        let ncell: [usize; 3] = std::array::from_fn(|k| (self.box_len[k] / CUTOFF).floor() as usize);
        if ncell.iter().any(|&c| c < 3) {
            for i in 0..n {
                for j in i + 1..n {
                    self.pair(i, j, rc2, ushift);
                }
            }
            return;
        }
        // cell list; pairs are visited in a fixed order so results are
        // reproducible bit for bit
        let cell_of = |p: &[f64; 3]| -> [usize; 3] {
            std::array::from_fn(|k| (((p[k] / self.box_len[k]) * ncell[k] as f64) as usize).min(ncell[k] - 1))
        };
        let flat = |c: [usize; 3]| (c[0] * ncell[1] + c[1]) * ncell[2] + c[2];
        let mut cells: Vec<Vec<usize>> = vec![Vec::new(); ncell.iter().product()];
        let owner: Vec<[usize; 3]> = self.pos.iter().map(cell_of).collect();
        for (i, c) in owner.iter().enumerate() {
            cells[flat(*c)].push(i);
        }
        let mut neighbours = Vec::with_capacity(27);
        for i in 0..n {
            let c = owner[i];
            neighbours.clear();
            for dx in [ncell[0] - 1, 0, 1] {
                for dy in [ncell[1] - 1, 0, 1] {
                    for dz in [ncell[2] - 1, 0, 1] {
                        neighbours.push(flat([
                            (c[0] + dx) % ncell[0],
                            (c[1] + dy) % ncell[1],
                            (c[2] + dz) % ncell[2],
                        ]));
                    }
                }
            }
            neighbours.sort_unstable();
            neighbours.dedup();
            for &cell in &neighbours {
                for jj in 0..cells[cell].len() {
                    let j = cells[cell][jj];
                    if j > i {
                        self.pair(i, j, rc2, ushift);
                    }
                }
            }
        }
    }

    /// One velocity-Verlet step, followed by the strain ramp (affine
    /// stretch of x by `1 + rate·dt`) before the force update.
    pub fn step(&mut self, dt: f64, strain_rate: f64) {
        for i in 0..self.len() {
            for k in 0..3 {
                self.vel[i][k] += 0.5 * dt * self.force[i][k];
                self.pos[i][k] += dt * self.vel[i][k];
            }
        }
        if strain_rate > 0.0 {
            let scale = 1.0 + strain_rate * dt;
            self.box_len[0] *= scale;
            for p in &mut self.pos {
                p[0] *= scale;
            }
        }
        self.wrap();
        self.compute_forces();
        for i in 0..self.len() {
            for k in 0..3 {
                self.vel[i][k] += 0.5 * dt * self.force[i][k];
            }
        }
    }

    pub fn berendsen(&mut self, target: f64, dt: f64, tau: f64) {
        let t = self.temperature();
        if t <= 0.0 {
            return;
        }
        let lambda = (1.0 + dt / tau * (target / t - 1.0)).max(0.0).sqrt();
        for v in &mut self.vel {
            for c in v.iter_mut() {
                *c *= lambda;
            }
        }
    }

    pub fn check_finite(&self, step: u64) -> Result<(), ToolError> {
        let finite = self.potential.is_finite()
            && self.kinetic().is_finite()
            && self.pos.iter().all(|p| p.iter().all(|x| x.is_finite()));
        if finite {
            Ok(())
        } else {
            Err(ToolError::BlowUp(format!(
                "non-finite state at step {step}; reduce dt or strain_rate"
            )))
        }
    }

    pub fn frame(&self, step: u64) -> Frame {
        Frame::new(
            step,
            self.box_len,
            self.pos
                .iter()
                .zip(&self.species)
                .map(|(p, s)| Atom { species: *s, pos: *p })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdOutput {
    pub frames: Vec<Frame>,
    pub records: Vec<StressRecord>,
}

/// Builds the crystal, runs the configured steps and samples every
/// `sample_every` steps (and at step 0).
pub fn ljmd_run(config: &MdConfig) -> Result<MdOutput, ToolError> {
    config.validate()?;
    let mut sys = System::from_frame(&fcc(config.cells, config.lattice_constant));
    if config.temperature > 0.0 {
        sys.thermalize(config.temperature, config.seed);
    }
    let lx0 = sys.box_len[0];
    let mut out = MdOutput {
        frames: Vec::new(),
        records: Vec::new(),
    };
    let sample = |sys: &System, step: u64, out: &mut MdOutput| {
        out.frames.push(sys.frame(step));
        out.records.push(StressRecord {
            step,
            strain: sys.box_len[0] / lx0 - 1.0,
            pxx: sys.stress_xx(),
            energy: sys.total_energy(),
            temperature: sys.temperature(),
        });
    };
    sample(&sys, 0, &mut out);
    for step in 1..=config.steps {
        sys.step(config.dt, config.strain_rate);
        if config.thermostat {
            sys.berendsen(config.target_temperature, config.dt, config.tau);
        }
        sys.check_finite(step)?;
        if step % config.sample_every == 0 {
            sample(&sys, step, &mut out);
        }
    }
    Ok(out)
}
