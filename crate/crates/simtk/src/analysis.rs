use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::ToolError;
use crate::formats::fmt_real;
use crate::frame::{norm, Frame};

/// Tabulated function on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Column names for CSV output.
    pub labels: (String, String),
    pub normalization: String,
}

impl Spectrum {
    pub fn csv(&self) -> String {
        let mut s = format!("{},{}\n", self.labels.0, self.labels.1);
        for (x, y) in self.x.iter().zip(&self.y) {
            s.push_str(&format!("{},{}\n", fmt_real(*x), fmt_real(*y)));
        }
        s
    }
}

/// Bin edges of an RDF with `bins` bins up to `r_max`.
pub fn rdf_edges(r_max: f64, bins: usize) -> Vec<f64> {
    let dr = r_max / bins as f64;
    (0..=bins).map(|k| k as f64 * dr).collect()
}

/// Volume of the spherical shell between two radii.
pub fn shell_volume(lo: f64, hi: f64) -> f64 {
    4.0 / 3.0 * PI * (hi.powi(3) - lo.powi(3))
}

/// g(r) averaged uniformly over frames.
///
/// Each frame's histogram of minimum-image pair distances is normalized by
/// the ideal-gas count `N·ρ·V_shell / 2` with exact shell volumes, so
/// `Σ g_k·ρ·V_k` over a range is the mean number of neighbours inside it.
pub fn compute_rdf(traj: &[Frame], r_max: f64, bins: usize) -> Result<Spectrum, ToolError> {
    if traj.is_empty() {
        return Err(ToolError::EmptyTrajectory);
    }
    if bins == 0 || !(r_max.is_finite() && r_max > 0.0) {
        return Err(ToolError::InvalidConfig("r_max and bins must be positive".into()));
    }
    let limit = traj.iter().map(Frame::min_box).fold(f64::INFINITY, f64::min) / 2.0;
    if r_max > limit {
        return Err(ToolError::RMaxTooLarge { r_max, limit });
    }
    let edges = rdf_edges(r_max, bins);
    let dr = r_max / bins as f64;
    let mut g = vec![0.0; bins];
    for frame in traj {
        let n = frame.len();
        if n < 2 {
            return Err(ToolError::EmptyFrame);
        }
        let mut counts = vec![0u64; bins];
        for i in 0..n {
            for j in i + 1..n {
                let r = norm(&frame.delta(&frame.atoms[i].pos, &frame.atoms[j].pos));
                if r < r_max {
                    let k = ((r / dr) as usize).min(bins - 1);
                    counts[k] += 1;
                }
            }
        }
        let rho = n as f64 / frame.volume();
        for k in 0..bins {
            let ideal = 0.5 * n as f64 * rho * shell_volume(edges[k], edges[k + 1]);
            g[k] += counts[k] as f64 / ideal;
        }
    }
    let frames = traj.len() as f64;
    Ok(Spectrum {
        x: (0..bins).map(|k| 0.5 * (edges[k] + edges[k + 1])).collect(),
        y: g.into_iter().map(|v| v / frames).collect(),
        labels: ("r".into(), "g".into()),
        normalization: format!("ideal gas, exact shell volumes, mean of {} frames", traj.len()),
    })
}

/// Mean neighbour count from an RDF over bins whose centres lie in
/// `[r_lo, r_hi)`, for number density `rho`.
pub fn integrate_rdf(rdf: &Spectrum, rho: f64, r_lo: f64, r_hi: f64) -> f64 {
    let dr = if rdf.x.len() > 1 { rdf.x[1] - rdf.x[0] } else { 2.0 * rdf.x[0] };
    rdf.x
        .iter()
        .zip(&rdf.y)
        .filter(|(r, _)| **r >= r_lo && **r < r_hi)
        .map(|(r, g)| g * rho * shell_volume(r - dr / 2.0, r + dr / 2.0))
        .sum()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Debye scattering intensity of a finite cluster (no periodic images):
/// `I(q) = Σ_i f_i² + 2 Σ_{i<j} f_i f_j sin(q r_ij)/(q r_ij)`.
/// Species missing from `form_factors` scatter with f = 1.
pub fn debye_intensity(frame: &Frame, q: &[f64], form_factors: &BTreeMap<u32, f64>) -> Result<Spectrum, ToolError> {
    if frame.is_empty() {
        return Err(ToolError::EmptyFrame);
    }
    if let Some(&bad) = q.iter().find(|&&q| !(q.is_finite() && q > 0.0)) {
        return Err(ToolError::NonpositiveQ(bad));
    }
    let f: Vec<f64> = frame
        .atoms
        .iter()
        .map(|a| form_factors.get(&a.species).copied().unwrap_or(1.0))
        .collect();
    let n = frame.len();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let p = &frame.atoms[i].pos;
            let o = &frame.atoms[j].pos;
            let r = norm(&[p[0] - o[0], p[1] - o[1], p[2] - o[2]]);
            pairs.push((r, f[i] * f[j]));
        }
    }
    let self_term: f64 = f.iter().map(|f| f * f).sum();
    let y = q
        .iter()
        .map(|&q| self_term + 2.0 * pairs.iter().map(|(r, ff)| ff * sinc(q * r)).sum::<f64>())
        .collect();
    Ok(Spectrum {
        x: q.to_vec(),
        y,
        labels: ("q".into(), "intensity".into()),
        normalization: "absolute, cluster mode".into(),
    })
}

/// Evenly spaced grid `lo, .., hi` with `n` points.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinationHistogram {
    pub cutoff: f64,
    pub per_atom: Vec<u32>,
    /// coordination number -> atom count
    pub counts: BTreeMap<u32, usize>,
}

/// Neighbours within `r_c` of every atom, using minimum-image distances
/// when `periodic`.
pub fn coordination_histogram(frame: &Frame, r_c: f64, periodic: bool) -> Result<CoordinationHistogram, ToolError> {
    if !(r_c.is_finite() && r_c > 0.0) {
        return Err(ToolError::InvalidCutoff(r_c));
    }
    let n = frame.len();
    let mut per_atom = vec![0u32; n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&frame.atoms[i].pos, &frame.atoms[j].pos);
            let d = if periodic {
                frame.delta(a, b)
            } else {
                [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
            };
            if norm(&d) < r_c {
                per_atom[i] += 1;
                per_atom[j] += 1;
            }
        }
    }
    let mut counts = BTreeMap::new();
    for &c in &per_atom {
        *counts.entry(c).or_insert(0) += 1;
    }
    Ok(CoordinationHistogram {
        cutoff: r_c,
        per_atom,
        counts,
    })
}

pub fn coordination_csv(series: &[(u64, CoordinationHistogram)]) -> String {
    let mut s = String::from("step,coordination,count\n");
    for (step, h) in series {
        for (c, n) in &h.counts {
            s.push_str(&format!("{step},{c},{n}\n"));
        }
    }
    s
}
