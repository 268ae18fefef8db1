use serde::Serialize;

use crate::error::ToolError;
use crate::formats::fmt_real;

/// One sample of a tensile run. `pxx` is the xx stress with tension positive.
#[derive(Debug, Clone, PartialEq)]
pub struct StressRecord {
    pub step: u64,
    pub strain: f64,
    pub pxx: f64,
    pub energy: f64,
    pub temperature: f64,
}

pub const RECORD_HEADER: &str = "step,strain,pxx,energy,temperature";

pub fn write_records(records: &[StressRecord]) -> String {
    let mut s = format!("{RECORD_HEADER}\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step,
            fmt_real(r.strain),
            fmt_real(r.pxx),
            fmt_real(r.energy),
            fmt_real(r.temperature)
        ));
    }
    s
}

pub fn read_records(text: &str) -> Result<Vec<StressRecord>, ToolError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RECORD_HEADER => {}
        _ => return Err(ToolError::parse(1, format!("expected header {RECORD_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(ToolError::parse(n, "expected 5 columns"));
        }
        let real = |s: &str| -> Result<f64, ToolError> {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| ToolError::parse(n, format!("bad number {s:?}")))
        };
        out.push(StressRecord {
            step: cols[0].parse().map_err(|_| ToolError::parse(n, "bad step"))?,
            strain: real(cols[1])?,
            pxx: real(cols[2])?,
            energy: real(cols[3])?,
            temperature: real(cols[4])?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StressSummary {
    pub peak_stress: f64,
    pub strain_at_peak: f64,
    /// Number of drops larger than the configured fraction of the running
    /// peak.
    pub drops: usize,
    /// Strain at which each drop was detected.
    pub drop_strains: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressCurve {
    pub table: Vec<(f64, f64)>,
    pub summary: StressSummary,
}

impl StressCurve {
    pub fn csv(&self) -> String {
        let mut s = String::from("strain,pxx\n");
        for (e, p) in &self.table {
            s.push_str(&format!("{},{}\n", fmt_real(*e), fmt_real(*p)));
        }
        s
    }
}

/// Strain–stress table plus peak and drop statistics.
///
/// The running peak restarts after each drop, so a sawtooth counts one drop
/// per tooth. Peaks at or below `min_peak` never arm a drop, which keeps
/// thermal noise around zero stress from counting.
pub fn extract_stress_strain(records: &[StressRecord], drop_fraction: f64, min_peak: f64) -> Result<StressCurve, ToolError> {
    if records.len() < 2 {
        return Err(ToolError::TooFewRecords(records.len()));
    }
    if !(drop_fraction > 0.0 && drop_fraction < 1.0) {
        return Err(ToolError::InvalidConfig(format!("drop fraction {drop_fraction} must lie in (0, 1)")));
    }
    let table: Vec<(f64, f64)> = records.iter().map(|r| (r.strain, r.pxx)).collect();
    let (mut strain_at_peak, mut peak_stress) = table[0];
    let mut running = f64::NEG_INFINITY;
    let mut drop_strains = Vec::new();
    for &(e, p) in &table {
        if p > peak_stress {
            peak_stress = p;
            strain_at_peak = e;
        }
        if running > min_peak && running > 0.0 && p < running * (1.0 - drop_fraction) {
            drop_strains.push(e);
            running = p;
        } else {
            running = running.max(p);
        }
    }
    Ok(StressCurve {
        table,
        summary: StressSummary {
            peak_stress,
            strain_at_peak,
            drops: drop_strains.len(),
            drop_strains,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f64]) -> Vec<StressRecord> {
        values
            .iter()
            .enumerate()
            .map(|(i, &p)| StressRecord {
                step: i as u64,
                strain: i as f64 * 0.01,
                pxx: p,
                energy: 0.0,
                temperature: 0.0,
            })
            .collect()
    }

    #[test]
    fn monotone_ramp_has_no_drops() {
        let ramp: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let c = extract_stress_strain(&series(&ramp), 0.3, 0.0).unwrap();
        assert_eq!(c.summary.drops, 0);
        assert_eq!(c.summary.peak_stress, 4.9);
        assert_eq!(c.table.len(), 50);
    }

    #[test]
    fn sawtooth_three_teeth() {
        let mut v = Vec::new();
        for _ in 0..3 {
            v.extend((0..10).map(|i| i as f64));
        }
        v.push(0.0);
        let c = extract_stress_strain(&series(&v), 0.3, 0.0).unwrap();
        assert_eq!(c.summary.drops, 3);
        assert_eq!(c.summary.peak_stress, 9.0);
        assert!((c.summary.strain_at_peak - 0.09).abs() < 1e-12);
    }

    #[test]
    fn too_few_records() {
        assert_eq!(
            extract_stress_strain(&series(&[1.0]), 0.3, 0.0),
            Err(ToolError::TooFewRecords(1))
        );
    }

    #[test]
    fn csv_round_trip() {
        let s = series(&[0.5, -1.25, 3.0]);
        assert_eq!(read_records(&write_records(&s)).unwrap(), s);
        assert!(matches!(read_records("a,b\n"), Err(ToolError::Parse { line: 1, .. })));
    }
}
