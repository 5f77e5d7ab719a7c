//! Edge-of-stability and oscillation detectors over recorded traces.

use serde::{Deserialize, Serialize};

use super::trace::{SharpnessAt, Trace, TraceRow};

/// Consecutive rows that must satisfy the EoS condition.
pub const EOS_MIN_ROWS: usize = 20;

/// `|2/η̃ − λ₁| ≤ rel_tol·λ₁` for a row carrying a sharpness value.
pub fn at_eos(row: &TraceRow, rel_tol: f64) -> Option<bool> {
    let l = row.sph_sharpness?;
    Some((row.two_over_eff_lr - l).abs() <= rel_tol * l.abs())
}

/// First step where the EoS condition holds on [`EOS_MIN_ROWS`] consecutive
/// rows that carry a sharpness evaluated at `at` (any location if `None`).
pub fn detect_eos_entry_at(trace: &Trace, rel_tol: f64, at: Option<SharpnessAt>) -> Option<u64> {
    let mut run = 0usize;
    let mut start = 0u64;
    for row in &trace.rows {
        if at.is_some() && row.sharpness_at != at {
            continue;
        }
        match at_eos(row, rel_tol) {
            None => {}
            Some(true) => {
                if run == 0 {
                    start = row.t;
                }
                run += 1;
                if run >= EOS_MIN_ROWS {
                    return Some(start);
                }
            }
            Some(false) => run = 0,
        }
    }
    None
}

pub fn detect_eos_entry(trace: &Trace, rel_tol: f64) -> Option<u64> {
    detect_eos_entry_at(trace, rel_tol, None)
}

/// Fraction of consecutive pairs with strictly opposite signs.
pub fn detect_period2(h: &[f64]) -> Option<f64> {
    if h.len() < 2 {
        return None;
    }
    let flips = h.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    Some(flips as f64 / (h.len() - 1) as f64)
}

/// [`detect_period2`] over the `h` column of rows with `t ≥ from`.
pub fn period2_fraction(trace: &Trace, from: u64) -> Option<f64> {
    let h: Vec<f64> = trace.rows.iter().filter(|r| r.t >= from).filter_map(|r| r.h).collect();
    detect_period2(&h)
}

/// Summary of the recorded sharpness column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendStats {
    pub first: f64,
    pub last: f64,
    pub min: f64,
    pub max: f64,
    /// Least-squares slope of `log λ₁` against `t`.
    pub log_slope: f64,
    pub samples: usize,
}

pub fn sharpness_trend(trace: &Trace, from: u64) -> Option<TrendStats> {
    let pts: Vec<(f64, f64)> = trace
        .rows
        .iter()
        .filter(|r| r.t >= from)
        .filter_map(|r| r.sph_sharpness.filter(|s| *s > 0.0).map(|s| (r.t as f64, s)))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1.ln() - ml)).sum();
    Some(TrendStats {
        first: pts[0].1,
        last: pts[pts.len() - 1].1,
        min: pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        max: pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
        log_slope: if sxx > 0.0 { sxy / sxx } else { 0.0 },
        samples: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(lambda: f64, start: f64, slope: f64, n: u64) -> Trace {
        let rows = (0..n)
            .map(|t| {
                let mut r = TraceRow::new(t, 0.0, 1.0, 1.0);
                r.two_over_eff_lr = start - slope * t as f64;
                r.sph_sharpness = Some(lambda);
                r.sharpness_at = Some(SharpnessAt::Theta);
                r
            })
            .collect();
        Trace { rows }
    }

    #[test]
    fn ramp_crossing() {
        // 2/η̃ = 20 − 0.01t reaches 1.05·10 at t = 950.
        let tr = ramp(10.0, 20.0, 0.01, 3000);
        assert_eq!(detect_eos_entry(&tr, 0.05), Some(950));
        assert_eq!(detect_eos_entry_at(&tr, 0.05, Some(SharpnessAt::Phi)), None);
    }

    #[test]
    fn short_excursion_is_ignored() {
        let mut tr = ramp(10.0, 20.0, 0.0, 100);
        for r in &mut tr.rows[40..55] {
            r.two_over_eff_lr = 10.0;
        }
        assert_eq!(detect_eos_entry(&tr, 0.05), None);
        for r in &mut tr.rows[60..80] {
            r.two_over_eff_lr = 10.2;
        }
        assert_eq!(detect_eos_entry(&tr, 0.05), Some(60));
    }

    #[test]
    fn stable_trace_has_no_entry() {
        assert_eq!(detect_eos_entry(&ramp(10.0, 30.0, 0.0, 500), 0.05), None);
    }

    #[test]
    fn period2_fractions() {
        let alt: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { 0.1 } else { -0.2 }).collect();
        assert_eq!(detect_period2(&alt), Some(1.0));
        assert_eq!(detect_period2(&[0.3; 10]), Some(0.0));
        assert_eq!(detect_period2(&[1.0]), None);
        assert_eq!(detect_period2(&[1.0, 0.0, -1.0]), Some(0.0));
    }

    #[test]
    fn trend_of_decaying_sharpness() {
        let rows = (0..10)
            .map(|t| {
                let mut r = TraceRow::new(t, 0.0, 1.0, 1.0);
                r.sph_sharpness = Some((-0.1 * t as f64).exp());
                r
            })
            .collect();
        let s = sharpness_trend(&Trace { rows }, 0).unwrap();
        assert!((s.log_slope + 0.1).abs() < 1e-12);
        assert_eq!(s.samples, 10);
        assert_eq!(s.first, 1.0);
    }
}
