use std::fmt::Write as _;

use pcc_event::pipeline::GatingSummary;

/// One row of the acceptance report.
#[derive(Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub reference: &'static str,
    pub lo: f64,
    pub hi: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.lo <= self.value && self.value <= self.hi
    }
}

pub fn checks(s: &GatingSummary) -> Vec<Check> {
    let identity = (s.downstream_charge - (1.0 - s.f_vg) * s.mean_roi_fraction).abs();
    vec![
        Check {
            name: "event_count",
            value: s.event_count as f64,
            reference: "893793",
            lo: 6e5,
            hi: 1.2e6,
        },
        Check {
            name: "f_vg",
            value: s.f_vg,
            reference: "0.09",
            lo: 0.03,
            hi: 0.20,
        },
        Check {
            name: "mean_roi_fraction",
            value: s.mean_roi_fraction,
            reference: "0.496",
            lo: 0.35,
            hi: 0.65,
        },
        Check {
            name: "charge_identity_error",
            value: identity,
            reference: "0",
            lo: 0.0,
            hi: 1e-12,
        },
    ]
}

fn number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else if v != 0.0 && v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        format!("{v:.4}")
    }
}

/// Renders the report; returns the text and whether every check passed.
pub fn render(s: &GatingSummary) -> (String, bool) {
    let mut out = String::new();
    if s.total_windows == 0 {
        out.push_str("no windows\n");
        return (out, true);
    }
    let _ = writeln!(
        out,
        "windows: {} total, {} suppressed, {} triggered",
        s.total_windows,
        s.suppressed_windows,
        s.triggered_windows()
    );
    let _ = writeln!(
        out,
        "downstream_charge: {:.4} (reference 0.45)",
        s.downstream_charge
    );
    let mut all = true;
    for c in checks(s) {
        let ok = c.passed();
        all &= ok;
        let _ = writeln!(
            out,
            "{:<22} {:>10} in [{}, {}] (reference {}) {}",
            c.name,
            number(c.value),
            number(c.lo),
            number(c.hi),
            c.reference,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    (out, all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(total: usize, suppressed: usize, roi: f64, events: usize) -> GatingSummary {
        let f_vg = suppressed as f64 / total as f64;
        GatingSummary {
            total_windows: total,
            suppressed_windows: suppressed,
            f_vg,
            mean_roi_fraction: roi,
            downstream_charge: (1.0 - f_vg) * roi,
            event_count: events,
        }
    }

    #[test]
    fn numbers_are_compact() {
        assert_eq!(number(1_069_980.0), "1069980");
        assert_eq!(number(0.041_666), "0.0417");
        assert_eq!(number(1e-12), "1.0e-12");
        assert_eq!(number(0.0), "0");
    }

    #[test]
    fn empty_summary_reports_no_windows() {
        let s = GatingSummary {
            total_windows: 0,
            suppressed_windows: 0,
            f_vg: 0.0,
            mean_roi_fraction: 0.0,
            downstream_charge: 0.0,
            event_count: 0,
        };
        assert_eq!(render(&s), ("no windows\n".to_string(), true));
    }

    #[test]
    fn in_range_summary_passes_every_check() {
        let (text, ok) = render(&summary(24, 2, 0.5, 900_000));
        assert!(ok, "{text}");
        assert_eq!(text.matches("PASS").count(), 4);
    }

    #[test]
    fn out_of_range_values_fail() {
        let (text, ok) = render(&summary(24, 0, 0.9, 100));
        assert!(!ok);
        assert_eq!(text.matches("FAIL").count(), 3);
    }

    #[test]
    fn broken_identity_fails() {
        let mut s = summary(24, 2, 0.5, 900_000);
        s.downstream_charge += 1e-6;
        let failed: Vec<_> = checks(&s).into_iter().filter(|c| !c.passed()).collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].name, "charge_identity_error");
    }
}
