//! Qualitative orderings of the preset sweeps, evaluated on sweep rows.

use serde::Serialize;

use crate::sweep::SweepRow;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Number of curve comparisons made.
    pub compared: usize,
    pub violated: usize,
    /// The first violations, for the report.
    pub violations: Vec<String>,
}

impl CheckOutcome {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            passed: true,
            compared: 0,
            violated: 0,
            violations: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.compared += 1;
        if !ok {
            self.passed = false;
            self.violated += 1;
            if self.violations.len() < 10 {
                self.violations.push(what());
            }
        }
    }

    fn finish(mut self) -> Self {
        if self.compared == 0 {
            self.passed = false;
            self.violations.push("nothing to compare".into());
        }
        self
    }
}

/// Groups rows by a key, keeping first-seen order.
fn group_by<K: PartialEq>(rows: &[SweepRow], key: impl Fn(&SweepRow) -> K) -> Vec<(K, Vec<&SweepRow>)> {
    let mut groups: Vec<(K, Vec<&SweepRow>)> = Vec::new();
    for r in rows {
        let k = key(r);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    groups
}

fn total(r: &SweepRow) -> f64 {
    r.lambda_total.unwrap_or(f64::NAN)
}

/// On a gamma sweep: at every gamma the total with an option position
/// exceeds the total without one, and the gap grows with gamma.
pub fn option_raises_ratio(rows: &[SweepRow]) -> CheckOutcome {
    let mut out = CheckOutcome::new("option_raises_ratio");
    for ((x, t, k), curve) in group_by(rows, |r| (r.x, r.maturity, r.k)) {
        let baseline: Vec<&SweepRow> = curve.iter().copied().filter(|r| r.nu == 0.0).collect();
        if baseline.is_empty() {
            continue;
        }
        for (nu, with) in group_by(&curve.iter().filter(|r| r.nu != 0.0).map(|r| (*r).clone()).collect::<Vec<_>>(), |r| r.nu) {
            let mut last_gap = f64::NEG_INFINITY;
            for r in with {
                let Some(b) = baseline.iter().find(|b| b.gamma == r.gamma) else { continue };
                let gap = total(r) - total(b);
                out.record(gap > 0.0, || format!("x={x:.4} T={t:.4} k={k:.4} nu={nu} gamma={}: gap {gap:.3e}", r.gamma));
                out.record(gap >= last_gap, || {
                    format!("x={x:.4} T={t:.4} k={k:.4} nu={nu} gamma={}: gap {gap:.3e} below {last_gap:.3e}", r.gamma)
                });
                last_gap = gap;
            }
        }
    }
    out.finish()
}

/// On a log-strike sweep: the total at the strike nearest the money beats
/// the totals at both ends of the strike range.
pub fn near_the_money_dominates(rows: &[SweepRow]) -> CheckOutcome {
    let mut out = CheckOutcome::new("near_the_money_dominates");
    for ((x, t, g, nu), curve) in group_by(rows, |r| (r.x, r.maturity, r.gamma, r.nu)) {
        if curve.len() < 3 {
            continue;
        }
        let atm = curve
            .iter()
            .min_by(|a, b| (a.k - a.x).abs().total_cmp(&(b.k - b.x).abs()))
            .expect("non-empty");
        let (first, last) = (curve[0], curve[curve.len() - 1]);
        let ok = total(atm) > total(first) && total(atm) > total(last);
        out.record(ok, || {
            format!(
                "x={x:.4} T={t:.4} gamma={g} nu={nu}: atm {:.6} ends {:.6} {:.6}",
                total(atm),
                total(first),
                total(last)
            )
        });
    }
    out.finish()
}

/// On a maturity sweep: the total is nondecreasing in maturity for every
/// moneyness, ignoring curves with `gamma < min_gamma`.
pub fn maturity_monotone(rows: &[SweepRow], min_gamma: f64) -> CheckOutcome {
    let mut out = CheckOutcome::new("maturity_monotone");
    for ((x, k, g, nu), curve) in group_by(rows, |r| (r.x, r.k, r.gamma, r.nu)) {
        if g < min_gamma {
            continue;
        }
        for w in curve.windows(2) {
            out.record(total(w[1]) >= total(w[0]), || {
                format!(
                    "x={x:.4} k={k:.4} gamma={g} nu={nu}: T {:.4} -> {:.4} gives {:.6} -> {:.6}",
                    w[0].maturity,
                    w[1].maturity,
                    total(w[0]),
                    total(w[1])
                )
            });
        }
    }
    out.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(x: f64, k: f64, t: f64, gamma: f64, nu: f64, total: f64) -> SweepRow {
        SweepRow {
            x,
            k,
            maturity: t,
            gamma,
            nu,
            lambda_total: Some(total),
            ..SweepRow::default()
        }
    }

    #[test]
    fn option_ordering() {
        let good = vec![
            row(0.0, 0.0, 1.0, 1.0, 0.0, 0.1),
            row(0.0, 0.0, 1.0, 2.0, 0.0, 0.1),
            row(0.0, 0.0, 1.0, 1.0, 1.0, 0.11),
            row(0.0, 0.0, 1.0, 2.0, 1.0, 0.13),
        ];
        assert!(option_raises_ratio(&good).passed);
        let mut bad = good.clone();
        bad[3].lambda_total = Some(0.105);
        let out = option_raises_ratio(&bad);
        assert!(!out.passed && out.violations.len() == 1 && out.violated == 1);
        assert!(!option_raises_ratio(&[]).passed);
    }

    #[test]
    fn strike_and_maturity_orderings() {
        let smile: Vec<SweepRow> = [-0.2, 0.0, 0.2].iter().map(|&k| row(0.0, k, 1.0, 1.0, 1.0, 0.1 - k * k)).collect();
        assert!(near_the_money_dominates(&smile).passed);
        let rising: Vec<SweepRow> = [0.1, 0.2, 0.3].iter().map(|&t| row(0.0, 0.0, t, 1.0, 1.0, t)).collect();
        assert!(maturity_monotone(&rising, 0.5).passed);
        let falling: Vec<SweepRow> = [0.1, 0.2, 0.3].iter().map(|&t| row(0.0, 0.0, t, 1.0, 1.0, -t)).collect();
        assert!(!maturity_monotone(&falling, 0.5).passed);
        assert!(!maturity_monotone(&falling, 2.0).passed, "skipping every curve is not a pass");
    }
}
