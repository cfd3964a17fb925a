use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Category, ContractPanel, Provenance, PRE_YEAR, SUBSIDY_MAX, SUBSIDY_MIN};
use crate::error::{Error, Result};

/// Schools removed by each welfare-sample rule. A school is charged to the
/// first rule it fails.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub schools_in: usize,
    pub missing_year: usize,
    pub transport_changed: usize,
    pub not_category_d: usize,
    pub inconsistent_with_demand: usize,
    pub unchanged: usize,
    pub retained: usize,
}

/// Category D schools observed in both years on the same transport, whose
/// price and bandwidth moved in opposite directions (or only one moved).
pub fn welfare_sample(panel: &ContractPanel) -> ContractPanel {
    welfare_sample_with_report(panel).0
}

pub fn welfare_sample_with_report(panel: &ContractPanel) -> (ContractPanel, ScreenReport) {
    let by_school = panel.by_school();
    let mut report = ScreenReport { schools_in: by_school.len(), ..Default::default() };
    let pairs: HashMap<&str, _> = panel.school_pairs().into_iter().map(|p| (p.pre.school_id.as_str(), p)).collect();
    let mut keep = BTreeSet::new();
    for school in by_school.keys() {
        let Some(pair) = pairs.get(school) else {
            report.missing_year += 1;
            continue;
        };
        let (dp, dq) = (pair.post.price - pair.pre.price, pair.post.bandwidth - pair.pre.bandwidth);
        if pair.pre.transport != pair.post.transport {
            report.transport_changed += 1;
        } else if pair.pre.category != Category::D || pair.post.category != Category::D {
            report.not_category_d += 1;
        } else if dp * dq > 0.0 {
            report.inconsistent_with_demand += 1;
        } else if dp == 0.0 && dq == 0.0 {
            report.unchanged += 1;
        } else {
            keep.insert(school.to_string());
        }
    }
    report.retained = keep.len();
    (panel.filter("welfare sample", |r| keep.contains(&r.school_id)), report)
}

/// Monthly aggregate targets over the pre-period records of a panel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsidyTargets {
    /// Target for the sum of Q0 * (1 - rho).
    pub unsubsidized_bandwidth: Option<f64>,
    /// Target for the sum of Q0 * P0 * rho.
    pub subsidy: Option<f64>,
    /// Target for the sum of (1 - rho).
    pub unsubsidized_share: Option<f64>,
}

/// Euclidean projection of `start` onto {x in [lo, hi]^n : A x = b}, by
/// semismooth Newton ascent on the dual.
fn project_box_affine(start: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>, lo: f64, hi: f64) -> Result<DVector<f64>> {
    let m = a.nrows();
    let primal = |lambda: &DVector<f64>| (start + a.transpose() * lambda).map(|x| x.clamp(lo, hi));
    let dual = |lambda: &DVector<f64>, x: &DVector<f64>| {
        0.5 * (x - start).norm_squared() - lambda.dot(&(a * x - b))
    };
    let tol = 1e-12 * (1.0 + b.amax());
    let mut lambda = DVector::zeros(m);
    let mut x = primal(&lambda);
    for _ in 0..500 {
        let grad = b - a * &x;
        if grad.amax() <= tol {
            return Ok(x);
        }
        let free: Vec<usize> = (0..x.len()).filter(|&i| x[i] > lo && x[i] < hi).collect();
        let a_free = a.select_columns(&free);
        let hess = &a_free * a_free.transpose() + DMatrix::identity(m, m) * 1e-12;
        let dir = hess.lu().solve(&grad).unwrap_or_else(|| grad.clone());
        let q0 = dual(&lambda, &x);
        let slope = grad.dot(&dir);
        let mut step = 1.0;
        loop {
            let trial = &lambda + &dir * step;
            let xt = primal(&trial);
            if dual(&trial, &xt) >= q0 + 1e-4 * step * slope || step < 1e-12 {
                lambda = trial;
                x = xt;
                break;
            }
            step *= 0.5;
        }
    }
    Err(Error::numeric("subsidy targets are not attainable with rates in [0.2, 0.9]"))
}

/// Moves each school's subsidy rate as little as possible (in the Euclidean
/// sense) so that the pre-period aggregates hit `targets`. Missing rates
/// start from the middle of the admissible range.
pub fn override_subsidy_rates(panel: &ContractPanel, targets: &SubsidyTargets) -> Result<ContractPanel> {
    let pre: Vec<_> = panel.records().iter().filter(|r| r.year == PRE_YEAR).collect();
    if pre.is_empty() {
        return Err(Error::domain("no pre-period records to calibrate subsidy rates on"));
    }
    let n = pre.len();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    if let Some(t) = targets.unsubsidized_bandwidth {
        let q: Vec<f64> = pre.iter().map(|r| r.bandwidth).collect();
        rows.push((q.clone(), q.iter().sum::<f64>() - t));
    }
    if let Some(t) = targets.subsidy {
        rows.push((pre.iter().map(|r| r.bandwidth * r.price).collect(), t));
    }
    if let Some(t) = targets.unsubsidized_share {
        rows.push((vec![1.0; n], n as f64 - t));
    }
    let mid = 0.5 * (SUBSIDY_MIN + SUBSIDY_MAX);
    let start = DVector::from_iterator(n, pre.iter().map(|r| r.subsidy_rate.unwrap_or(mid)));
    let rates = if rows.is_empty() {
        start
    } else {
        // Unit-norm rows keep the dual well scaled.
        let mut a = DMatrix::zeros(rows.len(), n);
        let mut b = DVector::zeros(rows.len());
        for (k, (w, t)) in rows.iter().enumerate() {
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (i, wi) in w.iter().enumerate() {
                a[(k, i)] = wi / norm;
            }
            b[k] = t / norm;
        }
        project_box_affine(&start, &a, &b, SUBSIDY_MIN, SUBSIDY_MAX)?
    };
    let by_school: HashMap<&str, f64> = pre.iter().zip(rates.iter()).map(|(r, &x)| (r.school_id.as_str(), x)).collect();
    let records = panel
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Some(&x) = by_school.get(r.school_id.as_str()) {
                r.subsidy_rate = Some(x);
            }
            r
        })
        .collect();
    ContractPanel::new(
        records,
        Provenance::Derived { from: Box::new(panel.provenance().clone()), step: "subsidy override".to_string() },
    )
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::record;
    use super::super::Transport;
    use super::*;

    fn panel(pairs: &[(&str, f64, f64, f64, f64)]) -> ContractPanel {
        let mut rs = Vec::new();
        for &(id, p0, q0, p1, q1) in pairs {
            rs.push(record(id, 2014, true, p0, q0));
            rs.push(record(id, 2015, true, p1, q1));
        }
        ContractPanel::new(rs, Provenance::Loaded).unwrap()
    }

    #[test]
    fn sign_rule() {
        let p = panel(&[
            ("down", 10.0, 100.0, 5.0, 200.0),
            ("up_up", 10.0, 100.0, 12.0, 200.0),
            ("same", 10.0, 100.0, 10.0, 100.0),
            ("price_only", 10.0, 100.0, 8.0, 100.0),
        ]);
        let (kept, report) = welfare_sample_with_report(&p);
        let ids: Vec<&str> = kept.school_pairs().iter().map(|s| s.pre.school_id.as_str()).collect();
        assert_eq!(ids, ["down", "price_only"]);
        assert_eq!(report.inconsistent_with_demand, 1);
        assert_eq!(report.unchanged, 1);
        assert_eq!(report.retained, 2);
    }

    #[test]
    fn upgrade_and_category_and_missing_year() {
        let mut rs = vec![
            record("dsl", 2014, true, 10.0, 100.0),
            record("dsl", 2015, true, 5.0, 200.0),
            record("cat_a", 2014, true, 10.0, 100.0),
            record("cat_a", 2015, true, 5.0, 200.0),
            record("lonely", 2014, true, 10.0, 100.0),
        ];
        rs[0].transport = Transport::Other;
        rs[2].category = Category::A;
        rs[3].category = Category::A;
        let (kept, report) = welfare_sample_with_report(&ContractPanel::new(rs, Provenance::Loaded).unwrap());
        assert!(kept.is_empty());
        assert_eq!((report.transport_changed, report.not_category_d, report.missing_year), (1, 1, 1));
    }

    #[test]
    fn subsidy_override_hits_targets() {
        // Targets generated by rates (0.3, 0.8, 0.6, 0.5).
        let p = panel(&[
            ("a", 10.0, 100.0, 5.0, 200.0),
            ("b", 20.0, 50.0, 5.0, 200.0),
            ("c", 5.0, 400.0, 5.0, 200.0),
            ("d", 8.0, 250.0, 5.0, 200.0),
        ]);
        let targets = SubsidyTargets { unsubsidized_bandwidth: Some(365.0), subsidy: Some(3300.0), unsubsidized_share: Some(1.8) };
        let out = override_subsidy_rates(&p, &targets).unwrap();
        let pre: Vec<_> = out.records().iter().filter(|r| r.year == 2014).collect();
        let rho = |r: &&super::super::ContractRecord| r.subsidy_rate.unwrap();
        let t1: f64 = pre.iter().map(|r| r.bandwidth * (1.0 - rho(r))).sum();
        let t2: f64 = pre.iter().map(|r| r.bandwidth * r.price * rho(r)).sum();
        let t3: f64 = pre.iter().map(|r| 1.0 - rho(r)).sum();
        assert!((t1 - 365.0).abs() < 1e-8 && (t2 - 3300.0).abs() < 1e-8 && (t3 - 1.8).abs() < 1e-10, "{t1} {t2} {t3}");
        assert!(out.records().iter().all(|r| r.problems().is_empty()));
        for pair in out.school_pairs() {
            assert_eq!(pair.pre.subsidy_rate, pair.post.subsidy_rate);
        }
    }

    #[test]
    fn infeasible_targets_fail() {
        let p = panel(&[("a", 10.0, 100.0, 5.0, 200.0)]);
        let targets = SubsidyTargets { unsubsidized_share: Some(0.95), ..Default::default() };
        assert!(matches!(override_subsidy_rates(&p, &targets), Err(Error::Numeric(_))));
    }
}
