//! Exhaustive check of the cross-index union inequality
//! `P(U_{u != v} A_u n E_v) <= P(U A_u) P(U E_u)` for independent indices.

use rand::Rng;

use super::report::{Cell, ExperimentReport, Table, Verdict};
use crate::error::{BbmError, Result};
use crate::observables::neumaier_sum;
use crate::stochastic::RngStreamKey;

pub const ENUMERATION_GUARD: u64 = 10_000_000;
pub const SLACK: f64 = 1e-12;

/// Finite outcome space of one index with its two events.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexSpace {
    pub probs: Vec<f64>,
    pub a: Vec<bool>,
    pub e: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BkrInstance {
    pub spaces: Vec<IndexSpace>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BkrOutcome {
    pub lhs: f64,
    pub rhs: f64,
    pub violated: bool,
}

impl BkrInstance {
    pub fn validate(&self) -> Result<()> {
        for (u, s) in self.spaces.iter().enumerate() {
            if s.probs.is_empty() || s.a.len() != s.probs.len() || s.e.len() != s.probs.len() {
                return Err(BbmError::Config(format!(
                    "index {u}: events must be subsets of its outcome space"
                )));
            }
            if s.probs.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return Err(BbmError::Config(format!(
                    "index {u}: probabilities must be finite and non-negative"
                )));
            }
            let total = neumaier_sum(s.probs.iter().copied());
            if (total - 1.0).abs() > 1e-12 {
                return Err(BbmError::Config(format!(
                    "index {u}: probabilities sum to {total}, not 1"
                )));
            }
        }
        Ok(())
    }

    pub fn product_size(&self) -> u64 {
        self.spaces
            .iter()
            .try_fold(1u64, |acc, s| acc.checked_mul(s.probs.len() as u64))
            .unwrap_or(u64::MAX)
    }

    /// Random instance with `1..=max_n` indices and spaces of size `1..=max_space`.
    pub fn random(stream: RngStreamKey, max_n: usize, max_space: usize) -> Self {
        let mut rng = stream.rng();
        let n = rng.random_range(1..=max_n);
        let spaces = (0..n)
            .map(|_| {
                let k = rng.random_range(1..=max_space);
                let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
                let total: f64 = w.iter().sum();
                let mut probs: Vec<f64> = w.iter().map(|x| x / total).collect();
                // put the rounding residue on the last outcome so the sum is 1 to rounding
                let head: f64 = probs[..k - 1].iter().sum();
                probs[k - 1] = 1.0 - head;
                IndexSpace {
                    probs,
                    a: (0..k).map(|_| rng.random_bool(0.5)).collect(),
                    e: (0..k).map(|_| rng.random_bool(0.5)).collect(),
                }
            })
            .collect();
        Self { spaces }
    }
}

/// Both sides by enumeration of the product space.
pub fn bkr_brute_force(instance: &BkrInstance) -> Result<BkrOutcome> {
    instance.validate()?;
    let size = instance.product_size();
    if size > ENUMERATION_GUARD {
        return Err(BbmError::EnumerationGuard {
            size: u128::from(size),
            guard: u128::from(ENUMERATION_GUARD),
        });
    }
    let n = instance.spaces.len();
    let mut digits = vec![0usize; n];
    let (mut lhs, mut any_a, mut any_e) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..size {
        let mut p = 1.0;
        let (mut a_mask, mut e_mask) = (0u64, 0u64);
        for (u, (&d, s)) in digits.iter().zip(&instance.spaces).enumerate() {
            p *= s.probs[d];
            if s.a[d] {
                a_mask |= 1 << u;
            }
            if s.e[d] {
                e_mask |= 1 << u;
            }
        }
        // some u != v with A_u and E_v
        let cross = a_mask != 0 && e_mask != 0 && !(a_mask == e_mask && a_mask.count_ones() == 1);
        if cross {
            lhs.push(p);
        }
        if a_mask != 0 {
            any_a.push(p);
        }
        if e_mask != 0 {
            any_e.push(p);
        }
        for (d, s) in digits.iter_mut().zip(&instance.spaces) {
            *d += 1;
            if *d < s.probs.len() {
                break;
            }
            *d = 0;
        }
    }
    let lhs = neumaier_sum(lhs);
    let rhs = neumaier_sum(any_a) * neumaier_sum(any_e);
    Ok(BkrOutcome {
        lhs,
        rhs,
        violated: lhs > rhs + SLACK,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BkrCampaign {
    pub instances: u64,
    pub max_n: usize,
    pub max_space: usize,
}

impl Default for BkrCampaign {
    fn default() -> Self {
        Self {
            instances: 1000,
            max_n: 3,
            max_space: 4,
        }
    }
}

/// Brute-forces `instances` random instances; one row per instance.
pub fn bkr_campaign(cfg: &BkrCampaign, stream: RngStreamKey) -> Result<ExperimentReport> {
    if cfg.max_n == 0 || cfg.max_space == 0 || cfg.max_n > 63 {
        return Err(BbmError::Config(
            "bkr-check needs 1 <= max_n <= 63 and max_space >= 1".into(),
        ));
    }
    let mut table = Table::new(
        "bkr",
        &["instance", "n", "space_sizes", "lhs", "rhs", "margin", "violated"],
    );
    let mut violations = 0u64;
    for i in 0..cfg.instances {
        let inst = BkrInstance::random(stream.derive(i), cfg.max_n, cfg.max_space);
        let out = bkr_brute_force(&inst)?;
        violations += u64::from(out.violated);
        let sizes: Vec<String> = inst.spaces.iter().map(|s| s.probs.len().to_string()).collect();
        table.push(vec![
            i.into(),
            inst.spaces.len().into(),
            sizes.join(" ").into(),
            out.lhs.into(),
            out.rhs.into(),
            (out.rhs - out.lhs).into(),
            Cell::Int(i64::from(out.violated)),
        ]);
    }
    let mut rep = ExperimentReport::new("bkr-check");
    rep.echo("instances", cfg.instances);
    rep.echo("max_n", cfg.max_n);
    rep.echo("max_space", cfg.max_space);
    rep.echo("slack", SLACK);
    rep.tables.push(table);
    rep.verdict = Some(Verdict {
        pass: violations == 0,
        detail: format!("{violations} violations in {} instances", cfg.instances),
    });
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(probs: &[f64], a: &[bool], e: &[bool]) -> IndexSpace {
        IndexSpace {
            probs: probs.to_vec(),
            a: a.to_vec(),
            e: e.to_vec(),
        }
    }

    #[test]
    fn single_index_has_empty_union() {
        let inst = BkrInstance {
            spaces: vec![space(&[0.3, 0.7], &[true, true], &[true, false])],
        };
        let o = bkr_brute_force(&inst).unwrap();
        assert_eq!(o.lhs, 0.0);
        assert!(!o.violated);
    }

    #[test]
    fn saturated_events() {
        let full = space(&[0.5, 0.5], &[true, true], &[true, true]);
        let o = bkr_brute_force(&BkrInstance {
            spaces: vec![full.clone(), full],
        })
        .unwrap();
        assert!((o.lhs - 1.0).abs() < 1e-15 && (o.rhs - 1.0).abs() < 1e-15);
        assert!(!o.violated);
    }

    #[test]
    fn two_independent_indices_closed_form() {
        // A_u and E_u are disjoint within each index, so A_1 E_2 and A_2 E_1 are disjoint
        let s1 = space(&[0.2, 0.3, 0.5], &[true, false, false], &[false, true, false]);
        let s2 = space(&[0.6, 0.4], &[true, false], &[false, true]);
        let o = bkr_brute_force(&BkrInstance { spaces: vec![s1, s2] }).unwrap();
        let (a1, e1, a2, e2) = (0.2, 0.3, 0.6, 0.4);
        assert!((o.lhs - (a1 * e2 + a2 * e1)).abs() < 1e-15);
        let rhs = (1.0 - (1.0 - a1) * (1.0 - a2)) * (1.0 - (1.0 - e1) * (1.0 - e2));
        assert!((o.rhs - rhs).abs() < 1e-15);
    }

    #[test]
    fn guard_and_validation() {
        let big = space(&vec![1.0 / 400.0; 400], &[false; 400], &[false; 400]);
        let inst = BkrInstance {
            spaces: vec![big.clone(), big.clone(), big],
        };
        assert!(matches!(bkr_brute_force(&inst), Err(BbmError::EnumerationGuard { .. })));
        let bad = BkrInstance {
            spaces: vec![space(&[0.5, 0.6], &[true, false], &[false, true])],
        };
        assert!(bkr_brute_force(&bad).is_err());
    }

    #[test]
    fn random_campaign_has_no_violations() {
        let rep = bkr_campaign(&BkrCampaign::default(), RngStreamKey::root(7)).unwrap();
        assert_eq!(rep.tables[0].rows.len(), 1000);
        assert!(rep.verdict.unwrap().pass);
    }
}
