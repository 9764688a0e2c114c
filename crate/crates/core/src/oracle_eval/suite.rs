//! The full identity and oracle suite run by `sbfm verify`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    derivation_chain_suite, energy_distance, fd_score_check, gaussian_bridge_transport_check, gaussian_pairs,
    gradient_fd_check, permutation_test, random_small_config, GaussianPairs,
};
use crate::bridge_math::{mean_path, sample_bridge_point, BridgeSchedule, EndpointPair, LatentState, TimePoint};
use crate::error::Result;
use crate::objective::{draw_training_point, DrawStreams, LossConfig, ObjectiveKind};
use crate::rng::{streams, RandomStream};
use crate::simulate::{euler_maruyama_sde, IntegrationPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSettings {
    pub seed: u64,
    pub chain_draws: usize,
    pub transport_pairs: usize,
    pub sde_paths: usize,
    pub permutations: usize,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            chain_draws: 10_000,
            transport_pairs: 1000,
            sde_paths: 20_000,
            permutations: super::PERMUTATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed<F>(name: &str, f: F) -> CheckOutcome
where
    F: FnOnce() -> Result<(bool, String)>,
{
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome {
        name: name.into(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Max deviation of both identities over randomized (pair, x, t, σ); the
/// runtime bound is part of the check.
pub fn check_derivation_chain(s: &SuiteSettings) -> CheckOutcome {
    let start = Instant::now();
    let mut out = timed("derivation-chain", || {
        let mut rng = RandomStream::derive(s.seed, "verify/chain", 0);
        let c = derivation_chain_suite(s.chain_draws, 4, 1e-3, &mut rng)?;
        Ok((
            c.passes(1e-10),
            format!("max deviation {:.3e} over {} draws (< 1e-10)", c.max_deviation(), c.n_points),
        ))
    });
    let secs = start.elapsed().as_secs_f64();
    if secs >= 5.0 {
        out.passed = false;
        out.detail.push_str(&format!("; runtime {secs:.2}s exceeds 5s"));
    }
    out
}

pub fn check_score_fd(s: &SuiteSettings) -> CheckOutcome {
    timed("score-finite-difference", || {
        let pt = |v: f64| LatentState::from_concat(vec![v, v], 1);
        let pair = EndpointPair::new(pt(0.0)?, pt(2.0)?)?;
        let sched = BridgeSchedule::new(1.0, 1e-3)?;
        let t = TimePoint::new(0.25)?;
        let worked = fd_score_check(&pair, &sched, &pt(1.0)?, t)?;
        let at_mean = fd_score_check(&pair, &sched, &mean_path(&pair, t)?, t)?;
        let mut rng = RandomStream::derive(s.seed, "verify/score", 0);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let mut a = vec![0.0; 6];
            let mut b = vec![0.0; 6];
            rng.fill_normal(&mut a);
            rng.fill_normal(&mut b);
            let pair = EndpointPair::new(LatentState::from_concat(a, 3)?, LatentState::from_concat(b, 3)?)?;
            let t = TimePoint::new(rng.uniform(0.05, 0.95))?;
            let sched = BridgeSchedule::new(rng.uniform(0.1, 1.5), 1e-3)?;
            let x = sample_bridge_point(&pair, &sched, t, &mut rng)?;
            worst = worst.max(fd_score_check(&pair, &sched, &x, t)?.max_rel_error);
        }
        Ok((
            worked.max_rel_error < 1e-6 && at_mean.max_abs_error < 1e-8 && worst < 1e-6,
            format!(
                "worked example rel {:.1e}; at mean abs {:.1e}; 100 random points max rel {:.1e}",
                worked.max_rel_error, at_mean.max_abs_error, worst
            ),
        ))
    })
}

/// Euler–Maruyama paths of a 2-D bridge (σ = 1) on `[0, 200/204]` with 200
/// steps, so `t = 0.25, 0.5, 0.75` are grid nodes 51, 102 and 153.
pub fn check_sde_marginals(s: &SuiteSettings) -> CheckOutcome {
    let start = Instant::now();
    let mut out = timed("sde-marginal-law", || {
        let sched = BridgeSchedule::new(1.0, 1e-3)?;
        let pair = EndpointPair::new(
            LatentState::from_concat(vec![0.0, 0.0], 1)?,
            LatentState::from_concat(vec![2.0, -1.0], 1)?,
        )?;
        let plan = IntegrationPlan::new(200, 0.0, 200.0 / 204.0, true)?;
        let nodes = [51usize, 102, 153];
        let n = s.sde_paths;
        let mut sum = [[0.0f64; 2]; 3];
        let mut sq = [[0.0f64; 2]; 3];
        for p in 0..n {
            let mut rng = RandomStream::derive(s.seed, streams::SDE, p as u64);
            let traj = euler_maruyama_sde(&pair, &sched, &pair.x0, &plan, &mut rng)?;
            for (j, &k) in nodes.iter().enumerate() {
                for d in 0..2 {
                    let v = traj.states[k].as_slice()[d];
                    sum[j][d] += v;
                    sq[j][d] += v * v;
                }
            }
        }
        let mut ok = true;
        let mut worst_mean = 0.0f64;
        let mut worst_var = 0.0f64;
        for (j, &k) in nodes.iter().enumerate() {
            let t = TimePoint::new(plan.time(k))?;
            let mu = mean_path(&pair, t)?;
            let var = sched.sigma * sched.sigma * t.get() * (1.0 - t.get());
            for d in 0..2 {
                let m = sum[j][d] / n as f64;
                let v = (sq[j][d] - n as f64 * m * m) / (n as f64 - 1.0);
                let z = (m - mu.as_slice()[d]).abs() / (var / n as f64).sqrt();
                let rel = (v / var - 1.0).abs();
                worst_mean = worst_mean.max(z);
                worst_var = worst_var.max(rel);
                ok &= z <= 3.0 && rel <= 0.05;
            }
        }
        Ok((
            ok,
            format!("{n} paths: worst mean offset {worst_mean:.2} standard errors (<= 3), worst variance error {:.2}% (<= 5%)", 100.0 * worst_var),
        ))
    });
    let secs = start.elapsed().as_secs_f64();
    if secs >= 30.0 {
        out.passed = false;
        out.detail.push_str(&format!("; runtime {secs:.2}s exceeds 30s"));
    }
    out
}

/// With σ = 0 the bridge target and the straight-line target coincide bitwise.
pub fn check_sigma_zero(s: &SuiteSettings) -> CheckOutcome {
    timed("sigma-zero-degeneration", || {
        let sb = LossConfig {
            schedule: BridgeSchedule::new(0.0, 1e-3)?,
            ..LossConfig::default()
        };
        let cfm = LossConfig {
            objective_kind: ObjectiveKind::Cfm,
            ..sb
        };
        let mut rng = RandomStream::derive(s.seed, "verify/sigma-zero", 0);
        let streams = |i: u64| DrawStreams {
            time: RandomStream::derive(s.seed, streams::TIME_DRAWS, i),
            noise: RandomStream::derive(s.seed, streams::BRIDGE_NOISE, i),
        };
        let mut mismatches = 0usize;
        let draws = 10_000;
        for i in 0..draws {
            let mut a = vec![0.0; 6];
            let mut b = vec![0.0; 6];
            rng.fill_normal(&mut a);
            rng.fill_normal(&mut b);
            let pair = EndpointPair::new(LatentState::from_concat(a, 2)?, LatentState::from_concat(b, 2)?)?;
            let p = draw_training_point(&pair, &sb, &mut streams(i))?;
            let q = draw_training_point(&pair, &cfm, &mut streams(i))?;
            let same = p.target.as_slice().iter().zip(q.target.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits());
            if !same {
                mismatches += 1;
            }
        }
        Ok((mismatches == 0, format!("{mismatches} of {draws} targets differ bitwise")))
    })
}

pub fn check_gradients(s: &SuiteSettings) -> CheckOutcome {
    let start = Instant::now();
    let mut out = timed("gradient-oracle", || {
        let mut worst = 0.0f64;
        for k in 0..5 {
            let cfg = random_small_config(s.seed.wrapping_add(k));
            worst = worst.max(gradient_fd_check(&cfg, s.seed.wrapping_add(100 + k))?);
        }
        Ok((worst < 1e-4, format!("5 random configs, worst coordinate rel error {worst:.2e} (< 1e-4)")))
    });
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        out.passed = false;
        out.detail.push_str(&format!("; runtime {secs:.2}s exceeds 60s"));
    }
    out
}

pub fn check_transport(s: &SuiteSettings) -> Vec<CheckOutcome> {
    let spec = GaussianPairs {
        n_pairs: s.transport_pairs,
        seed: s.seed,
        ..GaussianPairs::default()
    };
    let order = timed("euler-order", || {
        let sched = BridgeSchedule::new(0.1, 1e-3)?;
        let pairs = gaussian_pairs(&spec)?;
        let plan = IntegrationPlan::clamped(&sched, 30, false)?;
        let e30 = gaussian_bridge_transport_check(&sched, &plan, &pairs)?.mean_error;
        let e60 = gaussian_bridge_transport_check(&sched, &plan.with_steps(60), &pairs)?.mean_error;
        let e120 = gaussian_bridge_transport_check(&sched, &plan.with_steps(120), &pairs)?.mean_error;
        let ratio = e30 / e60;
        Ok((
            (1.7..=2.3).contains(&ratio) && e30 < 5e-2 && e120 <= e60 && e60 <= e30,
            format!("mean endpoint error 30/60/120 steps: {e30:.4e} / {e60:.4e} / {e120:.4e}; ratio 30:60 = {ratio:.3} (in [1.7, 2.3])"),
        ))
    });
    let clamp = timed("transport-sigma-zero", || {
        let sched = BridgeSchedule::new(0.0, 1e-3)?;
        let pairs = gaussian_pairs(&spec)?;
        let c = gaussian_bridge_transport_check(&sched, &IntegrationPlan::clamped(&sched, 30, false)?, &pairs)?;
        Ok((
            c.max_clamp_ratio <= 1.0 + 1e-9,
            format!("max error / (2ε‖x1 − x0‖) = {:.12}", c.max_clamp_ratio),
        ))
    });
    let identical = timed("transport-identical-endpoints", || {
        let sched = BridgeSchedule::new(0.1, 1e-3)?;
        let pairs = gaussian_pairs(&GaussianPairs { identical: true, ..spec })?;
        let c = gaussian_bridge_transport_check(&sched, &IntegrationPlan::clamped(&sched, 30, false)?, &pairs)?;
        Ok((c.max_error < 1e-12, format!("max error {:.1e}", c.max_error)))
    });
    vec![order, clamp, identical]
}

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

pub fn check_energy_distance(s: &SuiteSettings) -> CheckOutcome {
    timed("energy-distance", || {
        let gauss = |n: usize, shift: f64, idx: u64| {
            let mut rng = RandomStream::derive(s.seed, "verify/energy", idx);
            (0..n).map(|_| vec![shift + rng.normal(), rng.normal()]).collect::<Vec<_>>()
        };
        let (a, b, c) = (gauss(1000, 0.0, 0), gauss(1000, 0.0, 1), gauss(300, 3.0, 2));
        let mut rng = RandomStream::derive(s.seed, streams::EVAL, 99);
        let same = permutation_test(&refs(&a), &refs(&b), s.permutations, &mut rng)?;
        let shifted = permutation_test(&refs(&a[..300]), &refs(&c), s.permutations, &mut rng)?;
        let sym = energy_distance(&refs(&a), &refs(&c))? == energy_distance(&refs(&c), &refs(&a))?;
        Ok((
            same.statistic < same.threshold && shifted.statistic > shifted.threshold && sym,
            format!(
                "same law {:.4} vs threshold {:.4}; shift 3 {:.4} vs threshold {:.4}; symmetric {sym}",
                same.statistic, same.threshold, shifted.statistic, shifted.threshold
            ),
        ))
    })
}

pub fn run_suite(s: &SuiteSettings) -> Vec<CheckOutcome> {
    let mut out = vec![
        check_derivation_chain(s),
        check_score_fd(s),
        check_sde_marginals(s),
        check_sigma_zero(s),
        check_gradients(s),
    ];
    out.extend(check_transport(s));
    out.push(check_energy_distance(s));
    out
}
