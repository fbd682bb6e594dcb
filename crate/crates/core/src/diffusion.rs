//! Variance schedules, forward corruption, the velocity parameterization
//! and reverse samplers.
//!
//! Steps are 1-based: `t ∈ 1..=T`, with `ᾱ_0 = 1`.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::anchors::ConditionTensors;
use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// β linearly interpolated from `beta_min` at t=1 to `beta_max` at t=T.
pub fn make_schedule(steps: usize, kind: ScheduleKind, beta_min: f64, beta_max: f64) -> Result<Schedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::invalid(format!(
            "schedule bounds must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect(),
    };
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0f64;
    for b in &betas {
        acc *= 1.0 - b;
        alpha_bars.push(acc);
    }
    Ok(Schedule { betas, alpha_bars })
}

impl Default for Schedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, ScheduleKind::Linear, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX)
            .expect("default schedule is valid")
    }
}

impl Schedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    fn coefficients(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        (ab.sqrt(), (1.0 - ab).sqrt())
    }

    /// Posterior variance `β̃_t = (1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// Text table `t beta alpha_bar`, one row per step.
    pub fn write_table(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# t beta alpha_bar")?;
        for t in 1..=self.steps() {
            writeln!(w, "{t} {:.17e} {:.17e}", self.beta(t), self.alpha_bar(t))?;
        }
        Ok(())
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("shape mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// `z_t = √ᾱ_t z_0 + √(1−ᾱ_t) ε`.
pub fn forward_sample(z0: &[f64], t: usize, eps: &[f64], sched: &Schedule) -> Result<Vec<f64>> {
    check_len(z0, eps)?;
    sched.check_step(t)?;
    let (a, s) = sched.coefficients(t);
    Ok(z0.iter().zip(eps).map(|(z, e)| a * z + s * e).collect())
}

/// `u_t = √ᾱ_t ε − √(1−ᾱ_t) z_0`.
pub fn velocity_target(z0: &[f64], eps: &[f64], t: usize, sched: &Schedule) -> Result<Vec<f64>> {
    check_len(z0, eps)?;
    sched.check_step(t)?;
    let (a, s) = sched.coefficients(t);
    Ok(z0.iter().zip(eps).map(|(z, e)| a * e - s * z).collect())
}

/// `ẑ_0 = √ᾱ_t z_t − √(1−ᾱ_t) u`.
pub fn recover_z0(z_t: &[f64], u: &[f64], t: usize, sched: &Schedule) -> Result<Vec<f64>> {
    check_len(z_t, u)?;
    sched.check_step(t)?;
    let (a, s) = sched.coefficients(t);
    Ok(z_t.iter().zip(u).map(|(z, v)| a * z - s * v).collect())
}

/// `ε̂ = √(1−ᾱ_t) z_t + √ᾱ_t u`.
pub fn recover_eps(z_t: &[f64], u: &[f64], t: usize, sched: &Schedule) -> Result<Vec<f64>> {
    check_len(z_t, u)?;
    sched.check_step(t)?;
    let (a, s) = sched.coefficients(t);
    Ok(z_t.iter().zip(u).map(|(z, v)| s * z + a * v).collect())
}

/// Predicts the velocity `u` for a noisy latent.
pub trait Denoiser {
    fn predict(&self, z_t: &[f64], t: usize, conditions: Option<&ConditionTensors>, sched: &Schedule) -> Vec<f64>;
}

/// Returns the exact velocity that maps `z_t` back to a known `z_0`.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    pub z0: Vec<f64>,
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, z_t: &[f64], t: usize, _: Option<&ConditionTensors>, sched: &Schedule) -> Vec<f64> {
        let (a, s) = sched.coefficients(t);
        z_t.iter().zip(&self.z0).map(|(z, z0)| (a * z - z0) / s).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantDenoiser(pub f64);

impl Denoiser for ConstantDenoiser {
    fn predict(&self, z_t: &[f64], _: usize, _: Option<&ConditionTensors>, _: &Schedule) -> Vec<f64> {
        vec![self.0; z_t.len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Deterministic,
    Ancestral,
}

/// One reverse step with an explicit posterior noise draw `xi` (used only in
/// ancestral mode): `z_{t−1} = √ᾱ_{t−1} ẑ_0 + √(1−ᾱ_{t−1}) ε̂ [+ √β̃_t ξ]`.
pub fn reverse_step_with_noise(
    z_t: &[f64],
    t: usize,
    denoiser: &dyn Denoiser,
    conditions: Option<&ConditionTensors>,
    sched: &Schedule,
    mode: SamplerMode,
    xi: &[f64],
) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    let u = denoiser.predict(z_t, t, conditions, sched);
    check_len(z_t, &u)?;
    let z0 = recover_z0(z_t, &u, t, sched)?;
    let eps = recover_eps(z_t, &u, t, sched)?;
    let (a, s) = sched.coefficients(t - 1);
    let mut out: Vec<f64> = z0.iter().zip(&eps).map(|(z, e)| a * z + s * e).collect();
    if mode == SamplerMode::Ancestral && t > 1 {
        check_len(z_t, xi)?;
        let sigma = sched.posterior_variance(t).sqrt();
        for (o, x) in out.iter_mut().zip(xi) {
            *o += sigma * x;
        }
    }
    Ok(out)
}

pub fn reverse_step(
    z_t: &[f64],
    t: usize,
    denoiser: &dyn Denoiser,
    conditions: Option<&ConditionTensors>,
    sched: &Schedule,
    mode: SamplerMode,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let xi: Vec<f64> = match mode {
        SamplerMode::Ancestral => (0..z_t.len()).map(|_| rng.sample(StandardNormal)).collect(),
        SamplerMode::Deterministic => Vec::new(),
    };
    reverse_step_with_noise(z_t, t, denoiser, conditions, sched, mode, &xi)
}

/// Runs steps `T, T−1, …, 1` from `z_T`.
pub fn sample(
    z_t: Vec<f64>,
    denoiser: &dyn Denoiser,
    conditions: Option<&ConditionTensors>,
    sched: &Schedule,
    mode: SamplerMode,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut z = z_t;
    for t in (1..=sched.steps()).rev() {
        z = reverse_step(&z, t, denoiser, conditions, sched, mode, rng)?;
    }
    Ok(z)
}

/// Mean squared error between predicted and target velocity.
pub fn ldm_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len(pred, target)?;
    if pred.is_empty() {
        return Err(Error::invalid("loss over an empty tensor"));
    }
    Ok(pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normals(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, ScheduleKind::Linear, 0.3, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 1.0 - 0.3);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn default_schedule_decreases_and_matches_product() {
        let s = Schedule::default();
        let mut running = 1.0f64;
        for t in 1..=s.steps() {
            let b = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0;
            assert!((s.beta(t) - b).abs() < 1e-15);
            running *= 1.0 - b;
            assert!((s.alpha_bar(t) - running).abs() < 1e-12);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn bad_bounds_rejected() {
        assert!(make_schedule(0, ScheduleKind::Linear, 0.1, 0.2).is_err());
        assert!(make_schedule(10, ScheduleKind::Linear, 0.0, 0.2).is_err());
        assert!(make_schedule(10, ScheduleKind::Linear, 0.3, 0.2).is_err());
        assert!(make_schedule(10, ScheduleKind::Linear, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_limits() {
        let s = make_schedule(10, ScheduleKind::Linear, 1e-8, 1e-2).unwrap();
        let z0 = [1.0, -2.0, 0.5];
        let e = [0.3, 0.1, -1.0];
        let z = forward_sample(&z0, 1, &e, &s).unwrap();
        for i in 0..3 {
            assert!((z[i] - z0[i]).abs() <= 2.0 * 1e-8f64.sqrt());
        }
        let z = forward_sample(&z0, 7, &[0.0; 3], &s).unwrap();
        for i in 0..3 {
            assert_eq!(z[i], s.alpha_bar(7).sqrt() * z0[i]);
        }
        assert!(forward_sample(&z0, 0, &e, &s).is_err());
        assert!(forward_sample(&z0, 11, &e, &s).is_err());
    }

    #[test]
    fn velocity_limits() {
        let s = make_schedule(4, ScheduleKind::Linear, 1e-12, 1e-12).unwrap();
        let u = velocity_target(&[3.0], &[0.7], 1, &s).unwrap();
        assert!((u[0] - 0.7).abs() < 1e-5);
        let s = Schedule::default();
        let u = velocity_target(&[3.0], &[0.0], 500, &s).unwrap();
        assert_eq!(u[0], -(1.0 - s.alpha_bar(500)).sqrt() * 3.0);
    }

    #[test]
    fn rotation_property() {
        let s = Schedule::default();
        for t in 1..=s.steps() {
            let (a, b) = s.coefficients(t);
            assert!((a * a + b * b - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn recovery_identities() {
        let s = Schedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in [1, 2, 500, 999, 1000] {
            let z0 = normals(32, &mut rng);
            let e = normals(32, &mut rng);
            let zt = forward_sample(&z0, t, &e, &s).unwrap();
            let u = velocity_target(&z0, &e, t, &s).unwrap();
            let z0h = recover_z0(&zt, &u, t, &s).unwrap();
            let eh = recover_eps(&zt, &u, t, &s).unwrap();
            for i in 0..32 {
                assert!((z0h[i] - z0[i]).abs() < 1e-10);
                assert!((eh[i] - e[i]).abs() < 1e-10);
            }
        }
        let zt = forward_sample(&[1.0, 2.0], 10, &[0.0, 0.0], &s).unwrap();
        let u = velocity_target(&[1.0, 2.0], &[0.0, 0.0], 10, &s).unwrap();
        for v in recover_eps(&zt, &u, 10, &s).unwrap() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn oracle_chain_recovers_and_contracts() {
        let s = Schedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z0 = normals(64, &mut rng);
        let e = normals(64, &mut rng);
        let mut z = forward_sample(&z0, s.steps(), &e, &s).unwrap();
        let oracle = OracleDenoiser { z0: z0.clone() };
        let err = |z: &[f64]| z.iter().zip(&z0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let mut prev = err(&z);
        for t in (1..=s.steps()).rev() {
            z = reverse_step(&z, t, &oracle, None, &s, SamplerMode::Deterministic, &mut rng).unwrap();
            let e = err(&z);
            assert!(e <= prev + 1e-12);
            prev = e;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn last_step_returns_z0_hat() {
        let s = Schedule::default();
        let z = [0.4, -1.2];
        let d = ConstantDenoiser(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = reverse_step(&z, 1, &d, None, &s, SamplerMode::Deterministic, &mut rng).unwrap();
        let want = recover_z0(&z, &[0.3, 0.3], 1, &s).unwrap();
        assert_eq!(out, want);
    }

    #[test]
    fn ancestral_with_zero_noise_equals_deterministic() {
        let s = Schedule::default();
        let z = [0.4, -1.2, 2.0];
        let d = ConstantDenoiser(-0.1);
        for t in [2, 300, 1000] {
            let a = reverse_step_with_noise(&z, t, &d, None, &s, SamplerMode::Ancestral, &[0.0; 3]).unwrap();
            let b = reverse_step_with_noise(&z, t, &d, None, &s, SamplerMode::Deterministic, &[]).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let s = make_schedule(50, ScheduleKind::Linear, 1e-4, 0.05).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = normals(8, &mut rng);
            sample(z, &ConstantDenoiser(0.0), None, &s, SamplerMode::Ancestral, &mut rng).unwrap()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn ldm_loss_values() {
        assert_eq!(ldm_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ldm_loss(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 4.0);
        let p = [0.3, -1.5, 2.25];
        let q = [1.0, 0.5, -0.75];
        let direct = ((0.3f64 - 1.0).powi(2) + (-1.5f64 - 0.5).powi(2) + (2.25f64 + 0.75).powi(2)) / 3.0;
        assert!((ldm_loss(&p, &q).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn table_dump_rows() {
        let s = make_schedule(3, ScheduleKind::Linear, 0.1, 0.3).unwrap();
        let mut buf = Vec::new();
        s.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 3);
        let f: Vec<f64> = rows[2].split_whitespace().map(|v| v.parse().unwrap()).collect();
        assert_eq!(f[0], 3.0);
        assert!((f[1] - 0.3).abs() < 1e-15);
        assert!((f[2] - 0.9 * 0.8 * 0.7).abs() < 1e-15);
    }
}
