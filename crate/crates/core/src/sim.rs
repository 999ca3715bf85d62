//! Synthetic lane-keeping trajectory generator with a planted distraction
//! effect.
//!
//! Lateral position follows a discretized mean-reverting (Ornstein-Uhlenbeck
//! style) process around lane center. During distraction episodes the noise
//! variance is inflated and drift-and-correct excursions fire at a configured
//! rate, so the planted signal lives in departure variability rather than in
//! any mean shift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Drive, Task, TrajectoryDataset, TrajectorySample};
use crate::error::{Error, Result};
use crate::{derive_seed, fnv1a};

const STREAM_PROFILE: u64 = 0x7072;
const STREAM_DRIVE: u64 = 0x6472;

// Drift-and-correct excursions: lateral velocity and hold time drawn per event.
const DRIFT_VEL_RANGE: (f64, f64) = (0.2, 0.45);
const DRIFT_DURATION_RANGE: (f64, f64) = (0.6, 1.4);

/// Per-driver dynamics parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverProfile {
    pub driver_id: String,
    /// Baseline lateral noise scale (m per sqrt-second).
    pub noise_scale: f64,
    /// Mean-reversion rate toward lane center (1/s).
    pub reversion_rate: f64,
    /// Noise-variance multiplier while distracted (>= 1).
    pub variance_multiplier: f64,
    /// Drift-event rate while distracted (events/s).
    pub drift_rate: f64,
    /// Forward speed (m/s).
    pub speed: f64,
    /// Lane half-width (m).
    pub lane_half_width: f64,
}

impl DriverProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("noise_scale", self.noise_scale),
            ("reversion_rate", self.reversion_rate),
            ("speed", self.speed),
            ("lane_half_width", self.lane_half_width),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Argument(format!(
                    "profile {}: {name} = {v} must be positive and finite",
                    self.driver_id
                )));
            }
        }
        if !(self.variance_multiplier.is_finite() && self.variance_multiplier >= 1.0) {
            return Err(Error::Argument(format!(
                "profile {}: variance_multiplier = {} must be at least 1",
                self.driver_id, self.variance_multiplier
            )));
        }
        if !(self.drift_rate.is_finite() && self.drift_rate >= 0.0) {
            return Err(Error::Argument(format!(
                "profile {}: drift_rate = {} must be non-negative",
                self.driver_id, self.drift_rate
            )));
        }
        Ok(())
    }
}

/// One distraction episode within a drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start_s: f64,
    pub duration_s: f64,
    pub task: Task,
}

impl Episode {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }
}

/// Ordered, non-overlapping distraction episodes for one drive.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodePlan {
    pub episodes: Vec<Episode>,
}

impl EpisodePlan {
    /// No secondary tasks at all.
    pub fn baseline() -> Self {
        Self::default()
    }

    pub fn validate(&self, duration_s: f64) -> Result<()> {
        let mut prev_end = 0.0;
        for e in &self.episodes {
            if e.task == Task::None {
                return Err(Error::Plan(format!(
                    "episode at {} s has no secondary task",
                    e.start_s
                )));
            }
            if !(e.start_s.is_finite() && e.start_s >= 0.0)
                || !(e.duration_s.is_finite() && e.duration_s > 0.0)
            {
                return Err(Error::Plan(format!(
                    "episode at {} s has invalid timing (duration {} s)",
                    e.start_s, e.duration_s
                )));
            }
            if e.start_s < prev_end {
                return Err(Error::Plan(format!(
                    "episode at {} s overlaps the previous one ending at {prev_end} s",
                    e.start_s
                )));
            }
            if e.end_s() > duration_s {
                return Err(Error::Plan(format!(
                    "episode ending at {} s runs past the {duration_s} s drive",
                    e.end_s()
                )));
            }
            prev_end = e.end_s();
        }
        Ok(())
    }

    /// Active task at time `t`, if any.
    pub fn task_at(&self, t: f64) -> Option<Task> {
        self.episodes
            .iter()
            .find(|e| t >= e.start_s && t < e.end_s())
            .map(|e| e.task)
    }

    /// Fraction of the drive spent distracted.
    pub fn distracted_fraction(&self, duration_s: f64) -> f64 {
        self.episodes.iter().map(|e| e.duration_s).sum::<f64>() / duration_s
    }
}

/// Three-episode plan (message, call, long message) covering half the drive,
/// snapped to whole seconds. Needs a drive of at least 12 s.
pub fn standard_plan(duration_s: f64) -> EpisodePlan {
    let episode = (duration_s / 6.0).round();
    let gap = (duration_s / 8.0).round();
    let tasks = [Task::ShortMsg, Task::Call, Task::LongMsg];
    EpisodePlan {
        episodes: tasks
            .iter()
            .enumerate()
            .map(|(k, &task)| Episode {
                start_s: (k + 1) as f64 * gap + k as f64 * episode,
                duration_s: episode,
                task,
            })
            .collect(),
    }
}

/// Simulate one drive at `rate_hz` for `duration_s` seconds.
///
/// The lateral offset evolves by mean reversion plus Gaussian noise; within
/// episodes the noise variance is multiplied by the profile's factor and
/// drift-and-correct events add a held lateral velocity. Kinematic signals
/// come from forward differences (the final difference is repeated), with
/// yaw from `atan(lat_vel / speed)`. Per-step random draws do not depend on
/// the label, so a null effect (multiplier 1, rate 0) yields trajectories
/// identical to baseline.
pub fn simulate_drive(
    profile: &DriverProfile,
    plan: &EpisodePlan,
    drive_id: &str,
    duration_s: f64,
    rate_hz: f64,
    seed: u64,
) -> Result<Drive> {
    profile.validate()?;
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::Argument(format!(
            "duration = {duration_s} s must be positive"
        )));
    }
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(Error::Argument(format!(
            "rate = {rate_hz} Hz must be positive"
        )));
    }
    plan.validate(duration_s)?;

    let n = (duration_s * rate_hz).round() as usize;
    let dt = 1.0 / rate_hz;
    let half = profile.lane_half_width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut ys = Vec::with_capacity(n);
    let mut y = 0.0f64;
    let mut drift_steps = 0usize;
    let mut drift_vel = 0.0f64;
    for i in 0..n {
        let t = i as f64 * dt;
        let distracted = plan.task_at(t).is_some();
        ys.push(y);
        // one uniform + one normal per step regardless of label, so the label
        // influences the trajectory only through the effect parameters
        let event_draw: f64 = rng.gen();
        if distracted && drift_steps == 0 && event_draw < profile.drift_rate * dt {
            let magnitude = rng.gen_range(DRIFT_VEL_RANGE.0..DRIFT_VEL_RANGE.1);
            drift_vel = if rng.gen::<bool>() { magnitude } else { -magnitude };
            let hold = rng.gen_range(DRIFT_DURATION_RANGE.0..DRIFT_DURATION_RANGE.1);
            drift_steps = (hold * rate_hz).round() as usize;
        }
        let drift = if drift_steps > 0 {
            drift_steps -= 1;
            drift_vel
        } else {
            0.0
        };
        let sigma = if distracted {
            profile.noise_scale * profile.variance_multiplier.sqrt()
        } else {
            profile.noise_scale
        };
        let noise: f64 = rng.sample(StandardNormal);
        y += (-profile.reversion_rate * y + drift) * dt + sigma * dt.sqrt() * noise;
        y = y.clamp(-half, half);
    }

    let diff = |series: &[f64]| -> Vec<f64> {
        let mut out: Vec<f64> = series.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
        if let Some(&last) = out.last() {
            out.push(last);
        } else {
            out.push(0.0);
        }
        out
    };
    let lat_vel = diff(&ys);
    let lat_acc = diff(&lat_vel);
    let yaw: Vec<f64> = lat_vel.iter().map(|&v| (v / profile.speed).atan()).collect();
    let yaw_vel = diff(&yaw);
    let yaw_acc = diff(&yaw_vel);

    let samples = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            let task = plan.task_at(t);
            TrajectorySample {
                time_s: t,
                task: task.unwrap_or(Task::None),
                lat_vel: lat_vel[i],
                lat_acc: lat_acc[i],
                yaw_vel: yaw_vel[i],
                yaw_acc: yaw_acc[i],
                ld_center: ys[i],
                ld_left: half - ys[i],
                ld_right: half + ys[i],
                distracted: task.is_some(),
            }
        })
        .collect();
    Ok(Drive {
        driver_id: profile.driver_id.clone(),
        drive_id: drive_id.into(),
        samples,
    })
}

/// Uniform jitter ranges for cohort profiles, plus shared geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpread {
    pub noise_scale: (f64, f64),
    pub reversion_rate: (f64, f64),
    pub variance_multiplier: (f64, f64),
    pub drift_rate: (f64, f64),
    pub speed: f64,
    pub lane_half_width: f64,
}

impl Default for ProfileSpread {
    fn default() -> Self {
        Self {
            noise_scale: (0.10, 0.16),
            reversion_rate: (0.25, 0.45),
            variance_multiplier: (1.8, 2.6),
            drift_rate: (0.05, 0.12),
            speed: 60.0 / 3.6,
            lane_half_width: 1.875,
        }
    }
}

impl ProfileSpread {
    /// Strong distraction effect.
    pub fn risky() -> Self {
        Self {
            variance_multiplier: (2.8, 3.6),
            drift_rate: (0.12, 0.20),
            ..Self::default()
        }
    }

    /// Weak distraction effect.
    pub fn conservative() -> Self {
        Self {
            variance_multiplier: (1.15, 1.40),
            drift_rate: (0.01, 0.04),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ranges = [
            ("noise_scale", self.noise_scale, 0.0),
            ("reversion_rate", self.reversion_rate, 0.0),
            ("variance_multiplier", self.variance_multiplier, 1.0),
            ("drift_rate", self.drift_rate, -f64::EPSILON),
        ];
        for (name, (lo, hi), min) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo > min && lo <= hi) {
                return Err(Error::Argument(format!(
                    "spread {name} = ({lo}, {hi}) must be finite, above {min}, and ordered"
                )));
            }
        }
        if !(self.speed > 0.0 && self.lane_half_width > 0.0) {
            return Err(Error::Argument(
                "spread speed and lane_half_width must be positive".into(),
            ));
        }
        Ok(())
    }

    fn draw(&self, driver_id: &str, rng: &mut ChaCha8Rng) -> DriverProfile {
        let range = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..hi)
            }
        };
        DriverProfile {
            driver_id: driver_id.into(),
            noise_scale: range(rng, self.noise_scale),
            reversion_rate: range(rng, self.reversion_rate),
            variance_multiplier: range(rng, self.variance_multiplier),
            drift_rate: range(rng, self.drift_rate),
            speed: self.speed,
            lane_half_width: self.lane_half_width,
        }
    }
}

/// One generated drive as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveRecord {
    pub drive_id: String,
    pub plan: EpisodePlan,
    pub seed: u64,
}

/// One generated driver: the jittered profile plus both drives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverRecord {
    pub profile: DriverProfile,
    pub drives: Vec<DriveRecord>,
}

/// Everything needed to regenerate a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub seed: u64,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub drivers: Vec<DriverRecord>,
}

/// Generate a cohort: per driver, one baseline drive (empty plan) and one
/// distracted drive on the standard three-episode plan. Per-drive RNG streams
/// derive from the seed and the driver/drive names, so output is independent
/// of generation order.
pub fn generate_cohort(
    n_drivers: usize,
    spread: &ProfileSpread,
    duration_s: f64,
    rate_hz: f64,
    seed: u64,
) -> Result<(TrajectoryDataset, CohortManifest)> {
    if n_drivers == 0 {
        return Err(Error::Argument("n_drivers must be at least 1".into()));
    }
    spread.validate()?;
    if duration_s < 12.0 {
        return Err(Error::Argument(format!(
            "duration = {duration_s} s leaves no room for the three-episode plan (need >= 12 s)"
        )));
    }
    let mut drives = Vec::with_capacity(2 * n_drivers);
    let mut drivers = Vec::with_capacity(n_drivers);
    for d in 0..n_drivers {
        let driver_id = format!("d{:02}", d + 1);
        let mut profile_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_PROFILE, d as u64));
        let profile = spread.draw(&driver_id, &mut profile_rng);
        let mut records = Vec::with_capacity(2);
        for (drive_id, plan) in [
            ("base", EpisodePlan::baseline()),
            ("dist", standard_plan(duration_s)),
        ] {
            let name = format!("{driver_id}/{drive_id}");
            let drive_seed = derive_seed(seed, STREAM_DRIVE, fnv1a(name.as_bytes()));
            drives.push(simulate_drive(
                &profile, &plan, drive_id, duration_s, rate_hz, drive_seed,
            )?);
            records.push(DriveRecord {
                drive_id: drive_id.into(),
                plan,
                seed: drive_seed,
            });
        }
        drivers.push(DriverRecord {
            profile,
            drives: records,
        });
    }
    Ok((
        TrajectoryDataset {
            drives,
            sample_rate: rate_hz,
        },
        CohortManifest {
            seed,
            duration_s,
            rate_hz,
            drivers,
        },
    ))
}
