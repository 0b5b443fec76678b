//! Experiment schedules, selection methods and ablation masks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use splat_oed_core::info::{Approximation, UncertaintyFunctional};
use splat_oed_core::{ParamGroup, ParamMask};

use crate::error::{HarnessError, Result};

/// Training/selection timetable. Training for a phase with `v` views runs
/// until the cumulative step count reaches `iters_per_view·v`; the final
/// phase continues to `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub start_views: usize,
    pub target_views: usize,
    pub step_views: usize,
    pub iters_per_view: u64,
    pub total_steps: u64,
    pub seed: u64,
}

impl Schedule {
    pub fn new(start_views: usize, target_views: usize, step_views: usize, iters_per_view: u64, total_steps: u64, seed: u64) -> Result<Self> {
        let s = Schedule {
            start_views,
            target_views,
            step_views,
            iters_per_view,
            total_steps,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// `single10`, `single20` or `batch4`.
    pub fn named(name: &str, seed: u64) -> Result<Self> {
        match name {
            "single10" => Self::new(2, 10, 1, 100, 1000, seed),
            "single20" => Self::new(2, 20, 1, 100, 2000, seed),
            "batch4" => Self::new(2, 10, 4, 150, 1500, seed),
            _ => Err(HarnessError::UnknownSchedule(name.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_views == 0 {
            return Err(HarnessError::InvalidSchedule("start_views must be at least 1".into()));
        }
        if self.start_views > self.target_views {
            return Err(HarnessError::InvalidSchedule(format!(
                "start_views {} exceeds target_views {}",
                self.start_views, self.target_views
            )));
        }
        if self.step_views == 0 {
            return Err(HarnessError::InvalidSchedule("step_views must be at least 1".into()));
        }
        if self.total_steps < self.iters_per_view * self.target_views as u64 {
            return Err(HarnessError::InvalidSchedule(format!(
                "total_steps {} below iters_per_view·target_views = {}",
                self.total_steps,
                self.iters_per_view * self.target_views as u64
            )));
        }
        Ok(())
    }

    /// Copy with every step count divided by `factor` (at least 1 step per view).
    pub fn scaled_steps(mut self, factor: u64) -> Self {
        self.iters_per_view = (self.iters_per_view / factor).max(1);
        self.total_steps = (self.total_steps / factor).max(self.iters_per_view * self.target_views as u64);
        self
    }
}

/// A view-selection method: seeded uniform picks or a greedy design
/// criterion under a Hessian approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Uniform,
    Oed {
        functional: UncertaintyFunctional,
        approximation: Approximation,
    },
}

impl Method {
    pub const fn oed(functional: UncertaintyFunctional, approximation: Approximation) -> Self {
        Method::Oed {
            functional,
            approximation,
        }
    }

    pub fn approximation(&self) -> Option<Approximation> {
        match self {
            Method::Uniform => None,
            Method::Oed { approximation, .. } => Some(*approximation),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Uniform => f.write_str("uniform"),
            Method::Oed {
                functional,
                approximation,
            } => {
                let name = match functional {
                    UncertaintyFunctional::T => "t",
                    UncertaintyFunctional::A => "a",
                    UncertaintyFunctional::D => "d",
                    UncertaintyFunctional::E(splat_oed_core::info::EVariant::Max) => "e",
                    UncertaintyFunctional::E(splat_oed_core::info::EVariant::Min) => "e-min",
                    UncertaintyFunctional::FisherRf => "fisherrf",
                };
                write!(f, "{name}-{approximation}")
            }
        }
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || HarnessError::UnknownMethod(s.to_string());
        let lower = s.to_ascii_lowercase();
        if lower == "uniform" {
            return Ok(Method::Uniform);
        }
        let (f, a) = lower.rsplit_once('-').ok_or_else(unknown)?;
        let approximation: Approximation = a.parse().map_err(|_| unknown())?;
        if f == "uniform" {
            return Ok(Method::Uniform);
        }
        let functional = match f {
            "t" | "a" | "d" | "e" | "fisherrf" => f.parse().map_err(|_| unknown())?,
            _ => return Err(unknown()),
        };
        Ok(Method::oed(functional, approximation))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Named ablation mask: the groups removed from the information matrix.
pub fn ablation_mask(name: &str) -> Result<ParamMask> {
    match name {
        "none" => Ok(ParamMask::ALL),
        "sh" => Ok(ParamMask::ALL.without(&[ParamGroup::Sh])),
        "alpha" => Ok(ParamMask::ALL.without(&[ParamGroup::Opacity])),
        "geom" => Ok(ParamMask::ALL.without(&[ParamGroup::Position, ParamGroup::Rotation, ParamGroup::Scale])),
        "all" => Ok(ParamMask::NONE),
        _ => Err(HarnessError::UnknownMask(name.to_string())),
    }
}
