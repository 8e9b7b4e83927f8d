use std::fmt;
use std::str::FromStr;

/// Steps of linear ramp-up for [`LrSchedule::Warmup`].
pub const WARMUP_STEPS: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    /// `base` throughout.
    Constant,
    /// `base · 2^-floor(epoch / 50)`, evaluated per epoch.
    Halving,
    /// Inverse-square-root decay after a linear ramp, evaluated per optimizer
    /// step (1-based), peaking at `base` when `step == WARMUP_STEPS`.
    Warmup,
}

impl LrSchedule {
    /// Per-epoch schedules ignore `step`; per-step schedules ignore `epoch`.
    pub fn lr(self, base: f64, epoch: u64, step: u64) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Halving => base * 0.5f64.powi((epoch / 50) as i32),
            LrSchedule::Warmup => {
                let s = step.max(1) as f64;
                let w = WARMUP_STEPS as f64;
                base * w.sqrt() * s.powf(-0.5).min(s * w.powf(-1.5))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Halving => "halving",
            LrSchedule::Warmup => "warmup",
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "halving" => Ok(LrSchedule::Halving),
            "warmup" => Ok(LrSchedule::Warmup),
            other => Err(format!("unknown schedule `{other}` (expected constant, halving or warmup)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_every_fifty_epochs() {
        for e in 0..50 {
            assert_eq!(LrSchedule::Halving.lr(1e-3, e, 0), 1e-3);
        }
        assert_eq!(LrSchedule::Halving.lr(1e-3, 50, 0), 5e-4);
        assert_eq!(LrSchedule::Halving.lr(1e-3, 100, 0), 2.5e-4);
    }

    #[test]
    fn warmup_peak_and_ramp() {
        let base = 1e-4;
        assert!((LrSchedule::Warmup.lr(base, 0, 2000) - base).abs() < 1e-18);
        assert!((LrSchedule::Warmup.lr(base, 0, 500) - base / 4.0).abs() < 1e-18);
        // decay branch: base · sqrt(2000 / 8000)
        assert!((LrSchedule::Warmup.lr(base, 0, 8000) - base / 2.0).abs() < 1e-18);
    }

    #[test]
    fn parse_round_trip() {
        for s in [LrSchedule::Constant, LrSchedule::Halving, LrSchedule::Warmup] {
            assert_eq!(s.name().parse::<LrSchedule>().unwrap(), s);
        }
        assert!("cosine".parse::<LrSchedule>().is_err());
    }
}
