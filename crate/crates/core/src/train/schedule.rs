//! Warm-up / low / high phase arithmetic.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Low,
    High,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Low => "low",
            Phase::High => "high",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warmup" => Ok(Phase::Warmup),
            "low" => Ok(Phase::Low),
            "high" => Ok(Phase::High),
            other => Err(Error::InvalidParameter(format!("unknown phase {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseSchedule {
    pub warmup_iters: usize,
    pub low_iters: usize,
    pub high_iters: usize,
    pub total_iters: usize,
    /// Whether the first alternating block after warm-up is a low block.
    pub low_first: bool,
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        Self {
            warmup_iters: 1500,
            low_iters: 100,
            high_iters: 100,
            total_iters: 10_000,
            low_first: true,
        }
    }
}

/// A maximal run of iterations in one phase, `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub phase: Phase,
    pub start: usize,
    pub len: usize,
}

impl PhaseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.low_iters == 0 || self.high_iters == 0 {
            return Err(Error::Config("low_iters and high_iters must be at least 1".into()));
        }
        if self.total_iters < self.warmup_iters {
            return Err(Error::Config(format!(
                "total_iters ({}) is shorter than warmup_iters ({})",
                self.total_iters, self.warmup_iters
            )));
        }
        Ok(())
    }

    fn cycle(&self) -> [(Phase, usize); 2] {
        if self.low_first {
            [(Phase::Low, self.low_iters), (Phase::High, self.high_iters)]
        } else {
            [(Phase::High, self.high_iters), (Phase::Low, self.low_iters)]
        }
    }

    /// Phase of iteration `t` and the offset of `t` within its block.
    pub fn locate(&self, t: usize) -> Result<(Phase, usize)> {
        self.validate()?;
        if t >= self.total_iters {
            return Err(Error::OutOfRange(format!(
                "iteration {t} outside [0, {})",
                self.total_iters
            )));
        }
        if t < self.warmup_iters {
            return Ok((Phase::Warmup, t));
        }
        let [(first, a), (second, b)] = self.cycle();
        let r = (t - self.warmup_iters) % (a + b);
        Ok(if r < a { (first, r) } else { (second, r - a) })
    }

    pub fn phase_for_iteration(&self, t: usize) -> Result<Phase> {
        self.locate(t).map(|(p, _)| p)
    }

    /// True at the first iteration of every alternating block.
    pub fn is_block_start(&self, t: usize) -> Result<bool> {
        let (phase, offset) = self.locate(t)?;
        Ok(phase != Phase::Warmup && offset == 0)
    }

    /// All blocks in order; the last one may be truncated by `total_iters`.
    pub fn blocks(&self) -> Result<Vec<Block>> {
        self.validate()?;
        let mut out = Vec::new();
        if self.warmup_iters > 0 {
            out.push(Block {
                phase: Phase::Warmup,
                start: 0,
                len: self.warmup_iters,
            });
        }
        let mut t = self.warmup_iters;
        let mut k = 0;
        let cycle = self.cycle();
        while t < self.total_iters {
            let (phase, len) = cycle[k % 2];
            let len = len.min(self.total_iters - t);
            out.push(Block { phase, start: t, len });
            t += len;
            k += 1;
        }
        Ok(out)
    }
}

/// Free-function form of [`PhaseSchedule::phase_for_iteration`].
pub fn phase_for_iteration(t: usize, schedule: &PhaseSchedule) -> Result<Phase> {
    schedule.phase_for_iteration(t)
}
