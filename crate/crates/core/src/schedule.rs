//! Expanding-origin rolling evaluation windows over one calendar year.

use chrono::{Days, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    Short,
    Medium,
    Long,
}

impl Horizon {
    pub fn from_days(days: u32) -> Result<Self> {
        match days {
            30 => Ok(Horizon::Short),
            60 => Ok(Horizon::Medium),
            90 => Ok(Horizon::Long),
            other => Err(Error::invalid(format!("horizon must be 30, 60 or 90 days, got {other}"))),
        }
    }

    pub fn days(self) -> u32 {
        match self {
            Horizon::Short => 30,
            Horizon::Medium => 60,
            Horizon::Long => 90,
        }
    }

    pub fn months(self) -> u32 {
        self.days() / 30
    }

    pub fn label(self) -> &'static str {
        match self {
            Horizon::Short => "short-30",
            Horizon::Medium => "medium-60",
            Horizon::Long => "long-90",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleWindow {
    /// Last training day; training uses every day up to and including it.
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    /// Inclusive.
    pub test_end: NaiveDate,
}

impl ScheduleWindow {
    pub fn test_days(&self) -> usize {
        ((self.test_end - self.test_start).num_days() + 1) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingSchedule {
    pub horizon: Horizon,
    pub windows: Vec<ScheduleWindow>,
}

impl RollingSchedule {
    pub fn year_end(&self) -> NaiveDate {
        self.windows.last().expect("non-empty schedule").test_end
    }
}

/// Tiles the year starting at `test_year_start` with windows of one, two or
/// three calendar months.
pub fn make_schedule(test_year_start: NaiveDate, horizon_days: u32) -> Result<RollingSchedule> {
    let horizon = Horizon::from_days(horizon_days)?;
    let step = horizon.months();
    let bound = |k: u32| {
        test_year_start
            .checked_add_months(Months::new(k * step))
            .ok_or_else(|| Error::invalid("schedule date out of range"))
    };
    let count = 12 / step;
    let mut windows = Vec::with_capacity(count as usize);
    for k in 0..count {
        let test_start = bound(k)?;
        let next = bound(k + 1)?;
        windows.push(ScheduleWindow {
            train_end: test_start - Days::new(1),
            test_start,
            test_end: next - Days::new(1),
        });
    }
    Ok(RollingSchedule { horizon, windows })
}
