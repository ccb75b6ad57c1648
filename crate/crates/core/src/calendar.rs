//! Proleptic Gregorian calendar arithmetic in UTC.
//!
//! Everything here works on plain integers so that index timestamps and
//! Last-Modified values can be compared as POSIX seconds without pulling
//! in a timezone database.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const SECS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid 14-digit timestamp {0:?}")]
pub struct BadTimestamp(pub String);

pub fn is_leap_year(year: i64) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

pub fn days_in_month(year: i64, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap_year(year) => 29,
        2 => 28,
        _ => 0,
    }
}

/// Days since 1970-01-01 for a civil date (H. Hinnant's algorithm).
pub fn days_from_civil(year: i64, month: u32, day: u32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let m = month as i64;
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) + 2) / 5 + day as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

/// Inverse of [`days_from_civil`].
pub fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let year = yoe + era * 400 + i64::from(month <= 2);
    (year, month, day)
}

/// A broken-down UTC instant with second resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CivilTime {
    pub year: i64,
    pub month: u32,
    pub day: u32,
    pub hour: u32,
    pub minute: u32,
    pub second: u32,
}

impl CivilTime {
    /// Returns `None` when any field is out of range. A leap second (60) is
    /// accepted and folds into the following minute.
    pub fn new(year: i64, month: u32, day: u32, hour: u32, minute: u32, second: u32) -> Option<Self> {
        if !(1..=12).contains(&month)
            || day == 0
            || day > days_in_month(year, month)
            || hour > 23
            || minute > 59
            || second > 60
        {
            return None;
        }
        Some(Self { year, month, day, hour, minute, second })
    }

    pub fn from_posix(secs: i64) -> Self {
        let days = secs.div_euclid(SECS_PER_DAY);
        let rem = secs.rem_euclid(SECS_PER_DAY);
        let (year, month, day) = civil_from_days(days);
        Self {
            year,
            month,
            day,
            hour: (rem / 3600) as u32,
            minute: (rem % 3600 / 60) as u32,
            second: (rem % 60) as u32,
        }
    }

    pub fn to_posix(&self) -> i64 {
        days_from_civil(self.year, self.month, self.day) * SECS_PER_DAY
            + i64::from(self.hour) * 3600
            + i64::from(self.minute) * 60
            + i64::from(self.second)
    }

    /// Day of week, 0 = Sunday.
    pub fn weekday(&self) -> u32 {
        (days_from_civil(self.year, self.month, self.day) + 4).rem_euclid(7) as u32
    }
}

/// A crawl timestamp in `YYYYMMDDHHMMSS` form, always UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp14(CivilTime);

impl Timestamp14 {
    pub fn parse(s: &str) -> Result<Self, BadTimestamp> {
        let bad = || BadTimestamp(s.to_string());
        if s.len() != 14 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let num = |r: std::ops::Range<usize>| s[r].parse::<u32>().map_err(|_| bad());
        let civil = CivilTime::new(
            i64::from(num(0..4)?),
            num(4..6)?,
            num(6..8)?,
            num(8..10)?,
            num(10..12)?,
            num(12..14)?,
        )
        .filter(|c| c.second < 60)
        .ok_or_else(bad)?;
        Ok(Self(civil))
    }

    /// Only instants in years 0..=9999 have a 14-digit form.
    pub fn from_posix(secs: i64) -> Option<Self> {
        let civil = CivilTime::from_posix(secs);
        (0..=9999).contains(&civil.year).then_some(Self(civil))
    }

    pub fn civil(&self) -> CivilTime {
        self.0
    }

    pub fn to_posix(&self) -> i64 {
        self.0.to_posix()
    }
}

impl FromStr for Timestamp14 {
    type Err = BadTimestamp;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for Timestamp14 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.0;
        write!(
            f,
            "{:04}{:02}{:02}{:02}{:02}{:02}",
            c.year, c.month, c.day, c.hour, c.minute, c.second
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_round_trip() {
        assert_eq!(days_from_civil(1970, 1, 1), 0);
        assert_eq!(civil_from_days(0), (1970, 1, 1));
        assert_eq!(civil_from_days(-1), (1969, 12, 31));
    }

    #[test]
    fn leap_days() {
        assert_eq!(days_in_month(2000, 2), 29);
        assert_eq!(days_in_month(1900, 2), 28);
        assert_eq!(days_in_month(2024, 2), 29);
        assert!(CivilTime::new(2023, 2, 29, 0, 0, 0).is_none());
    }

    #[test]
    fn timestamp14_rejects_garbage() {
        assert!(Timestamp14::parse("20231399000000").is_err());
        assert!(Timestamp14::parse("2023010100000").is_err());
        assert!(Timestamp14::parse("2023010100000x").is_err());
        assert!(Timestamp14::parse("20230101246000").is_err());
        assert_eq!(Timestamp14::parse("19700101000000").unwrap().to_posix(), 0);
    }

    #[test]
    fn weekday_of_known_dates() {
        // 1970-01-01 was a Thursday, 2005-04-24 a Sunday.
        assert_eq!(CivilTime::from_posix(0).weekday(), 4);
        assert_eq!(CivilTime::from_posix(1_114_316_977).weekday(), 0);
    }
}
