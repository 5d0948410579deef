//! Season calendar used to label deployments.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Fall,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Winter, Season::Spring, Season::Summer, Season::Fall];

    pub fn as_str(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Fall => "fall",
        }
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Season {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "winter" => Ok(Season::Winter),
            "spring" => Ok(Season::Spring),
            "summer" => Ok(Season::Summer),
            "fall" | "autumn" => Ok(Season::Fall),
            other => Err(format!("unknown season {other:?}")),
        }
    }
}

/// Month and day, serialized as `MM-DD`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonthDay {
    pub month: u32,
    pub day: u32,
}

impl MonthDay {
    pub fn new(month: u32, day: u32) -> Result<Self, String> {
        // 2000 is a leap year, so 02-29 is accepted.
        NaiveDate::from_ymd_opt(2000, month, day)
            .map(|_| Self { month, day })
            .ok_or_else(|| format!("invalid month/day {month:02}-{day:02}"))
    }

    pub fn of(date: NaiveDate) -> Self {
        Self { month: date.month(), day: date.day() }
    }
}

impl fmt::Display for MonthDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}-{:02}", self.month, self.day)
    }
}

impl FromStr for MonthDay {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (m, d) = s.split_once('-').ok_or_else(|| format!("expected MM-DD, got {s:?}"))?;
        let month = m.parse().map_err(|_| format!("bad month in {s:?}"))?;
        let day = d.parse().map_err(|_| format!("bad day in {s:?}"))?;
        MonthDay::new(month, day)
    }
}

impl Serialize for MonthDay {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MonthDay {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive month/day interval, possibly wrapping the new year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeasonInterval {
    pub start: MonthDay,
    pub end: MonthDay,
}

impl SeasonInterval {
    pub fn contains(&self, md: MonthDay) -> bool {
        if self.start <= self.end {
            md >= self.start && md <= self.end
        } else {
            md >= self.start || md <= self.end
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeasonConfig {
    intervals: BTreeMap<Season, SeasonInterval>,
}

impl Default for SeasonConfig {
    /// Meteorological seasons.
    fn default() -> Self {
        let md = |m, d| MonthDay { month: m, day: d };
        let mut intervals = BTreeMap::new();
        intervals.insert(Season::Winter, SeasonInterval { start: md(12, 1), end: md(2, 29) });
        intervals.insert(Season::Spring, SeasonInterval { start: md(3, 1), end: md(5, 31) });
        intervals.insert(Season::Summer, SeasonInterval { start: md(6, 1), end: md(8, 31) });
        intervals.insert(Season::Fall, SeasonInterval { start: md(9, 1), end: md(11, 30) });
        Self { intervals }
    }
}

impl SeasonConfig {
    pub fn new(intervals: BTreeMap<Season, SeasonInterval>) -> Result<Self, String> {
        let cfg = Self { intervals };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn interval(&self, season: Season) -> Option<&SeasonInterval> {
        self.intervals.get(&season)
    }

    /// Every day of a leap year must fall in exactly one season.
    pub fn validate(&self) -> Result<(), String> {
        for season in Season::ALL {
            if !self.intervals.contains_key(&season) {
                return Err(format!("season {season} has no interval"));
            }
        }
        let mut day = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        while day.year() == 2000 {
            let md = MonthDay::of(day);
            let hits: Vec<_> =
                self.intervals.iter().filter(|(_, iv)| iv.contains(md)).map(|(s, _)| *s).collect();
            match hits.len() {
                1 => {}
                0 => return Err(format!("{md} is not covered by any season")),
                _ => return Err(format!("{md} is covered by several seasons: {hits:?}")),
            }
            day = day.succ_opt().unwrap();
        }
        Ok(())
    }

    pub fn season_of(&self, date: NaiveDate) -> Season {
        let md = MonthDay::of(date);
        self.intervals
            .iter()
            .find(|(_, iv)| iv.contains(md))
            .map(|(s, _)| *s)
            .expect("validated season config covers every day")
    }
}
