//! Trading calendar: an explicit, sorted list of business days.
//!
//! The calendar is an input to the panel, never inferred from civil-date
//! arithmetic. All lag and window logic counts positions on this axis.

use crate::error::{Error, Result};
use chrono::{Datelike, Duration, NaiveDate, Weekday};
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct Calendar {
    days: Vec<NaiveDate>,
    index: HashMap<NaiveDate, u32>,
}

impl Calendar {
    /// Build from a list of dates. Duplicates are rejected; order is fixed
    /// by sorting.
    pub fn new(mut days: Vec<NaiveDate>) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::Invalid("calendar has no days".into()));
        }
        days.sort_unstable();
        let mut index = HashMap::with_capacity(days.len());
        for (i, d) in days.iter().enumerate() {
            if index.insert(*d, i as u32).is_some() {
                return Err(Error::Invalid(format!("calendar has duplicate day {}", d)));
            }
        }
        Ok(Calendar { days, index })
    }

    /// Synthetic weekday calendar for simulations: `n` Monday-to-Friday days
    /// starting at the first weekday on or after `start`.
    pub fn weekdays(start: NaiveDate, n: usize) -> Self {
        let mut days = Vec::with_capacity(n);
        let mut d = start;
        while days.len() < n {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                days.push(d);
            }
            d += Duration::days(1);
        }
        Calendar::new(days).expect("weekday calendar is sorted and unique")
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn index_of(&self, d: NaiveDate) -> Option<u32> {
        self.index.get(&d).copied()
    }

    pub fn date(&self, i: u32) -> NaiveDate {
        self.days[i as usize]
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 2).unwrap();
        assert!(Calendar::new(vec![d, d]).is_err());
    }

    #[test]
    fn weekday_calendar_skips_weekends() {
        let start = NaiveDate::from_ymd_opt(2020, 1, 3).unwrap(); // a Friday
        let cal = Calendar::weekdays(start, 3);
        assert_eq!(cal.date(0), start);
        assert_eq!(cal.date(1), NaiveDate::from_ymd_opt(2020, 1, 6).unwrap());
        assert_eq!(cal.date(2), NaiveDate::from_ymd_opt(2020, 1, 7).unwrap());
        assert_eq!(cal.index_of(cal.date(2)), Some(2));
    }
}
