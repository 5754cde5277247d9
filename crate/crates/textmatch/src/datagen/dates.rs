//! Normalized date strings and the probabilistic negative-date generator.
//!
//! A date dd/mm/yyyy is normalized to six characters ddmmyy where a leading
//! zero of day or month is written as the pad character '*' (02/04/2021 →
//! "*2*421"). Negative dates perturb one field of a normalized date under a
//! fixed branch distribution.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Result, TmError};

/// Perturbation branch taken by [`gen_negative_date`], with the sampling
/// probabilities 0.3 / 0.3 / 0.15 / 0.15 / 0.1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum NegDateBranch {
    Day,
    Month,
    YearDigit,
    YearSwap,
    RandomDate,
}

impl NegDateBranch {
    pub fn name(&self) -> &'static str {
        match self {
            NegDateBranch::Day => "day",
            NegDateBranch::Month => "month",
            NegDateBranch::YearDigit => "year-digit",
            NegDateBranch::YearSwap => "year-swap",
            NegDateBranch::RandomDate => "random-date",
        }
    }
}

fn is_leap(year: u32) -> bool {
    year % 4 == 0 && (year % 100 != 0 || year % 400 == 0)
}

pub fn days_in_month(month: u32, year: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            if is_leap(year) {
                29
            } else {
                28
            }
        }
        _ => 0,
    }
}

/// Converts a dd/mm/yyyy calendar date into the fixed six-character
/// normalized form.
pub fn normalize_date(date: &str) -> Result<String> {
    let bytes: Vec<char> = date.chars().collect();
    let malformed = || TmError::Input(format!("malformed date {date:?}, expected dd/mm/yyyy"));
    if bytes.len() != 10 || bytes[2] != '/' || bytes[5] != '/' {
        return Err(malformed());
    }
    let digits = |range: std::ops::Range<usize>| -> Result<u32> {
        let s: String = bytes[range].iter().collect();
        if !s.chars().all(|c| c.is_ascii_digit()) {
            return Err(malformed());
        }
        s.parse::<u32>().map_err(|_| malformed())
    };
    let day = digits(0..2)?;
    let month = digits(3..5)?;
    let year = digits(6..10)?;
    if !(1..=12).contains(&month) || day == 0 || day > days_in_month(month, year) {
        return Err(TmError::Input(format!(
            "{date:?} is not a valid calendar date"
        )));
    }
    Ok(format!(
        "{}{}{:02}",
        two_digit_star(day),
        two_digit_star(month),
        year % 100
    ))
}

/// Two-digit field with a suppressed leading zero written as '*'.
fn two_digit_star(value: u32) -> String {
    if value < 10 {
        format!("*{value}")
    } else {
        value.to_string()
    }
}

/// Syntactic validity of a perturbed normalized date: day reads as *1-*9 or
/// 10-39, month as *1-*9 or 10-19, year as any two digits. Calendar
/// validity is deliberately not required outside the random branch.
pub fn is_normalized_date(s: &str) -> bool {
    let c: Vec<char> = s.chars().collect();
    if c.len() != 6 {
        return false;
    }
    let day_ok = (c[0] == '*' && ('1'..='9').contains(&c[1]))
        || (('1'..='3').contains(&c[0]) && c[1].is_ascii_digit());
    let month_ok = (c[2] == '*' && ('1'..='9').contains(&c[3]))
        || (c[2] == '1' && c[3].is_ascii_digit());
    let year_ok = c[4].is_ascii_digit() && c[5].is_ascii_digit();
    day_ok && month_ok && year_ok
}

/// Uniform calendar date in [year_lo, year_hi], already normalized.
pub fn random_normalized_date(rng: &mut impl Rng, year_lo: u32, year_hi: u32) -> String {
    let year = rng.gen_range(year_lo..=year_hi);
    let month = rng.gen_range(1..=12u32);
    let day = rng.gen_range(1..=days_in_month(month, year));
    format!(
        "{}{}{:02}",
        two_digit_star(day),
        two_digit_star(month),
        year % 100
    )
}

/// Replacement digit for a day/month digit slot: with probability 0.5
/// uniform over 0-9, otherwise uniform over the digits already present in
/// the date. Candidates outside `allowed` are resampled.
fn sample_field_digit(
    rng: &mut impl Rng,
    date: &[char],
    original: char,
    allowed: impl Fn(char) -> bool,
) -> char {
    let present: Vec<char> = date.iter().copied().filter(char::is_ascii_digit).collect();
    loop {
        let candidate = if rng.gen_bool(0.5) || present.is_empty() {
            char::from_digit(rng.gen_range(0..10u32), 10).unwrap()
        } else {
            present[rng.gen_range(0..present.len())]
        };
        if candidate != original && allowed(candidate) {
            return candidate;
        }
    }
}

/// Generates a non-matching normalized date for `date6` by perturbing the
/// day (p=0.3), the month (p=0.3), one of the last two year digits
/// (p=0.15), swapping the year for a different training-set year (p=0.15),
/// or picking a fresh random date (p=0.1). The output always differs from
/// the input and stays syntactically valid per [`is_normalized_date`].
pub fn gen_negative_date(
    date6: &str,
    train_years: &BTreeSet<u32>,
    rng: &mut impl Rng,
) -> Result<(String, NegDateBranch)> {
    if !is_normalized_date(date6) {
        return Err(TmError::Input(format!(
            "{date6:?} is not a normalized date"
        )));
    }
    if train_years.is_empty() {
        return Err(TmError::Input("train_years must be non-empty".into()));
    }
    let chars: Vec<char> = date6.chars().collect();
    loop {
        let u: f64 = rng.gen();
        let branch = if u < 0.3 {
            NegDateBranch::Day
        } else if u < 0.6 {
            NegDateBranch::Month
        } else if u < 0.75 {
            NegDateBranch::YearDigit
        } else if u < 0.9 {
            NegDateBranch::YearSwap
        } else {
            NegDateBranch::RandomDate
        };
        let mut out = chars.clone();
        match branch {
            NegDateBranch::Day => {
                let pos = rng.gen_range(0..2usize);
                if pos == 0 {
                    if chars[0] == '*' {
                        // Suppressed zero becomes a real tens digit 1-3.
                        out[0] = char::from_digit(rng.gen_range(1..=3u32), 10).unwrap();
                    } else {
                        out[0] = sample_field_digit(rng, &chars, chars[0], |c| {
                            ('1'..='3').contains(&c)
                        });
                    }
                } else {
                    let tens_is_star = chars[0] == '*';
                    out[1] = sample_field_digit(rng, &chars, chars[1], |c| {
                        !(tens_is_star && c == '0')
                    });
                }
            }
            NegDateBranch::Month => {
                // A month with tens digit '1' has no alternative tens digit
                // in normalized form, so only the units slot can move.
                let pos = if chars[2] == '*' {
                    rng.gen_range(2..4usize)
                } else {
                    3
                };
                if pos == 2 {
                    out[2] = '1';
                } else {
                    let tens_is_star = chars[2] == '*';
                    out[3] = sample_field_digit(rng, &chars, chars[3], |c| {
                        !(tens_is_star && c == '0')
                    });
                }
            }
            NegDateBranch::YearDigit => {
                let pos = rng.gen_range(4..6usize);
                loop {
                    let d = char::from_digit(rng.gen_range(0..10u32), 10).unwrap();
                    if d != chars[pos] {
                        out[pos] = d;
                        break;
                    }
                }
            }
            NegDateBranch::YearSwap => {
                let current: String = chars[4..6].iter().collect();
                let candidates: Vec<String> = train_years
                    .iter()
                    .map(|y| format!("{:02}", y % 100))
                    .filter(|y| *y != current)
                    .collect();
                if candidates.is_empty() {
                    // No differing training year exists; re-draw the branch.
                    continue;
                }
                let pick = &candidates[rng.gen_range(0..candidates.len())];
                out[4] = pick.chars().next().unwrap();
                out[5] = pick.chars().nth(1).unwrap();
            }
            NegDateBranch::RandomDate => {
                let fresh = random_normalized_date(rng, 2000, 2030);
                if fresh == date6 {
                    continue;
                }
                out = fresh.chars().collect();
            }
        }
        let result: String = out.iter().collect();
        debug_assert!(is_normalized_date(&result), "generated {result:?}");
        if result != date6 {
            return Ok((result, branch));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn normalizes_the_reference_example() {
        assert_eq!(normalize_date("02/04/2021").unwrap(), "*2*421");
    }

    #[test]
    fn normalizes_plain_and_mixed_dates() {
        assert_eq!(normalize_date("15/12/2019").unwrap(), "151219");
        assert_eq!(normalize_date("31/01/2022").unwrap(), "31*122");
        assert_eq!(normalize_date("09/09/2003").unwrap(), "*9*903");
        assert_eq!(normalize_date("29/02/2020").unwrap(), "29*220");
    }

    #[test]
    fn rejects_malformed_and_invalid_dates() {
        for bad in [
            "2/4/2021",
            "02-04-2021",
            "32/01/2020",
            "00/01/2020",
            "15/13/2020",
            "29/02/2021",
            "ab/cd/efgh",
            "",
        ] {
            assert!(normalize_date(bad).is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn normalized_syntax_predicate() {
        for good in ["*2*421", "151219", "31*122", "39*100", "101999"] {
            assert!(is_normalized_date(good), "{good:?}");
        }
        for bad in ["*0*421", "02*421", "15012019", "15121", "1512199", "15*021", "152219"] {
            assert!(!is_normalized_date(bad), "{bad:?}");
        }
    }

    #[test]
    fn negatives_always_differ_and_stay_valid() {
        let years: BTreeSet<u32> = (2018..=2021).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        for _ in 0..2000 {
            let date = random_normalized_date(&mut rng, 2018, 2021);
            let (neg, _) = gen_negative_date(&date, &years, &mut rng).unwrap();
            assert_ne!(neg, date);
            assert!(is_normalized_date(&neg), "{neg:?} from {date:?}");
        }
    }

    #[test]
    fn day_branch_changes_exactly_one_day_slot() {
        let years: BTreeSet<u32> = [2021].into();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut seen_day = 0;
        for _ in 0..500 {
            let (neg, branch) = gen_negative_date("*2*421", &years, &mut rng).unwrap();
            if branch != NegDateBranch::Day {
                continue;
            }
            seen_day += 1;
            let orig: Vec<char> = "*2*421".chars().collect();
            let got: Vec<char> = neg.chars().collect();
            let diffs: Vec<usize> = (0..6).filter(|&i| orig[i] != got[i]).collect();
            assert_eq!(diffs.len(), 1, "{neg:?}");
            assert!(diffs[0] < 2, "day branch touched position {}", diffs[0]);
        }
        assert!(seen_day > 100, "day branch frequency suspiciously low");
    }

    #[test]
    fn branch_frequencies_match_the_distribution() {
        let years: BTreeSet<u32> = (2018..=2021).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(123);
        let mut counts = std::collections::BTreeMap::new();
        let n = 10_000;
        for _ in 0..n {
            let (_, branch) = gen_negative_date("151219", &years, &mut rng).unwrap();
            *counts.entry(branch).or_insert(0usize) += 1;
        }
        let expected = [
            (NegDateBranch::Day, 0.30),
            (NegDateBranch::Month, 0.30),
            (NegDateBranch::YearDigit, 0.15),
            (NegDateBranch::YearSwap, 0.15),
            (NegDateBranch::RandomDate, 0.10),
        ];
        for (branch, p) in expected {
            let freq = counts[&branch] as f64 / n as f64;
            assert!(
                (freq - p).abs() < 0.03,
                "{branch:?}: {freq} vs expected {p}"
            );
        }
    }

    #[test]
    fn year_swap_respects_training_years() {
        let years: BTreeSet<u32> = [2018, 2025].into();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut seen = BTreeSet::new();
        for _ in 0..400 {
            let (neg, branch) = gen_negative_date("151219", &years, &mut rng).unwrap();
            if branch == NegDateBranch::YearSwap {
                seen.insert(neg[4..6].to_string());
            }
        }
        assert!(seen.contains("18") && seen.contains("25"), "{seen:?}");
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let years: BTreeSet<u32> = [2020].into();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(gen_negative_date("hello!", &years, &mut rng).is_err());
        assert!(gen_negative_date("151219", &BTreeSet::new(), &mut rng).is_err());
    }
}
