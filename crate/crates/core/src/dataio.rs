//! Yield panel ingestion, validation and rolling-window bookkeeping.
//!
//! Two input layouts are accepted and auto-detected from the first
//! meaningful line:
//!
//! * the whitespace-delimited Fama–Bliss text (`YYYYMM[DD] y1 y2 ...`), with
//!   optional header/comment lines and an optional row of maturities;
//! * the canonical wide CSV written by [`YieldPanel::to_wide_csv`]
//!   (`date,m3,m6,...`).
//!
//! Yields stay in annualized percent throughout.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;

/// Maturities (months) of the standard 17-column panel.
pub const PAPER_MATURITIES: [f64; 17] = [
    3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 21.0, 24.0, 30.0, 36.0, 48.0, 60.0, 72.0, 84.0, 96.0, 108.0,
    120.0,
];

/// Environment variable consulted when no `--data` path is given.
pub const DATA_ENV_VAR: &str = "YIELDFIELD_DATA";

/// Calendar month label; serialized as `"YYYY-MM"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Validation(format!("month {month} out of range")));
        }
        Ok(Self { year, month })
    }

    /// Months since year 0, used for gap checks and calendar arithmetic.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        Self {
            year: ord.div_euclid(12) as i32,
            month: (ord.rem_euclid(12) + 1) as u32,
        }
    }

    pub fn add_months(self, k: i64) -> Self {
        Self::from_ordinal(self.ordinal() + k)
    }

    /// Parses `YYYYMM`, `YYYYMMDD`, `YYYY-MM` or `YYYY-MM-DD`.
    pub fn parse(token: &str) -> Option<Self> {
        let digits: String = token.chars().filter(|c| *c != '-').collect();
        if !digits.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let (year, month) = match digits.len() {
            6 | 8 => (digits[..4].parse().ok()?, digits[4..6].parse().ok()?),
            _ => return None,
        };
        if digits.len() == 8 {
            let day: u32 = digits[6..8].parse().ok()?;
            if !(1..=31).contains(&day) {
                return None;
            }
        }
        Self::new(year, month).ok()
    }

    pub fn compact(self) -> String {
        format!("{:04}{:02}", self.year, self.month)
    }
}

impl TryFrom<String> for YearMonth {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        Self::parse(&s).ok_or_else(|| format!("invalid month '{s}', expected YYYY-MM"))
    }
}

impl From<YearMonth> for String {
    fn from(d: YearMonth) -> String {
        d.to_string()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// T×M grid of zero-coupon yields (percent), rows ordered by month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldPanel {
    dates: Vec<YearMonth>,
    maturities: Vec<f64>,
    yields: Vec<f64>,
}

impl YieldPanel {
    /// Builds a panel from row-major yields and validates every invariant.
    pub fn new(dates: Vec<YearMonth>, maturities: Vec<f64>, yields: Vec<f64>) -> Result<Self> {
        let panel = Self {
            dates,
            maturities,
            yields,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn validate(&self) -> Result<()> {
        let (t, m) = (self.dates.len(), self.maturities.len());
        if t == 0 || m == 0 {
            return Err(Error::Validation("panel is empty".into()));
        }
        if self.yields.len() != t * m {
            return Err(Error::Dimension(format!(
                "{} yields for a {t}x{m} panel",
                self.yields.len()
            )));
        }
        for w in self.dates.windows(2) {
            let step = w[1].ordinal() - w[0].ordinal();
            if step <= 0 {
                return Err(Error::Validation(format!(
                    "dates not strictly increasing at {}",
                    w[1]
                )));
            }
            if step != 1 {
                return Err(Error::Validation(format!(
                    "gap in monthly dates between {} and {}",
                    w[0], w[1]
                )));
            }
        }
        if self.maturities[0] <= 0.0 {
            return Err(Error::Validation("maturities must be positive".into()));
        }
        if self.maturities.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation(
                "maturities must be strictly increasing".into(),
            ));
        }
        for (k, y) in self.yields.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite yield at {} maturity {}",
                    self.dates[k / m],
                    self.maturities[k % m]
                )));
            }
            if *y < 0.0 {
                return Err(Error::Validation(format!(
                    "negative yield at {} maturity {}",
                    self.dates[k / m],
                    self.maturities[k % m]
                )));
            }
        }
        Ok(())
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_maturities(&self) -> usize {
        self.maturities.len()
    }

    pub fn dates(&self) -> &[YearMonth] {
        &self.dates
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn yields(&self) -> &[f64] {
        &self.yields
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.yields[t * self.maturities.len() + j]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let m = self.maturities.len();
        &self.yields[t * m..(t + 1) * m]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.dates.len()).map(|t| self.get(t, j)).collect()
    }

    /// Row index of a calendar month.
    pub fn index_of(&self, date: YearMonth) -> Option<usize> {
        let k = date.ordinal() - self.dates[0].ordinal();
        (k >= 0 && (k as usize) < self.dates.len()).then_some(k as usize)
    }

    /// Column index of a maturity (exact match).
    pub fn maturity_index(&self, maturity: f64) -> Option<usize> {
        self.maturities
            .iter()
            .position(|m| (m - maturity).abs() < 1e-9)
    }

    /// Rows `start..=end` as a new panel.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end >= self.dates.len() {
            return Err(Error::Range(format!(
                "row range {start}..={end} outside 0..{}",
                self.dates.len()
            )));
        }
        let m = self.maturities.len();
        Ok(Self {
            dates: self.dates[start..=end].to_vec(),
            maturities: self.maturities.clone(),
            yields: self.yields[start * m..(end + 1) * m].to_vec(),
        })
    }

    /// Keeps the listed maturities (in the given order, which must be increasing).
    pub fn select_maturities(&self, keep: &[f64]) -> Result<Self> {
        let cols = keep
            .iter()
            .map(|&k| {
                self.maturity_index(k)
                    .ok_or_else(|| Error::Validation(format!("maturity {k} not in panel")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut yields = Vec::with_capacity(self.dates.len() * cols.len());
        for t in 0..self.dates.len() {
            yields.extend(cols.iter().map(|&j| self.get(t, j)));
        }
        Self::new(self.dates.clone(), keep.to_vec(), yields)
    }

    /// Restricts to a calendar range (inclusive).
    pub fn restrict_dates(&self, first: YearMonth, last: YearMonth) -> Result<Self> {
        let start = self
            .index_of(first)
            .ok_or_else(|| Error::Validation(format!("{first} not covered by panel")))?;
        let end = self
            .index_of(last)
            .ok_or_else(|| Error::Validation(format!("{last} not covered by panel")))?;
        self.slice_rows(start, end)
    }

    /// The 17 standard maturities over January 1985 – December 2000.
    pub fn restrict_to_paper(&self) -> Result<Self> {
        self.select_maturities(&PAPER_MATURITIES)?.restrict_dates(
            YearMonth { year: 1985, month: 1 },
            YearMonth { year: 2000, month: 12 },
        )
    }

    /// Canonical wide CSV: `date,m3,...` with `YYYYMM` dates.
    pub fn to_wide_csv(&self) -> String {
        let mut out = String::from("date");
        for m in &self.maturities {
            out.push_str(&format!(",m{}", fmt_maturity(*m)));
        }
        out.push('\n');
        for (t, d) in self.dates.iter().enumerate() {
            out.push_str(&d.compact());
            for y in self.row(t) {
                out.push_str(&format!(",{y}"));
            }
            out.push('\n');
        }
        out
    }

    /// Long CSV: `date,maturity,yield`.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("date,maturity,yield\n");
        for (t, d) in self.dates.iter().enumerate() {
            for (j, m) in self.maturities.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", d.compact(), fmt_maturity(*m), self.get(t, j)));
            }
        }
        out
    }

    /// One-line description, e.g. `192 months × 17 maturities, 1985-01..2000-12`.
    pub fn summary(&self) -> String {
        format!(
            "{} months × {} maturities, {}..{}",
            self.n_dates(),
            self.n_maturities(),
            self.dates[0],
            self.dates[self.dates.len() - 1]
        )
    }
}

fn fmt_maturity(m: f64) -> String {
    if m.fract() == 0.0 {
        format!("{}", m as i64)
    } else {
        format!("{m}")
    }
}

/// Parser knobs.
#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Column maturities when the file carries no maturity header.
    pub maturities: Option<Vec<f64>>,
    /// Restrict to the 17 standard maturities and 1985-01..2000-12.
    pub restrict_paper: bool,
}

/// Parses Fama–Bliss text or canonical CSV into a validated panel.
pub fn parse_fama_bliss(text: &str, opts: &ParseOptions) -> Result<YieldPanel> {
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or(Error::Parse {
            line: 0,
            msg: "empty input: zero rows".into(),
        })?;
    let panel = if first.to_ascii_lowercase().starts_with("date") && first.contains(',') {
        parse_wide_csv(text)?
    } else {
        parse_whitespace(text, opts)?
    };
    if opts.restrict_paper {
        panel.restrict_to_paper()
    } else {
        Ok(panel)
    }
}

fn finish(rows: Vec<(YearMonth, Vec<f64>)>, maturities: Vec<f64>) -> Result<YieldPanel> {
    let mut rows = rows;
    rows.sort_by_key(|r| r.0);
    let dates = rows.iter().map(|r| r.0).collect();
    let yields = rows.into_iter().flat_map(|r| r.1).collect();
    YieldPanel::new(dates, maturities, yields)
}

fn parse_number(tok: &str, line: usize) -> Result<f64> {
    tok.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("not a number: {tok:?}"),
    })
}

fn parse_wide_csv(text: &str) -> Result<YieldPanel> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().expect("checked non-empty");
    let maturities = header
        .split(',')
        .skip(1)
        .map(|h| {
            let h = h.trim();
            h.strip_prefix('m')
                .or_else(|| h.strip_prefix('M'))
                .unwrap_or(h)
                .parse::<f64>()
                .map_err(|_| Error::Parse {
                    line: hline + 1,
                    msg: format!("bad maturity column {h:?}"),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, l) in lines {
        let line = i + 1;
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() != maturities.len() + 1 {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "expected {} columns, found {}",
                    maturities.len() + 1,
                    fields.len()
                ),
            });
        }
        let date = YearMonth::parse(fields[0].trim()).ok_or_else(|| Error::Parse {
            line,
            msg: format!("bad date {:?}", fields[0]),
        })?;
        let ys = fields[1..]
            .iter()
            .map(|f| parse_number(f, line))
            .collect::<Result<Vec<_>>>()?;
        rows.push((date, ys));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no data rows".into(),
        });
    }
    finish(rows, maturities)
}

fn parse_whitespace(text: &str, opts: &ParseOptions) -> Result<YieldPanel> {
    let mut header: Option<Vec<f64>> = None;
    let mut rows: Vec<(YearMonth, Vec<f64>)> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let Some(date) = YearMonth::parse(toks[0]) else {
            // Before any data: a row of plain numbers is the maturity header,
            // anything else is commentary.
            if rows.is_empty()
                && header.is_none()
                && toks.iter().all(|t| t.parse::<f64>().is_ok())
                && toks.len() > 1
            {
                header = Some(toks.iter().map(|t| t.parse().unwrap()).collect());
            }
            continue;
        };
        let ys = toks[1..]
            .iter()
            .map(|t| parse_number(t, line))
            .collect::<Result<Vec<_>>>()?;
        let expected = width.unwrap_or(ys.len());
        if ys.len() != expected || ys.is_empty() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {expected} yield columns, found {}", ys.len()),
            });
        }
        width = Some(expected);
        rows.push((date, ys));
    }
    let Some(width) = width else {
        return Err(Error::Parse {
            line: 0,
            msg: "no data rows".into(),
        });
    };
    let maturities = match (&opts.maturities, header) {
        (Some(m), _) => m.clone(),
        (None, Some(h)) => h,
        (None, None) if width == PAPER_MATURITIES.len() => PAPER_MATURITIES.to_vec(),
        (None, None) => {
            return Err(Error::Parse {
                line: 0,
                msg: format!("{width} yield columns but no maturity header"),
            })
        }
    };
    if maturities.len() != width {
        return Err(Error::Parse {
            line: 0,
            msg: format!(
                "{} maturities declared for {width} yield columns",
                maturities.len()
            ),
        });
    }
    finish(rows, maturities)
}

/// Reads and parses a file.
pub fn read_panel(path: &std::path::Path, opts: &ParseOptions) -> Result<YieldPanel> {
    let text = std::fs::read_to_string(path)?;
    parse_fama_bliss(&text, opts)
}

/// `--data` flag first, then the environment fallback.
pub fn resolve_data_path(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(DATA_ENV_VAR).map(PathBuf::from))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowScheme {
    #[default]
    Expanding,
    Moving,
}

/// One estimation window and its forecast horizon (0-based row indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub train_start: usize,
    /// Forecast origin: last row used for estimation.
    pub train_end: usize,
    pub horizon: usize,
    pub scheme: WindowScheme,
}

impl WindowSpec {
    pub fn target(&self) -> usize {
        self.train_end + self.horizon
    }

    pub fn len(&self) -> usize {
        self.train_end - self.train_start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Smallest estimation sample accepted for a forecast origin.
pub const MIN_TRAIN_MONTHS: usize = 24;

/// One window per monthly origin in `first_origin..=last_origin`.
pub fn rolling_origins(
    panel: &YieldPanel,
    first_origin: YearMonth,
    last_origin: YearMonth,
    horizon: usize,
    scheme: WindowScheme,
) -> Result<Vec<WindowSpec>> {
    let t = panel.n_dates();
    let first = panel
        .index_of(first_origin)
        .ok_or_else(|| Error::Range(format!("origin {first_origin} outside panel")))?;
    let last = panel
        .index_of(last_origin)
        .ok_or_else(|| Error::Range(format!("origin {last_origin} outside panel")))?;
    if last < first {
        return Err(Error::Range(format!(
            "last origin {last_origin} precedes first origin {first_origin}"
        )));
    }
    if first + 1 < MIN_TRAIN_MONTHS {
        return Err(Error::Range(format!(
            "first origin {first_origin} leaves fewer than {MIN_TRAIN_MONTHS} estimation months"
        )));
    }
    if horizon == 0 || last + horizon >= t {
        return Err(Error::Range(format!(
            "horizon {horizon} not in 1..={} for last origin {last_origin}",
            t - 1 - last
        )));
    }
    let train_len = first + 1;
    Ok((first..=last)
        .map(|origin| WindowSpec {
            train_start: match scheme {
                WindowScheme::Expanding => 0,
                WindowScheme::Moving => origin + 1 - train_len,
            },
            train_end: origin,
            horizon,
            scheme,
        })
        .collect())
}

/// Origins whose `horizon`-ahead targets run from `first_target` to `last_target`.
pub fn target_aligned_origins(
    panel: &YieldPanel,
    first_target: YearMonth,
    last_target: YearMonth,
    horizon: usize,
    scheme: WindowScheme,
) -> Result<Vec<WindowSpec>> {
    let h = horizon as i64;
    rolling_origins(
        panel,
        first_target.add_months(-h),
        last_target.add_months(-h),
        horizon,
        scheme,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(rows: &[&str]) -> String {
        rows.iter()
            .map(|d| {
                let mut s = d.to_string();
                for _ in 0..17 {
                    s.push_str(" 5.0");
                }
                s
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn long_panel(t: usize) -> YieldPanel {
        let start = YearMonth::new(1985, 1).unwrap();
        let dates = (0..t as i64).map(|k| start.add_months(k)).collect();
        let yields = (0..t * 17).map(|k| 5.0 + (k % 7) as f64 * 0.1).collect();
        YieldPanel::new(dates, PAPER_MATURITIES.to_vec(), yields).unwrap()
    }

    #[test]
    fn year_month_serializes_as_text() {
        let d = YearMonth::new(1995, 3).unwrap();
        assert_eq!(serde_json::to_string(&d).unwrap(), "\"1995-03\"");
        assert_eq!(serde_json::from_str::<YearMonth>("\"199503\"").unwrap(), d);
        assert!(serde_json::from_str::<YearMonth>("\"1995-13\"").is_err());
    }

    #[test]
    fn constant_three_row_file() {
        let p = parse_fama_bliss(&synthetic(&["198501", "198502", "198503"]), &Default::default())
            .unwrap();
        assert_eq!((p.n_dates(), p.n_maturities()), (3, 17));
        assert!(p.yields().iter().all(|&y| y == 5.0));
    }

    #[test]
    fn empty_input_is_a_parse_error() {
        assert!(matches!(
            parse_fama_bliss("", &Default::default()),
            Err(Error::Parse { line: 0, .. })
        ));
        assert!(matches!(
            parse_fama_bliss("   \n\n", &Default::default()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn comment_lines_and_maturity_header_are_handled() {
        let text = "Fama-Bliss fitted yields\n 3 6 12\n19850131 8.1 8.3 8.6\n19850228 8.2 8.4 8.7\n";
        let p = parse_fama_bliss(text, &Default::default()).unwrap();
        assert_eq!(p.maturities(), &[3.0, 6.0, 12.0]);
        assert_eq!(p.get(1, 2), 8.7);
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let text = "198501 1 2 3\n198502 1 2\n";
        let opts = ParseOptions {
            maturities: Some(vec![3.0, 6.0, 9.0]),
            ..Default::default()
        };
        match parse_fama_bliss(text, &opts) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_dates_and_nan_fail_validation() {
        let opts = ParseOptions {
            maturities: Some(vec![3.0]),
            ..Default::default()
        };
        assert!(matches!(
            parse_fama_bliss("198501 1\n198501 2\n", &opts),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            parse_fama_bliss("198501 1\n198502 NaN\n", &opts),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            parse_fama_bliss("198501 1\n198503 2\n", &opts),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn shuffled_rows_normalize() {
        let a = parse_fama_bliss(&synthetic(&["198501", "198502", "198503"]), &Default::default());
        let b = parse_fama_bliss(&synthetic(&["198503", "198501", "198502"]), &Default::default());
        assert_eq!(a.unwrap(), b.unwrap());
    }

    #[test]
    fn wide_csv_round_trip_is_bitwise() {
        let start = YearMonth::new(1990, 11).unwrap();
        let dates: Vec<_> = (0..5).map(|k| start.add_months(k)).collect();
        let yields: Vec<f64> = (0..5 * 17).map(|k| 0.1 + (k as f64).sqrt() / 3.0).collect();
        let p = YieldPanel::new(dates, PAPER_MATURITIES.to_vec(), yields).unwrap();
        let q = parse_fama_bliss(&p.to_wide_csv(), &Default::default()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn paper_restriction_gives_192_rows() {
        let start = YearMonth::new(1980, 1).unwrap();
        let dates: Vec<_> = (0..300).map(|k| start.add_months(k)).collect();
        let p = YieldPanel::new(dates, PAPER_MATURITIES.to_vec(), vec![6.0; 300 * 17]).unwrap();
        let r = p.restrict_to_paper().unwrap();
        assert_eq!((r.n_dates(), r.n_maturities()), (192, 17));
        assert_eq!(r.summary(), "192 months × 17 maturities, 1985-01..2000-12");
    }

    #[test]
    fn origin_counts() {
        let p = long_panel(192);
        let ym = |y, m| YearMonth::new(y, m).unwrap();
        // Brute-force count of months Dec 1994 ..= Dec 1999.
        let mut count = 0;
        let mut d = ym(1994, 12);
        while d <= ym(1999, 12) {
            count += 1;
            d = d.add_months(1);
        }
        let w = rolling_origins(&p, ym(1994, 12), ym(1999, 12), 12, WindowScheme::Expanding)
            .unwrap();
        assert_eq!(w.len(), count);
        assert_eq!(count, 61);
        let single = rolling_origins(&p, ym(1996, 3), ym(1996, 3), 6, WindowScheme::Expanding);
        assert_eq!(single.unwrap().len(), 1);
        let last = rolling_origins(&p, ym(2000, 11), ym(2000, 11), 1, WindowScheme::Expanding)
            .unwrap();
        assert_eq!(p.dates()[last[0].target()], ym(2000, 12));
    }

    #[test]
    fn moving_windows_keep_length() {
        let p = long_panel(192);
        let ym = |y, m| YearMonth::new(y, m).unwrap();
        let w = rolling_origins(&p, ym(1994, 12), ym(1999, 12), 1, WindowScheme::Moving).unwrap();
        assert!(w.iter().all(|s| s.len() == w[0].len()));
        assert_eq!(w[0].train_start, 0);
    }

    #[test]
    fn bad_horizon_and_short_sample_are_range_errors() {
        let p = long_panel(192);
        let ym = |y, m| YearMonth::new(y, m).unwrap();
        assert!(matches!(
            rolling_origins(&p, ym(1994, 12), ym(2000, 12), 1, WindowScheme::Expanding),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            rolling_origins(&p, ym(1985, 6), ym(1990, 1), 1, WindowScheme::Expanding),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            rolling_origins(&p, ym(1994, 12), ym(1995, 1), 0, WindowScheme::Expanding),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn target_alignment_matches_across_horizons() {
        let p = long_panel(192);
        let ym = |y, m| YearMonth::new(y, m).unwrap();
        for h in [1usize, 6, 12] {
            let w = target_aligned_origins(&p, ym(1995, 1), ym(2000, 12), h, WindowScheme::Expanding)
                .unwrap();
            assert_eq!(w.len(), 72);
            assert_eq!(p.dates()[w[0].target()], ym(1995, 1));
            assert_eq!(p.dates()[w.last().unwrap().target()], ym(2000, 12));
        }
    }
}
