use std::f64::consts::PI;
use std::str::FromStr;

use cat_ifm::stats::PhiGrid;

/// START:STOP:POINTS as given on the command line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec(pub PhiGrid);

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, points] = parts[..] else {
            return Err(format!("expected START:STOP:POINTS, got {s:?}"));
        };
        let start = parse_angle(start)?;
        let stop = parse_angle(stop)?;
        let points: usize = points.trim().parse().map_err(|_| format!("bad point count {points:?}"))?;
        PhiGrid::new(start, stop, points).map(GridSpec).map_err(|e| e.to_string())
    }
}

/// A number, or [-][k*]pi[/d].
pub fn parse_angle(s: &str) -> Result<f64, String> {
    let t = s.trim();
    if let Ok(v) = t.parse::<f64>() {
        return if v.is_finite() { Ok(v) } else { Err(format!("angle must be finite, got {s:?}")) };
    }
    let bad = || format!("cannot read angle {s:?}");
    let (sign, rest) = match t.strip_prefix('-') {
        Some(r) => (-1.0, r),
        None => (1.0, t),
    };
    let (numer, denom) = match rest.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().map_err(|_| bad())?),
        None => (rest, 1.0),
    };
    let factor = match numer.strip_suffix("pi") {
        Some("") => 1.0,
        Some(k) => k.strip_suffix('*').unwrap_or(k).parse::<f64>().map_err(|_| bad())?,
        None => return Err(bad()),
    };
    if denom == 0.0 {
        return Err(bad());
    }
    Ok(sign * factor * PI / denom)
}
