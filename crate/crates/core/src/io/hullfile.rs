//! Plain-text hull files.
//!
//! ```text
//! HULLSERIES 1
//! dim = 2
//! cutoff = 32
//! radius = 3.0000000000000000e-1
//! iteration = 3
//! residual_norm = ...
//! accumulated_delta_norm = ...
//! tail = ...
//! coefficients 2
//! 1 0 5.0000000000000000e-1 0.0000000000000000e0
//! -1 0 5.0000000000000000e-1 0.0000000000000000e0
//! ```
//!
//! Only nonzero coefficients are listed. Floats carry 17 significant digits,
//! so a save/load round trip is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use super::report::fmt_f64;
use super::{IoError, IoResult};
use crate::fourier::{FourierSeries, MAX_DIM};
use crate::solver::HullState;

pub const HULL_VERSION: u32 = 1;
const MAGIC: &str = "HULLSERIES";

pub fn write_hull(state: &HullState) -> String {
    let h = &state.h;
    let modes = h.nonzero_modes();
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {HULL_VERSION}");
    let _ = writeln!(s, "dim = {}", h.dim());
    let _ = writeln!(s, "cutoff = {}", h.cutoff());
    let _ = writeln!(s, "radius = {}", fmt_f64(state.radius));
    let _ = writeln!(s, "iteration = {}", state.iteration);
    let _ = writeln!(s, "residual_norm = {}", fmt_f64(state.residual_norm));
    let _ = writeln!(s, "accumulated_delta_norm = {}", fmt_f64(state.accumulated_delta_norm));
    let _ = writeln!(s, "tail = {}", fmt_f64(state.tail));
    let _ = writeln!(s, "coefficients {}", modes.len());
    for (k, c) in modes {
        for ki in k {
            let _ = write!(s, "{ki} ");
        }
        let _ = writeln!(s, "{} {}", fmt_f64(c.re), fmt_f64(c.im));
    }
    s
}

pub fn save_hull(state: &HullState, path: impl AsRef<Path>) -> IoResult<()> {
    let path = path.as_ref();
    std::fs::write(path, write_hull(state)).map_err(|e| IoError::io(path, e))
}

pub fn load_hull(path: impl AsRef<Path>) -> IoResult<HullState> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_hull(&text)
}

fn format_err(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

fn header<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> IoResult<&'a str> {
    let (n, line) = lines
        .next()
        .ok_or_else(|| format_err(format!("missing `{key}` line")))?;
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| format_err(format!("line {}: expected `{key} = value`", n + 1)))?;
    if k.trim() != key {
        return Err(format_err(format!("line {}: expected `{key}`, found `{}`", n + 1, k.trim())));
    }
    Ok(v.trim())
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> IoResult<T> {
    s.parse()
        .map_err(|_| format_err(format!("cannot parse {what} from `{s}`")))
}

pub fn parse_hull(text: &str) -> IoResult<HullState> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| format_err("empty file"))?;
    let mut it = first.split_whitespace();
    if it.next() != Some(MAGIC) {
        return Err(format_err(format!("missing `{MAGIC}` header")));
    }
    let version: u32 = num(it.next().unwrap_or(""), "version")?;
    if version != HULL_VERSION {
        return Err(IoError::Version {
            found: version,
            expected: HULL_VERSION,
        });
    }
    let dim: usize = num(header(&mut lines, "dim")?, "dim")?;
    if dim == 0 || dim > MAX_DIM {
        return Err(format_err(format!("dim {dim} out of range")));
    }
    let cutoff: usize = num(header(&mut lines, "cutoff")?, "cutoff")?;
    let radius: f64 = num(header(&mut lines, "radius")?, "radius")?;
    let iteration: usize = num(header(&mut lines, "iteration")?, "iteration")?;
    let residual_norm: f64 = num(header(&mut lines, "residual_norm")?, "residual_norm")?;
    let accumulated_delta_norm: f64 =
        num(header(&mut lines, "accumulated_delta_norm")?, "accumulated_delta_norm")?;
    let tail: f64 = num(header(&mut lines, "tail")?, "tail")?;

    let (n, line) = lines.next().ok_or_else(|| format_err("missing `coefficients` line"))?;
    let count: usize = match line.split_whitespace().collect::<Vec<_>>()[..] {
        ["coefficients", c] => num(c, "coefficient count")?,
        _ => return Err(format_err(format!("line {}: expected `coefficients N`", n + 1))),
    };

    let mut h = FourierSeries::zeros(dim, cutoff);
    let mut k = vec![0i64; dim];
    for i in 0..count {
        let (n, line) = lines
            .next()
            .ok_or_else(|| format_err(format!("truncated: expected {count} coefficients, found {i}")))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != dim + 2 {
            return Err(format_err(format!(
                "line {}: expected {} fields, found {}",
                n + 1,
                dim + 2,
                fields.len()
            )));
        }
        for (ki, f) in k.iter_mut().zip(&fields) {
            *ki = num(f, "mode index")?;
        }
        if h.index_of(&k).is_none() {
            return Err(format_err(format!("line {}: mode {k:?} beyond cutoff {cutoff}", n + 1)));
        }
        let re: f64 = num(fields[dim], "real part")?;
        let im: f64 = num(fields[dim + 1], "imaginary part")?;
        h.set(&k, Complex64::new(re, im));
    }
    if let Some((n, _)) = lines.next() {
        return Err(format_err(format!("line {}: trailing content", n + 1)));
    }
    Ok(HullState {
        h,
        radius,
        iteration,
        residual_norm,
        accumulated_delta_norm,
        tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> HullState {
        let mut h = FourierSeries::cosine(2, 4, &[1, 0], 0.1);
        h = &h + &FourierSeries::sine(2, 4, &[2, -3], 1.0 / 3.0);
        HullState {
            h,
            radius: 0.3,
            iteration: 4,
            residual_norm: 1.234e-15,
            accumulated_delta_norm: 0.1 + 0.2,
            tail: 0.0,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let s = state();
        let back = parse_hull(&write_hull(&s)).unwrap();
        assert_eq!(back.h, s.h);
        assert_eq!(back.accumulated_delta_norm, s.accumulated_delta_norm);
        assert_eq!(back.iteration, 4);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let text = write_hull(&state());
        let cut: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(matches!(parse_hull(&cut), Err(IoError::Format(_))));
        assert!(matches!(parse_hull(""), Err(IoError::Format(_))));
    }

    #[test]
    fn version_mismatch() {
        let text = write_hull(&state()).replace("HULLSERIES 1", "HULLSERIES 2");
        assert!(matches!(parse_hull(&text), Err(IoError::Version { found: 2, .. })));
    }
}
