//! Value lists on the command line: `a,b,c`, `start:step:stop` or a mix of
//! both (`0:0.5:2,3`).

use std::fmt::Display;
use std::str::FromStr;

/// Steps are snapped to this many decimals so `0:0.1:1` yields `0.3`, not
/// `0.30000000000000004`.
const DECIMALS: i32 = 9;

pub fn parse_f64_list(text: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for part in parts(text)? {
        match part.split(':').collect::<Vec<_>>().as_slice() {
            [single] => out.push(number::<f64>(single)?),
            [start, step, stop] => {
                let (start, step, stop) = (number::<f64>(start)?, number::<f64>(step)?, number::<f64>(stop)?);
                if step <= 0.0 || !step.is_finite() {
                    return Err(format!("range step must be positive, got {step} in `{part}`"));
                }
                if stop < start {
                    return Err(format!("range `{part}` runs backwards"));
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
                let scale = 10f64.powi(DECIMALS);
                out.extend((0..count).map(|i| ((start + i as f64 * step) * scale).round() / scale));
            }
            _ => return Err(format!("expected `value` or `start:step:stop`, got `{part}`")),
        }
    }
    Ok(out)
}

pub fn parse_usize_list(text: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in parts(text)? {
        match part.split(':').collect::<Vec<_>>().as_slice() {
            [single] => out.push(number::<usize>(single)?),
            [start, step, stop] => {
                let (start, step, stop) = (number::<usize>(start)?, number::<usize>(step)?, number::<usize>(stop)?);
                if step == 0 {
                    return Err(format!("range step must be positive in `{part}`"));
                }
                if stop < start {
                    return Err(format!("range `{part}` runs backwards"));
                }
                out.extend((start..=stop).step_by(step));
            }
            _ => return Err(format!("expected `value` or `start:step:stop`, got `{part}`")),
        }
    }
    Ok(out)
}

fn parts(text: &str) -> Result<Vec<&str>, String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("empty entry in list `{text}`"));
    }
    Ok(parts)
}

fn number<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: Display,
{
    let s = s.trim();
    s.parse::<T>().map_err(|e| format!("`{s}`: {e}"))
}
