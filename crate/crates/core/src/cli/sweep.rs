//! Command-line parameter values: a single number, a comma list, or an
//! inclusive `start:stop:step` range.

use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep(pub Vec<f64>);

impl Sweep {
    pub fn single(&self) -> Option<f64> {
        (self.0.len() == 1).then(|| self.0[0])
    }
}

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{t}` is not a finite number"))
        };
        let parts: Vec<&str> = s.split(':').collect();
        let values = match parts.as_slice() {
            [one] => one.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
            [a, b, c] => {
                let (start, stop, step) = (num(a)?, num(b)?, num(c)?);
                if !(step > 0.0) || stop < start {
                    return Err(format!("range `{s}` needs step > 0 and stop >= start"));
                }
                // step counting avoids accumulating rounding error
                let count = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=count).map(|k| start + k as f64 * step).collect()
            }
            _ => return Err(format!("`{s}` is neither a value, a list, nor start:stop:step")),
        };
        if values.is_empty() {
            return Err("empty sweep".into());
        }
        Ok(Sweep(values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forms() {
        assert_eq!("0.25".parse::<Sweep>().unwrap().0, vec![0.25]);
        assert_eq!("0.5,0.25".parse::<Sweep>().unwrap().0, vec![0.5, 0.25]);
        let r = "1.6:4.0:0.1".parse::<Sweep>().unwrap().0;
        assert_eq!(r.len(), 25);
        assert!((r[24] - 4.0).abs() < 1e-12);
        assert!("1:0:0.1".parse::<Sweep>().is_err());
        assert!("1:2".parse::<Sweep>().is_err());
        assert!("x".parse::<Sweep>().is_err());
        assert!("nan".parse::<Sweep>().is_err());
    }
}
