//! Named channels sampled on a shared time grid.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("duplicate channel name `{0}`")]
    DuplicateChannel(String),
    #[error("sample has {found} values, expected {expected}")]
    Width { expected: usize, found: usize },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeries {
    time: Vec<f64>,
    names: Vec<String>,
    channels: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, SeriesError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(SeriesError::DuplicateChannel(n.clone()));
            }
        }
        let channels = vec![Vec::new(); names.len()];
        Ok(Self {
            time: Vec::new(),
            names,
            channels,
        })
    }

    pub fn push(&mut self, t: f64, values: &[f64]) -> Result<(), SeriesError> {
        if values.len() != self.names.len() {
            return Err(SeriesError::Width {
                expected: self.names.len(),
                found: values.len(),
            });
        }
        self.time.push(t);
        for (c, v) in self.channels.iter_mut().zip(values) {
            c.push(*v);
        }
        Ok(())
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.channels[i].as_slice())
    }

    pub fn channels(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.channels.iter().map(Vec::as_slice))
    }

    /// Index of the last sample with time ≤ `t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        match self.time.partition_point(|&x| x <= t) {
            0 => None,
            k => Some(k - 1),
        }
    }

    /// Linear interpolation of a channel at `t`, clamped to the grid ends.
    pub fn interpolate(&self, name: &str, t: f64) -> Option<f64> {
        let ch = self.channel(name)?;
        let k = self.time.partition_point(|&x| x < t);
        Some(match k {
            0 => *ch.first()?,
            k if k >= self.time.len() => *ch.last()?,
            k => {
                let (t0, t1) = (self.time[k - 1], self.time[k]);
                let w = (t - t0) / (t1 - t0);
                ch[k - 1] + w * (ch[k] - ch[k - 1])
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_and_lookup() {
        let mut s = TimeSeries::new(["a", "b"]).unwrap();
        s.push(0.0, &[1.0, 2.0]).unwrap();
        s.push(1.0, &[3.0, 4.0]).unwrap();
        assert_eq!(s.channel("b"), Some(&[2.0, 4.0][..]));
        assert_eq!(s.interpolate("a", 0.25), Some(1.5));
        assert_eq!(s.index_at(0.5), Some(0));
        assert!(s.push(2.0, &[1.0]).is_err());
        assert!(TimeSeries::new(["x", "x"]).is_err());
    }
}
