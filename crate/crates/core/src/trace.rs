//! Complex baseband traces and their on-disk formats.
//!
//! CSV: header `t_seconds,re,im`, one sample per row.
//!
//! Binary: a single ASCII header line
//! `NVTRACE v1 sample_rate=<Hz> start_time=<s> samples=<n>\n`
//! followed by `n` little-endian `f64` triplets `(t_seconds, re, im)`.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionTrace {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub start_time: f64,
}

impl ReflectionTrace {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Self {
        Self {
            samples,
            sample_rate,
            start_time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start_time + i as f64 / self.sample_rate
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "t_seconds,re,im")?;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(w, "{:.12e},{:.17e},{:.17e}", self.time(i), s.re, s.im)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (n, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with('t')) {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
            if v.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected 3 columns", n + 1)));
            }
            times.push(v[0]);
            samples.push(Complex64::new(v[1], v[2]));
        }
        if times.len() < 2 {
            return Err(Error::Parse("need at least two samples to infer the sample rate".into()));
        }
        let sample_rate = (times.len() - 1) as f64 / (times[times.len() - 1] - times[0]);
        Ok(Self {
            samples,
            sample_rate,
            start_time: times[0],
        })
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(
            w,
            "NVTRACE v1 sample_rate={:e} start_time={:e} samples={}",
            self.sample_rate,
            self.start_time,
            self.samples.len()
        )?;
        for (i, s) in self.samples.iter().enumerate() {
            w.write_all(&self.time(i).to_le_bytes())?;
            w.write_all(&s.re.to_le_bytes())?;
            w.write_all(&s.im.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("NVTRACE") || fields.next() != Some("v1") {
            return Err(Error::Parse("missing NVTRACE v1 header".into()));
        }
        let (mut rate, mut start, mut n) = (None, None, None);
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| Error::Parse(format!("bad header field {f}")))?;
            let bad = |_| Error::Parse(format!("bad header value {f}"));
            match k {
                "sample_rate" => rate = Some(v.parse::<f64>().map_err(bad)?),
                "start_time" => start = Some(v.parse::<f64>().map_err(bad)?),
                "samples" => n = Some(v.parse::<usize>().map_err(|_| Error::Parse(format!("bad header value {f}")))?),
                _ => {}
            }
        }
        let (Some(sample_rate), Some(start_time), Some(n)) = (rate, start, n) else {
            return Err(Error::Parse("header lacks sample_rate, start_time or samples".into()));
        };
        let mut buf = [0u8; 24];
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            let re = f64::from_le_bytes(buf[8..16].try_into().unwrap());
            let im = f64::from_le_bytes(buf[16..24].try_into().unwrap());
            samples.push(Complex64::new(re, im));
        }
        Ok(Self {
            samples,
            sample_rate,
            start_time,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        self.write_binary(std::fs::File::create(path)?)
    }
}
