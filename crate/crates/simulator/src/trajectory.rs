//! Recorded simulation output and its CSV form.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use stvs_core::devices::ModeKind;
use stvs_core::{Phasor, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub bus_ids: Vec<u32>,
    pub device_ids: Vec<String>,
    /// Row of each device's bus.
    pub device_bus: Vec<usize>,
    pub t: Vec<T>,
    /// `[sample][bus]`
    pub v: Vec<Vec<Phasor<T>>>,
    pub vmag: Vec<Vec<T>>,
    /// `[sample][device]`
    pub i: Vec<Vec<Phasor<T>>>,
    pub imag: Vec<Vec<T>>,
    pub mode: Vec<Vec<ModeKind>>,
    /// Commanded internal phasor (`E` or `I'`).
    pub reference: Vec<Vec<Phasor<T>>>,
    pub p: Vec<Vec<T>>,
    pub q: Vec<Vec<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(bus_ids: Vec<u32>, device_ids: Vec<String>, device_bus: Vec<usize>) -> Self {
        Self {
            bus_ids,
            device_ids,
            device_bus,
            t: Vec::new(),
            v: Vec::new(),
            vmag: Vec::new(),
            i: Vec::new(),
            imag: Vec::new(),
            mode: Vec::new(),
            reference: Vec::new(),
            p: Vec::new(),
            q: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn sample_interval(&self) -> f64 {
        match self.t.as_slice() {
            [a, b, ..] => (*b - *a).to_f64_lossy(),
            _ => 0.0,
        }
    }

    pub fn bus_row(&self, id: u32) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == id)
    }

    pub fn device_index(&self, id: &str) -> Option<usize> {
        self.device_ids.iter().position(|d| d == id)
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["t".to_string()];
        cols.extend(self.bus_ids.iter().map(|b| format!("vmag_{b}")));
        for d in &self.device_ids {
            cols.extend([format!("imag_{d}"), format!("p_{d}"), format!("q_{d}"), format!("mode_{d}")]);
        }
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for s in 0..self.len() {
            write!(out, "{}", self.t[s].to_f64_lossy()).ok();
            for v in &self.vmag[s] {
                write!(out, ",{}", v.to_f64_lossy()).ok();
            }
            for k in 0..self.device_ids.len() {
                write!(
                    out,
                    ",{},{},{},{}",
                    self.imag[s][k].to_f64_lossy(),
                    self.p[s][k].to_f64_lossy(),
                    self.q[s][k].to_f64_lossy(),
                    self.mode[s][k].code()
                )
                .ok();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_csv().as_bytes())?;
        f.flush()
    }
}
