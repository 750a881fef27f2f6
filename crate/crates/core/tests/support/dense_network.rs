//! Dense transfer-matrix model of the interferometer over the full mode set,
//! written without the sparse element code.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use tbqkd::Polarization;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub fn e(phi: f64) -> Complex64 {
    Complex64::from_polar(1.0, phi)
}

/// Port slots: 0 source arm, 1 delay arm, 2 line, 3.. filtration long arms.
pub const SRC: usize = 0;
pub const DLY: usize = 1;
const LINE: usize = 2;

pub struct Dense {
    ports: usize,
    pub bins: usize,
    stages: usize,
    mz_delay: usize,
}

impl Dense {
    pub fn new(n_pairs: usize) -> Self {
        let stages = n_pairs.trailing_zeros() as usize;
        let mz_delay = 2;
        let bins = 2 + 2 * mz_delay * (n_pairs - 1) + 2;
        Dense {
            ports: 3 + stages,
            bins,
            stages,
            mz_delay,
        }
    }

    fn dim(&self) -> usize {
        self.ports * 2 * self.bins
    }

    pub fn idx(&self, port: usize, pol: usize, bin: usize) -> usize {
        (port * 2 + pol) * self.bins + bin
    }

    fn identity(&self) -> DMatrix<Complex64> {
        DMatrix::identity(self.dim(), self.dim())
    }

    fn coupler(&self, a: usize, b: usize) -> DMatrix<Complex64> {
        let t = ONE * 0.5f64.sqrt();
        let r = I * 0.5f64.sqrt();
        let mut m = self.identity();
        for pol in 0..2 {
            for bin in 0..self.bins {
                let (ia, ib) = (self.idx(a, pol, bin), self.idx(b, pol, bin));
                m[(ia, ia)] = t;
                m[(ib, ib)] = t;
                m[(ia, ib)] = r;
                m[(ib, ia)] = r;
            }
        }
        m
    }

    fn delay(&self, port: usize, d: usize) -> DMatrix<Complex64> {
        let mut m = self.identity();
        for pol in 0..2 {
            for bin in 0..self.bins {
                let i = self.idx(port, pol, bin);
                m[(i, i)] = ONE * 0.0;
            }
            for bin in 0..self.bins - d {
                m[(self.idx(port, pol, bin + d), self.idx(port, pol, bin))] = ONE;
            }
        }
        m
    }

    fn swap_pol(&self, port: usize) -> DMatrix<Complex64> {
        let mut m = self.identity();
        for bin in 0..self.bins {
            let (h, v) = (self.idx(port, 0, bin), self.idx(port, 1, bin));
            m[(h, h)] = ONE * 0.0;
            m[(v, v)] = ONE * 0.0;
            m[(h, v)] = ONE;
            m[(v, h)] = ONE;
        }
        m
    }

    /// Reciprocal PBS: source-arm H <-> line H, delay-arm V <-> line V (times i).
    fn pbs(&self) -> DMatrix<Complex64> {
        let mut m = self.identity();
        for bin in 0..self.bins {
            let pairs = [
                (self.idx(SRC, 0, bin), self.idx(LINE, 0, bin), ONE),
                (self.idx(DLY, 1, bin), self.idx(LINE, 1, bin), I),
            ];
            for (x, y, f) in pairs {
                m[(x, x)] = ONE * 0.0;
                m[(y, y)] = ONE * 0.0;
                m[(x, y)] = f;
                m[(y, x)] = f;
            }
        }
        m
    }

    fn line_phase(&self, pol: Option<usize>, phase: impl Fn(usize) -> f64) -> DMatrix<Complex64> {
        let mut m = self.identity();
        for p in 0..2 {
            if pol.is_some_and(|want| want != p) {
                continue;
            }
            for bin in 0..self.bins {
                let i = self.idx(LINE, p, bin);
                m[(i, i)] = e(phase(bin));
            }
        }
        m
    }

    fn drop_port(&self, port: usize) -> DMatrix<Complex64> {
        let mut m = self.identity();
        for pol in 0..2 {
            for bin in 0..self.bins {
                let i = self.idx(port, pol, bin);
                m[(i, i)] = ONE * 0.0;
            }
        }
        m
    }

    fn stage(&self, j: usize, s: DVector<Complex64>) -> DVector<Complex64> {
        let long = 3 + j;
        let c = self.coupler(LINE, long);
        let s = &c * s;
        let s = self.delay(long, self.mz_delay << j) * s;
        let s = &c * s;
        self.drop_port(long) * s
    }

    fn source(&self) -> DVector<Complex64> {
        let mut v = DVector::zeros(self.dim());
        v[self.idx(SRC, 0, 0)] = ONE;
        v
    }

    /// State on the line just before Bob's modulator, plus the C1 outputs as
    /// (source-arm, delay-arm) amplitude vectors.
    pub fn run(&self, phi_a: f64, phi_b: f64, noise: &[f64]) -> (DVector<Complex64>, DVector<Complex64>) {
        let mut s = self.source();
        s = self.coupler(SRC, DLY) * s;
        s = self.delay(DLY, 1) * s;
        s = self.swap_pol(DLY) * s;
        s = self.pbs() * s;
        for j in 0..self.stages {
            s = self.stage(j, s);
        }
        s = self.line_phase(Some(1), |_| phi_a) * s;
        s = self.swap_pol(LINE) * s;
        s = self.line_phase(None, |bin| noise.get(bin).copied().unwrap_or(0.0)) * s;
        for j in (0..self.stages).rev() {
            s = self.stage(j, s);
        }
        let before_bob = s.clone();
        s = self.line_phase(Some(0), |_| phi_b) * s;
        s = self.pbs() * s;
        s = self.swap_pol(DLY) * s;
        s = self.delay(DLY, 1) * s;
        s = self.coupler(SRC, DLY) * s;
        (before_bob, s)
    }

    pub fn line_amp(&self, v: &DVector<Complex64>, bin: usize, pol: Polarization) -> Complex64 {
        let p = match pol {
            Polarization::H => 0,
            Polarization::V => 1,
        };
        v[self.idx(LINE, p, bin)]
    }
}

/// Closed-form state entering Bob's modulator for two pairs.
pub fn two_pair_state(phi_a: f64, p: [f64; 4]) -> Vec<(usize, Polarization, Complex64)> {
    let k = 1.0 / (4.0 * 2f64.sqrt());
    let a = e(phi_a);
    vec![
        (0, Polarization::V, k * e(p[0])),
        (1, Polarization::H, -k * a * e(p[1])),
        (2, Polarization::V, -k * (e(p[0]) + e(p[2]))),
        (3, Polarization::H, k * a * (e(p[1]) + e(p[3]))),
        (4, Polarization::V, k * e(p[2])),
        (5, Polarization::H, -k * a * e(p[3])),
    ]
}

pub fn random_phases(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-PI..PI)).collect()
}
