//! Sobol low-discrepancy points with Joe–Kuo D6 direction numbers, 32-bit
//! resolution and random access by index (Gray-code ordering).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

const JOE_KUO_D6: &str = include_str!("../data/new-joe-kuo-6.1000");
const BITS: usize = 32;
const SCALE: f64 = 1.0 / 4_294_967_296.0;

pub const MAX_DIMENSIONS: usize = 1000;

#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
}

impl Sobol {
    pub fn new(dimensions: usize) -> Result<Self> {
        if dimensions == 0 || dimensions > MAX_DIMENSIONS {
            return Err(Error::UnsupportedDimension {
                requested: dimensions,
                max: MAX_DIMENSIONS,
            });
        }
        let mut directions = Vec::with_capacity(dimensions);
        let mut first = [0u32; BITS];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS - 1 - k);
        }
        directions.push(first);
        for line in JOE_KUO_D6.lines().skip(1).take(dimensions - 1) {
            directions.push(parse_dimension(line));
        }
        Ok(Self { directions })
    }

    pub fn dimensions(&self) -> usize {
        self.directions.len()
    }

    /// Raw integer coordinates of point `index` (index 0 is the origin).
    pub fn point_bits(&self, index: u32, out: &mut [u32]) {
        let gray = index ^ (index >> 1);
        for (o, dirs) in out.iter_mut().zip(&self.directions) {
            let mut x = 0u32;
            let mut g = gray;
            let mut k = 0;
            while g != 0 {
                if g & 1 == 1 {
                    x ^= dirs[k];
                }
                g >>= 1;
                k += 1;
            }
            *o = x;
        }
    }

    /// Coordinates of point `index` in `[0, 1)`.
    pub fn point(&self, index: u32, out: &mut [f64]) {
        let mut bits = vec![0u32; self.dimensions()];
        self.point_bits(index, &mut bits);
        for (o, b) in out.iter_mut().zip(bits) {
            *o = b as f64 * SCALE;
        }
    }

    /// Sequential points starting at `index`, each step updating one direction per dimension.
    pub fn stream(&self, index: u32) -> SobolStream<'_> {
        let mut state = vec![0u32; self.dimensions()];
        self.point_bits(index, &mut state);
        SobolStream {
            sobol: self,
            next_index: index,
            state,
            primed: false,
        }
    }
}

fn parse_dimension(line: &str) -> [u32; BITS] {
    let mut fields = line
        .split_whitespace()
        .map(|f| f.parse::<u32>().expect("direction-number table is well formed"));
    let _d = fields.next();
    let s = fields.next().expect("degree") as usize;
    let a = fields.next().expect("coefficients");
    let mut v = [0u32; BITS];
    for (k, vk) in v.iter_mut().enumerate().take(s) {
        let m = fields.next().expect("initial direction number");
        *vk = m << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

/// Iterator over consecutive Sobol points; yields raw 32-bit coordinates.
pub struct SobolStream<'a> {
    sobol: &'a Sobol,
    next_index: u32,
    state: Vec<u32>,
    primed: bool,
}

impl SobolStream<'_> {
    /// Advances to the next point and returns its coordinates and index.
    pub fn next_point(&mut self) -> (u32, &[u32]) {
        if self.primed {
            let c = (!self.next_index).trailing_zeros().min(BITS as u32 - 1) as usize;
            // Gray code of i+1 differs from that of i in bit c, the lowest zero of i
            for (x, dirs) in self.state.iter_mut().zip(&self.sobol.directions) {
                *x ^= dirs[c];
            }
            self.next_index = self.next_index.wrapping_add(1);
        }
        self.primed = true;
        (self.next_index, &self.state)
    }
}

/// Maps a raw coordinate to `(0, 1)`; zero only occurs at the origin.
#[inline]
pub fn to_unit(bits: u32) -> f64 {
    bits as f64 * SCALE
}
