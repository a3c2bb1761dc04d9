//! Counter-addressed space-time white noise.
//!
//! Every Gaussian is a pure function of `(seed, stream, step, cell)`, where
//! `cell` is the absolute lattice index `round(x / dx)`. Fields living on
//! different windows of the same lattice therefore see identical noise on
//! the cells they share, which is what makes coupled components and plain
//! runs bit-identical regardless of how their windows grow.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

const CELL_BIAS: i64 = 1 << 38;
const MAX_STEP: u64 = 1 << 28;

/// Identifies one white noise: `(seed, stream)` determines every increment,
/// distinct streams are independent. `cell_offset` relabels lattice cells
/// (cell `i` draws the variate of cell `i + cell_offset`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseStream {
    pub seed: u64,
    pub stream: u64,
    pub cell_offset: i64,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream, cell_offset: 0 }
    }

    pub fn with_cell_offset(self, cell_offset: i64) -> Self {
        Self { cell_offset, ..self }
    }

    pub fn generator(&self) -> NoiseGenerator {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        NoiseGenerator { rng, cell_offset: self.cell_offset, key: mix(mix(self.seed) ^ self.stream) }
    }
}

/// 64-bit finaliser (splitmix64); used only to derive per-cell seeds.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random-access generator for one [`NoiseStream`].
#[derive(Debug, Clone)]
pub struct NoiseGenerator {
    rng: ChaCha8Rng,
    cell_offset: i64,
    key: u64,
}

impl NoiseGenerator {
    /// Writes standard normal variates for cells `first_cell..first_cell + out.len()`
    /// of time step `step`.
    pub fn standard_normals(&mut self, step: u64, first_cell: i64, out: &mut [f64]) {
        assert!(step < MAX_STEP, "step index {step} exceeds the addressable range");
        if out.is_empty() {
            return;
        }
        let first = first_cell + self.cell_offset + CELL_BIAS;
        assert!(
            first >= 0 && first + (out.len() as i64) < 2 * CELL_BIAS,
            "cell index outside the addressable lattice"
        );
        let first = first as u64;
        let pair0 = first >> 1;
        let word = ((u128::from(step) << 38) | u128::from(pair0)) << 2;
        self.rng.set_word_pos(word);
        let mut j = 0usize;
        if first & 1 == 1 {
            let (_, z1) = self.pair();
            out[0] = z1;
            j = 1;
        }
        while j + 1 < out.len() {
            let (z0, z1) = self.pair();
            out[j] = z0;
            out[j + 1] = z1;
            j += 2;
        }
        if j < out.len() {
            out[j] = self.pair().0;
        }
    }

    /// Private generator for one `(step, cell)` site, for samplers that
    /// consume a variable number of random words.
    #[inline]
    pub fn cell_rng(&self, step: u64, cell: i64) -> Xoshiro256PlusPlus {
        let cell = (cell + self.cell_offset) as u64;
        Xoshiro256PlusPlus::seed_from_u64(mix(mix(self.key ^ step) ^ cell))
    }

    /// Box–Muller on two 53-bit uniforms; always consumes exactly two words
    /// of 64 bits so that cell pairs stay addressable.
    #[inline]
    fn pair(&mut self) -> (f64, f64) {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * SCALE;
        let u2 = (b >> 11) as f64 * SCALE;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }
}

/// Cell-wise white-noise increments over one time step: i.i.d. centred
/// Gaussians with variance `dt / dx`, one per cell of the window starting at
/// absolute lattice index `first_cell`.
pub fn white_noise_increment(
    noise: &NoiseStream,
    step: u64,
    first_cell: i64,
    len: usize,
    dx: f64,
    dt: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; len];
    noise.generator().standard_normals(step, first_cell, &mut out);
    let sd = (dt / dx).sqrt();
    out.iter_mut().for_each(|z| *z *= sd);
    out
}

/// Exact transition over time `dt` of the Feller diffusion
/// `dv = sigma * sqrt(v) dB` started at `v`: a Poisson(`lambda*v`) mixture
/// of Gamma(`k`, 1/`lambda`) laws with `lambda = 2 / (sigma² dt)`; mixture
/// index 0 is the atom at zero.
pub fn feller_transition<R: Rng + ?Sized>(v: f64, lambda: f64, rng: &mut R) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let mean = lambda * v;
    let k = match Poisson::new(mean) {
        Ok(p) => p.sample(rng),
        Err(_) => return v,
    };
    if k == 0.0 {
        return 0.0;
    }
    let g: f64 = Gamma::new(k, 1.0).expect("positive shape").sample(rng);
    g / lambda
}
