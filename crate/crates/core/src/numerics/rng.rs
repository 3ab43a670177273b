use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Counter-based random stream.
///
/// The state is the triple `(seed, stream, counter)`; draws are a pure
/// function of it, so streams can be split per layer or per step and handed
/// to any worker without changing the numbers produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    counter: u128,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn counter(&self) -> u128 {
        self.counter
    }

    /// Independent child stream keyed by `label`. Does not advance `self`.
    pub fn split(&self, label: u64) -> Self {
        let stream = splitmix64(self.stream ^ splitmix64(label.wrapping_add(0x5EED)));
        Self {
            seed: self.seed,
            stream,
            counter: 0,
        }
    }

    /// Child stream keyed by a string label (layer paths, phases).
    pub fn split_str(&self, label: &str) -> Self {
        // FNV-1a, stable across platforms and releases.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.split(h)
    }

    fn with_rng<R>(&mut self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.counter);
        let out = f(&mut rng);
        self.counter = rng.get_word_pos();
        out
    }

    pub fn uniform(&mut self) -> f64 {
        self.with_rng(|r| r.gen::<f64>())
    }

    pub fn normal(&mut self) -> f64 {
        self.with_rng(|r| r.sample(StandardNormal))
    }

    pub fn fill_normal(&mut self, n: usize) -> Vec<f64> {
        self.with_rng(|r| (0..n).map(|_| r.sample(StandardNormal)).collect())
    }

    pub fn fill_uniform(&mut self, n: usize) -> Vec<f64> {
        self.with_rng(|r| (0..n).map(|_| r.gen::<f64>()).collect())
    }

    /// Keep mask with `P(keep) = keep_prob`.
    pub fn bernoulli_mask(&mut self, n: usize, keep_prob: f64) -> Vec<bool> {
        self.with_rng(|r| (0..n).map(|_| r.gen::<f64>() < keep_prob).collect())
    }

    /// Uniformly random permutation of `0..n` (Fisher-Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.with_rng(|r| {
            for i in (1..n).rev() {
                let j = r.gen_range(0..=i);
                idx.swap(i, j);
            }
        });
        idx
    }
}
