use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Uniform on `[-b, b]` with `b = sqrt(6 / fan_in)`. When `fan_in` is
    /// `None` it is inferred from the shape: all axes but the last for
    /// filters and matrices, the single extent for vectors.
    KaimingUniform { fan_in: Option<usize> },
    Zeros,
    Ones,
    Normal { mean: f64, std: f64 },
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kaiming-uniform" => Ok(Self::KaimingUniform { fan_in: None }),
            "zeros" => Ok(Self::Zeros),
            "ones" => Ok(Self::Ones),
            "normal" => Ok(Self::Normal { mean: 0.0, std: 1.0 }),
            other => Err(Error::invalid(format!("unknown init scheme `{other}`"))),
        }
    }
}

fn inferred_fan_in(shape: &[usize]) -> usize {
    match shape {
        [] => 1,
        [n] => *n,
        [.., _] => shape[..shape.len() - 1].iter().product(),
    }
}

pub fn seeded_init<T: Scalar>(shape: &[usize], scheme: InitScheme, seed: u64) -> Result<Tensor<T>> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape("seeded_init", format!("invalid shape {shape:?}")));
    }
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<T> = match scheme {
        InitScheme::Zeros => vec![T::zero(); n],
        InitScheme::Ones => vec![T::one(); n],
        InitScheme::KaimingUniform { fan_in } => {
            let fan_in = fan_in.unwrap_or_else(|| inferred_fan_in(shape));
            if fan_in == 0 {
                return Err(Error::invalid("kaiming-uniform needs fan_in > 0"));
            }
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..n)
                .map(|_| T::lit(rng.random_range(-bound..=bound)))
                .collect()
        }
        InitScheme::Normal { mean, std } => {
            let dist = Normal::new(mean, std)
                .map_err(|e| Error::invalid(format!("normal({mean}, {std}): {e}")))?;
            (0..n).map(|_| T::lit(dist.sample(&mut rng))).collect()
        }
    };
    Ok(Tensor::from_parts(shape.to_vec(), data))
}

/// Derives an independent stream seed from a run seed and a purpose tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then one splitmix64 round to spread the bits
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
