use std::fmt;
use std::str::FromStr;

use super::arch::ArchitectureSpec;
use super::checkpoint::{Metadata, WeightCheckpoint};
use super::mha::MhaWeights;
use crate::rng::{self, stream, Rng};
use crate::{Error, Result};

/// Initialization schemes for affine layers. BN layers always start at
/// gamma = 1, beta = 0 with reset running statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// He-uniform weights `U(+-sqrt(6/fan_in))`, bias `U(+-1/sqrt(fan_in))`.
    Kaiming,
    /// He-uniform weights, zero bias.
    KaimingZeroBias,
    /// Glorot-uniform weights `U(+-sqrt(6/(fan_in+fan_out)))`, zero bias.
    Xavier,
    /// Weights and biases `N(0, sigma^2)`.
    Normal(f64),
    /// Weights and biases `U(-a, a)`.
    Uniform(f64),
}

impl FromStr for InitScheme {
    type Err = Error;

    /// `kaiming`, `kaiming_zero_bias`, `xavier`, `normal:<sigma>`, `uniform:<a>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let number = |a: Option<&str>| -> Result<f64> {
            let a = a.ok_or_else(|| Error::Config(format!("init scheme `{name}` needs a parameter")))?;
            let v: f64 = a
                .parse()
                .map_err(|_| Error::Config(format!("bad init parameter `{a}`")))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("init parameter must be positive, got {v}")));
            }
            Ok(v)
        };
        match (name, arg) {
            ("kaiming", None) => Ok(InitScheme::Kaiming),
            ("kaiming_zero_bias", None) => Ok(InitScheme::KaimingZeroBias),
            ("xavier", None) => Ok(InitScheme::Xavier),
            ("normal", a) => Ok(InitScheme::Normal(number(a)?)),
            ("uniform", a) => Ok(InitScheme::Uniform(number(a)?)),
            _ => Err(Error::Config(format!("unknown init scheme `{s}`"))),
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitScheme::Kaiming => f.write_str("kaiming"),
            InitScheme::KaimingZeroBias => f.write_str("kaiming_zero_bias"),
            InitScheme::Xavier => f.write_str("xavier"),
            InitScheme::Normal(s) => write!(f, "normal:{s}"),
            InitScheme::Uniform(a) => write!(f, "uniform:{a}"),
        }
    }
}

type Draw = Box<dyn Fn(&mut Rng) -> f32>;

fn symmetric(rng: &mut Rng, bound: f64) -> f32 {
    ((2.0 * rng::uniform(rng) - 1.0) * bound) as f32
}

/// Deterministic initialization for `(arch, scheme, seed)`.
pub fn init_weights(arch: &ArchitectureSpec, scheme: InitScheme, seed: u64) -> WeightCheckpoint {
    let mut rng = rng::split(seed, stream::INIT);
    let mut ckpt = WeightCheckpoint::zeros(arch);
    for dense in &mut ckpt.dense {
        let fan_in = dense.in_dim() as f64;
        let fan_out = dense.out_dim() as f64;
        let (w_draw, b_draw): (Draw, Draw) = match scheme {
            InitScheme::Kaiming => (
                Box::new(move |r| symmetric(r, (6.0 / fan_in).sqrt())),
                Box::new(move |r| symmetric(r, 1.0 / fan_in.sqrt())),
            ),
            InitScheme::KaimingZeroBias => (
                Box::new(move |r| symmetric(r, (6.0 / fan_in).sqrt())),
                Box::new(|_| 0.0),
            ),
            InitScheme::Xavier => (
                Box::new(move |r| symmetric(r, (6.0 / (fan_in + fan_out)).sqrt())),
                Box::new(|_| 0.0),
            ),
            InitScheme::Normal(sigma) => (
                Box::new(move |r| (rng::normal(r) * sigma) as f32),
                Box::new(move |r| (rng::normal(r) * sigma) as f32),
            ),
            InitScheme::Uniform(a) => (
                Box::new(move |r| symmetric(r, a)),
                Box::new(move |r| symmetric(r, a)),
            ),
        };
        dense.weight.mapv_inplace(|_| w_draw(&mut rng));
        dense.bias.mapv_inplace(|_| b_draw(&mut rng));
    }
    if let Some(g) = arch.attention() {
        ckpt.attention = Some(MhaWeights::random(g, &mut rng));
    }
    ckpt.meta = Metadata {
        seed,
        metric: f64::NAN,
    };
    ckpt
}
