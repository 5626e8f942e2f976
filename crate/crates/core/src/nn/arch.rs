use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Identity,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
            Activation::Identity => "identity",
        })
    }
}

/// Geometry of the toy multi-head attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionGeometry {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
}

impl AttentionGeometry {
    pub fn new(num_heads: usize, head_dim: usize) -> Self {
        Self {
            embed_dim: num_heads * head_dim,
            num_heads,
            head_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        3 * self.num_heads * self.head_dim * self.embed_dim + self.embed_dim * self.embed_dim
    }

    fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.head_dim == 0 {
            return Err(Error::Config("attention needs at least one head of width >= 1".into()));
        }
        if self.embed_dim != self.num_heads * self.head_dim {
            return Err(Error::Config(format!(
                "attention embed_dim {} != num_heads {} x head_dim {}",
                self.embed_dim, self.num_heads, self.head_dim
            )));
        }
        Ok(())
    }
}

/// Declarative description of a small network: an MLP (optionally with
/// batch norm after selected hidden affine layers) and an optional toy
/// attention block carried alongside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    layer_dims: Vec<usize>,
    activation: Activation,
    bn_layers: Vec<bool>,
    attention: Option<AttentionGeometry>,
}

impl ArchitectureSpec {
    pub fn new(
        layer_dims: Vec<usize>,
        activation: Activation,
        bn_layers: Vec<bool>,
        attention: Option<AttentionGeometry>,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config("layer_dims needs an input and an output width".into()));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if bn_layers.len() != layer_dims.len() - 2 {
            return Err(Error::Config(format!(
                "bn_layers has {} flags for {} hidden layers",
                bn_layers.len(),
                layer_dims.len() - 2
            )));
        }
        if let Some(g) = &attention {
            g.validate()?;
        }
        Ok(Self {
            layer_dims,
            activation,
            bn_layers,
            attention,
        })
    }

    /// Plain MLP without batch norm or attention.
    pub fn mlp(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        let hidden = layer_dims.len().saturating_sub(2);
        Self::new(layer_dims.to_vec(), activation, vec![false; hidden], None)
    }

    /// MLP with batch norm after every hidden affine layer.
    pub fn bn_mlp(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        let hidden = layer_dims.len().saturating_sub(2);
        Self::new(layer_dims.to_vec(), activation, vec![true; hidden], None)
    }

    pub fn with_attention(mut self, geometry: AttentionGeometry) -> Result<Self> {
        geometry.validate()?;
        self.attention = Some(geometry);
        Ok(self)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn bn_layers(&self) -> &[bool] {
        &self.bn_layers
    }

    pub fn attention(&self) -> Option<AttentionGeometry> {
        self.attention
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Number of affine layers.
    pub fn num_dense(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// Widths of the hidden layers (the permutable interfaces).
    pub fn hidden_dims(&self) -> &[usize] {
        &self.layer_dims[1..self.layer_dims.len() - 1]
    }

    pub fn has_bn(&self) -> bool {
        self.bn_layers.iter().any(|&b| b)
    }

    /// Length of the flat parameter vector.
    pub fn param_count(&self) -> usize {
        let dense: usize = self
            .layer_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        let bn: usize = self
            .hidden_dims()
            .iter()
            .zip(&self.bn_layers)
            .filter(|(_, &b)| b)
            .map(|(&d, _)| 2 * d)
            .sum();
        dense + bn + self.attention.map_or(0, |g| g.param_count())
    }

    /// Key-value text block used in checkpoint headers.
    pub fn descriptor(&self) -> String {
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(",");
        let attention = match self.attention {
            None => "none".to_string(),
            Some(g) => format!("{},{},{}", g.embed_dim, g.num_heads, g.head_dim),
        };
        format!(
            "layer_dims={}\nactivation={}\nbn_layers={}\nattention={}\n",
            join(&mut self.layer_dims.iter().map(|d| d.to_string())),
            self.activation,
            join(&mut self.bn_layers.iter().map(|&b| if b { "1" } else { "0" }.to_string())),
            attention
        )
    }

    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut dims = None;
        let mut activation = None;
        let mut bn = None;
        let mut attention = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed descriptor line `{line}`")))?;
            let value = value.trim();
            match key.trim() {
                "layer_dims" => dims = Some(parse_list(value)?),
                "activation" => activation = Some(value.parse()?),
                "bn_layers" => {
                    bn = Some(
                        parse_list(value)?
                            .into_iter()
                            .map(|v| match v {
                                0 => Ok(false),
                                1 => Ok(true),
                                _ => Err(Error::Config(format!("bn flag must be 0 or 1, got {v}"))),
                            })
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "attention" => {
                    attention = Some(if value == "none" {
                        None
                    } else {
                        match parse_list(value)?.as_slice() {
                            &[embed_dim, num_heads, head_dim] => Some(AttentionGeometry {
                                embed_dim,
                                num_heads,
                                head_dim,
                            }),
                            _ => return Err(Error::Config(format!("bad attention geometry `{value}`"))),
                        }
                    })
                }
                other => return Err(Error::Config(format!("unknown descriptor key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Config(format!("descriptor is missing `{k}`"));
        Self::new(
            dims.ok_or_else(|| missing("layer_dims"))?,
            activation.ok_or_else(|| missing("activation"))?,
            bn.ok_or_else(|| missing("bn_layers"))?,
            attention.ok_or_else(|| missing("attention"))?,
        )
    }
}

fn parse_list(value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("`{v}` is not a non-negative integer")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts_of_reference_architectures() {
        assert_eq!(ArchitectureSpec::mlp(&[4, 16, 3], Activation::Relu).unwrap().param_count(), 131);
        assert_eq!(
            ArchitectureSpec::mlp(&[784, 32, 32, 10], Activation::Relu).unwrap().param_count(),
            26_506
        );
        assert_eq!(
            ArchitectureSpec::mlp(&[784, 128, 128, 10], Activation::Relu).unwrap().param_count(),
            118_282
        );
        // gamma and beta for each of the two hidden layers
        assert_eq!(
            ArchitectureSpec::bn_mlp(&[4, 16, 3], Activation::Relu).unwrap().param_count(),
            131 + 32
        );
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(ArchitectureSpec::mlp(&[4], Activation::Relu).is_err());
        assert!(ArchitectureSpec::mlp(&[4, 0, 3], Activation::Relu).is_err());
        assert!(ArchitectureSpec::new(vec![4, 8, 3], Activation::Relu, vec![], None).is_err());
        let bad = AttentionGeometry { embed_dim: 10, num_heads: 2, head_dim: 4 };
        assert!(ArchitectureSpec::mlp(&[4, 3], Activation::Relu).unwrap().with_attention(bad).is_err());
        assert!("tanh".parse::<Activation>().is_err());
    }

    #[test]
    fn descriptor_round_trip() {
        let arch = ArchitectureSpec::new(
            vec![5, 7, 6, 2],
            Activation::Gelu,
            vec![true, false],
            Some(AttentionGeometry::new(4, 8)),
        )
        .unwrap();
        assert_eq!(ArchitectureSpec::from_descriptor(&arch.descriptor()).unwrap(), arch);
        let plain = ArchitectureSpec::mlp(&[3, 2], Activation::Identity).unwrap();
        assert_eq!(ArchitectureSpec::from_descriptor(&plain.descriptor()).unwrap(), plain);
        assert!(ArchitectureSpec::from_descriptor("layer_dims=3,2\nactivation=relu\nbn_layers=\nattention=none\nextra=1").is_err());
    }
}
