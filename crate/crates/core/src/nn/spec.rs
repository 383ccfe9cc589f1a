//! Network architecture descriptions and their canonical text form.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Activation(Activation),
    Softmax,
    /// Reshapes the per-sample (trailing) shape; the batch dimension is kept.
    Reshape(Vec<usize>),
}

/// An ordered stack of layers applied to samples of `input_shape`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let spec = NetworkSpec {
            input_shape,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Flatten, then dense layers through `widths` with `hidden` activations
    /// between them and `head` after the last one.
    pub fn mlp(
        input_shape: Vec<usize>,
        widths: &[usize],
        hidden: Activation,
        head: Head,
        output_shape: Option<Vec<usize>>,
    ) -> Result<Self> {
        let flat: usize = input_shape.iter().product();
        let mut layers = Vec::new();
        if input_shape.len() != 1 {
            layers.push(Layer::Reshape(vec![flat]));
        }
        let mut prev = flat;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Layer::Dense {
                inputs: prev,
                outputs: w,
            });
            prev = w;
            if i + 1 < widths.len() {
                layers.push(Layer::Activation(hidden));
            }
        }
        match head {
            Head::Linear => {}
            Head::Activation(a) => layers.push(Layer::Activation(a)),
            Head::Softmax => layers.push(Layer::Softmax),
        }
        if let Some(shape) = output_shape {
            layers.push(Layer::Reshape(shape));
        }
        NetworkSpec::new(input_shape, layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> Vec<usize> {
        // validate() has already run, so propagation cannot fail
        self.shapes().pop().unwrap_or_default()
    }

    /// Indices of dense layers, the keys of a matching parameter set.
    pub fn dense_layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.layers.iter().enumerate().filter_map(|(i, l)| match l {
            Layer::Dense { inputs, outputs } => Some((i, *inputs, *outputs)),
            _ => None,
        })
    }

    /// Per-sample shape after each layer, starting with the input shape.
    fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = vec![self.input_shape.clone()];
        let mut cur = self.input_shape.clone();
        for layer in &self.layers {
            match layer {
                Layer::Dense { outputs, .. } => cur = vec![*outputs],
                Layer::Reshape(s) => cur = s.clone(),
                _ => {}
            }
            out.push(cur.clone());
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "input shape {:?} must be non-empty with positive dimensions",
                self.input_shape
            )));
        }
        let mut cur = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense { inputs, outputs } => {
                    if *inputs == 0 || *outputs == 0 {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: dense sizes must be positive"
                        )));
                    }
                    if cur != [*inputs] {
                        return Err(Error::LayerShape {
                            layer: i,
                            expected: vec![*inputs],
                            found: cur,
                        });
                    }
                    cur = vec![*outputs];
                }
                Layer::Activation(_) => {}
                Layer::Softmax => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: softmax must be the final layer"
                        )));
                    }
                    if cur.len() != 1 {
                        return Err(Error::LayerShape {
                            layer: i,
                            expected: vec![cur.iter().product()],
                            found: cur,
                        });
                    }
                }
                Layer::Reshape(s) => {
                    let n: usize = s.iter().product();
                    if s.is_empty() || s.contains(&0) || n != cur.iter().product::<usize>() {
                        return Err(Error::LayerShape {
                            layer: i,
                            expected: s.clone(),
                            found: cur,
                        });
                    }
                    cur = s.clone();
                }
            }
        }
        Ok(())
    }

    /// Canonical text form; [`NetworkSpec::parse`] inverts it exactly.
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut input = None;
        let mut layers = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or_default();
            let nums = |parts: std::str::SplitWhitespace<'_>| -> Result<Vec<usize>> {
                parts
                    .map(|p| {
                        p.parse::<usize>().map_err(|_| {
                            Error::InvalidSpec(format!("line {}: bad number {p:?}", lineno + 1))
                        })
                    })
                    .collect()
            };
            match head {
                "input" => input = Some(nums(parts)?),
                "dense" => {
                    let n = nums(parts)?;
                    if n.len() != 2 {
                        return Err(Error::InvalidSpec(format!(
                            "line {}: dense takes two sizes",
                            lineno + 1
                        )));
                    }
                    layers.push(Layer::Dense {
                        inputs: n[0],
                        outputs: n[1],
                    });
                }
                "relu" => layers.push(Layer::Activation(Activation::Relu)),
                "sigmoid" => layers.push(Layer::Activation(Activation::Sigmoid)),
                "tanh" => layers.push(Layer::Activation(Activation::Tanh)),
                "softmax" => layers.push(Layer::Softmax),
                "reshape" => layers.push(Layer::Reshape(nums(parts)?)),
                other => {
                    return Err(Error::InvalidSpec(format!(
                        "line {}: unknown layer {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        let input = input.ok_or_else(|| Error::InvalidSpec("missing input line".into()))?;
        NetworkSpec::new(input, layers)
    }
}

/// Final transform of an [`NetworkSpec::mlp`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Linear,
    Activation(Activation),
    Softmax,
}

fn join(dims: &[usize]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input {}", join(&self.input_shape))?;
        for layer in &self.layers {
            match layer {
                Layer::Dense { inputs, outputs } => writeln!(f, "dense {inputs} {outputs}")?,
                Layer::Activation(a) => writeln!(f, "{}", a.name())?,
                Layer::Softmax => writeln!(f, "softmax")?,
                Layer::Reshape(s) => writeln!(f, "reshape {}", join(s))?,
            }
        }
        Ok(())
    }
}
