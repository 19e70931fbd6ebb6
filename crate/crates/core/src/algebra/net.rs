//! Tiny polynomial-activation networks as explicit expression trees, so
//! their zero-error equations can be expanded symbolically in the weights.

use serde::{Deserialize, Serialize};

use crate::algebra::mpoly::MPoly;
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, NetworkSpec};
use crate::poly::horner;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetExpr {
    Input(usize),
    Weight(usize),
    Const(f64),
    Sum(Vec<NetExpr>),
    Mul(Box<NetExpr>, Box<NetExpr>),
    /// Polynomial activation with coefficients lowest degree first.
    Act(Vec<f64>, Box<NetExpr>),
}

impl NetExpr {
    fn weighted(w: usize, e: NetExpr) -> NetExpr {
        NetExpr::Mul(Box::new(NetExpr::Weight(w)), Box::new(e))
    }

    fn act(coeffs: &[f64], e: NetExpr) -> NetExpr {
        NetExpr::Act(coeffs.to_vec(), Box::new(e))
    }

    fn depth(&self) -> usize {
        match self {
            NetExpr::Input(_) | NetExpr::Weight(_) | NetExpr::Const(_) => 0,
            NetExpr::Sum(v) => v.iter().map(NetExpr::depth).max().unwrap_or(0),
            NetExpr::Mul(a, b) => a.depth().max(b.depth()),
            NetExpr::Act(_, e) => 1 + e.depth(),
        }
    }

    /// Upper bound on the total degree in the weights.
    fn degree_bound(&self) -> u64 {
        match self {
            NetExpr::Input(_) | NetExpr::Const(_) => 0,
            NetExpr::Weight(_) => 1,
            NetExpr::Sum(v) => v.iter().map(NetExpr::degree_bound).max().unwrap_or(0),
            NetExpr::Mul(a, b) => a.degree_bound() + b.degree_bound(),
            NetExpr::Act(c, e) => (c.len().saturating_sub(1)) as u64 * e.degree_bound(),
        }
    }

    fn eval(&self, w: &[f64], x: &[f64]) -> f64 {
        match self {
            NetExpr::Input(i) => x[*i],
            NetExpr::Weight(i) => w[*i],
            NetExpr::Const(c) => *c,
            NetExpr::Sum(v) => v.iter().map(|e| e.eval(w, x)).sum(),
            NetExpr::Mul(a, b) => a.eval(w, x) * b.eval(w, x),
            NetExpr::Act(c, e) => horner(c, e.eval(w, x)),
        }
    }

    fn expand(&self, nvars: usize, x: &[f64]) -> MPoly {
        match self {
            NetExpr::Input(i) => MPoly::constant(nvars, x[*i]),
            NetExpr::Weight(i) => MPoly::var(nvars, *i),
            NetExpr::Const(c) => MPoly::constant(nvars, *c),
            NetExpr::Sum(v) => v
                .iter()
                .fold(MPoly::zero(nvars), |acc, e| &acc + &e.expand(nvars, x)),
            NetExpr::Mul(a, b) => &a.expand(nvars, x) * &b.expand(nvars, x),
            NetExpr::Act(c, e) => e.expand(nvars, x).compose(c),
        }
    }
}

/// A scalar-output network whose every nonlinearity is a polynomial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyPolyNet {
    pub inputs: usize,
    /// Variable names, in the order of the weight vector.
    pub weights: Vec<String>,
    pub output: NetExpr,
    /// Variables of the first (innermost) layer.
    pub first_layer: Vec<usize>,
}

impl TinyPolyNet {
    /// `f(x) = P(w1 * x)` or, with `bias`, `f(x) = P(w1 * x + w2)`.
    pub fn single_unit(activation: &[f64], bias: bool) -> Self {
        let mut sum = vec![NetExpr::weighted(0, NetExpr::Input(0))];
        let mut weights = vec!["w1".to_string()];
        if bias {
            sum.push(NetExpr::Weight(1));
            weights.push("w2".into());
        }
        let first_layer = (0..weights.len()).collect();
        TinyPolyNet {
            inputs: 1,
            weights,
            output: NetExpr::act(activation, NetExpr::Sum(sum)),
            first_layer,
        }
    }

    /// Three-node binary-tree network on four inputs with one unit per
    /// node and a shared kernel on the two leaves:
    /// `P(W1 P(w1 x1 + w2 x2 + w3) + W2 P(w1 x3 + w2 x4 + w3) + W3)`.
    pub fn three_node(activation: &[f64]) -> Self {
        let leaf = |a: usize, b: usize| {
            NetExpr::act(
                activation,
                NetExpr::Sum(vec![
                    NetExpr::weighted(0, NetExpr::Input(a)),
                    NetExpr::weighted(1, NetExpr::Input(b)),
                    NetExpr::Weight(2),
                ]),
            )
        };
        let top = NetExpr::Sum(vec![
            NetExpr::weighted(3, leaf(0, 1)),
            NetExpr::weighted(4, leaf(2, 3)),
            NetExpr::Weight(5),
        ]);
        TinyPolyNet {
            inputs: 4,
            weights: ["w1", "w2", "w3", "W1", "W2", "W3"].iter().map(|s| s.to_string()).collect(),
            output: NetExpr::act(activation, top),
            first_layer: vec![0, 1, 2],
        }
    }

    /// Converts a dense-only spec with polynomial activations and a single
    /// output. Variables follow the snapshot order of trainable arrays, so
    /// `WeightSnapshot::flatten_layers(None)` yields the variable values.
    pub fn from_network_spec(spec: &NetworkSpec) -> Result<Self> {
        spec.layer_shapes()?;
        if spec.input_shape.len() != 1 || spec.output_len()? != 1 {
            return Err(Error::InvalidSpec(
                "symbolic expansion needs vector input and a single output".into(),
            ));
        }
        let mut units: Vec<NetExpr> = (0..spec.input_shape[0]).map(NetExpr::Input).collect();
        let mut weights = Vec::new();
        let mut first_layer = Vec::new();
        let mut seen_dense = false;
        for (li, layer) in spec.layers.iter().enumerate() {
            match layer {
                Layer::Dense {
                    inputs,
                    outputs,
                    bias,
                } => {
                    let w0 = weights.len();
                    for o in 0..*outputs {
                        for i in 0..*inputs {
                            weights.push(format!("{li}.weight[{o},{i}]"));
                        }
                    }
                    let b0 = weights.len();
                    if *bias {
                        for o in 0..*outputs {
                            weights.push(format!("{li}.bias[{o}]"));
                        }
                    }
                    if !seen_dense {
                        first_layer = (w0..weights.len()).collect();
                        seen_dense = true;
                    }
                    units = (0..*outputs)
                        .map(|o| {
                            let mut terms: Vec<NetExpr> = units
                                .iter()
                                .enumerate()
                                .map(|(i, u)| NetExpr::weighted(w0 + o * inputs + i, u.clone()))
                                .collect();
                            if *bias {
                                terms.push(NetExpr::Weight(b0 + o));
                            }
                            NetExpr::Sum(terms)
                        })
                        .collect();
                }
                Layer::Activation {
                    activation: Activation::Polynomial { coefficients },
                } => {
                    units = units.into_iter().map(|u| NetExpr::act(coefficients, u)).collect();
                }
                other => {
                    return Err(Error::InvalidSpec(format!(
                        "layer {li} ({other:?}) cannot be expanded symbolically"
                    )))
                }
            }
        }
        Ok(TinyPolyNet {
            inputs: spec.input_shape[0],
            weights,
            output: units.pop().expect("single output"),
            first_layer,
        })
    }

    pub fn num_weights(&self) -> usize {
        self.weights.len()
    }

    /// Number of nested activations on the deepest path.
    pub fn depth(&self) -> usize {
        self.output.depth()
    }

    pub fn degree_bound(&self) -> u64 {
        self.output.degree_bound()
    }

    pub fn eval(&self, weights: &[f64], x: &[f64]) -> f64 {
        self.output.eval(weights, x)
    }

    /// `f(x)` expanded as a polynomial in the weights.
    pub fn expand(&self, x: &[f64]) -> MPoly {
        self.output.expand(self.weights.len(), x)
    }
}
