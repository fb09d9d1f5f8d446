use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::NetError;

/// Shape of a flattened parameter vector.
///
/// Per layer `k` the flat vector holds `W^k` row-major, then `b^k`, then the
/// activation scales `β^k` for hidden layers when the activation has them.
/// Named extra coefficients follow all layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    dims: Vec<usize>,
    scales: bool,
    extras: Vec<String>,
    offsets: Vec<LayerOffsets>,
    len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerOffsets {
    weights: usize,
    bias: usize,
    beta: Option<usize>,
}

impl Layout {
    /// `dims` = `[N_0, N_1, ..., N_D]`.
    pub fn new(dims: &[usize], scales: bool, extras: &[String]) -> Self {
        assert!(dims.len() >= 2, "a network needs at least one affine layer");
        let depth = dims.len() - 1;
        let mut offsets = Vec::with_capacity(depth);
        let mut at = 0;
        for k in 0..depth {
            let (rows, cols) = (dims[k + 1], dims[k]);
            let weights = at;
            at += rows * cols;
            let bias = at;
            at += rows;
            let beta = if scales && k + 1 < depth {
                let b = at;
                at += rows;
                Some(b)
            } else {
                None
            };
            offsets.push(LayerOffsets { weights, bias, beta });
        }
        let len = at + extras.len();
        Layout {
            dims: dims.to_vec(),
            scales,
            extras: extras.to_vec(),
            offsets,
            len,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of affine layers `D`.
    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn has_scales(&self) -> bool {
        self.scales
    }

    pub fn extras(&self) -> &[String] {
        &self.extras
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Flat index of `W^k[i][j]` (layers counted from zero).
    pub fn weight(&self, k: usize, i: usize, j: usize) -> usize {
        self.offsets[k].weights + i * self.dims[k] + j
    }

    pub fn bias(&self, k: usize, i: usize) -> usize {
        self.offsets[k].bias + i
    }

    pub fn beta(&self, k: usize, i: usize) -> Option<usize> {
        self.offsets[k].beta.map(|b| b + i)
    }

    pub fn extra(&self, name: &str) -> Option<usize> {
        let base = self.len - self.extras.len();
        self.extras.iter().position(|e| e == name).map(|p| base + p)
    }

    /// Which parameter class each flat index belongs to.
    pub fn classify(&self, index: usize) -> ParamClass {
        for (k, off) in self.offsets.iter().enumerate() {
            let rows = self.dims[k + 1];
            if index >= off.weights && index < off.bias {
                let r = index - off.weights;
                return ParamClass::Weight { layer: k, row: r / self.dims[k], col: r % self.dims[k] };
            }
            if index >= off.bias && index < off.bias + rows {
                return ParamClass::Bias { layer: k, row: index - off.bias };
            }
            if let Some(b) = off.beta {
                if index >= b && index < b + rows {
                    return ParamClass::Beta { layer: k, neuron: index - b };
                }
            }
        }
        ParamClass::Extra(index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamClass {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
    Beta { layer: usize, neuron: usize },
    /// Flat index of an extra coefficient.
    Extra(usize),
}

/// All trainable quantities of one network, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layout: Layout,
    values: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.len()];
        ParamSet { layout, values }
    }

    pub fn from_flat(layout: Layout, values: Vec<f64>) -> Result<Self, NetError> {
        if values.len() != layout.len() {
            return Err(NetError::Shape(format!(
                "flat vector has {} entries, layout expects {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(ParamSet { layout, values })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    /// Rows of `W^k`, row-major.
    pub fn weights(&self, k: usize) -> &[f64] {
        let start = self.layout.weight(k, 0, 0);
        let n = self.layout.dims[k] * self.layout.dims[k + 1];
        &self.values[start..start + n]
    }

    pub fn biases(&self, k: usize) -> &[f64] {
        let start = self.layout.bias(k, 0);
        &self.values[start..start + self.layout.dims[k + 1]]
    }

    pub fn betas(&self, k: usize) -> Option<&[f64]> {
        let start = self.layout.beta(k, 0)?;
        Some(&self.values[start..start + self.layout.dims[k + 1]])
    }

    pub fn extra(&self, name: &str) -> Option<f64> {
        self.layout.extra(name).map(|i| self.values[i])
    }

    pub fn set_extra(&mut self, name: &str, value: f64) -> Result<(), NetError> {
        let i = self
            .layout
            .extra(name)
            .ok_or_else(|| NetError::Shape(format!("no extra coefficient `{name}`")))?;
        self.values[i] = value;
        Ok(())
    }

    /// Append a named extra coefficient, returning the widened set.
    pub fn with_extra(self, name: &str, value: f64) -> Self {
        let mut extras = self.layout.extras.clone();
        extras.push(name.to_string());
        let layout = Layout::new(&self.layout.dims, self.layout.scales, &extras);
        let mut values = self.values;
        values.push(value);
        ParamSet { layout, values }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let depth = self.layout.depth();
        let layers = (0..depth)
            .map(|k| {
                let cols = self.layout.dims[k];
                LayerCheckpoint {
                    w: self.weights(k).chunks(cols).map(<[f64]>::to_vec).collect(),
                    b: self.biases(k).to_vec(),
                    beta: self.betas(k).map(<[f64]>::to_vec),
                }
            })
            .collect();
        let extra = self
            .layout
            .extras
            .iter()
            .map(|name| (name.clone(), self.extra(name).unwrap()))
            .collect();
        Checkpoint { layers, extra }
    }

    /// Rebuild a parameter set from a checkpoint, requiring it to match
    /// `layout` exactly.
    pub fn from_checkpoint(layout: Layout, ckpt: &Checkpoint) -> Result<Self, NetError> {
        let depth = layout.depth();
        if ckpt.layers.len() != depth {
            return Err(NetError::Shape(format!(
                "checkpoint has {} layers, expected {depth}",
                ckpt.layers.len()
            )));
        }
        let mut params = ParamSet::zeros(layout);
        for (k, layer) in ckpt.layers.iter().enumerate() {
            let (rows, cols) = (params.layout.dims[k + 1], params.layout.dims[k]);
            if layer.w.len() != rows || layer.w.iter().any(|r| r.len() != cols) {
                return Err(NetError::Shape(format!("layer {k}: W is not {rows}x{cols}")));
            }
            if layer.b.len() != rows {
                return Err(NetError::Shape(format!("layer {k}: b has {} entries, expected {rows}", layer.b.len())));
            }
            for (i, row) in layer.w.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let at = params.layout.weight(k, i, j);
                    params.values[at] = v;
                }
            }
            for (i, &v) in layer.b.iter().enumerate() {
                let at = params.layout.bias(k, i);
                params.values[at] = v;
            }
            match (params.layout.beta(k, 0), &layer.beta) {
                (Some(_), Some(beta)) if beta.len() == rows => {
                    for (i, &v) in beta.iter().enumerate() {
                        let at = params.layout.beta(k, i).unwrap();
                        params.values[at] = v;
                    }
                }
                (None, None) => {}
                (Some(_), Some(beta)) => {
                    return Err(NetError::Shape(format!(
                        "layer {k}: beta has {} entries, expected {rows}",
                        beta.len()
                    )))
                }
                (Some(_), None) => return Err(NetError::Shape(format!("layer {k}: missing beta"))),
                (None, Some(_)) => return Err(NetError::Shape(format!("layer {k}: unexpected beta"))),
            }
        }
        if ckpt.extra.len() != params.layout.extras.len() {
            return Err(NetError::Shape(format!(
                "checkpoint has {} extra coefficients, expected {}",
                ckpt.extra.len(),
                params.layout.extras.len()
            )));
        }
        for (name, &v) in &ckpt.extra {
            params.set_extra(name, v)?;
        }
        Ok(params)
    }
}

/// JSON checkpoint: `{"layers":[{"W":[[..]],"b":[..],"beta":[..]}],"extra":{..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub layers: Vec<LayerCheckpoint>,
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCheckpoint {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}
