use super::tape::NodeId;

/// Sentinel for a jet component that does not depend on anything on the tape.
pub(crate) const NO_NODE: NodeId = NodeId::MAX;

/// Which part of a [`DiffValue`] a reverse sweep starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Primal,
    D1,
    D2,
}

impl Component {
    pub(crate) fn index(self) -> usize {
        match self {
            Component::Primal => 0,
            Component::D1 => 1,
            Component::D2 => 2,
        }
    }
}

/// A second-order truncated Taylor jet along one input direction.
///
/// `d1` and `d2` are the first and second directional derivatives of `primal`.
/// Each of the three components optionally refers to a tape node so that the
/// component can itself be differentiated with respect to the tape leaves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffValue {
    pub primal: f64,
    pub d1: f64,
    pub d2: f64,
    pub(crate) nodes: [NodeId; 3],
}

impl DiffValue {
    /// A value with no derivative structure and no tape dependence.
    pub fn constant(x: f64) -> Self {
        Self {
            primal: x,
            d1: 0.0,
            d2: 0.0,
            nodes: [NO_NODE; 3],
        }
    }

    pub fn value(&self, c: Component) -> f64 {
        match c {
            Component::Primal => self.primal,
            Component::D1 => self.d1,
            Component::D2 => self.d2,
        }
    }

    /// Tape node tracking the given component, if it depends on the tape.
    pub fn node(&self, c: Component) -> Option<NodeId> {
        let n = self.nodes[c.index()];
        (n != NO_NODE).then_some(n)
    }

    pub fn is_constant(&self) -> bool {
        self.nodes.iter().all(|&n| n == NO_NODE)
    }

    /// Re-expose one component as a primal-only value.
    ///
    /// Used to build residuals out of derivative quantities: the returned value
    /// keeps the parameter dependence of the chosen component but carries no
    /// input derivatives of its own.
    pub fn component(&self, c: Component) -> DiffValue {
        DiffValue {
            primal: self.value(c),
            d1: 0.0,
            d2: 0.0,
            nodes: [self.nodes[c.index()], NO_NODE, NO_NODE],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.primal.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }
}

impl From<f64> for DiffValue {
    fn from(x: f64) -> Self {
        DiffValue::constant(x)
    }
}
