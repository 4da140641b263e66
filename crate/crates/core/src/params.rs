//! Named parameter tensors, their optimizer groups, and gradient maps.

use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Optimizer group of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamGroup {
    /// Plain trainable tensor, base optimizer group.
    Trainable,
    /// LoRA adapter factor; the only group that receives decoupled weight decay.
    Adapter,
    /// Never updated.
    Frozen,
}

impl ParamGroup {
    pub fn is_trainable(self) -> bool {
        self != ParamGroup::Frozen
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Trainable => "trainable",
            ParamGroup::Adapter => "adapter",
            ParamGroup::Frozen => "frozen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "trainable" => Some(ParamGroup::Trainable),
            "adapter" => Some(ParamGroup::Adapter),
            "frozen" => Some(ParamGroup::Frozen),
            _ => None,
        }
    }
}

/// Receives views that live as long as the borrowed network.
pub type ParamVisitor<'a, 'f, T> = dyn FnMut(&str, ParamGroup, ArrayViewD<'a, T>) + 'f;
pub type ParamVisitorMut<'f, T> = dyn FnMut(&str, ParamGroup, ArrayViewMutD<'_, T>) + 'f;

/// Anything that owns named parameter tensors.
///
/// Both visitors must enumerate the same tensors in the same order.
pub trait Parameterized<T: Scalar> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut ParamVisitor<'a, '_, T>);
    fn visit_params_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, T>);
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat listing of a network's tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRegistry {
    pub params: Vec<ParamInfo>,
}

impl ParamRegistry {
    pub fn of<T: Scalar>(net: &impl Parameterized<T>) -> Self {
        let mut params = Vec::new();
        net.visit_params("", &mut |name, group, view| {
            params.push(ParamInfo {
                name: name.to_string(),
                group,
                shape: view.shape().to_vec(),
            })
        });
        Self { params }
    }

    pub fn count(&self, group: ParamGroup) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(ParamInfo::len)
            .sum()
    }

    /// Number of scalars the optimizer updates (trainable plus adapter).
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.group.is_trainable())
            .map(ParamInfo::len)
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(ParamInfo::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&ParamInfo> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Owned copy of every parameter tensor, keyed by name.
pub fn capture<T: Scalar>(net: &impl Parameterized<T>) -> BTreeMap<String, (ParamGroup, ArrayD<T>)> {
    let mut out = BTreeMap::new();
    net.visit_params("", &mut |name, group, view| {
        out.insert(name.to_string(), (group, view.to_owned()));
    });
    out
}

/// Gradients of a scalar loss, keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients<T> {
    map: BTreeMap<String, ArrayD<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Self {
            map: BTreeMap::new(),
        }
    }

    /// Adds `grad` into the entry for `name`.
    pub fn accumulate<D: ndarray::Dimension>(&mut self, name: String, grad: ndarray::Array<T, D>) {
        let grad = grad.into_dyn();
        match self.map.get_mut(&name) {
            Some(existing) => *existing += &grad,
            None => {
                self.map.insert(name, grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.map.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.map.values_mut() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|g| g.iter().all(|x| x.is_finite()))
    }

    pub fn zeros_like(registry: &ParamRegistry) -> Self {
        let mut g = Self::new();
        for p in registry.params.iter().filter(|p| p.group.is_trainable()) {
            g.map.insert(p.name.clone(), ArrayD::zeros(IxDyn(&p.shape)));
        }
        g
    }
}
