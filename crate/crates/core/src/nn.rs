//! Binding named model parameters onto a gradient tape.

use std::cell::RefCell;

use crate::tensor::{BatchStats, Graph, ParamMap, Scalar, Tensor, Var, VarMap};

/// Whether batch normalisation uses batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Trainable weight or non-trainable buffer (running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Trainable,
    Buffer,
}

/// Types that own named parameter tensors.
pub trait Parameterized<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, Role));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, Role));

    /// All tensors with the given role, keyed by dotted name.
    fn named(&self, role: Role) -> ParamMap<T> {
        let mut out = ParamMap::new();
        self.visit("", &mut |name, t, r| {
            if r == role {
                out.insert(name.to_string(), t.clone());
            }
        });
        out
    }

    /// Every tensor in visiting order.
    fn all_named(&self) -> Vec<(String, Tensor<T>, Role)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t, r| out.push((name.to_string(), t.clone(), r)));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t, r| {
            if r == Role::Trainable {
                n += t.numel();
            }
        });
        n
    }
}

/// Joins a dotted parameter path.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// One forward pass: a graph plus the rule for turning parameters into
/// variables.
pub struct Session<T: Scalar> {
    graph: Graph<T>,
    mode: Mode,
    trainable: bool,
    preset: Option<VarMap<T>>,
    bound: RefCell<VarMap<T>>,
    bn_updates: RefCell<Vec<(String, BatchStats<T>)>>,
}

impl<T: Scalar> Session<T> {
    /// Parameters become constants; nothing is differentiated.
    pub fn inference(mode: Mode) -> Self {
        Self::build(Graph::new(), mode, false, None)
    }

    /// Parameters become differentiable leaves.
    pub fn training(mode: Mode) -> Self {
        Self::build(Graph::new(), mode, true, None)
    }

    /// Parameters found in `vars` are used as given; anything else is bound
    /// as a constant.
    pub fn with_vars(graph: &Graph<T>, vars: &VarMap<T>, mode: Mode) -> Self {
        Self::build(graph.clone(), mode, false, Some(vars.clone()))
    }

    fn build(graph: Graph<T>, mode: Mode, trainable: bool, preset: Option<VarMap<T>>) -> Self {
        Session {
            graph,
            mode,
            trainable,
            preset,
            bound: RefCell::new(VarMap::new()),
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input(&self, t: Tensor<T>) -> Var<T> {
        self.graph.constant(t)
    }

    /// Variable for the named parameter, created once per session.
    pub fn bind(&self, name: &str, value: &Tensor<T>) -> Var<T> {
        if let Some(v) = self.preset.as_ref().and_then(|p| p.get(name)) {
            return v.clone();
        }
        if let Some(v) = self.bound.borrow().get(name) {
            return v.clone();
        }
        let v = if self.trainable {
            self.graph.param(value.clone())
        } else {
            self.graph.constant(value.clone())
        };
        self.bound.borrow_mut().insert(name.to_string(), v.clone());
        v
    }

    /// Trainable variables bound so far.
    pub fn bound_params(&self) -> VarMap<T> {
        self.bound
            .borrow()
            .iter()
            .filter(|(_, v)| v.requires_grad())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub(crate) fn record_batch_stats(&self, name: String, stats: BatchStats<T>) {
        self.bn_updates.borrow_mut().push((name, stats));
    }

    /// Batch statistics observed by every train-mode normalisation, keyed by
    /// the normalisation's parameter prefix.
    pub fn take_batch_stats(&self) -> Vec<(String, BatchStats<T>)> {
        std::mem::take(&mut self.bn_updates.borrow_mut())
    }
}

/// Folds observed batch statistics into the matching running buffers:
/// `running ← (1 − momentum)·running + momentum·batch`.
pub fn fold_batch_stats<T: Scalar, M: Parameterized<T> + ?Sized>(
    model: &mut M,
    stats: &[(String, BatchStats<T>)],
    momentum: f64,
) {
    let m = T::of(momentum);
    let keep = T::one() - m;
    for (prefix, s) in stats {
        let (mean_name, var_name) = (join(prefix, "running_mean"), join(prefix, "running_var"));
        model.visit_mut("", &mut |name, t, _| {
            let batch = if name == mean_name {
                &s.mean
            } else if name == var_name {
                &s.var
            } else {
                return;
            };
            for (r, &b) in t.data_mut().iter_mut().zip(batch) {
                *r = keep * *r + m * b;
            }
        });
    }
}
