use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Maps the gradient of a node's output to gradients of its parents.
/// `needs[i]` says whether parent `i` wants a gradient at all.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    op: &'static str,
}

#[derive(Default)]
struct Tape {
    nodes: Vec<Node>,
    grads: HashMap<usize, Tensor>,
    params: Vec<(String, usize)>,
    param_ids: HashMap<String, usize>,
}

/// A single-threaded computation tape.
pub struct Graph {
    tape: RefCell<Tape>,
    recording: bool,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tape = self.graph.tape.borrow();
        let node = &tape.nodes[self.id];
        write!(f, "Var#{}({}, {:?})", self.id, node.op, node.value.shape())
    }
}

impl Graph {
    /// A graph that records backward rules for anything depending on a
    /// gradient-requiring leaf.
    pub fn new() -> Self {
        Self {
            tape: RefCell::new(Tape::default()),
            recording: true,
        }
    }

    /// A graph that never records backward rules or gradient state.
    pub fn inference() -> Self {
        Self {
            tape: RefCell::new(Tape::default()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    fn push_node(&self, node: Node) -> Var<'_> {
        let mut tape = self.tape.borrow_mut();
        tape.nodes.push(node);
        Var {
            graph: self,
            id: tape.nodes.len() - 1,
        }
    }

    /// A constant: never receives a gradient.
    pub fn input(&self, value: Tensor) -> Var<'_> {
        self.push_node(Node {
            value: Rc::new(value),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
            op: "input",
        })
    }

    /// A leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push_node(Node {
            value: Rc::new(value),
            requires_grad: self.recording,
            parents: Vec::new(),
            backward: None,
            op: "variable",
        })
    }

    /// Binds a named parameter of `store` into the graph. Repeated requests
    /// for the same name return the same leaf.
    pub fn param<'g>(&'g self, store: &ParamStore, name: &str) -> Result<Var<'g>> {
        if let Some(&id) = self.tape.borrow().param_ids.get(name) {
            return Ok(Var { graph: self, id });
        }
        let tensor = store.get(name)?.clone();
        let v = self.variable(tensor);
        let mut tape = self.tape.borrow_mut();
        tape.params.push((name.to_string(), v.id));
        tape.param_ids.insert(name.to_string(), v.id);
        Ok(v)
    }

    pub(crate) fn record(
        &self,
        op: &'static str,
        value: impl Into<Rc<Tensor>>,
        parents: &[Var<'_>],
        backward: impl Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    ) -> Var<'_> {
        let (requires_grad, ids) = {
            let tape = self.tape.borrow();
            let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
            let rg = self.recording && ids.iter().any(|&i| tape.nodes[i].requires_grad);
            (rg, ids)
        };
        let (parents, backward): (Vec<usize>, Option<BackwardFn>) = if requires_grad {
            (ids, Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        self.push_node(Node {
            value: value.into(),
            requires_grad,
            parents,
            backward,
            op,
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.tape.borrow().nodes[id].value.clone()
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.tape.borrow().nodes[id].requires_grad
    }

    /// Number of nodes carrying a backward rule.
    pub fn recorded_ops(&self) -> usize {
        self.tape
            .borrow()
            .nodes
            .iter()
            .filter(|n| n.backward.is_some())
            .count()
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Names of the operations on the tape, in creation order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.tape.borrow().nodes.iter().map(|n| n.op).collect()
    }

    /// Back-propagates from a scalar output, accumulating into leaf
    /// gradients. Calling it again adds to the existing gradients.
    pub fn backward(&self, output: Var<'_>) -> Result<()> {
        let tape = self.tape.borrow();
        let out = &tape.nodes[output.id];
        if out.value.len() != 1 {
            return Err(AutodiffError::NotScalar(out.value.shape().to_vec()));
        }
        if !out.requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Tensor>> = Vec::new();
        pending.resize_with(output.id + 1, || None);
        pending[output.id] = Some(Tensor::full(out.value.shape().to_vec(), 1.0));
        let mut leaf_grads: Vec<(usize, Tensor)> = Vec::new();

        for id in (0..=output.id).rev() {
            let Some(grad) = pending[id].take() else {
                continue;
            };
            let node = &tape.nodes[id];
            match &node.backward {
                Some(f) => {
                    let needs: Vec<bool> = node
                        .parents
                        .iter()
                        .map(|&p| tape.nodes[p].requires_grad)
                        .collect();
                    let parent_grads = f(&grad, &needs);
                    debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
                    for (&p, g) in node.parents.iter().zip(parent_grads) {
                        let Some(g) = g else { continue };
                        debug_assert_eq!(g.shape(), tape.nodes[p].value.shape(), "{} -> parent", node.op);
                        match &mut pending[p] {
                            Some(acc) => acc.add_assign(&g),
                            slot => *slot = Some(g),
                        }
                    }
                }
                None if node.requires_grad => leaf_grads.push((id, grad)),
                None => {}
            }
        }
        drop(tape);
        let mut tape = self.tape.borrow_mut();
        for (id, g) in leaf_grads {
            match tape.grads.get_mut(&id) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    tape.grads.insert(id, g);
                }
            }
        }
        Ok(())
    }

    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        self.tape.borrow().grads.get(&v.id).cloned()
    }

    pub fn zero_grad(&self) {
        self.tape.borrow_mut().grads.clear();
    }

    /// Gradients of every parameter bound with [`Graph::param`], in binding
    /// order. Parameters that did not influence the output get zeros.
    pub fn param_grads(&self) -> Vec<(String, Tensor)> {
        let tape = self.tape.borrow();
        tape.params
            .iter()
            .map(|(name, id)| {
                let g = tape
                    .grads
                    .get(id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.nodes[*id].value.shape().to_vec()));
                (name.clone(), g)
            })
            .collect()
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    /// Borrow of the value; keep it short-lived while building the graph.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        let tape: Ref<'_, Tape> = self.graph.tape.borrow();
        f(&tape.nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    pub fn item(&self) -> Result<f64> {
        self.with_value(|t| t.item())
    }
}
