use std::collections::HashMap;

use super::{AutodiffError, Graph, Tensor, Var};
use crate::Scalar;

/// Gradients of one scalar output, keyed by the parameter they belong to.
#[derive(Clone, Debug)]
pub struct GradResult<T> {
    entries: Vec<(Var, Tensor<T>)>,
}

impl<T: Scalar> GradResult<T> {
    pub fn get(&self, param: Var) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(v, _)| *v == param).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.entries.iter().map(|(v, t)| (*v, t))
    }

    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        self.entries.into_iter().map(|(_, t)| t).collect()
    }

    /// All gradients concatenated in request order.
    pub fn flat(&self) -> Vec<T> {
        self.entries.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }
}

impl<T: Scalar> Graph<T> {
    /// Reverse-mode gradients of scalar `output` with respect to `wrt`, as graph nodes.
    ///
    /// One traversal serves every requested node. Nodes that `output` does not depend on
    /// receive zero gradients. When the graph was built with `create_graph` the returned
    /// nodes can be differentiated again.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        let out_shape = self.shape(output).to_vec();
        if self.value(output).len() != 1 {
            return Err(AutodiffError::NonScalarOutput { shape: out_shape });
        }
        let n = output.0 + 1;
        let mut needs = vec![false; n];
        for w in wrt {
            if w.0 < n && self.nodes[w.0].requires_grad {
                needs[w.0] = true;
            }
        }
        for i in 0..n {
            if !needs[i] && self.nodes[i].parents.iter().any(|p| needs[p.0]) {
                needs[i] = true;
            }
        }

        let saved = self.recording;
        self.recording = self.create_graph;
        let result = self.backward_inner(output, wrt, &needs, out_shape);
        self.recording = saved;
        result
    }

    fn backward_inner(
        &mut self,
        output: Var,
        wrt: &[Var],
        needs: &[bool],
        out_shape: Vec<usize>,
    ) -> Result<Vec<Var>, AutodiffError> {
        let mut adjoint: Vec<Option<Var>> = vec![None; needs.len()];
        if needs[output.0] {
            adjoint[output.0] = Some(self.constant(Tensor::filled(out_shape, T::one())));
        }
        for i in (0..needs.len()).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = adjoint[i] else { continue };
            let parents = self.nodes[i].parents.clone();
            if parents.is_empty() {
                continue;
            }
            let want: Vec<bool> = parents.iter().map(|p| needs[p.0]).collect();
            let contributions = self.vjp(i, g, &want)?;
            for (p, c) in parents.iter().zip(contributions) {
                let Some(c) = c else { continue };
                adjoint[p.0] = Some(match adjoint[p.0] {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }
        wrt.iter()
            .map(|w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let z = Tensor::zeros(self.shape(*w).to_vec());
                    Ok(self.constant(z))
                }
            })
            .collect()
    }

    /// Gradient values of `output` with respect to `wrt`.
    pub fn grad_values(&mut self, output: Var, wrt: &[Var]) -> Result<GradResult<T>, AutodiffError> {
        let grads = self.grad(output, wrt)?;
        Ok(GradResult {
            entries: wrt.iter().zip(grads).map(|(&w, g)| (w, self.value(g).clone())).collect(),
        })
    }

    fn check_retained(&self) -> Result<(), AutodiffError> {
        if !self.create_graph {
            return Err(AutodiffError::GraphNotRetained);
        }
        Ok(())
    }

    fn check_direction(&self, params: &[Var], v: &[Tensor<T>]) -> Result<(), AutodiffError> {
        if params.len() != v.len() {
            return Err(AutodiffError::Contract(format!(
                "direction has {} blocks for {} parameters",
                v.len(),
                params.len()
            )));
        }
        for (&p, vi) in params.iter().zip(v) {
            if self.shape(p) != vi.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "hvp direction",
                    lhs: self.shape(p).to_vec(),
                    rhs: vi.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// `(d^2 output / d outer d inner) v` via double backward, with `v` shaped like `inner`.
    /// Result is shaped like `outer`.
    pub fn mixed_hvp(
        &mut self,
        output: Var,
        outer: &[Var],
        inner: &[Var],
        v: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>, AutodiffError> {
        self.check_retained()?;
        self.check_direction(inner, v)?;
        let g_inner = self.grad(output, inner)?;
        let mut terms = Vec::with_capacity(inner.len());
        for (g, vi) in g_inner.into_iter().zip(v) {
            let c = self.constant(vi.clone());
            terms.push(self.dot(g, c)?);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = self.add(total, t)?;
        }
        Ok(self.grad_values(total, outer)?.into_tensors())
    }

    /// Hessian-vector product `H v` with `H = d^2 output / d params^2`.
    pub fn hvp(&mut self, output: Var, params: &[Var], v: &[Tensor<T>]) -> Result<Vec<Tensor<T>>, AutodiffError> {
        self.mixed_hvp(output, params, params, v)
    }

    /// [`Graph::hvp`] with a flat direction vector and flat result.
    pub fn hvp_flat(&mut self, output: Var, params: &[Var], v: &[T]) -> Result<Vec<T>, AutodiffError> {
        self.mixed_hvp_flat(output, params, params, v)
    }

    /// [`Graph::mixed_hvp`] with a flat direction vector and flat result.
    pub fn mixed_hvp_flat(
        &mut self,
        output: Var,
        outer: &[Var],
        inner: &[Var],
        v: &[T],
    ) -> Result<Vec<T>, AutodiffError> {
        let like: Vec<Tensor<T>> = inner.iter().map(|&p| self.value(p).clone()).collect();
        let blocks = Tensor::split_like(v, &like)?;
        let out = self.mixed_hvp(output, outer, inner, &blocks)?;
        Ok(Tensor::flatten_all(&out))
    }
}

/// Runs `build` on a fresh graph with `inputs` bound as differentiable leaves and
/// returns the named outputs.
pub fn forward<T, F>(
    inputs: &[(&str, Tensor<T>)],
    build: F,
) -> Result<HashMap<String, Tensor<T>>, AutodiffError>
where
    T: Scalar,
    F: FnOnce(&mut Graph<T>, &HashMap<String, Var>) -> Result<Vec<(String, Var)>, AutodiffError>,
{
    let mut g = Graph::new();
    let bound: HashMap<String, Var> =
        inputs.iter().map(|(name, t)| (name.to_string(), g.param(t.clone()))).collect();
    let outputs = build(&mut g, &bound)?;
    Ok(outputs.into_iter().map(|(name, v)| (name, g.value(v).clone())).collect())
}
