use crate::error::{Error, Result};

use super::mesh::Mesh;

/// Nodal P1 field with `components` values per node, stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    components: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(n_nodes: usize, components: usize) -> Self {
        Field {
            components,
            values: vec![0.0; n_nodes * components],
        }
    }

    pub fn from_values(components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() % components != 0 {
            return Err(Error::invalid(format!(
                "{} values do not split into {components}-component nodes",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("field value {i} is not finite")));
        }
        Ok(Field { components, values })
    }

    /// Samples `f` at every mesh vertex.
    pub fn interpolate(
        mesh: &Mesh,
        components: usize,
        mut f: impl FnMut(&[f64]) -> Vec<f64>,
    ) -> Self {
        let mut values = Vec::with_capacity(mesh.n_nodes() * components);
        for i in 0..mesh.n_nodes() {
            let v = f(mesh.point(i));
            debug_assert_eq!(v.len(), components);
            values.extend_from_slice(&v);
        }
        Field { components, values }
    }

    pub fn scalar(mesh: &Mesh, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        Field::interpolate(mesh, 1, |x| vec![f(x)])
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.components..(node + 1) * self.components]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise sum of two fields on the same space.
    pub fn add(&self, other: &Field) -> Result<Field> {
        if self.components != other.components || self.values.len() != other.values.len() {
            return Err(Error::invalid("fields live on different spaces"));
        }
        Ok(Field {
            components: self.components,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Euclidean norm of the vector at each node.
    pub fn node_norms(&self) -> Vec<f64> {
        self.values
            .chunks(self.components)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}
