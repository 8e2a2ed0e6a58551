use super::{DenseArray, Real};

/// Handle to a parameter group inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// A named trainable array with its gradient accumulator and optimizer
/// moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup<T> {
    pub name: String,
    pub value: DenseArray<T>,
    pub grad: DenseArray<T>,
    pub first_moment: DenseArray<T>,
    pub second_moment: DenseArray<T>,
    /// Frozen groups are skipped by the optimizer.
    pub trainable: bool,
}

impl<T: Real> ParamGroup<T> {
    pub fn new(name: impl Into<String>, value: DenseArray<T>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            value,
            grad: DenseArray::zeros(&shape),
            first_moment: DenseArray::zeros(&shape),
            second_moment: DenseArray::zeros(&shape),
            trainable: true,
        }
    }
}

/// Ordered collection of parameter groups.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    groups: Vec<ParamGroup<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { groups: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseArray<T>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter `{name}`");
        self.groups.push(ParamGroup::new(name, value));
        ParamId(self.groups.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.groups.iter().position(|g| g.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &DenseArray<T> {
        &self.groups[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut DenseArray<T> {
        &mut self.groups[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &DenseArray<T> {
        &self.groups[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut DenseArray<T> {
        &mut self.groups[id.0].grad
    }

    pub fn group(&self, id: ParamId) -> &ParamGroup<T> {
        &self.groups[id.0]
    }

    pub fn group_mut(&mut self, id: ParamId) -> &mut ParamGroup<T> {
        &mut self.groups[id.0]
    }

    pub fn groups(&self) -> &[ParamGroup<T>] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup<T>] {
        &mut self.groups
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.groups {
            g.grad.fill(T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.groups.iter().all(|g| g.value.is_finite())
    }

    pub fn num_values(&self) -> usize {
        self.groups.iter().map(|g| g.value.len()).sum()
    }
}
