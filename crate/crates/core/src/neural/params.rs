use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, IxDyn};
use rand::Rng;

/// Index of one array inside a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named real arrays.
///
/// Gradients and optimizer moments are stored in sets with the same layout
/// (see [`ParameterSet::zeros_like`]), so a [`ParamId`] addresses the matching
/// array in each of them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    names: Vec<String>,
    arrays: Vec<ArrayD<f64>>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, array: ArrayD<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.arrays.push(array);
        ParamId(self.arrays.len() - 1)
    }

    /// Adds a `rows x cols` matrix drawn uniformly from `[-bound, bound]`.
    pub fn push_uniform<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut R) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.push(name, ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches data"))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            arrays: self.arrays.iter().map(|a| ArrayD::zeros(a.raw_dim())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Total number of scalars across all arrays.
    pub fn num_scalars(&self) -> usize {
        self.arrays.iter().map(|a| a.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.arrays[id.0]
    }

    pub fn mat(&self, id: ParamId) -> ArrayView2<'_, f64> {
        self.arrays[id.0].view().into_dimensionality::<Ix2>().expect("2-D parameter")
    }

    pub fn vec(&self, id: ParamId) -> ArrayView1<'_, f64> {
        self.arrays[id.0].view().into_dimensionality::<Ix1>().expect("1-D parameter")
    }

    pub fn mat_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        self.arrays[id.0].view_mut().into_dimensionality::<Ix2>().expect("2-D parameter")
    }

    pub fn vec_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, f64> {
        self.arrays[id.0].view_mut().into_dimensionality::<Ix1>().expect("1-D parameter")
    }

    /// Mutable views of two distinct 2-D arrays at once.
    pub fn mat_pair_mut(&mut self, a: ParamId, b: ParamId) -> (ArrayViewMut2<'_, f64>, ArrayViewMut2<'_, f64>) {
        assert_ne!(a, b, "distinct parameters required");
        fn to2(x: &mut ArrayD<f64>) -> ArrayViewMut2<'_, f64> {
            x.view_mut().into_dimensionality::<Ix2>().expect("2-D parameter")
        }
        if a.0 < b.0 {
            let (lo, hi) = self.arrays.split_at_mut(b.0);
            (to2(&mut lo[a.0]), to2(&mut hi[0]))
        } else {
            let (lo, hi) = self.arrays.split_at_mut(a.0);
            (to2(&mut hi[0]), to2(&mut lo[b.0]))
        }
    }

    /// Mutable matrix and vector views of two distinct arrays (weights and bias).
    pub fn mat_vec_mut(&mut self, w: ParamId, b: ParamId) -> (ArrayViewMut2<'_, f64>, ArrayViewMut1<'_, f64>) {
        assert_ne!(w, b, "distinct parameters required");
        let (lo, hi, w_first) = if w.0 < b.0 {
            let (lo, hi) = self.arrays.split_at_mut(b.0);
            (lo, hi, true)
        } else {
            let (lo, hi) = self.arrays.split_at_mut(w.0);
            (lo, hi, false)
        };
        let (wa, ba) = if w_first { (&mut lo[w.0], &mut hi[0]) } else { (&mut hi[0], &mut lo[b.0]) };
        (
            wa.view_mut().into_dimensionality::<Ix2>().expect("2-D parameter"),
            ba.view_mut().into_dimensionality::<Ix1>().expect("1-D parameter"),
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.arrays)
    }

    pub fn arrays(&self) -> impl Iterator<Item = &ArrayD<f64>> {
        self.arrays.iter()
    }

    pub fn arrays_mut(&mut self) -> impl Iterator<Item = &mut ArrayD<f64>> {
        self.arrays.iter_mut()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .arrays
                .iter()
                .zip(&other.arrays)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    pub fn global_norm(&self) -> f64 {
        self.arrays
            .iter()
            .flat_map(|a| a.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.arrays {
            a.mapv_inplace(|v| v * factor);
        }
    }

    pub fn fill_zero(&mut self) {
        for a in &mut self.arrays {
            a.fill(0.0);
        }
    }

    /// `self += other`; layouts must match.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            *a += b;
        }
    }

    /// `self += factor * other`; layouts must match.
    pub fn add_scaled(&mut self, other: &Self, factor: f64) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            a.scaled_add(factor, b);
        }
    }

    /// Scalar at a flat index over all arrays in order.
    pub fn flat_get(&self, mut index: usize) -> f64 {
        for a in &self.arrays {
            if index < a.len() {
                return a.as_slice_memory_order().expect("contiguous")[index];
            }
            index -= a.len();
        }
        panic!("flat index out of range");
    }

    pub fn flat_set(&mut self, mut index: usize, value: f64) {
        for a in &mut self.arrays {
            if index < a.len() {
                a.as_slice_memory_order_mut().expect("contiguous")[index] = value;
                return;
            }
            index -= a.len();
        }
        panic!("flat index out of range");
    }

    /// Name of the array containing a flat index and the offset inside it.
    pub fn locate(&self, mut index: usize) -> (&str, usize) {
        for (name, a) in self.names.iter().zip(&self.arrays) {
            if index < a.len() {
                return (name, index);
            }
            index -= a.len();
        }
        panic!("flat index out of range");
    }
}
