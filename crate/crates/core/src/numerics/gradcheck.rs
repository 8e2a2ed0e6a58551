use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, ParamStore};

pub const DEFAULT_EPS: f64 = 1e-5;
/// Groups larger than this are checked on a random subsample of this size.
pub const MIN_SAMPLES_PER_GROUP: usize = 200;
const DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Largest `|analytic - numeric|`, which stays meaningful for entries
    /// whose gradient is near the finite-difference noise floor.
    pub max_abs_error: f64,
    pub entries_checked: usize,
    /// `(group, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares reverse-mode gradients against central differences.
///
/// `objective` must zero-initialise nothing itself: the harness clears the
/// store's gradients before each call, and the objective accumulates its
/// gradient into the store while returning the scalar value. Every trainable
/// group is checked, entry by entry when it has at most `samples_per_group`
/// entries and on a seeded random subsample otherwise.
pub fn grad_check<E, F>(
    store: &mut ParamStore<f64>,
    eps: f64,
    samples_per_group: usize,
    seed: u64,
    mut objective: F,
) -> Result<GradCheckReport, E>
where
    E: From<NumericsError>,
    F: FnMut(&mut ParamStore<f64>) -> Result<f64, E>,
{
    let samples_per_group = samples_per_group.max(MIN_SAMPLES_PER_GROUP);
    let mut eval = |store: &mut ParamStore<f64>| -> Result<f64, E> {
        store.zero_grads();
        let v = objective(store)?;
        if !v.is_finite() {
            return Err(NumericsError::NonFinite { what: "objective" }.into());
        }
        Ok(v)
    };

    eval(store)?;
    let analytic: Vec<Vec<f64>> = store
        .groups()
        .iter()
        .map(|g| g.grad.data().to_vec())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        entries_checked: 0,
        worst: None,
    };
    #[allow(clippy::needless_range_loop)]
    for gi in 0..store.groups().len() {
        if !store.groups()[gi].trainable {
            continue;
        }
        let len = store.groups()[gi].value.len();
        let entries: Vec<usize> = if len <= samples_per_group {
            (0..len).collect()
        } else {
            let mut picked = sample(&mut rng, len, samples_per_group).into_vec();
            picked.sort_unstable();
            picked
        };
        for idx in entries {
            let original = store.groups()[gi].value.data()[idx];
            store.groups_mut()[gi].value.data_mut()[idx] = original + eps;
            let plus = eval(store)?;
            store.groups_mut()[gi].value.data_mut()[idx] = original - eps;
            let minus = eval(store)?;
            store.groups_mut()[gi].value.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[gi][idx];
            let denom = a.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.entries_checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((store.groups()[gi].name.clone(), idx, a, numeric));
            }
        }
    }
    // Leave the analytic gradient in place for callers that inspect it.
    store.zero_grads();
    for (g, grad) in store.groups_mut().iter_mut().zip(analytic) {
        g.grad.data_mut().copy_from_slice(&grad);
    }
    Ok(report)
}

/// Gradient-checks every differentiable primitive in [`super::ops`] on
/// small random inputs, each against the objective `sum(out * r)` for a
/// fixed random `r`. Returns one report per primitive.
pub fn check_primitives(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>, NumericsError> {
    use super::ops;
    use super::DenseArray;
    use rand::Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand = |rows: usize, cols: usize, lo: f64, hi: f64| {
        DenseArray::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
    };
    let dot = |a: &DenseArray<f64>, b: &DenseArray<f64>| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| x * y)
            .sum::<f64>()
    };
    let mut reports = Vec::new();

    let mut store = ParamStore::new();
    let a = store.add("a", rand(3, 4, -1.0, 1.0));
    let b = store.add("b", rand(4, 5, -1.0, 1.0));
    let r = rand(3, 5, -1.0, 1.0);
    let rep = grad_check(&mut store, DEFAULT_EPS, 200, seed, |s| {
        let out = ops::matmul(s.value(a), s.value(b))?;
        let (da, db) = ops::matmul_backward(s.value(a), s.value(b), &r)?;
        s.grad_mut(a).add_assign(&da)?;
        s.grad_mut(b).add_assign(&db)?;
        Ok::<_, NumericsError>(dot(&out, &r))
    })?;
    reports.push(("matmul", rep));

    let mut store = ParamStore::new();
    let a = store.add("a", rand(3, 4, -1.0, 1.0));
    let b = store.add("b", rand(3, 4, -1.0, 1.0));
    let r = rand(3, 4, -1.0, 1.0);
    let rep = grad_check(&mut store, DEFAULT_EPS, 200, seed, |s| {
        let out = ops::add(s.value(a), s.value(b))?;
        let (da, db) = ops::add_backward(&r);
        s.grad_mut(a).add_assign(&da)?;
        s.grad_mut(b).add_assign(&db)?;
        Ok::<_, NumericsError>(dot(&out, &r))
    })?;
    reports.push(("add", rep));

    let mut store = ParamStore::new();
    let x = store.add("x", rand(4, 3, -1.0, 1.0));
    let bias = store.add("bias", rand(1, 3, -1.0, 1.0));
    let r = rand(4, 3, -1.0, 1.0);
    let rep = grad_check(&mut store, DEFAULT_EPS, 200, seed, |s| {
        let out = ops::add_row_bias(s.value(x), s.value(bias))?;
        let (dx, db) = ops::add_row_bias_backward(&r);
        s.grad_mut(x).add_assign(&dx)?;
        s.grad_mut(bias).add_assign(&db)?;
        Ok::<_, NumericsError>(dot(&out, &r))
    })?;
    reports.push(("add_row_bias", rep));

    let mut store = ParamStore::new();
    let a = store.add("a", rand(3, 2, -1.0, 1.0));
    let b = store.add("b", rand(3, 4, -1.0, 1.0));
    let r = rand(3, 6, -1.0, 1.0);
    let rep = grad_check(&mut store, DEFAULT_EPS, 200, seed, |s| {
        let out = ops::concat_cols(&[s.value(a), s.value(b)])?;
        let parts = ops::concat_cols_backward(&r, &[2, 4])?;
        s.grad_mut(a).add_assign(&parts[0])?;
        s.grad_mut(b).add_assign(&parts[1])?;
        Ok::<_, NumericsError>(dot(&out, &r))
    })?;
    reports.push(("concat_cols", rep));

    let mut store = ParamStore::new();
    let x = store.add("x", rand(3, 5, -2.0, 2.0));
    let r = rand(3, 5, -1.0, 1.0);
    let mask: Vec<bool> = (0..15).map(|i| i % 5 == 0 && i != 10).collect();
    let rep = grad_check(&mut store, DEFAULT_EPS, 200, seed, |s| {
        let y = ops::row_softmax(s.value(x), Some(&mask))?;
        let dx = ops::row_softmax_backward(&y, &r)?;
        s.grad_mut(x).add_assign(&dx)?;
        Ok::<_, NumericsError>(dot(&y, &r))
    })?;
    reports.push(("row_softmax", rep));

    let mut store = ParamStore::new();
    let x = store.add("x", rand(4, 4, -3.0, 3.0));
    let r = rand(4, 4, -1.0, 1.0);
    let rep = grad_check(&mut store, DEFAULT_EPS, 200, seed, |s| {
        let out = ops::gelu(s.value(x));
        let dx = ops::gelu_backward(s.value(x), &r)?;
        s.grad_mut(x).add_assign(&dx)?;
        Ok::<_, NumericsError>(dot(&out, &r))
    })?;
    reports.push(("gelu", rep));

    let mut store = ParamStore::new();
    let x = store.add("x", rand(4, 4, -3.0, 3.0));
    let r = rand(4, 4, -1.0, 1.0);
    let rep = grad_check(&mut store, DEFAULT_EPS, 200, seed, |s| {
        let y = ops::sigmoid(s.value(x));
        let dx = ops::sigmoid_backward(&y, &r)?;
        s.grad_mut(x).add_assign(&dx)?;
        Ok::<_, NumericsError>(dot(&y, &r))
    })?;
    reports.push(("sigmoid", rep));

    let mut store = ParamStore::new();
    let x = store.add("x", rand(4, 4, 0.5, 3.0));
    let r = rand(4, 4, -1.0, 1.0);
    let rep = grad_check(&mut store, DEFAULT_EPS, 200, seed, |s| {
        let out = ops::log(s.value(x))?;
        let dx = ops::log_backward(s.value(x), &r)?;
        s.grad_mut(x).add_assign(&dx)?;
        Ok::<_, NumericsError>(dot(&out, &r))
    })?;
    reports.push(("log", rep));

    let mut store = ParamStore::new();
    let table = store.add("table", rand(5, 3, -1.0, 1.0));
    let ids = [4usize, 0, 4, 2, 4, 1];
    let r = rand(ids.len(), 3, -1.0, 1.0);
    let rep = grad_check(&mut store, DEFAULT_EPS, 200, seed, |s| {
        let out = ops::gather_rows(s.value(table), &ids)?;
        let dt = ops::gather_rows_backward(&[5, 3], &ids, &r)?;
        s.grad_mut(table).add_assign(&dt)?;
        Ok::<_, NumericsError>(dot(&out, &r))
    })?;
    reports.push(("gather_rows", rep));

    let mut store = ParamStore::new();
    let x = store.add("x", rand(4, 5, -1.0, 1.0));
    let r = rand(4, 5, -1.0, 1.0);
    let mask = ops::DropoutMask::draw(20, 0.3, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xd40))?;
    let rep = grad_check(&mut store, DEFAULT_EPS, 200, seed, |s| {
        let mut out = s.value(x).clone();
        mask.apply(out.data_mut());
        let dx = ops::dropout_backward(&mask, &r);
        s.grad_mut(x).add_assign(&dx)?;
        Ok::<_, NumericsError>(dot(&out, &r))
    })?;
    reports.push(("dropout", rep));

    Ok(reports)
}
