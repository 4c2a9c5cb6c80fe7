//! Small shared helpers: dense vector arithmetic, special functions, and the
//! parallel/sequential execution switch.

pub mod exec;
pub mod numeric;

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Squared Euclidean norm.
pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| c * x).collect()
}

/// `a += c * b`.
pub fn axpy(a: &mut [f64], c: f64, b: &[f64]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += c * y;
    }
}

/// Arithmetic mean of equally sized vectors. Identical inputs are returned
/// exactly (no accumulated rounding), which several aggregation contracts
/// rely on.
pub fn mean(vs: &[Vec<f64>]) -> Vec<f64> {
    assert!(!vs.is_empty());
    if vs.iter().all(|v| v == &vs[0]) {
        return vs[0].clone();
    }
    let d = vs[0].len();
    let mut out = vec![0.0; d];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let inv = 1.0 / vs.len() as f64;
    for o in &mut out {
        *o *= inv;
    }
    out
}

/// Mean of a subset selected by reference.
pub fn mean_of<'a, I: Iterator<Item = &'a Vec<f64>> + Clone>(iter: I, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    let mut count = 0usize;
    for v in iter {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
        count += 1;
    }
    assert!(count > 0);
    let inv = 1.0 / count as f64;
    for o in &mut out {
        *o *= inv;
    }
    out
}
