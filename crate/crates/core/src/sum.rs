//! Compensated summation, so that reductions do not depend on evaluation order
//! beyond the last couple of ulps.

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl Extend<f64> for NeumaierSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = NeumaierSum::new();
    acc.extend(values);
    acc.total()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    sum(values.iter().copied()) / values.len() as f64
}

/// Population covariance, computed on values shifted by their first element.
///
/// The shift makes the result exactly zero when either operand is constant.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "covariance operands differ in length");
    if xs.is_empty() {
        return 0.0;
    }
    let (x0, y0) = (xs[0], ys[0]);
    let mx = sum(xs.iter().map(|&x| x - x0)) / xs.len() as f64;
    let my = sum(ys.iter().map(|&y| y - y0)) / ys.len() as f64;
    sum(xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (x - x0 - mx) * (y - y0 - my)))
        / xs.len() as f64
}
