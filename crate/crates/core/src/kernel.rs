//! Shared 1-D Gaussian kernel and boundary handling.

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`), valid for
/// any offset, including ones farther than `len` outside the signal.
#[inline]
pub(crate) fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let m = i.rem_euclid(2 * n);
    if m < n {
        m as usize
    } else {
        (2 * n - 1 - m) as usize
    }
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
/// `sigma == 0` yields the unit impulse.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / denom).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}
