//! Central finite differences, used to validate analytic gradients.

use crate::Real;

/// Central-difference derivative of `f` along coordinate `index` of `point`.
pub fn central_difference<T: Real>(point: &mut [T], index: usize, step: T, mut f: impl FnMut(&[T]) -> T) -> T {
    let orig = point[index];
    point[index] = orig + step;
    let plus = f(point);
    point[index] = orig - step;
    let minus = f(point);
    point[index] = orig;
    (plus - minus) / (step + step)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_derivative() {
        let mut p = vec![2.0f64, 1.0];
        let d = central_difference(&mut p, 0, 1e-4, |x| x[0] * x[0] * x[0] + x[1]);
        assert!((d - 12.0).abs() < 1e-6);
        assert_eq!(p, vec![2.0, 1.0]);
    }
}
