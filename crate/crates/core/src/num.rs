//! Float helpers for schedule arithmetic, where values like `log_3(27)` must
//! land on the integer they denote.

const EPS: f64 = 1e-9;

/// Largest integer `s >= 0` with `eta^s <= x`; 0 when `x < eta`.
pub(crate) fn floor_log(x: f64, eta: f64) -> u32 {
    let mut s = 0u32;
    let mut p = eta;
    while p <= x * (1.0 + EPS) {
        s += 1;
        p *= eta;
    }
    s
}

pub(crate) fn floor_tol(x: f64) -> usize {
    (x + EPS).floor().max(0.0) as usize
}

pub(crate) fn ceil_tol(x: f64) -> usize {
    (x - EPS).ceil().max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_powers() {
        assert_eq!(floor_log(27.0, 3.0), 3);
        assert_eq!(floor_log(26.9, 3.0), 2);
        assert_eq!(floor_log(81.0, 3.0), 4);
        assert_eq!(floor_log(1.0, 3.0), 0);
        assert_eq!(floor_log(2.0, 3.0), 0);
        assert_eq!(floor_log(54.0, 3.0), 3);
        assert_eq!(floor_log(243.0, 3.0), 5);
        assert_eq!(floor_tol(27.0 * 3f64.powi(-3)), 1);
        assert_eq!(ceil_tol(405.0 * 81.0 / (81.0 * 5.0)), 81);
        assert_eq!(ceil_tol(2.5), 3);
    }
}
