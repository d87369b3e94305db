use crate::scalar::{mul_j, polar, Phasor, Scalar};

/// Transient-level synchronous machine model that the inverter inner loops emulate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmTransientModel<T> {
    pub e_q_prime: T,
    pub delta: T,
    pub x_d_prime: T,
    pub x_q: T,
}

/// Norton form of the transient machine model:
/// `I = I'_D − V_Q/(j x'_d) − V_D/(j x_q)`, `I'_D = (E'_Q/x'_d)∠(δ − 90°)`.
///
/// `V_Q` and `V_D` are the phasor projections of `v` onto the Q axis (at δ)
/// and the D axis (at δ − 90°).
pub fn sm_norton_current<T: Scalar>(sm: &SmTransientModel<T>, v: Phasor<T>) -> Phasor<T> {
    let half_pi = T::FRAC_PI_2();
    let q_axis = polar(T::one(), sm.delta);
    let d_axis = polar(T::one(), sm.delta - half_pi);
    let v_q = q_axis * (v * q_axis.conj()).re;
    let v_d = d_axis * (v * d_axis.conj()).re;
    let i_src = polar(sm.e_q_prime / sm.x_d_prime, sm.delta - half_pi);
    i_src - v_q / mul_j(Phasor::new(sm.x_d_prime, T::zero())) - v_d / mul_j(Phasor::new(sm.x_q, T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::xy;
    use num_complex::Complex64;

    fn sm(e: f64, delta: f64, xd: f64, xq: f64) -> SmTransientModel<f64> {
        SmTransientModel {
            e_q_prime: e,
            delta,
            x_d_prime: xd,
            x_q: xq,
        }
    }

    #[test]
    fn zero_drop_gives_zero_current() {
        let m = sm(1.07, 0.3, 0.2, 0.2);
        let i = sm_norton_current(&m, polar(1.07, 0.3));
        assert!(i.norm() < 1e-12);
    }

    #[test]
    fn divider_examples() {
        let i = sm_norton_current(&sm(1.0, 0.0, 0.1, 0.1), xy(0.5, 0.0));
        let oracle = (Complex64::new(1.0, 0.0) - Complex64::new(0.5, 0.0)) / Complex64::new(0.0, 0.1);
        assert!((i - oracle).norm() < 1e-12);
        assert!((i - xy(0.0, -5.0)).norm() < 1e-12);

        let i = sm_norton_current(&sm(1.0, 0.0, 0.2, 0.2), xy(0.0, 0.0));
        assert!((i - xy(0.0, -5.0)).norm() < 1e-12);
    }

    #[test]
    fn saliency_changes_only_the_d_axis_response() {
        // V purely on the Q axis: x_q plays no role
        let v = polar(0.6, 0.4);
        let a = sm_norton_current(&sm(1.0, 0.4, 0.25, 0.25), v);
        let b = sm_norton_current(&sm(1.0, 0.4, 0.25, 0.9), v);
        assert!((a - b).norm() < 1e-12);
    }
}
