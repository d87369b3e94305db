//! Grid-forming inverter: virtual-reactance inner loop, droop outer loops and
//! post-fault phase resynchronisation.

use crate::scalar::{mul_j, Phasor, Scalar};

/// `V = E − j·x'·I`
pub fn gfm_terminal_voltage<T: Scalar>(e: Phasor<T>, i: Phasor<T>, x_virtual: T) -> Phasor<T> {
    e - mul_j(i) * x_virtual
}

/// Inverse of [`gfm_terminal_voltage`]: `I = (E − V)/(j·x')`.
pub fn gfm_current_from_voltage<T: Scalar>(e: Phasor<T>, v: Phasor<T>, x_virtual: T) -> Phasor<T> {
    // (a)/(jx) = -j·a/x
    -mul_j(e - v) / x_virtual
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DroopState<T> {
    /// Internal voltage angle (rad).
    pub delta: T,
    /// Filtered internal voltage magnitude.
    pub e: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroopMeasurements<T> {
    pub p: T,
    pub q: T,
    pub p_sp: T,
    pub q_sp: T,
    pub e0: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroopDerivatives<T> {
    pub d_delta: T,
    pub d_e: T,
    /// Unfiltered magnitude target `e0 + n_q·(Q_sp − Q)`.
    pub e_target: T,
}

/// Normal-mode P–f and Q–V droop.
pub fn gfm_droop_derivatives<T: Scalar>(
    state: &DroopState<T>,
    meas: &DroopMeasurements<T>,
    omega0: T,
    m_p: T,
    n_q: T,
    tau_e: T,
) -> DroopDerivatives<T> {
    let e_target = meas.e0 + n_q * (meas.q_sp - meas.q);
    DroopDerivatives {
        d_delta: omega0 * m_p * (meas.p_sp - meas.p),
        d_e: (e_target - state.e) / tau_e,
        e_target,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResyncGains<T> {
    pub tau_angle: T,
    pub tau_freq: T,
}

/// One recovery-mode step pulling `(δ, ω)` toward the PCC angle and
/// frequency deviation with exact first-order decay over `dt`.
pub fn resync_tracking<T: Scalar>(
    delta: T,
    omega: T,
    pcc_angle: T,
    pcc_frequency: T,
    dt: T,
    gains: &ResyncGains<T>,
) -> (T, T) {
    let ka = (-dt / gains.tau_angle).exp();
    let kf = (-dt / gains.tau_freq).exp();
    (
        pcc_angle + (delta - pcc_angle) * ka,
        pcc_frequency + (omega - pcc_frequency) * kf,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::xy;
    use num_complex::Complex64;
    use proptest::prelude::*;

    #[test]
    fn terminal_voltage_examples() {
        let e = xy(1.0, 0.0);
        assert_eq!(gfm_terminal_voltage(e, xy(0.0, 0.0), 0.1), e);
        let v = gfm_terminal_voltage(e, xy(0.0, -1.2), 0.1);
        assert!((v - xy(0.88, 0.0)).norm() < 1e-15);
        let i = gfm_current_from_voltage(e, xy(0.0, 0.0), 0.1);
        let oracle = (Complex64::new(1.0, 0.0) - Complex64::new(0.0, 0.0)) / Complex64::new(0.0, 0.1);
        assert!((i - oracle).norm() < 1e-12);
        assert!((i.norm() - 10.0).abs() < 1e-12);
    }

    fn meas(p: f64, q: f64) -> DroopMeasurements<f64> {
        DroopMeasurements {
            p,
            q,
            p_sp: 0.5,
            q_sp: 0.1,
            e0: 1.02,
        }
    }

    #[test]
    fn droop_equilibrium_and_signs() {
        let s = DroopState { delta: 0.1, e: 1.02 };
        let d = gfm_droop_derivatives(&s, &meas(0.5, 0.1), 314.16, 0.02, 0.05, 0.02);
        assert_eq!(d.d_delta, 0.0);
        assert_eq!(d.d_e, 0.0);
        assert_eq!(d.e_target, 1.02);
        let d = gfm_droop_derivatives(&s, &meas(0.3, 0.1), 314.16, 0.02, 0.05, 0.02);
        assert!(d.d_delta > 0.0);
    }

    #[test]
    fn droop_steady_state_magnitude() {
        // Q_sp − Q = 0.2 held constant
        let mut s = DroopState { delta: 0.0, e: 1.02 };
        let dt = 1e-4;
        for _ in 0..10_000 {
            let d = gfm_droop_derivatives(&s, &meas(0.5, -0.1), 314.16, 0.02, 0.05, 0.02);
            s.e += dt * d.d_e;
        }
        assert!((s.e - 1.03).abs() < 1e-12);
    }

    #[test]
    fn resync_examples() {
        let g = ResyncGains {
            tau_angle: 0.05,
            tau_freq: 0.05,
        };
        assert_eq!(resync_tracking(0.4, 0.0, 0.4, 0.0, 0.05, &g), (0.4, 0.0));
        let (d, _) = resync_tracking(0.1, 0.0, 0.0, 0.0, 0.05, &g);
        assert!((d - 0.1 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((d - 0.0368).abs() < 1e-4);
        let (_, w) = resync_tracking(0.0, 0.0, 0.0, 0.3, 0.01, &g);
        assert!(w > 0.0);
        let (_, w) = resync_tracking(0.0, 0.0, 0.0, -0.3, 0.01, &g);
        assert!(w < 0.0);
    }

    proptest! {
        #[test]
        fn voltage_current_round_trip(
            ex in -1.5..1.5f64, ey in -1.5..1.5f64, ix in -3.0..3.0f64, iy in -3.0..3.0f64, x in 0.01..2.0f64,
        ) {
            let (e, i) = (xy(ex, ey), xy(ix, iy));
            let v = gfm_terminal_voltage(e, i, x);
            let back = gfm_current_from_voltage(e, v, x);
            prop_assert!((back - i).norm() <= 1e-12);
        }

        #[test]
        fn resync_gap_shrinks(delta in -3.0..3.0f64, target in -3.0..3.0f64, dt in 1e-5..0.1f64) {
            let g = ResyncGains { tau_angle: 0.05, tau_freq: 0.1 };
            let (d, _) = resync_tracking(delta, 0.0, target, 0.0, dt, &g);
            prop_assert!((d - target).abs() <= (delta - target).abs());
        }
    }
}
