//! Grid-following inverter: frames, the improved inner loop, the conventional
//! low-voltage ride-through law and the normal-mode outer loops.
//!
//! Two rotating frames appear here. The *paper frame* `T(θ)` maps
//! `d = sinθ·x − cosθ·y`, `q = cosθ·x + sinθ·y`, so a voltage at angle θ lies
//! on its q axis. The *controller frame* puts the d axis at θ and the q axis
//! at θ − 90°, so with the PLL locked `P = V_d·I_d` and `Q = V_d·I_q`.
//! The two are the same projection with the axes swapped.

use crate::devices::{PiGains, PllGains};
use crate::scalar::{mul_j, polar, xy, Phasor, Scalar};

/// Projects `z` onto the paper frame at angle `theta`, returning `(d, q)`.
pub fn paper_dq<T: Scalar>(z: Phasor<T>, theta: T) -> [T; 2] {
    let (s, c) = theta.sin_cos();
    [s * z.re - c * z.im, c * z.re + s * z.im]
}

pub fn from_paper_dq<T: Scalar>(dq: [T; 2], theta: T) -> Phasor<T> {
    let (s, c) = theta.sin_cos();
    xy(s * dq[0] + c * dq[1], -c * dq[0] + s * dq[1])
}

/// Projects `z` onto the controller frame at angle `theta`, returning `(d, q)`.
pub fn controller_frame<T: Scalar>(z: Phasor<T>, theta: T) -> [T; 2] {
    let w = z * polar(T::one(), -theta);
    [w.re, -w.im]
}

pub fn from_controller_frame<T: Scalar>(dq: [T; 2], theta: T) -> Phasor<T> {
    xy(dq[0], -dq[1]) * polar(T::one(), theta)
}

/// Current reference of the improved inner loop (synchronous-machine
/// emulation in the inverter dq frame).
///
/// `i_ref_outer` and `v_dq` are in the paper frame; `theta_dq` is the angle
/// between the machine and inverter frames.
pub fn gfl_inner_reference<T: Scalar>(
    i_ref_outer: [T; 2],
    v_dq: [T; 2],
    theta_dq: T,
    x_d_prime: T,
    x_q: T,
) -> [T; 2] {
    let (s, c) = theta_dq.sin_cos();
    let (yd, yq) = (x_d_prime.recip(), x_q.recip());
    let cross = s * c * (yq - yd);
    let [vd, vq] = v_dq;
    [
        i_ref_outer[0] - cross * vd - (c * c * yd + s * s * yq) * vq,
        i_ref_outer[1] + (c * c * yq + s * s * yd) * vd + cross * vq,
    ]
}

/// Injected current with the virtual shunt: `I = I' + j·b'·V`.
pub fn gfl_norton_phasor<T: Scalar>(i_internal: Phasor<T>, v: Phasor<T>, b_virtual: T) -> Phasor<T> {
    i_internal + mul_j(v) * b_virtual
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LvrtParams<T> {
    pub k_q: T,
    pub i_max: T,
    /// Active current reference held before the sag.
    pub i_d_pre: T,
}

/// Conventional reactive-current-priority ride-through law, returning the
/// controller-frame `(I_d, I_q)` reference.
pub fn gfl_lvrt_baseline<T: Scalar>(v_mag_filtered: T, params: &LvrtParams<T>) -> [T; 2] {
    let knee = T::lit(0.9);
    let i_q = (params.k_q * (knee - v_mag_filtered)).max(T::zero()).min(params.i_max);
    let room = (params.i_max * params.i_max - i_q * i_q).max(T::zero()).sqrt();
    [params.i_d_pre.min(room), i_q]
}

/// Outer-loop and PLL state of a grid-following inverter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GflOuterState<T> {
    /// P and Q loop integrators (controller-frame current references).
    pub xi_d: T,
    pub xi_q: T,
    /// PLL angle (rad) and frequency deviation (rad/s).
    pub theta: T,
    pub zeta: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GflOuterMeasurements<T> {
    pub p: T,
    pub q: T,
    pub p_sp: T,
    pub q_sp: T,
    /// Controller-frame q component of the terminal voltage at the PLL angle.
    pub v_q: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GflOuterDerivatives<T> {
    pub d_xi_d: T,
    pub d_xi_q: T,
    pub d_theta: T,
    pub d_zeta: T,
    /// Internal-current reference `I'_dq` produced by the PI loops.
    pub i_ref: [T; 2],
}

/// Normal-mode dynamics: PI on the power errors, PI-type PLL driving `V_q → 0`.
pub fn gfl_outer_derivatives<T: Scalar>(
    state: &GflOuterState<T>,
    meas: &GflOuterMeasurements<T>,
    outer: &PiGains,
    pll: &PllGains,
) -> GflOuterDerivatives<T> {
    let (kp, ki) = (T::lit(outer.kp), T::lit(outer.ki));
    let e_p = meas.p_sp - meas.p;
    let e_q = meas.q_sp - meas.q;
    let e_pll = -meas.v_q;
    GflOuterDerivatives {
        d_xi_d: ki * e_p,
        d_xi_q: ki * e_q,
        d_theta: T::lit(pll.kp) * e_pll + state.zeta,
        d_zeta: T::lit(pll.ki) * e_pll,
        i_ref: [state.xi_d + kp * e_p, state.xi_q + kp * e_q],
    }
}
