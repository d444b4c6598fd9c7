use super::Complex64;
use crate::error::{Error, Result};

const MIN_FRAME_VOLTAGE: f64 = 1e-6;

/// Splits a branch current into active and reactive components in the frame
/// aligned with the PCC voltage. Positive values flow from the transmission
/// side into the feeder, so `i_p * |v|` is the active power drawn and
/// `i_q * |v|` the reactive power drawn.
pub fn interface_current(v_pcc: Complex64, current: Complex64) -> Result<(f64, f64)> {
    let magnitude = v_pcc.norm();
    if magnitude < MIN_FRAME_VOLTAGE {
        return Err(Error::UndefinedFrame(magnitude));
    }
    let aligned = current * (v_pcc.conj() / magnitude);
    Ok((aligned.re, -aligned.im))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn close(a: (f64, f64), b: (f64, f64)) -> bool {
        (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12
    }

    #[test]
    fn aligned_current_is_active() {
        let got = interface_current(Complex64::new(1.0, 0.0), Complex64::new(0.5, 0.0)).unwrap();
        assert!(close(got, (0.5, 0.0)));
    }

    #[test]
    fn rotated_pair_is_unchanged() {
        let rot = Complex64::from_polar(1.0, PI / 6.0);
        let got = interface_current(rot, 0.5 * rot).unwrap();
        assert!(close(got, (0.5, 0.0)));
    }

    #[test]
    fn lagging_current_draws_reactive_power() {
        let v = Complex64::new(1.0, 0.0);
        let i = Complex64::from_polar(0.5, -PI / 2.0);
        let (ip, iq) = interface_current(v, i).unwrap();
        assert!(close((ip, iq), (0.0, 0.5)));
        let s = v * i.conj();
        assert!((s.im - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_voltage_rejected() {
        assert!(matches!(
            interface_current(Complex64::new(1e-9, 0.0), Complex64::new(1.0, 0.0)),
            Err(Error::UndefinedFrame(_))
        ));
    }

    proptest! {
        #[test]
        fn frame_invariance(angle in -PI..PI, vm in 0.5f64..1.5, ir in -2.0f64..2.0, ii in -2.0f64..2.0) {
            let v = Complex64::new(vm, 0.0);
            let i = Complex64::new(ir, ii);
            let rot = Complex64::from_polar(1.0, angle);
            let a = interface_current(v, i).unwrap();
            let b = interface_current(v * rot, i * rot).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
            // i_p |v| is the active power into the feeder.
            prop_assert!((a.0 * vm - (v * i.conj()).re).abs() < 1e-12);
        }
    }
}
