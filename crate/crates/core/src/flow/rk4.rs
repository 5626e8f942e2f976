use ndarray::{Array, Dimension};

use crate::{Error, Result};

/// Fixed-step classical Runge-Kutta integration of `dx/dt = field(x, t)`
/// from `t = 0` to `t = 1`.
pub fn rk4_integrate<D, F>(mut field: F, x0: &Array<f64, D>, steps: usize) -> Result<Array<f64, D>>
where
    D: Dimension,
    F: FnMut(&Array<f64, D>, f64) -> Result<Array<f64, D>>,
{
    if steps == 0 {
        return Err(Error::Argument("RK4 needs at least one step".into()));
    }
    let h = 1.0 / steps as f64;
    let mut x = x0.clone();
    for step in 0..steps {
        let t = step as f64 * h;
        let k1 = field(&x, t)?;
        let k2 = field(&(&x + &(&k1 * (h / 2.0))), t + h / 2.0)?;
        let k3 = field(&(&x + &(&k2 * (h / 2.0))), t + h / 2.0)?;
        let k4 = field(&(&x + &(&k3 * h)), t + h)?;
        x = x + (k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (h / 6.0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { step });
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1};

    #[test]
    fn constant_and_zero_fields() {
        let x0 = arr1(&[1.0, -2.0]);
        let u = arr1(&[0.5, 3.0]);
        let x = rk4_integrate(|_, _| Ok(u.clone()), &x0, 7).unwrap();
        assert!((&x - &(&x0 + &u)).iter().all(|e| e.abs() <= 1e-12));
        let z = rk4_integrate(|x: &Array1<f64>, _| Ok(Array1::zeros(x.len())), &x0, 3).unwrap();
        assert_eq!(z, x0);
    }

    #[test]
    fn exponential_growth() {
        let x0 = arr1(&[1.0, -0.3, 2.5]);
        let x = rk4_integrate(|x, _| Ok(x.clone()), &x0, 100).unwrap();
        for (a, b) in x.iter().zip(x0.iter()) {
            let want = b * std::f64::consts::E;
            assert!(((a - want) / want).abs() <= 1e-8);
        }
    }

    #[test]
    fn time_dependent_affine_field() {
        // dx/dt = 2t  =>  x(1) = x0 + 1, integrated exactly by RK4
        let x = rk4_integrate(|x: &Array1<f64>, t| Ok(Array1::from_elem(x.len(), 2.0 * t)), &arr1(&[0.25]), 10).unwrap();
        assert!((x[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn blow_up_names_the_step() {
        let r = rk4_integrate(|x: &Array1<f64>, _| Ok(x.mapv(|v| v * 1e200)), &arr1(&[1.0]), 10);
        assert!(matches!(r, Err(Error::Integration { step: 0 })) || matches!(r, Err(Error::Integration { step: 1 })));
        let nan = rk4_integrate(|x: &Array1<f64>, _| Ok(x.mapv(|_| f64::NAN)), &arr1(&[1.0]), 10);
        assert!(matches!(nan, Err(Error::Integration { step: 0 })));
    }
}
