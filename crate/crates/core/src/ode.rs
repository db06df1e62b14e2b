//! Fixed-step explicit integrators over flat state vectors.

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// A first-order system `x' = f(t, x)`.
pub trait OdeSystem<T> {
    fn dim(&self) -> usize;
    fn rhs(&self, t: T, x: &[T], dx: &mut [T]);
}

impl<T, F: Fn(T, &[T], &mut [T])> OdeSystem<T> for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }

    fn rhs(&self, t: T, x: &[T], dx: &mut [T]) {
        (self.1)(t, x, dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    /// Classical fourth-order Runge-Kutta.
    #[default]
    Rk4,
    /// Explicit Euler, for cross-checks.
    Euler,
}

impl Integrator {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rk4 => "rk4",
            Self::Euler => "euler",
        }
    }
}

/// Scratch buffers for one system size, reused across steps.
#[derive(Debug, Clone)]
pub struct Stepper<T> {
    method: Integrator,
    k: [Vec<T>; 4],
    tmp: Vec<T>,
}

impl<T: Scalar> Stepper<T> {
    pub fn new(method: Integrator, dim: usize) -> Self {
        let z = vec![T::zero(); dim];
        Self {
            method,
            k: [z.clone(), z.clone(), z.clone(), z.clone()],
            tmp: z,
        }
    }

    pub fn method(&self) -> Integrator {
        self.method
    }

    /// Advances `x` from `t` to `t + h` in place.
    pub fn step<S: OdeSystem<T> + ?Sized>(&mut self, sys: &S, t: T, x: &mut [T], h: T) {
        match self.method {
            Integrator::Euler => {
                sys.rhs(t, x, &mut self.k[0]);
                for (xi, &k) in x.iter_mut().zip(&self.k[0]) {
                    *xi = *xi + h * k;
                }
            }
            Integrator::Rk4 => {
                let half = T::lit(0.5) * h;
                let sixth = h / T::lit(6.0);
                let two = T::lit(2.0);
                let [k1, k2, k3, k4] = &mut self.k;
                sys.rhs(t, x, k1);
                for ((tmp, &xi), &k) in self.tmp.iter_mut().zip(x.iter()).zip(k1.iter()) {
                    *tmp = xi + half * k;
                }
                sys.rhs(t + half, &self.tmp, k2);
                for ((tmp, &xi), &k) in self.tmp.iter_mut().zip(x.iter()).zip(k2.iter()) {
                    *tmp = xi + half * k;
                }
                sys.rhs(t + half, &self.tmp, k3);
                for ((tmp, &xi), &k) in self.tmp.iter_mut().zip(x.iter()).zip(k3.iter()) {
                    *tmp = xi + h * k;
                }
                sys.rhs(t + h, &self.tmp, k4);
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi = *xi + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
                }
            }
        }
    }
}

/// Integrates `n_steps` steps of size `h` from `(t0, x0)` and returns the final state.
pub fn integrate<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    method: Integrator,
    x0: &[T],
    t0: T,
    h: T,
    n_steps: usize,
) -> Vec<T> {
    let mut x = x0.to_vec();
    let mut stepper = Stepper::new(method, sys.dim());
    for k in 0..n_steps {
        stepper.step(sys, t0 + T::from_count(k) * h, &mut x, h);
    }
    x
}
