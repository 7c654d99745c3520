use crate::scalar::Scalar;
use crate::utility::UtilityFunction;

/// A nondecreasing function of wealth, as seen by the one-step problem.
pub trait ValueFn<T: Scalar>: Send + Sync {
    fn value(&self, x: T) -> T;

    /// Wealth window inside which the function is represented exactly;
    /// `None` when it is defined in closed form everywhere.
    fn window(&self) -> Option<(T, T)> {
        None
    }

    fn in_window(&self, x: T) -> bool {
        self.window().is_none_or(|(lo, hi)| x >= lo && x <= hi)
    }
}

impl<T: Scalar> ValueFn<T> for UtilityFunction<T> {
    fn value(&self, x: T) -> T {
        self.eval(x)
    }
}

/// Values of `U_t` at one node on a strictly increasing wealth grid.
///
/// Inside the grid the slice is the piecewise-linear interpolant. Outside, it
/// continues with power tails using the asymptotic-elasticity exponents,
/// `v_last (x/x_last)^γ̄` above and `v_first (x/x_first)^γ_` below, falling
/// back to the edge slope when the edge value has the wrong sign for a tail.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSlice<T> {
    grid: Vec<T>,
    values: Vec<T>,
    gamma_plus: T,
    gamma_minus: T,
}

impl<T: Scalar> ValueSlice<T> {
    pub fn new(grid: Vec<T>, values: Vec<T>, gamma_plus: T, gamma_minus: T) -> Self {
        assert!(grid.len() >= 2 && grid.len() == values.len());
        debug_assert!(grid.windows(2).all(|w| w[0] < w[1]));
        Self { grid, values, gamma_plus, gamma_minus }
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    fn edge_slope(&self, upper: bool) -> T {
        let n = self.grid.len();
        let (i, j) = if upper { (n - 2, n - 1) } else { (0, 1) };
        (self.values[j] - self.values[i]) / (self.grid[j] - self.grid[i])
    }

    /// Index `i` of the interval `[grid[i], grid[i+1]]` containing `x`.
    pub fn interval(&self, x: T) -> usize {
        let n = self.grid.len();
        self.grid.partition_point(|&g| g <= x).clamp(1, n - 1) - 1
    }

    /// A-posteriori bound on the linear-interpolation error near `x`: half the
    /// largest second difference over the triples touching its interval.
    pub fn interpolation_error(&self, x: T) -> T {
        let n = self.grid.len();
        if n < 3 {
            return T::zero();
        }
        let i = self.interval(x);
        let lo = i.saturating_sub(1).max(1);
        let hi = (i + 2).min(n - 2);
        (lo..=hi)
            .map(|k| {
                let h0 = self.grid[k] - self.grid[k - 1];
                let h1 = self.grid[k + 1] - self.grid[k];
                // Second divided difference scaled to the local spacing.
                let s0 = (self.values[k] - self.values[k - 1]) / h0;
                let s1 = (self.values[k + 1] - self.values[k]) / h1;
                (s1 - s0).abs() * h0.max(h1)
            })
            .fold(T::zero(), T::max)
            / T::lit(2.0)
    }
}

impl<T: Scalar> ValueFn<T> for ValueSlice<T> {
    fn value(&self, x: T) -> T {
        let n = self.grid.len();
        let (lo, hi) = (self.grid[0], self.grid[n - 1]);
        if x > hi {
            let v = self.values[n - 1];
            return if hi > T::zero() && v > T::zero() {
                v * (x / hi).powf(self.gamma_plus)
            } else {
                v + self.edge_slope(true) * (x - hi)
            };
        }
        if x < lo {
            let v = self.values[0];
            return if lo < T::zero() && v < T::zero() {
                v * (x / lo).powf(self.gamma_minus)
            } else {
                v + self.edge_slope(false) * (x - lo)
            };
        }
        let i = self.interval(x);
        let (x0, x1) = (self.grid[i], self.grid[i + 1]);
        let t = (x - x0) / (x1 - x0);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    fn window(&self) -> Option<(T, T)> {
        Some((self.grid[0], self.grid[self.grid.len() - 1]))
    }
}
