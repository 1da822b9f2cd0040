use crate::error::{Error, Result};

fn check(gamma: usize, gamma_max_simp: usize) -> Result<()> {
    if gamma == 0 {
        return Err(Error::InvalidInput("gamma counts from 1".into()));
    }
    if gamma_max_simp == 0 {
        return Err(Error::InvalidInput("gamma_max_simp must be at least 1".into()));
    }
    Ok(())
}

/// `(r, s)` with `max(1 - (gamma - 1) / gamma_max_simp, 0) = r / s`.
fn remaining(gamma: usize, gamma_max_simp: usize) -> (u128, u128) {
    let r = gamma_max_simp.saturating_sub(gamma - 1) as u128;
    (r, gamma_max_simp as u128)
}

/// Inner simplification steps at outer iteration `gamma`:
/// `floor(tau1 * max(1 - (gamma - 1) / gamma_max_simp, 0)^2)`, evaluated in
/// exact integer arithmetic.
pub fn plan_tau(gamma: usize, tau1: usize, gamma_max_simp: usize) -> Result<usize> {
    check(gamma, gamma_max_simp)?;
    let (r, s) = remaining(gamma, gamma_max_simp);
    Ok((tau1 as u128 * r * r / (s * s)) as usize)
}

/// Examples kept per mini-batch by easy-examples-first at iteration `gamma`:
/// the quadratic plan mirrored to grow from 1 at `gamma = 1` to `b` once the
/// horizon is passed, `min(b, 1 + floor((b - 1) * (1 - max(1 - (gamma - 1) / gms, 0)^2)))`.
pub fn plan_k(gamma: usize, b: usize, gamma_max_simp: usize) -> Result<usize> {
    check(gamma, gamma_max_simp)?;
    if b == 0 {
        return Err(Error::InvalidInput("batch size must be at least 1".into()));
    }
    let (r, s) = remaining(gamma, gamma_max_simp);
    let grown = (b as u128 - 1) * (s * s - r * r) / (s * s);
    Ok(b.min(1 + grown as usize))
}

/// Outer-iteration counter together with the plan constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    gamma: usize,
    gamma_max: usize,
    gamma_max_simp: usize,
    tau1: usize,
}

impl Schedule {
    pub fn new(gamma_max: usize, gamma_max_simp: usize, tau1: usize) -> Result<Self> {
        if gamma_max_simp == 0 || gamma_max_simp >= gamma_max {
            return Err(Error::config(
                "gamma_max_simp",
                format!("must lie in [1, {gamma_max}) for {gamma_max} iterations, got {gamma_max_simp}"),
            ));
        }
        Ok(Self {
            gamma: 1,
            gamma_max,
            gamma_max_simp,
            tau1,
        })
    }

    /// Resolves the horizon as `floor(fraction * gamma_max)`, clamped to at least 1.
    pub fn from_fraction(gamma_max: usize, fraction: f64, tau1: usize) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::config("gamma_max_simp_fraction", "must lie in (0, 1)"));
        }
        if gamma_max < 2 {
            return Err(Error::config(
                "epochs",
                format!("a developmental plan needs at least 2 iterations, got {gamma_max}"),
            ));
        }
        let gms = ((fraction * gamma_max as f64).floor() as usize).max(1);
        Self::new(gamma_max, gms, tau1)
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn gamma_max(&self) -> usize {
        self.gamma_max
    }

    pub fn gamma_max_simp(&self) -> usize {
        self.gamma_max_simp
    }

    pub fn tau1(&self) -> usize {
        self.tau1
    }

    pub fn tau(&self) -> usize {
        plan_tau(self.gamma, self.tau1, self.gamma_max_simp).expect("schedule invariants hold")
    }

    pub fn k(&self, b: usize) -> Result<usize> {
        plan_k(self.gamma, b, self.gamma_max_simp)
    }

    /// Moves to the next outer iteration; fails past `gamma_max`.
    pub fn advance(&mut self) -> Result<()> {
        if self.gamma >= self.gamma_max {
            return Err(Error::ContractViolation(format!(
                "schedule exhausted after {} iterations",
                self.gamma_max
            )));
        }
        self.gamma += 1;
        Ok(())
    }
}
