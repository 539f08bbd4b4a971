use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConstraintId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(Var, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `u · w ≥ Σ z_k²` with `u, w ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatedCone {
    pub u: Var,
    pub w: Var,
    pub z: Vec<Var>,
}

/// A linear objective over rotated second-order cones, always minimized.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConicProgram {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    constraints: Vec<Constraint>,
    cones: Vec<RotatedCone>,
    objective: Vec<(Var, f64)>,
    objective_constant: f64,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lo: f64, hi: f64) -> Var {
        self.names.push(name.into());
        self.lower.push(lo);
        self.upper.push(hi);
        Var(self.names.len() - 1)
    }

    pub fn free_var(&mut self, name: impl Into<String>) -> Var {
        self.add_var(name, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn set_bounds(&mut self, v: Var, lo: f64, hi: f64) {
        self.lower[v.0] = lo;
        self.upper[v.0] = hi;
    }

    pub fn fix(&mut self, v: Var, value: f64) {
        self.set_bounds(v, value, value);
    }

    pub fn bounds(&self, v: Var) -> (f64, f64) {
        (self.lower[v.0], self.upper[v.0])
    }

    pub fn name(&self, v: Var) -> &str {
        &self.names[v.0]
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn cones(&self) -> &[RotatedCone] {
        &self.cones
    }

    pub fn constraint(&self, id: ConstraintId) -> &Constraint {
        &self.constraints[id.0]
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(Var, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> ConstraintId {
        self.constraints.push(Constraint { name: name.into(), terms, sense, rhs });
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn add_eq(&mut self, name: impl Into<String>, terms: Vec<(Var, f64)>, rhs: f64) -> ConstraintId {
        self.add_constraint(name, terms, Sense::Eq, rhs)
    }

    pub fn add_le(&mut self, name: impl Into<String>, terms: Vec<(Var, f64)>, rhs: f64) -> ConstraintId {
        self.add_constraint(name, terms, Sense::Le, rhs)
    }

    pub fn add_ge(&mut self, name: impl Into<String>, terms: Vec<(Var, f64)>, rhs: f64) -> ConstraintId {
        self.add_constraint(name, terms, Sense::Ge, rhs)
    }

    /// Adds `u · w ≥ Σ z²`, tightening the lower bounds of `u` and `w` to zero.
    pub fn add_rotated_cone(&mut self, u: Var, w: Var, z: Vec<Var>) {
        for v in [u, w] {
            if !(self.lower[v.0] >= 0.0) {
                self.lower[v.0] = 0.0;
            }
        }
        self.cones.push(RotatedCone { u, w, z });
    }

    pub fn set_objective(&mut self, terms: Vec<(Var, f64)>, constant: f64) {
        self.objective = terms;
        self.objective_constant = constant;
    }

    pub fn objective(&self) -> (&[(Var, f64)], f64) {
        (&self.objective, self.objective_constant)
    }

    pub fn eval_terms(terms: &[(Var, f64)], x: &[f64]) -> f64 {
        terms.iter().map(|(v, c)| c * x[v.0]).sum()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        Self::eval_terms(&self.objective, x) + self.objective_constant
    }

    /// Largest violation of any bound, linear row, or cone at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            worst = worst.max(self.lower[i] - xi).max(xi - self.upper[i]);
        }
        for c in &self.constraints {
            let lhs = Self::eval_terms(&c.terms, x);
            let v = match c.sense {
                Sense::Eq => (lhs - c.rhs).abs(),
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
            };
            worst = worst.max(v);
        }
        for k in &self.cones {
            worst = worst.max(cone_violation(k, x));
        }
        worst
    }

    /// One line per variable, constraint and cone, using the canonical names.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let term_str = |terms: &[(Var, f64)]| {
            let mut s = String::new();
            for (i, (v, c)) in terms.iter().enumerate() {
                let sign = if *c < 0.0 { "-" } else if i == 0 { "" } else { "+" };
                let sep = if i == 0 { "" } else { " " };
                let _ = write!(s, "{sep}{sign}{} {}", c.abs(), self.names[v.0]);
            }
            if s.is_empty() {
                s.push('0');
            }
            s
        };
        let _ = writeln!(out, "minimize {} + {}", term_str(&self.objective), self.objective_constant);
        for i in 0..self.names.len() {
            let _ = writeln!(out, "var {} in [{}, {}]", self.names[i], self.lower[i], self.upper[i]);
        }
        for c in &self.constraints {
            let op = match c.sense {
                Sense::Eq => "=",
                Sense::Le => "<=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(out, "{}: {} {op} {}", c.name, term_str(&c.terms), c.rhs);
        }
        for k in &self.cones {
            let zs: Vec<String> = k.z.iter().map(|z| format!("{}^2", self.names[z.0])).collect();
            let _ = writeln!(
                out,
                "cone: {} * {} >= {}",
                self.names[k.u.0],
                self.names[k.w.0],
                zs.join(" + ")
            );
        }
        out
    }
}

/// Violation of the equivalent second-order cone `‖(u − w, 2z)‖ ≤ u + w`.
pub fn cone_violation(k: &RotatedCone, x: &[f64]) -> f64 {
    let (u, w) = (x[k.u.0], x[k.w.0]);
    let mut sq = (u - w) * (u - w);
    for z in &k.z {
        sq += 4.0 * x[z.0] * x[z.0];
    }
    (sq.sqrt() - (u + w)).max(0.0)
}

/// Signed slack `u · w − Σ z²` of a rotated cone at `x`.
pub fn cone_gap(k: &RotatedCone, x: &[f64]) -> f64 {
    x[k.u.0] * x[k.w.0] - k.z.iter().map(|z| x[z.0] * x[z.0]).sum::<f64>()
}
