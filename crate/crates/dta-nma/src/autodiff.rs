//! Reverse-mode automatic differentiation on a scalar tape.
//!
//! A [`Tape`] records every elementary operation applied to [`Var`] handles
//! as a Wengert list: node values are computed eagerly during the forward
//! build, and each node stores its parents together with the local partial
//! derivatives evaluated at the forward values. A single reverse sweep
//! ([`Tape::gradient`]) then accumulates adjoints and yields the exact
//! gradient of one output with respect to all inputs in O(tape length).
//!
//! The instruction set is the small set of primitives needed by
//! binomial-logit hierarchical posteriors: arithmetic, `exp`/`ln`/`sqrt`,
//! and the logistic family (`expit`, `softplus`, `tanh`). All primitives
//! use numerically stable formulations so that densities stay finite far
//! into the tails; saturation to `-inf` is permitted and propagates as an
//! invalid (zero-probability) point rather than a panic.
//!
//! Graphs are rebuilt per evaluation. Model code holds no tape between
//! calls, so evaluators stay pure and can run concurrently on shared
//! read-only data.

/// Sentinel parent index for nodes with fewer than two parents.
const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    p0: u32,
    p1: u32,
    d0: f64,
    d1: f64,
}

/// Handle to a value on a [`Tape`]. Only valid for the tape that created it.
#[derive(Clone, Copy, Debug)]
pub struct Var(u32);

pub struct Tape {
    nodes: Vec<Node>,
    vals: Vec<f64>,
    n_inputs: usize,
}

impl Tape {
    /// Starts a tape whose first `inputs.len()` nodes are the differentiation
    /// inputs, in order.
    pub fn new(inputs: &[f64]) -> Self {
        Self::with_capacity(inputs, inputs.len() * 4)
    }

    /// Like [`Tape::new`] with a node-count hint to avoid reallocation.
    pub fn with_capacity(inputs: &[f64], capacity: usize) -> Self {
        let cap = capacity.max(inputs.len());
        let mut t = Tape {
            nodes: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
            n_inputs: inputs.len(),
        };
        for &v in inputs {
            t.push(v, NONE, 0.0, NONE, 0.0);
        }
        t
    }

    /// Handle to the `i`-th input node.
    pub fn input(&self, i: usize) -> Var {
        debug_assert!(i < self.n_inputs);
        Var(i as u32)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Current forward value of a node.
    pub fn val(&self, x: Var) -> f64 {
        self.vals[x.0 as usize]
    }

    fn push(&mut self, v: f64, p0: u32, d0: f64, p1: u32, d1: f64) -> Var {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { p0, p1, d0, d1 });
        self.vals.push(v);
        Var(id)
    }

    /// A leaf carrying a constant; its adjoint is discarded.
    pub fn constant(&mut self, c: f64) -> Var {
        self.push(c, NONE, 0.0, NONE, 0.0)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a) + self.val(b);
        self.push(v, a.0, 1.0, b.0, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a) - self.val(b);
        self.push(v, a.0, 1.0, b.0, -1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        self.push(va * vb, a.0, vb, b.0, va)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.val(a), self.val(b));
        self.push(va / vb, a.0, 1.0 / vb, b.0, -va / (vb * vb))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.val(a);
        self.push(v, a.0, -1.0, NONE, 0.0)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.val(a) + c;
        self.push(v, a.0, 1.0, NONE, 0.0)
    }

    pub fn mul_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.val(a) * c;
        self.push(v, a.0, c, NONE, 0.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.val(a).exp();
        self.push(v, a.0, v, NONE, 0.0)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let va = self.val(a);
        self.push(va.ln(), a.0, 1.0 / va, NONE, 0.0)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.val(a).sqrt();
        self.push(v, a.0, 0.5 / v, NONE, 0.0)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let va = self.val(a);
        self.push(va * va, a.0, 2.0 * va, NONE, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.val(a).tanh();
        self.push(v, a.0, 1.0 - v * v, NONE, 0.0)
    }

    /// Logistic function `1 / (1 + exp(-x))`, stable on both tails.
    pub fn expit(&mut self, a: Var) -> Var {
        let v = expit(self.val(a));
        self.push(v, a.0, v * (1.0 - v), NONE, 0.0)
    }

    /// `ln(1 + exp(x))`, stable on both tails; derivative is the logistic.
    pub fn softplus(&mut self, a: Var) -> Var {
        let va = self.val(a);
        self.push(softplus(va), a.0, expit(va), NONE, 0.0)
    }

    /// Sums a slice of vars into a balanced reduction.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        match xs.len() {
            0 => self.constant(0.0),
            1 => xs[0],
            _ => {
                let mut acc = self.add(xs[0], xs[1]);
                for &x in &xs[2..] {
                    acc = self.add(acc, x);
                }
                acc
            }
        }
    }

    /// Reverse sweep from `out`. Returns `(value, d out / d inputs)`.
    ///
    /// Adjoints of `NaN`/`inf` forward values propagate as-is; callers treat
    /// non-finite results as zero-probability points.
    pub fn gradient(&self, out: Var) -> (f64, Vec<f64>) {
        let mut adj = vec![0.0f64; self.nodes.len()];
        adj[out.0 as usize] = 1.0;
        for i in (self.n_inputs..=out.0 as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = self.nodes[i];
            if n.p0 != NONE {
                adj[n.p0 as usize] += n.d0 * a;
            }
            if n.p1 != NONE {
                adj[n.p1 as usize] += n.d1 * a;
            }
        }
        adj.truncate(self.n_inputs);
        (self.val(out), adj)
    }
}

/// Stable logistic function.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`expit`].
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Stable `ln(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
///
/// Test oracle for gradients produced by the tape; never used on the
/// sampling path.
pub fn finite_difference_gradient<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let x0 = x[i];
        xp[i] = x0 + h;
        let fp = f(&xp);
        xp[i] = x0 - h;
        let fm = f(&xp);
        xp[i] = x0;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Relative error with a unit floor, so near-zero components compare on an
/// absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
