//! Hamiltonian Monte Carlo with the No-U-Turn criterion.
//!
//! The sampler follows the multinomial formulation of Hoffman & Gelman's
//! NUTS as refined in modern implementations: trajectories double in length
//! until the generalized U-turn criterion fires, states are selected by
//! multinomial weights proportional to exp(-H), and warmup interleaves
//! dual-averaging step size adaptation with windowed estimation of a
//! diagonal mass matrix.
//!
//! Models plug in through [`Target`], which exposes the log posterior
//! density on an unconstrained space together with its gradient. Chains run
//! on separate OS threads; each chain derives its random stream purely from
//! `(seed, chain index)`, so results are reproducible regardless of
//! scheduling.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Energy error above which a leapfrog trajectory is declared divergent.
const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// A differentiable unnormalized log density on R^dim.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient of the log density at `u` into `grad` and
    /// returns the log density value. Non-finite values signal that the
    /// integrator has left the usable region; the sampler treats them as
    /// divergences rather than errors.
    fn logp_grad(&self, u: &[f64], grad: &mut [f64]) -> f64;

    /// Names for the constrained view of the parameter vector, aligned
    /// with [`Target::constrain`].
    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("u[{}]", i + 1)).collect()
    }

    /// Maps an unconstrained point to the constrained quantities that get
    /// reported. Defaults to the identity.
    fn constrain(&self, u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_samples: usize,
    /// Keep every `thin`-th post-warmup iteration.
    pub thin: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Initial points are drawn uniformly from `[-init_radius, init_radius]`
    /// in each unconstrained coordinate.
    pub init_radius: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 3,
            n_warmup: 1000,
            n_samples: 1000,
            thin: 1,
            seed: 20240901,
            target_accept: 0.8,
            max_tree_depth: 10,
            init_radius: 2.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Validation("n_chains must be at least 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::Validation("n_samples must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Validation("thin must be at least 1".into()));
        }
        if self.thin > self.n_samples {
            return Err(Error::Validation(
                "thin exceeds n_samples; no draws would be recorded".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Validation(
                "target_accept must lie strictly between 0 and 1".into(),
            ));
        }
        if self.max_tree_depth == 0 || self.max_tree_depth > 20 {
            return Err(Error::Validation(
                "max_tree_depth must be between 1 and 20".into(),
            ));
        }
        if !(self.init_radius > 0.0) || !self.init_radius.is_finite() {
            return Err(Error::Validation("init_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Posterior draws from one or more chains, plus sampler metadata.
///
/// All per-chain vectors are indexed `[chain][draw]`; recorded draws are the
/// post-thinning subset of post-warmup iterations.
#[derive(Debug, Clone)]
pub struct Draws {
    pub param_names: Vec<String>,
    pub unconstrained: Vec<Vec<Vec<f64>>>,
    pub constrained: Vec<Vec<Vec<f64>>>,
    pub log_posterior: Vec<Vec<f64>>,
    pub divergent: Vec<Vec<bool>>,
    pub tree_depth: Vec<Vec<usize>>,
    pub n_warmup: usize,
    pub thin: usize,
    pub seed: u64,
    pub step_sizes: Vec<f64>,
    pub inv_mass: Vec<Vec<f64>>,
}

impl Draws {
    pub fn n_chains(&self) -> usize {
        self.constrained.len()
    }

    /// Draws per chain (equal across chains).
    pub fn n_draws(&self) -> usize {
        self.constrained.first().map_or(0, |c| c.len())
    }

    pub fn n_total(&self) -> usize {
        self.n_chains() * self.n_draws()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    /// One constrained parameter pooled across chains, chain-major order.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.constrained
            .iter()
            .flat_map(|chain| chain.iter().map(move |row| row[param]))
            .collect()
    }

    /// Per-chain series of one constrained parameter.
    pub fn chains_of(&self, param: usize) -> Vec<Vec<f64>> {
        self.constrained
            .iter()
            .map(|chain| chain.iter().map(|row| row[param]).collect())
            .collect()
    }

    pub fn divergence_count(&self) -> usize {
        self.divergent
            .iter()
            .map(|c| c.iter().filter(|&&d| d).count())
            .sum()
    }

    pub fn divergence_rate(&self) -> f64 {
        let total = self.n_total();
        if total == 0 {
            0.0
        } else {
            self.divergence_count() as f64 / total as f64
        }
    }
}

/// Subsets already-recorded draws, keeping indices 0, `every`, `2*every`,
/// ... within each chain. With `n` draws per chain this leaves
/// `ceil(n / every)` of them.
pub fn thin_draws(draws: &Draws, every: usize) -> Result<Draws> {
    if every == 0 {
        return Err(Error::Validation("thinning interval must be at least 1".into()));
    }
    fn take<T: Clone>(v: &[T], every: usize) -> Vec<T> {
        v.iter().step_by(every).cloned().collect()
    }
    Ok(Draws {
        param_names: draws.param_names.clone(),
        unconstrained: draws.unconstrained.iter().map(|c| take(c, every)).collect(),
        constrained: draws.constrained.iter().map(|c| take(c, every)).collect(),
        log_posterior: draws.log_posterior.iter().map(|c| take(c, every)).collect(),
        divergent: draws.divergent.iter().map(|c| take(c, every)).collect(),
        tree_depth: draws.tree_depth.iter().map(|c| take(c, every)).collect(),
        n_warmup: draws.n_warmup,
        thin: draws.thin * every,
        seed: draws.seed,
        step_sizes: draws.step_sizes.clone(),
        inv_mass: draws.inv_mass.clone(),
    })
}

// Deterministic per-chain stream: splitmix64 finalizer over a combination
// of the user seed and the chain index.
fn chain_seed(seed: u64, chain: u64) -> u64 {
    let mut x = seed ^ chain.wrapping_mul(0x9e3779b97f4a7c15);
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

#[derive(Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

#[derive(Clone)]
struct Proposal {
    q: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Tree {
    /// Earliest state in trajectory time.
    bck: State,
    /// Latest state in trajectory time.
    fwd: State,
    prop: Proposal,
    log_sum_w: f64,
    /// Sum of momenta over the subtree.
    rho: Vec<f64>,
    sum_alpha: f64,
    n_alpha: usize,
    divergent: bool,
    turning: bool,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(inv_mass)
        .map(|(pi, mi)| pi * pi * mi)
        .sum::<f64>()
}

// Momentum-weighted inner product used by the U-turn criterion:
// p_end' M^{-1} rho.
fn turn_dot(p_end: &[f64], rho: &[f64], inv_mass: &[f64]) -> f64 {
    p_end
        .iter()
        .zip(rho)
        .zip(inv_mass)
        .map(|((pe, r), mi)| pe * mi * r)
        .sum()
}

// Generalized U-turn test for a joined pair of subtrees (left earlier in
// time). Checks the combined trajectory and both junction overlaps; any
// failure flags a turn.
fn joined_turning(left: &Tree, right: &Tree, inv_mass: &[f64]) -> bool {
    let dim = inv_mass.len();
    let mut rho_full = vec![0.0; dim];
    let mut rho_l_jr = vec![0.0; dim];
    let mut rho_jl_r = vec![0.0; dim];
    for i in 0..dim {
        rho_full[i] = left.rho[i] + right.rho[i];
        rho_l_jr[i] = left.rho[i] + right.bck.p[i];
        rho_jl_r[i] = left.fwd.p[i] + right.rho[i];
    }
    let ok_full = turn_dot(&left.bck.p, &rho_full, inv_mass) > 0.0
        && turn_dot(&right.fwd.p, &rho_full, inv_mass) > 0.0;
    let ok_l = turn_dot(&left.bck.p, &rho_l_jr, inv_mass) > 0.0
        && turn_dot(&right.bck.p, &rho_l_jr, inv_mass) > 0.0;
    let ok_r = turn_dot(&left.fwd.p, &rho_jl_r, inv_mass) > 0.0
        && turn_dot(&right.fwd.p, &rho_jl_r, inv_mass) > 0.0;
    !(ok_full && ok_l && ok_r)
}

struct Integrator<'a, T: Target + ?Sized> {
    target: &'a T,
    inv_mass: &'a [f64],
    h0: f64,
}

impl<'a, T: Target + ?Sized> Integrator<'a, T> {
    fn leapfrog(&self, from: &State, eps: f64) -> State {
        let dim = from.q.len();
        let mut p = from.p.clone();
        for i in 0..dim {
            p[i] += 0.5 * eps * from.grad[i];
        }
        let mut q = from.q.clone();
        for i in 0..dim {
            q[i] += eps * self.inv_mass[i] * p[i];
        }
        let mut grad = vec![0.0; dim];
        let logp = if q.iter().all(|v| v.is_finite()) {
            self.target.logp_grad(&q, &mut grad)
        } else {
            f64::NEG_INFINITY
        };
        if logp.is_finite() {
            for i in 0..dim {
                p[i] += 0.5 * eps * grad[i];
            }
        }
        State { q, p, grad, logp }
    }

    fn energy(&self, s: &State) -> f64 {
        -s.logp + kinetic(&s.p, self.inv_mass)
    }

    fn leaf(&self, from: &State, eps: f64) -> Tree {
        let s = self.leapfrog(from, eps);
        let h = self.energy(&s);
        let delta = h - self.h0; // energy error, positive = worse
        let divergent = !delta.is_finite() || delta > DIVERGENCE_THRESHOLD;
        let log_w = if delta.is_finite() { -delta } else { f64::NEG_INFINITY };
        let alpha = if delta.is_finite() {
            (-delta).exp().min(1.0)
        } else {
            0.0
        };
        Tree {
            prop: Proposal {
                q: s.q.clone(),
                grad: s.grad.clone(),
                logp: s.logp,
            },
            rho: s.p.clone(),
            bck: s.clone(),
            fwd: s,
            log_sum_w: log_w,
            sum_alpha: alpha,
            n_alpha: 1,
            divergent,
            turning: false,
        }
    }

    /// Builds a subtree of `2^depth` states extending from `from` in the
    /// given direction (`eps` carries the sign). Returned trees are
    /// normalized to trajectory time order.
    fn build_tree(&self, depth: usize, from: &State, eps: f64, rng: &mut ChaCha8Rng) -> Tree {
        if depth == 0 {
            return self.leaf(from, eps);
        }
        let first = self.build_tree(depth - 1, from, eps, rng);
        if first.divergent || first.turning {
            return first;
        }
        let grow_from = if eps > 0.0 { &first.fwd } else { &first.bck };
        let second = self.build_tree(depth - 1, grow_from, eps, rng);
        let (mut left, mut right) = if eps > 0.0 {
            (first, second)
        } else {
            (second, first)
        };
        // When integrating backwards the freshly built half is `left`; its
        // statistics merge the same way either direction.
        let sum_alpha = left.sum_alpha + right.sum_alpha;
        let n_alpha = left.n_alpha + right.n_alpha;
        let fresh_invalid = if eps > 0.0 {
            right.divergent || right.turning
        } else {
            left.divergent || left.turning
        };
        if fresh_invalid {
            let mut bad = if eps > 0.0 { right } else { left };
            bad.sum_alpha = sum_alpha;
            bad.n_alpha = n_alpha;
            return bad;
        }
        let log_sum_w = log_sum_exp(left.log_sum_w, right.log_sum_w);
        // Unbiased multinomial selection between the two halves.
        let fresh_lw = if eps > 0.0 { right.log_sum_w } else { left.log_sum_w };
        let take_fresh = {
            let pr = (fresh_lw - log_sum_w).exp();
            rng.random::<f64>() < pr
        };
        let prop = if take_fresh == (eps > 0.0) {
            std::mem::replace(&mut right.prop, Proposal {
                q: Vec::new(),
                grad: Vec::new(),
                logp: 0.0,
            })
        } else {
            std::mem::replace(&mut left.prop, Proposal {
                q: Vec::new(),
                grad: Vec::new(),
                logp: 0.0,
            })
        };
        let turning = joined_turning(&left, &right, self.inv_mass);
        let mut rho = left.rho;
        for i in 0..rho.len() {
            rho[i] += right.rho[i];
        }
        Tree {
            bck: left.bck,
            fwd: right.fwd,
            prop,
            log_sum_w,
            rho,
            sum_alpha,
            n_alpha,
            divergent: false,
            turning,
        }
    }
}

struct IterationResult {
    prop: Proposal,
    divergent: bool,
    depth: usize,
    accept_stat: f64,
}

fn nuts_iteration<T: Target + ?Sized>(
    target: &T,
    q: &[f64],
    grad: &[f64],
    logp: f64,
    eps: f64,
    inv_mass: &[f64],
    max_depth: usize,
    rng: &mut ChaCha8Rng,
) -> IterationResult {
    let dim = q.len();
    let p: Vec<f64> = (0..dim)
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            z / inv_mass[i].sqrt()
        })
        .collect();
    let start = State {
        q: q.to_vec(),
        p,
        grad: grad.to_vec(),
        logp,
    };
    let integ = Integrator {
        target,
        inv_mass,
        h0: -logp + kinetic(&start.p, inv_mass),
    };
    let mut tree = Tree {
        prop: Proposal {
            q: start.q.clone(),
            grad: start.grad.clone(),
            logp: start.logp,
        },
        rho: start.p.clone(),
        bck: start.clone(),
        fwd: start,
        log_sum_w: 0.0,
        sum_alpha: 0.0,
        n_alpha: 0,
        divergent: false,
        turning: false,
    };
    let mut divergent = false;
    let mut depth = 0;
    while depth < max_depth {
        let forward = rng.random::<bool>();
        let eps_signed = if forward { eps } else { -eps };
        let from = if forward { tree.fwd.clone() } else { tree.bck.clone() };
        let sub = integ.build_tree(depth, &from, eps_signed, rng);
        tree.sum_alpha += sub.sum_alpha;
        tree.n_alpha += sub.n_alpha;
        if sub.divergent {
            divergent = true;
            break;
        }
        if sub.turning {
            break;
        }
        // Biased progressive selection favouring the fresh subtree.
        let pr = (sub.log_sum_w - tree.log_sum_w).exp().min(1.0);
        let take = rng.random::<f64>() < pr;
        let (left, right) = if forward {
            (&tree, &sub)
        } else {
            (&sub, &tree)
        };
        let turned = joined_turning(left, right, inv_mass);
        if take {
            tree.prop = sub.prop;
        }
        tree.log_sum_w = log_sum_exp(tree.log_sum_w, sub.log_sum_w);
        for i in 0..tree.rho.len() {
            tree.rho[i] += sub.rho[i];
        }
        if forward {
            tree.fwd = sub.fwd;
        } else {
            tree.bck = sub.bck;
        }
        depth += 1;
        if turned {
            break;
        }
    }
    let accept_stat = if tree.n_alpha > 0 {
        tree.sum_alpha / tree.n_alpha as f64
    } else {
        0.0
    };
    IterationResult {
        prop: tree.prop,
        divergent,
        depth,
        accept_stat,
    }
}

/// Nesterov dual averaging on the log step size.
struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: eps0.ln(),
            h_bar: 0.0,
            m: 0.0,
            target,
        }
    }

    fn update(&mut self, accept_stat: f64) {
        let a = if accept_stat.is_finite() { accept_stat } else { 0.0 };
        self.m += 1.0;
        let w = 1.0 / (self.m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - a);
        self.log_eps = self.mu - self.m.sqrt() / Self::GAMMA * self.h_bar;
        self.log_eps = self.log_eps.clamp(-30.0, 30.0);
        let x = self.m.powf(-Self::KAPPA);
        self.log_eps_bar = x * self.log_eps + (1.0 - x) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Online mean/variance accumulator.
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Regularized variance estimate, shrunk toward a small constant the
    /// same way mature HMC implementations do.
    fn regularized_variance(&self) -> Option<Vec<f64>> {
        if self.n < 3.0 {
            return None;
        }
        let w = self.n / (self.n + 5.0);
        Some(
            self.m2
                .iter()
                .map(|m2| {
                    let var = m2 / (self.n - 1.0);
                    (w * var + 1e-3 * (1.0 - w)).max(1e-10)
                })
                .collect(),
        )
    }
}

/// Warmup phase layout: a settling buffer, doubling mass-estimation
/// windows, and a terminal step-size-only buffer.
struct AdaptSchedule {
    init_end: usize,
    window_ends: Vec<usize>,
    n_warmup: usize,
}

impl AdaptSchedule {
    const BASE_WINDOW: usize = 25;

    fn new(n_warmup: usize) -> Self {
        let init_end = (0.15 * n_warmup as f64) as usize;
        let term_start = n_warmup - (0.10 * n_warmup as f64) as usize;
        let mut window_ends = Vec::new();
        if term_start > init_end && term_start - init_end >= Self::BASE_WINDOW {
            let mut w = Self::BASE_WINDOW;
            let mut cur = init_end;
            loop {
                let mut end = cur + w;
                // absorb the remainder if the next doubling would not fit
                if end + 2 * w > term_start {
                    end = term_start;
                }
                window_ends.push(end.min(term_start));
                if end >= term_start {
                    break;
                }
                cur = end;
                w *= 2;
            }
        }
        AdaptSchedule {
            init_end,
            window_ends,
            n_warmup,
        }
    }

    fn collecting(&self, iter: usize) -> bool {
        !self.window_ends.is_empty()
            && iter >= self.init_end
            && iter < *self.window_ends.last().unwrap()
            && iter < self.n_warmup
    }
}

struct ChainOutput {
    unconstrained: Vec<Vec<f64>>,
    constrained: Vec<Vec<f64>>,
    log_posterior: Vec<f64>,
    divergent: Vec<bool>,
    tree_depth: Vec<usize>,
    step_size: f64,
    inv_mass: Vec<f64>,
}

fn find_reasonable_epsilon<T: Target + ?Sized>(
    target: &T,
    q: &[f64],
    grad: &[f64],
    logp: f64,
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let dim = q.len();
    let p: Vec<f64> = (0..dim)
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            z / inv_mass[i].sqrt()
        })
        .collect();
    let start = State {
        q: q.to_vec(),
        p,
        grad: grad.to_vec(),
        logp,
    };
    let integ = Integrator {
        target,
        inv_mass,
        h0: 0.0,
    };
    let h0 = integ.energy(&start);
    let mut eps = 1.0;
    let log_ratio_at = |integ: &Integrator<T>, eps: f64| -> f64 {
        let s = integ.leapfrog(&start, eps);
        let h = integ.energy(&s);
        if h.is_finite() {
            h0 - h
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut lr = log_ratio_at(&integ, eps);
    let dir: f64 = if lr > (0.5f64).ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        if dir * lr <= dir * (0.5f64).ln() {
            break;
        }
        eps *= (2.0f64).powf(dir);
        if !(1e-10..=1e10).contains(&eps) {
            break;
        }
        lr = log_ratio_at(&integ, eps);
    }
    eps.clamp(1e-10, 1e10)
}

fn init_chain<T: Target + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let dim = target.dim();
    let r = cfg.init_radius;
    let mut grad = vec![0.0; dim];
    for _ in 0..100 {
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-r..=r)).collect();
        let logp = target.logp_grad(&q, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok((q, grad, logp));
        }
    }
    Err(Error::Init(format!(
        "chain {chain}: no initial point with finite log density and gradient \
         after 100 draws from [-{r}, {r}]"
    )))
}

fn run_single_chain<T: Target + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(chain_seed(cfg.seed, chain as u64));
    let (mut q, mut grad, mut logp) = init_chain(target, cfg, chain, &mut rng)?;
    let mut inv_mass = vec![1.0; dim];

    let schedule = AdaptSchedule::new(cfg.n_warmup);
    let mut window_idx = 0usize;
    let mut welford = Welford::new(dim);
    let eps0 = find_reasonable_epsilon(target, &q, &grad, logp, &inv_mass, &mut rng);
    let mut da = DualAveraging::new(eps0, cfg.target_accept);

    for m in 0..cfg.n_warmup {
        let res = nuts_iteration(
            target,
            &q,
            &grad,
            logp,
            da.current(),
            &inv_mass,
            cfg.max_tree_depth,
            &mut rng,
        );
        q = res.prop.q;
        grad = res.prop.grad;
        logp = res.prop.logp;
        da.update(res.accept_stat);
        if schedule.collecting(m) {
            welford.push(&q);
        }
        if window_idx < schedule.window_ends.len() && m + 1 == schedule.window_ends[window_idx] {
            if let Some(var) = welford.regularized_variance() {
                inv_mass = var;
            }
            welford = Welford::new(dim);
            window_idx += 1;
            let eps0 = find_reasonable_epsilon(target, &q, &grad, logp, &inv_mass, &mut rng);
            da = DualAveraging::new(eps0, cfg.target_accept);
        }
    }

    let eps = if cfg.n_warmup > 0 { da.adapted() } else { da.current() };
    let n_rec = cfg.n_samples / cfg.thin;
    let mut out = ChainOutput {
        unconstrained: Vec::with_capacity(n_rec),
        constrained: Vec::with_capacity(n_rec),
        log_posterior: Vec::with_capacity(n_rec),
        divergent: Vec::with_capacity(n_rec),
        tree_depth: Vec::with_capacity(n_rec),
        step_size: eps,
        inv_mass: inv_mass.clone(),
    };
    for s in 0..cfg.n_samples {
        let res = nuts_iteration(
            target,
            &q,
            &grad,
            logp,
            eps,
            &inv_mass,
            cfg.max_tree_depth,
            &mut rng,
        );
        q = res.prop.q;
        grad = res.prop.grad;
        logp = res.prop.logp;
        if (s + 1) % cfg.thin == 0 {
            out.unconstrained.push(q.clone());
            out.constrained.push(target.constrain(&q));
            out.log_posterior.push(logp);
            out.divergent.push(res.divergent);
            out.tree_depth.push(res.depth);
        }
    }
    Ok(out)
}

/// Runs `cfg.n_chains` NUTS chains in parallel and collects their draws.
///
/// Each chain's random stream depends only on `(cfg.seed, chain index)`, so
/// repeated calls with the same configuration reproduce results exactly.
pub fn run_chains<T: Target + ?Sized>(target: &T, cfg: &SamplerConfig) -> Result<Draws> {
    cfg.validate()?;
    if target.dim() == 0 {
        return Err(Error::Validation("target has no parameters".into()));
    }
    let results: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.n_chains)
            .map(|c| scope.spawn(move || run_single_chain(target, cfg, c)))
            .collect();
        handles
            .into_iter()
            .map(|h| match h.join() {
                Ok(r) => r,
                Err(_) => Err(Error::Init("a sampler thread panicked".into())),
            })
            .collect()
    });
    let mut chains = Vec::with_capacity(cfg.n_chains);
    for r in results {
        chains.push(r?);
    }
    Ok(Draws {
        param_names: target.param_names(),
        unconstrained: chains.iter().map(|c| c.unconstrained.clone()).collect(),
        constrained: chains.iter().map(|c| c.constrained.clone()).collect(),
        log_posterior: chains.iter().map(|c| c.log_posterior.clone()).collect(),
        divergent: chains.iter().map(|c| c.divergent.clone()).collect(),
        tree_depth: chains.iter().map(|c| c.tree_depth.clone()).collect(),
        n_warmup: cfg.n_warmup,
        thin: cfg.thin,
        seed: cfg.seed,
        step_sizes: chains.iter().map(|c| c.step_size).collect(),
        inv_mass: chains.iter().map(|c| c.inv_mass.clone()).collect(),
    })
}

// ---------------------------------------------------------------------------
// Convergence diagnostics
// ---------------------------------------------------------------------------

/// Splits each chain in half (dropping the middle element of odd-length
/// chains) so that within-chain drift shows up as between-chain variance.
fn split_halves(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut halves = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let h = c.len() / 2;
        halves.push(&c[..h]);
        halves.push(&c[c.len() - h..]);
    }
    halves
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

struct PooledVariance {
    w: f64,
    var_plus: f64,
    n: usize,
    m: usize,
}

fn pooled_variance(halves: &[&[f64]]) -> PooledVariance {
    let m = halves.len();
    let n = halves[0].len();
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let vars: Vec<f64> = halves.iter().zip(&means).map(|(h, &mu)| sample_var(h, mu)).collect();
    let w = mean(&vars);
    let grand = mean(&means);
    let b_over_n = sample_var(&means, grand); // = B / n
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    PooledVariance { w, var_plus, n, m }
}

/// Split-chain potential scale reduction factor.
///
/// Chains that are each constant but disagree give infinity; chains that
/// are constant and identical give exactly 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves = split_halves(chains);
    let pv = pooled_variance(&halves);
    if pv.w == 0.0 {
        let grand = mean(&halves.iter().map(|h| mean(h)).collect::<Vec<_>>());
        let b: f64 = halves.iter().map(|h| (mean(h) - grand).powi(2)).sum();
        return if b > 0.0 { f64::INFINITY } else { 1.0 };
    }
    (pv.var_plus / pv.w).sqrt()
}

// Biased (1/n) autocovariance of one series at lag t.
fn autocov_at(x: &[f64], mu: f64, t: usize) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n - t {
        s += (x[i] - mu) * (x[i + t] - mu);
    }
    s / n as f64
}

/// Effective sample size via Geyer's initial monotone sequence over paired
/// autocorrelations, computed lag by lag on split chains. The estimate is
/// capped at 1.25 times the actual number of draws, which slightly
/// antithetic chains can otherwise exceed.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let halves = split_halves(chains);
    let pv = pooled_variance(&halves);
    let total = (pv.m * pv.n) as f64;
    if pv.var_plus <= 0.0 || pv.w == 0.0 {
        return total;
    }
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let rho = |t: usize| -> f64 {
        let acov = halves
            .iter()
            .zip(&means)
            .map(|(h, &mu)| autocov_at(h, mu, t))
            .sum::<f64>()
            / pv.m as f64;
        1.0 - (pv.w - acov) / pv.var_plus
    };
    let max_lag = pv.n.saturating_sub(2);
    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0usize;
    loop {
        let t_even = 2 * k;
        let t_odd = 2 * k + 1;
        if t_odd > max_lag {
            break;
        }
        let r_even = if t_even == 0 { 1.0 } else { rho(t_even) };
        let r_odd = rho(t_odd);
        let mut pair = r_even + r_odd;
        if !pair.is_finite() || pair <= 0.0 {
            break;
        }
        // Geyer monotone correction
        pair = pair.min(prev);
        sum_pairs += pair;
        prev = pair;
        k += 1;
    }
    let tau = (2.0 * sum_pairs - 1.0).max(1.0 / 1.25);
    (total / tau).min(1.25 * total)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub rhat: f64,
    pub n_eff: f64,
    pub mcse: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Diagnostics {
    pub params: Vec<ParamDiagnostics>,
    pub max_rhat: f64,
    pub min_n_eff: f64,
    /// True when every parameter's split R-hat is at most 1.1.
    pub all_rhat_ok: bool,
    pub n_divergent: usize,
    pub divergence_rate: f64,
    pub n_chains: usize,
    pub n_draws_per_chain: usize,
}

impl Diagnostics {
    pub fn for_param(&self, name: &str) -> Option<&ParamDiagnostics> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Per-parameter convergence summary over the constrained draws, plus a row
/// for the log posterior under the name `lp`.
///
/// Requires at least 2 chains and 4 draws per chain; anything less cannot
/// support a split-chain comparison.
pub fn diagnostics(draws: &Draws) -> Result<Diagnostics> {
    if draws.n_chains() < 2 {
        return Err(Error::Diagnostics(format!(
            "convergence diagnostics need at least 2 chains, got {}",
            draws.n_chains()
        )));
    }
    if draws.n_draws() < 4 {
        return Err(Error::Diagnostics(format!(
            "convergence diagnostics need at least 4 draws per chain, got {}",
            draws.n_draws()
        )));
    }
    let mut params = Vec::with_capacity(draws.param_names.len() + 1);
    let mut push = |name: String, chains: Vec<Vec<f64>>| {
        let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        let mu = mean(&pooled);
        let halves = split_halves(&chains);
        let pv = pooled_variance(&halves);
        let sd = pv.var_plus.max(0.0).sqrt();
        let rhat = split_rhat(&chains);
        let n_eff = effective_sample_size(&chains);
        let mcse = if n_eff > 0.0 { sd / n_eff.sqrt() } else { f64::INFINITY };
        params.push(ParamDiagnostics {
            name,
            mean: mu,
            sd,
            rhat,
            n_eff,
            mcse,
        });
    };
    for (idx, name) in draws.param_names.iter().enumerate() {
        push(name.clone(), draws.chains_of(idx));
    }
    push("lp".to_string(), draws.log_posterior.clone());
    let max_rhat = params
        .iter()
        .map(|p| p.rhat)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_n_eff = params.iter().map(|p| p.n_eff).fold(f64::INFINITY, f64::min);
    let all_rhat_ok = params.iter().all(|p| p.rhat <= 1.1);
    Ok(Diagnostics {
        params,
        max_rhat,
        min_n_eff,
        all_rhat_ok,
        n_divergent: draws.divergence_count(),
        divergence_rate: draws.divergence_rate(),
        n_chains: draws.n_chains(),
        n_draws_per_chain: draws.n_draws(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal {
        dim: usize,
    }

    impl Target for StdNormal {
        fn dim(&self) -> usize {
            self.dim
        }
        fn logp_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for i in 0..u.len() {
                grad[i] = -u[i];
                lp -= 0.5 * u[i] * u[i];
            }
            lp
        }
    }

    // Bivariate normal, unit variances, correlation 0.8.
    struct Correlated;

    impl Target for Correlated {
        fn dim(&self) -> usize {
            2
        }
        fn logp_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
            let r = 0.8;
            let d = 1.0 - r * r;
            let (x, y) = (u[0], u[1]);
            grad[0] = -(x - r * y) / d;
            grad[1] = -(y - r * x) / d;
            -0.5 * (x * x - 2.0 * r * x * y + y * y) / d
        }
    }

    // Uniform(0, 5) scale expressed through its unconstrained density:
    // sigma = 5 * expit(u), log density = log |d sigma / d u|.
    struct UniformScale;

    impl Target for UniformScale {
        fn dim(&self) -> usize {
            1
        }
        fn logp_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
            let e = crate::autodiff::expit(u[0]);
            grad[0] = 1.0 - 2.0 * e;
            (5.0f64).ln() - crate::autodiff::softplus(u[0]) - crate::autodiff::softplus(-u[0])
        }
        fn constrain(&self, u: &[f64]) -> Vec<f64> {
            vec![5.0 * crate::autodiff::expit(u[0])]
        }
        fn param_names(&self) -> Vec<String> {
            vec!["sigma".into()]
        }
    }

    // Standard normal with an energy cliff outside |u| < 2: crossing the
    // boundary costs 1e6 in energy, which must register as a divergence and
    // never be accepted.
    struct Cliff;

    impl Target for Cliff {
        fn dim(&self) -> usize {
            1
        }
        fn logp_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
            grad[0] = -u[0];
            let mut lp = -0.5 * u[0] * u[0];
            if u[0].abs() > 2.0 {
                lp -= 1e6;
            }
            lp
        }
    }

    fn quick_config(seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_chains: 4,
            n_warmup: 500,
            n_samples: 1000,
            seed,
            ..SamplerConfig::default()
        }
    }

    fn corrcoef(x: &[f64], y: &[f64]) -> f64 {
        let mx = mean(x);
        let my = mean(y);
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn standard_normal_moments() {
        let draws = run_chains(&StdNormal { dim: 1 }, &quick_config(11)).unwrap();
        let x = draws.pooled(0);
        let m = mean(&x);
        let v = sample_var(&x, m);
        assert!(m.abs() < 0.05, "mean {m}");
        assert!((v - 1.0).abs() < 0.1, "var {v}");
        assert!(draws.divergence_rate() < 0.01);
    }

    #[test]
    fn correlated_normal_recovers_correlation() {
        let draws = run_chains(&Correlated, &quick_config(13)).unwrap();
        let x = draws.pooled(0);
        let y = draws.pooled(1);
        let r = corrcoef(&x, &y);
        assert!((r - 0.8).abs() < 0.05, "corr {r}");
    }

    #[test]
    fn same_seed_reproduces_bit_identical_draws() {
        let a = run_chains(&Correlated, &quick_config(17)).unwrap();
        let b = run_chains(&Correlated, &quick_config(17)).unwrap();
        assert_eq!(a.unconstrained, b.unconstrained);
        assert_eq!(a.log_posterior, b.log_posterior);
        assert_eq!(a.divergent, b.divergent);
        let c = run_chains(&Correlated, &quick_config(18)).unwrap();
        assert_ne!(a.unconstrained, c.unconstrained);
    }

    #[test]
    fn chains_use_distinct_streams() {
        let draws = run_chains(&StdNormal { dim: 1 }, &quick_config(19)).unwrap();
        let c0: Vec<f64> = draws.constrained[0].iter().map(|r| r[0]).collect();
        let c1: Vec<f64> = draws.constrained[1].iter().map(|r| r[0]).collect();
        assert!(corrcoef(&c0, &c1).abs() < 0.05);
    }

    #[test]
    fn sampled_distribution_matches_normal_cdf() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let cfg = SamplerConfig {
            n_chains: 4,
            n_warmup: 500,
            n_samples: 2500,
            seed: 23,
            ..SamplerConfig::default()
        };
        let draws = run_chains(&StdNormal { dim: 1 }, &cfg).unwrap();
        let mut x = draws.pooled(0);
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = x.len() as f64;
        let std_norm = Normal::new(0.0, 1.0).unwrap();
        let mut ks = 0.0f64;
        for (i, v) in x.iter().enumerate() {
            let f = std_norm.cdf(*v);
            let d1 = ((i + 1) as f64 / n - f).abs();
            let d2 = (f - i as f64 / n).abs();
            ks = ks.max(d1).max(d2);
        }
        assert!(ks < 0.03, "KS statistic {ks}");
    }

    // The Jacobian-only target must give a flat histogram on (0, 5):
    // chi-squared over 10 equal bins below the 0.999 critical value for 9
    // degrees of freedom.
    #[test]
    fn jacobian_target_samples_uniformly() {
        let cfg = SamplerConfig {
            n_chains: 4,
            n_warmup: 500,
            n_samples: 2500,
            seed: 29,
            ..SamplerConfig::default()
        };
        let draws = run_chains(&UniformScale, &cfg).unwrap();
        let sigma = draws.pooled(0);
        let mut counts = [0usize; 10];
        for s in &sigma {
            assert!(*s > 0.0 && *s < 5.0);
            let b = ((s / 0.5) as usize).min(9);
            counts[b] += 1;
        }
        let expected = sigma.len() as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 27.877, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn cliff_divergences_are_flagged_and_rejected() {
        let cfg = SamplerConfig {
            n_chains: 2,
            ..quick_config(31)
        };
        let draws = run_chains(&Cliff, &cfg).unwrap();
        assert!(draws.divergence_count() > 0, "expected divergences at the cliff");
        for chain in &draws.unconstrained {
            for row in chain {
                assert!(row[0].abs() <= 2.0, "accepted a state beyond the cliff");
            }
        }
    }

    #[test]
    fn tree_depth_respects_maximum() {
        let cfg = SamplerConfig {
            max_tree_depth: 3,
            ..quick_config(37)
        };
        let draws = run_chains(&StdNormal { dim: 5 }, &cfg).unwrap();
        for chain in &draws.tree_depth {
            assert!(chain.iter().all(|&d| d <= 3));
        }
    }

    #[test]
    fn recording_thin_keeps_every_kth_iteration() {
        let base = quick_config(41);
        let thinned_cfg = SamplerConfig {
            thin: 4,
            ..base.clone()
        };
        let full = run_chains(&StdNormal { dim: 1 }, &base).unwrap();
        let thinned = run_chains(&StdNormal { dim: 1 }, &thinned_cfg).unwrap();
        assert_eq!(thinned.n_draws(), base.n_samples / 4);
        // identical streams, so the thinned run must reproduce iterations
        // 4, 8, 12, ... of the full run
        for c in 0..base.n_chains {
            for (i, row) in thinned.unconstrained[c].iter().enumerate() {
                assert_eq!(row, &full.unconstrained[c][4 * (i + 1) - 1]);
            }
        }
    }

    #[test]
    fn thin_draws_keeps_first_then_every_nth() {
        let draws = run_chains(
            &StdNormal { dim: 1 },
            &SamplerConfig {
                n_chains: 2,
                n_warmup: 100,
                n_samples: 10,
                seed: 43,
                ..SamplerConfig::default()
            },
        )
        .unwrap();
        let t = thin_draws(&draws, 4).unwrap();
        assert_eq!(t.n_draws(), 3); // indices 0, 4, 8
        for c in 0..2 {
            assert_eq!(t.unconstrained[c][0], draws.unconstrained[c][0]);
            assert_eq!(t.unconstrained[c][1], draws.unconstrained[c][4]);
            assert_eq!(t.unconstrained[c][2], draws.unconstrained[c][8]);
        }
        assert_eq!(t.thin, 4);
        assert!(thin_draws(&draws, 0).is_err());
    }

    fn synthetic_draws(chains: Vec<Vec<f64>>) -> Draws {
        Draws {
            param_names: vec!["x".into()],
            unconstrained: chains
                .iter()
                .map(|c| c.iter().map(|&v| vec![v]).collect())
                .collect(),
            constrained: chains
                .iter()
                .map(|c| c.iter().map(|&v| vec![v]).collect())
                .collect(),
            log_posterior: chains.iter().map(|c| vec![0.0; c.len()]).collect(),
            divergent: chains.iter().map(|c| vec![false; c.len()]).collect(),
            tree_depth: chains.iter().map(|c| vec![1; c.len()]).collect(),
            n_warmup: 0,
            thin: 1,
            seed: 0,
            step_sizes: vec![1.0; chains.len()],
            inv_mass: vec![vec![1.0]; chains.len()],
        }
    }

    fn iid_chains(seed: u64, m: usize, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn iid_chains_have_rhat_near_one() {
        let chains = iid_chains(7, 4, 500);
        let r = split_rhat(&chains);
        assert!(r >= 0.99 && r < 1.02, "rhat {r}");
    }

    #[test]
    fn shifted_chain_inflates_rhat() {
        let mut chains = iid_chains(9, 4, 500);
        for v in chains[0].iter_mut() {
            *v += 3.0;
        }
        assert!(split_rhat(&chains) > 1.5);
    }

    #[test]
    fn constant_disagreeing_chains_give_infinite_rhat() {
        let chains = vec![vec![1.0; 50], vec![2.0; 50]];
        assert!(split_rhat(&chains).is_infinite());
        let same = vec![vec![1.0; 50], vec![1.0; 50]];
        assert_eq!(split_rhat(&same), 1.0);
    }

    #[test]
    fn iid_effective_sample_size_near_total() {
        let chains = iid_chains(11, 4, 500);
        let ess = effective_sample_size(&chains);
        let total = 2000.0;
        assert!((ess - total).abs() / total < 0.15, "ess {ess}");
    }

    #[test]
    fn autocorrelated_chain_shrinks_ess_and_thinning_restores_it() {
        let phi: f64 = 0.9;
        let innov = (1.0 - phi * phi).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = 4;
        let n = 2000;
        let chains: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let mut x = vec![0.0f64; n];
                for t in 1..n {
                    let z: f64 = rng.sample(StandardNormal);
                    x[t] = phi * x[t - 1] + innov * z;
                }
                x
            })
            .collect();
        let ess = effective_sample_size(&chains);
        let frac = ess / (m * n) as f64;
        // true integrated autocorrelation time is (1+phi)/(1-phi) = 19
        assert!(frac < 0.1, "per-draw efficiency {frac}");
        let thinned: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().copied().step_by(20).collect())
            .collect();
        let ess_t = effective_sample_size(&thinned);
        let frac_t = ess_t / (m * thinned[0].len()) as f64;
        assert!(frac_t > 0.6, "thinned per-draw efficiency {frac_t}");
        assert!(frac_t > 5.0 * frac);
    }

    #[test]
    fn diagnostics_require_multiple_chains_and_draws() {
        let one = synthetic_draws(vec![vec![0.0; 10]]);
        assert!(matches!(diagnostics(&one), Err(Error::Diagnostics(_))));
        let short = synthetic_draws(vec![vec![0.0; 2], vec![0.0; 2]]);
        assert!(matches!(diagnostics(&short), Err(Error::Diagnostics(_))));
    }

    #[test]
    fn diagnostics_summarize_healthy_run() {
        let draws = run_chains(&Correlated, &quick_config(47)).unwrap();
        let d = diagnostics(&draws).unwrap();
        assert!(d.all_rhat_ok, "max rhat {}", d.max_rhat);
        assert!(d.min_n_eff > 100.0);
        assert_eq!(d.params.len(), 3); // two coordinates plus lp
        assert!(d.for_param("lp").is_some());
        let p0 = &d.params[0];
        assert!(p0.mean.abs() < 0.1);
        assert!(p0.mcse > 0.0 && p0.mcse < 0.1);
    }

    #[test]
    fn init_failure_is_reported() {
        struct Hopeless;
        impl Target for Hopeless {
            fn dim(&self) -> usize {
                1
            }
            fn logp_grad(&self, _u: &[f64], grad: &mut [f64]) -> f64 {
                grad[0] = 0.0;
                f64::NEG_INFINITY
            }
        }
        let err = run_chains(&Hopeless, &quick_config(53)).unwrap_err();
        assert!(matches!(err, Error::Init(_)));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = SamplerConfig::default();
        cfg.thin = 0;
        assert!(cfg.validate().is_err());
        cfg = SamplerConfig::default();
        cfg.target_accept = 1.0;
        assert!(cfg.validate().is_err());
        cfg = SamplerConfig::default();
        cfg.thin = cfg.n_samples + 1;
        assert!(cfg.validate().is_err());
    }
}
