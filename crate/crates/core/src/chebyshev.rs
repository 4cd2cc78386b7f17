//! Dynamic Chebyshev American put pricing for the stochastic-volatility
//! model.
//!
//! An offline backward induction stores the value function on a tensor grid
//! of Chebyshev-Lobatto nodes over `(ln s, sigma)` at every time step:
//! starting from the payoff at maturity, each earlier step estimates
//! continuation values by short one-step Monte Carlo transitions from every
//! node, evaluated against the next step's interpolant, and takes the
//! maximum against immediate exercise. Once built, prices at any
//! `(s, sigma, t)` are a polynomial evaluation, which is what makes the
//! pricer cheap enough to sit inside a training loop.
//!
//! Price-coordinate interpolation happens in `ln s`; out-of-domain queries
//! clamp to the domain edge (Chebyshev extrapolation diverges) and are
//! counted. Node transitions use the risk-neutral drift `r` in place of the
//! model's physical drift, matching the binomial tree's treatment.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use crate::market::{simulate_sv, SvParams, TimeGrid, EULER_FLOOR};
use crate::math::isotonic_non_decreasing;
use crate::rng::{standard_normal, substream};
use crate::{Error, Result};

/// Rectangular `(price, vol)` domain plus node counts and the shared time
/// grid of a Chebyshev surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChebDomain {
    pub s_lo: f64,
    pub s_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    /// Number of price nodes (Lobatto points in `ln s`).
    pub n_s: usize,
    /// Number of vol nodes.
    pub n_v: usize,
    pub grid: TimeGrid,
}

impl ChebDomain {
    pub fn new(
        s_lo: f64,
        s_hi: f64,
        v_lo: f64,
        v_hi: f64,
        n_s: usize,
        n_v: usize,
        grid: TimeGrid,
    ) -> Result<Self> {
        if !(s_lo > 0.0 && s_hi > s_lo) {
            return Err(Error::param(format!(
                "price bounds must satisfy 0 < s_lo < s_hi, got [{s_lo}, {s_hi}]"
            )));
        }
        if !(v_lo > 0.0 && v_hi > v_lo) {
            return Err(Error::param(format!(
                "vol bounds must satisfy 0 < v_lo < v_hi, got [{v_lo}, {v_hi}]"
            )));
        }
        if n_s < 4 || n_v < 2 {
            return Err(Error::param(format!(
                "need at least 4 price nodes and 2 vol nodes, got ({n_s}, {n_v})"
            )));
        }
        Ok(ChebDomain { s_lo, s_hi, v_lo, v_hi, n_s, n_v, grid })
    }
}

/// Determine domain bounds from the extremal excursions of a pilot path
/// batch, widened by `buffer` on each side (fractions of the raw extremes).
/// A degenerate dimension (pilot min == max) widens to +/-20% around the
/// constant value instead.
pub fn make_domain(
    params: &SvParams,
    grid: &TimeGrid,
    pilot_paths: usize,
    buffer: f64,
    nodes: (usize, usize),
    seed: u64,
) -> Result<ChebDomain> {
    if pilot_paths < 100 {
        return Err(Error::param(format!(
            "pilot batch needs at least 100 paths, got {pilot_paths}"
        )));
    }
    if !(0.0..1.0).contains(&buffer) {
        return Err(Error::param(format!("buffer must lie in [0, 1), got {buffer}")));
    }
    let pilot = simulate_sv(params, grid, pilot_paths, seed)?;
    let (s_lo, s_hi) = buffered_bounds(pilot.raw_prices(), buffer, params.s0);
    let (v_lo, v_hi) = buffered_bounds(pilot.raw_vols().unwrap(), buffer, params.sigma0);
    ChebDomain::new(s_lo, s_hi, v_lo, v_hi, nodes.0, nodes.1, *grid)
}

fn buffered_bounds(samples: &[f64], buffer: f64, center: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in samples {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return (0.8 * center, 1.2 * center);
    }
    ((lo * (1.0 - buffer)).max(EULER_FLOOR), hi * (1.0 + buffer))
}

/// Chebyshev-Lobatto points on `[a, b]`: `(a+b)/2 + (b-a)/2 cos(k pi / n)`
/// for `k = 0..=n`, returned in ascending order (`n + 1` points).
pub fn cheb_nodes(a: f64, b: f64, n: usize) -> Result<Vec<f64>> {
    if !(a < b) {
        return Err(Error::param(format!("need a < b, got [{a}, {b}]")));
    }
    if n == 0 {
        return Err(Error::param("need polynomial degree n >= 1"));
    }
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut nodes: Vec<f64> = (0..=n)
        .map(|k| mid - half * (k as f64 * std::f64::consts::PI / n as f64).cos())
        .collect();
    nodes[0] = a;
    nodes[n] = b;
    Ok(nodes)
}

// Normalized barycentric weights of x against Lobatto `nodes`; writes a
// coefficient vector so that f(x) ~= sum lam[j] f(nodes[j]).
fn bary_lambdas(nodes: &[f64], x: f64, out: &mut [f64]) {
    let n = nodes.len() - 1;
    for (j, &xj) in nodes.iter().enumerate() {
        if x == xj {
            out.fill(0.0);
            out[j] = 1.0;
            return;
        }
    }
    let mut den = 0.0;
    for j in 0..=n {
        let delta = if j == 0 || j == n { 0.5 } else { 1.0 };
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let w = sign * delta / (x - nodes[j]);
        out[j] = w;
        den += w;
    }
    let inv = 1.0 / den;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Barycentric interpolation of `values` sampled on Lobatto `nodes`,
/// evaluated at `x`. Exact on polynomials up to the node degree and exact
/// at the nodes themselves.
pub fn cheb_eval(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    debug_assert_eq!(nodes.len(), values.len());
    let mut lam = vec![0.0; nodes.len()];
    bary_lambdas(nodes, x, &mut lam);
    lam.iter().zip(values).map(|(l, v)| l * v).sum()
}

/// Tensor-product barycentric interpolation over a 2D Lobatto grid;
/// `values` is row-major with the first coordinate (price) major.
pub fn cheb_eval_2d(x_nodes: &[f64], y_nodes: &[f64], values: &[f64], x: f64, y: f64) -> f64 {
    let mut lx = vec![0.0; x_nodes.len()];
    let mut ly = vec![0.0; y_nodes.len()];
    bary_lambdas(x_nodes, x, &mut lx);
    bary_lambdas(y_nodes, y, &mut ly);
    tensor_eval(&lx, &ly, values)
}

fn tensor_eval(lx: &[f64], ly: &[f64], values: &[f64]) -> f64 {
    let nv = ly.len();
    let mut acc = 0.0;
    for (i, &wx) in lx.iter().enumerate() {
        if wx == 0.0 {
            continue;
        }
        let row = &values[i * nv..(i + 1) * nv];
        let mut inner = 0.0;
        for (w, v) in ly.iter().zip(row) {
            inner += w * v;
        }
        acc += wx * inner;
    }
    acc
}

/// Per-time-step Chebyshev value coefficients, domain bounds, and exercise
/// boundary for the stochastic-volatility American put. Immutable after
/// construction; queries are thread-safe.
#[derive(Debug)]
pub struct ChebSurface {
    domain: ChebDomain,
    strike: f64,
    rate: f64,
    mc_per_node: usize,
    seed: u64,
    /// Lobatto nodes in `ln s`, ascending.
    x_nodes: Vec<f64>,
    /// Price-space positions of `x_nodes`.
    s_nodes: Vec<f64>,
    /// Lobatto nodes in vol, ascending.
    v_nodes: Vec<f64>,
    /// One flattened `n_s x n_v` value matrix per time step.
    values: Vec<Vec<f64>>,
    /// Critical exercise price per `(step, vol-node)`.
    boundary: Vec<Vec<Option<f64>>>,
    /// One-step landings that fell outside the domain during the build.
    build_clamps: usize,
    build_draws: usize,
    query_clamps: AtomicUsize,
}

/// Build the surface by backward induction with `mc_per_node` one-step
/// transitions per node per step. Deterministic in every argument.
pub fn build_surface(
    params: &SvParams,
    strike: f64,
    rate: f64,
    domain: &ChebDomain,
    mc_per_node: usize,
    seed: u64,
) -> Result<ChebSurface> {
    if mc_per_node < 100 {
        return Err(Error::param(format!(
            "mc_per_node must be at least 100, got {mc_per_node}"
        )));
    }
    if !(strike > 0.0) {
        return Err(Error::param(format!("strike must be positive, got {strike}")));
    }
    let grid = domain.grid;
    let n_steps = grid.n_steps();
    let dt = grid.dt();
    let sq_dt = dt.sqrt();
    let disc = (-rate * dt).exp();
    let orth = (1.0 - params.rho * params.rho).sqrt();

    let x_nodes = cheb_nodes(domain.s_lo.ln(), domain.s_hi.ln(), domain.n_s - 1)?;
    let s_nodes: Vec<f64> = x_nodes.iter().map(|x| x.exp()).collect();
    let v_nodes = cheb_nodes(domain.v_lo, domain.v_hi, domain.n_v - 1)?;
    let (ns, nv) = (domain.n_s, domain.n_v);
    let n_nodes = ns * nv;

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n_steps + 1];
    values[n_steps] = (0..n_nodes)
        .map(|idx| (strike - s_nodes[idx / nv]).max(0.0))
        .collect();
    let mut boundary: Vec<Vec<Option<f64>>> = vec![vec![None; nv]; n_steps + 1];
    boundary[n_steps] = vec![Some(strike); nv];

    let x_lo = x_nodes[0];
    let x_hi = x_nodes[ns - 1];
    let v_lo = v_nodes[0];
    let v_hi = v_nodes[nv - 1];

    let mut build_clamps = 0usize;
    for step in (0..n_steps).rev() {
        let next = std::mem::take(&mut values[step + 1]);
        let results: Vec<(f64, f64, usize)> = (0..n_nodes)
            .into_par_iter()
            .map(|idx| {
                let s = s_nodes[idx / nv];
                let v = v_nodes[idx % nv];
                let mut rng = substream(seed, (step * n_nodes + idx) as u64);
                let mut lx = vec![0.0; ns];
                let mut ly = vec![0.0; nv];
                let mut acc = 0.0;
                let mut clamps = 0usize;
                for _ in 0..mc_per_node {
                    let z1 = standard_normal(&mut rng);
                    let z2 = standard_normal(&mut rng);
                    let dw = sq_dt * z1;
                    let db = sq_dt * (params.rho * z1 + orth * z2);
                    let v1 = (v * (1.0 + params.nu * db)).max(EULER_FLOOR);
                    let s1 = (s * (1.0 + rate * dt + v1 * dw)).max(EULER_FLOOR);
                    let mut x1 = s1.ln();
                    if x1 < x_lo {
                        x1 = x_lo;
                        clamps += 1;
                    } else if x1 > x_hi {
                        x1 = x_hi;
                        clamps += 1;
                    }
                    let mut vq = v1;
                    if vq < v_lo {
                        vq = v_lo;
                        clamps += 1;
                    } else if vq > v_hi {
                        vq = v_hi;
                        clamps += 1;
                    }
                    bary_lambdas(&x_nodes, x1, &mut lx);
                    bary_lambdas(&v_nodes, vq, &mut ly);
                    acc += tensor_eval(&lx, &ly, &next);
                }
                let cont = disc * acc / mc_per_node as f64;
                let intr = (strike - s).max(0.0);
                (intr.max(cont), cont, clamps)
            })
            .collect();
        values[step + 1] = next;
        values[step] = results.iter().map(|r| r.0).collect();
        build_clamps += results.iter().map(|r| r.2).sum::<usize>();
        let conts: Vec<f64> = results.iter().map(|r| r.1).collect();
        boundary[step] = extract_boundary(&x_nodes, &s_nodes, &v_nodes, &conts, strike);
    }

    // The true critical price is non-decreasing in time at fixed vol;
    // repair Monte Carlo jitter per vol slice.
    for b in 0..nv {
        let idx: Vec<usize> = (0..=n_steps).filter(|&j| boundary[j][b].is_some()).collect();
        let mut vals: Vec<f64> = idx.iter().map(|&j| boundary[j][b].unwrap()).collect();
        isotonic_non_decreasing(&mut vals);
        for (&j, &v) in idx.iter().zip(vals.iter()) {
            boundary[j][b] = Some(v);
        }
    }

    Ok(ChebSurface {
        domain: *domain,
        strike,
        rate,
        mc_per_node,
        seed,
        x_nodes,
        s_nodes,
        v_nodes,
        values,
        boundary,
        build_clamps,
        build_draws: n_steps * n_nodes * mc_per_node,
        query_clamps: AtomicUsize::new(0),
    })
}

// Critical price per vol node: deepest contiguous run of price nodes where
// exercise beats continuation, refined to the continuation/intrinsic
// crossing by bisection on the continuation interpolant.
fn extract_boundary(
    x_nodes: &[f64],
    s_nodes: &[f64],
    v_nodes: &[f64],
    conts: &[f64],
    strike: f64,
) -> Vec<Option<f64>> {
    let ns = s_nodes.len();
    let nv = v_nodes.len();
    let mut out = vec![None; nv];
    let mut slice = vec![0.0; ns];
    for (b, slot) in out.iter_mut().enumerate() {
        for a in 0..ns {
            slice[a] = conts[a * nv + b];
        }
        let mut top: Option<usize> = None;
        for a in 0..ns {
            let intr = strike - s_nodes[a];
            if intr > 0.0 && intr >= slice[a] {
                top = Some(a);
            } else {
                break;
            }
        }
        let Some(a) = top else { continue };
        if a + 1 >= ns {
            *slot = Some(s_nodes[ns - 1].min(strike));
            continue;
        }
        // g(x) = continuation - intrinsic changes sign on [x_a, x_{a+1}].
        let g = |x: f64| cheb_eval(x_nodes, &slice, x) - (strike - x.exp());
        let mut lo = x_nodes[a];
        let mut hi = x_nodes[a + 1];
        if g(lo) > 0.0 || g(hi) < 0.0 {
            // Interpolant wiggle broke the bracket; fall back to the
            // midpoint between the node pair.
            *slot = Some((0.5 * (s_nodes[a] + s_nodes[a + 1])).min(strike));
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if g(mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        *slot = Some((0.5 * (lo + hi)).exp().min(strike));
    }
    out
}

impl ChebSurface {
    pub fn domain(&self) -> &ChebDomain {
        &self.domain
    }

    pub fn strike(&self) -> f64 {
        self.strike
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.domain.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mc_per_node(&self) -> usize {
        self.mc_per_node
    }

    /// Share of one-step landings clamped back into the domain while the
    /// surface was built. Above ~1% the domain is too tight.
    pub fn landing_clamp_fraction(&self) -> f64 {
        if self.build_draws == 0 {
            0.0
        } else {
            self.build_clamps as f64 / self.build_draws as f64
        }
    }

    /// Number of price/vol query coordinates clamped to the domain edge.
    pub fn query_clamps(&self) -> usize {
        self.query_clamps.load(Ordering::Relaxed)
    }

    /// Stored node values at a time step (flattened price-major).
    pub fn step_values(&self, step: usize) -> &[f64] {
        &self.values[step]
    }

    pub fn price_nodes(&self) -> &[f64] {
        &self.s_nodes
    }

    pub fn vol_nodes(&self) -> &[f64] {
        &self.v_nodes
    }

    fn eval_step(&self, step: usize, x: f64, v: f64) -> f64 {
        cheb_eval_2d(&self.x_nodes, &self.v_nodes, &self.values[step], x, v)
    }

    /// Option price at `(s, v, t)`: barycentric in `(ln s, v)`, linear in
    /// time between the bracketing steps, floored at intrinsic. Exactly the
    /// payoff at `t == maturity`.
    pub fn price_query(&self, s: f64, v: f64, t: f64) -> Result<f64> {
        let maturity = self.domain.grid.maturity();
        if t > maturity {
            return Err(Error::domain(format!(
                "query time {t} beyond maturity {maturity}"
            )));
        }
        if !(s > 0.0) {
            return Err(Error::domain(format!("query price must be positive, got {s}")));
        }
        let intrinsic = (self.strike - s).max(0.0);
        if t == maturity {
            return Ok(intrinsic);
        }
        let mut x = s.ln();
        let mut clamped = false;
        if x < self.x_nodes[0] {
            x = self.x_nodes[0];
            clamped = true;
        } else if x > self.x_nodes[self.x_nodes.len() - 1] {
            x = self.x_nodes[self.x_nodes.len() - 1];
            clamped = true;
        }
        let mut vq = v;
        if vq < self.v_nodes[0] {
            vq = self.v_nodes[0];
            clamped = true;
        } else if vq > self.v_nodes[self.v_nodes.len() - 1] {
            vq = self.v_nodes[self.v_nodes.len() - 1];
            clamped = true;
        }
        if clamped {
            self.query_clamps.fetch_add(1, Ordering::Relaxed);
        }
        let n_steps = self.domain.grid.n_steps();
        let pos = (t / self.domain.grid.dt()).max(0.0);
        let j0 = (pos.floor() as usize).min(n_steps - 1);
        let theta = (pos - j0 as f64).clamp(0.0, 1.0);
        let v0 = self.eval_step(j0, x, vq);
        let v1 = self.eval_step(j0 + 1, x, vq);
        Ok(((1.0 - theta) * v0 + theta * v1).max(intrinsic))
    }

    /// Raw per-step boundary table (step-major, one entry per vol node).
    pub fn boundary_table(&self) -> &[Vec<Option<f64>>] {
        &self.boundary
    }

    /// Critical exercise price at `(t, v)`, linearly interpolated across
    /// the bracketing steps and vol nodes. `None` where no exercise region
    /// exists.
    pub fn boundary_at(&self, t: f64, v: f64) -> Option<f64> {
        let grid = &self.domain.grid;
        if t < 0.0 || t > grid.maturity() {
            return None;
        }
        if t == grid.maturity() {
            return self.boundary_in_vol(grid.n_steps(), v);
        }
        let pos = t / grid.dt();
        let j0 = (pos.floor() as usize).min(grid.n_steps() - 1);
        let w = (pos - j0 as f64).clamp(0.0, 1.0);
        let b0 = self.boundary_in_vol(j0, v);
        let b1 = self.boundary_in_vol(j0 + 1, v);
        match (b0, b1) {
            (Some(a), Some(b)) => Some(a + w * (b - a)),
            (Some(a), None) if w == 0.0 => Some(a),
            (None, Some(b)) if w == 1.0 => Some(b),
            _ => None,
        }
    }

    fn boundary_in_vol(&self, step: usize, v: f64) -> Option<f64> {
        let row = &self.boundary[step];
        let nv = self.v_nodes.len();
        let vq = v.clamp(self.v_nodes[0], self.v_nodes[nv - 1]);
        let mut b = 0;
        while b + 1 < nv - 1 && self.v_nodes[b + 1] <= vq {
            b += 1;
        }
        let (va, vb) = (self.v_nodes[b], self.v_nodes[b + 1]);
        let w = ((vq - va) / (vb - va)).clamp(0.0, 1.0);
        match (row[b], row[b + 1]) {
            (Some(x), Some(y)) => Some(x + w * (y - x)),
            (Some(x), None) if w == 0.0 => Some(x),
            (None, Some(y)) if w == 1.0 => Some(y),
            _ => None,
        }
    }

    /// Serialize to a versioned little-endian binary file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        for x in [
            self.domain.s_lo,
            self.domain.s_hi,
            self.domain.v_lo,
            self.domain.v_hi,
            self.domain.grid.maturity(),
            self.strike,
            self.rate,
        ] {
            w.write_f64::<LittleEndian>(x)?;
        }
        for n in [
            self.domain.grid.n_steps() as u64,
            self.domain.n_s as u64,
            self.domain.n_v as u64,
            self.mc_per_node as u64,
            self.seed,
            self.build_clamps as u64,
            self.build_draws as u64,
        ] {
            w.write_u64::<LittleEndian>(n)?;
        }
        for step in &self.values {
            for &v in step {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        for step in &self.boundary {
            for &b in step {
                w.write_f64::<LittleEndian>(b.unwrap_or(f64::NAN))?;
            }
        }
        Ok(())
    }

    /// Load a surface produced by [`ChebSurface::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<ChebSurface> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::data("not a Chebyshev surface file"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::data(format!(
                "unsupported surface format version {version}"
            )));
        }
        let s_lo = r.read_f64::<LittleEndian>()?;
        let s_hi = r.read_f64::<LittleEndian>()?;
        let v_lo = r.read_f64::<LittleEndian>()?;
        let v_hi = r.read_f64::<LittleEndian>()?;
        let maturity = r.read_f64::<LittleEndian>()?;
        let strike = r.read_f64::<LittleEndian>()?;
        let rate = r.read_f64::<LittleEndian>()?;
        let n_steps = r.read_u64::<LittleEndian>()? as usize;
        let n_s = r.read_u64::<LittleEndian>()? as usize;
        let n_v = r.read_u64::<LittleEndian>()? as usize;
        let mc_per_node = r.read_u64::<LittleEndian>()? as usize;
        let seed = r.read_u64::<LittleEndian>()?;
        let build_clamps = r.read_u64::<LittleEndian>()? as usize;
        let build_draws = r.read_u64::<LittleEndian>()? as usize;
        let grid = TimeGrid::new(maturity, n_steps)?;
        let domain = ChebDomain::new(s_lo, s_hi, v_lo, v_hi, n_s, n_v, grid)?;
        let x_nodes = cheb_nodes(s_lo.ln(), s_hi.ln(), n_s - 1)?;
        let s_nodes: Vec<f64> = x_nodes.iter().map(|x| x.exp()).collect();
        let v_nodes = cheb_nodes(v_lo, v_hi, n_v - 1)?;
        let mut values = Vec::with_capacity(n_steps + 1);
        for _ in 0..=n_steps {
            let mut step = vec![0.0; n_s * n_v];
            for v in step.iter_mut() {
                *v = r.read_f64::<LittleEndian>()?;
            }
            values.push(step);
        }
        let mut boundary = Vec::with_capacity(n_steps + 1);
        for _ in 0..=n_steps {
            let mut step = vec![None; n_v];
            for b in step.iter_mut() {
                let x = r.read_f64::<LittleEndian>()?;
                *b = if x.is_nan() { None } else { Some(x) };
            }
            boundary.push(step);
        }
        Ok(ChebSurface {
            domain,
            strike,
            rate,
            mc_per_node,
            seed,
            x_nodes,
            s_nodes,
            v_nodes,
            values,
            boundary,
            build_clamps,
            build_draws,
            query_clamps: AtomicUsize::new(0),
        })
    }
}

const MAGIC: &[u8; 8] = b"CHEBSRF\0";
const FORMAT_VERSION: u32 = 1;
