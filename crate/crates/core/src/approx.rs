//! Complete Chebyshev polynomial approximation on boxes and time-varying
//! approximation domains.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{IamError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(IamError::config("domain bounds must be non-empty and of equal length"));
        }
        if let Some(i) = (0..lo.len()).find(|i| !(lo[*i] < hi[*i])) {
            return Err(IamError::config(format!(
                "domain dimension {i} has lo {} >= hi {}",
                lo[i], hi[i]
            )));
        }
        Ok(Domain { lo, hi })
    }

    /// Box of relative half-width `rel` (plus `abs` floor) around `center`.
    pub fn around(center: &[f64], rel: f64, abs: f64) -> Result<Self> {
        let half: Vec<f64> = center.iter().map(|c| rel * c.abs() + abs).collect();
        Domain::new(
            center.iter().zip(&half).map(|(c, h)| c - h).collect(),
            center.iter().zip(&half).map(|(c, h)| c + h).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn to_unit(&self, i: usize, x: f64) -> f64 {
        (2.0 * x - self.lo[i] - self.hi[i]) / (self.hi[i] - self.lo[i])
    }

    pub fn from_unit(&self, i: usize, z: f64) -> f64 {
        0.5 * (self.lo[i] + self.hi[i]) + 0.5 * z * (self.hi[i] - self.lo[i])
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, v)| *v >= self.lo[i] && *v <= self.hi[i])
    }

    /// Clamps `x` into the box; returns whether anything moved.
    pub fn clamp(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for (i, v) in x.iter_mut().enumerate() {
            let c = v.clamp(self.lo[i], self.hi[i]);
            if c != *v {
                moved = true;
                *v = c;
            }
        }
        moved
    }

    /// Widens each side by `margin / 2` of the width.
    pub fn inflate(&self, margin: f64) -> Domain {
        let pad: Vec<f64> = (0..self.dim()).map(|i| 0.5 * margin * self.width(i)).collect();
        Domain {
            lo: self.lo.iter().zip(&pad).map(|(l, p)| l - p).collect(),
            hi: self.hi.iter().zip(&pad).map(|(h, p)| h + p).collect(),
        }
    }

    /// Smallest box containing every point.
    pub fn bounding(points: &[Vec<f64>]) -> Result<Domain> {
        let first = points.first().ok_or_else(|| IamError::config("no points to bound"))?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for p in points {
            for i in 0..p.len() {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        // keep degenerate dimensions non-empty
        for i in 0..lo.len() {
            if hi[i] - lo[i] < 1e-9 * (1.0 + lo[i].abs()) {
                let pad = 5e-10 * (1.0 + lo[i].abs());
                lo[i] -= pad;
                hi[i] += pad;
            }
        }
        Domain::new(lo, hi)
    }
}

const MAX_TABLE: usize = 256;

/// Multi-indices of the complete basis of total degree `degree`, graded.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub dim: usize,
    pub degree: usize,
    pub terms: Vec<Vec<u8>>,
}

pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

impl Basis {
    pub fn new(dim: usize, degree: usize) -> Basis {
        let mut terms = Vec::with_capacity(binomial(dim + degree, degree));
        let mut cur = vec![0u8; dim];
        for total in 0..=degree {
            fill(&mut terms, &mut cur, 0, total);
        }
        Basis { dim, degree, terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Basis values at unit-cube point `z` into `phi`, and optionally their
    /// partial derivatives (row-major `dim x len`) with respect to `z`.
    pub fn eval_into(&self, z: &[f64], phi: &mut [f64], dphi: Option<&mut [f64]>) {
        let d = self.degree;
        let n = self.dim;
        let mut t = [0.0; MAX_TABLE];
        let mut dt = [0.0; MAX_TABLE];
        assert!(n * (d + 1) <= MAX_TABLE, "basis too large for the evaluation table");
        for j in 0..n {
            let row = &mut t[j * (d + 1)..(j + 1) * (d + 1)];
            let drow = &mut dt[j * (d + 1)..(j + 1) * (d + 1)];
            row[0] = 1.0;
            drow[0] = 0.0;
            if d >= 1 {
                row[1] = z[j];
                drow[1] = 1.0;
            }
            for i in 1..d {
                row[i + 1] = 2.0 * z[j] * row[i] - row[i - 1];
                drow[i + 1] = 2.0 * row[i] + 2.0 * z[j] * drow[i] - drow[i - 1];
            }
        }
        for (k, term) in self.terms.iter().enumerate() {
            let mut p = 1.0;
            for j in 0..n {
                p *= t[j * (d + 1) + term[j] as usize];
            }
            phi[k] = p;
        }
        if let Some(dphi) = dphi {
            let len = self.len();
            for (k, term) in self.terms.iter().enumerate() {
                for j in 0..n {
                    let mut p = dt[j * (d + 1) + term[j] as usize];
                    if p != 0.0 {
                        for (l, a) in term.iter().enumerate() {
                            if l != j {
                                p *= t[l * (d + 1) + *a as usize];
                            }
                        }
                    }
                    dphi[j * len + k] = p;
                }
            }
        }
    }
}

fn fill(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, pos: usize, remaining: usize) {
    if pos == cur.len() - 1 {
        cur[pos] = remaining as u8;
        out.push(cur.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        cur[pos] = v as u8;
        fill(out, cur, pos + 1, remaining - v);
    }
    cur[pos] = 0;
}

/// Chebyshev-Gauss points on [-1, 1] in increasing order.
pub fn cheb_points_1d(m: usize) -> Vec<f64> {
    (1..=m)
        .rev()
        .map(|k| ((2 * k - 1) as f64 * std::f64::consts::PI / (2 * m) as f64).cos())
        .collect()
}

/// Full tensor grid of Chebyshev-Gauss nodes over a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGrid {
    pub domain: Domain,
    pub points_per_dim: usize,
    pub unit_points: Vec<f64>,
}

impl NodeGrid {
    pub fn len(&self) -> usize {
        self.points_per_dim.pow(self.domain.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-dimension point indices of node `idx` (first dimension slowest).
    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let n = self.domain.dim();
        let m = self.points_per_dim;
        let mut out = vec![0; n];
        for j in (0..n).rev() {
            out[j] = idx % m;
            idx /= m;
        }
        out
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(j, k)| self.domain.from_unit(j, self.unit_points[*k]))
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }
}

pub fn cheb_nodes(domain: &Domain, points_per_dim: usize) -> Result<NodeGrid> {
    if points_per_dim == 0 {
        return Err(IamError::config("need at least one node per dimension"));
    }
    Ok(NodeGrid {
        domain: domain.clone(),
        points_per_dim,
        unit_points: cheb_points_1d(points_per_dim),
    })
}

/// Complete-basis Chebyshev approximation on a box.
#[derive(Debug, Clone)]
pub struct ChebApprox {
    pub domain: Domain,
    pub degree: usize,
    pub coeffs: Vec<f64>,
    basis: Arc<Basis>,
}

impl PartialEq for ChebApprox {
    fn eq(&self, other: &Self) -> bool {
        self.domain == other.domain && self.degree == other.degree && self.coeffs == other.coeffs
    }
}

/// Counts evaluations that had to be clamped into the domain.
#[derive(Debug, Default)]
pub struct ClampCounter(AtomicUsize);

impl ClampCounter {
    pub fn hit(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }
}

/// Least-squares fit of node values onto the complete basis of total degree
/// `degree`. Exploits discrete orthogonality of Chebyshev polynomials on
/// Gauss nodes, so each coefficient is a weighted sum over the grid.
pub fn fit(grid: &NodeGrid, degree: usize, values: &[f64]) -> Result<ChebApprox> {
    let basis = Arc::new(Basis::new(grid.domain.dim(), degree));
    fit_with_basis(grid, basis, values)
}

pub fn fit_with_basis(grid: &NodeGrid, basis: Arc<Basis>, values: &[f64]) -> Result<ChebApprox> {
    let n = grid.domain.dim();
    let m = grid.points_per_dim;
    let degree = basis.degree;
    if basis.dim != n {
        return Err(IamError::config("basis and grid dimensions differ"));
    }
    if m < degree + 1 {
        return Err(IamError::config(format!(
            "{m} nodes per dimension cannot determine degree {degree}"
        )));
    }
    if values.len() != grid.len() {
        return Err(IamError::Data(format!(
            "expected {} node values, got {}",
            grid.len(),
            values.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(IamError::Data(format!("node value {i} is not finite ({})", values[i])));
    }
    // T_i at the 1-D points
    let d1 = degree + 1;
    let mut tk = vec![0.0; d1 * m];
    for (k, z) in grid.unit_points.iter().enumerate() {
        let mut a = 1.0;
        let mut b = *z;
        for i in 0..d1 {
            tk[i * m + k] = if i == 0 {
                1.0
            } else if i == 1 {
                *z
            } else {
                let c = 2.0 * z * b - a;
                a = b;
                b = c;
                c
            };
        }
    }
    // sum factorization: transform one axis at a time, keeping i <= degree
    let mut data = values.to_vec();
    let mut shape = vec![m; n];
    for axis in 0..n {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut next = vec![0.0; outer * d1 * inner];
        for o in 0..outer {
            for i in 0..d1 {
                let dst = &mut next[(o * d1 + i) * inner..(o * d1 + i + 1) * inner];
                for k in 0..m {
                    let w = tk[i * m + k];
                    let src = &data[(o * m + k) * inner..(o * m + k + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        data = next;
        shape[axis] = d1;
    }
    let total = (m as f64).powi(n as i32);
    let coeffs = basis
        .terms
        .iter()
        .map(|term| {
            let mut idx = 0;
            let mut w = 1.0;
            for a in term {
                idx = idx * d1 + *a as usize;
                if *a > 0 {
                    w *= 2.0;
                }
            }
            data[idx] * w / total
        })
        .collect();
    Ok(ChebApprox {
        domain: grid.domain.clone(),
        degree,
        coeffs,
        basis,
    })
}

impl ChebApprox {
    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn with_coeffs(domain: Domain, degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        let basis = Arc::new(Basis::new(domain.dim(), degree));
        if coeffs.len() != basis.len() {
            return Err(IamError::Data(format!(
                "degree {degree} in {} dimensions needs {} coefficients, got {}",
                domain.dim(),
                basis.len(),
                coeffs.len()
            )));
        }
        Ok(ChebApprox {
            domain,
            degree,
            coeffs,
            basis,
        })
    }

    fn unit(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len()).map(|i| self.domain.to_unit(i, x[i])).collect()
    }

    /// Value at `x`, which must lie in the domain (points outside are
    /// extrapolated; use `eval_clamped` to enforce the domain).
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut phi = vec![0.0; self.basis.len()];
        self.basis.eval_into(&self.unit(x), &mut phi, None);
        dot(&self.coeffs, &phi)
    }

    /// Value and gradient with respect to `x`.
    pub fn eval_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let n = self.domain.dim();
        let len = self.basis.len();
        let mut phi = vec![0.0; len];
        let mut dphi = vec![0.0; n * len];
        self.basis.eval_into(&self.unit(x), &mut phi, Some(&mut dphi));
        let grad = (0..n)
            .map(|j| dot(&self.coeffs, &dphi[j * len..(j + 1) * len]) * 2.0 / self.domain.width(j))
            .collect();
        (dot(&self.coeffs, &phi), grad)
    }

    /// Evaluates after clamping `x` into the domain, counting clamp events.
    pub fn eval_clamped(&self, x: &[f64], counter: &ClampCounter) -> f64 {
        let mut y = x.to_vec();
        if self.domain.clamp(&mut y) {
            counter.hit();
        }
        self.eval(&y)
    }

    /// Text checkpoint form (degree, domain, coefficients).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "chebapprox 1").unwrap();
        writeln!(s, "dim {}", self.domain.dim()).unwrap();
        writeln!(s, "degree {}", self.degree).unwrap();
        writeln!(s, "lo {}", join_floats(&self.domain.lo)).unwrap();
        writeln!(s, "hi {}", join_floats(&self.domain.hi)).unwrap();
        writeln!(s, "coeffs {}", self.coeffs.len()).unwrap();
        for c in &self.coeffs {
            writeln!(s, "{}", fmt_f64(*c)).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<ChebApprox> {
        let mut lines = text.lines();
        let bad = |what: &str| IamError::Data(format!("malformed approximation text: {what}"));
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(name))?;
            line.strip_prefix(name)
                .map(|r| r.trim().to_string())
                .ok_or_else(|| bad(name))
        };
        if field("chebapprox")? != "1" {
            return Err(bad("version"));
        }
        let dim: usize = field("dim")?.parse().map_err(|_| bad("dim"))?;
        let degree: usize = field("degree")?.parse().map_err(|_| bad("degree"))?;
        let parse_vec = |s: String| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad("number")))
                .collect()
        };
        let lo = parse_vec(field("lo")?)?;
        let hi = parse_vec(field("hi")?)?;
        let n: usize = field("coeffs")?.parse().map_err(|_| bad("coeffs"))?;
        if lo.len() != dim || hi.len() != dim {
            return Err(bad("domain length"));
        }
        let coeffs: Vec<f64> = lines
            .take(n)
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad("coefficient")))
            .collect::<Result<_>>()?;
        if coeffs.len() != n {
            return Err(bad("coefficient count"));
        }
        ChebApprox::with_coeffs(Domain::new(lo, hi)?, degree, coeffs)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// 17 significant digits, round-trip exact.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

/// Domain sequence `D_0 .. D_n` such that every sampled image of `D_t`
/// lies inside `D_{t+1}`.
///
/// `sampler(t, d)` returns the successor points of the extreme
/// (state, action, shock) combinations of period `t` from domain `d`.
/// Each new box is the bounding box of those points widened by `margin`
/// of its width; a box wider than `width_cap` times the initial width in
/// any dimension is a configuration error.
pub fn build_time_varying_domains<F>(
    initial: &Domain,
    n_periods: usize,
    margin: f64,
    width_cap: f64,
    mut sampler: F,
) -> Result<Vec<Domain>>
where
    F: FnMut(usize, &Domain) -> Result<Vec<Vec<f64>>>,
{
    let mut out = vec![initial.clone()];
    for t in 0..n_periods {
        let pts = sampler(t, &out[t])?;
        let next = Domain::bounding(&pts)?.inflate(margin);
        for i in 0..next.dim() {
            if next.width(i) > width_cap * initial.width(i) {
                return Err(IamError::config(format!(
                    "approximation domain of dimension {i} grew to width {} at period {}",
                    next.width(i),
                    t + 1
                )));
            }
        }
        out.push(next);
    }
    Ok(out)
}

/// All `2^n` corners of a box.
pub fn corners(d: &Domain) -> Vec<Vec<f64>> {
    let n = d.dim();
    (0..1usize << n)
        .map(|mask| {
            (0..n)
                .map(|i| if mask >> i & 1 == 1 { d.hi[i] } else { d.lo[i] })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn box3() -> Domain {
        Domain::new(vec![1.0, -2.0, 10.0], vec![3.0, 1.0, 20.0]).unwrap()
    }

    #[test]
    fn node_examples() {
        let d = Domain::new(vec![2.0], vec![4.0]).unwrap();
        let g = cheb_nodes(&d, 1).unwrap();
        assert_eq!(g.nodes(), vec![vec![3.0]]);
        let u = Domain::new(vec![-1.0], vec![1.0]).unwrap();
        let g5 = cheb_nodes(&u, 5).unwrap();
        let mut expect: Vec<f64> = (1..=5)
            .map(|k| ((2 * k - 1) as f64 * std::f64::consts::PI / 10.0).cos())
            .collect();
        expect.reverse();
        for (a, b) in g5.nodes().iter().zip(&expect) {
            assert!((a[0] - b).abs() < 1e-15);
        }
        for node in cheb_nodes(&box3(), 4).unwrap().nodes() {
            for i in 0..3 {
                assert!(node[i] > box3().lo[i] && node[i] < box3().hi[i]);
            }
        }
    }

    #[test]
    fn basis_size_is_binomial() {
        for (n, d) in [(6, 4), (6, 6), (2, 3), (1, 5)] {
            assert_eq!(Basis::new(n, d).len(), binomial(n + d, d));
        }
    }

    #[test]
    fn constant_fit() {
        let g = cheb_nodes(&box3(), 5).unwrap();
        let a = fit(&g, 4, &vec![2.5; g.len()]).unwrap();
        assert!((a.coeffs[0] - 2.5).abs() < 1e-14);
        assert!(a.coeffs[1..].iter().all(|c| c.abs() < 1e-14));
        let c0 = fit(&g, 0, &vec![2.5; g.len()]).unwrap();
        assert_eq!(c0.coeffs.len(), 1);
        assert!((c0.eval(&[100.0, 5.0, -3.0]) - 2.5).abs() < 1e-14);
    }

    fn poly(x: &[f64]) -> f64 {
        // total degree 4
        1.0 + 0.5 * x[0] - x[1] * x[2] / 10.0 + 0.2 * x[0] * x[0] * x[1] * x[1] + 0.01 * x[2].powi(3)
    }

    #[test]
    fn polynomial_round_trip_and_gradient() {
        let g = cheb_nodes(&box3(), 5).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|x| poly(x)).collect();
        let a = fit(&g, 4, &vals).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|i| rng.random_range(box3().lo[i]..box3().hi[i])).collect();
            let (v, grad) = a.eval_grad(&x);
            assert!((v - poly(&x)).abs() <= 1e-12 * poly(&x).abs().max(1.0));
            for i in 0..3 {
                let h = 1e-5 * box3().width(i);
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (a.eval(&xp) - a.eval(&xm)) / (2.0 * h);
                assert!(
                    (fd - grad[i]).abs() <= 1e-6 * grad[i].abs().max(1e-3),
                    "{fd} {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn affine_fit_has_exact_slope() {
        let g = cheb_nodes(&box3(), 3).unwrap();
        let vals: Vec<f64> = g
            .nodes()
            .iter()
            .map(|x| 3.0 * x[0] - 2.0 * x[1] + 0.5 * x[2] + 1.0)
            .collect();
        let a = fit(&g, 1, &vals).unwrap();
        let (_, grad) = a.eval_grad(&[2.0, 0.0, 15.0]);
        for (g, e) in grad.iter().zip([3.0, -2.0, 0.5]) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_values_rejected() {
        let g = cheb_nodes(&box3(), 2).unwrap();
        let mut v = vec![1.0; g.len()];
        v[3] = f64::NAN;
        assert!(matches!(fit(&g, 1, &v), Err(IamError::Data(_))));
    }

    #[test]
    fn text_round_trip() {
        let g = cheb_nodes(&box3(), 4).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|x| (x[0] * x[1]).sin() + x[2]).collect();
        let a = fit(&g, 3, &vals).unwrap();
        let b = ChebApprox::from_text(&a.to_text()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clamped_eval_counts() {
        let g = cheb_nodes(&box3(), 2).unwrap();
        let a = fit(&g, 1, &vec![1.0; g.len()]).unwrap();
        let c = ClampCounter::default();
        a.eval_clamped(&[2.0, 0.0, 15.0], &c);
        assert_eq!(c.get(), 0);
        a.eval_clamped(&[5.0, 0.0, 15.0], &c);
        assert_eq!(c.get(), 1);
    }

    #[test]
    fn identity_map_keeps_domain() {
        let d0 = box3();
        let ds = build_time_varying_domains(&d0, 5, 0.0, 100.0, |_, d| Ok(corners(d))).unwrap();
        assert!(ds.iter().all(|d| *d == d0));
    }

    #[test]
    fn depreciation_shrinks_geometrically() {
        let d0 = Domain::new(vec![10.0], vec![20.0]).unwrap();
        let delta = 0.1;
        let ds = build_time_varying_domains(&d0, 4, 0.0, 100.0, |_, d| {
            Ok(corners(d).into_iter().map(|c| vec![(1.0 - delta) * c[0]]).collect())
        })
        .unwrap();
        for (t, d) in ds.iter().enumerate() {
            assert!((d.width(0) - 10.0 * 0.9f64.powi(t as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn runaway_domain_is_config_error() {
        let d0 = Domain::new(vec![1.0], vec![2.0]).unwrap();
        let r = build_time_varying_domains(&d0, 10, 0.05, 1000.0, |_, d| {
            Ok(corners(d).into_iter().map(|c| vec![3.0 * c[0]]).collect())
        });
        assert!(matches!(r, Err(IamError::Config(_))));
    }

    proptest! {
        #[test]
        fn affine_invariance(shift in -5.0f64..5.0, scale in 0.5f64..4.0) {
            let d = Domain::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
            let f = |x: &[f64]| (x[0] + 0.3 * x[1]).exp();
            let g = cheb_nodes(&d, 5).unwrap();
            let a = fit(&g, 4, &g.nodes().iter().map(|x| f(x)).collect::<Vec<_>>()).unwrap();
            // phi(y) = (y - shift) / scale maps the image box back onto d
            let d2 = Domain::new(vec![shift, shift], vec![shift + scale, shift + 2.0 * scale]).unwrap();
            let g2 = cheb_nodes(&d2, 5).unwrap();
            let vals2: Vec<f64> = g2.nodes().iter().map(|y| f(&[(y[0] - shift) / scale, (y[1] - shift) / scale])).collect();
            let b = fit(&g2, 4, &vals2).unwrap();
            for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
                prop_assert!((x - y).abs() < 1e-12 * a.coeffs[0].abs().max(1.0));
            }
        }

        #[test]
        fn total_degree_polys_reproduced(c in proptest::collection::vec(-1.0f64..1.0, 10)) {
            let d = Domain::new(vec![-1.0, 0.0, 2.0], vec![1.0, 3.0, 5.0]).unwrap();
            let f = |x: &[f64]| c[0] + c[1] * x[0] + c[2] * x[1] * x[2] + c[3] * x[0].powi(3) * x[2]
                + c[4] * x[1].powi(4) + c[5] * x[0] * x[1] * x[2] + c[6] * x[2].powi(2) + c[7] * x[0].powi(2) * x[1].powi(2)
                + c[8] * x[1] + c[9] * x[0] * x[2].powi(3);
            let g = cheb_nodes(&d, 5).unwrap();
            let a = fit(&g, 4, &g.nodes().iter().map(|x| f(x)).collect::<Vec<_>>()).unwrap();
            let x = [0.3, 1.7, 4.1];
            prop_assert!((a.eval(&x) - f(&x)).abs() <= 1e-12 * f(&x).abs().max(1.0));
        }
    }
}
