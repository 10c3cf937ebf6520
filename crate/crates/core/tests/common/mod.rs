//! Test-only oracles, independent of the library's code paths.
#![allow(dead_code)]

/// Probability vectors on `{0, 1/B, ..., 1}` from a composition of `N`.
pub struct SimplexMesh {
    pub b: usize,
    pub points: Vec<Vec<f64>>,
}

impl SimplexMesh {
    pub fn new(b: usize, n: usize) -> Self {
        let mut points = Vec::new();
        let mut cur = vec![0usize; b + 1];
        fn rec(i: usize, left: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
            if i + 1 == cur.len() {
                cur[i] = left;
                out.push(cur.iter().map(|&c| c as f64 / n as f64).collect());
                return;
            }
            for c in 0..=left {
                cur[i] = c;
                rec(i + 1, left - c, n, cur, out);
            }
        }
        rec(0, n, n, &mut cur, &mut points);
        SimplexMesh { b, points }
    }
}

/// r-concavity of a mass sequence: contiguous support and `p^r` convex
/// on it (`r < 0`).
pub fn is_r_concave(p: &[f64], r: f64) -> bool {
    let Some(first) = p.iter().position(|&v| v > 0.0) else {
        return false;
    };
    let last = p.iter().rposition(|&v| v > 0.0).unwrap();
    if p[first..=last].iter().any(|&v| v <= 0.0) {
        return false;
    }
    let g: Vec<f64> = p[first..=last].iter().map(|v| v.powf(r)).collect();
    g.windows(3)
        .all(|w| w[1] <= 0.5 * (w[0] + w[2]) * (1.0 + 1e-12))
}

pub fn mean(p: &[f64]) -> f64 {
    let b = (p.len() - 1) as f64;
    p.iter().enumerate().map(|(k, v)| k as f64 / b * v).sum()
}

pub fn upper_tail(p: &[f64], xi: f64) -> f64 {
    let b = (p.len() - 1) as f64;
    p.iter()
        .enumerate()
        .filter(|(k, _)| *k as f64 / b >= xi - 1e-12)
        .map(|(_, v)| v)
        .sum()
}

/// Brute-force `max P(X >= xi)` over r-concave `X` with `E X <= theta`:
/// exhaustive search over a simplex mesh, then coarse-to-fine lattice
/// refinement around the best feasible mesh points.
pub fn brute_force_tail(mesh: &SimplexMesh, feasible: &[bool], xi: f64, theta: f64, r: f64) -> f64 {
    let ok =
        |p: &[f64]| p.iter().all(|&v| v >= 0.0) && mean(p) <= theta + 1e-12 && is_r_concave(p, r);
    let mut scored: Vec<(f64, &Vec<f64>)> = mesh
        .points
        .iter()
        .zip(feasible)
        .filter(|(p, &f)| f && mean(p) <= theta + 1e-12)
        .map(|(p, _)| (upper_tail(p, xi), p))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut best = scored.first().map_or(0.0, |s| s.0);
    let dim = mesh.b; // free coordinates; the last one closes the sum
    for (_, start) in scored.iter().take(10) {
        let mut cur: Vec<f64> = start.to_vec();
        let mut cur_val = upper_tail(&cur, xi);
        let mut h = 0.005;
        for _round in 0..6 {
            let steps = 3i64;
            let mut improved = true;
            while improved {
                improved = false;
                let total = (2 * steps + 1).pow(dim as u32);
                for code in 0..total {
                    let mut c = code;
                    let mut cand = cur.clone();
                    for coord in cand.iter_mut().take(dim) {
                        let off = c % (2 * steps + 1) - steps;
                        c /= 2 * steps + 1;
                        *coord += off as f64 * h;
                    }
                    let head: f64 = cand[..dim].iter().sum();
                    cand[dim] = 1.0 - head;
                    if cand[dim] < 0.0 && cand[dim] > -1e-15 {
                        cand[dim] = 0.0;
                    }
                    for v in cand.iter_mut() {
                        if v.abs() < 1e-15 {
                            *v = 0.0;
                        }
                    }
                    if !ok(&cand) {
                        continue;
                    }
                    let v = upper_tail(&cand, xi);
                    if v > cur_val + 1e-15 {
                        cur_val = v;
                        cur = cand;
                        improved = true;
                    }
                }
            }
            h /= 5.0;
        }
        best = best.max(cur_val);
    }
    best
}
