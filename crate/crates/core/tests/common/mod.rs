//! Reference computations used by the integration tests. None of them share
//! code with the library's solvers.

#![allow(
    dead_code,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop
)]

use nalgebra::{Complex, DMatrix};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use confdim_core::multicurve::{MulticurveSpec, PreimageComponent};

/// Spectral radius of a non-negative 2x2 matrix from the quadratic formula.
pub fn radius_2x2(a: [[f64; 2]; 2]) -> f64 {
    let tr = a[0][0] + a[1][1];
    let disc = (a[0][0] - a[1][1]).powi(2) + 4.0 * a[0][1] * a[1][0];
    0.5 * (tr + disc.sqrt())
}

/// Spectral radius of an integer 3x3 matrix from the roots of its
/// characteristic polynomial `x^3 - c2 x^2 + c1 x - c0`.
///
/// Repeated roots of an integer cubic are integers, so integer roots are
/// found exactly and deflated; whatever remains has simple roots and is
/// solved through the companion matrix plus Newton polishing.
pub fn radius_3x3(a: [[i64; 3]; 3]) -> f64 {
    let c2 = a[0][0] + a[1][1] + a[2][2];
    let c1 = a[0][0] * a[1][1] - a[0][1] * a[1][0] + a[0][0] * a[2][2] - a[0][2] * a[2][0]
        + a[1][1] * a[2][2]
        - a[1][2] * a[2][1];
    let c0 = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    // monic coefficients, highest first
    let mut poly: Vec<i64> = vec![1, -c2, c1, -c0];
    let mut roots: Vec<Complex<f64>> = Vec::new();
    let bound = 1 + c2.abs().max(c1.abs()).max(c0.abs());
    'outer: while poly.len() > 1 {
        for r in -bound..=bound {
            if eval_int(&poly, r) == 0 {
                roots.push(Complex::new(r as f64, 0.0));
                poly = deflate_int(&poly, r);
                continue 'outer;
            }
        }
        break;
    }
    match poly.len() {
        1 => {}
        2 => roots.push(Complex::new(-poly[1] as f64, 0.0)),
        3 => {
            let (b, c) = (poly[1] as f64, poly[2] as f64);
            let disc = Complex::new(b * b - 4.0 * c, 0.0).sqrt();
            roots.push((-b + disc) * 0.5);
            roots.push((-b - disc) * 0.5);
        }
        _ => {
            let coeffs: Vec<f64> = poly.iter().map(|&x| x as f64).collect();
            roots.extend(companion_roots(&coeffs));
        }
    }
    roots.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn eval_int(poly: &[i64], x: i64) -> i64 {
    poly.iter().fold(0, |acc, &c| acc * x + c)
}

fn deflate_int(poly: &[i64], r: i64) -> Vec<i64> {
    let mut out = Vec::with_capacity(poly.len() - 1);
    let mut acc = 0;
    for &c in &poly[..poly.len() - 1] {
        acc = acc * r + c;
        out.push(acc);
    }
    out
}

/// Roots of a monic polynomial (coefficients highest first) as eigenvalues
/// of its companion matrix, polished by Newton steps.
pub fn companion_roots(poly: &[f64]) -> Vec<Complex<f64>> {
    let n = poly.len() - 1;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        m[(i, n - 1)] = -poly[n - i];
    }
    let eval = |z: Complex<f64>| {
        let mut p = Complex::new(0.0, 0.0);
        let mut dp = Complex::new(0.0, 0.0);
        for &c in poly {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    };
    m.complex_eigenvalues()
        .iter()
        .map(|&z0| {
            let mut z = z0;
            for _ in 0..8 {
                let (p, dp) = eval(z);
                if dp.norm() == 0.0 {
                    break;
                }
                z -= p / dp;
            }
            z
        })
        .collect()
}

/// Essential-cycle enumeration on a `c x h` cylinder with corner adjacency:
/// for every subset of cells, whether its induced nerve contains a closed
/// walk with non-zero winding number. Index `mask` of the result.
pub fn essential_subsets(c: usize, h: usize) -> Vec<bool> {
    let n = c * h;
    assert!(n <= 20);
    let mut out = vec![false; 1 << n];
    for mask in 1usize..(1 << n) {
        out[mask] = has_winding_cycle(c, h, mask);
    }
    out
}

fn has_winding_cycle(c: usize, h: usize, mask: usize) -> bool {
    let n = c * h;
    // lift offsets: potential[v] = number of seam crossings along the BFS tree
    let mut potential: Vec<Option<i64>> = vec![None; n];
    for start in 0..n {
        if mask & (1 << start) == 0 || potential[start].is_some() {
            continue;
        }
        potential[start] = Some(0);
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            let (col, row) = ((v % c) as i64, (v / c) as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    if (dr, dc) == (0, 0) {
                        continue;
                    }
                    let rr = row + dr;
                    if rr < 0 || rr >= h as i64 {
                        continue;
                    }
                    let raw = col + dc;
                    let cc = raw.rem_euclid(c as i64);
                    let wrap = (raw - cc) / c as i64;
                    let w = rr as usize * c + cc as usize;
                    if mask & (1 << w) == 0 {
                        continue;
                    }
                    let p = potential[v].unwrap() + wrap;
                    match potential[w] {
                        None => {
                            potential[w] = Some(p);
                            queue.push_back(w);
                        }
                        Some(q) if q != p => return true,
                        _ => {}
                    }
                }
            }
        }
    }
    false
}

/// Minimal total weight of an essential subset.
pub fn brute_essential_min(essential: &[bool], rho: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for (mask, &ok) in essential.iter().enumerate() {
        if ok {
            let w: f64 = (0..rho.len())
                .filter(|&s| mask & (1 << s) != 0)
                .map(|s| rho[s])
                .sum();
            best = best.min(w);
        }
    }
    best
}

fn ratio(rho: &[f64], curves: &[Vec<usize>], q: f64) -> f64 {
    let l = curves
        .iter()
        .map(|c| c.iter().map(|&s| rho[s]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    if !(l > 0.0) {
        return f64::INFINITY;
    }
    rho.iter().map(|x| x.powf(q)).sum::<f64>() / l.powf(q)
}

fn simplex_points(n: usize, steps: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
    let used: usize = prefix.iter().sum();
    if prefix.len() == n - 1 {
        let mut p: Vec<f64> = prefix.iter().map(|&k| k as f64 / steps as f64).collect();
        p.push((steps - used) as f64 / steps as f64);
        out.push(p);
        return;
    }
    for k in 0..=(steps - used) {
        prefix.push(k);
        simplex_points(n, steps, prefix, out);
        prefix.pop();
    }
}

/// `V/L^Q` with the minimum over curves replaced by the soft minimum
/// `-β^{-1} log Σ exp(-β ℓ_γ)`, which never exceeds it.
fn smoothed_ratio(rho: &[f64], curves: &[Vec<usize>], q: f64, beta: f64) -> f64 {
    let lengths: Vec<f64> = curves
        .iter()
        .map(|c| c.iter().map(|&s| rho[s]).sum::<f64>())
        .collect();
    let l = lengths.iter().copied().fold(f64::INFINITY, f64::min);
    if !(l > 0.0) {
        return f64::INFINITY;
    }
    // lengths are measured relative to the shortest one
    let soft = l
        * (1.0
            - (lengths
                .iter()
                .map(|x| (-beta * (x / l - 1.0)).exp())
                .sum::<f64>())
            .ln()
                / beta);
    if !(soft > 0.0) {
        return f64::INFINITY;
    }
    rho.iter().map(|x| x.powf(q)).sum::<f64>() / soft.powf(q)
}

/// Brute-force modulus of an explicit family: `V/L^Q` minimized over a grid
/// on the simplex of normalized weights, then refined by pattern search on
/// soft-min smoothings of increasing sharpness.
pub fn brute_modulus(n: usize, curves: &[Vec<usize>], q: f64, rng: &mut ChaCha8Rng) -> f64 {
    let steps = match n {
        0..=3 => 40,
        4 => 24,
        5 => 16,
        _ => 12,
    };
    let mut points = Vec::new();
    simplex_points(n, steps, &mut Vec::new(), &mut points);
    let mut best = points[0].clone();
    let mut best_val = ratio(&best, curves, q);
    for p in points {
        let v = ratio(&p, curves, q);
        if v < best_val {
            best_val = v;
            best = p;
        }
    }
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        dirs.push(e.clone());
        dirs.push(e.iter().map(|x| -x).collect());
        for j in 0..n {
            if i != j {
                let mut d = vec![0.0; n];
                d[i] = 1.0;
                d[j] = -1.0;
                dirs.push(d);
            }
        }
    }
    let mut point = best.clone();
    for beta in [1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7] {
        let f = |p: &[f64]| smoothed_ratio(p, curves, q, beta);
        let mut val = f(&point);
        let mut step = 1.0 / steps as f64;
        while step > 1e-11 {
            let mut improved = false;
            let mut candidates = dirs.clone();
            for _ in 0..16 {
                candidates.push((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
            }
            candidates.shuffle(rng);
            for d in &candidates {
                let trial: Vec<f64> = point
                    .iter()
                    .zip(d)
                    .map(|(x, dx)| (x + step * dx).max(0.0))
                    .collect();
                let v = f(&trial);
                if v < val {
                    val = v;
                    point = trial;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best_val = best_val.min(ratio(&point, curves, q));
    }
    best_val
}

/// Dual lower bound: `max_{λ >= 0} Σλ - Σ_s (Q-1)(t_s/Q)^{Q/(Q-1)}` with
/// `t = Σ_γ λ_γ 1_γ`, by grid plus compass search.
pub fn brute_dual(n: usize, curves: &[Vec<usize>], q: f64) -> f64 {
    let k = curves.len();
    let g = |lam: &[f64]| {
        let mut t = vec![0.0; n];
        for (c, &l) in curves.iter().zip(lam) {
            for &s in c {
                t[s] += l;
            }
        }
        lam.iter().sum::<f64>()
            - t.iter()
                .map(|&x| (q - 1.0) * (x / q).powf(q / (q - 1.0)))
                .sum::<f64>()
    };
    let top = q;
    let res = 12usize;
    let mut best = vec![0.0; k];
    let mut best_val = 0.0;
    let total = (res + 1).pow(k as u32);
    for idx in 0..total {
        let mut lam = vec![0.0; k];
        let mut r = idx;
        for l in lam.iter_mut() {
            *l = (r % (res + 1)) as f64 / res as f64 * top;
            r /= res + 1;
        }
        let v = g(&lam);
        if v > best_val {
            best_val = v;
            best = lam;
        }
    }
    let mut step = top / res as f64;
    while step > 1e-13 {
        let mut improved = false;
        for i in 0..k {
            for sign in [1.0, -1.0] {
                let mut trial = best.clone();
                trial[i] = (trial[i] + sign * step).max(0.0);
                let v = g(&trial);
                if v > best_val {
                    best_val = v;
                    best = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best_val
}

/// Random multicurve of a degree-4 map on at most 4 curves: each preimage is
/// a composition of 4; degree-one parts are peripheral or inessential, the
/// others land on a random curve or are non-essential.
pub fn random_degree_four_spec(rng: &mut ChaCha8Rng) -> MulticurveSpec {
    const COMPOSITIONS: [&[u32]; 7] = [
        &[4],
        &[2, 2],
        &[3, 1],
        &[1, 3],
        &[2, 1, 1],
        &[1, 2, 1],
        &[1, 1, 1, 1],
    ];
    let m = rng.gen_range(1..=4);
    let preimages = (0..m)
        .map(|_| {
            let parts = COMPOSITIONS[rng.gen_range(0..COMPOSITIONS.len())];
            parts
                .iter()
                .map(|&d| {
                    let roll = rng.gen_range(0..10);
                    if d >= 2 && roll < 7 {
                        PreimageComponent::essential(d, rng.gen_range(0..m))
                    } else if roll % 2 == 0 {
                        PreimageComponent::peripheral(d)
                    } else {
                        PreimageComponent::inessential(d)
                    }
                })
                .collect()
        })
        .collect();
    MulticurveSpec::new(
        (0..m).map(|i| format!("g{i}")).collect(),
        Some(4),
        preimages,
    )
    .unwrap()
}

/// Whether some non-empty set of curves has every preimage made of two
/// degree-2 components homotopic to curves of the set (the integral Lattès
/// pattern, where `λ(f_{Γ,Q}) = 2^{2-Q}` exactly).
pub fn has_lattes_block(spec: &MulticurveSpec) -> bool {
    use confdim_core::multicurve::ComponentClass;
    let m = spec.len();
    let mut alive: Vec<bool> = (0..m)
        .map(|j| {
            let p = spec.preimages(j);
            p.len() == 2
                && p.iter()
                    .all(|c| c.degree == 2 && matches!(c.class, ComponentClass::Essential(_)))
        })
        .collect();
    loop {
        let mut changed = false;
        for j in 0..m {
            if alive[j]
                && spec.preimages(j).iter().any(|c| match c.class {
                    ComponentClass::Essential(i) => !alive[i],
                    _ => true,
                })
            {
                alive[j] = false;
                changed = true;
            }
        }
        if !changed {
            return alive.iter().any(|&a| a);
        }
    }
}

/// Random explicit family: `k` curves, each a random non-empty subset.
pub fn random_family(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    (0..k)
        .map(|_| {
            let mut c: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.4)).collect();
            if c.is_empty() {
                c.push(rng.gen_range(0..n));
            }
            c
        })
        .collect()
}
