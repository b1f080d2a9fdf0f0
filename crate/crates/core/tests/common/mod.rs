//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use edgeforge::edges::{canny_stages, combine};
use edgeforge::imaging::dilate;
use edgeforge::{EdgeMask, EdgeParams, Hyper, Image, ModelKind, ModelState, ScalerState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gray scene with a few flat rectangles and disks plus mild noise.
pub fn random_scene(rng: &mut impl Rng) -> Image {
    let w = rng.random_range(16..64);
    let h = rng.random_range(16..64);
    let bg = rng.random_range(0..=255u8);
    let mut data = vec![bg; w * h];
    for _ in 0..rng.random_range(1..5) {
        let tone = rng.random_range(0..=255u8);
        let (cx, cy) = (rng.random_range(0..w) as f64, rng.random_range(0..h) as f64);
        let r = rng.random_range(3.0..(w.min(h) as f64 / 2.0));
        let disk = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if disk { dx * dx + dy * dy <= r * r } else { dx.abs() <= r && dy.abs() <= r * 0.6 };
                if inside {
                    data[y * w + x] = tone;
                }
            }
        }
    }
    for v in &mut data {
        *v = (i32::from(*v) + rng.random_range(-6..=6)).clamp(0, 255) as u8;
    }
    Image::new(w, h, 1, data).unwrap()
}

/// Nearest of the four NMS directions, from the angle folded into [0, 180).
fn oracle_direction(gx: f64, gy: f64) -> (isize, isize) {
    let deg = gy.atan2(gx).to_degrees().rem_euclid(180.0);
    match ((deg + 22.5) / 45.0).floor() as i32 % 4 {
        0 => (1, 0),
        1 => (1, 1),
        2 => (0, 1),
        _ => (-1, 1),
    }
}

/// Checks the Canny postconditions on one image; returns a description of
/// the first violation.
pub fn check_canny(img: &Image, params: &EdgeParams) -> Result<(), String> {
    let st = canny_stages(img, params).map_err(|e| e.to_string())?;
    let (w, h) = (img.width(), img.height());
    let mag = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            st.magnitude.at(x as usize, y as usize)
        }
    };
    let max = (0..w * h).map(|i| st.magnitude.data[i]).fold(0.0, f64::max);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = st.magnitude.data[i];
            let expect = st.gx.data[i].hypot(st.gy.data[i]);
            if (m - expect).abs() > 1e-9 * (1.0 + expect) {
                return Err(format!("magnitude at ({x},{y}) is {m}, expected {expect}"));
            }
            if !st.edges.get(x, y) {
                continue;
            }
            let (dx, dy) = oracle_direction(st.gx.data[i], st.gy.data[i]);
            let (xi, yi) = (x as isize, y as isize);
            if m < mag(xi + dx, yi + dy) || m < mag(xi - dx, yi - dy) {
                return Err(format!("edge pixel ({x},{y}) is not a directional maximum"));
            }
            if m < params.canny.low * max {
                return Err(format!("edge pixel ({x},{y}) is below the low threshold"));
            }
        }
    }
    // Every edge pixel reaches a strong pixel through edge pixels.
    let mut reached = vec![false; w * h];
    let mut queue: VecDeque<usize> = (0..w * h)
        .filter(|&i| st.edges.bits()[i] && st.magnitude.data[i] >= params.canny.high * max)
        .collect();
    for &i in &queue {
        reached[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (nx, ny) in neighbours8(x, y, w, h) {
            let j = ny * w + nx;
            if st.edges.bits()[j] && !reached[j] {
                reached[j] = true;
                queue.push_back(j);
            }
        }
    }
    if let Some(i) = (0..w * h).find(|&i| st.edges.bits()[i] && !reached[i]) {
        return Err(format!("edge pixel {i} is not connected to a strong pixel"));
    }
    // Maximality: a retained-eligible weak pixel next to an edge is an edge.
    for i in 0..w * h {
        if st.weak.bits()[i] && !st.edges.bits()[i] {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            if neighbours8(x, y, w, h).any(|(nx, ny)| st.edges.get(nx, ny)) {
                return Err(format!("weak pixel {i} touches an edge but was dropped"));
            }
        }
    }
    Ok(())
}

fn neighbours8(x: isize, y: isize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1..=1)
        .flat_map(move |dy| (-1..=1).map(move |dx| (x + dx, y + dy)))
        .filter(move |&(nx, ny)| (nx, ny) != (x, y) && nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize)
        .map(|(nx, ny)| (nx as usize, ny as usize))
}

pub fn random_mask(rng: &mut impl Rng, w: usize, h: usize) -> EdgeMask {
    let p = rng.random_range(0.0..1.0);
    let bits = (0..w * h).map(|_| rng.random_bool(p)).collect();
    EdgeMask::from_bits(w, h, bits).unwrap()
}

/// Commutativity, associativity and idempotence of the union on `trials`
/// random 16x16 triples, against a pointwise OR.
pub fn check_union_algebra(trials: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for t in 0..trials {
        let (a, b, c) = (random_mask(&mut r, 16, 16), random_mask(&mut r, 16, 16), random_mask(&mut r, 16, 16));
        let u = |x: &EdgeMask, y: &EdgeMask| combine(&[x, y]).unwrap();
        let or = EdgeMask::from_fn(16, 16, |x, y| a.get(x, y) || b.get(x, y) || c.get(x, y));
        if u(&a, &b) != u(&b, &a) {
            return Err(format!("trial {t}: union not commutative"));
        }
        if u(&u(&a, &b), &c) != u(&a, &u(&b, &c)) || u(&a, &u(&b, &c)) != or {
            return Err(format!("trial {t}: union not associative"));
        }
        if combine(&[&a, &b, &c]).unwrap() != or {
            return Err(format!("trial {t}: n-ary union differs from OR"));
        }
        if u(&a, &a) != a {
            return Err(format!("trial {t}: union not idempotent"));
        }
    }
    Ok(())
}

/// Dilation by brute force: a pixel is set iff some set pixel lies within
/// Chebyshev distance `r`.
pub fn dilate_oracle(m: &EdgeMask, r: usize) -> EdgeMask {
    let r = r as isize;
    EdgeMask::from_fn(m.width(), m.height(), |x, y| {
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                nx >= 0 && ny >= 0 && (nx as usize) < m.width() && (ny as usize) < m.height() && m.get(nx as usize, ny as usize)
            })
        })
    })
}

pub fn check_dilation(trials: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for t in 0..trials {
        let (w, h) = (r.random_range(1..20), r.random_range(1..20));
        let m = random_mask(&mut r, w, h);
        let (r1, r2) = (r.random_range(0..4), r.random_range(0..4));
        if dilate(&m, r1) != dilate_oracle(&m, r1) {
            return Err(format!("trial {t}: dilate({r1}) differs from brute force"));
        }
        if dilate(&dilate(&m, r1), r2) != dilate(&m, r1 + r2) {
            return Err(format!("trial {t}: dilate({r1}) then ({r2}) != dilate({})", r1 + r2));
        }
    }
    Ok(())
}

/// Scalar re-statement of the four update rules, class by class.
pub struct OracleModel {
    pub kind: ModelKind,
    pub hyper: Hyper,
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl OracleModel {
    pub fn new(kind: ModelKind, classes: usize, dim: usize, hyper: Hyper) -> Self {
        Self {
            kind,
            hyper,
            w: vec![vec![0.0; dim]; classes],
            b: vec![0.0; classes],
        }
    }

    pub fn step(&mut self, x: &[f64], label: usize) {
        let h = self.hyper;
        let mut sq = 0.0;
        for v in x {
            sq += v * v;
        }
        for c in 0..self.w.len() {
            let y = if c == label { 1.0 } else { -1.0 };
            let mut s = self.b[c];
            for j in 0..x.len() {
                s += self.w[c][j] * x[j];
            }
            let tau = match self.kind {
                ModelKind::SgdLogistic => {
                    for j in 0..x.len() {
                        self.w[c][j] *= 1.0 - h.eta0 * h.alpha;
                    }
                    let z = y * s;
                    let sig = 1.0 / (1.0 + (-z).exp());
                    h.eta0 * (1.0 - sig) * y
                }
                ModelKind::Perceptron => {
                    if s * y <= 0.0 {
                        y
                    } else {
                        0.0
                    }
                }
                ModelKind::PaHinge => {
                    let loss = f64::max(0.0, 1.0 - y * s);
                    let t = if sq == 0.0 { h.c_agg } else { f64::min(h.c_agg, loss / sq) };
                    if loss == 0.0 {
                        0.0
                    } else {
                        t * y
                    }
                }
                ModelKind::PaSquaredHinge => {
                    let loss = f64::max(0.0, 1.0 - y * s);
                    loss / (sq + 1.0 / (2.0 * h.c_agg)) * y
                }
            };
            if tau != 0.0 {
                for j in 0..x.len() {
                    self.w[c][j] += tau * x[j];
                }
                if h.fit_intercept {
                    self.b[c] += tau;
                }
            }
        }
    }
}

/// Runs `steps` random updates through the model and the oracle, checking
/// agreement after every step (exact for the perceptron and for passive PA
/// steps, within `tol` otherwise).
pub fn check_learner(kind: ModelKind, steps: usize, seed: u64, tol: f64) -> Result<(), String> {
    let mut r = rng(seed);
    let dim = r.random_range(1..=10);
    let classes = r.random_range(2..=5);
    let hyper = Hyper {
        eta0: r.random_range(0.001..0.5),
        alpha: r.random_range(0.0..0.01),
        c_agg: r.random_range(0.05..2.0),
        fit_intercept: r.random_bool(0.7),
    };
    let mut model = ModelState::new(kind, classes, dim, hyper).map_err(|e| e.to_string())?;
    let mut oracle = OracleModel::new(kind, classes, dim, hyper);
    for step in 0..steps {
        let x: Vec<f64> = if kind == ModelKind::Perceptron {
            (0..dim).map(|_| f64::from(r.random_range(-3i32..=3))).collect()
        } else {
            (0..dim).map(|_| r.random_range(-2.0..2.0)).collect()
        };
        let label = r.random_range(0..classes);
        let before = model.clone();
        let passive = matches!(kind, ModelKind::PaHinge | ModelKind::PaSquaredHinge)
            && (0..classes).all(|c| {
                let y = if c == label { 1.0 } else { -1.0 };
                y * before.score(c, &x) >= 1.0
            });
        model.update_one(&x, label).map_err(|e| e.to_string())?;
        oracle.step(&x, label);
        if passive && (model.weights != before.weights || model.bias != before.bias || model.steps != before.steps) {
            return Err(format!("{kind} step {step}: passive step changed the state"));
        }
        let exact = kind == ModelKind::Perceptron;
        for c in 0..classes {
            for j in 0..dim {
                let (a, o) = (model.row(c)[j], oracle.w[c][j]);
                if (exact && a != o) || (a - o).abs() > tol {
                    return Err(format!("{kind} step {step}: w[{c}][{j}] = {a}, oracle {o}"));
                }
            }
            let (a, o) = (model.bias[c], oracle.b[c]);
            if (exact && a != o) || (a - o).abs() > tol {
                return Err(format!("{kind} step {step}: b[{c}] = {a}, oracle {o}"));
            }
        }
    }
    Ok(())
}

/// Streams `n` random values through the scaler in random batch sizes and
/// compares with a two-pass computation. Returns the worst relative error.
pub fn scaler_relative_error(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let dim = 3;
    let rows: Vec<Vec<f64>> = (0..n / dim)
        .map(|_| {
            vec![
                r.random_range(-1.0..1.0),
                r.random_range(1e3..1e3 + 1.0),
                r.random_range(0.0..255.0),
            ]
        })
        .collect();
    let mut s = ScalerState::new(dim);
    let mut start = 0;
    while start < rows.len() {
        let len = r.random_range(1..=rows.len().min(5000)).min(rows.len() - start);
        s.update(rows[start..start + len].iter().map(Vec::as_slice)).unwrap();
        start += len;
    }
    let count = rows.len() as f64;
    let mut worst: f64 = 0.0;
    for j in 0..dim {
        let mean = rows.iter().map(|x| x[j]).sum::<f64>() / count;
        let var = rows.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / count;
        worst = worst
            .max((s.mean[j] - mean).abs() / mean.abs().max(var.sqrt()))
            .max((s.variance()[j] - var).abs() / var);
    }
    worst
}
