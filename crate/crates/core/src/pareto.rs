//! Pareto dominance, fast non-dominated sorting, crowding distance and
//! two-objective hypervolume, generic over the objective scalar.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    /// `Greater` when `a` is strictly better than `b`.
    fn compare<T: PartialOrd>(self, a: &T, b: &T) -> Option<Ordering> {
        match self {
            Sense::Maximize => a.partial_cmp(b),
            Sense::Minimize => b.partial_cmp(a),
        }
    }
}

/// `a` dominates `b`: no worse in every objective, strictly better in one.
pub fn dominates<T: PartialOrd>(a: &[T], b: &[T], senses: &[Sense]) -> bool {
    let mut strict = false;
    for ((x, y), sense) in a.iter().zip(b).zip(senses) {
        match sense.compare(x, y) {
            Some(Ordering::Less) | None => return false,
            Some(Ordering::Greater) => strict = true,
            Some(Ordering::Equal) => {}
        }
    }
    strict
}

/// `a` is no worse than `b` in every objective.
pub fn weakly_dominates<T: PartialOrd>(a: &[T], b: &[T], senses: &[Sense]) -> bool {
    a.iter()
        .zip(b)
        .zip(senses)
        .all(|((x, y), s)| matches!(s.compare(x, y), Some(Ordering::Greater | Ordering::Equal)))
}

/// Partitions `points` into fronts of indices. Front 0 is the
/// non-dominated set; indices inside each front are ascending.
pub fn fast_nondominated_sort<T, P>(points: &[P], senses: &[Sense]) -> Vec<Vec<usize>>
where
    T: PartialOrd,
    P: AsRef<[T]>,
{
    let n = points.len();
    let mut dominated_by_me: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for p in 0..n {
        for q in (p + 1)..n {
            let (a, b) = (points[p].as_ref(), points[q].as_ref());
            if dominates(a, b, senses) {
                dominated_by_me[p].push(q);
                domination_count[q] += 1;
            } else if dominates(b, a, senses) {
                dominated_by_me[q].push(p);
                domination_count[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by_me[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Crowding distance of one individual; boundary solutions are `Infinite`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Crowding<T> {
    Finite(T),
    Infinite,
}

impl<T: PartialOrd> PartialOrd for Crowding<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Crowding::Infinite, Crowding::Infinite) => Some(Ordering::Equal),
            (Crowding::Infinite, _) => Some(Ordering::Greater),
            (_, Crowding::Infinite) => Some(Ordering::Less),
            (Crowding::Finite(a), Crowding::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl Crowding<f64> {
    pub fn to_f64(&self) -> f64 {
        match self {
            Crowding::Finite(v) => *v,
            Crowding::Infinite => f64::INFINITY,
        }
    }
}

/// Crowding distances for the members of `front` (indices into `points`),
/// returned in `front` order. Ties in an objective are ordered by position
/// in `front`.
pub fn crowding_distance<T, P>(points: &[P], front: &[usize]) -> Vec<Crowding<T>>
where
    T: Scalar,
    P: AsRef<[T]>,
{
    let len = front.len();
    if len <= 2 {
        return vec![Crowding::Infinite; len];
    }
    let objectives = points[front[0]].as_ref().len();
    let mut dist: Vec<Crowding<T>> = vec![Crowding::Finite(T::zero()); len];
    let mut order: Vec<usize> = (0..len).collect();
    for m in 0..objectives {
        let value = |k: usize| &points[front[k]].as_ref()[m];
        order.sort_by(|&a, &b| {
            value(a)
                .partial_cmp(value(b))
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        dist[order[0]] = Crowding::Infinite;
        dist[order[len - 1]] = Crowding::Infinite;
        let range = value(order[len - 1]).clone() - value(order[0]).clone();
        if range == T::zero() {
            continue;
        }
        for w in 1..len - 1 {
            let k = order[w];
            if let Crowding::Finite(d) = &mut dist[k] {
                let gap = value(order[w + 1]).clone() - value(order[w - 1]).clone();
                *d = d.clone() + gap / range.clone();
            }
        }
    }
    dist
}

/// Area dominated by `points` and bounded by `reference`, for two
/// objectives. Points that do not strictly improve on the reference in
/// both objectives contribute nothing.
pub fn hypervolume_2d<T: Scalar>(points: &[[T; 2]], senses: [Sense; 2], reference: &[T; 2]) -> T {
    let gain = |v: &T, k: usize| match senses[k] {
        Sense::Maximize => v.clone() - reference[k].clone(),
        Sense::Minimize => reference[k].clone() - v.clone(),
    };
    let mut boxes: Vec<(T, T)> = points
        .iter()
        .map(|p| (gain(&p[0], 0), gain(&p[1], 1)))
        .filter(|(a, b)| *a > T::zero() && *b > T::zero())
        .collect();
    boxes.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(Ordering::Equal));
    let mut area = T::zero();
    let mut height = T::zero();
    for (width, h) in boxes {
        if h > height {
            area = area + width * (h.clone() - height);
            height = h;
        }
    }
    area
}
