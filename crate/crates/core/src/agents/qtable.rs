use rand::Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::envs::{ActionId, StateKey};
use crate::error::{Error, Result};

/// Tabular action values, 0 for anything never updated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    #[serde(with = "rows")]
    table: FxHashMap<StateKey, Vec<f64>>,
    pub actions: usize,
    pub alpha: f64,
    pub gamma: f64,
}

mod rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        t: &FxHashMap<StateKey, Vec<f64>>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let mut rows: Vec<_> = t.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        s.collect_seq(rows)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<FxHashMap<StateKey, Vec<f64>>, D::Error> {
        let rows: Vec<(StateKey, Vec<f64>)> = Vec::deserialize(d)?;
        Ok(rows.into_iter().collect())
    }
}

/// Index of the max, ties broken uniformly at random.
pub(crate) fn argmax_random<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties = values.iter().filter(|&&v| v == best).count();
    let mut pick = if ties > 1 { rng.gen_range(0..ties) } else { 0 };
    for (i, &v) in values.iter().enumerate() {
        if v == best {
            if pick == 0 {
                return i;
            }
            pick -= 1;
        }
    }
    unreachable!("non-empty values")
}

impl QTable {
    pub fn new(actions: usize, alpha: f64, gamma: f64) -> Result<Self> {
        if actions == 0 {
            return Err(Error::Config("a q-table needs at least one action".into()));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {gamma}")));
        }
        Ok(QTable {
            table: FxHashMap::default(),
            actions,
            alpha,
            gamma,
        })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn values(&self, s: &StateKey) -> Option<&[f64]> {
        self.table.get(s).map(Vec::as_slice)
    }

    pub fn value(&self, s: &StateKey, a: ActionId) -> f64 {
        self.table.get(s).map_or(0.0, |v| v[a.0])
    }

    pub fn max_value(&self, s: &StateKey) -> f64 {
        self.table
            .get(s)
            .map_or(0.0, |v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Greedy action; ties (including unvisited states) are uniform.
    pub fn greedy<R: Rng + ?Sized>(&self, s: &StateKey, rng: &mut R) -> ActionId {
        match self.table.get(s) {
            Some(v) => ActionId(argmax_random(v, rng)),
            None => ActionId(if self.actions > 1 { rng.gen_range(0..self.actions) } else { 0 }),
        }
    }

    fn slot(&mut self, s: &StateKey) -> &mut Vec<f64> {
        if !self.table.contains_key(s) {
            self.table.insert(s.clone(), vec![0.0; self.actions]);
        }
        self.table.get_mut(s).expect("inserted above")
    }

    pub fn set(&mut self, s: &StateKey, a: ActionId, v: f64) {
        self.slot(s)[a.0] = v;
    }

    /// `Q(s,a) += alpha (r + gamma max_a' Q(s',a') - Q(s,a))`, bootstrapping
    /// from 0 on terminal transitions.
    pub fn q_update(&mut self, s: &StateKey, a: ActionId, r: f64, s2: &StateKey, terminal: bool) -> f64 {
        let alpha = self.alpha;
        self.q_update_with_alpha(s, a, r, s2, terminal, alpha)
    }

    pub fn q_update_with_alpha(
        &mut self,
        s: &StateKey,
        a: ActionId,
        r: f64,
        s2: &StateKey,
        terminal: bool,
        alpha: f64,
    ) -> f64 {
        let next = if terminal { 0.0 } else { self.max_value(s2) };
        let gamma = self.gamma;
        let q = &mut self.slot(s)[a.0];
        *q += alpha * (r + gamma * next - *q);
        *q
    }

    /// `Q(s,a) += alpha (r + gamma Q(s',a') - Q(s,a))`.
    pub fn sarsa_update(
        &mut self,
        s: &StateKey,
        a: ActionId,
        r: f64,
        s2: &StateKey,
        a2: ActionId,
        terminal: bool,
    ) -> f64 {
        let next = if terminal { 0.0 } else { self.value(s2, a2) };
        let (alpha, gamma) = (self.alpha, self.gamma);
        let q = &mut self.slot(s)[a.0];
        *q += alpha * (r + gamma * next - *q);
        *q
    }

    /// Rows sorted by state.
    pub fn snapshot(&self) -> Vec<(StateKey, Vec<f64>)> {
        let mut rows: Vec<_> = self.table.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;

    fn k(v: u16) -> StateKey {
        StateKey(vec![v])
    }

    #[test]
    fn first_update_from_zero() {
        let mut q = QTable::new(2, 0.2, 0.9).unwrap();
        assert_eq!(q.q_update(&k(0), ActionId(1), 1.0, &k(1), false), 0.2);
        assert_eq!(q.value(&k(0), ActionId(0)), 0.0);
    }

    #[test]
    fn bellman_fixed_point_is_kept() {
        let mut q = QTable::new(2, 0.2, 0.9).unwrap();
        q.set(&k(0), ActionId(0), 9.0);
        q.set(&k(1), ActionId(1), 10.0);
        assert_eq!(q.q_update(&k(0), ActionId(0), 0.0, &k(1), false), 9.0);
    }

    #[test]
    fn terminal_ignores_next_state() {
        let mut q = QTable::new(1, 1.0, 0.9).unwrap();
        q.set(&k(1), ActionId(0), 100.0);
        assert_eq!(q.q_update(&k(0), ActionId(0), 2.0, &k(1), true), 2.0);
        assert_eq!(q.sarsa_update(&k(2), ActionId(0), 3.0, &k(1), ActionId(0), true), 3.0);
    }

    #[test]
    fn sarsa_uses_the_given_next_action() {
        let mut q = QTable::new(2, 0.5, 1.0).unwrap();
        q.set(&k(1), ActionId(0), 4.0);
        q.set(&k(1), ActionId(1), 8.0);
        assert_eq!(q.sarsa_update(&k(0), ActionId(0), 0.0, &k(1), ActionId(0), false), 2.0);
    }

    #[test]
    fn two_state_chain_matches_value_iteration() {
        // s0 -a0-> s1 (r 0), s0 -a1-> end (r 1); s1 -a0-> end (r 2), s1 -a1-> s0 (r 0)
        let gamma = 0.9;
        let mut vi = [[0.0f64; 2]; 2];
        for _ in 0..500 {
            let m = |s: usize, vi: &[[f64; 2]; 2]| vi[s][0].max(vi[s][1]);
            let next = [
                [gamma * m(1, &vi), 1.0],
                [2.0, gamma * m(0, &vi)],
            ];
            vi = next;
        }
        let mut q = QTable::new(2, 1.0, gamma).unwrap();
        let trans = |s: usize, a: usize| -> (f64, usize, bool) {
            match (s, a) {
                (0, 0) => (0.0, 1, false),
                (0, 1) => (1.0, 0, true),
                (1, 0) => (2.0, 0, true),
                _ => (0.0, 0, false),
            }
        };
        for sweep in 0..5000 {
            let alpha = 1.0 / (1.0 + sweep as f64 / 10.0);
            for s in 0..2 {
                for a in 0..2 {
                    let (r, n, t) = trans(s, a);
                    q.q_update_with_alpha(&k(s as u16), ActionId(a), r, &k(n as u16), t, alpha);
                }
            }
        }
        for s in 0..2 {
            for a in 0..2 {
                assert!((q.value(&k(s as u16), ActionId(a)) - vi[s][a]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn greedy_ties_are_uniform() {
        let q = QTable::new(3, 0.1, 0.9).unwrap();
        let mut rng = rng_from(3);
        let mut counts = [0usize; 3];
        for _ in 0..3000 {
            counts[q.greedy(&k(0), &mut rng).0] += 1;
        }
        assert!(counts.iter().all(|&c| (900..1100).contains(&c)), "{counts:?}");
    }

    #[test]
    fn bad_config_is_rejected() {
        assert!(QTable::new(0, 0.1, 0.9).is_err());
        assert!(QTable::new(2, 0.0, 0.9).is_err());
        assert!(QTable::new(2, 0.1, 1.5).is_err());
    }
}
