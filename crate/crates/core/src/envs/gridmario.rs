//! A deterministic side-scrolling grid platformer with a 27-feature,
//! 12-action interface.
//!
//! The level is a `width x 16` tile grid generated from a level id. Rows
//! 0 and 1 are ground; the agent stands on row 2. Pits (gaps of 1-3
//! columns) and blocks (1-3 tiles high) interrupt flat segments. Enemies
//! patrol five-column stretches of flat ground and coins float three
//! rows above it.
//!
//! One tick: horizontal velocity moves one unit toward the commanded
//! speed (1 walking, 2 running), the agent moves horizontally cell by
//! cell, then vertically under a jump impulse of 3 and gravity of 1 per
//! tick (terminal fall speed 3). Landing on an enemy stomps it; any other
//! contact kills.

use std::sync::Arc;

use rand::Rng;
use serde_json::json;

use super::{ActionId, FeatureVector, StepOutcome};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng_from};

pub(super) const FEATURE_COUNT: usize = 27;
pub(super) const ACTION_COUNT: usize = 12;

/// Number of distinct levels.
pub const LEVEL_COUNT: u32 = 1_000_000;
pub const WIDTH: usize = 256;
pub const HEIGHT: i32 = 16;
/// Row the agent stands on when on flat ground.
pub const GROUND_TOP: i32 = 2;

const JUMP_VY: i32 = 3;
const MAX_FALL: i32 = 3;
const ENEMY_SPAN: i32 = 4;
/// Ticks for an enemy to walk its span and back (one cell per two ticks).
pub const ENEMY_PERIOD: u32 = 4 * ENEMY_SPAN as u32;

pub const COIN_REWARD: f64 = 10.0;
pub const STOMP_REWARD: f64 = 50.0;
pub const PROGRESS_REWARD: f64 = 1.0;
pub const DEATH_REWARD: f64 = -100.0;
pub const GOAL_REWARD: f64 = 200.0;

const WINDOW_COLS: i32 = 4;
const WINDOW_ROWS: i32 = 5;
const ENEMY_RANGE: i32 = 8;
const LEVEL_SEED_SALT: u64 = 0x6772_6964_6d61_7269;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tile {
    Empty,
    Solid,
    Coin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnemySpec {
    /// Leftmost column of the patrol.
    pub lo: i32,
    pub y: i32,
    pub phase: u32,
}

impl EnemySpec {
    pub fn x_at(&self, t: u32) -> i32 {
        let cycle = 2 * ENEMY_SPAN as u32;
        let k = (t / 2 + self.phase) % cycle;
        let k = k as i32;
        if k <= ENEMY_SPAN {
            self.lo + k
        } else {
            self.lo + 2 * ENEMY_SPAN - k
        }
    }
}

#[derive(Debug, Clone)]
pub struct Level {
    pub width: usize,
    tiles: Vec<Tile>,
    /// Coin ordinal for each coin tile, `u32::MAX` elsewhere.
    coin_ids: Vec<u32>,
    pub coin_count: usize,
    pub enemies: Vec<EnemySpec>,
    pub goal_x: i32,
}

impl Level {
    /// Generates the full-width level for `level_id`.
    pub fn new(level_id: u32) -> Self {
        Level::generate(level_id, WIDTH)
    }

    /// Generates a level of arbitrary width; narrow levels are used for
    /// exhaustive reachability checks.
    pub fn generate(level_id: u32, width: usize) -> Self {
        let width = width.max(24);
        let w = width as i32;
        let mut rng = rng_from(derive_seed(LEVEL_SEED_SALT, u64::from(level_id)));
        let mut tiles = vec![Tile::Empty; width * HEIGHT as usize];
        let idx = |x: i32, y: i32| (y * w + x) as usize;
        for x in 0..w {
            for y in 0..GROUND_TOP {
                tiles[idx(x, y)] = Tile::Solid;
            }
        }
        let mut enemies = Vec::new();
        let end_zone = w - 10;
        let mut x = 10;
        while x < end_zone - 4 {
            let seg = rng.gen_range(6..=14).min(end_zone - x);
            if rng.gen_bool(0.4) {
                let n = rng.gen_range(2..=3).min(seg - 2);
                let start = x + rng.gen_range(1..=(seg - n).max(1));
                for c in start..(start + n).min(x + seg) {
                    tiles[idx(c, GROUND_TOP + 3)] = Tile::Coin;
                }
            }
            if seg >= 8 && rng.gen_bool(0.35) {
                let lo = x + 1 + rng.gen_range(0..=(seg - ENEMY_SPAN - 3));
                enemies.push(EnemySpec {
                    lo,
                    y: GROUND_TOP,
                    phase: rng.gen_range(0..2 * ENEMY_SPAN as u32),
                });
            }
            x += seg;
            if x >= end_zone - 4 {
                break;
            }
            match rng.gen_range(0..3) {
                0 => {
                    let gap = rng.gen_range(1..=3);
                    for c in x..x + gap {
                        for y in 0..GROUND_TOP {
                            tiles[idx(c, y)] = Tile::Empty;
                        }
                    }
                    x += gap;
                }
                1 => {
                    let h = rng.gen_range(1..=3);
                    let bw = rng.gen_range(1..=2);
                    for c in x..x + bw {
                        for y in GROUND_TOP..GROUND_TOP + h {
                            tiles[idx(c, y)] = Tile::Solid;
                        }
                    }
                    x += bw;
                }
                _ => {}
            }
        }
        let mut coin_ids = vec![u32::MAX; tiles.len()];
        let mut coin_count = 0;
        for (i, t) in tiles.iter().enumerate() {
            if *t == Tile::Coin {
                coin_ids[i] = coin_count as u32;
                coin_count += 1;
            }
        }
        Level {
            width,
            tiles,
            coin_ids,
            coin_count,
            enemies,
            goal_x: w - 4,
        }
    }

    pub fn tile(&self, x: i32, y: i32) -> Tile {
        if x < 0 || x >= self.width as i32 || !(0..HEIGHT).contains(&y) {
            return Tile::Empty;
        }
        self.tiles[(y * self.width as i32 + x) as usize]
    }

    pub fn solid(&self, x: i32, y: i32) -> bool {
        self.tile(x, y) == Tile::Solid
    }

    fn coin_id(&self, x: i32, y: i32) -> Option<usize> {
        if x < 0 || x >= self.width as i32 || !(0..HEIGHT).contains(&y) {
            return None;
        }
        let id = self.coin_ids[(y * self.width as i32 + x) as usize];
        (id != u32::MAX).then_some(id as usize)
    }

    /// True when column `x` has no ground under the agent's standing row.
    pub fn is_pit(&self, x: i32) -> bool {
        !self.solid(x, GROUND_TOP - 1)
    }
}

/// Decoded action: direction (-1, 0, +1), jump button, run button.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarioAction {
    pub dir: i32,
    pub jump: bool,
    pub run: bool,
}

impl MarioAction {
    /// Index layout: `dir_index * 4 + jump * 2 + run`, dir_index 0 = left,
    /// 1 = none, 2 = right.
    pub fn decode(action: ActionId) -> Self {
        let i = action.0;
        MarioAction {
            dir: (i / 4) as i32 - 1,
            jump: (i / 2) % 2 == 1,
            run: i % 2 == 1,
        }
    }

    pub fn encode(self) -> ActionId {
        ActionId((self.dir + 1) as usize * 4 + usize::from(self.jump) * 2 + usize::from(self.run))
    }
}

/// Everything that changes during an episode.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MarioState {
    pub x: i32,
    pub y: i32,
    pub vx: i32,
    pub vy: i32,
    pub on_ground: bool,
    pub t: u32,
    pub alive: Vec<bool>,
    pub coins_taken: Vec<bool>,
    pub rightmost: i32,
}

#[derive(Debug, Clone)]
pub struct GridMario {
    level: Arc<Level>,
    level_id: u32,
    max_steps: usize,
    state: MarioState,
    steps: usize,
    done: bool,
}

impl GridMario {
    pub fn new(level_id: u32, max_steps: usize) -> Self {
        GridMario::with_level(Arc::new(Level::new(level_id)), level_id, max_steps)
    }

    pub fn with_level(level: Arc<Level>, level_id: u32, max_steps: usize) -> Self {
        let state = GridMario::start_state(&level);
        GridMario {
            level,
            level_id,
            max_steps,
            state,
            steps: 0,
            done: true,
        }
    }

    fn start_state(level: &Level) -> MarioState {
        MarioState {
            x: 0,
            y: GROUND_TOP,
            vx: 0,
            vy: 0,
            on_ground: true,
            t: 0,
            alive: vec![true; level.enemies.len()],
            coins_taken: vec![false; level.coin_count],
            rightmost: 0,
        }
    }

    pub fn level(&self) -> &Arc<Level> {
        &self.level
    }

    pub fn level_id(&self) -> u32 {
        self.level_id
    }

    pub fn state(&self) -> &MarioState {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Levels are fully determined by their id; the seed is unused.
    pub fn reset(&mut self, _rng_seed: u64) -> FeatureVector {
        self.state = GridMario::start_state(&self.level);
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn take_coin(&mut self, x: i32, y: i32) -> f64 {
        match self.level.coin_id(x, y) {
            Some(id) if !self.state.coins_taken[id] => {
                self.state.coins_taken[id] = true;
                COIN_REWARD
            }
            _ => 0.0,
        }
    }

    pub fn step(&mut self, action: ActionId) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("step called on a terminal gridmario episode".into()));
        }
        let act = MarioAction::decode(action);
        let level = Arc::clone(&self.level);
        let width = level.width as i32;
        let mut reward = 0.0;

        let target = act.dir * if act.run { 2 } else { 1 };
        self.state.vx += (target - self.state.vx).signum();
        if act.jump && self.state.on_ground {
            self.state.vy = JUMP_VY;
            self.state.on_ground = false;
        }

        let mut swept = vec![(self.state.x, self.state.y)];
        let hs = self.state.vx.signum();
        for _ in 0..self.state.vx.abs() {
            let nx = self.state.x + hs;
            if nx < 0 || nx >= width || level.solid(nx, self.state.y) {
                self.state.vx = 0;
                break;
            }
            self.state.x = nx;
            swept.push((self.state.x, self.state.y));
            reward += self.take_coin(self.state.x, self.state.y);
        }

        let mut descended = false;
        if self.state.on_ground && !level.solid(self.state.x, self.state.y - 1) {
            // walked off an edge: start falling this tick
            self.state.on_ground = false;
            self.state.vy = -1;
        }
        if !self.state.on_ground {
            if self.state.vy > 0 {
                for _ in 0..self.state.vy {
                    if self.state.y + 1 >= HEIGHT || level.solid(self.state.x, self.state.y + 1) {
                        self.state.vy = 0;
                        break;
                    }
                    self.state.y += 1;
                    swept.push((self.state.x, self.state.y));
                    reward += self.take_coin(self.state.x, self.state.y);
                }
            } else {
                for _ in 0..(-self.state.vy) {
                    if level.solid(self.state.x, self.state.y - 1) {
                        break;
                    }
                    self.state.y -= 1;
                    descended = true;
                    if self.state.y < 0 {
                        break;
                    }
                    swept.push((self.state.x, self.state.y));
                    reward += self.take_coin(self.state.x, self.state.y);
                }
            }
            self.state.vy = (self.state.vy - 1).max(-MAX_FALL);
        }
        self.state.on_ground = self.state.y >= 0 && level.solid(self.state.x, self.state.y - 1);
        if self.state.on_ground {
            self.state.vy = 0;
        }

        self.state.t += 1;
        let mut dead = self.state.y < 0;
        if !dead {
            let t = self.state.t;
            let (ax, ay) = (self.state.x, self.state.y);
            for (i, e) in level.enemies.iter().enumerate() {
                if !self.state.alive[i] {
                    continue;
                }
                let pos = (e.x_at(t), e.y);
                if !swept.contains(&pos) {
                    continue;
                }
                if descended && pos == (ax, ay) {
                    self.state.alive[i] = false;
                    reward += STOMP_REWARD;
                } else {
                    dead = true;
                    break;
                }
            }
        }

        if self.state.x > self.state.rightmost {
            reward += PROGRESS_REWARD * f64::from(self.state.x - self.state.rightmost);
            self.state.rightmost = self.state.x;
        }

        self.steps += 1;
        if dead {
            reward = DEATH_REWARD;
            self.done = true;
        } else if self.state.x >= level.goal_x {
            reward = GOAL_REWARD;
            self.done = true;
        } else if self.steps >= self.max_steps {
            self.done = true;
        }
        if self.state.y < 0 {
            // keep the observation inside the grid after a pit fall
            self.state.y = 0;
        }
        Ok(StepOutcome {
            next_state: self.observation(),
            reward,
            terminal: self.done,
        })
    }

    /// Nearest live enemy as clipped `(dx, dy)`, or `(8, 0)` when none is
    /// within eight columns.
    fn nearest_enemy(&self) -> (i32, i32) {
        let s = &self.state;
        let mut best: Option<(i32, i32)> = None;
        for (i, e) in self.level.enemies.iter().enumerate() {
            if !s.alive[i] {
                continue;
            }
            let dx = e.x_at(s.t) - s.x;
            let dy = e.y - s.y;
            if dx.abs() > ENEMY_RANGE {
                continue;
            }
            let closer = match best {
                None => true,
                Some((bx, by)) => (dx.abs(), dy.abs(), dx) < (bx.abs(), by.abs(), bx),
            };
            if closer {
                best = Some((dx, dy));
            }
        }
        let (dx, dy) = best.unwrap_or((ENEMY_RANGE, 0));
        (dx, dy.clamp(-ENEMY_RANGE, ENEMY_RANGE))
    }

    pub fn observation(&self) -> FeatureVector {
        let s = &self.state;
        let mut f = Vec::with_capacity(FEATURE_COUNT);
        f.push(f64::from(s.x));
        f.push(f64::from(s.y));
        f.push(f64::from(s.vx));
        f.push(if s.on_ground { 1.0 } else { 0.0 });
        let width = self.level.width as i32;
        for c in 1..=WINDOW_COLS {
            for r in -(WINDOW_ROWS / 2)..=(WINDOW_ROWS / 2) {
                let (cx, cy) = (s.x + c, s.y + r);
                let occupied = cx >= width || self.level.solid(cx, cy);
                f.push(if occupied { 1.0 } else { 0.0 });
            }
        }
        let (dx, dy) = self.nearest_enemy();
        f.push(f64::from(dx));
        f.push(f64::from(dy));
        let mut coin = false;
        'outer: for cx in s.x..=s.x + WINDOW_COLS {
            for cy in s.y - 2..=s.y + 4 {
                if let Some(id) = self.level.coin_id(cx, cy) {
                    if !s.coins_taken[id] {
                        coin = true;
                        break 'outer;
                    }
                }
            }
        }
        f.push(if coin { 1.0 } else { 0.0 });
        debug_assert_eq!(f.len(), FEATURE_COUNT);
        FeatureVector(f)
    }

    pub fn render(&self) -> serde_json::Value {
        const VIEW: i32 = 32;
        let s = &self.state;
        let x0 = (s.x - 8).clamp(0, (self.level.width as i32 - VIEW).max(0));
        let mut rows = Vec::with_capacity(HEIGHT as usize);
        for y in (0..HEIGHT).rev() {
            let mut row = String::with_capacity(VIEW as usize);
            for x in x0..x0 + VIEW {
                let c = match self.level.tile(x, y) {
                    Tile::Solid => '#',
                    Tile::Coin => match self.level.coin_id(x, y) {
                        Some(id) if s.coins_taken[id] => '.',
                        _ => 'o',
                    },
                    Tile::Empty => '.',
                };
                row.push(if x == self.level.goal_x && y == GROUND_TOP { 'G' } else { c });
            }
            rows.push(row);
        }
        let enemies: Vec<[i32; 2]> = self
            .level
            .enemies
            .iter()
            .enumerate()
            .filter(|(i, _)| s.alive[*i])
            .map(|(_, e)| [e.x_at(s.t), e.y])
            .filter(|[x, _]| (x0..x0 + VIEW).contains(x))
            .collect();
        json!({
            "kind": "gridmario",
            "x": s.x,
            "y": s.y,
            "vx": s.vx,
            "t": s.t,
            "view_x0": x0,
            "rows": rows,
            "enemies": enemies,
            "goal_x": self.level.goal_x,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::collections::{HashSet, VecDeque};

    use super::*;

    #[test]
    fn action_codec_covers_twelve_actions() {
        let mut seen = HashSet::new();
        for i in 0..ACTION_COUNT {
            let a = MarioAction::decode(ActionId(i));
            assert_eq!(a.encode(), ActionId(i));
            seen.insert((a.dir, a.jump, a.run));
        }
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn reset_puts_agent_at_start() {
        let mut env = GridMario::new(0, 600);
        let f = env.reset(0);
        assert_eq!(f.len(), FEATURE_COUNT);
        assert!(f.as_slice().iter().all(|v| v.is_finite()));
        assert_eq!(f.as_slice()[0], 0.0);
        assert_eq!(f.as_slice()[1], f64::from(GROUND_TOP));
        assert_eq!(f.as_slice()[3], 1.0);
    }

    #[test]
    fn same_level_same_trajectory() {
        let actions: Vec<ActionId> = (0..200).map(|i| ActionId((i * 7 + 3) % 12)).collect();
        let run = || {
            let mut env = GridMario::new(42, 600);
            let mut out = vec![env.reset(0)];
            for a in &actions {
                if env.is_done() {
                    break;
                }
                out.push(env.step(*a).unwrap().next_state);
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn levels_differ_by_id() {
        let a = Level::new(1);
        let b = Level::new(2);
        assert!(a.tiles != b.tiles || a.enemies != b.enemies);
    }

    #[test]
    fn walking_right_on_flat_ground_earns_progress() {
        let mut env = GridMario::new(3, 600);
        env.reset(0);
        // start zone is flat for ten columns
        let out = env.step(MarioAction { dir: 1, jump: false, run: false }.encode()).unwrap();
        assert_eq!(out.reward, PROGRESS_REWARD);
        assert_eq!(out.next_state.as_slice()[0], 1.0);
    }

    #[test]
    fn jump_arc_is_seven_ticks() {
        let mut env = GridMario::new(3, 600);
        env.reset(0);
        let jump = MarioAction { dir: 0, jump: true, run: false }.encode();
        let idle = MarioAction { dir: 0, jump: false, run: false }.encode();
        let mut heights = vec![];
        let out = env.step(jump).unwrap();
        heights.push(out.next_state.as_slice()[1] as i32 - GROUND_TOP);
        for _ in 0..6 {
            let out = env.step(idle).unwrap();
            heights.push(out.next_state.as_slice()[1] as i32 - GROUND_TOP);
        }
        assert_eq!(heights, vec![3, 5, 6, 6, 5, 3, 0]);
    }

    #[test]
    fn falling_into_a_pit_kills() {
        let level = (0..1000)
            .map(|id| Level::new(id))
            .find(|l| l.is_pit(16) && (10..16).all(|x| !l.is_pit(x) && !l.solid(x, GROUND_TOP)))
            .expect("some level has a pit at column 16");
        let level = Arc::new(level);
        let mut env = GridMario::with_level(level.clone(), 0, 600);
        env.reset(0);
        let walk = MarioAction { dir: 1, jump: false, run: false }.encode();
        let mut last = None;
        for _ in 0..40 {
            let out = env.step(walk).unwrap();
            let done = out.terminal;
            last = Some(out);
            if done {
                break;
            }
        }
        let out = last.unwrap();
        assert!(out.terminal);
        assert_eq!(out.reward, DEATH_REWARD);
    }

    #[test]
    fn step_after_terminal_is_usage_error() {
        let mut env = GridMario::new(0, 1);
        env.reset(0);
        assert!(env.step(ActionId(0)).unwrap().terminal);
        assert!(matches!(env.step(ActionId(0)), Err(Error::Usage(_))));
    }

    #[test]
    fn generator_respects_jumpable_limits() {
        for id in (0..LEVEL_COUNT).step_by(9973) {
            let l = Level::new(id);
            let w = l.width as i32;
            let mut gap = 0;
            for x in 0..w {
                if l.is_pit(x) {
                    gap += 1;
                    assert!(gap <= 3, "level {id} has a pit wider than 3 at {x}");
                } else {
                    gap = 0;
                }
                assert!(!l.solid(x, GROUND_TOP + 3), "level {id} block taller than 3 at {x}");
            }
            assert!((0..10).all(|x| !l.is_pit(x) && !l.solid(x, GROUND_TOP)));
            assert!(l.goal_x < w && !l.is_pit(l.goal_x));
        }
    }

    /// Breadth-first search over the true dynamics. Enemy positions are a
    /// function of `t mod ENEMY_PERIOD`, so the reachable state set is
    /// finite once `t` is folded.
    fn goal_reachable(level: Arc<Level>) -> bool {
        type Key = (i32, i32, i32, i32, bool, u32, Vec<bool>);
        let mut env = GridMario::with_level(level, 0, usize::MAX);
        env.reset(0);
        let key = |e: &GridMario| -> Key {
            let s = e.state();
            (s.x, s.y, s.vx, s.vy, s.on_ground, s.t % ENEMY_PERIOD, s.alive.clone())
        };
        let mut seen = HashSet::new();
        seen.insert(key(&env));
        let mut queue = VecDeque::from([env]);
        while let Some(cur) = queue.pop_front() {
            for a in 0..ACTION_COUNT {
                let mut next = cur.clone();
                let out = next.step(ActionId(a)).unwrap();
                if out.terminal {
                    if out.reward == GOAL_REWARD {
                        return true;
                    }
                    continue;
                }
                if seen.insert(key(&next)) {
                    queue.push_back(next);
                }
            }
        }
        false
    }

    #[test]
    fn small_levels_are_completable() {
        for id in (0..LEVEL_COUNT).step_by(24_989).take(40) {
            let level = Arc::new(Level::generate(id, 48));
            assert!(goal_reachable(level), "level {id} (width 48) has no path to the goal");
        }
    }
}
