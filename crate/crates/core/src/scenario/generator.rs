//! Seeded synthetic scenes on the template maps.
//!
//! Turning scenes end their observed window just before the junction box so
//! the history is straight and the turn happens in the future. Car-following
//! scenes place a cruising, braking or stopped lead ahead of the focal actor,
//! whose future follows the intelligent driver model.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::templates::{self, Arm, Maneuver, ARM_LENGTH, CORRIDOR, INTERSECTION, LANE_WIDTH, T_JUNCTION};
use super::{ActorTrack, Category, Scenario, ScenarioMeta};
use crate::error::{Error, Result};
use crate::lane_graph::{concatenate_centerlines, LaneGraph};
use crate::{Point2, Polyline2};

/// Category fractions; must sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub straight: f64,
    pub left: f64,
    pub right: f64,
    pub lane: f64,
    pub follow: f64,
}

impl Default for Mix {
    fn default() -> Self {
        Mix {
            straight: 0.3,
            left: 0.2,
            right: 0.2,
            lane: 0.05,
            follow: 0.25,
        }
    }
}

impl Mix {
    pub fn only(c: Category) -> Self {
        let mut m = Mix {
            straight: 0.0,
            left: 0.0,
            right: 0.0,
            lane: 0.0,
            follow: 0.0,
        };
        *m.get_mut(c) = 1.0;
        m
    }

    pub fn get(&self, c: Category) -> f64 {
        match c {
            Category::Straight => self.straight,
            Category::Left => self.left,
            Category::Right => self.right,
            Category::Lane => self.lane,
            Category::Follow => self.follow,
        }
    }

    fn get_mut(&mut self, c: Category) -> &mut f64 {
        match c {
            Category::Straight => &mut self.straight,
            Category::Left => &mut self.left,
            Category::Right => &mut self.right,
            Category::Lane => &mut self.lane,
            Category::Follow => &mut self.follow,
        }
    }

    /// Parses `straight=0.3,left=0.2,...`; omitted categories are zero.
    pub fn parse(s: &str) -> Result<Self> {
        let mut m = Mix::only(Category::Straight);
        m.straight = 0.0;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidMix(format!("expected key=value, got `{part}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidMix(format!("bad fraction `{v}`")))?;
            let c = Category::ALL
                .into_iter()
                .find(|c| c.name() == k.trim())
                .ok_or_else(|| Error::InvalidMix(format!("unknown category `{k}`")))?;
            *m.get_mut(c) = v;
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = Category::ALL.map(|c| self.get(c));
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidMix("fractions must be non-negative".into()));
        }
        let sum: f64 = vals.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidMix(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Integer counts by largest remainder.
    pub fn counts(&self, n: usize) -> [usize; 5] {
        let raw = Category::ALL.map(|c| self.get(c) * n as f64);
        let mut counts = raw.map(|r| r.floor() as usize);
        let mut rest = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..5).collect();
        order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
        for &i in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            counts[i] += 1;
            rest -= 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub n_scenarios: usize,
    pub seed: u64,
    pub mix: Mix,
    pub obs_len: usize,
    pub pred_len: usize,
    pub dt: f64,
    /// Std-dev of the per-actor speed factor, clipped at `speed_noise_clip`.
    pub speed_noise: f64,
    pub speed_noise_clip: f64,
    /// Std-dev of the per-actor lateral offset, clipped at 3 sigma.
    pub lateral_sigma: f64,
    /// Std-dev of per-point lateral noise, clipped at 3 sigma.
    pub point_sigma: f64,
    pub min_background: usize,
    pub max_background: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            n_scenarios: 100,
            seed: 0,
            mix: Mix::default(),
            obs_len: 10,
            pred_len: 15,
            dt: 0.1,
            speed_noise: 0.05,
            speed_noise_clip: 0.15,
            lateral_sigma: 0.15,
            point_sigma: 0.02,
            min_background: 1,
            max_background: 3,
            train_fraction: 0.8,
            val_fraction: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub split: Split,
    pub category: Category,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub params: GeneratorParams,
    /// map id to relative path
    pub maps: BTreeMap<String, String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub maps: BTreeMap<String, LaneGraph>,
    pub scenarios: Vec<Scenario>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Scenario> {
        self.manifest
            .entries
            .iter()
            .zip(&self.scenarios)
            .filter(|(e, _)| e.split == split)
            .map(|(_, s)| s)
            .collect()
    }

    pub fn map_for(&self, s: &Scenario) -> Result<&LaneGraph> {
        self.maps
            .get(&s.map_id)
            .ok_or_else(|| Error::schema("/map_id", format!("unknown map `{}`", s.map_id)))
    }

    pub fn scenario(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("maps"))?;
        std::fs::create_dir_all(dir.join("scenarios"))?;
        for (id, g) in &self.maps {
            g.save(dir.join(&self.manifest.maps[id]))?;
        }
        for (e, s) in self.manifest.entries.iter().zip(&self.scenarios) {
            s.save(dir.join(&e.path))?;
        }
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let maps = manifest
            .maps
            .iter()
            .map(|(id, p)| Ok((id.clone(), LaneGraph::load(dir.join(p))?)))
            .collect::<Result<_>>()?;
        let scenarios = manifest
            .entries
            .iter()
            .map(|e| Scenario::load(dir.join(&e.path)))
            .collect::<Result<_>>()?;
        Ok(Dataset {
            manifest,
            maps,
            scenarios,
        })
    }
}

/// Per-actor draw of motion noise.
struct ActorNoise {
    speed_factor: f64,
    offset: f64,
}

struct Ctx<'a> {
    p: &'a GeneratorParams,
    maps: &'a BTreeMap<String, LaneGraph>,
    rng: ChaCha8Rng,
}

impl Ctx<'_> {
    fn total(&self) -> usize {
        self.p.obs_len + self.p.pred_len
    }

    fn last_obs(&self) -> usize {
        self.p.obs_len - 1
    }

    fn clipped_normal(&mut self, sigma: f64, clip: f64) -> f64 {
        if sigma <= 0.0 {
            return 0.0;
        }
        let n = Normal::new(0.0, sigma).expect("valid sigma");
        n.sample(&mut self.rng).clamp(-clip, clip)
    }

    fn noise(&mut self) -> ActorNoise {
        let speed_factor = 1.0 + self.clipped_normal(self.p.speed_noise, self.p.speed_noise_clip);
        let offset = self.clipped_normal(self.p.lateral_sigma, 3.0 * self.p.lateral_sigma);
        ActorNoise { speed_factor, offset }
    }

    fn path(&self, map_id: &str, ids: &[String]) -> Polyline2 {
        concatenate_centerlines(&self.maps[map_id], ids).expect("template route")
    }

    /// Positions along `path` at arclengths `s` with lateral offsets `lat`.
    fn track(&mut self, path: &Polyline2, s: &[f64], lat: &[f64], noise: &ActorNoise) -> Vec<Point2> {
        let sigma = self.p.point_sigma;
        s.iter()
            .zip(lat)
            .map(|(&si, &li)| {
                let t = path.tangent_at(si);
                let normal = Point2::new(-t.y, t.x);
                let jitter = self.clipped_normal(sigma, 3.0 * sigma);
                path.interpolate(si) + normal * (li + noise.offset + jitter)
            })
            .collect()
    }

    fn constant_speed(&self, s_end_obs: f64, v: f64) -> Vec<f64> {
        let ke = self.last_obs() as f64;
        (0..self.total())
            .map(|k| s_end_obs + v * (k as f64 - ke) * self.p.dt)
            .collect()
    }

    fn split_track(&self, pts: Vec<Point2>) -> ActorTrack {
        let (obs, fut) = pts.split_at(self.p.obs_len);
        ActorTrack {
            observed: obs.to_vec(),
            future: Some(fut.to_vec()),
        }
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

// intelligent driver model acceleration, clamped to [-9, 2] m/s^2
fn idm_accel(v: f64, v0: f64, gap: f64, dv: f64) -> f64 {
    let (a, b, t_head, s0) = (2.0, 3.0, 1.2, 2.0);
    let s_star = s0 + (v * t_head + v * dv / (2.0 * (a * b as f64).sqrt())).max(0.0);
    let gap = gap.max(0.1);
    let acc = a * (1.0 - (v / v0.max(0.1)).powi(4) - (s_star / gap).powi(2));
    acc.clamp(-9.0, 2.0)
}

const VEHICLE_LENGTH: f64 = 4.5;

struct Placed {
    map_id: String,
    /// lane ids occupied by the focal route, excluded for background actors
    focal_lanes: Vec<String>,
    focal: ActorTrack,
    others: Vec<ActorTrack>,
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

fn junction_map(ctx: &mut Ctx, p_intersection: f64) -> &'static str {
    if ctx.rng.random::<f64>() < p_intersection {
        INTERSECTION
    } else {
        T_JUNCTION
    }
}

fn place_junction(ctx: &mut Ctx, map_id: &str, m: Maneuver, speed: (f64, f64), d0: (f64, f64)) -> Placed {
    let arm = pick(&mut ctx.rng, &templates::arms_with(map_id, m));
    let ids = templates::route(arm, m);
    let path = ctx.path(map_id, &ids);
    let noise = ctx.noise();
    let v = ctx.rng.random_range(speed.0..speed.1) * noise.speed_factor;
    let d = ctx.rng.random_range(d0.0..d0.1);
    let s = ctx.constant_speed(ARM_LENGTH - d, v);
    let lat = vec![0.0; s.len()];
    let pts = ctx.track(&path, &s, &lat, &noise);
    Placed {
        map_id: map_id.to_string(),
        focal_lanes: ids,
        focal: ctx.split_track(pts),
        others: vec![],
    }
}

fn place_corridor_straight(ctx: &mut Ctx) -> Placed {
    let lane = ctx.rng.random_range(0..2);
    let ids = templates::corridor_lane_ids(lane);
    let path = ctx.path(CORRIDOR, &ids);
    let noise = ctx.noise();
    let v = ctx.rng.random_range(8.0..13.0) * noise.speed_factor;
    let s_end = ctx.rng.random_range(25.0..path.length() - 40.0);
    let s = ctx.constant_speed(s_end, v);
    let lat = vec![0.0; s.len()];
    let pts = ctx.track(&path, &s, &lat, &noise);
    Placed {
        map_id: CORRIDOR.into(),
        focal_lanes: ids,
        focal: ctx.split_track(pts),
        others: vec![],
    }
}

fn place_straight(ctx: &mut Ctx) -> Placed {
    let u: f64 = ctx.rng.random();
    if u < 0.5 {
        return place_corridor_straight(ctx);
    }
    let map_id = junction_map(ctx, 0.7);
    // half of the junction approaches stop short of the box like the turns do
    let d0 = if ctx.rng.random::<bool>() { (0.0, 2.0) } else { (-8.0, 25.0) };
    place_junction(ctx, map_id, Maneuver::Through, (8.0, 13.0), d0)
}

fn place_lane_change(ctx: &mut Ctx) -> Placed {
    let lane = ctx.rng.random_range(0..2usize);
    let ids = templates::corridor_lane_ids(lane);
    let path = ctx.path(CORRIDOR, &ids);
    let noise = ctx.noise();
    let v = ctx.rng.random_range(8.0..13.0) * noise.speed_factor;
    let s_end = ctx.rng.random_range(25.0..path.length() - 40.0);
    let s = ctx.constant_speed(s_end, v);
    let dir = if lane == 0 { 1.0 } else { -1.0 };
    let t0 = ctx.p.obs_len as f64 * ctx.p.dt + ctx.rng.random_range(0.0..0.3);
    let dur = ctx.rng.random_range(1.0..1.3);
    let lat: Vec<f64> = (0..s.len())
        .map(|k| dir * LANE_WIDTH * smoothstep((k as f64 * ctx.p.dt - t0) / dur))
        .collect();
    let pts = ctx.track(&path, &s, &lat, &noise);
    let target = templates::corridor_lane_ids(1 - lane);
    Placed {
        map_id: CORRIDOR.into(),
        focal_lanes: ids.into_iter().chain(target).collect(),
        focal: ctx.split_track(pts),
        others: vec![],
    }
}

#[derive(Clone, Copy)]
enum Lead {
    Cruise,
    Brake,
    Stopped,
}

fn place_follow(ctx: &mut Ctx) -> Placed {
    let (map_id, ids) = if ctx.rng.random::<f64>() < 0.8 {
        let lane = ctx.rng.random_range(0..2);
        (CORRIDOR.to_string(), templates::corridor_lane_ids(lane))
    } else {
        let arm = pick(&mut ctx.rng, &templates::arms_with(INTERSECTION, Maneuver::Through));
        (INTERSECTION.to_string(), templates::route(arm, Maneuver::Through))
    };
    let path = ctx.path(&map_id, &ids);
    let noise = ctx.noise();
    let lead_noise = ctx.noise();
    let v = ctx.rng.random_range(8.0..13.0) * noise.speed_factor;
    let gap = ctx.rng.random_range(8.0..15.0);
    let kind = pick(&mut ctx.rng, &[Lead::Cruise, Lead::Brake, Lead::Stopped]);
    let total = ctx.total();
    let ke = ctx.last_obs();
    let dt = ctx.p.dt;
    let s_end = ctx.rng.random_range(30.0..path.length() - 60.0);

    // lead speed profile over the whole window
    let lead_v: Vec<f64> = match kind {
        Lead::Cruise => {
            let vl = v * ctx.rng.random_range(0.6..1.0);
            vec![vl; total]
        }
        Lead::Brake => {
            let vl = v * ctx.rng.random_range(0.8..1.0);
            let decel = ctx.rng.random_range(2.0..5.0);
            let t_b = ke as f64 + ctx.rng.random_range(-3.0..3.0);
            (0..total)
                .map(|k| (vl - decel * ((k as f64 - t_b) * dt).max(0.0)).max(0.0))
                .collect()
        }
        Lead::Stopped => vec![0.0; total],
    };
    let mut lead_s = vec![0.0; total];
    lead_s[ke] = s_end + gap;
    for k in (0..ke).rev() {
        lead_s[k] = lead_s[k + 1] - 0.5 * (lead_v[k] + lead_v[k + 1]) * dt;
    }
    for k in ke + 1..total {
        lead_s[k] = lead_s[k - 1] + 0.5 * (lead_v[k] + lead_v[k - 1]) * dt;
    }

    let mut s = ctx.constant_speed(s_end, v);
    let (mut pos, mut vel) = (s_end, v);
    let sub = 10;
    let h = dt / sub as f64;
    for k in ke + 1..total {
        for j in 0..sub {
            let frac = j as f64 / sub as f64;
            let ls = lead_s[k - 1] + (lead_s[k] - lead_s[k - 1]) * frac;
            let lv = lead_v[k - 1] + (lead_v[k] - lead_v[k - 1]) * frac;
            let acc = idm_accel(vel, v, ls - pos - VEHICLE_LENGTH, vel - lv);
            let nv = (vel + acc * h).max(0.0);
            pos += 0.5 * (vel + nv) * h;
            vel = nv;
            pos = pos.min(ls - VEHICLE_LENGTH + 0.5);
        }
        s[k] = pos;
    }
    let lat = vec![0.0; total];
    let focal = ctx.track(&path, &s, &lat, &noise);
    let lead = ctx.track(&path, &lead_s, &lat, &lead_noise);
    Placed {
        map_id,
        focal_lanes: ids,
        focal: ctx.split_track(focal),
        others: vec![ctx.split_track(lead)],
    }
}

fn add_background(ctx: &mut Ctx, placed: &mut Placed) {
    let n = ctx.rng.random_range(ctx.p.min_background..=ctx.p.max_background);
    let total = ctx.total();
    for _ in 0..n {
        let ids = if placed.map_id == CORRIDOR {
            let lanes: Vec<usize> = (0..2)
                .filter(|&l| !placed.focal_lanes.contains(&templates::corridor_id(l, 0)))
                .collect();
            if lanes.is_empty() {
                return;
            }
            templates::corridor_lane_ids(pick(&mut ctx.rng, &lanes))
        } else {
            let mut routes = Vec::new();
            for arm in Arm::ALL {
                for m in Maneuver::ALL {
                    if templates::arms_with(&placed.map_id, m).contains(&arm) {
                        let r = templates::route(arm, m);
                        if !r.iter().any(|id| placed.focal_lanes.contains(id)) {
                            routes.push(r);
                        }
                    }
                }
            }
            routes[ctx.rng.random_range(0..routes.len())].clone()
        };
        let path = ctx.path(&placed.map_id, &ids);
        let noise = ctx.noise();
        let v = if ctx.rng.random::<f64>() < 0.2 {
            0.0
        } else {
            ctx.rng.random_range(4.0..12.0) * noise.speed_factor
        };
        let travel = v * total as f64 * ctx.p.dt;
        let lo = 5.0 + v * ctx.last_obs() as f64 * ctx.p.dt;
        let hi = (path.length() - 5.0 - (travel - lo + 5.0)).max(lo + 1.0);
        let s_end = ctx.rng.random_range(lo..hi);
        let s = ctx.constant_speed(s_end, v);
        let lat = vec![0.0; total];
        let pts = ctx.track(&path, &s, &lat, &noise);
        placed.others.push(ctx.split_track(pts));
    }
}

/// One scene of the given category; deterministic in (params, index).
pub fn generate_scenario(
    params: &GeneratorParams,
    maps: &BTreeMap<String, LaneGraph>,
    category: Category,
    index: usize,
) -> Scenario {
    let seed = params.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut ctx = Ctx {
        p: params,
        maps,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut placed = match category {
        Category::Straight => place_straight(&mut ctx),
        Category::Left => {
            let map_id = junction_map(&mut ctx, 0.7);
            place_junction(&mut ctx, map_id, Maneuver::Left, (9.0, 12.0), (0.0, 2.0))
        }
        Category::Right => {
            let map_id = junction_map(&mut ctx, 0.7);
            place_junction(&mut ctx, map_id, Maneuver::Right, (5.0, 8.0), (0.0, 2.0))
        }
        Category::Lane => place_lane_change(&mut ctx),
        Category::Follow => place_follow(&mut ctx),
    };
    add_background(&mut ctx, &mut placed);
    let mut actors = BTreeMap::new();
    actors.insert("focal".to_string(), placed.focal);
    for (i, a) in placed.others.into_iter().enumerate() {
        actors.insert(format!("a{i}"), a);
    }
    Scenario {
        id: format!("s{index:05}"),
        map_id: placed.map_id,
        focal_id: "focal".into(),
        actors,
        metadata: Some(ScenarioMeta { category }),
    }
}

pub fn generate_dataset(params: &GeneratorParams) -> Result<Dataset> {
    params.mix.validate()?;
    if params.obs_len < 2 || params.pred_len < 1 {
        return Err(Error::InvalidMix("obs_len must be >= 2 and pred_len >= 1".into()));
    }
    let maps = templates::map_templates();
    let counts = params.mix.counts(params.n_scenarios);
    let mut cats: Vec<Category> = Category::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&c, n)| std::iter::repeat_n(c, n))
        .collect();
    let mut master = ChaCha8Rng::seed_from_u64(params.seed);
    cats.shuffle(&mut master);
    let mut order: Vec<usize> = (0..params.n_scenarios).collect();
    order.shuffle(&mut master);
    let n_train = (params.train_fraction * params.n_scenarios as f64).round() as usize;
    let n_val = (params.val_fraction * params.n_scenarios as f64).round() as usize;
    let mut split = vec![Split::Test; params.n_scenarios];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let scenarios: Vec<Scenario> = cats
        .iter()
        .enumerate()
        .map(|(i, &c)| generate_scenario(params, &maps, c, i))
        .collect();
    let entries = scenarios
        .iter()
        .zip(&cats)
        .zip(&split)
        .map(|((s, &category), &split)| ManifestEntry {
            id: s.id.clone(),
            path: format!("scenarios/{}.json", s.id),
            split,
            category,
        })
        .collect();
    let manifest = DatasetManifest {
        params: params.clone(),
        maps: maps.keys().map(|k| (k.clone(), format!("maps/{k}.json"))).collect(),
        entries,
    };
    Ok(Dataset {
        manifest,
        maps,
        scenarios,
    })
}
