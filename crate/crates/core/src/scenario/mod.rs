//! Scenario files and the synthetic dataset generator.

pub mod generator;
pub mod templates;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::Point2;

/// Ground-truth behavior label written by the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Straight,
    Left,
    Right,
    Lane,
    Follow,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Straight,
        Category::Left,
        Category::Right,
        Category::Lane,
        Category::Follow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Straight => "straight",
            Category::Left => "left",
            Category::Right => "right",
            Category::Lane => "lane",
            Category::Follow => "follow",
        }
    }

    pub fn is_turn(self) -> bool {
        matches!(self, Category::Left | Category::Right | Category::Lane)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub category: Category,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActorTrack {
    pub observed: Vec<Point2>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub future: Option<Vec<Point2>>,
}

impl ActorTrack {
    pub fn observed_only(observed: Vec<Point2>) -> Self {
        ActorTrack { observed, future: None }
    }

    /// Observed followed by future points.
    pub fn full(&self) -> Vec<Point2> {
        let mut v = self.observed.clone();
        if let Some(f) = &self.future {
            v.extend_from_slice(f);
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub id: String,
    pub map_id: String,
    pub focal_id: String,
    pub actors: BTreeMap<String, ActorTrack>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metadata: Option<ScenarioMeta>,
}

const KNOWN_ROOT: [&str; 5] = ["id", "map_id", "focal_id", "actors", "metadata"];
const KNOWN_ACTOR: [&str; 2] = ["observed", "future"];

fn parse_points(v: &Value, pointer: &str) -> Result<Vec<Point2>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::schema(pointer, "expected an array of [x, y] pairs"))?;
    arr.iter()
        .enumerate()
        .map(|(i, p)| {
            let ptr = format!("{pointer}/{i}");
            let pair = p.as_array().filter(|a| a.len() == 2).ok_or_else(|| Error::schema(&ptr, "expected [x, y]"))?;
            let coord = |j: usize| {
                pair[j]
                    .as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::schema(format!("{ptr}/{j}"), "expected a finite number"))
            };
            Ok(Point2::new(coord(0)?, coord(1)?))
        })
        .collect()
}

fn string_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<String> {
    obj.get(key)
        .and_then(|v| v.as_str())
        .map(String::from)
        .ok_or_else(|| Error::schema(format!("/{key}"), "missing or not a string"))
}

impl Scenario {
    pub fn focal(&self) -> &ActorTrack {
        &self.actors[&self.focal_id]
    }

    pub fn obs_len(&self) -> usize {
        self.focal().observed.len()
    }

    pub fn pred_len(&self) -> Option<usize> {
        self.focal().future.as_ref().map(|f| f.len())
    }

    pub fn category(&self) -> Option<Category> {
        self.metadata.as_ref().map(|m| m.category)
    }

    /// Structural invariants: focal present, equal observed lengths (at least
    /// two points), equal future lengths, finite coordinates.
    pub fn validate(&self) -> Result<()> {
        let focal = self
            .actors
            .get(&self.focal_id)
            .ok_or_else(|| Error::schema("/focal_id", format!("actor `{}` not in /actors", self.focal_id)))?;
        let t_obs = focal.observed.len();
        if t_obs < 2 {
            return Err(Error::schema(
                format!("/actors/{}/observed", self.focal_id),
                "needs at least 2 points",
            ));
        }
        let t_pred = focal.future.as_ref().map(|f| f.len());
        for (id, a) in &self.actors {
            if a.observed.len() != t_obs {
                return Err(Error::schema(
                    format!("/actors/{id}/observed"),
                    format!("expected {t_obs} points, got {}", a.observed.len()),
                ));
            }
            if let (Some(f), Some(n)) = (&a.future, t_pred) {
                if f.len() != n {
                    return Err(Error::schema(
                        format!("/actors/{id}/future"),
                        format!("expected {n} points, got {}", f.len()),
                    ));
                }
            }
            if a.observed.iter().chain(a.future.iter().flatten()).any(|p| !p.is_finite()) {
                return Err(Error::schema(format!("/actors/{id}"), "non-finite coordinate"));
            }
        }
        Ok(())
    }

    pub fn from_json_value(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| Error::schema("", "expected an object"))?;
        for k in obj.keys().filter(|k| !KNOWN_ROOT.contains(&k.as_str())) {
            log::warn!("ignoring unknown scenario field `{k}`");
        }
        let id = string_field(obj, "id")?;
        let map_id = string_field(obj, "map_id")?;
        let focal_id = string_field(obj, "focal_id")?;
        let actors_v = obj
            .get("actors")
            .and_then(|a| a.as_object())
            .ok_or_else(|| Error::schema("/actors", "missing or not an object"))?;
        let mut actors = BTreeMap::new();
        for (aid, a) in actors_v {
            let ptr = format!("/actors/{aid}");
            let ao = a.as_object().ok_or_else(|| Error::schema(&ptr, "expected an object"))?;
            for k in ao.keys().filter(|k| !KNOWN_ACTOR.contains(&k.as_str())) {
                log::warn!("ignoring unknown actor field `{ptr}/{k}`");
            }
            let observed = parse_points(
                ao.get("observed").ok_or_else(|| Error::schema(format!("{ptr}/observed"), "missing"))?,
                &format!("{ptr}/observed"),
            )?;
            let future = match ao.get("future") {
                None | Some(Value::Null) => None,
                Some(f) => Some(parse_points(f, &format!("{ptr}/future"))?),
            };
            actors.insert(aid.clone(), ActorTrack { observed, future });
        }
        let metadata = match obj.get("metadata") {
            None | Some(Value::Null) => None,
            Some(m) => Some(
                serde_json::from_value(m.clone()).map_err(|e| Error::schema("/metadata", e.to_string()))?,
            ),
        };
        let s = Scenario {
            id,
            map_id,
            focal_id,
            actors,
            metadata,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_json_value(&serde_json::from_str(s)?)
    }

    pub fn to_json_value(&self) -> Value {
        serde_json::to_value(self).expect("scenario serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Applies a point map to every observed and future point.
    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Scenario {
        let mut out = self.clone();
        for a in out.actors.values_mut() {
            for p in a.observed.iter_mut().chain(a.future.iter_mut().flatten()) {
                *p = f(*p);
            }
        }
        out
    }

    /// Copy with futures removed.
    pub fn without_futures(&self) -> Scenario {
        let mut out = self.clone();
        for a in out.actors.values_mut() {
            a.future = None;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Value {
        json!({
            "id": "s1", "map_id": "m", "focal_id": "a",
            "actors": {
                "a": {"observed": [[0.0, 0.0], [1.0, 0.1]], "future": [[2.0, 0.2]]},
                "b": {"observed": [[5.0, 5.0], [5.0, 5.0]]}
            }
        })
    }

    #[test]
    fn parses_and_round_trips() {
        let s = Scenario::from_json_value(&sample()).unwrap();
        assert_eq!(s.obs_len(), 2);
        assert_eq!(s.pred_len(), Some(1));
        assert_eq!(s.to_json_value(), sample());
        let back = Scenario::from_json_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn schema_pointers() {
        let mut v = sample();
        v.as_object_mut().unwrap().remove("focal_id");
        match Scenario::from_json_value(&v) {
            Err(Error::SchemaViolation { pointer, .. }) => assert_eq!(pointer, "/focal_id"),
            other => panic!("{other:?}"),
        }
        let mut v = sample();
        v["actors"]["b"]["observed"][1] = json!([1.0, "x"]);
        match Scenario::from_json_value(&v) {
            Err(Error::SchemaViolation { pointer, .. }) => assert_eq!(pointer, "/actors/b/observed/1/1"),
            other => panic!("{other:?}"),
        }
        let mut v = sample();
        v["focal_id"] = json!("zz");
        assert!(matches!(Scenario::from_json_value(&v), Err(Error::SchemaViolation { .. })));
        let mut v = sample();
        v["actors"]["b"]["observed"] = json!([[0.0, 0.0]]);
        match Scenario::from_json_value(&v) {
            Err(Error::SchemaViolation { pointer, .. }) => assert_eq!(pointer, "/actors/b/observed"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let mut v = sample();
        v["extra"] = json!({"anything": 1});
        v["actors"]["a"]["kind"] = json!("car");
        let s = Scenario::from_json_value(&v).unwrap();
        assert_eq!(s.to_json_value(), sample());
    }
}
