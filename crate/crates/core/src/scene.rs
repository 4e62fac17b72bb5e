//! Scenes, trajectories and multi-mode predictions, with JSON persistence.
//!
//! Agents are identified by their index in every array. Positions are in
//! meters and headings in radians, wrapped to `(-π, π]`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2-D position `[x, y]` in meters.
pub type Point = [f64; 2];

/// Positions of one agent, one entry per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory(pub Vec<Point>);

impl Trajectory {
    pub fn new(points: Vec<Point>) -> Self {
        Trajectory(points)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.0
    }

    pub fn last(&self) -> Option<Point> {
        self.0.last().copied()
    }

    fn check(&self, what: &str, expected_len: usize) -> Result<()> {
        if self.len() != expected_len {
            return Err(Error::Shape(format!(
                "{what} has {} steps, expected {expected_len}",
                self.len()
            )));
        }
        for (t, p) in self.0.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::NonFinite(format!("{what} at step {t}")));
            }
        }
        Ok(())
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Ground-truth agent states of one scene: observed history, future and the
/// true heading of every agent at every future step.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    past: Vec<Trajectory>,
    future: Vec<Trajectory>,
    yaw: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    n: usize,
    t_obs: usize,
    t_fut: usize,
    past: Vec<Trajectory>,
    future: Vec<Trajectory>,
    yaw: Vec<Vec<f64>>,
}

impl SceneSpec {
    /// Builds a scene, checking every invariant. This is the only validation
    /// path; [`load_scene`] goes through it as well.
    pub fn new(past: Vec<Trajectory>, future: Vec<Trajectory>, yaw: Vec<Vec<f64>>) -> Result<Self> {
        let n = past.len();
        if n == 0 {
            return Err(Error::Shape("scene has no agents".into()));
        }
        let t_obs = past[0].len();
        let t_fut = future.first().map_or(0, Trajectory::len);
        Self::validate(n, t_obs, t_fut, &past, &future, &yaw)?;
        Ok(SceneSpec { past, future, yaw })
    }

    fn validate(
        n: usize,
        t_obs: usize,
        t_fut: usize,
        past: &[Trajectory],
        future: &[Trajectory],
        yaw: &[Vec<f64>],
    ) -> Result<()> {
        if n == 0 {
            return Err(Error::Shape("scene has no agents".into()));
        }
        if t_obs == 0 || t_fut == 0 {
            return Err(Error::Shape("past and future lengths must be positive".into()));
        }
        if past.len() != n || future.len() != n || yaw.len() != n {
            return Err(Error::Shape(format!(
                "expected {n} agents, got past={}, future={}, yaw={}",
                past.len(),
                future.len(),
                yaw.len()
            )));
        }
        for i in 0..n {
            past[i].check(&format!("past trajectory of agent {i}"), t_obs)?;
            future[i].check(&format!("future trajectory of agent {i}"), t_fut)?;
            if yaw[i].len() != t_fut {
                return Err(Error::Shape(format!(
                    "yaw of agent {i} has {} steps, expected {t_fut}",
                    yaw[i].len()
                )));
            }
            for (t, &phi) in yaw[i].iter().enumerate() {
                if !phi.is_finite() {
                    return Err(Error::NonFinite(format!("yaw of agent {i} at step {t}")));
                }
                if !(phi > -PI && phi <= PI) {
                    return Err(Error::Invalid(format!(
                        "yaw of agent {i} at step {t} is {phi}, outside (-pi, pi]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.past.len()
    }

    pub fn t_obs(&self) -> usize {
        self.past[0].len()
    }

    pub fn t_fut(&self) -> usize {
        self.future[0].len()
    }

    pub fn past(&self) -> &[Trajectory] {
        &self.past
    }

    pub fn future(&self) -> &[Trajectory] {
        &self.future
    }

    /// True heading, indexed `[agent][step]`.
    pub fn yaw(&self) -> &[Vec<f64>] {
        &self.yaw
    }

    /// Last observed position of every agent.
    pub fn current_positions(&self) -> Vec<Point> {
        self.past
            .iter()
            .map(|p| p.last().expect("validated non-empty"))
            .collect()
    }

    /// Future positions of all agents at `step` as an interleaved
    /// `[x1, y1, x2, y2, ...]` vector.
    pub fn future_vector(&self, step: usize) -> Vec<f64> {
        self.future
            .iter()
            .flat_map(|tr| tr.0[step].iter().copied())
            .collect()
    }

    /// Future positions as `[agent][step]`.
    pub fn future_positions(&self) -> Vec<Vec<Point>> {
        self.future.iter().map(|t| t.0.clone()).collect()
    }
}

/// Reads a scene from its JSON file.
pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text, path)
}

/// Parses scene JSON text. `origin` only labels errors.
pub fn parse_scene(text: &str, origin: &Path) -> Result<SceneSpec> {
    let file: SceneFile = parse_json(text, origin)?;
    SceneSpec::validate(file.n, file.t_obs, file.t_fut, &file.past, &file.future, &file.yaw)?;
    Ok(SceneSpec {
        past: file.past,
        future: file.future,
        yaw: file.yaw,
    })
}

/// Serializes a scene to pretty-printed JSON.
pub fn scene_to_json(scene: &SceneSpec) -> String {
    let file = SceneFile {
        n: scene.n_agents(),
        t_obs: scene.t_obs(),
        t_fut: scene.t_fut(),
        past: scene.past.clone(),
        future: scene.future.clone(),
        yaw: scene.yaw.clone(),
    };
    serde_json::to_string_pretty(&file).expect("scene serializes")
}

/// Writes a scene as JSON. Floats are written in shortest round-trip form,
/// so loading the file reproduces every value exactly.
pub fn save_scene(scene: &SceneSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = scene_to_json(scene);
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `M` alternative predicted futures for a whole scene, each `N × T` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub modes: Vec<Vec<Trajectory>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

impl ModeSet {
    pub fn new(modes: Vec<Vec<Trajectory>>, scores: Option<Vec<f64>>) -> Result<Self> {
        let set = ModeSet { modes, scores };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let Some(first) = self.modes.first() else {
            return Err(Error::Shape("mode set is empty".into()));
        };
        let n = first.len();
        let t = first.first().map_or(0, Trajectory::len);
        if n == 0 || t == 0 {
            return Err(Error::Shape("modes must have at least one agent and one step".into()));
        }
        self.check_shape(n, t)?;
        if let Some(scores) = &self.scores {
            if scores.len() != self.modes.len() {
                return Err(Error::Shape(format!(
                    "{} scores for {} modes",
                    scores.len(),
                    self.modes.len()
                )));
            }
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::NonFinite("mode scores".into()));
            }
        }
        Ok(())
    }

    /// Checks that every mode holds `n` agents of `t` steps each.
    pub fn check_shape(&self, n: usize, t: usize) -> Result<()> {
        for (m, mode) in self.modes.iter().enumerate() {
            if mode.len() != n {
                return Err(Error::Shape(format!(
                    "mode {m} has {} agents, expected {n}",
                    mode.len()
                )));
            }
            for (i, tr) in mode.iter().enumerate() {
                tr.check(&format!("mode {m}, agent {i}"), t)?;
            }
        }
        Ok(())
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }
}

pub fn load_modes(path: impl AsRef<Path>) -> Result<ModeSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let set: ModeSet = parse_json(&text, path)?;
    set.validate()?;
    Ok(set)
}

pub fn save_modes(modes: &ModeSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(modes).expect("mode set serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// JSON has no literal for NaN or infinity, but some writers emit bare
/// `NaN`/`Infinity` tokens anyway. Those are reported as non-finite values
/// rather than as generic syntax errors.
pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        if has_bare_non_finite(text) {
            Error::NonFinite(origin.display().to_string())
        } else {
            Error::Parse {
                path: origin.to_path_buf(),
                message: e.to_string(),
            }
        }
    })
}

fn has_bare_non_finite(text: &str) -> bool {
    let mut in_string = false;
    let mut escaped = false;
    let bytes = text.as_bytes();
    for (k, &b) in bytes.iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'N' if text[k..].starts_with("NaN") => return true,
            b'I' if text[k..].starts_with("Infinity") => return true,
            _ => {}
        }
    }
    false
}
