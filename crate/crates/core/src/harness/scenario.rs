use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::engine::{GameState, Pos, Team, UnitSpec, UnitState};

/// One team's units and where they spawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roster {
    pub count: usize,
    #[serde(default = "marine")]
    pub spec: UnitSpec,
    /// Spawn center `[x, y]`.
    pub base: [i32; 2],
    /// Units spawn uniformly in the on-map square of this Chebyshev radius around `base`.
    pub radius: i32,
}

fn marine() -> UnitSpec {
    UnitSpec::MARINE
}

fn default_max_steps() -> u32 {
    200
}

fn default_battles() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub width: i32,
    pub height: i32,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    /// Default seed for runs on this scenario.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_battles")]
    pub eval_battles: usize,
    pub allied: Roster,
    pub enemy: Roster,
}

impl Scenario {
    /// A symmetric-ish skirmish: teams spawn around bases on opposite sides of
    /// the map's horizontal midline.
    fn skirmish(name: &str, allied: usize, enemy: usize, width: i32, height: i32, max_steps: u32) -> Scenario {
        let y = height / 2;
        Scenario {
            name: name.into(),
            width,
            height,
            max_steps,
            seed: 0,
            eval_battles: 100,
            allied: Roster { count: allied, spec: UnitSpec::MARINE, base: [2, y], radius: 2 },
            enemy: Roster { count: enemy, spec: UnitSpec::MARINE, base: [width - 3, y], radius: 2 },
        }
    }

    /// Built-in scenarios: `m2v2`, `m3v3`, `m5v5`, and the unbalanced `m4v5`.
    pub fn builtin(name: &str) -> Option<Scenario> {
        Some(match name {
            "m2v2" => Self::skirmish("m2v2", 2, 2, 10, 8, 60),
            "m3v3" => Self::skirmish("m3v3", 3, 3, 10, 8, 60),
            "m5v5" => Self::skirmish("m5v5", 5, 5, 10, 8, 80),
            "m4v5" => Self::skirmish("m4v5", 4, 5, 10, 8, 80),
            _ => return None,
        })
    }

    pub fn builtin_names() -> [&'static str; 4] {
        ["m2v2", "m3v3", "m5v5", "m4v5"]
    }

    /// A built-in name or a path to a TOML scenario file.
    pub fn resolve(name_or_path: &str) -> Result<Scenario, HarnessError> {
        match Self::builtin(name_or_path) {
            Some(s) => Ok(s),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn load(path: &Path) -> Result<Scenario, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Scenario, HarnessError> {
        let s: Scenario = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Scenario(m));
        if self.width < 1 || self.height < 1 {
            return bad(format!("map extent {}x{}", self.width, self.height));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        for (team, r) in [("allied", &self.allied), ("enemy", &self.enemy)] {
            if r.count == 0 {
                return bad(format!("{team} roster is empty"));
            }
            r.spec.validate().map_err(|e| HarnessError::Scenario(format!("{team}: {e}")))?;
            let [x, y] = r.base;
            if x < 0 || y < 0 || x >= self.width || y >= self.height {
                return bad(format!("{team} base ({x}, {y}) is off the map"));
            }
            if r.radius < 0 {
                return bad(format!("{team} spawn radius is negative"));
            }
        }
        let cells = |r: &Roster| self.spawn_cells(r).len();
        if cells(&self.allied) < self.allied.count || cells(&self.enemy) < self.enemy.count {
            return bad("spawn area too small for roster".into());
        }
        if self.allied.count + self.enemy.count > (self.width * self.height) as usize {
            return bad("map too small for both rosters".into());
        }
        Ok(())
    }

    fn spawn_cells(&self, r: &Roster) -> Vec<Pos> {
        let [bx, by] = r.base;
        let mut out = Vec::new();
        for y in (by - r.radius).max(0)..=(by + r.radius).min(self.height - 1) {
            for x in (bx - r.radius).max(0)..=(bx + r.radius).min(self.width - 1) {
                out.push(Pos::new(x, y));
            }
        }
        out
    }

    /// Initial state for `seed`. Positions are drawn uniformly from each
    /// team's spawn square; occupied draws are redrawn from the same stream.
    pub fn spawn(&self, seed: u64) -> Result<GameState, HarnessError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut units: Vec<UnitState> = Vec::with_capacity(self.allied.count + self.enemy.count);
        for (team, r) in [(Team::Allied, &self.allied), (Team::Enemy, &self.enemy)] {
            let cells = self.spawn_cells(r);
            let free = cells.iter().filter(|c| !units.iter().any(|u| u.pos == **c)).count();
            if free < r.count {
                return Err(HarnessError::Scenario("spawn areas overlap too much".into()));
            }
            for id in 0..r.count {
                let pos = loop {
                    let c = cells[rng.gen_range(0..cells.len())];
                    if !units.iter().any(|u| u.pos == c) {
                        break c;
                    }
                };
                units.push(UnitState::new(r.spec, team, id, pos));
            }
        }
        Ok(GameState::new(units, self.width, self.height, self.max_steps)?)
    }
}
