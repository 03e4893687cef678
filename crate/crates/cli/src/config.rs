//! Flat `key = value` configuration over every pipeline parameter group.
//!
//! One option per line, `#` starts a comment, unknown keys are rejected so a
//! typo fails loudly instead of silently running on defaults. The `--config`
//! flag wins over the `SEMLOFT_CONFIG` environment variable; with neither,
//! the documented defaults apply. `kb_file` paths resolve relative to the
//! config file itself.
//!
//! Keys and defaults:
//!
//! ```text
//! # map classification and preprocessing
//! h_o = 0.25               # intensities at or below are occupied
//! h_u = 0.75               # intensities at or below are unknown
//! resolution = <unset>     # meters per cell; drives the door width default
//! align = true             # rotate to the dominant wall orientation
//! invert = false           # flip the occupancy convention of input maps
//!
//! # posterior scoring
//! psi = 0.5                # per extra covering unit overlap penalty
//! lookup = 0.8,0.1,0.1,0.1,0.8,0.1,0.1,0.1,0.8
//!                          # p(map|world) row-major, classes free,unknown,occupied
//! sigma = 5.0              # wall length-difference scale, cells
//! theta_threshold = 0.5    # same-length marginal cutoff
//! squared_distance = false # d^2 instead of d in the pair prior
//! kb_room_room = 2.0       # soft weights of the same-length knowledge base
//! kb_room_hall = 2.0
//! kb_room_corr = 2.0
//! kb_irrelevant = 2.0
//! kb_file = <unset>        # weight-variant knowledge base file
//! max_enum_atoms = 20      # exact-inference component size limit
//!
//! # world geometry
//! wall_thickness = 2
//! min_unit_side = 3
//! door_width_min = <auto>  # both or neither; auto follows `resolution`
//! door_width_max = <auto>
//! dilation_radius = 3      # adjacency wall-mask dilation
//! overlap_min_cells = 4    # dilated-mask overlap for adjacency
//! area_big = <adaptive>    # fixed hall area threshold, cells
//! area_factor = 2.5        # adaptive: factor times median candidate area
//! ratio_big = 3.0          # corridor aspect ratio threshold
//!
//! # detectors
//! det_min_span = 8
//! det_min_support = 0.6
//! det_merge_gap = 6
//! det_gap_support_min = 0.6
//! det_extent_overlap_min = 0.7
//! det_top_k = 200
//!
//! # chain
//! iters = 20000
//! burn_in = 2000
//! record_every = 100
//! seed = 0
//! chains = 1
//! init = detected          # detected | random
//! kernel_weights = 0.15,0.15,0.1,0.1,0.15,0.15,0.075,0.075,0.05
//!                          # add,remove,split,merge,shrink,dilate,
//!                          # allocate_door,delete_door,interchange
//! p_geo = 0.5              # truncated geometric displacement parameter
//! max_step = 32            # largest single wall displacement, cells
//! add_overlap_max = 0.3    # overlap fraction cap for new units
//! annealing = true
//! anneal_t0 = 5.0
//! anneal_decay = 0.999
//! anneal_floor = 1.0
//! ```

use std::path::{Path, PathBuf};

use semloft::detectors::DetectorParams;
use semloft::error::{Error, Result};
use semloft::mcmc::{Annealing, ChainConfig, InitMode};
use semloft::mln::{kb_same_length, parse_kb, KbWeights, Weight};
use semloft::scoring::{LookupTable, ScoringParams};

/// Fallback config path when `--config` is absent.
pub const ENV_CONFIG: &str = "SEMLOFT_CONFIG";

/// Door leaf widths in meters backing the resolution-derived cell bounds.
const DOOR_MIN_M: f64 = 0.7;
const DOOR_MAX_M: f64 = 1.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub scoring: ScoringParams,
    pub detect: DetectorParams,
    pub chain: ChainConfig,
    /// Independent restarts; the best-scoring chain wins.
    pub chains: usize,
    /// Meters per cell. Advisory; PGM carries no scale metadata.
    pub resolution: Option<f64>,
    /// Rotate the map to its dominant wall orientation before extraction.
    pub align: bool,
    /// Inputs use the opposite occupancy convention (bright = occupied).
    pub invert: bool,
    /// Fixed hall area threshold; unset means adaptive per map.
    pub area_big: Option<f64>,
    /// Adaptive hall threshold: `area_factor` times the median candidate
    /// unit area of the current map.
    pub area_factor: f64,
    pub ratio_big: f64,
    door_width: Option<(u32, u32)>,
}

impl Default for Config {
    fn default() -> Config {
        let mut chain = ChainConfig::default();
        // The CLI searches for the posterior maximum; a cooling start helps
        // it over early barriers, so annealing is on unless configured off.
        chain.annealing = Some(Annealing::default());
        Config {
            scoring: ScoringParams::default(),
            detect: DetectorParams::default(),
            chain,
            chains: 1,
            resolution: None,
            align: true,
            invert: false,
            area_big: None,
            area_factor: 2.5,
            ratio_big: 3.0,
            door_width: None,
        }
    }
}

impl Config {
    /// Loads `path`, or `$SEMLOFT_CONFIG` when unset, or plain defaults.
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let fallback = std::env::var_os(ENV_CONFIG)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        let path = path.map(Path::to_path_buf).or(fallback);
        let mut cfg = Config::default();
        if let Some(p) = &path {
            cfg.apply_file(p)?;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`", path.display(), no + 1))
            })?;
            self.set(key.trim(), value.trim(), dir).map_err(|e| match e {
                Error::Config(msg) => {
                    Error::Config(format!("{}:{}: {msg}", path.display(), no + 1))
                }
                other => other,
            })?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str, dir: &Path) -> Result<()> {
        match key {
            "h_o" => self.scoring.classify.h_o = num(key, value)?,
            "h_u" => self.scoring.classify.h_u = num(key, value)?,
            "resolution" => self.resolution = Some(num(key, value)?),
            "align" => self.align = flag(key, value)?,
            "invert" => self.invert = flag(key, value)?,
            "psi" => self.scoring.psi = num(key, value)?,
            "lookup" => {
                let v: [f64; 9] = list(key, value)?;
                let rows = [
                    [v[0], v[1], v[2]],
                    [v[3], v[4], v[5]],
                    [v[6], v[7], v[8]],
                ];
                self.scoring.lookup = LookupTable::new(rows)?;
            }
            "sigma" => self.scoring.gaussian_sigma = num(key, value)?,
            "theta_threshold" => self.scoring.theta_threshold = num(key, value)?,
            "squared_distance" => self.scoring.squared_distance = flag(key, value)?,
            "kb_room_room" => self.scoring.kb.room_room = num(key, value)?,
            "kb_room_hall" => self.scoring.kb.room_hall = num(key, value)?,
            "kb_room_corr" => self.scoring.kb.room_corr = num(key, value)?,
            "kb_irrelevant" => self.scoring.kb.irrelevant = num(key, value)?,
            "kb_file" => self.scoring.kb = kb_weights_from_file(&dir.join(value))?,
            "max_enum_atoms" => self.scoring.max_enum_atoms = num(key, value)?,
            "wall_thickness" => {
                let t: u32 = num(key, value)?;
                self.scoring.world.wall_thickness = t;
                self.detect.wall_thickness = t;
            }
            "min_unit_side" => self.scoring.world.min_unit_side = num(key, value)?,
            "door_width_min" => self.door_width_mut().0 = num(key, value)?,
            "door_width_max" => self.door_width_mut().1 = num(key, value)?,
            "dilation_radius" => {
                self.scoring.world.relations.dilation_radius = num(key, value)?
            }
            "overlap_min_cells" => {
                self.scoring.world.relations.overlap_min_cells = num(key, value)?
            }
            "area_big" => self.area_big = Some(num(key, value)?),
            "area_factor" => self.area_factor = num(key, value)?,
            "ratio_big" => self.ratio_big = num(key, value)?,
            "det_min_span" => self.detect.min_span = num(key, value)?,
            "det_min_support" => self.detect.min_support = num(key, value)?,
            "det_merge_gap" => self.detect.merge_gap = num(key, value)?,
            "det_gap_support_min" => self.detect.gap_support_min = num(key, value)?,
            "det_extent_overlap_min" => self.detect.extent_overlap_min = num(key, value)?,
            "det_top_k" => self.detect.top_k = num(key, value)?,
            "iters" => self.chain.max_iterations = num(key, value)?,
            "burn_in" => self.chain.burn_in = num(key, value)?,
            "record_every" => self.chain.record_every = num(key, value)?,
            "seed" => self.chain.seed = num(key, value)?,
            "chains" => self.chains = num(key, value)?,
            "init" => self.chain.init = parse_init_mode(value).map_err(Error::Config)?,
            "kernel_weights" => self.chain.kernel_weights = list(key, value)?,
            "p_geo" => self.chain.p_geo = num(key, value)?,
            "max_step" => self.chain.max_step = num(key, value)?,
            "add_overlap_max" => self.chain.add_overlap_max = num(key, value)?,
            "annealing" => {
                self.chain.annealing =
                    if flag(key, value)? { Some(self.annealing()) } else { None };
            }
            "anneal_t0" => self.annealing_mut().t0 = num(key, value)?,
            "anneal_decay" => self.annealing_mut().decay = num(key, value)?,
            "anneal_floor" => self.annealing_mut().floor = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn annealing(&self) -> Annealing {
        self.chain.annealing.unwrap_or_default()
    }

    fn annealing_mut(&mut self) -> &mut Annealing {
        self.chain.annealing.get_or_insert_with(Annealing::default)
    }

    fn door_width_mut(&mut self) -> &mut (u32, u32) {
        self.door_width.get_or_insert((0, 0))
    }

    /// Resolves derived settings and validates everything.
    fn finish(&mut self) -> Result<()> {
        let door = match self.door_width {
            Some((0, _)) | Some((_, 0)) => {
                return Err(Error::Config(
                    "door_width_min and door_width_max must be set together and positive"
                        .into(),
                ))
            }
            Some(bounds) => bounds,
            // Door leaves are 0.7 to 1.2 m; with a known scale the cell
            // bounds follow, otherwise a raw-cell default has to do.
            None => match self.resolution {
                Some(r) => ((DOOR_MIN_M / r).round() as u32, (DOOR_MAX_M / r).round() as u32),
                None => (2, 8),
            },
        };
        self.scoring.world.door_width = door;
        self.detect.door_width = door;
        if let Some(a) = self.area_big {
            self.scoring.world.class.area_big = a;
        }
        self.scoring.world.class.ratio_big = self.ratio_big;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.scoring.validate()?;
        self.detect.validate()?;
        self.chain.validate()?;
        if self.chains == 0 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        if let Some(r) = self.resolution {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Config(format!("resolution must be positive, got {r}")));
            }
        }
        if !(self.area_factor.is_finite() && self.area_factor > 0.0) {
            return Err(Error::Config(format!(
                "area_factor must be positive, got {}",
                self.area_factor
            )));
        }
        if let Some(a) = self.area_big {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Config(format!("area_big must be positive, got {a}")));
            }
        }
        if !(self.ratio_big.is_finite() && self.ratio_big >= 1.0) {
            return Err(Error::Config(format!(
                "ratio_big must be at least 1, got {}",
                self.ratio_big
            )));
        }
        Ok(())
    }
}

pub fn parse_init_mode(s: &str) -> std::result::Result<InitMode, String> {
    match s {
        "random" => Ok(InitMode::Random),
        "detected" => Ok(InitMode::Detected),
        other => Err(format!("init must be `random` or `detected`, got {other:?}")),
    }
}

/// Reads a knowledge base file and lifts its soft weights.
///
/// The scoring pipeline exploits that the built-in knowledge base couples
/// no atoms across unit pairs, so only weight variants of it are accepted:
/// the file must list the same clauses in the same order with the same
/// hard/soft split, and only the four soft weights may differ.
pub fn kb_weights_from_file(path: &Path) -> Result<KbWeights> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let kb = parse_kb(&text)?;
    let reference = kb_same_length();
    if kb.formulas.len() != reference.formulas.len() {
        return Err(Error::Config(format!(
            "knowledge base must contain the {} built-in formulas, found {}",
            reference.formulas.len(),
            kb.formulas.len()
        )));
    }
    let mut soft = Vec::new();
    for (i, (got, want)) in kb.formulas.iter().zip(&reference.formulas).enumerate() {
        if got.clause != want.clause {
            return Err(Error::Config(format!(
                "knowledge base formula {} differs from the built-in clause; \
                 only soft weights may be changed",
                i + 1
            )));
        }
        match (got.weight, want.weight) {
            (Weight::Hard, Weight::Hard) => {}
            (Weight::Soft(w), Weight::Soft(_)) => soft.push(w),
            _ => {
                return Err(Error::Config(format!(
                    "knowledge base formula {} changes the hard/soft split",
                    i + 1
                )))
            }
        }
    }
    Ok(KbWeights {
        room_room: soft[0],
        room_hall: soft[1],
        room_corr: soft[2],
        irrelevant: soft[3],
    })
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key} must be true or false, got {value:?}"))),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn list<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| num(key, p.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| Error::Config(format!("{key} needs {N} values, got {}", v.len())))
}
