//! World file schema `semworld/1`.
//!
//! Units serialize as vertex quadruples, doors as endpoint pairs with unit
//! indices, relations and theta as row-major arrays. Field order is fixed by
//! the structs, so serialization is deterministic.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{Door, Relation, RelationMatrix, SemanticWorld, ThetaMatrix, Unit, UnitType};

pub const SCHEMA: &str = "semworld/1";

#[derive(Serialize, Deserialize)]
struct WorldFile {
    schema: String,
    dims: [usize; 2],
    resolution: f64,
    units: Vec<[[i32; 2]; 4]>,
    types: Vec<String>,
    doors: Vec<DoorFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relations: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
struct DoorFile {
    units: [usize; 2],
    segment: [[i32; 2]; 2],
    width: u32,
}

/// A world together with the raster context it was built against.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldFileData {
    pub world: SemanticWorld,
    pub dims: (usize, usize),
    pub resolution: f64,
}

pub fn world_to_json(world: &SemanticWorld, dims: (usize, usize), resolution: f64) -> String {
    let file = WorldFile {
        schema: SCHEMA.to_string(),
        dims: [dims.0, dims.1],
        resolution,
        units: world.units().iter().map(|u| u.vertices()).collect(),
        types: world.types().iter().map(|t| t.as_str().to_string()).collect(),
        doors: world
            .doors()
            .iter()
            .map(|d| DoorFile {
                units: [d.unit_a, d.unit_b],
                segment: d.segment,
                width: d.width_cells(),
            })
            .collect(),
        relations: world
            .relations()
            .map(|r| r.row_major().iter().map(|rel| rel.as_str().to_string()).collect()),
        theta: world.theta().map(|t| t.row_major().to_vec()),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("world serialization cannot fail");
    s.push('\n');
    s
}

pub fn world_from_json(text: &str) -> Result<WorldFileData> {
    let file: WorldFile = serde_json::from_str(text).map_err(|e| {
        let offset = byte_offset(text, e.line(), e.column());
        Error::format(format!("world JSON: {e}"), offset)
    })?;
    if file.schema != SCHEMA {
        return Err(Error::format(
            format!("unsupported schema {:?}, expected {SCHEMA:?}", file.schema),
            0,
        ));
    }
    let units = file
        .units
        .iter()
        .map(|vs| Unit::from_vertices(*vs))
        .collect::<Result<Vec<_>>>()?;
    if file.types.len() != units.len() {
        return Err(Error::format(
            format!("{} types for {} units", file.types.len(), units.len()),
            0,
        ));
    }
    let types = file
        .types
        .iter()
        .map(|s| {
            UnitType::from_str(s)
                .ok_or_else(|| Error::format(format!("unknown unit type {s:?}"), 0))
        })
        .collect::<Result<Vec<_>>>()?;
    let doors = file
        .doors
        .iter()
        .map(|d| {
            let door = Door::new(d.units[0], d.units[1], d.segment)?;
            if door.width_cells() != d.width {
                return Err(Error::format(
                    format!("door width {} does not match segment {:?}", d.width, d.segment),
                    0,
                ));
            }
            Ok(door)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut world = SemanticWorld::from_parts(units, types, doors)?;
    let n = world.n();
    if let Some(rels) = file.relations {
        let cells = rels
            .iter()
            .map(|s| {
                Relation::from_str(s)
                    .ok_or_else(|| Error::format(format!("unknown relation {s:?}"), 0))
            })
            .collect::<Result<Vec<_>>>()?;
        world.set_relations(RelationMatrix::from_row_major(n, cells)?)?;
    }
    if let Some(theta) = file.theta {
        world.set_theta(ThetaMatrix::from_row_major(n, theta)?)?;
    }
    for d in world.doors() {
        if !d.on_wall_of(&world.units()[d.unit_a]) || !d.on_wall_of(&world.units()[d.unit_b]) {
            return Err(Error::Geometry(format!(
                "door {:?} between units {} and {} is not on a shared wall line",
                d.segment, d.unit_a, d.unit_b
            )));
        }
    }
    if file.dims[0] == 0 || file.dims[1] == 0 {
        return Err(Error::format("dims must be positive", 0));
    }
    Ok(WorldFileData { world, dims: (file.dims[0], file.dims[1]), resolution: file.resolution })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut remaining = line - 1;
    let mut offset = 0;
    for (i, b) in text.bytes().enumerate() {
        if remaining == 0 {
            return i + column.saturating_sub(1);
        }
        if b == b'\n' {
            remaining -= 1;
            offset = i + 1;
        }
    }
    offset
}

pub fn save_world(
    world: &SemanticWorld,
    dims: (usize, usize),
    resolution: f64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, world_to_json(world, dims, resolution)).map_err(|e| Error::io(path, e))
}

pub fn load_world(path: impl AsRef<Path>) -> Result<WorldFileData> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    world_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::WorldParams;

    fn sample_world() -> SemanticWorld {
        let units = vec![
            Unit::new(0, 0, 12, 10).unwrap(),
            Unit::new(12, 0, 24, 10).unwrap(),
        ];
        let doors = vec![Door::new(0, 1, [[12, 3], [12, 7]]).unwrap()];
        let (mut w, dropped) = SemanticWorld::assemble(units, doors, &WorldParams::default());
        assert!(dropped.is_empty());
        w.refresh_relations(&WorldParams::default());
        w
    }

    #[test]
    fn round_trip_preserves_bytes() {
        let w = sample_world();
        let text = world_to_json(&w, (30, 12), 0.05);
        let data = world_from_json(&text).unwrap();
        assert_eq!(data.world, w);
        assert_eq!(data.dims, (30, 12));
        assert!((data.resolution - 0.05).abs() < 1e-12);
        let again = world_to_json(&data.world, data.dims, data.resolution);
        assert_eq!(text, again);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn relations_survive_round_trip() {
        let w = sample_world();
        let text = world_to_json(&w, (30, 12), 0.05);
        let data = world_from_json(&text).unwrap();
        assert!(data.world.relations().is_some());
        assert_eq!(data.world.relations(), w.relations());
    }

    #[test]
    fn schema_and_field_errors_are_format_errors() {
        let w = sample_world();
        let good = world_to_json(&w, (30, 12), 0.05);
        let bad_schema = good.replace("semworld/1", "semworld/2");
        assert_eq!(world_from_json(&bad_schema).unwrap_err().kind(), "format");
        let bad_type = good.replace("\"room\"", "\"atrium\"");
        assert_eq!(world_from_json(&bad_type).unwrap_err().kind(), "format");
        let bad_width = good.replace("\"width\": 4", "\"width\": 9");
        assert_ne!(bad_width, good);
        assert_eq!(world_from_json(&bad_width).unwrap_err().kind(), "format");
        assert_eq!(world_from_json("{ not json").unwrap_err().kind(), "format");
    }

    #[test]
    fn door_off_any_wall_is_a_geometry_error() {
        let w = sample_world();
        let good = world_to_json(&w, (30, 12), 0.05);
        let mut value: serde_json::Value = serde_json::from_str(&good).unwrap();
        value["doors"][0]["segment"] = serde_json::json!([[11, 3], [11, 7]]);
        let shifted = value.to_string();
        assert_eq!(world_from_json(&shifted).unwrap_err().kind(), "geometry");
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let w = sample_world();
        save_world(&w, (30, 12), 0.05, &path).unwrap();
        let data = load_world(&path).unwrap();
        assert_eq!(data.world, w);
        assert_eq!(load_world(dir.path().join("missing.json")).unwrap_err().kind(), "io");
    }
}
