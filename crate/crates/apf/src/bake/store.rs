//! Voxel-table store: a flat file of per-voxel records, each
//! `DAPB | version | header | views`.

use super::{ViewTables, VoxelTables};
use crate::error::{ApfError, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const TABLE_MAGIC: &[u8; 4] = b"DAPB";
pub const TABLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct TableStore {
    pub tables: Vec<VoxelTables>,
}

impl TableStore {
    pub fn find(&self, voxel_id: u64) -> Option<&VoxelTables> {
        self.tables
            .binary_search_by_key(&sort_key(voxel_id), |t| sort_key(t.voxel_id))
            .ok()
            .map(|i| &self.tables[i])
    }

    pub fn sort(&mut self) {
        self.tables.sort_by_key(|t| sort_key(t.voxel_id));
    }
}

fn sort_key(voxel_id: u64) -> u64 {
    voxel_id
}

pub fn save_table_store(store: &TableStore, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| ApfError::io(path.display().to_string(), e);
    for t in &store.tables {
        w.write_all(TABLE_MAGIC).map_err(io_err)?;
        w.write_u32::<LittleEndian>(TABLE_VERSION).map_err(io_err)?;
        w.write_u64::<LittleEndian>(t.voxel_id).map_err(io_err)?;
        w.write_u32::<LittleEndian>(t.scale).map_err(io_err)?;
        w.write_u32::<LittleEndian>(t.views.len() as u32).map_err(io_err)?;
        w.write_u32::<LittleEndian>(t.phase_resolution).map_err(io_err)?;
        w.write_u32::<LittleEndian>(t.mask_resolution).map_err(io_err)?;
        w.write_u64::<LittleEndian>(t.samples_per_view).map_err(io_err)?;
        for view in &t.views {
            for d in view.direction {
                w.write_f32::<LittleEndian>(d).map_err(io_err)?;
            }
            debug_assert_eq!(view.phase.len(), (t.phase_resolution * t.phase_resolution) as usize);
            for &p in &view.phase {
                w.write_f32::<LittleEndian>(p).map_err(io_err)?;
            }
            debug_assert_eq!(view.coverage.len(), (t.mask_resolution * t.mask_resolution) as usize);
            for &c in &view.coverage {
                w.write_f32::<LittleEndian>(c).map_err(io_err)?;
            }
            for a in view.albedo {
                w.write_f32::<LittleEndian>(a).map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_table_store(path: &Path) -> Result<TableStore> {
    let file = std::fs::File::open(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| ApfError::io(path.display().to_string(), e);
    let mut tables = Vec::new();
    loop {
        let mut magic = [0u8; 4];
        match r.read_exact(&mut magic) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(ApfError::io(path.display().to_string(), e)),
        }
        if &magic != TABLE_MAGIC {
            return Err(ApfError::Parse(format!("{}: bad table record magic", path.display())));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
        if version != TABLE_VERSION {
            return Err(ApfError::Validation(format!("unsupported table version {version}")));
        }
        let voxel_id = r.read_u64::<LittleEndian>().map_err(io_err)?;
        let scale = r.read_u32::<LittleEndian>().map_err(io_err)?;
        let k = r.read_u32::<LittleEndian>().map_err(io_err)?;
        let phase_resolution = r.read_u32::<LittleEndian>().map_err(io_err)?;
        let mask_resolution = r.read_u32::<LittleEndian>().map_err(io_err)?;
        let samples_per_view = r.read_u64::<LittleEndian>().map_err(io_err)?;
        if phase_resolution == 0 || phase_resolution > 4096 || mask_resolution == 0 || mask_resolution > 4096 {
            return Err(ApfError::Validation("table resolutions out of range".into()));
        }
        let mut views = Vec::with_capacity(k as usize);
        for _ in 0..k {
            let mut direction = [0f32; 3];
            for d in &mut direction {
                *d = r.read_f32::<LittleEndian>().map_err(io_err)?;
            }
            let mut phase = vec![0f32; (phase_resolution * phase_resolution) as usize];
            for p in &mut phase {
                *p = r.read_f32::<LittleEndian>().map_err(io_err)?;
            }
            let mut coverage = vec![0f32; (mask_resolution * mask_resolution) as usize];
            for c in &mut coverage {
                *c = r.read_f32::<LittleEndian>().map_err(io_err)?;
            }
            let mut albedo = [0f32; 3];
            for a in &mut albedo {
                *a = r.read_f32::<LittleEndian>().map_err(io_err)?;
            }
            views.push(ViewTables {
                direction,
                phase,
                coverage,
                albedo,
            });
        }
        tables.push(VoxelTables {
            voxel_id,
            scale,
            phase_resolution,
            mask_resolution,
            samples_per_view,
            views,
        });
    }
    Ok(TableStore { tables })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_tables(id: u64) -> VoxelTables {
        VoxelTables {
            voxel_id: id,
            scale: 2,
            phase_resolution: 4,
            mask_resolution: 2,
            samples_per_view: 100,
            views: vec![ViewTables {
                direction: [0.0, 0.0, 1.0],
                phase: (0..16).map(|i| i as f32 * 0.5).collect(),
                coverage: vec![0.0, 0.5, 1.0, 0.25],
                albedo: [0.9, 0.5, 0.1],
            }],
        }
    }

    #[test]
    fn store_round_trip_byte_identical() {
        let store = TableStore {
            tables: vec![dummy_tables(1), dummy_tables(42)],
        };
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.dapb");
        let p2 = dir.path().join("b.dapb");
        save_table_store(&store, &p1).unwrap();
        let loaded = load_table_store(&p1).unwrap();
        assert_eq!(loaded.tables, store.tables);
        save_table_store(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn find_by_id() {
        let mut store = TableStore {
            tables: vec![dummy_tables(42), dummy_tables(1)],
        };
        store.sort();
        assert!(store.find(42).is_some());
        assert!(store.find(2).is_none());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.dapb");
        std::fs::write(&p, b"NOPE").unwrap();
        assert!(load_table_store(&p).is_err());
    }
}
