//! Procedural training data: one directory per instance with the mesh, sketches, voxels and pose.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mesh::obj::{export_obj, import_obj};
use crate::mesh::{voxelize_in, Bounds, Mesh, VoxelGrid, DEFAULT_RESOLUTION};
use crate::procedural::Category;
use crate::render::{render_silhouette, sample_pose, CameraPose, RenderConfig, SilhouetteImage};
use crate::sketch::{edge_map, ingest_sketch, stroke_png, DEFAULT_THRESHOLD};

pub const VOXEL_MAGIC: &[u8; 4] = b"SFVX";
pub const VOXEL_VERSION: u32 = 1;
const VOXEL_HEADER: usize = 16;

/// Voxel bounds shared by every instance; shapes fit in `[-1, 1]^3`.
pub fn voxel_bounds() -> Bounds {
    Bounds::centered(1.05)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub categories: Vec<Category>,
    pub count_per_category: usize,
    /// Sketch size in pixels.
    pub resolution: usize,
    pub voxel_resolution: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            categories: vec![Category::Box, Category::Ellipsoid, Category::Cylinder, Category::Table, Category::Lamp],
            count_per_category: 40,
            resolution: 64,
            voxel_resolution: DEFAULT_RESOLUTION,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub category: Category,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
}

impl InstanceMeta {
    pub fn pose(&self) -> Result<CameraPose> {
        CameraPose::new(self.azimuth_deg, self.elevation_deg, self.distance)
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub meta: InstanceMeta,
    pub mesh: Mesh,
    /// Filled silhouette as ingested from `sketch.png`.
    pub sketch: SilhouetteImage,
    /// Boundary-only variant, 1 on the outline.
    pub edges: SilhouetteImage,
    pub voxels: VoxelGrid,
}

impl Instance {
    pub fn pose(&self) -> CameraPose {
        CameraPose {
            azimuth: self.meta.azimuth_deg,
            elevation: self.meta.elevation_deg,
            distance: self.meta.distance,
        }
    }
}

/// Draws one instance: shape parameters first, then the pose.
pub fn generate_instance(name: String, category: Category, rng: &mut ChaCha8Rng, cfg: &DatasetConfig) -> Result<Instance> {
    let mesh = category.generate(rng);
    let pose = sample_pose(rng);
    let silhouette = render_silhouette(&mesh, &pose, &RenderConfig::square(cfg.resolution))?.thresholded(0.5);
    let sketch = ingest_sketch(&stroke_png(&silhouette)?, DEFAULT_THRESHOLD)?.occupancy;
    let edges = edge_map(&silhouette);
    let voxels = voxelize_in(&mesh, voxel_bounds(), cfg.voxel_resolution)?;
    let meta = InstanceMeta {
        category,
        azimuth_deg: pose.azimuth,
        elevation_deg: pose.elevation,
        distance: pose.distance,
    };
    Ok(Instance { name, meta, mesh, sketch, edges, voxels })
}

/// Instances in category-major order, named `{index:05}-{category}`.
pub fn generate_instances(cfg: &DatasetConfig) -> Result<Vec<Instance>> {
    if cfg.categories.is_empty() || cfg.count_per_category == 0 {
        return Err(invalid("dataset needs at least one category and one instance per category"));
    }
    if cfg.resolution < 16 {
        return Err(invalid("sketch resolution must be at least 16"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.categories.len() * cfg.count_per_category);
    for &category in &cfg.categories {
        for _ in 0..cfg.count_per_category {
            let name = format!("{:05}-{category}", out.len());
            out.push(generate_instance(name, category, &mut rng, cfg)?);
        }
    }
    Ok(out)
}

/// Writes a fresh dataset under `dir`, which must not exist or be empty.
pub fn generate_dataset(cfg: &DatasetConfig, dir: &Path) -> Result<Vec<Instance>> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        return Err(invalid(format!("{} is not empty", dir.display())));
    }
    let instances = generate_instances(cfg)?;
    fs::create_dir_all(dir)?;
    for inst in &instances {
        write_instance(inst, &dir.join(&inst.name))?;
    }
    fs::write(dir.join("dataset.json"), serde_json::to_vec_pretty(cfg)?)?;
    Ok(instances)
}

pub fn write_instance(inst: &Instance, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("mesh.obj"), export_obj(&inst.mesh))?;
    fs::write(dir.join("sketch.png"), stroke_png(&inst.sketch)?)?;
    fs::write(dir.join("edges.png"), stroke_png(&inst.edges)?)?;
    fs::write(dir.join("voxels.bin"), encode_voxels(&inst.voxels))?;
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&inst.meta)?)?;
    Ok(())
}

pub fn read_instance(dir: &Path) -> Result<Instance> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| invalid(format!("bad instance path {}", dir.display())))?
        .to_string();
    let meta: InstanceMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    meta.pose()?;
    let mesh = import_obj(&fs::read(dir.join("mesh.obj"))?)?;
    let sketch = ingest_sketch(&fs::read(dir.join("sketch.png"))?, DEFAULT_THRESHOLD)?.occupancy;
    let edges_png = crate::render::RgbImage::from_png(&fs::read(dir.join("edges.png"))?)?;
    let edges = SilhouetteImage {
        width: edges_png.width,
        height: edges_png.height,
        values: edges_png.luminance().values.iter().map(|&v| if v < DEFAULT_THRESHOLD { 1.0 } else { 0.0 }).collect(),
    };
    let voxels = decode_voxels(&fs::read(dir.join("voxels.bin"))?)?;
    Ok(Instance { name, meta, mesh, sketch, edges, voxels })
}

/// Every instance directory under `dir`, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<Instance>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(invalid(format!("no instances under {}", dir.display())));
    }
    dirs.iter().map(|d| read_instance(d)).collect()
}

/// 16-byte header (magic, version, R, reserved) followed by the packed bits.
pub fn encode_voxels(grid: &VoxelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(VOXEL_HEADER + grid.occupancy.len().div_ceil(8));
    out.extend_from_slice(VOXEL_MAGIC);
    out.extend_from_slice(&VOXEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.resolution as u32).to_le_bytes());
    out.extend_from_slice(&[0; 4]);
    out.extend_from_slice(&grid.to_bits());
    out
}

pub fn decode_voxels(bytes: &[u8]) -> Result<VoxelGrid> {
    if bytes.len() < VOXEL_HEADER || &bytes[..4] != VOXEL_MAGIC {
        return Err(invalid("not a voxel file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VOXEL_VERSION {
        return Err(Error::InvalidArgument(format!("unsupported voxel file version {version}")));
    }
    VoxelGrid::from_bits(word(8) as usize, voxel_bounds(), &bytes[VOXEL_HEADER..])
}

/// Deterministic split: every `k`-th instance of each category (by position) goes to the test set,
/// where `k` is chosen so that `test` instances are held out in total.
pub fn split(instances: Vec<Instance>, test: usize) -> (Vec<Instance>, Vec<Instance>) {
    let n = instances.len();
    if test == 0 || n == 0 {
        return (instances, Vec::new());
    }
    let mut train = Vec::new();
    let mut held = Vec::new();
    let mut acc = 0usize;
    for (i, inst) in instances.into_iter().enumerate() {
        // Bresenham-style spacing keeps the held-out set spread over all categories.
        let due = (i + 1) * test / n;
        if due > acc {
            acc = due;
            held.push(inst);
        } else {
            train.push(inst);
        }
    }
    (train, held)
}
