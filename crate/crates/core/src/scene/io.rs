//! KITTI-style dataset layout.
//!
//! ```text
//! <root>/prompts.json          sample_id -> {prompt, referred, frame?}
//! <root>/label/<frame>.txt     one box per line: class x y z l w h yaw
//! <root>/radar/<frame>.bin     little-endian f32 records (or .txt rows)
//! <root>/radar/schema.json     field names and units
//! <root>/lidar/<frame>.bin     optional, same encoding
//! <root>/image/<frame>.<ext>   optional, carried as opaque bytes
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Box3D, CameraPayload, ClassId, PointCloud, PointSchema, ReferringSample};
use crate::error::{Error, Result};

const PROMPTS_FILE: &str = "prompts.json";
const SCHEMA_FILE: &str = "schema.json";
const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "img"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub prompt: String,
    pub referred: Vec<usize>,
    /// Frame the prompt annotates; defaults to the sample id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
}

fn read_prompts(root: &Path) -> Result<BTreeMap<String, PromptEntry>> {
    let path = root.join(PROMPTS_FILE);
    if !path.exists() {
        return Err(Error::NotFound(path));
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path,
        line: e.line(),
        message: e.to_string(),
    })
}

fn read_schema(dir: &Path, default: PointSchema) -> Result<PointSchema> {
    let path = dir.join(SCHEMA_FILE);
    if !path.exists() {
        return Ok(default);
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path,
        line: e.line(),
        message: e.to_string(),
    })
}

fn parse_label_file(path: &Path) -> Result<Vec<Box3D>> {
    let text = fs::read_to_string(path)?;
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 8 {
            return Err(err(format!(
                "expected 8 fields (class x y z l w h yaw), found {}",
                tokens.len()
            )));
        }
        let class: ClassId = tokens[0].parse().map_err(|e: Error| err(e.to_string()))?;
        let mut v = [0.0f64; 7];
        for (slot, tok) in v.iter_mut().zip(&tokens[1..]) {
            *slot = tok
                .parse()
                .map_err(|_| err(format!("cannot parse {tok:?} as a number")))?;
        }
        let b = Box3D::new(class, [v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6])
            .map_err(|e| err(e.to_string()))?;
        boxes.push(b);
    }
    Ok(boxes)
}

fn format_label_file(boxes: &[Box3D]) -> String {
    let mut out = String::new();
    for b in boxes {
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            b.class, b.x, b.y, b.z, b.l, b.w, b.h, b.yaw
        ));
    }
    out
}

fn read_points(dir: &Path, frame: &str, schema: PointSchema) -> Result<Option<PointCloud>> {
    let bin = dir.join(format!("{frame}.bin"));
    let txt = dir.join(format!("{frame}.txt"));
    let data = if bin.exists() {
        let bytes = fs::read(&bin)?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Parse {
                path: bin,
                line: 0,
                message: format!("{} bytes is not a whole number of f32 values", bytes.len()),
            });
        }
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect::<Vec<f32>>()
    } else if txt.exists() {
        let text = fs::read_to_string(&txt)?;
        let mut data = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row: Vec<f32> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    path: txt.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if row.len() != schema.len() {
                return Err(Error::Parse {
                    path: txt.clone(),
                    line: i + 1,
                    message: format!("expected {} values, found {}", schema.len(), row.len()),
                });
            }
            data.extend(row);
        }
        data
    } else {
        return Ok(None);
    };
    PointCloud::new(schema, data).map(Some)
}

fn write_points(dir: &Path, frame: &str, pc: &PointCloud) -> Result<()> {
    fs::create_dir_all(dir)?;
    let schema_path = dir.join(SCHEMA_FILE);
    let schema_json = serde_json::to_string_pretty(pc.schema())?;
    if schema_path.exists() {
        let existing = read_schema(dir, pc.schema().clone())?;
        if &existing != pc.schema() {
            return Err(Error::Validation(format!(
                "{} declares a different point schema",
                schema_path.display()
            )));
        }
    } else {
        fs::write(&schema_path, schema_json)?;
    }
    let mut bytes = Vec::with_capacity(pc.data().len() * 4);
    for v in pc.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(format!("{frame}.bin")), bytes)?;
    Ok(())
}

/// Reader with the prompt index and schemas cached.
pub struct DatasetReader {
    root: PathBuf,
    prompts: BTreeMap<String, PromptEntry>,
    radar_schema: PointSchema,
    lidar_schema: PointSchema,
}

impl DatasetReader {
    pub fn open(root: impl AsRef<Path>) -> Result<DatasetReader> {
        let root = root.as_ref().to_path_buf();
        let prompts = read_prompts(&root)?;
        let radar_schema = read_schema(&root.join("radar"), PointSchema::radar())?;
        let lidar_schema = read_schema(&root.join("lidar"), PointSchema::lidar())?;
        Ok(DatasetReader {
            root,
            prompts,
            radar_schema,
            lidar_schema,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Sample ids in sorted order.
    pub fn sample_ids(&self) -> Vec<String> {
        self.prompts.keys().cloned().collect()
    }

    pub fn contains(&self, sample_id: &str) -> bool {
        self.prompts.contains_key(sample_id)
    }

    pub fn load(&self, sample_id: &str) -> Result<ReferringSample> {
        let entry = self
            .prompts
            .get(sample_id)
            .ok_or_else(|| Error::NotFound(self.root.join(PROMPTS_FILE).join(sample_id)))?;
        let frame = entry.frame.as_deref().unwrap_or(sample_id);

        let label_path = self.root.join("label").join(format!("{frame}.txt"));
        if !label_path.exists() {
            return Err(Error::NotFound(label_path));
        }
        let all_boxes = parse_label_file(&label_path)?;

        let radar_dir = self.root.join("radar");
        let radar = read_points(&radar_dir, frame, self.radar_schema.clone())?
            .ok_or_else(|| Error::NotFound(radar_dir.join(format!("{frame}.bin"))))?;
        let lidar = read_points(&self.root.join("lidar"), frame, self.lidar_schema.clone())?;

        let mut camera = None;
        for ext in IMAGE_EXTENSIONS {
            let p = self.root.join("image").join(format!("{frame}.{ext}"));
            if p.exists() {
                camera = Some(CameraPayload {
                    extension: ext.to_string(),
                    bytes: fs::read(p)?,
                });
                break;
            }
        }

        let sample = ReferringSample {
            sample_id: sample_id.to_string(),
            radar,
            lidar,
            camera,
            prompt: entry.prompt.clone(),
            all_boxes,
            referred: entry.referred.clone(),
        };
        sample.validate()?;
        Ok(sample)
    }
}

pub fn load_sample(dataset_root: impl AsRef<Path>, sample_id: &str) -> Result<ReferringSample> {
    DatasetReader::open(dataset_root)?.load(sample_id)
}

pub fn list_sample_ids(dataset_root: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(DatasetReader::open(dataset_root)?.sample_ids())
}

fn write_frame_files(root: &Path, sample: &ReferringSample) -> Result<()> {
    let id = &sample.sample_id;
    if id.is_empty() || id.contains(['/', '\\']) {
        return Err(Error::invalid(format!("sample id {id:?} is not a valid file stem")));
    }
    let label_dir = root.join("label");
    fs::create_dir_all(&label_dir)?;
    fs::write(
        label_dir.join(format!("{id}.txt")),
        format_label_file(&sample.all_boxes),
    )?;
    write_points(&root.join("radar"), id, &sample.radar)?;
    if let Some(lidar) = &sample.lidar {
        write_points(&root.join("lidar"), id, lidar)?;
    }
    if let Some(cam) = &sample.camera {
        let dir = root.join("image");
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(format!("{id}.{}", cam.extension)), &cam.bytes)?;
    }
    Ok(())
}

/// Write one sample, merging its prompt entry into an existing index.
pub fn write_sample(dataset_root: impl AsRef<Path>, sample: &ReferringSample) -> Result<()> {
    let mut w = DatasetWriter::open(dataset_root)?;
    w.write(sample)?;
    w.finish()
}

/// Buffered writer: frame files go to disk immediately, the prompt index
/// is written once by [`DatasetWriter::finish`].
pub struct DatasetWriter {
    root: PathBuf,
    prompts: BTreeMap<String, PromptEntry>,
}

impl DatasetWriter {
    pub fn open(root: impl AsRef<Path>) -> Result<DatasetWriter> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let prompts = if root.join(PROMPTS_FILE).exists() {
            read_prompts(&root)?
        } else {
            BTreeMap::new()
        };
        Ok(DatasetWriter { root, prompts })
    }

    pub fn write(&mut self, sample: &ReferringSample) -> Result<()> {
        sample.validate()?;
        write_frame_files(&self.root, sample)?;
        self.prompts.insert(
            sample.sample_id.clone(),
            PromptEntry {
                prompt: sample.prompt.clone(),
                referred: sample.referred.clone(),
                frame: None,
            },
        );
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.prompts)?;
        fs::write(self.root.join(PROMPTS_FILE), text)?;
        Ok(())
    }
}
