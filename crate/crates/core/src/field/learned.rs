use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{extract_features, gradient_head, Dense, FieldNetwork, PointFeature};
use super::GradientField;
use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, Point3, PointCloud, Vec3};
use crate::io::{read_cloud, CloudFormat};

pub const WEIGHT_MAGIC: &str = "DFLD1";
const WEIGHT_VERSION: u32 = 1;

/// Learned gradient field bound to an anchor cloud:
/// `𝒢(x) = (1/k) Σ_{xᵢ ∈ kNN(x)} 𝒢ᵢ(x)`.
#[derive(Debug, Clone)]
pub struct LearnedField {
    network: FieldNetwork,
    index: NeighborIndex,
    features: Vec<PointFeature>,
    k: usize,
}

impl LearnedField {
    pub fn new(network: FieldNetwork, anchors: &PointCloud, k: usize) -> Result<Self> {
        network.validate()?;
        if k == 0 || k > anchors.len() {
            return Err(Error::KExceedsCloudSize { k, n: anchors.len() });
        }
        let features = extract_features(anchors, &network)?;
        Ok(Self {
            index: NeighborIndex::new(anchors)?,
            network,
            features,
            k,
        })
    }

    pub fn network(&self) -> &FieldNetwork {
        &self.network
    }

    pub fn features(&self) -> &[PointFeature] {
        &self.features
    }

    pub fn anchors(&self) -> &[Point3] {
        self.index.points()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The same network re-anchored on another frame.
    pub fn rebind(&self, anchors: &PointCloud) -> Result<Self> {
        Self::new(self.network.clone(), anchors, self.k.min(anchors.len()))
    }

    pub fn head(&self, x: &Point3, anchor: usize) -> Vec3 {
        gradient_head(x, &self.index.points()[anchor], &self.features[anchor], &self.network)
    }

    pub fn save(&self, path: &Path, anchor: Option<AnchorRef>) -> Result<()> {
        WeightFile::from_network(&self.network, self.k, anchor).save(path)
    }

    /// Loads a weight file and re-anchors it on the referenced cloud after
    /// checking the cloud's hash.
    pub fn load(path: &Path) -> Result<Self> {
        let file = WeightFile::load(path)?;
        let anchor = file
            .anchor
            .clone()
            .ok_or_else(|| Error::WeightFile("weight file has no anchor reference".into()))?;
        let anchor_path = anchor.resolve(path);
        let actual = AnchorRef::hash_file(&anchor_path)?;
        if actual != anchor.sha256 {
            return Err(Error::WeightFile(format!(
                "anchor {} hash mismatch: expected {}, found {actual}",
                anchor_path.display(),
                anchor.sha256
            )));
        }
        let cloud = read_cloud(&anchor_path, CloudFormat::from_path(&anchor_path)?)?;
        let k = file.k_ensemble;
        Self::new(file.into_network()?, &cloud, k.min(cloud.len()))
    }
}

impl GradientField for LearnedField {
    fn eval(&self, x: &Point3) -> Vec3 {
        let k = self.k.min(self.index.len());
        let nbrs = self.index.k_nearest(x, k).expect("k is bounded by the anchor count");
        let sum = nbrs.iter().fold(Vec3::zeros(), |acc, &i| acc + self.head(x, i));
        sum / k as f64
    }
}

/// Reference to the cloud a field was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRef {
    pub path: String,
    pub sha256: String,
}

impl AnchorRef {
    pub fn for_file(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_string_lossy().into_owned(),
            sha256: Self::hash_file(path)?,
        })
    }

    pub fn hash_file(path: &Path) -> Result<String> {
        let bytes = fs::read(path)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Relative anchor paths are resolved against the weight file's directory.
    pub fn resolve(&self, weight_file: &Path) -> PathBuf {
        let p = PathBuf::from(&self.path);
        if p.is_absolute() || p.exists() {
            p
        } else {
            weight_file.parent().map(|d| d.join(&p)).unwrap_or(p)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// JSON weight file: magic, version, layer shapes and row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFile {
    pub magic: String,
    pub version: u32,
    pub k_feat: usize,
    pub k_ensemble: usize,
    pub layers: Vec<LayerRecord>,
    pub anchor: Option<AnchorRef>,
}

impl WeightFile {
    pub fn from_network(network: &FieldNetwork, k_ensemble: usize, anchor: Option<AnchorRef>) -> Self {
        Self {
            magic: WEIGHT_MAGIC.to_string(),
            version: WEIGHT_VERSION,
            k_feat: network.k_feat,
            k_ensemble,
            layers: network
                .layers()
                .into_iter()
                .map(|(name, l)| LayerRecord {
                    name: name.to_string(),
                    rows: l.outputs,
                    cols: l.inputs,
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
            anchor,
        }
    }

    pub fn into_network(self) -> Result<FieldNetwork> {
        let mut layers = self.layers.into_iter();
        let mut next = |expected: &str| -> Result<Dense> {
            let rec = layers
                .next()
                .ok_or_else(|| Error::WeightFile(format!("missing layer {expected}")))?;
            if rec.name != expected {
                return Err(Error::WeightFile(format!(
                    "expected layer {expected}, found {}",
                    rec.name
                )));
            }
            Ok(Dense {
                inputs: rec.cols,
                outputs: rec.rows,
                weights: rec.weights,
                bias: rec.bias,
            })
        };
        let network = FieldNetwork {
            feature_in: next("feature.0")?,
            feature_out: next("feature.1")?,
            head_in: next("head.0")?,
            head_out: next("head.1")?,
            k_feat: self.k_feat,
        };
        network.validate()?;
        Ok(network)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: WeightFile = serde_json::from_str(&text)?;
        if file.magic != WEIGHT_MAGIC {
            return Err(Error::WeightFile(format!("bad magic {:?}", file.magic)));
        }
        if file.version != WEIGHT_VERSION {
            return Err(Error::WeightFile(format!("unsupported version {}", file.version)));
        }
        if file.k_ensemble == 0 {
            return Err(Error::WeightFile("k_ensemble must be positive".into()));
        }
        Ok(file)
    }
}
