//! On-disk dataset assembly and the JSON manifest that describes it.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::degrade::{degrade_to_cbct, DegradationConfig};
use super::{generate_phantom, normalize_intensity};
use crate::error::{Error, Result};
use crate::io::{create_dir, read_imgf, read_json, write_imgf, write_json};
use crate::rng::derive_path;
use crate::tensor::Tensor;

pub const DEFAULT_WINDOW: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Paired,
    Unpaired,
    PseudoLabeled,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Paired => "paired",
            Role::Unpaired => "unpaired",
            Role::PseudoLabeled => "pseudo-labeled",
            Role::Test => "test",
        }
    }
}

/// One image or image pair. `ct` is the target domain and is absent for
/// unpaired items; for pseudo-labelled items it is the teacher's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub id: String,
    pub role: Role,
    pub phantom_seed: u64,
    pub ct: Option<PathBuf>,
    pub cbct: PathBuf,
}

/// Paths are stored relative to the manifest's own directory; in memory they
/// are resolved against [`DatasetManifest::root`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub size: usize,
    pub n_paired: usize,
    pub n_unpaired: usize,
    pub n_test: usize,
    pub n_pseudo: usize,
    pub seed: u64,
    pub window: (f64, f64),
    pub degradation: DegradationConfig,
    pub items: Vec<ManifestItem>,
    #[serde(skip)]
    root: PathBuf,
}

impl DatasetManifest {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn items_with_role(&self, role: Role) -> impl Iterator<Item = &ManifestItem> {
        self.items.iter().filter(move |i| i.role == role)
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Expresses `path` (relative to the working directory) relative to
    /// [`Self::root`] when it lies underneath it, otherwise as an absolute path.
    pub fn relative_to_root(&self, path: &Path) -> PathBuf {
        match path.strip_prefix(&self.root) {
            Ok(rel) => rel.to_path_buf(),
            Err(_) => std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf()),
        }
    }

    /// Loads `(cbct, ct)` for an item that has a target image.
    pub fn load_pair(&self, item: &ManifestItem) -> Result<(Tensor, Tensor)> {
        let ct = item
            .ct
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("item `{}` has no CT image", item.id)))?;
        Ok((read_imgf(&self.resolve(&item.cbct))?, read_imgf(&self.resolve(ct))?))
    }

    pub fn load_cbct(&self, item: &ManifestItem) -> Result<Tensor> {
        read_imgf(&self.resolve(&item.cbct))
    }

    /// Replaces all pseudo-labelled items. `ct_paths` must be relative to
    /// [`Self::root`], one per entry of `sources`.
    pub fn set_pseudo_labels(&mut self, entries: Vec<(String, u64, PathBuf, PathBuf)>) {
        self.items.retain(|i| i.role != Role::PseudoLabeled);
        self.n_pseudo = entries.len();
        for (id, phantom_seed, ct, cbct) in entries {
            self.items.push(ManifestItem {
                id,
                role: Role::PseudoLabeled,
                phantom_seed,
                ct: Some(ct),
                cbct,
            });
        }
    }

    /// Checks counts, role disjointness, image presence and that every
    /// referenced file exists.
    pub fn validate(&self) -> Result<()> {
        let count = |r| self.items_with_role(r).count();
        for (role, expected) in [
            (Role::Paired, self.n_paired),
            (Role::Unpaired, self.n_unpaired),
            (Role::Test, self.n_test),
            (Role::PseudoLabeled, self.n_pseudo),
        ] {
            let got = count(role);
            if got != expected {
                return Err(Error::Dataset(format!(
                    "manifest declares {expected} {} items but lists {got}",
                    role.as_str()
                )));
            }
        }
        let mut ids = BTreeSet::new();
        let mut seeds = BTreeSet::new();
        for item in &self.items {
            if !ids.insert(item.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate item id `{}`", item.id)));
            }
            // pseudo-labelled items reuse their unpaired source's phantom
            if item.role != Role::PseudoLabeled && !seeds.insert(item.phantom_seed) {
                return Err(Error::Dataset(format!(
                    "phantom seed {} of `{}` appears in more than one item",
                    item.phantom_seed, item.id
                )));
            }
            if (item.role == Role::Unpaired) == item.ct.is_some() {
                return Err(Error::Dataset(format!(
                    "item `{}` ({}) has an unexpected CT entry",
                    item.id,
                    item.role.as_str()
                )));
            }
            for p in item.ct.iter().chain(std::iter::once(&item.cbct)) {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::Dataset(format!("missing file {}", full.display())));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut m: DatasetManifest = read_json(path)?;
        m.root = manifest_dir(path);
        m.validate()?;
        Ok(m)
    }

    /// Writes the manifest to `path`. Item paths are rewritten relative to the
    /// new location when they lie under it, otherwise stored absolute.
    pub fn save(&self, path: &Path) -> Result<()> {
        let new_root = manifest_dir(path);
        let mut out = self.clone();
        if new_root != self.root {
            let rebase = |p: &Path| -> PathBuf {
                let full = self.root.join(p);
                match full.strip_prefix(&new_root) {
                    Ok(rel) => rel.to_path_buf(),
                    Err(_) => std::path::absolute(&full).unwrap_or(full),
                }
            };
            for item in &mut out.items {
                item.cbct = rebase(&item.cbct);
                item.ct = item.ct.as_deref().map(rebase);
            }
            out.root = new_root;
        }
        write_json(&out, path)
    }
}

fn manifest_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Generates phantoms and their degraded counterparts under `out_dir`
/// (`ct/`, `cbct/`, `manifest.json`). Every item gets its own phantom seed,
/// so paired, unpaired and test items never share an anatomy.
pub fn build_dataset(
    n_paired: usize,
    n_unpaired: usize,
    n_test: usize,
    size: usize,
    cfg: &DegradationConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    create_dir(&out_dir.join("ct"))?;
    create_dir(&out_dir.join("cbct"))?;
    let plan: Vec<(Role, usize)> = [
        (Role::Paired, n_paired),
        (Role::Unpaired, n_unpaired),
        (Role::Test, n_test),
    ]
    .into_iter()
    .flat_map(|(role, n)| (0..n).map(move |i| (role, i)))
    .collect();

    let items = plan
        .par_iter()
        .enumerate()
        .map(|(g, &(role, i))| {
            let phantom_seed = derive_path(seed, &[0, g as u64]);
            let id = format!("{}-{i:04}", role.as_str());
            let ct = generate_phantom(phantom_seed, size)?;
            let cbct = degrade_to_cbct(&ct, cfg, derive_path(seed, &[1, g as u64]))?;
            let cbct_rel = PathBuf::from("cbct").join(format!("{id}.imgf"));
            write_imgf(&normalize_intensity(&cbct, DEFAULT_WINDOW)?, &out_dir.join(&cbct_rel))?;
            let ct_rel = if role == Role::Unpaired {
                None
            } else {
                let rel = PathBuf::from("ct").join(format!("{id}.imgf"));
                write_imgf(&normalize_intensity(&ct, DEFAULT_WINDOW)?, &out_dir.join(&rel))?;
                Some(rel)
            };
            Ok(ManifestItem {
                id,
                role,
                phantom_seed,
                ct: ct_rel,
                cbct: cbct_rel,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest {
        size,
        n_paired,
        n_unpaired,
        n_test,
        n_pseudo: 0,
        seed,
        window: DEFAULT_WINDOW,
        degradation: *cfg,
        items,
        root: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
