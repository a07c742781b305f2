//! On-disk scene layout: `cams/{id}_cam.txt` and `images/{id}.pfm` per
//! view, a `pair.txt` with the source rankings, and optional `tracks.txt`,
//! `gt_depths/{id}.pfm` and `gt_cloud.ply` ground-truth files. View ids are
//! dense from zero and consistent across all files.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{invalid, Error, Result};
use crate::fusion::PointCloud;
use crate::geometry::CameraView;
use crate::imaging::Image;
use crate::io::cam::{parse_cam_file, write_cam_file, CamFile};
use crate::io::pair::{parse_pair_file, write_pair_file};
use crate::io::pfm::{read_depth_pfm, read_pfm, write_depth_pfm, write_pfm};
use crate::io::ply::{read_ply, write_ply};
use crate::plane_sweep::DepthMap;
use crate::synthetic::SceneBundle;
use crate::view_selection::{rank_sources, SparseTrackSet, ViewRanking};

/// A scene held in memory in the same shape the disk layout stores it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub views: Vec<CameraView>,
    pub images: Vec<Image>,
    pub rankings: Vec<ViewRanking>,
    /// First-stage hypothesis count the camera files advertise.
    pub sweep_count: usize,
    pub tracks: Option<SparseTrackSet>,
    pub gt_depths: Option<Vec<DepthMap>>,
    pub gt_cloud: Option<PointCloud>,
}

impl Dataset {
    /// Package a synthetic scene: every view becomes a reference ranked
    /// against all others through the bundle's sparse tracks.
    pub fn from_bundle(bundle: &SceneBundle, sweep_count: usize) -> Result<Dataset> {
        if sweep_count < 2 {
            return Err(invalid("sweep count needs at least two hypotheses"));
        }
        let n = bundle.views.len();
        let mut rankings = Vec::with_capacity(n);
        for reference in 0..n {
            let candidates: Vec<usize> = (0..n).filter(|&v| v != reference).collect();
            rankings.push(rank_sources(&bundle.views, &bundle.tracks, reference, &candidates)?);
        }
        Ok(Dataset {
            views: bundle.views.clone(),
            images: bundle.images.clone(),
            rankings,
            sweep_count,
            tracks: Some(bundle.tracks.clone()),
            gt_depths: Some(bundle.gt_depths.clone()),
            gt_cloud: Some(bundle.gt_cloud.clone()),
        })
    }

    fn validate(&self) -> Result<()> {
        let n = self.views.len();
        if n == 0 {
            return Err(invalid("dataset needs at least one view"));
        }
        if self.images.len() != n {
            return Err(invalid(format!("{} images for {n} views", self.images.len())));
        }
        for (i, (view, img)) in self.views.iter().zip(&self.images).enumerate() {
            if img.channels() != 1 {
                return Err(invalid(format!("image {i} must be single-channel for pfm storage")));
            }
            if img.width() != view.width() || img.height() != view.height() {
                return Err(invalid(format!("image {i} size disagrees with its view")));
            }
        }
        for r in &self.rankings {
            if r.reference >= n || r.sources.iter().any(|&(id, _)| id >= n) {
                return Err(invalid(format!(
                    "ranking for reference {} names a view outside 0..{n}",
                    r.reference
                )));
            }
        }
        if let Some(depths) = &self.gt_depths {
            if depths.len() != n {
                return Err(invalid(format!("{} gt depths for {n} views", depths.len())));
            }
        }
        Ok(())
    }
}

pub(crate) fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_at(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_at(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?)
        .map_err(|_| invalid(format!("{}: not utf-8", path.display())))
}

fn cam_path(root: &Path, id: usize) -> PathBuf {
    root.join("cams").join(format!("{id:08}_cam.txt"))
}

fn image_path(root: &Path, id: usize) -> PathBuf {
    root.join("images").join(format!("{id:08}.pfm"))
}

fn gt_depth_path(root: &Path, id: usize) -> PathBuf {
    root.join("gt_depths").join(format!("{id:08}.pfm"))
}

pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    dataset.validate()?;
    for dir in ["cams", "images"] {
        let path = root.join(dir);
        fs::create_dir_all(&path).map_err(|e| io_at(&path, e))?;
    }
    for (id, (view, img)) in dataset.views.iter().zip(&dataset.images).enumerate() {
        let cam = CamFile::from_view(view, dataset.sweep_count)?;
        write_bytes(&cam_path(root, id), write_cam_file(&cam).as_bytes())?;
        write_bytes(&image_path(root, id), &write_pfm(img)?)?;
    }
    write_bytes(&root.join("pair.txt"), write_pair_file(&dataset.rankings).as_bytes())?;
    if let Some(tracks) = &dataset.tracks {
        write_bytes(&root.join("tracks.txt"), write_tracks(tracks).as_bytes())?;
    }
    if let Some(depths) = &dataset.gt_depths {
        let dir = root.join("gt_depths");
        fs::create_dir_all(&dir).map_err(|e| io_at(&dir, e))?;
        for (id, depth) in depths.iter().enumerate() {
            write_bytes(&gt_depth_path(root, id), &write_depth_pfm(depth)?)?;
        }
    }
    if let Some(cloud) = &dataset.gt_cloud {
        write_bytes(&root.join("gt_cloud.ply"), &write_ply(cloud))?;
    }
    Ok(())
}

/// Ids present in `dir` as `{id:08}{suffix}` files; they must be dense from
/// zero.
fn dense_ids(dir: &Path, suffix: &str) -> Result<usize> {
    let mut ids = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| io_at(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_at(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let Some(stem) = name.strip_suffix(suffix) else {
            return Err(invalid(format!("unexpected file {name} in {}", dir.display())));
        };
        let id: usize = stem
            .parse()
            .map_err(|_| invalid(format!("unexpected file {name} in {}", dir.display())))?;
        ids.push(id);
    }
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(invalid(format!("{} holds no views", dir.display())));
    }
    if ids.iter().enumerate().any(|(want, &got)| want != got) {
        return Err(invalid(format!("view ids in {} are not dense from 0", dir.display())));
    }
    Ok(ids.len())
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let n = dense_ids(&root.join("cams"), "_cam.txt")?;
    let images_n = dense_ids(&root.join("images"), ".pfm")?;
    if images_n != n {
        return Err(invalid(format!("{n} cameras but {images_n} images")));
    }
    let mut views = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    let mut sweep_count = None;
    for id in 0..n {
        let img = read_pfm(&read_bytes(&image_path(root, id))?)?;
        let cam = parse_cam_file(&read_text(&cam_path(root, id))?)?;
        let count = cam.sweep.map_or(192, |(c, _)| c.round() as usize);
        match sweep_count {
            None => sweep_count = Some(count),
            Some(prev) if prev != count => {
                return Err(invalid(format!(
                    "camera {id} advertises {count} hypotheses, others {prev}"
                )))
            }
            Some(_) => {}
        }
        views.push(cam.to_view(img.width(), img.height())?);
        images.push(img);
    }
    let rankings = parse_pair_file(&read_text(&root.join("pair.txt"))?)?;
    for r in &rankings {
        if r.reference >= n || r.sources.iter().any(|&(id, _)| id >= n) {
            return Err(invalid(format!(
                "pair.txt ranking for reference {} names a view outside 0..{n}",
                r.reference
            )));
        }
    }
    let tracks_path = root.join("tracks.txt");
    let tracks = if tracks_path.exists() {
        Some(parse_tracks(&read_text(&tracks_path)?, n)?)
    } else {
        None
    };
    let gt_dir = root.join("gt_depths");
    let gt_depths = if gt_dir.exists() {
        let gt_n = dense_ids(&gt_dir, ".pfm")?;
        if gt_n != n {
            return Err(invalid(format!("{gt_n} gt depths for {n} views")));
        }
        let mut depths = Vec::with_capacity(n);
        for (id, view) in views.iter().enumerate() {
            depths.push(read_depth_pfm(&read_bytes(&gt_depth_path(root, id))?, view.depth_range())?);
        }
        Some(depths)
    } else {
        None
    };
    let cloud_path = root.join("gt_cloud.ply");
    let gt_cloud =
        if cloud_path.exists() { Some(read_ply(&read_bytes(&cloud_path)?)?) } else { None };
    Ok(Dataset {
        views,
        images,
        rankings,
        sweep_count: sweep_count.expect("n >= 1 was checked"),
        tracks,
        gt_depths,
        gt_cloud,
    })
}

/// Track lines are `x y z k id...` with k the observer count.
fn write_tracks(tracks: &SparseTrackSet) -> String {
    let mut out = tracks.len().to_string();
    out.push('\n');
    for i in 0..tracks.len() {
        let p = tracks.point(i);
        let observers = tracks.observers(i);
        out.push_str(&format!("{} {} {} {}", p.x, p.y, p.z, observers.len()));
        for id in observers {
            out.push(' ');
            out.push_str(&id.to_string());
        }
        out.push('\n');
    }
    out
}

fn parse_tracks(text: &str, num_views: usize) -> Result<SparseTrackSet> {
    let parse_err =
        |line: usize, msg: String| -> Error { Error::Parse { line, msg } };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (no, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing track count".into()))?;
    let count: usize = first
        .parse()
        .map_err(|_| parse_err(no, format!("expected track count, got '{first}'")))?;
    let mut points = Vec::with_capacity(count);
    let mut visibility = Vec::with_capacity(count);
    for _ in 0..count {
        let (no, line) = lines
            .by_ref()
            .find(|(_, l)| !l.is_empty())
            .ok_or_else(|| parse_err(text.lines().count() + 1, "missing track line".into()))?;
        let mut toks = line.split_whitespace();
        let mut coord = |what: &str| -> Result<f64> {
            let v: f64 = toks
                .next()
                .ok_or_else(|| parse_err(no, format!("missing {what}")))?
                .parse()
                .map_err(|_| parse_err(no, format!("bad {what} in '{line}'")))?;
            if !v.is_finite() {
                return Err(parse_err(no, format!("non-finite {what}")));
            }
            Ok(v)
        };
        let point = Vector3::new(coord("x")?, coord("y")?, coord("z")?);
        let k = coord("observer count")? as usize;
        let mut ids = Vec::with_capacity(k);
        for _ in 0..k {
            let id: usize = toks
                .next()
                .ok_or_else(|| parse_err(no, "fewer observers than declared".into()))?
                .parse()
                .map_err(|_| parse_err(no, format!("bad observer id in '{line}'")))?;
            ids.push(id);
        }
        if toks.next().is_some() {
            return Err(parse_err(no, "trailing tokens after the declared observers".into()));
        }
        points.push(point);
        visibility.push(ids);
    }
    if let Some((no, line)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(parse_err(no, format!("unexpected trailing content '{line}'")));
    }
    SparseTrackSet::new(points, visibility, num_views)
}
