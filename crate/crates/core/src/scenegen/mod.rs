//! Synthetic dual-camera dataset generator: textured fronto-parallel
//! plane stacks, a 24-pose camera arc, simulated main/ultra-wide
//! degradations and exact analytic ground truth for every view.

mod texture;

pub use texture::{value_noise, PlaneTexture, TextureKind};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bokeh::{coc_radius, scatter_render, DefocusParams};
use crate::imaging::{io, multifocus_fuse, Encoding, Image, ScalarMap};
use crate::radiance::{look_at_rotation, CameraModel};
use crate::rng::Rng;
use crate::{Error, Result};

/// Horizontal field of view of the main camera.
const MAIN_HFOV_DEG: f64 = 45.0;
/// Ultra-wide focal scale: 1.35x wider field of view.
pub const ULTRA_FOV_SCALE: f64 = 1.35;
/// Lateral ultra-camera offset as a fraction of the scene distance.
pub const ULTRA_OFFSET_FRAC: f64 = 0.02;
/// Uniform blur radius modeling the ultra camera's lower resolution.
pub const ULTRA_BLUR_RADIUS: f64 = 0.75;
/// Azimuth span of the capture arc.
const ARC_DEGREES: f64 = 30.0;
pub const GAMMA: f64 = 2.0;

/// One fronto-parallel textured plane.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlaneSpec {
    /// Nominal disparity (inverse depth) in (0, 1]; strictly decreasing
    /// front to back within a scene.
    pub disparity: f64,
    /// Lateral extent (x0, x1, y0, y1) in world units; `None` marks the
    /// infinite background plane.
    pub extent: Option<(f64, f64, f64, f64)>,
    pub texture: PlaneTexture,
}

/// Scene description plus the degradation ground truth used to synthesize
/// the measured images.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    /// Front (largest disparity) first; the last plane is the infinite
    /// background.
    pub planes: Vec<PlaneSpec>,
    /// Blur intensity of the simulated main camera.
    pub a_main: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.planes.len() < 2 || self.planes.len() > 5 {
            return Err(Error::Parameter(format!(
                "scene wants 2..=5 planes, got {}",
                self.planes.len()
            )));
        }
        for pair in self.planes.windows(2) {
            if pair[1].disparity >= pair[0].disparity {
                return Err(Error::Parameter(
                    "plane disparities must strictly decrease front to back".into(),
                ));
            }
        }
        for p in &self.planes {
            if !(0.0 < p.disparity && p.disparity <= 1.0) {
                return Err(Error::Parameter("plane disparity must be in (0, 1]".into()));
            }
        }
        if self.planes.last().unwrap().extent.is_some() {
            return Err(Error::Parameter(
                "the last plane must be the infinite background".into(),
            ));
        }
        Ok(())
    }

    pub fn front_disparity(&self) -> f64 {
        self.planes.first().expect("validated").disparity
    }

    pub fn back_disparity(&self) -> f64 {
        self.planes.last().expect("validated").disparity
    }

    /// Mid-scene distance; the camera arc radius.
    pub fn scene_distance(&self) -> f64 {
        0.5 * (1.0 / self.front_disparity() + 1.0 / self.back_disparity())
    }

    pub fn near(&self) -> f64 {
        0.9 / self.front_disparity()
    }

    pub fn far(&self) -> f64 {
        1.1 / self.back_disparity()
    }
}

/// Deterministic procedural scene: 2-5 planes with mixed texture kinds and
/// enough high-frequency detail for focus measures and feature matching.
pub fn build_scene(seed: u64) -> SceneSpec {
    let mut rng = Rng::substream(seed, "scenegen.build");
    let plane_count = 2 + rng.usize_below(4); // 2..=5
    let d_front = rng.range_f64(0.68, 0.78);
    let d_back = rng.range_f64(0.14, 0.18);
    let mut disparities = vec![d_front];
    for i in 1..plane_count - 1 {
        let t = i as f64 / (plane_count - 1) as f64;
        let jitter = rng.range_f64(-0.03, 0.03);
        disparities.push(d_front + (d_back - d_front) * t + jitter);
    }
    disparities.push(d_back);
    // Jitter must not break monotonicity.
    for i in 1..disparities.len() {
        if disparities[i] >= disparities[i - 1] {
            disparities[i] = disparities[i - 1] - 0.02;
        }
    }
    build_scene_with(seed, &disparities, 4.0)
}

/// Procedural scene over caller-chosen plane disparities (front first,
/// strictly decreasing; the last becomes the infinite background) and
/// main-camera blur intensity.
pub fn build_scene_with(seed: u64, disparities: &[f64], a_main: f64) -> SceneSpec {
    let mut rng = Rng::substream(seed, "scenegen.planes");
    let fx = focal_px(96);
    let kinds = [TextureKind::Noise, TextureKind::Checker, TextureKind::Stripes];
    let planes: Vec<PlaneSpec> = disparities
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let z = 1.0 / d;
            // Dominant structure ~7 px and detail ~2.4 px on the central view.
            let base_cell = 7.0 * z / fx;
            let detail_cell = 2.4 * z / fx;
            let texture = PlaneTexture {
                kind: kinds[rng.usize_below(kinds.len())],
                seed: seed.wrapping_mul(31).wrapping_add(i as u64 * 101),
                base_cell,
                detail_cell,
            };
            let extent = if i + 1 == disparities.len() {
                None
            } else {
                // Rect covering a deterministic fraction of the view at its
                // depth; foreground planes stay clear of the borders.
                let half_w = z * (MAIN_HFOV_DEG / 2.0).to_radians().tan();
                let half_h = half_w * 0.75;
                let sx = rng.range_f64(0.42, 0.6) * half_w;
                let sy = rng.range_f64(0.45, 0.65) * half_h;
                let cx = rng.range_f64(-0.25, 0.25) * half_w;
                let cy = rng.range_f64(-0.25, 0.25) * half_h;
                Some((cx - sx, cx + sx, cy - sy, cy + sy))
            };
            PlaneSpec {
                disparity: d,
                extent,
                texture,
            }
        })
        .collect();

    SceneSpec {
        seed,
        planes,
        a_main,
    }
}

fn focal_px(width: usize) -> f64 {
    0.5 * width as f64 / (MAIN_HFOV_DEG / 2.0).to_radians().tan()
}

/// Main and ultra-wide camera for each view on the azimuth arc.
pub fn scene_cameras(
    spec: &SceneSpec,
    views: usize,
    width: usize,
    height: usize,
) -> Vec<(CameraModel, CameraModel)> {
    let dist = spec.scene_distance();
    let center = [0.0, 0.0, dist];
    let fx = focal_px(width);
    let arc = ARC_DEGREES.to_radians();
    (0..views)
        .map(|i| {
            let theta = if views == 1 {
                0.0
            } else {
                -arc / 2.0 + arc * i as f64 / (views - 1) as f64
            };
            let pos = [
                center[0] + dist * theta.sin(),
                0.0,
                center[2] - dist * theta.cos(),
            ];
            let rotation = look_at_rotation(pos, center, [0.0, 1.0, 0.0]);
            let main = CameraModel {
                fx,
                fy: fx,
                cx: width as f64 / 2.0,
                cy: height as f64 / 2.0,
                rotation,
                center: pos,
                width,
                height,
                near: spec.near(),
                far: spec.far(),
            };
            // Ultra: same pose rotation, laterally offset along camera
            // right, wider field of view at the same resolution.
            let off = ULTRA_OFFSET_FRAC * dist;
            let upos = [
                pos[0] + rotation[0][0] * off,
                pos[1] + rotation[1][0] * off,
                pos[2] + rotation[2][0] * off,
            ];
            let ultra = CameraModel {
                fx: fx / ULTRA_FOV_SCALE,
                fy: fx / ULTRA_FOV_SCALE,
                center: upos,
                ..main.clone()
            };
            (main, ultra)
        })
        .collect()
}

/// Analytic all-in-focus render: nearest ray-plane intersection wins.
/// Returns the image, the exact per-pixel disparity (inverse camera-frame
/// depth) and the winning plane index per pixel.
pub fn render_aif(spec: &SceneSpec, cam: &CameraModel) -> Result<(Image, ScalarMap, ScalarMap)> {
    spec.validate()?;
    cam.validate()?;
    let (h, w) = (cam.height, cam.width);
    let mut img = vec![0.0; h * w * 3];
    let mut disp = vec![0.0; h * w];
    let mut plane_idx = vec![0.0; h * w];

    img.par_chunks_mut(w * 3)
        .zip(disp.par_chunks_mut(w))
        .zip(plane_idx.par_chunks_mut(w))
        .enumerate()
        .try_for_each(|(y, ((ir, dr), pr))| {
            for x in 0..w {
                let ray = cam.ray_for_pixel(x as f64, y as f64)?;
                let mut hit = None;
                for (pi, plane) in spec.planes.iter().enumerate() {
                    let z_plane = 1.0 / plane.disparity;
                    if ray.dir[2].abs() < 1e-12 {
                        continue;
                    }
                    let t = (z_plane - ray.origin[2]) / ray.dir[2];
                    if t <= 0.0 {
                        continue;
                    }
                    let px = ray.origin[0] + t * ray.dir[0];
                    let py = ray.origin[1] + t * ray.dir[1];
                    let inside = match plane.extent {
                        None => true,
                        Some((x0, x1, y0, y1)) => px >= x0 && px <= x1 && py >= y0 && py <= y1,
                    };
                    if inside {
                        hit = Some((pi, plane, [px, py, z_plane]));
                        break; // planes are sorted front to back
                    }
                }
                let (pi, plane, point) =
                    hit.ok_or_else(|| Error::Numeric("ray escaped the scene".into()))?;
                let rgb = plane.texture.sample(point[0], point[1]);
                for c in 0..3 {
                    ir[x * 3 + c] = rgb[c];
                }
                dr[x] = 1.0 / cam.depth_of(point);
                pr[x] = pi as f64;
            }
            Ok::<(), Error>(())
        })?;

    Ok((
        Image::new(h, w, 3, Encoding::Display, img)?,
        ScalarMap::new(h, w, disp)?,
        ScalarMap::new(h, w, plane_idx)?,
    ))
}

/// Thin-lens defocus applied to an all-in-focus render; the same scatter
/// operator the training stages invert.
pub fn simulate_main(
    aif: &Image,
    disparity: &ScalarMap,
    a_star: f64,
    d_f_star: f64,
) -> Result<Image> {
    let params = DefocusParams::new(a_star, d_f_star)?;
    let radius = coc_radius(&params, disparity)?;
    scatter_render(aif, &radius, GAMMA)
}

/// Per-channel monotone cubic color curve:
/// v + k1·v(1-v) + k2·v(1-v)(0.5-v).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ColorCurve {
    pub coeffs: [[f64; 2]; 3],
}

impl ColorCurve {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = Rng::substream(seed, "scenegen.curve");
        let mut coeffs = [[0.0; 2]; 3];
        for ch in coeffs.iter_mut() {
            ch[0] = rng.range_f64(-0.12, 0.12);
            ch[1] = rng.range_f64(-0.1, 0.1);
        }
        ColorCurve { coeffs }
    }

    fn apply_raw(&self, v: f64, channel: usize) -> f64 {
        let [k1, k2] = self.coeffs[channel];
        v + k1 * v * (1.0 - v) + k2 * v * (1.0 - v) * (0.5 - v)
    }

    pub fn apply(&self, v: f64, channel: usize) -> f64 {
        self.apply_raw(v, channel).clamp(0.0, 1.0)
    }

    /// Monotonicity check by dense sampling of the unclamped polynomial.
    pub fn is_monotone(&self) -> bool {
        (0..3).all(|c| {
            let mut prev = self.apply_raw(0.0, c);
            (1..=256).all(|i| {
                let v = self.apply_raw(i as f64 / 256.0, c);
                let ok = v >= prev;
                prev = v;
                ok
            })
        })
    }
}

/// Ultra-wide degradation: mild uniform blur (lower effective resolution)
/// followed by the per-channel color curve. Spatial misalignment comes
/// from the offset wide-angle camera at render time.
pub fn simulate_ultra(aif_ultra: &Image, curve: &ColorCurve, blur_radius: f64) -> Result<Image> {
    if !curve.is_monotone() {
        return Err(Error::Parameter(
            "color curve must be monotone on [0,1]".into(),
        ));
    }
    let blurred = if blur_radius > 0.0 {
        let radius = ScalarMap::filled(aif_ultra.height(), aif_ultra.width(), blur_radius);
        scatter_render(aif_ultra, &radius, GAMMA)?
    } else {
        aif_ultra.clone()
    };
    let data: Vec<f64> = blurred
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| curve.apply(v, i % 3))
        .collect();
    Image::new(
        blurred.height(),
        blurred.width(),
        3,
        Encoding::Display,
        data,
    )
}

pub const MANIFEST_NAME: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorTruth {
    pub a_main: f64,
    /// Focal disparity of the foreground-focused main variant.
    pub d_f_front: f64,
    /// Focal disparity of the background-focused main variant.
    pub d_f_back: f64,
    pub plane_disparities: Vec<f64>,
    pub color_curve: ColorCurve,
    pub ultra_blur_radius: f64,
    pub ultra_offset_frac: f64,
    pub ultra_fov_scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViewPaths {
    pub main_fg: String,
    pub main_bg: String,
    pub ultra: String,
    pub gt: String,
    pub aif: String,
    pub disparity: String,
    pub plane_mask: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViewRecord {
    pub id: usize,
    pub split: String,
    pub main_camera: CameraModel,
    pub ultra_camera: CameraModel,
    pub paths: ViewPaths,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub scene_seed: u64,
    pub master_seed: u64,
    /// (width, height)
    pub resolution: (usize, usize),
    pub near: f64,
    pub far: f64,
    pub truth: GeneratorTruth,
    pub views: Vec<ViewRecord>,
}

impl DatasetManifest {
    pub fn train_views(&self) -> impl Iterator<Item = &ViewRecord> {
        self.views.iter().filter(|v| v.split == "train")
    }

    pub fn test_views(&self) -> impl Iterator<Item = &ViewRecord> {
        self.views.iter().filter(|v| v.split == "test")
    }

    pub fn view(&self, id: usize) -> Result<&ViewRecord> {
        self.views
            .iter()
            .find(|v| v.id == id)
            .ok_or_else(|| Error::Parameter(format!("unknown view id {id}")))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GenOptions {
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub master_seed: u64,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            views: 24,
            width: 96,
            height: 72,
            master_seed: 42,
        }
    }
}

/// Train/test split: floor(7/8·views) training views, the rest spread
/// evenly through the arc as held-out views.
pub fn split_views(views: usize) -> Vec<&'static str> {
    let train = (7 * views) / 8;
    let test = views - train;
    let mut split = vec!["train"; views];
    for k in 1..=test {
        let idx = k * views / (test + 1);
        split[idx.min(views - 1)] = "test";
    }
    split
}

/// Generate the dataset tree: per-view PNG/PFM files plus the manifest.
pub fn emit_dataset(
    spec: &SceneSpec,
    out_dir: &Path,
    opts: &GenOptions,
) -> Result<DatasetManifest> {
    spec.validate()?;
    if opts.views < 2 {
        return Err(Error::Parameter("need at least two views".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let cameras = scene_cameras(spec, opts.views, opts.width, opts.height);
    let split = split_views(opts.views);
    let curve = ColorCurve::from_seed(spec.seed);
    if !curve.is_monotone() {
        return Err(Error::Parameter(
            "generated color curve is not monotone".into(),
        ));
    }
    let d_f_front = spec.front_disparity();
    let d_f_back = spec.back_disparity();

    let records: Vec<ViewRecord> = cameras
        .par_iter()
        .enumerate()
        .map(|(i, (main_cam, ultra_cam))| -> Result<ViewRecord> {
            let dir = out_dir.join(format!("view_{i:03}"));
            std::fs::create_dir_all(&dir)?;
            let (aif, disp, mask) = render_aif(spec, main_cam)?;
            let main_fg = simulate_main(&aif, &disp, spec.a_main, d_f_front)?;
            let main_bg = simulate_main(&aif, &disp, spec.a_main, d_f_back)?;
            let (ultra_aif, _, _) = render_aif(spec, ultra_cam)?;
            let ultra = simulate_ultra(&ultra_aif, &curve, ULTRA_BLUR_RADIUS)?;
            let (_, gt) = multifocus_fuse(&main_fg, &main_bg)?;

            let paths = ViewPaths {
                main_fg: format!("view_{i:03}/main_fg.png"),
                main_bg: format!("view_{i:03}/main_bg.png"),
                ultra: format!("view_{i:03}/ultra.png"),
                gt: format!("view_{i:03}/gt.png"),
                aif: format!("view_{i:03}/aif.png"),
                disparity: format!("view_{i:03}/disp.pfm"),
                plane_mask: format!("view_{i:03}/plane_mask.png"),
            };
            io::save_png(&main_fg, &out_dir.join(&paths.main_fg))?;
            io::save_png(&main_bg, &out_dir.join(&paths.main_bg))?;
            io::save_png(&ultra, &out_dir.join(&paths.ultra))?;
            io::save_png(&gt, &out_dir.join(&paths.gt))?;
            io::save_png(&aif, &out_dir.join(&paths.aif))?;
            io::save_pfm(&disp, &out_dir.join(&paths.disparity))?;
            let mask_img = Image::new(
                opts.height,
                opts.width,
                1,
                Encoding::Display,
                mask.data().iter().map(|&v| v / 255.0).collect(),
            )?;
            io::save_png(&mask_img, &out_dir.join(&paths.plane_mask))?;

            Ok(ViewRecord {
                id: i,
                split: split[i].to_string(),
                main_camera: main_cam.clone(),
                ultra_camera: ultra_cam.clone(),
                paths,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        scene_seed: spec.seed,
        master_seed: opts.master_seed,
        resolution: (opts.width, opts.height),
        near: spec.near(),
        far: spec.far(),
        truth: GeneratorTruth {
            a_main: spec.a_main,
            d_f_front,
            d_f_back,
            plane_disparities: spec.planes.iter().map(|p| p.disparity).collect(),
            color_curve: curve,
            ultra_blur_radius: ULTRA_BLUR_RADIUS,
            ultra_offset_frac: ULTRA_OFFSET_FRAC,
            ultra_fov_scale: ULTRA_FOV_SCALE,
        },
        views: records,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
    std::fs::write(out_dir.join(MANIFEST_NAME), json)?;
    Ok(manifest)
}

pub fn load_manifest(dataset_dir: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(dataset_dir.join(MANIFEST_NAME))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest decode: {e}")))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported manifest schema {}",
            manifest.schema_version
        )));
    }
    Ok(manifest)
}

/// Load the per-pixel plane index map stored in a dataset.
pub fn load_plane_mask(dataset_dir: &Path, record: &ViewRecord) -> Result<ScalarMap> {
    let img = io::load_png(&dataset_dir.join(&record.paths.plane_mask))?;
    ScalarMap::new(
        img.height(),
        img.width(),
        img.data().iter().map(|&v| (v * 255.0).round()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::psnr;

    #[test]
    fn build_scene_is_deterministic_and_valid() {
        let a = build_scene(5);
        let b = build_scene(5);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        a.validate().unwrap();
        assert!((2..=5).contains(&a.planes.len()));
        let c = build_scene(6);
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn textures_have_gradient_energy() {
        let spec = build_scene(7);
        let cams = scene_cameras(&spec, 3, 96, 72);
        let (img, _, _) = render_aif(&spec, &cams[1].0).unwrap();
        let gray = img.to_gray();
        let (h, w) = (img.height(), img.width());
        let mut acc = 0.0;
        let mut n = 0;
        for y in 0..h {
            for x in 1..w {
                acc += (gray[y * w + x] - gray[y * w + x - 1]).abs();
                n += 1;
            }
        }
        let mean_grad = acc / n as f64;
        assert!(mean_grad > 0.02, "mean |∇| = {mean_grad}");
    }

    #[test]
    fn single_plane_view_has_constant_nominal_disparity() {
        let mut spec = build_scene(9);
        // Background plane only, plus a dummy front plane far outside the
        // frustum.
        spec.planes = vec![
            PlaneSpec {
                disparity: 0.7,
                extent: Some((1e6, 1e6 + 1.0, 1e6, 1e6 + 1.0)),
                texture: spec.planes[0].texture.clone(),
            },
            spec.planes.last().unwrap().clone(),
        ];
        let cams = scene_cameras(&spec, 3, 64, 48);
        let (_, disp, idx) = render_aif(&spec, &cams[1].0).unwrap();
        let d_back = spec.back_disparity();
        for (d, i) in disp.data().iter().zip(idx.data()) {
            assert_eq!(*i, 1.0);
            assert!((d - d_back).abs() < 1e-9, "{d} vs {d_back}");
        }
    }

    #[test]
    fn front_plane_occludes_background() {
        let spec = build_scene(11);
        let cams = scene_cameras(&spec, 3, 96, 72);
        let (_, disp, idx) = render_aif(&spec, &cams[1].0).unwrap();
        let d_front = spec.front_disparity();
        let mut front_pixels = 0;
        for (d, i) in disp.data().iter().zip(idx.data()) {
            if *i == 0.0 {
                front_pixels += 1;
                assert!((d - d_front).abs() < 0.05);
            }
        }
        assert!(front_pixels > 300, "front plane covers {front_pixels} px");
    }

    #[test]
    fn render_matches_brute_force_intersection_oracle() {
        let spec = build_scene(13);
        let cam = &scene_cameras(&spec, 3, 32, 32)[0].0;
        let (img, disp, _) = render_aif(&spec, cam).unwrap();
        // Independent per-pixel re-intersection.
        for y in 0..32 {
            for x in 0..32 {
                let ray = cam.ray_for_pixel(x as f64, y as f64).unwrap();
                let mut expect: Option<([f64; 3], f64)> = None;
                for plane in &spec.planes {
                    let z = 1.0 / plane.disparity;
                    let t = (z - ray.origin[2]) / ray.dir[2];
                    if t <= 0.0 {
                        continue;
                    }
                    let px = ray.origin[0] + t * ray.dir[0];
                    let py = ray.origin[1] + t * ray.dir[1];
                    let inside = plane
                        .extent
                        .map(|(x0, x1, y0, y1)| px >= x0 && px <= x1 && py >= y0 && py <= y1)
                        .unwrap_or(true);
                    if inside {
                        let point = [px, py, z];
                        expect = Some(([px, py, z], 1.0 / cam.depth_of(point)));
                        let _ = point;
                        break;
                    }
                }
                let (hit_point, d) = expect.unwrap();
                let plane_hit = spec
                    .planes
                    .iter()
                    .find(|p| (1.0 / p.disparity - hit_point[2]).abs() < 1e-12)
                    .unwrap();
                let r_channel = plane_hit.texture.sample(hit_point[0], hit_point[1])[0];
                assert_eq!(img.get(y, x, 0), r_channel);
                assert_eq!(disp.get(y, x), d);
            }
        }
    }

    #[test]
    fn zero_blur_leaves_aif_unchanged() {
        let spec = build_scene(15);
        let cam = &scene_cameras(&spec, 3, 48, 36)[1].0;
        let (aif, disp, _) = render_aif(&spec, cam).unwrap();
        let blurred = simulate_main(&aif, &disp, 0.0, spec.front_disparity()).unwrap();
        for (a, b) in aif.data().iter().zip(blurred.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn focused_region_stays_much_sharper_than_defocused() {
        let spec = build_scene(17);
        let cam = &scene_cameras(&spec, 3, 96, 72)[1].0;
        let (aif, disp, idx) = render_aif(&spec, cam).unwrap();
        let blurred = simulate_main(&aif, &disp, 4.0, spec.front_disparity()).unwrap();

        // Focused plane vs the most defocused plane (the background).
        let back_idx = (spec.planes.len() - 1) as f64;
        let region_psnr = |plane: f64| -> f64 {
            let mut acc = 0.0;
            let mut n = 0;
            for (i, &pi) in idx.data().iter().enumerate() {
                if pi == plane {
                    for c in 0..3 {
                        let d = aif.data()[i * 3 + c] - blurred.data()[i * 3 + c];
                        acc += d * d;
                    }
                    n += 3;
                }
            }
            let mse = acc / n as f64;
            10.0 * (1.0 / mse.max(1e-10)).log10()
        };
        let focused = region_psnr(0.0);
        let defocused = region_psnr(back_idx);
        assert!(
            focused > defocused + 10.0,
            "focused {focused:.1} dB vs defocused {defocused:.1} dB"
        );
    }

    #[test]
    fn ultra_view_is_displaced_from_main_by_over_two_pixels() {
        let spec = build_scene(19);
        let cams = scene_cameras(&spec, 3, 96, 72);
        let (main_cam, ultra_cam) = &cams[1];
        let (aif_main, _, _) = render_aif(&spec, main_cam).unwrap();
        let (aif_ultra, _, _) = render_aif(&spec, ultra_cam).unwrap();
        let curve = ColorCurve::from_seed(spec.seed);
        let ultra = simulate_ultra(&aif_ultra, &curve, ULTRA_BLUR_RADIUS).unwrap();

        let matches = crate::align::detect_and_match(&ultra, &aif_main);
        let h = crate::align::estimate_homography_ransac(
            &matches,
            &crate::align::RansacParams::default(),
        )
        .unwrap();
        let (cx, cy) = h.apply(0.0, 0.0);
        let disp0 = (cx.powi(2) + cy.powi(2)).sqrt();
        let (ex, ey) = h.apply(95.0, 71.0);
        let disp1 = ((ex - 95.0).powi(2) + (ey - 71.0).powi(2)).sqrt();
        assert!(
            disp0.max(disp1) > 2.0,
            "corner displacements {disp0:.2}, {disp1:.2}"
        );
    }

    #[test]
    fn identity_curve_zero_blur_is_identity() {
        let spec = build_scene(21);
        let cam = &scene_cameras(&spec, 3, 48, 36)[1].1;
        let (aif, _, _) = render_aif(&spec, cam).unwrap();
        let curve = ColorCurve {
            coeffs: [[0.0, 0.0]; 3],
        };
        let out = simulate_ultra(&aif, &curve, 0.0).unwrap();
        assert_eq!(out.data(), aif.data());
    }

    #[test]
    fn non_monotone_curve_is_rejected() {
        let spec = build_scene(23);
        let cam = &scene_cameras(&spec, 3, 48, 36)[1].1;
        let (aif, _, _) = render_aif(&spec, cam).unwrap();
        let bad = ColorCurve {
            coeffs: [[-1.5, 0.0], [0.0, 0.0], [0.0, 0.0]],
        };
        assert!(simulate_ultra(&aif, &bad, 0.0).is_err());
    }

    #[test]
    fn split_rule() {
        let s24 = split_views(24);
        assert_eq!(s24.iter().filter(|s| **s == "train").count(), 21);
        assert_eq!(s24.iter().filter(|s| **s == "test").count(), 3);
        let s8 = split_views(8);
        assert_eq!(s8.iter().filter(|s| **s == "train").count(), 7);
        assert_eq!(s8.iter().filter(|s| **s == "test").count(), 1);
    }

    #[test]
    fn emitted_dataset_validates_and_fused_gt_tracks_analytic_aif() {
        let spec = build_scene(25);
        let dir = tempfile::tempdir().unwrap();
        let opts = GenOptions {
            views: 4,
            width: 96,
            height: 72,
            master_seed: 1,
        };
        let manifest = emit_dataset(&spec, dir.path(), &opts).unwrap();
        assert_eq!(manifest.views.len(), 4);
        for view in &manifest.views {
            for p in [
                &view.paths.main_fg,
                &view.paths.main_bg,
                &view.paths.ultra,
                &view.paths.gt,
                &view.paths.aif,
                &view.paths.disparity,
                &view.paths.plane_mask,
            ] {
                assert!(dir.path().join(p).exists(), "missing {p}");
            }
            let gt = io::load_png(&dir.path().join(&view.paths.gt)).unwrap();
            let aif = io::load_png(&dir.path().join(&view.paths.aif)).unwrap();
            let p = psnr(&gt, &aif).unwrap();
            assert!(
                p >= 35.0,
                "view {}: fused GT vs analytic AiF {p:.2} dB",
                view.id
            );
        }
        let loaded = load_manifest(dir.path()).unwrap();
        assert_eq!(loaded.views.len(), manifest.views.len());
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let spec = build_scene(27);
        let opts = GenOptions {
            views: 2,
            width: 48,
            height: 36,
            master_seed: 3,
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        emit_dataset(&spec, d1.path(), &opts).unwrap();
        emit_dataset(&spec, d2.path(), &opts).unwrap();
        for entry in walk(d1.path()) {
            let rel = entry.strip_prefix(d1.path()).unwrap();
            let a = std::fs::read(&entry).unwrap();
            let b = std::fs::read(d2.path().join(rel)).unwrap();
            assert_eq!(a, b, "file {rel:?} differs");
        }
    }

    fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push(p);
                }
            }
        }
        out.sort();
        out
    }
}
