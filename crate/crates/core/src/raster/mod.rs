//! Tile-based differentiable splat rasterizer.
//!
//! Forward: project every Gaussian, sort by camera depth (ties broken by cloud
//! index), bin into 16x16 tiles and composite front to back per pixel. Color
//! and depth share one compositing loop. Backward replays the exact same
//! skip/stop decisions so the pair is consistent, reduces per-tile partials in
//! tile order, then chains each splat's screen gradient to its parameters.

mod project;

pub use project::{project_backward, project_gaussian, raw_cov2d, GaussianGrad, ScreenGrad, Splat2D};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::{Camera, GaussianCloud};

/// Added to the screen covariance diagonal (px²) before inversion.
pub const LOWPASS_FLOOR: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Compositing stops before a splat that would push transmittance below this.
pub const T_STOP: f64 = 1e-4;
pub const TILE_SIZE: usize = 16;

#[derive(Debug, Clone)]
pub struct RenderOutput {
    /// `H x W x 3`, background included.
    pub color: Image,
    /// `H x W x 1`, unnormalized composite of camera-space z.
    pub depth: Image,
    /// `H x W x 1`, `Σ w_i`.
    pub accum_alpha: Image,
    /// `H x W x 1`, transmittance left after the last contributor.
    pub transmittance: Image,
    /// Number of splats composited into each pixel.
    pub n_contrib: Vec<u32>,
    /// Per cloud index: whether the Gaussian survived culling.
    pub visible: Vec<bool>,
}

impl RenderOutput {
    /// Expected depth of the visible surface, `depth / accum_alpha`; zero where
    /// nothing was composited.
    pub fn surface_depth(&self) -> Image {
        let mut out = self.depth.clone();
        for (d, &a) in out.data_mut().iter_mut().zip(self.accum_alpha.data()) {
            *d = if a > 0.0 { *d / a } else { 0.0 };
        }
        out
    }
}

/// Analytic gradients for one render plus the per-view screen statistic used
/// for densification.
#[derive(Debug, Clone)]
pub struct GradBundle {
    pub grads: Vec<GaussianGrad>,
    /// `‖dL/d mean2d‖` in normalized device units (pixel gradient scaled by
    /// half the image extent per axis).
    pub mean2d_grad_norm: Vec<f64>,
    pub visible: Vec<bool>,
}

impl GradBundle {
    pub fn zeros(n: usize, sh_count: usize) -> Self {
        Self {
            grads: vec![GaussianGrad::zeros(sh_count); n],
            mean2d_grad_norm: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds another bundle's parameter gradients (statistics are left untouched).
    pub fn add_grads(&mut self, other: &GradBundle) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Shape(format!(
                "gradient bundles of {} and {} gaussians",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
        Ok(())
    }
}

/// The fields of a splat the per-pixel walk reads, packed per tile.
#[derive(Clone, Copy)]
struct Lane {
    mx: f64,
    my: f64,
    ca: f64,
    cb: f64,
    cc: f64,
    opacity: f64,
    /// Powers below this give `alpha < ALPHA_MIN` (with margin for rounding).
    min_power: f64,
    rect: [u32; 4],
}

impl Lane {
    fn new(s: &Splat2D) -> Self {
        Self {
            mx: s.mean2d.x,
            my: s.mean2d.y,
            ca: s.conic[(0, 0)],
            cb: s.conic[(0, 1)],
            cc: s.conic[(1, 1)],
            opacity: s.opacity,
            min_power: (ALPHA_MIN / s.opacity).ln() - 1e-9,
            rect: s.rect.map(|v| v as u32),
        }
    }
}

struct Prepared {
    splats: Vec<Splat2D>,
    tiles: Vec<Vec<u32>>,
    lanes: Vec<Vec<Lane>>,
    tiles_x: usize,
    visible: Vec<bool>,
}

fn prepare(cloud: &GaussianCloud, cam: &Camera, colors: Option<&[Vector3<f64>]>) -> Result<Prepared> {
    cam.validate()?;
    cloud.validate()?;
    let mut projected: Vec<Splat2D> = cloud
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, i, cam, cloud.sh_degree))
        .collect();
    if let Some(colors) = colors {
        if colors.len() != cloud.len() {
            return Err(Error::Shape(format!(
                "{} colors for {} gaussians",
                colors.len(),
                cloud.len()
            )));
        }
        for s in &mut projected {
            s.color = colors[s.source_index];
        }
    }
    let splats = projected;
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        let (a, b) = (&splats[a], &splats[b]);
        a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index))
    });
    let splats: Vec<Splat2D> = order.into_iter().map(|k| splats[k].clone()).collect();

    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    let mut visible = vec![false; cloud.len()];
    for (k, s) in splats.iter().enumerate() {
        visible[s.source_index] = true;
        let [x0, x1, y0, y1] = s.rect;
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    let lanes = tiles
        .iter()
        .map(|list| list.iter().map(|&k| Lane::new(&splats[k as usize])).collect())
        .collect();
    Ok(Prepared {
        splats,
        tiles,
        lanes,
        tiles_x,
        visible,
    })
}

#[derive(Clone, Copy)]
struct Contribution {
    /// Position in the tile list.
    slot: usize,
    alpha: f64,
    /// `o * G` before clamping.
    raw_alpha: f64,
    t_before: f64,
}

#[inline]
fn pixel_center(x: usize, y: usize) -> Vector2<f64> {
    Vector2::new(x as f64 + 0.5, y as f64 + 0.5)
}

/// Slots of a tile list whose footprint rows include one pixel row.
struct RowFilter {
    y: usize,
    slots: Vec<u32>,
}

impl RowFilter {
    fn new() -> Self {
        Self {
            y: usize::MAX,
            slots: Vec::new(),
        }
    }

    fn select(&mut self, lanes: &[Lane], y: usize) {
        if self.y == y {
            return;
        }
        self.y = y;
        let yi = y as u32;
        self.slots.clear();
        self.slots.extend(
            lanes
                .iter()
                .enumerate()
                .filter(|(_, s)| yi >= s.rect[2] && yi <= s.rect[3])
                .map(|(k, _)| k as u32),
        );
    }
}

/// Walks the tile list for one pixel applying the skip/stop rules; returns the
/// final transmittance.
#[inline]
fn walk_pixel(lanes: &[Lane], rows: &mut RowFilter, x: usize, y: usize, out: &mut Vec<Contribution>) -> f64 {
    rows.select(lanes, y);
    out.clear();
    let mut t = 1.0;
    let xi = x as u32;
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    for &slot in &rows.slots {
        let slot = slot as usize;
        let s = &lanes[slot];
        // Outside the footprint rectangle alpha is already below ALPHA_MIN.
        if xi < s.rect[0] || xi > s.rect[1] {
            continue;
        }
        let dx = px - s.mx;
        let dy = py - s.my;
        let power = -0.5 * (s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy);
        if power > 0.0 || power < s.min_power {
            continue;
        }
        let raw_alpha = s.opacity * power.exp();
        let alpha = raw_alpha.min(ALPHA_MAX);
        if alpha < ALPHA_MIN {
            continue;
        }
        let next_t = t * (1.0 - alpha);
        if next_t < T_STOP {
            break;
        }
        out.push(Contribution {
            slot,
            alpha,
            raw_alpha,
            t_before: t,
        });
        t = next_t;
    }
    t
}

fn tile_pixels(tile: usize, tiles_x: usize, cam: &Camera) -> impl Iterator<Item = (usize, usize)> {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    let x1 = (x0 + TILE_SIZE).min(cam.width);
    let y1 = (y0 + TILE_SIZE).min(cam.height);
    (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
}

/// Contributors of every pixel of one tile, in `tile_pixels` order.
struct TileWalk {
    contribs: Vec<Contribution>,
    /// `contribs[offsets[i]..offsets[i + 1]]` belong to pixel `i` of the tile.
    offsets: Vec<u32>,
    t_final: Vec<f64>,
}

impl TileWalk {
    fn pixel(&self, i: usize) -> &[Contribution] {
        &self.contribs[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }
}

fn walk_tiles(prep: &Prepared, cam: &Camera) -> Vec<TileWalk> {
    (0..prep.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let mut walk = TileWalk {
                contribs: Vec::new(),
                offsets: vec![0],
                t_final: Vec::new(),
            };
            let mut contrib = Vec::new();
            let mut rows = RowFilter::new();
            for (x, y) in tile_pixels(tile, prep.tiles_x, cam) {
                let t = walk_pixel(&prep.lanes[tile], &mut rows, x, y, &mut contrib);
                walk.contribs.extend_from_slice(&contrib);
                walk.offsets.push(walk.contribs.len() as u32);
                walk.t_final.push(t);
            }
            walk
        })
        .collect()
}

fn composite(prep: &Prepared, walks: &[TileWalk], cam: &Camera, background: Vector3<f64>) -> RenderOutput {
    let (w, h) = (cam.width, cam.height);
    let mut out = RenderOutput {
        color: Image::zeros(w, h, 3),
        depth: Image::zeros(w, h, 1),
        accum_alpha: Image::zeros(w, h, 1),
        transmittance: Image::zeros(w, h, 1),
        n_contrib: vec![0; w * h],
        visible: prep.visible.clone(),
    };
    for (tile, walk) in walks.iter().enumerate() {
        let list = &prep.tiles[tile];
        for (i, (x, y)) in tile_pixels(tile, prep.tiles_x, cam).enumerate() {
            let contrib = walk.pixel(i);
            let t = walk.t_final[i];
            let mut color = Vector3::zeros();
            let mut depth = 0.0;
            let mut weight = 0.0;
            for c in contrib {
                let s = &prep.splats[list[c.slot] as usize];
                let wgt = c.alpha * c.t_before;
                color += s.color * wgt;
                depth += s.depth * wgt;
                weight += wgt;
            }
            let color = color + background * t;
            for c in 0..3 {
                out.color.set(x, y, c, color[c]);
            }
            out.depth.set(x, y, 0, depth);
            out.accum_alpha.set(x, y, 0, weight);
            out.transmittance.set(x, y, 0, t);
            out.n_contrib[y * w + x] = contrib.len() as u32;
        }
    }
    out
}

fn render_prepared(prep: &Prepared, cam: &Camera, background: Vector3<f64>) -> RenderOutput {
    composite(prep, &walk_tiles(prep, cam), cam, background)
}

/// Renders color, depth and coverage of `cloud` seen from `cam`.
pub fn render(cloud: &GaussianCloud, cam: &Camera) -> Result<RenderOutput> {
    let prep = prepare(cloud, cam, None)?;
    Ok(render_prepared(&prep, cam, cloud.background))
}

/// Same as [`render`] with the view-dependent colors replaced by `colors`
/// (indexed like the cloud).
pub fn render_with_colors(cloud: &GaussianCloud, cam: &Camera, colors: &[Vector3<f64>]) -> Result<RenderOutput> {
    let prep = prepare(cloud, cam, Some(colors))?;
    Ok(render_prepared(&prep, cam, cloud.background))
}

/// Cloud indices composited into each pixel, front to back (row-major pixels).
pub fn pixel_contributors(cloud: &GaussianCloud, cam: &Camera) -> Result<Vec<Vec<usize>>> {
    let prep = prepare(cloud, cam, None)?;
    let mut out = vec![Vec::new(); cam.pixel_count()];
    for (tile, walk) in walk_tiles(&prep, cam).iter().enumerate() {
        let list = &prep.tiles[tile];
        for (i, (x, y)) in tile_pixels(tile, prep.tiles_x, cam).enumerate() {
            out[y * cam.width + x] = walk
                .pixel(i)
                .iter()
                .map(|c| prep.splats[list[c.slot] as usize].source_index)
                .collect();
        }
    }
    Ok(out)
}

/// Gradient of `Σ upstream·color + Σ upstream_depth·depth` with respect to
/// every Gaussian parameter of `cloud`.
pub fn render_backward(
    cloud: &GaussianCloud,
    cam: &Camera,
    upstream: &Image,
    upstream_depth: Option<&Image>,
) -> Result<GradBundle> {
    check_upstream(cam, upstream, upstream_depth)?;
    let prep = prepare(cloud, cam, None)?;
    let walks = walk_tiles(&prep, cam);
    backward_prepared(&prep, &walks, cloud, cam, upstream, upstream_depth)
}

fn check_upstream(cam: &Camera, upstream: &Image, upstream_depth: Option<&Image>) -> Result<()> {
    if upstream.width() != cam.width || upstream.height() != cam.height || upstream.channels() != 3 {
        return Err(Error::Shape(format!(
            "color upstream is {}x{}x{}, viewport is {}x{}x3",
            upstream.width(),
            upstream.height(),
            upstream.channels(),
            cam.width,
            cam.height
        )));
    }
    if let Some(d) = upstream_depth {
        if d.width() != cam.width || d.height() != cam.height || d.channels() != 1 {
            return Err(Error::Shape(format!(
                "depth upstream is {}x{}x{}, viewport is {}x{}x1",
                d.width(),
                d.height(),
                d.channels(),
                cam.width,
                cam.height
            )));
        }
    }
    Ok(())
}

/// A forward render that keeps its projected splats and tile lists for the
/// backward pass.
pub struct Rasterized {
    prep: Prepared,
    walks: Vec<TileWalk>,
    pub output: RenderOutput,
}

/// [`render`] retaining the state [`Rasterized::backward`] reuses.
pub fn rasterize(cloud: &GaussianCloud, cam: &Camera) -> Result<Rasterized> {
    let prep = prepare(cloud, cam, None)?;
    let walks = walk_tiles(&prep, cam);
    let output = composite(&prep, &walks, cam, cloud.background);
    Ok(Rasterized { prep, walks, output })
}

impl Rasterized {
    /// Same as [`render_backward`] for the unchanged `cloud` and `cam` this
    /// render was made from.
    pub fn backward(
        &self,
        cloud: &GaussianCloud,
        cam: &Camera,
        upstream: &Image,
        upstream_depth: Option<&Image>,
    ) -> Result<GradBundle> {
        if cloud.len() != self.output.visible.len() {
            return Err(Error::Shape(format!(
                "render was made from {} gaussians, cloud has {}",
                self.output.visible.len(),
                cloud.len()
            )));
        }
        check_upstream(cam, upstream, upstream_depth)?;
        backward_prepared(&self.prep, &self.walks, cloud, cam, upstream, upstream_depth)
    }
}

fn backward_prepared(
    prep: &Prepared,
    walks: &[TileWalk],
    cloud: &GaussianCloud,
    cam: &Camera,
    upstream: &Image,
    upstream_depth: Option<&Image>,
) -> Result<GradBundle> {
    let bg = cloud.background;

    let tile_grads: Vec<Vec<ScreenGrad>> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let list = &prep.tiles[tile];
            let mut local = vec![ScreenGrad::default(); list.len()];
            let walk = &walks[tile];
            for (i, (x, y)) in tile_pixels(tile, prep.tiles_x, cam).enumerate() {
                let p = pixel_center(x, y);
                let contrib = walk.pixel(i);
                let t_final = walk.t_final[i];
                let g_color = Vector3::new(upstream.get(x, y, 0), upstream.get(x, y, 1), upstream.get(x, y, 2));
                let g_depth = upstream_depth.map_or(0.0, |d| d.get(x, y, 0));
                if g_color == Vector3::zeros() && g_depth == 0.0 {
                    continue;
                }
                // Light arriving from behind each contributor, in absolute terms.
                let mut behind_color = bg * t_final;
                let mut behind_depth = 0.0;
                for c in contrib.iter().rev() {
                    let s = &prep.splats[list[c.slot] as usize];
                    let w = c.alpha * c.t_before;
                    let sg = &mut local[c.slot];
                    sg.color += g_color * w;
                    sg.depth += g_depth * w;

                    let d_alpha = g_color.dot(&(s.color * c.t_before - behind_color / (1.0 - c.alpha)))
                        + g_depth * (s.depth * c.t_before - behind_depth / (1.0 - c.alpha));
                    behind_color += s.color * w;
                    behind_depth += s.depth * w;

                    if c.raw_alpha >= ALPHA_MAX {
                        continue;
                    }
                    let gaussian = c.raw_alpha / s.opacity;
                    sg.opacity += d_alpha * gaussian;
                    let d_power = d_alpha * c.alpha;
                    let d = p - s.mean2d;
                    sg.mean2d.x += d_power * (s.conic[(0, 0)] * d.x + s.conic[(0, 1)] * d.y);
                    sg.mean2d.y += d_power * (s.conic[(0, 1)] * d.x + s.conic[(1, 1)] * d.y);
                    sg.conic.x += d_power * (-0.5 * d.x * d.x);
                    sg.conic.y += d_power * (-d.x * d.y);
                    sg.conic.z += d_power * (-0.5 * d.y * d.y);
                }
            }
            local
        })
        .collect();

    let mut screen = vec![ScreenGrad::default(); prep.splats.len()];
    for (list, local) in prep.tiles.iter().zip(&tile_grads) {
        for (&k, g) in list.iter().zip(local) {
            screen[k as usize].add(g);
        }
    }

    let n = cloud.len();
    let sh_count = crate::scene::sh_coeff_count(cloud.sh_degree);
    let mut bundle = GradBundle::zeros(n, sh_count);
    let per_splat: Vec<GaussianGrad> = prep
        .splats
        .par_iter()
        .zip(&screen)
        .map(|(s, sg)| project_backward(&cloud.gaussians[s.source_index], cam, cloud.sh_degree, sg))
        .collect();
    let half_w = 0.5 * cam.width as f64;
    let half_h = 0.5 * cam.height as f64;
    for ((s, sg), g) in prep.splats.iter().zip(&screen).zip(per_splat) {
        let i = s.source_index;
        bundle.grads[i] = g;
        bundle.visible[i] = true;
        bundle.mean2d_grad_norm[i] = Vector2::new(sg.mean2d.x * half_w, sg.mean2d.y * half_h).norm();
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{logit, rgb_to_sh_dc, Gaussian3D};
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    fn camera(w: usize, h: usize) -> Camera {
        Camera::new(
            40.0,
            40.0,
            w as f64 / 2.0,
            h as f64 / 2.0,
            w,
            h,
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap()
    }

    /// A tiny Gaussian centered on pixel (8, 8) with opacity logit chosen so
    /// its alpha at that pixel center is `alpha`.
    fn point_splat(cam: &Camera, z: f64, alpha: f64, rgb: Vector3<f64>) -> Gaussian3D {
        let x = (8.5 - cam.cx) * z / cam.fx;
        let y = (8.5 - cam.cy) * z / cam.fy;
        let mut g = Gaussian3D::isotropic(Vector3::new(x, y, z), 1e-6, 0.5, Vector3::zeros(), 0);
        g.sh[0] = rgb_to_sh_dc(rgb);
        g.opacity_logit = logit(alpha);
        g
    }

    #[test]
    fn empty_cloud_renders_background() {
        let cam = camera(20, 12);
        let cloud = GaussianCloud::new(0, Vector3::zeros()).unwrap();
        let out = render(&cloud, &cam).unwrap();
        assert!(out.color.data().iter().all(|&v| v == 0.0));
        assert!(out.accum_alpha.data().iter().all(|&v| v == 0.0));
        assert!(out.transmittance.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_splat_at_pixel_center() {
        let cam = camera(16, 16);
        let bg = Vector3::new(0.2, 0.4, 0.6);
        let g = point_splat(&cam, 2.0, 0.99, Vector3::new(1.0, 0.0, 0.0));
        let cloud = GaussianCloud::with_gaussians(vec![g], 0, bg).unwrap();
        let out = render(&cloud, &cam).unwrap();
        let expected = Vector3::new(0.99, 0.0, 0.0) + bg * 0.01;
        for c in 0..3 {
            assert_relative_eq!(out.color.get(8, 8, c), expected[c], epsilon = 1e-9);
        }
        assert_relative_eq!(out.depth.get(8, 8, 0), 0.99 * 2.0, epsilon = 1e-9);
    }

    #[test]
    fn two_splats_composite_front_to_back() {
        let cam = camera(16, 16);
        let front = point_splat(&cam, 1.0, 0.5, Vector3::new(1.0, 0.0, 0.0));
        let back = point_splat(&cam, 3.0, 0.5, Vector3::new(0.0, 0.0, 1.0));
        // Stored back-first to exercise the depth sort.
        let cloud = GaussianCloud::with_gaussians(vec![back, front], 0, Vector3::zeros()).unwrap();
        let out = render(&cloud, &cam).unwrap();
        // Oracle: C = c1 a1 + c2 a2 (1 - a1), D likewise with z.
        let (a1, a2) = (0.5, 0.5);
        let color = Vector3::new(1.0, 0.0, 0.0) * a1 + Vector3::new(0.0, 0.0, 1.0) * a2 * (1.0 - a1);
        for c in 0..3 {
            assert_relative_eq!(out.color.get(8, 8, c), color[c], epsilon = 1e-9);
        }
        assert_relative_eq!(out.depth.get(8, 8, 0), 1.25, epsilon = 1e-9);
        assert_relative_eq!(out.accum_alpha.get(8, 8, 0), 0.75, epsilon = 1e-9);
        assert_eq!(out.n_contrib[8 * 16 + 8], 2);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cam = camera(16, 16);
        let g = point_splat(&cam, 2.0, 0.7, Vector3::new(0.3, 0.6, 0.2));
        let cloud = GaussianCloud::with_gaussians(vec![g], 0, Vector3::zeros()).unwrap();
        let b = render_backward(&cloud, &cam, &Image::zeros(16, 16, 3), Some(&Image::zeros(16, 16, 1))).unwrap();
        assert_eq!(b.grads[0], GaussianGrad::zeros(1));
        assert_eq!(b.mean2d_grad_norm[0], 0.0);
    }

    #[test]
    fn culled_gaussian_gets_zero_gradient() {
        let cam = camera(16, 16);
        let seen = point_splat(&cam, 2.0, 0.7, Vector3::new(0.3, 0.6, 0.2));
        let mut hidden = seen.clone();
        hidden.mu.z = -1.0;
        let cloud = GaussianCloud::with_gaussians(vec![seen, hidden], 0, Vector3::zeros()).unwrap();
        let b = render_backward(&cloud, &cam, &Image::filled(16, 16, 3, 1.0), None).unwrap();
        assert!(b.visible[0] && !b.visible[1]);
        assert_eq!(b.grads[1], GaussianGrad::zeros(1));
    }

    #[test]
    fn upstream_shape_is_checked() {
        let cam = camera(16, 16);
        let cloud = GaussianCloud::new(0, Vector3::zeros()).unwrap();
        assert!(matches!(
            render_backward(&cloud, &cam, &Image::zeros(15, 16, 3), None),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            render_backward(&cloud, &cam, &Image::zeros(16, 16, 3), Some(&Image::zeros(16, 16, 3))),
            Err(Error::Shape(_))
        ));
    }
}
