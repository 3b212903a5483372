use image::{DynamicImage, RgbImage};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::{EncoderConfig, EncoderError, RegionSource};
use crate::plot_synth::{RegionBox, RegionLabel};
use crate::tensor::{ConvGeometry, Graph, Init, ParamGroup, ParamId, ParamStore, Scalar, Var};

/// Planar RGB raster scaled to `[0, 1]`, laid out `[3, height*width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Planar {
    pub width: usize,
    pub height: usize,
    pub data: Array2<f32>,
}

impl Planar {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = Array2::zeros((3, w * h));
        for (x, y, px) in img.enumerate_pixels() {
            let i = y as usize * w + x as usize;
            for c in 0..3 {
                data[[c, i]] = px.0[c] as f32 / 255.0;
            }
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }

    /// Accepts only 8-bit RGB rasters.
    pub fn from_dynamic(img: &DynamicImage) -> Result<Self, EncoderError> {
        match img {
            DynamicImage::ImageRgb8(rgb) => Ok(Self::from_rgb(rgb)),
            other => Err(EncoderError::NonRGBInput(format!("{:?}", other.color()))),
        }
    }

    /// Bilinear resample of the pixel rectangle `[x0,x1) × [y0,y1)` onto an
    /// `out_w × out_h` grid (pixel-centre aligned, clamped to the crop).
    pub fn resample(&self, (x0, y0, x1, y1): (u32, u32, u32, u32), out_w: usize, out_h: usize) -> Array2<f32> {
        let mut out = Array2::zeros((3, out_w * out_h));
        let (bx, by) = (x0 as f32, y0 as f32);
        let (bw, bh) = ((x1 - x0) as f32, (y1 - y0) as f32);
        let (sx, sy) = (bw / out_w as f32, bh / out_h as f32);
        let (xmax, ymax) = ((x1 - 1) as f32, (y1 - 1) as f32);
        let w = self.width;
        for oy in 0..out_h {
            let fy = (by + (oy as f32 + 0.5) * sy - 0.5).clamp(by, ymax);
            let y_lo = fy.floor() as usize;
            let y_hi = (y_lo + 1).min(y1 as usize - 1);
            let ty = fy - y_lo as f32;
            for ox in 0..out_w {
                let fx = (bx + (ox as f32 + 0.5) * sx - 0.5).clamp(bx, xmax);
                let x_lo = fx.floor() as usize;
                let x_hi = (x_lo + 1).min(x1 as usize - 1);
                let tx = fx - x_lo as f32;
                let o = oy * out_w + ox;
                for c in 0..3 {
                    let row = self.data.row(c);
                    let top = row[y_lo * w + x_lo] * (1.0 - tx) + row[y_lo * w + x_hi] * tx;
                    let bot = row[y_hi * w + x_lo] * (1.0 - tx) + row[y_hi * w + x_hi] * tx;
                    out[[c, o]] = top * (1.0 - ty) + bot * ty;
                }
            }
        }
        out
    }
}

/// Region crops ready for the trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRegions {
    pub boxes: Vec<RegionBox>,
    /// `[3, R*patch*patch]`.
    pub patches: Array2<f32>,
    /// `[R, 4]` box corners divided by image width/height.
    pub geometry: Array2<f32>,
    pub patch_size: usize,
}

impl PreparedRegions {
    /// No regions; encoding it yields [`EncoderError::EmptyBoxList`].
    pub fn empty(patch_size: usize) -> Self {
        Self {
            boxes: Vec::new(),
            patches: Array2::zeros((3, 0)),
            geometry: Array2::zeros((0, 4)),
            patch_size,
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Reorders (or subsets) regions; `order[i]` is the source index of new row `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let pp = self.patch_size * self.patch_size;
        let mut patches = Array2::zeros((3, order.len() * pp));
        let mut geometry = Array2::zeros((order.len(), 4));
        for (dst, &src) in order.iter().enumerate() {
            patches
                .slice_mut(ndarray::s![.., dst * pp..(dst + 1) * pp])
                .assign(&self.patches.slice(ndarray::s![.., src * pp..(src + 1) * pp]));
            geometry.row_mut(dst).assign(&self.geometry.row(src));
        }
        Self {
            boxes: order.iter().map(|&i| self.boxes[i]).collect(),
            patches,
            geometry,
            patch_size: self.patch_size,
        }
    }
}

/// An image resampled for the trunk, plus its region crops.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedImage {
    /// `[3, image_height*image_width]`.
    pub whole: Array2<f32>,
    pub regions: PreparedRegions,
}

/// `g × g` uniform cells covering the image.
pub fn grid_boxes(width: u32, height: u32, g: usize) -> Vec<RegionBox> {
    let g = g.max(1) as u32;
    let mut out = Vec::new();
    for r in 0..g {
        for c in 0..g {
            let (x0, x1) = (c * width / g, (c + 1) * width / g);
            let (y0, y1) = (r * height / g, (r + 1) * height / g);
            if x1 > x0 && y1 > y0 {
                out.push(RegionBox {
                    label: RegionLabel::GridCell,
                    x0,
                    y0,
                    x1,
                    y1,
                    series_index: None,
                    category_index: None,
                });
            }
        }
    }
    out
}

/// Picks at most `max` boxes, keeping the largest areas (ties by position)
/// while preserving input order among the survivors.
pub fn select_regions(boxes: &[RegionBox], max: usize) -> Vec<RegionBox> {
    if boxes.len() <= max {
        return boxes.to_vec();
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].area().cmp(&boxes[a].area()).then(a.cmp(&b)));
    let mut keep = order[..max].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| boxes[i]).collect()
}

/// Crops and resizes `boxes` to square patches.
pub fn prepare_regions(image: &Planar, boxes: &[RegionBox], patch: usize) -> Result<PreparedRegions, EncoderError> {
    if boxes.is_empty() {
        return Err(EncoderError::EmptyBoxList);
    }
    let (w, h) = (image.width as u32, image.height as u32);
    let pp = patch * patch;
    let mut patches = Array2::zeros((3, boxes.len() * pp));
    let mut geometry = Array2::zeros((boxes.len(), 4));
    for (i, b) in boxes.iter().enumerate() {
        if !b.is_within(w, h) {
            return Err(EncoderError::InvalidBox {
                index: i,
                width: w,
                height: h,
            });
        }
        let crop = image.resample((b.x0, b.y0, b.x1, b.y1), patch, patch);
        patches.slice_mut(ndarray::s![.., i * pp..(i + 1) * pp]).assign(&crop);
        geometry[[i, 0]] = b.x0 as f32 / w as f32;
        geometry[[i, 1]] = b.y0 as f32 / h as f32;
        geometry[[i, 2]] = b.x1 as f32 / w as f32;
        geometry[[i, 3]] = b.y1 as f32 / h as f32;
    }
    Ok(PreparedRegions {
        boxes: boxes.to_vec(),
        patches,
        geometry,
        patch_size: patch,
    })
}

/// Full preprocessing: resamples the whole image and crops its regions,
/// applying the configured region source, truncation and grid fallback.
/// Without boxes (and without fallback) the region set is left empty.
pub fn prepare_image(image: &Planar, boxes: &[RegionBox], cfg: &EncoderConfig) -> Result<PreparedImage, EncoderError> {
    let (w, h) = (image.width as u32, image.height as u32);
    let whole = image.resample((0, 0, w, h), cfg.image_width, cfg.image_height);
    let chosen = match cfg.region_source {
        RegionSource::Grid => grid_boxes(w, h, cfg.grid_size),
        RegionSource::GroundTruth if boxes.is_empty() && cfg.grid_fallback => grid_boxes(w, h, cfg.grid_size),
        RegionSource::GroundTruth => boxes.to_vec(),
    };
    let chosen = select_regions(&chosen, cfg.max_regions);
    let regions = if chosen.is_empty() {
        PreparedRegions::empty(cfg.patch_size)
    } else {
        prepare_regions(image, &chosen, cfg.patch_size)?
    };
    Ok(PreparedImage { whole, regions })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Conv {
    w: ParamId,
    b: ParamId,
    in_c: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
}

impl Conv {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        (in_c, out_c, kernel, stride): (usize, usize, usize, usize),
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            ParamGroup::Trunk,
            init.build(out_c, in_c * kernel * kernel, rng),
        );
        let b = store.add(format!("{name}.b"), ParamGroup::Trunk, Array2::zeros((out_c, 1)));
        Self {
            w,
            b,
            in_c,
            out_c,
            kernel,
            stride,
        }
    }

    fn apply<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        (n, h, w): (usize, usize, usize),
    ) -> (Var, (usize, usize, usize)) {
        let geom = ConvGeometry {
            in_channels: self.in_c,
            images: n,
            height: h,
            width: w,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.kernel / 2,
        };
        let wv = g.param(self.w);
        let bv = g.param(self.b);
        (g.conv2d(x, wv, bv, geom), (n, geom.out_height(), geom.out_width()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ResidualBlock {
    conv1: Conv,
    conv2: Conv,
    shortcut: Option<Conv>,
}

/// Small residual CNN: stages of residual blocks (the first block of each
/// stage downsamples by 2) followed by global average pooling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualTrunk {
    blocks: Vec<ResidualBlock>,
    pub out_channels: usize,
}

impl ResidualTrunk {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        channels: &[usize],
        blocks_per_stage: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut blocks = Vec::new();
        let mut in_c = 3;
        for (s, &c) in channels.iter().enumerate() {
            for bi in 0..blocks_per_stage.max(1) {
                let stride = if bi == 0 { 2 } else { 1 };
                let name = format!("trunk.s{s}.b{bi}");
                let fan1 = in_c * 9;
                let conv1 = Conv::new(
                    store,
                    &format!("{name}.conv1"),
                    (in_c, c, 3, stride),
                    Init::Uniform((6.0 / fan1 as f64).sqrt()),
                    rng,
                );
                let conv2 = Conv::new(store, &format!("{name}.conv2"), (c, c, 3, 1), Init::FanIn(c * 9), rng);
                let shortcut = (stride != 1 || in_c != c).then(|| {
                    Conv::new(
                        store,
                        &format!("{name}.shortcut"),
                        (in_c, c, 1, stride),
                        Init::FanIn(in_c),
                        rng,
                    )
                });
                blocks.push(ResidualBlock { conv1, conv2, shortcut });
                in_c = c;
            }
        }
        Self {
            blocks,
            out_channels: in_c,
        }
    }

    /// `x` is `[3, n*h*w]`; returns pooled features `[n, out_channels]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, n: usize, h: usize, w: usize) -> Var {
        let mut x = x;
        let mut dims = (n, h, w);
        for block in &self.blocks {
            let (a, d1) = block.conv1.apply(g, x, dims);
            let a = g.gelu(a);
            let (a, d2) = block.conv2.apply(g, a, d1);
            let skip = match &block.shortcut {
                Some(sc) => sc.apply(g, x, dims).0,
                None => x,
            };
            let sum = g.add(a, skip);
            x = g.gelu(sum);
            dims = d2;
        }
        g.avg_pool(x, n)
    }
}

/// Shared CNN trunk plus linear projection to `D_img`. Both whole-image
/// and region encodings go through the same parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageEncoder {
    pub trunk: ResidualTrunk,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub image_width: usize,
    pub image_height: usize,
    pub patch_size: usize,
    pub dim: usize,
}

impl ImageEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let trunk = ResidualTrunk::new(store, &cfg.trunk_channels, cfg.blocks_per_stage, rng);
        let c = trunk.out_channels;
        let proj_w = store.add(
            "image_proj.w",
            ParamGroup::ImageProjection,
            Init::FanIn(c).build(c, cfg.image_dim, rng),
        );
        let proj_b = store.add(
            "image_proj.b",
            ParamGroup::ImageProjection,
            Init::FanIn(c).build(1, cfg.image_dim, rng),
        );
        Self {
            trunk,
            proj_w,
            proj_b,
            image_width: cfg.image_width,
            image_height: cfg.image_height,
            patch_size: cfg.patch_size,
            dim: cfg.image_dim,
        }
    }

    /// Encodes `n` stacked rasters of size `h × w` to `[n, dim]`.
    pub fn encode_stack<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        stack: &Array2<f32>,
        n: usize,
        h: usize,
        w: usize,
    ) -> Var {
        let x = g.input(stack.mapv(T::of_f32));
        let pooled = self.trunk.forward(g, x, n, h, w);
        self.project(g, pooled)
    }

    /// Applies the shared projection to pooled trunk features.
    pub fn project<T: Scalar>(&self, g: &mut Graph<'_, T>, pooled: Var) -> Var {
        let pw = g.param(self.proj_w);
        let pb = g.param(self.proj_b);
        g.linear(pooled, pw, pb)
    }

    /// Whole-image encodings `[n, dim]` for prepared images.
    pub fn encode_images<T: Scalar>(&self, g: &mut Graph<'_, T>, images: &[&PreparedImage]) -> Var {
        let hw = self.image_width * self.image_height;
        let mut stack = Array2::zeros((3, images.len() * hw));
        for (i, img) in images.iter().enumerate() {
            stack
                .slice_mut(ndarray::s![.., i * hw..(i + 1) * hw])
                .assign(&img.whole);
        }
        self.encode_stack(g, &stack, images.len(), self.image_height, self.image_width)
    }

    /// Region encodings for several images at once, concatenated by rows
    /// in input order.
    pub fn encode_region_sets<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        sets: &[&PreparedRegions],
    ) -> Result<Var, EncoderError> {
        let p = self.patch_size;
        let mut total = 0;
        for s in sets {
            if s.is_empty() {
                return Err(EncoderError::EmptyBoxList);
            }
            if s.patch_size != p {
                return Err(EncoderError::DimensionMismatch {
                    what: "region patch size".into(),
                    expected: p,
                    actual: s.patch_size,
                });
            }
            total += s.len();
        }
        let pp = p * p;
        let mut stack = Array2::zeros((3, total * pp));
        let mut at = 0;
        for s in sets {
            stack
                .slice_mut(ndarray::s![.., at * pp..(at + s.len()) * pp])
                .assign(&s.patches);
            at += s.len();
        }
        Ok(self.encode_stack(g, &stack, total, p, p))
    }
}
