use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::font::{self, ADVANCE, GLYPH_H};
use super::spec::{PlotKind, PlotSpec};
use super::SynthError;

pub const MIN_DIMENSION: u32 = 64;
pub const DEFAULT_WIDTH: u32 = 448;
pub const DEFAULT_HEIGHT: u32 = 336;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionLabel {
    Title,
    XAxisLabel,
    YAxisLabel,
    LegendEntry,
    Bar,
    LineSegment,
    Dot,
    XTick,
    YTick,
    /// Uniform grid cell used when no element boxes are available.
    GridCell,
}

/// Pixel-space bounding box of one drawn element. `x1`/`y1` are exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionBox {
    pub label: RegionLabel,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub series_index: Option<usize>,
    pub category_index: Option<usize>,
}

impl RegionBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn is_within(&self, width: u32, height: u32) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height
    }

    /// Whole-image box.
    pub fn full(width: u32, height: u32) -> Self {
        Self {
            label: RegionLabel::GridCell,
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
            series_index: None,
            category_index: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: RgbImage,
    pub boxes: Vec<RegionBox>,
}

impl Rendered {
    pub fn count(&self, label: RegionLabel) -> usize {
        self.boxes.iter().filter(|b| b.label == label).count()
    }
}

const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn w(&self) -> i64 {
        self.img.width() as i64
    }

    fn h(&self) -> i64 {
        self.img.height() as i64
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && x < self.w() && y < self.h() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for y in y0.max(0)..y1.min(self.h()) {
            for x in x0.max(0)..x1.min(self.w()) {
                self.img.put_pixel(x as u32, y as u32, c);
            }
        }
    }

    fn glyph(&mut self, x: i64, y: i64, ch: char, scale: i64, c: Rgb<u8>) {
        for (row, bits) in font::glyph(ch).iter().enumerate() {
            for col in 0..font::GLYPH_W as i64 {
                if bits & (1 << (4 - col)) != 0 {
                    let px = x + col * scale;
                    let py = y + row as i64 * scale;
                    self.fill_rect(px, py, px + scale, py + scale, c);
                }
            }
        }
    }

    /// Draws horizontal text truncated to `max_width`; returns the clipped
    /// bounding box `(x0, y0, x1, y1)`.
    fn text(&mut self, x: i64, y: i64, text: &str, scale: u32, max_width: i64, c: Rgb<u8>) -> (i64, i64, i64, i64) {
        let n = fit_chars(text, scale, max_width);
        let shown: String = text.chars().take(n).collect();
        for (i, ch) in shown.chars().enumerate() {
            self.glyph(x + (i as u32 * ADVANCE * scale) as i64, y, ch, scale as i64, c);
        }
        (
            x,
            y,
            x + font::text_width(n, scale) as i64,
            y + (GLYPH_H * scale) as i64,
        )
    }

    /// Characters stacked top to bottom, used for the y-axis label.
    fn vertical_text(&mut self, x: i64, y: i64, text: &str, max_height: i64, c: Rgb<u8>) -> (i64, i64, i64, i64) {
        let pitch = GLYPH_H as i64 + 1;
        let n = ((max_height + 1) / pitch).max(1).min(text.chars().count() as i64);
        for (i, ch) in text.chars().take(n as usize).enumerate() {
            self.glyph(x, y + i as i64 * pitch, ch, 1, c);
        }
        (x, y, x + font::GLYPH_W as i64, y + n * pitch - 1)
    }

    fn thick_line(&mut self, (ax, ay): (f64, f64), (bx, by): (f64, f64), radius: i64, c: Rgb<u8>) {
        let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
        let steps = (len * 2.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let x = (ax + (bx - ax) * t).round() as i64;
            let y = (ay + (by - ay) * t).round() as i64;
            self.fill_rect(x - radius, y - radius, x + radius + 1, y + radius + 1, c);
        }
    }

    fn disc(&mut self, cx: i64, cy: i64, r: i64, c: Rgb<u8>) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(cx + dx, cy + dy, c);
                }
            }
        }
    }
}

fn fit_chars(text: &str, scale: u32, max_width: i64) -> usize {
    let total = text.chars().count();
    let per = (ADVANCE * scale) as i64;
    let n = ((max_width + scale as i64) / per).max(1) as usize;
    n.min(total).max(1.min(total))
}

/// Axis maximum and tick step covering `max_value` with at most five
/// intervals.
pub fn nice_axis(max_value: f64) -> (f64, f64) {
    let m = if max_value > 0.0 { max_value } else { 1.0 };
    let raw = m / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|f| f * mag)
        .find(|s| m / s <= 5.0 + 1e-9)
        .unwrap_or(10.0 * mag);
    ((m / step).ceil() * step, step)
}

fn fmt_tick(v: f64, step: f64) -> String {
    if step >= 1.0 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.1}")
    }
}

/// Rasterises `spec` and emits one region box per drawn element.
pub fn render_plot(spec: &PlotSpec, width: u32, height: u32) -> Result<Rendered, SynthError> {
    let too_small = || SynthError::DimensionTooSmall {
        width,
        height,
        min: MIN_DIMENSION,
    };
    if width < MIN_DIMENSION || height < MIN_DIMENSION {
        return Err(too_small());
    }
    spec.validate()?;

    let (w, h) = (width as i64, height as i64);
    let n_cat = spec.n_categories();
    let n_series = spec.n_series();
    let glyph_h = GLYPH_H as i64;

    let title_scale: u32 = if width >= 320 { 2 } else { 1 };
    let title_top = 3;
    let plot_top = title_top + glyph_h * title_scale as i64 + 6;

    let max_legend_chars = spec.legend_labels.iter().map(|l| l.chars().count()).max().unwrap_or(1);
    let legend_w = (14 + font::text_width(max_legend_chars, 1) as i64).min(w / 4);

    let max_value = spec
        .series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .fold(0.0, f64::max);
    let (y_max, y_step) = nice_axis(max_value);
    let n_ticks = (y_max / y_step).round() as usize + 1;
    let tick_labels: Vec<String> = (0..n_ticks).map(|i| fmt_tick(i as f64 * y_step, y_step)).collect();
    let tick_w = tick_labels
        .iter()
        .map(|t| font::text_width(t.len(), 1) as i64)
        .max()
        .unwrap_or(6);

    let plot_left = 3 + font::GLYPH_W as i64 + 4 + tick_w + 4;
    let plot_right = w - legend_w - 6;
    let plot_bottom = h - (4 + glyph_h + 4 + glyph_h + 3);
    let plot_w = plot_right - plot_left;
    let plot_h = plot_bottom - plot_top;
    if plot_w < 2 * n_cat as i64 || plot_h < 16 {
        return Err(too_small());
    }

    let style = spec.style_seed;
    let palette_offset = (style % PALETTE.len() as u64) as usize;
    let background = if style & 0x10 != 0 {
        Rgb([248, 248, 244])
    } else {
        Rgb([255, 255, 255])
    };
    let gridlines = style & 0x20 != 0;
    let color = |s: usize| Rgb(PALETTE[(palette_offset + s) % PALETTE.len()]);

    let mut canvas = Canvas {
        img: RgbImage::from_pixel(width, height, background),
    };
    let mut boxes = Vec::new();
    let mut push = |label, (x0, y0, x1, y1): (i64, i64, i64, i64), series_index, category_index| {
        let x0 = x0.clamp(0, w - 1);
        let y0 = y0.clamp(0, h - 1);
        let x1 = x1.clamp(x0 + 1, w);
        let y1 = y1.clamp(y0 + 1, h);
        boxes.push(RegionBox {
            label,
            x0: x0 as u32,
            y0: y0 as u32,
            x1: x1 as u32,
            y1: y1 as u32,
            series_index,
            category_index,
        });
    };

    let y_of = |v: f64| plot_bottom as f64 - 1.0 - (v / y_max) * (plot_h as f64 - 1.0);

    // grid and axes
    for i in 0..n_ticks {
        let y = y_of(i as f64 * y_step).round() as i64;
        if gridlines && i > 0 {
            canvas.fill_rect(plot_left, y, plot_right, y + 1, GRID);
        }
        canvas.fill_rect(plot_left - 3, y, plot_left, y + 1, BLACK);
    }
    canvas.fill_rect(plot_left - 1, plot_top, plot_left, plot_bottom, BLACK);
    canvas.fill_rect(plot_left - 1, plot_bottom, plot_right, plot_bottom + 1, BLACK);

    let band = plot_w as f64 / n_cat as f64;
    let center = |c: usize| plot_left as f64 + band * (c as f64 + 0.5);

    let mut marks = Vec::new();
    match spec.kind {
        PlotKind::Bar => {
            let group = band * 0.8;
            let bar_w = group / n_series as f64;
            for (s, series) in spec.series.iter().enumerate() {
                for (c, &v) in series.values.iter().enumerate() {
                    let x0 = (plot_left as f64 + band * c as f64 + band * 0.1 + bar_w * s as f64).round() as i64;
                    let x1 = ((plot_left as f64 + band * c as f64 + band * 0.1 + bar_w * (s + 1) as f64).round()
                        as i64)
                        .max(x0 + 1);
                    let y1 = plot_bottom;
                    let y0 = (y_of(v).round() as i64).min(y1 - 1);
                    canvas.fill_rect(x0, y0, x1, y1, color(s));
                    marks.push((RegionLabel::Bar, (x0, y0, x1, y1), Some(s), Some(c)));
                }
            }
        }
        PlotKind::Line | PlotKind::Dotline => {
            let r = 1;
            for (s, series) in spec.series.iter().enumerate() {
                for c in 0..n_cat - 1 {
                    let a = (center(c), y_of(series.values[c]));
                    let b = (center(c + 1), y_of(series.values[c + 1]));
                    canvas.thick_line(a, b, r, color(s));
                    let x0 = a.0.min(b.0).round() as i64 - r - 1;
                    let x1 = a.0.max(b.0).round() as i64 + r + 2;
                    let y0 = a.1.min(b.1).round() as i64 - r - 1;
                    let y1 = a.1.max(b.1).round() as i64 + r + 2;
                    marks.push((RegionLabel::LineSegment, (x0, y0, x1, y1), Some(s), Some(c)));
                }
            }
            if spec.kind == PlotKind::Dotline {
                let dr = 3;
                for (s, series) in spec.series.iter().enumerate() {
                    for (c, &v) in series.values.iter().enumerate() {
                        let (cx, cy) = (center(c).round() as i64, y_of(v).round() as i64);
                        canvas.disc(cx, cy, dr, color(s));
                        marks.push((
                            RegionLabel::Dot,
                            (cx - dr, cy - dr, cx + dr + 1, cy + dr + 1),
                            Some(s),
                            Some(c),
                        ));
                    }
                }
            }
        }
    }

    let title_w = font::text_width(spec.title.chars().count(), title_scale) as i64;
    let title_x = ((w - title_w) / 2).max(2);
    let b = canvas.text(title_x, title_top, &spec.title, title_scale, w - 4, BLACK);
    push(RegionLabel::Title, b, None, None);

    let xl_w = font::text_width(spec.x_label.chars().count(), 1) as i64;
    let xl_y = h - 3 - glyph_h;
    let b = canvas.text(
        (plot_left + (plot_w - xl_w) / 2).max(1),
        xl_y,
        &spec.x_label,
        1,
        plot_w,
        BLACK,
    );
    push(RegionLabel::XAxisLabel, b, None, None);

    let yl_chars = spec.y_label.chars().count() as i64;
    let yl_h = (yl_chars * (glyph_h + 1) - 1).min(plot_h);
    let b = canvas.vertical_text(3, plot_top + (plot_h - yl_h) / 2, &spec.y_label, plot_h, BLACK);
    push(RegionLabel::YAxisLabel, b, None, None);

    for (s, label) in spec.legend_labels.iter().enumerate() {
        let x = plot_right + 6;
        let y = plot_top + s as i64 * (glyph_h + 5);
        canvas.fill_rect(x, y, x + 8, y + glyph_h, color(s));
        let (_, _, tx1, ty1) = canvas.text(x + 11, y, label, 1, w - x - 12, BLACK);
        push(RegionLabel::LegendEntry, (x, y, tx1.max(x + 8), ty1), Some(s), None);
    }

    for (c, cat) in spec.x_categories.iter().enumerate() {
        let n = fit_chars(cat, 1, band as i64 - 2);
        let tw = font::text_width(n, 1) as i64;
        let x = center(c).round() as i64 - tw / 2;
        let b = canvas.text(x, plot_bottom + 4, cat, 1, band as i64 - 2, BLACK);
        push(RegionLabel::XTick, b, None, Some(c));
    }

    for (i, t) in tick_labels.iter().enumerate() {
        let tw = font::text_width(t.len(), 1) as i64;
        let y = y_of(i as f64 * y_step).round() as i64 - glyph_h / 2;
        let b = canvas.text(plot_left - 4 - tw, y, t, 1, tick_w, BLACK);
        push(RegionLabel::YTick, b, None, None);
    }

    for (label, b, s, c) in marks {
        push(label, b, s, c);
    }

    Ok(Rendered {
        image: canvas.img,
        boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plot_synth::spec::{sample_plot_spec, Series};
    use proptest::prelude::*;

    fn spec_with(kind: PlotKind, series: Vec<Vec<f64>>) -> PlotSpec {
        let n_cat = series[0].len();
        let names: Vec<String> = (0..series.len()).map(|i| format!("S{i}")).collect();
        PlotSpec {
            plot_id: "fixture".into(),
            kind,
            title: "Fixture".into(),
            x_label: "Year".into(),
            y_label: "Value".into(),
            x_categories: (0..n_cat).map(|i| (2000 + i).to_string()).collect(),
            series: series
                .into_iter()
                .zip(&names)
                .map(|(values, name)| Series {
                    name: name.clone(),
                    values,
                })
                .collect(),
            legend_labels: names,
            style_seed: 0,
        }
    }

    #[test]
    fn one_box_per_bar() {
        let spec = spec_with(PlotKind::Bar, vec![vec![1.0, 2.0, 3.0, 4.0], vec![4.0, 3.0, 2.0, 1.0]]);
        let r = render_plot(&spec, DEFAULT_WIDTH, DEFAULT_HEIGHT).unwrap();
        assert_eq!(r.count(RegionLabel::Bar), 8);
        assert_eq!(r.count(RegionLabel::LegendEntry), 2);
        assert_eq!(r.count(RegionLabel::XTick), 4);
    }

    #[test]
    fn line_has_n_minus_one_segments() {
        let spec = spec_with(PlotKind::Line, vec![vec![1.0, 5.0, 3.0]]);
        let r = render_plot(&spec, DEFAULT_WIDTH, DEFAULT_HEIGHT).unwrap();
        assert_eq!(r.count(RegionLabel::LineSegment), 2);
        assert_eq!(r.count(RegionLabel::Dot), 0);
    }

    #[test]
    fn dotline_has_segments_and_dots() {
        let spec = spec_with(PlotKind::Dotline, vec![vec![1.0, 5.0, 3.0], vec![2.0, 2.0, 2.0]]);
        let r = render_plot(&spec, DEFAULT_WIDTH, DEFAULT_HEIGHT).unwrap();
        assert_eq!(r.count(RegionLabel::LineSegment), 4);
        assert_eq!(r.count(RegionLabel::Dot), 6);
    }

    #[test]
    fn zero_valued_bar_still_has_a_box() {
        let spec = spec_with(PlotKind::Bar, vec![vec![0.0, 0.0]]);
        let r = render_plot(&spec, 200, 150).unwrap();
        assert!(r.boxes.iter().all(|b| b.is_within(200, 150)));
    }

    #[test]
    fn rejects_tiny_canvas() {
        let spec = sample_plot_spec(1, PlotKind::Bar);
        assert!(matches!(
            render_plot(&spec, 63, 200),
            Err(SynthError::DimensionTooSmall { .. })
        ));
        assert!(matches!(
            render_plot(&spec, 200, 10),
            Err(SynthError::DimensionTooSmall { .. })
        ));
    }

    #[test]
    fn nice_axis_covers_maximum() {
        assert_eq!(nice_axis(97.3), (100.0, 20.0));
        assert_eq!(nice_axis(0.0), (1.0, 0.2));
        assert_eq!(nice_axis(42.0), (50.0, 10.0));
    }

    #[test]
    fn bars_are_painted_in_series_color() {
        let spec = spec_with(PlotKind::Bar, vec![vec![50.0, 80.0]]);
        let r = render_plot(&spec, DEFAULT_WIDTH, DEFAULT_HEIGHT).unwrap();
        let b = r.boxes.iter().find(|b| b.label == RegionLabel::Bar).unwrap();
        let px = r.image.get_pixel((b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2);
        assert_eq!(px.0, PALETTE[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn boxes_stay_inside_image(seed in any::<u64>(), k in 0usize..3, w in 64u32..500, h in 64u32..400) {
            let spec = sample_plot_spec(seed, PlotKind::ALL[k]);
            match render_plot(&spec, w, h) {
                Ok(r) => {
                    prop_assert!(r.boxes.iter().all(|b| b.is_within(w, h)));
                    if spec.kind == PlotKind::Bar {
                        prop_assert_eq!(r.count(RegionLabel::Bar), spec.n_series() * spec.n_categories());
                    }
                }
                Err(SynthError::DimensionTooSmall { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn rendering_is_deterministic(seed in 0u64..1000) {
            let spec = sample_plot_spec(seed, PlotKind::Dotline);
            let a = render_plot(&spec, 320, 240).unwrap();
            let b = render_plot(&spec, 320, 240).unwrap();
            prop_assert_eq!(a.image.as_raw(), b.image.as_raw());
            prop_assert_eq!(a.boxes, b.boxes);
        }
    }
}
