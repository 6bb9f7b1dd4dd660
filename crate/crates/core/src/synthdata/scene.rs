//! Scene layout and painting.
//!
//! Geometry is integer ([`raster`](super::raster)); only colors, shading,
//! texture and noise use floating point.

use rand::Rng;

use super::raster::{along, Shape, SUB};
use super::{LabelMask, SynthConfig};
use crate::error::Result;
use crate::numcore::Tensor;
use crate::rng::{stream, StreamRng};
use crate::taxonomy::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Legwear {
    Pants,
    Skirt,
    Bare,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Garments {
    pub hat: bool,
    pub sunglasses: bool,
    pub scarf: bool,
    /// Coat, otherwise a t-shirt.
    pub coat: bool,
    pub v_neck: bool,
    pub gloves: bool,
    pub legwear: Legwear,
}

/// Pose and clothing of one figure. Lengths are fixed point (`SUB` per pixel).
#[derive(Clone, Debug, PartialEq)]
pub struct FigureMeta {
    pub center_x: i64,
    pub top: i64,
    pub height: i64,
    /// Limb angles in 5° steps from straight down, positive toward +x:
    /// `[left upper, left lower, right upper, right lower]`. The figure faces
    /// the viewer, so its left side is at larger x.
    pub arm_steps: [i32; 4],
    pub leg_steps: [i32; 4],
    pub garments: Garments,
}

type Rgb = [f32; 3];

struct Ids {
    hat: u8,
    hair: u8,
    sunglasses: u8,
    face: u8,
    coat: u8,
    t_shirt: u8,
    scarf: u8,
    torso_skin: u8,
    upper_arm: [u8; 2],
    lower_arm: [u8; 2],
    glove: u8,
    pants: u8,
    skirt: u8,
    leg_skin: u8,
    socks: u8,
    shoe: [u8; 2],
}

impl Ids {
    fn new(ds: &Dataset) -> Result<Self> {
        let id = |name: &str| -> Result<u8> {
            ds.label_index(name).map(|i| i as u8).ok_or_else(|| {
                crate::error::Error::Taxonomy(format!(
                    "dataset {} lacks generator label {name}",
                    ds.id
                ))
            })
        };
        Ok(Ids {
            hat: id("hat")?,
            hair: id("hair")?,
            sunglasses: id("sunglasses")?,
            face: id("face")?,
            coat: id("coat")?,
            t_shirt: id("t-shirt")?,
            scarf: id("scarf")?,
            torso_skin: id("torso-skin")?,
            upper_arm: [id("left-upper-arm")?, id("right-upper-arm")?],
            lower_arm: [id("left-lower-arm")?, id("right-lower-arm")?],
            glove: id("glove")?,
            pants: id("pants")?,
            skirt: id("skirt")?,
            leg_skin: id("leg-skin")?,
            socks: id("socks")?,
            shoe: [id("left-shoe")?, id("right-shoe")?],
        })
    }
}

struct Canvas {
    w: usize,
    h: usize,
    labels: Vec<u8>,
    color: Vec<Rgb>,
}

impl Canvas {
    fn paint(&mut self, shape: &Shape, label: u8, tex: &Texture) {
        for (x, y) in shape.pixels(self.w, self.h) {
            let i = y * self.w + x;
            self.labels[i] = label;
            self.color[i] = tex.at(x, y);
        }
    }
}

/// Flat color with optional horizontal stripes and a left-right light ramp.
#[derive(Clone, Copy)]
struct Texture {
    base: Rgb,
    stripe: Option<(Rgb, usize)>,
    ramp_center: f32,
    ramp_slope: f32,
}

impl Texture {
    fn at(&self, x: usize, y: usize) -> Rgb {
        let c = match self.stripe {
            Some((alt, period)) if (y / period) % 2 == 1 => alt,
            _ => self.base,
        };
        let shade = 1.0 + self.ramp_slope * (x as f32 - self.ramp_center);
        c.map(|v| v * shade)
    }
}

fn hsv(h: f32, s: f32, v: f32) -> Rgb {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

const SKIN: [Rgb; 5] = [
    [0.96, 0.80, 0.69],
    [0.87, 0.67, 0.52],
    [0.72, 0.52, 0.37],
    [0.55, 0.38, 0.26],
    [0.40, 0.27, 0.18],
];

const HAIR: [Rgb; 4] = [
    [0.08, 0.06, 0.05],
    [0.32, 0.20, 0.10],
    [0.85, 0.72, 0.40],
    [0.60, 0.25, 0.10],
];

struct Palette {
    skin: Rgb,
    hair: Rgb,
    hat: Rgb,
    shades: Rgb,
    top: Rgb,
    top_stripe: Option<(Rgb, usize)>,
    scarf: Rgb,
    glove: Rgb,
    legwear: Rgb,
    socks: Rgb,
    shoes: Rgb,
}

fn jitter(r: &mut StreamRng, c: Rgb, amount: f32) -> Rgb {
    c.map(|v| (v + r.gen_range(-amount..amount)).clamp(0.0, 1.0))
}

fn palette(r: &mut StreamRng, g: &Garments) -> Palette {
    let skin = SKIN[r.gen_range(0..SKIN.len())];
    let skin = jitter(r, skin, 0.04);
    let hair = HAIR[r.gen_range(0..HAIR.len())];
    let hair = jitter(r, hair, 0.04);
    // Coats are dark and muted, t-shirts bright and saturated.
    let top = if g.coat {
        hsv(r.gen(), r.gen_range(0.2..0.5), r.gen_range(0.18..0.42))
    } else {
        hsv(r.gen(), r.gen_range(0.6..1.0), r.gen_range(0.75..1.0))
    };
    let top_stripe = (!g.coat && r.gen_bool(0.4)).then(|| {
        (top.map(|v| v * 0.55), r.gen_range(2..4usize))
    });
    let scarf = hsv(r.gen(), r.gen_range(0.5..0.9), r.gen_range(0.6..0.95));
    let hat = if r.gen_bool(0.5) {
        scarf
    } else {
        hsv(r.gen(), r.gen_range(0.3..0.9), r.gen_range(0.3..0.9))
    };
    let legwear = match g.legwear {
        Legwear::Pants => hsv(r.gen_range(0.55..0.7), r.gen_range(0.3..0.8), r.gen_range(0.25..0.6)),
        Legwear::Skirt => hsv(r.gen_range(0.8..1.05), r.gen_range(0.4..0.9), r.gen_range(0.4..0.85)),
        Legwear::Bare => skin,
    };
    let socks_v = [0.95, 0.55, 0.12][r.gen_range(0..3)];
    Palette {
        skin,
        hair,
        hat,
        shades: [0.05, 0.05, 0.07],
        top,
        top_stripe,
        scarf,
        glove: hsv(r.gen(), r.gen_range(0.2..0.7), r.gen_range(0.3..0.8)),
        legwear,
        socks: jitter(r, [socks_v; 3], 0.05),
        shoes: hsv(r.gen_range(0.02..0.1), r.gen_range(0.3..0.7), r.gen_range(0.1..0.4)),
    }
}

fn garments(r: &mut StreamRng) -> Garments {
    let u: f64 = r.gen();
    Garments {
        hat: r.gen_bool(0.5),
        sunglasses: r.gen_bool(0.5),
        scarf: r.gen_bool(0.4),
        coat: r.gen_bool(0.5),
        v_neck: r.gen_bool(0.6),
        gloves: r.gen_bool(0.3),
        legwear: if u < 0.45 {
            Legwear::Pants
        } else if u < 0.75 {
            Legwear::Skirt
        } else {
            Legwear::Bare
        },
    }
}

fn pose(r: &mut StreamRng) -> ([i32; 4], [i32; 4]) {
    let mut arm = [0; 4];
    let mut leg = [0; 4];
    for side in 0..2 {
        let sign = if side == 0 { 1 } else { -1 };
        let upper = r.gen_range(3..=12);
        let lower = (upper + r.gen_range(-2..=5)).clamp(1, 14);
        arm[2 * side] = sign * upper;
        arm[2 * side + 1] = sign * lower;
        let lu = r.gen_range(1..=3);
        let ll = (lu + r.gen_range(-1..=1)).max(0);
        leg[2 * side] = sign * lu;
        leg[2 * side + 1] = sign * ll;
    }
    (arm, leg)
}

/// Horizontal reach of a figure from its center, in fixed point.
fn half_width(hf: i64, arm: &[i32; 4]) -> i64 {
    let p = |k: i64| hf * k / 128;
    let mut reach = p(22);
    for side in 0..2 {
        let (x1, _) = along(p(16), 0, p(24), arm[2 * side].abs());
        let (x2, _) = along(x1, 0, p(22), arm[2 * side + 1].abs());
        reach = reach.max(x2 + p(8));
    }
    reach
}

fn draw_figure(c: &mut Canvas, ids: &Ids, f: &FigureMeta, pal: &Palette) {
    let (cx, y0, hf) = (f.center_x, f.top, f.height);
    let g = &f.garments;
    let p = |k: i64| hf * k / 128;
    let ramp_slope = 0.25 / (hf as f32 / SUB as f32);
    let ramp_center = (cx / SUB) as f32;
    let tex = |base: Rgb| Texture {
        base,
        stripe: None,
        ramp_center,
        ramp_slope,
    };

    let hip_y = y0 + p(70);
    let shoulder_y = y0 + p(30);

    // Legs. side 0 is the figure's left, at larger x.
    let mut ankles = [(0, 0); 2];
    for side in 0..2 {
        let sign = if side == 0 { 1 } else { -1 };
        let hip = (cx + sign * p(8), hip_y - p(2));
        let knee = along(hip.0, hip.1, p(26), f.leg_steps[2 * side]);
        let ankle = along(knee.0, knee.1, p(24), f.leg_steps[2 * side + 1]);
        ankles[side] = ankle;
        let thigh = Shape::Capsule { a: hip, b: knee, r: p(8) };
        c.paint(&thigh, ids.leg_skin, &tex(pal.skin));
        if g.legwear == Legwear::Pants {
            let hem = along(hip.0, hip.1, p(20), f.leg_steps[2 * side]);
            let shorts = Shape::Capsule { a: hip, b: hem, r: p(9) };
            c.paint(&shorts, ids.pants, &tex(pal.legwear));
        }
        let shin = Shape::Capsule { a: knee, b: ankle, r: p(7) };
        c.paint(&shin, ids.socks, &tex(pal.socks));
    }
    if g.legwear == Legwear::Pants {
        let seat = Shape::Rect {
            x0: cx - p(14),
            y0: hip_y - p(4),
            x1: cx + p(14),
            y1: hip_y + p(6),
        };
        c.paint(&seat, ids.pants, &tex(pal.legwear));
    }
    if g.legwear == Legwear::Skirt {
        let skirt = Shape::Polygon(vec![
            (cx - p(15), hip_y - p(4)),
            (cx + p(15), hip_y - p(4)),
            (cx + p(24), hip_y + p(20)),
            (cx - p(24), hip_y + p(20)),
        ]);
        c.paint(&skirt, ids.skirt, &tex(pal.legwear));
    }
    for (side, ankle) in ankles.iter().enumerate() {
        let sign = if side == 0 { 1 } else { -1 };
        let shoe = Shape::Ellipse {
            cx: ankle.0 + sign * p(4),
            cy: ankle.1 + p(3),
            rx: p(10),
            ry: p(5),
        };
        c.paint(&shoe, ids.shoe[side], &tex(pal.shoes));
    }

    // Torso.
    let (top_label, bottom_y, bottom_half) = if g.coat {
        (ids.coat, hip_y + p(14), p(18))
    } else {
        (ids.t_shirt, hip_y, p(14))
    };
    let torso = Shape::Polygon(vec![
        (cx - p(18), shoulder_y),
        (cx + p(18), shoulder_y),
        (cx + bottom_half, bottom_y),
        (cx - bottom_half, bottom_y),
    ]);
    let mut top_tex = tex(pal.top);
    top_tex.stripe = pal.top_stripe;
    c.paint(&torso, top_label, &top_tex);
    let neck = Shape::Rect {
        x0: cx - p(5),
        y0: y0 + p(24),
        x1: cx + p(5),
        y1: shoulder_y + p(2),
    };
    c.paint(&neck, ids.torso_skin, &tex(pal.skin));
    if g.v_neck {
        let v = Shape::Polygon(vec![
            (cx - p(7), shoulder_y),
            (cx + p(7), shoulder_y),
            (cx, shoulder_y + p(16)),
        ]);
        c.paint(&v, ids.torso_skin, &tex(pal.skin));
    }

    // Arms: coat sleeves are long, t-shirt sleeves short.
    for side in 0..2 {
        let sign = if side == 0 { 1 } else { -1 };
        let shoulder = (cx + sign * p(16), shoulder_y + p(4));
        let elbow = along(shoulder.0, shoulder.1, p(24), f.arm_steps[2 * side]);
        let wrist = along(elbow.0, elbow.1, p(22), f.arm_steps[2 * side + 1]);
        let upper = Shape::Capsule { a: shoulder, b: elbow, r: p(7) };
        c.paint(&upper, ids.upper_arm[side], &tex(pal.top));
        let lower = Shape::Capsule { a: elbow, b: wrist, r: p(6) };
        let sleeve = if g.coat { pal.top } else { pal.skin };
        c.paint(&lower, ids.lower_arm[side], &tex(sleeve));
        let hand_from = along(wrist.0, wrist.1, -p(4), f.arm_steps[2 * side + 1]);
        let hand = Shape::Capsule { a: hand_from, b: wrist, r: p(7) };
        if g.gloves {
            c.paint(&hand, ids.glove, &tex(pal.glove));
        } else {
            c.paint(&hand, ids.lower_arm[side], &tex(pal.skin));
        }
    }

    if g.scarf {
        let band = Shape::Capsule {
            a: (cx - p(10), shoulder_y),
            b: (cx + p(10), shoulder_y),
            r: p(5),
        };
        c.paint(&band, ids.scarf, &tex(pal.scarf));
        let tail = Shape::Capsule {
            a: (cx + p(6), shoulder_y),
            b: (cx + p(8), shoulder_y + p(24)),
            r: p(4),
        };
        c.paint(&tail, ids.scarf, &tex(pal.scarf));
    }

    // Head.
    let hc = y0 + p(14);
    let head = Shape::Disk { cx, cy: hc, r: p(14) };
    c.paint(&head, ids.face, &tex(pal.skin));
    let hair = head.clone().intersect(Shape::Rect {
        x0: cx - p(16),
        y0: hc - p(16),
        x1: cx + p(16),
        y1: hc - p(3),
    });
    c.paint(&hair, ids.hair, &tex(pal.hair));
    if g.sunglasses {
        let shades = head.clone().intersect(Shape::Rect {
            x0: cx - p(12),
            y0: hc - p(1),
            x1: cx + p(12),
            y1: hc + p(6),
        });
        c.paint(&shades, ids.sunglasses, &tex(pal.shades));
    }
    if g.hat {
        let crown = Shape::Ellipse {
            cx,
            cy: hc - p(8),
            rx: p(15),
            ry: p(11),
        }
        .intersect(Shape::Rect {
            x0: cx - p(16),
            y0: hc - p(20),
            x1: cx + p(16),
            y1: hc - p(5),
        });
        c.paint(&crown, ids.hat, &tex(pal.hat));
        let brim = Shape::Ellipse {
            cx,
            cy: hc - p(6),
            rx: p(22),
            ry: p(3),
        };
        c.paint(&brim, ids.hat, &tex(pal.hat));
    }
}

fn background(r: &mut StreamRng, w: usize, h: usize) -> Vec<Rgb> {
    let base = hsv(r.gen(), r.gen_range(0.05..0.4), r.gen_range(0.35..0.8));
    let alt = hsv(r.gen(), r.gen_range(0.05..0.4), r.gen_range(0.35..0.8));
    let (fx, fy) = (r.gen_range(0.05f32..0.4), r.gen_range(0.05f32..0.4));
    let phase = r.gen_range(0.0f32..6.28);
    let amp = r.gen_range(0.0f32..0.5);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let t = 0.5 + 0.5 * (fx * x as f32 + fy * y as f32 + phase).sin();
            let m = amp * t;
            out.push([0, 1, 2].map(|k| base[k] * (1.0 - m) + alt[k] * m));
        }
    }
    out
}

pub(super) fn render(
    seed: u64,
    config: &SynthConfig,
    ds: &Dataset,
) -> Result<(Tensor<f32>, LabelMask, Vec<FigureMeta>)> {
    let ids = Ids::new(ds)?;
    let res = config.resolution;
    let fres = (res as i64) * SUB;
    let mut r = stream(seed, "scene", 0);
    let mut canvas = Canvas {
        w: res,
        h: res,
        labels: vec![0; res * res],
        color: background(&mut r, res, res),
    };

    let count = r.gen_range(1..=config.max_figures);
    let mut figures = Vec::with_capacity(count);
    for i in 0..count {
        let (arm_steps, leg_steps) = pose(&mut r);
        let g = garments(&mut r);
        let (height, center_x) = if count == 1 {
            let hf = fres * r.gen_range(80..=94) / 100;
            (hf, fres / 2 + fres * r.gen_range(-8..=8) / 100)
        } else {
            let hf = fres * r.gen_range(58..=72) / 100;
            let slot = fres * (2 * i as i64 + 1) / 4;
            let shift = if config.occlusion {
                // Pull toward the middle so the figures overlap.
                let s = fres * r.gen_range(4..=14) / 100;
                if i == 0 { s } else { -s }
            } else {
                0
            };
            (hf, slot + shift)
        };
        let top = (fres - height) / 2 + fres * r.gen_range(-3..=3) / 100;
        let mut f = FigureMeta {
            center_x,
            top,
            height,
            arm_steps,
            leg_steps,
            garments: g,
        };
        if count == 2 && !config.occlusion {
            // Shrink until the figure stays inside its half of the image.
            while half_width(f.height, &f.arm_steps) > fres / 4 && f.height > fres / 4 {
                f.height = f.height * 15 / 16;
                f.top = (fres - f.height) / 2;
            }
        }
        let pal = palette(&mut r, &f.garments);
        draw_figure(&mut canvas, &ids, &f, &pal);
        figures.push(f);
    }

    if config.occlusion && r.gen_bool(0.3) {
        let side = fres * r.gen_range(12..=22) / 100;
        let x0 = r.gen_range(0..fres - side);
        let y0 = r.gen_range(fres / 4..fres - side);
        let block = Shape::Rect {
            x0,
            y0,
            x1: x0 + side,
            y1: y0 + side,
        };
        let color = hsv(r.gen(), r.gen_range(0.0..0.3), r.gen_range(0.3..0.7));
        let tex = Texture {
            base: color,
            stripe: None,
            ramp_center: 0.0,
            ramp_slope: 0.0,
        };
        canvas.paint(&block, 0, &tex);
    }

    let noise = config.noise as f32;
    let mut data = Vec::with_capacity(res * res * 3);
    for px in &canvas.color {
        for &v in px {
            let n = noise * (r.gen::<f32>() + r.gen::<f32>() - 1.0);
            data.push(quantize(v + n));
        }
    }
    let image = Tensor::new(&[res, res, 3], data)?;
    let mask = LabelMask::new(res, res, canvas.labels)?;
    Ok((image, mask, figures))
}

/// Nearest multiple of 1/255 in [0, 1].
pub(crate) fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}
