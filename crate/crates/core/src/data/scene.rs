//! Procedural scene rendering and edit application for the Mini-Change dataset.
//!
//! Scenes are 2..=6 non-overlapping colored geometric shapes placed on a 4x4
//! cell grid over a plain background. "Texture" is realized as striped versus
//! solid fill. Every record's RNG stream is derived from `(seed, split, index)`
//! so generation is order-independent and byte-reproducible.

use super::{mix_seed, write_manifest, ChangeType, Manifest, Record, RgbBuf, Split};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

const GRID: usize = 4;
const BACKGROUND: [u8; 3] = [230, 230, 230];

const COLORS: [(&str, [u8; 3]); 6] = [
    ("red", [200, 40, 40]),
    ("green", [40, 170, 60]),
    ("blue", [40, 80, 200]),
    ("yellow", [220, 200, 40]),
    ("purple", [150, 60, 180]),
    ("cyan", [40, 190, 190]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Ball,
    Block,
    Triangle,
}

impl Shape {
    const ALL: [Shape; 3] = [Shape::Ball, Shape::Block, Shape::Triangle];

    fn name(self) -> &'static str {
        match self {
            Shape::Ball => "ball",
            Shape::Block => "block",
            Shape::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Obj {
    shape: Shape,
    color: usize,
    striped: bool,
    cell: (usize, usize),
}

#[derive(Debug, Clone)]
struct Scene {
    objects: Vec<Obj>,
}

impl Scene {
    /// Sample a scene whose objects all have distinct (color, shape) identities,
    /// so a caption naming "the {color} {shape}" is unambiguous.
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let k = rng.gen_range(2..=6);
        let mut cells: Vec<(usize, usize)> = (0..GRID)
            .flat_map(|r| (0..GRID).map(move |c| (r, c)))
            .collect();
        cells.shuffle(rng);
        let mut identities: Vec<(usize, Shape)> = Vec::new();
        let mut objects = Vec::with_capacity(k);
        for i in 0..k {
            let identity = loop {
                let color = rng.gen_range(0..COLORS.len());
                let shape = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
                if !identities.contains(&(color, shape)) {
                    break (color, shape);
                }
            };
            identities.push(identity);
            objects.push(Obj {
                shape: identity.1,
                color: identity.0,
                striped: rng.gen_bool(0.5),
                cell: cells[i],
            });
        }
        Self { objects }
    }

    fn free_cell(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let used: Vec<(usize, usize)> = self.objects.iter().map(|o| o.cell).collect();
        let mut free: Vec<(usize, usize)> = (0..GRID)
            .flat_map(|r| (0..GRID).map(move |c| (r, c)))
            .filter(|cell| !used.contains(cell))
            .collect();
        free.shuffle(rng);
        free[0]
    }

    fn render(&self, size: usize) -> RgbBuf {
        let mut buf = RgbBuf::new(size);
        for y in 0..size {
            for x in 0..size {
                buf.put(x, y, BACKGROUND);
            }
        }
        let cell = size / GRID;
        let r = (cell * 5) / 16; // half-extent, leaves a margin inside the cell
        for obj in &self.objects {
            let cx = obj.cell.1 * cell + cell / 2;
            let cy = obj.cell.0 * cell + cell / 2;
            let base = COLORS[obj.color].1;
            let dark = base.map(|v| (v as f64 * 0.55) as u8);
            let ri = r as isize;
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    let inside = match obj.shape {
                        Shape::Ball => dx * dx + dy * dy <= ri * ri,
                        Shape::Block => true,
                        // upward-pointing triangle
                        Shape::Triangle => {
                            let row = dy + ri; // 0 at apex
                            dx.abs() * 2 * ri <= row * ri && row <= 2 * ri
                        }
                    };
                    if !inside {
                        continue;
                    }
                    let x = (cx as isize + dx) as usize;
                    let y = (cy as isize + dy) as usize;
                    let striped_dark = obj.striped && ((y / 2) % 2 == 0);
                    buf.put(x, y, if striped_dark { dark } else { base });
                }
            }
        }
        buf
    }
}

/// Parameters of a Mini-Change generation run.
#[derive(Debug, Clone, Copy)]
pub struct GenSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub image_size: usize,
}

impl GenSpec {
    pub fn n_pairs(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}

fn color_captions(obj: &Obj, new_color: usize) -> Vec<String> {
    let (c, s, c2) = (COLORS[obj.color].0, obj.shape.name(), COLORS[new_color].0);
    vec![
        format!("the {c} {s} became {c2}"),
        format!("the {c} {s} changed to {c2}"),
    ]
}

fn texture_captions(obj: &Obj) -> Vec<String> {
    let (c, s) = (COLORS[obj.color].0, obj.shape.name());
    let to = if obj.striped { "solid" } else { "striped" };
    vec![
        format!("the {c} {s} became {to}"),
        format!("the {c} {s} turned {to}"),
    ]
}

/// Coarse location word for a grid cell; captions name the quadrant rather
/// than the exact cell so paraphrases stay short and natural.
fn quadrant(cell: (usize, usize)) -> &'static str {
    match (cell.0 < GRID / 2, cell.1 < GRID / 2) {
        (true, true) => "top left",
        (true, false) => "top right",
        (false, true) => "bottom left",
        (false, false) => "bottom right",
    }
}

fn move_captions(obj: &Obj, dest: (usize, usize)) -> Vec<String> {
    let (c, s, q) = (COLORS[obj.color].0, obj.shape.name(), quadrant(dest));
    vec![
        format!("the {c} {s} moved to the {q}"),
        format!("the {c} {s} changed its location to the {q}"),
    ]
}

fn add_captions(obj: &Obj) -> Vec<String> {
    let (c, s, q) = (COLORS[obj.color].0, obj.shape.name(), quadrant(obj.cell));
    vec![
        format!("a {c} {s} was added at the {q}"),
        format!("there is a new {c} {s} at the {q}"),
    ]
}

fn drop_captions(obj: &Obj) -> Vec<String> {
    let (c, s, q) = (COLORS[obj.color].0, obj.shape.name(), quadrant(obj.cell));
    vec![
        format!("the {c} {s} at the {q} is missing"),
        format!("the {c} {s} at the {q} was removed"),
    ]
}

fn distractor_captions() -> Vec<String> {
    vec!["there is no change".to_string(), "there is no difference".to_string()]
}

/// Apply an edit of the requested type, returning the after-scene, the
/// brightness delta for distractors, and the full caption set.
fn apply_edit(
    scene: &Scene,
    change: ChangeType,
    rng: &mut ChaCha8Rng,
) -> (Scene, i16, Vec<String>) {
    let mut after = scene.clone();
    match change {
        ChangeType::Color => {
            let idx = rng.gen_range(0..after.objects.len());
            let obj = after.objects[idx];
            let new_color = loop {
                let c = rng.gen_range(0..COLORS.len());
                let clash = after
                    .objects
                    .iter()
                    .any(|o| o.color == c && o.shape == obj.shape);
                if c != obj.color && !clash {
                    break c;
                }
            };
            let captions = color_captions(&obj, new_color);
            after.objects[idx].color = new_color;
            (after, 0, captions)
        }
        ChangeType::Texture => {
            let idx = rng.gen_range(0..after.objects.len());
            let obj = after.objects[idx];
            after.objects[idx].striped = !obj.striped;
            (after, 0, texture_captions(&obj))
        }
        ChangeType::Move => {
            let idx = rng.gen_range(0..after.objects.len());
            let obj = after.objects[idx];
            let cell = after.free_cell(rng);
            after.objects[idx].cell = cell;
            (after, 0, move_captions(&obj, cell))
        }
        ChangeType::Add => {
            let identity = loop {
                let color = rng.gen_range(0..COLORS.len());
                let shape = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
                if !after.objects.iter().any(|o| o.color == color && o.shape == shape) {
                    break (color, shape);
                }
            };
            let cell = after.free_cell(rng);
            let obj = Obj {
                shape: identity.1,
                color: identity.0,
                striped: rng.gen_bool(0.5),
                cell,
            };
            after.objects.push(obj);
            (after, 0, add_captions(&obj))
        }
        ChangeType::Drop => {
            let idx = rng.gen_range(0..after.objects.len());
            let obj = after.objects.remove(idx);
            (after, 0, drop_captions(&obj))
        }
        ChangeType::Distractor => {
            // Bounded brightness jitter; pixel ranges keep the add saturation-free.
            let delta = *[-5i16, -4, -3, -2, -1, 1, 2, 3, 4, 5]
                .choose(rng)
                .unwrap();
            (after, delta, distractor_captions())
        }
    }
}

fn jitter(buf: &RgbBuf, delta: i16) -> RgbBuf {
    let mut out = buf.clone();
    for v in &mut out.data {
        *v = (*v as i16 + delta) as u8;
    }
    out
}

/// Generate a Mini-Change dataset: PNG image pairs plus a line-delimited
/// manifest under `out_dir`. Change types are balanced within each split
/// (round-robin assignment, counts within ±1 of `count / 6`).
pub fn generate_minichange(spec: &GenSpec, out_dir: &Path) -> Result<Manifest> {
    if spec.n_pairs() < 6 {
        return Err(Error::Config("at least 6 pairs required".into()));
    }
    if spec.image_size < 32 || spec.image_size % GRID != 0 {
        return Err(Error::Config(format!(
            "image_size must be >= 32 and divisible by {GRID}, got {}",
            spec.image_size
        )));
    }
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let mut records = Vec::with_capacity(spec.n_pairs());
    let splits = [
        (Split::Train, spec.n_train),
        (Split::Val, spec.n_val),
        (Split::Test, spec.n_test),
    ];
    for (split, count) in splits {
        for index in 0..count {
            let id = format!("{}_{index:05}", split.as_str());
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                spec.seed,
                split as u64 + 1,
                index as u64,
            ]));
            let change = ChangeType::ALL[index % ChangeType::ALL.len()];
            let scene = Scene::sample(&mut rng);
            let (after_scene, delta, mut captions) = apply_edit(&scene, change, &mut rng);
            if rng.gen_bool(0.5) {
                captions.truncate(1);
            }
            let before = scene.render(spec.image_size);
            let mut after = after_scene.render(spec.image_size);
            if delta != 0 {
                after = jitter(&after, delta);
            }
            let before_rel = format!("images/{id}_a.png");
            let after_rel = format!("images/{id}_b.png");
            before.save_png(&out_dir.join(&before_rel))?;
            after.save_png(&out_dir.join(&after_rel))?;
            records.push(Record {
                id,
                before: before_rel,
                after: after_rel,
                captions,
                change_type: change,
                split,
            });
        }
    }

    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        records,
    };
    write_manifest(&manifest, &out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
