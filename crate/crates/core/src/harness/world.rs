//! Synthetic aerial-style scenes: a context type is drawn per scene, categories are
//! drawn from that context's co-occurrence table, and glyphs are placed on a neutral
//! textured background. The same generator emits the matching knowledge graph.

use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{BBox, GroundTruth};
use crate::error::{Error, Result};
use crate::kg::{EntityType, KnowledgeGraph};
use crate::numeric::Tensor;
use crate::seeds::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlyphShape {
    /// Elongated ellipse, 2.5:1.
    Hull,
    /// Disk with a dark core.
    Tank,
    /// Plus sign with a long body.
    Plus,
    /// Disk with a diagonal cross through it.
    Rotor,
    Diamond,
    Square,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    pub shape: GlyphShape,
    /// RGB in [0, 1].
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextSpec {
    pub name: String,
    /// Relative frequency of each category in scenes of this context.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub image_size: usize,
    pub categories: Vec<CategorySpec>,
    pub contexts: Vec<ContextSpec>,
    /// Pairs of category indices with near-identical appearance.
    pub confusable: Vec<(usize, usize)>,
    /// Glyph side range in pixels (inclusive).
    pub glyph_size: (usize, usize),
    /// Objects per scene range (inclusive).
    pub objects: (usize, usize),
    /// Standard deviation of per-pixel noise.
    pub noise: f64,
    /// Context weights at or above this make an `appears_in` triple.
    pub kg_threshold: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        let cat = |name: &str, shape, color| CategorySpec { name: name.into(), shape, color };
        WorldSpec {
            image_size: 128,
            categories: vec![
                cat("ship", GlyphShape::Hull, [0.20, 0.35, 0.85]),
                cat("storage_tank", GlyphShape::Tank, [0.92, 0.92, 0.88]),
                cat("plane", GlyphShape::Plus, [0.90, 0.85, 0.30]),
                cat("helicopter", GlyphShape::Rotor, [0.30, 0.80, 0.35]),
                cat("buoy", GlyphShape::Diamond, [0.95, 0.45, 0.10]),
                cat("beacon", GlyphShape::Diamond, [0.95, 0.45, 0.10]),
            ],
            contexts: vec![
                ContextSpec { name: "harbor".into(), weights: vec![0.36, 0.28, 0.02, 0.02, 0.32, 0.0] },
                ContextSpec { name: "airfield".into(), weights: vec![0.02, 0.02, 0.36, 0.28, 0.0, 0.32] },
            ],
            confusable: vec![(4, 5)],
            glyph_size: (12, 26),
            objects: (3, 5),
            noise: 0.04,
            kg_threshold: 0.1,
            seed: 7,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.categories.len();
        if k == 0 || self.contexts.is_empty() {
            return Err(Error::Config("world needs at least one category and one context".into()));
        }
        for c in &self.contexts {
            if c.weights.len() != k
                || c.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
                || c.weights.iter().sum::<f64>() <= 0.0
            {
                return Err(Error::Config(format!(
                    "context `{}` needs {k} nonnegative weights with positive sum",
                    c.name
                )));
            }
        }
        let (lo, hi) = self.glyph_size;
        if lo < 4 || lo > hi || hi * 2 > self.image_size {
            return Err(Error::Config(format!("glyph size range {lo}..={hi} does not fit the scene")));
        }
        if self.objects.0 == 0 || self.objects.0 > self.objects.1 {
            return Err(Error::Config("objects per scene must be a nonempty range starting at 1 or more".into()));
        }
        for &(a, b) in &self.confusable {
            if a >= k || b >= k || a == b {
                return Err(Error::Config(format!("confusable pair ({a}, {b}) out of range")));
            }
            if !self.disambiguated(a, b) {
                return Err(Error::Config(format!(
                    "confusable pair `{}`/`{}` has no context-correlated category to tell them apart",
                    self.categories[a].name, self.categories[b].name
                )));
            }
        }
        Ok(())
    }

    fn is_confusable(&self, c: usize) -> bool {
        self.confusable.iter().any(|&(a, b)| a == c || b == c)
    }

    /// Some context favors `a` over `b` and another favors `b` over `a`, and each
    /// contains a category outside every confusable pair.
    fn disambiguated(&self, a: usize, b: usize) -> bool {
        let witness = |x: usize, y: usize| {
            self.contexts.iter().any(|c| {
                c.weights[x] > c.weights[y]
                    && (0..self.categories.len()).any(|o| !self.is_confusable(o) && c.weights[o] > 0.0)
            })
        };
        witness(a, b) && witness(b, a)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.name.clone()).collect()
    }

    /// Category probabilities within each context (rows normalized).
    pub fn cooccurrence(&self) -> Vec<Vec<f64>> {
        self.contexts
            .iter()
            .map(|c| {
                let s: f64 = c.weights.iter().sum();
                c.weights.iter().map(|w| w / s).collect()
            })
            .collect()
    }

    /// Knowledge graph of the generator's structure: `appears_in` for categories
    /// whose context weight reaches the threshold, `co_occurs_with` between categories
    /// sharing such a context, and `similar_appearance` for confusable pairs.
    pub fn knowledge_graph(&self) -> Result<KnowledgeGraph> {
        let mut kg = KnowledgeGraph::new();
        for c in &self.categories {
            kg.add_entity(&c.name, EntityType::Category)?;
        }
        for c in &self.contexts {
            kg.add_entity(&c.name, EntityType::Context)?;
        }
        let table = self.cooccurrence();
        for (ctx, probs) in self.contexts.iter().zip(&table) {
            let members: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] >= self.kg_threshold).collect();
            for &m in &members {
                kg.add_triple(&self.categories[m].name, "appears_in", &ctx.name)?;
            }
            for (i, &a) in members.iter().enumerate() {
                for &b in &members[i + 1..] {
                    kg.add_triple(&self.categories[a].name, "co_occurs_with", &self.categories[b].name)?;
                }
            }
        }
        for &(a, b) in &self.confusable {
            kg.add_triple(&self.categories[a].name, "similar_appearance", &self.categories[b].name)?;
        }
        Ok(kg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: usize,
    pub bbox: BBox,
}

/// One rendered scene; `pixels` is `[3, S, S]` in `u8`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub context: usize,
    pub objects: Vec<SceneObject>,
    pub pixels: Vec<u8>,
}

impl Scene {
    pub fn ground_truth(&self, image_id: usize) -> Vec<GroundTruth> {
        self.objects.iter().map(|o| GroundTruth { image_id, class: o.class, bbox: o.bbox }).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub image_size: usize,
    pub scenes: Vec<Scene>,
}

const PLACEMENT_TRIES: usize = 50;
const SCENE_TRIES: usize = 20;

/// Generate `n` scenes, scene `i` drawn from its own stream `(seed, stream, i)`.
pub fn generate_dataset(spec: &WorldSpec, n: usize, stream: u64) -> Result<Dataset> {
    spec.validate()?;
    let scenes =
        (0..n).map(|i| generate_scene(spec, mix_seed(spec.seed, &[stream, i as u64]))).collect::<Result<_>>()?;
    Ok(Dataset { image_size: spec.image_size, scenes })
}

fn generate_scene(spec: &WorldSpec, seed: u64) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let context_pick = WeightedIndex::new(vec![1.0; spec.contexts.len()]).expect("contexts");
    for attempt in 0..SCENE_TRIES {
        let context = context_pick.sample(&mut rng);
        let cats = WeightedIndex::new(&spec.contexts[context].weights)
            .map_err(|e| Error::Config(format!("context weights: {e}")))?;
        let count = rng.gen_range(spec.objects.0..=spec.objects.1);
        let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
        let mut ok = true;
        for _ in 0..count {
            let class = cats.sample(&mut rng);
            match place(spec, class, &objects, &mut rng) {
                Some(bbox) => objects.push(SceneObject { class, bbox }),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let pixels = render(spec, &objects, &mut rng);
            return Ok(Scene { context, objects, pixels });
        }
        log::warn!(
            "scene {seed:#x}: glyph did not fit after {PLACEMENT_TRIES} tries, regenerating (attempt {attempt})"
        );
    }
    Err(Error::Config("world too crowded: could not place glyphs".into()))
}

fn glyph_extent(shape: GlyphShape, side: f64, vertical: bool) -> (f64, f64) {
    let (w, h) = match shape {
        GlyphShape::Hull => (side, side / 2.5),
        GlyphShape::Plus => (side, side * 0.8),
        _ => (side, side),
    };
    if vertical {
        (h, w)
    } else {
        (w, h)
    }
}

fn place(spec: &WorldSpec, class: usize, placed: &[SceneObject], rng: &mut ChaCha8Rng) -> Option<BBox> {
    let s = spec.image_size as f64;
    for _ in 0..PLACEMENT_TRIES {
        let side = rng.gen_range(spec.glyph_size.0..=spec.glyph_size.1) as f64;
        let vertical = rng.gen_bool(0.5);
        let (w, h) = glyph_extent(spec.categories[class].shape, side, vertical);
        let (w, h) = (w.round().max(3.0), h.round().max(3.0));
        let x1 = rng.gen_range(1.0..(s - w - 1.0)).floor();
        let y1 = rng.gen_range(1.0..(s - h - 1.0)).floor();
        let b = BBox::new(x1, y1, x1 + w, y1 + h);
        let clear = placed.iter().all(|o| {
            let grown = BBox::new(o.bbox.x1 - 2.0, o.bbox.y1 - 2.0, o.bbox.x2 + 2.0, o.bbox.y2 + 2.0);
            crate::detector::iou(&grown, &b) == 0.0
        });
        if clear {
            return Some(b);
        }
    }
    None
}

/// Whether pixel center `(px, py)` lies inside the glyph, in unit box coordinates
/// `u, v ∈ [-1, 1]`.
fn inside(shape: GlyphShape, u: f64, v: f64, vertical: bool) -> (bool, f64) {
    let (u, v) = if vertical && matches!(shape, GlyphShape::Hull | GlyphShape::Plus) { (v, u) } else { (u, v) };
    match shape {
        GlyphShape::Hull => (u * u + v * v <= 1.0, 1.0),
        GlyphShape::Tank => {
            let r2 = u * u + v * v;
            (r2 <= 1.0, if r2 < 0.2 { 0.55 } else { 1.0 })
        }
        GlyphShape::Plus => {
            let body = v.abs() <= 0.22;
            let wing = u.abs() <= 0.18 && u > -0.6;
            (body || wing, 1.0)
        }
        GlyphShape::Rotor => {
            let r2 = u * u + v * v;
            let blade = (u - v).abs() <= 0.25 || (u + v).abs() <= 0.25;
            (r2 <= 1.0 && (blade || r2 <= 0.25), 1.0)
        }
        GlyphShape::Diamond => (u.abs() + v.abs() <= 1.0, 1.0),
        GlyphShape::Square => (u.abs() <= 0.9 && v.abs() <= 0.9, 1.0),
    }
}

fn render(spec: &WorldSpec, objects: &[SceneObject], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let s = spec.image_size;
    // Smooth neutral background: a few random low-frequency waves.
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.01..0.06),
                rng.gen_range(0.01..0.06),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.02..0.05),
            )
        })
        .collect();
    let base: f64 = rng.gen_range(0.38..0.48);
    let mut img = vec![0.0f64; 3 * s * s];
    for y in 0..s {
        for x in 0..s {
            let t: f64 = waves.iter().map(|&(fx, fy, ph, amp)| amp * (fx * x as f64 + fy * y as f64 + ph).sin()).sum();
            for c in 0..3 {
                img[(c * s + y) * s + x] = base + t + 0.02 * c as f64;
            }
        }
    }
    for o in objects {
        let spec_c = &spec.categories[o.class];
        let (cx, cy) = o.bbox.center();
        let (hw, hh) = (o.bbox.width() / 2.0, o.bbox.height() / 2.0);
        let vertical = o.bbox.height() > o.bbox.width();
        for y in o.bbox.y1 as usize..o.bbox.y2 as usize {
            for x in o.bbox.x1 as usize..o.bbox.x2 as usize {
                let u = (x as f64 + 0.5 - cx) / hw;
                let v = (y as f64 + 0.5 - cy) / hh;
                let (hit, shade) = inside(spec_c.shape, u, v, vertical);
                if hit {
                    for c in 0..3 {
                        img[(c * s + y) * s + x] = spec_c.color[c] * shade;
                    }
                }
            }
        }
    }
    let normal = rand_distr::Normal::new(0.0, spec.noise.max(1e-12)).expect("noise");
    img.iter()
        .map(|&v| {
            let n = if spec.noise > 0.0 { normal.sample(rng) } else { 0.0 };
            ((v + n).clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect()
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// `[B, 3, S, S]` batch of the given scenes, scaled to [0, 1].
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let per = 3 * self.image_size * self.image_size;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(self.scenes[i].pixels.iter().map(|&p| p as f64 / 255.0));
        }
        Tensor::from_parts(vec![indices.len(), 3, self.image_size, self.image_size], data)
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.scenes.iter().enumerate().flat_map(|(i, s)| s.ground_truth(i)).collect()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"SCDS")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.image_size as u32).to_le_bytes())?;
        w.write_all(&(self.scenes.len() as u32).to_le_bytes())?;
        for s in &self.scenes {
            w.write_all(&(s.context as u32).to_le_bytes())?;
            w.write_all(&(s.objects.len() as u32).to_le_bytes())?;
            for o in &s.objects {
                w.write_all(&(o.class as u32).to_le_bytes())?;
                for v in [o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.write_all(&s.pixels)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SCDS" {
            return Err(Error::Format("not a scene dataset file".into()));
        }
        let version = read_u32(r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let size = read_u32(r)? as usize;
        let n = read_u32(r)? as usize;
        let mut scenes = Vec::with_capacity(n);
        for _ in 0..n {
            let context = read_u32(r)? as usize;
            let count = read_u32(r)? as usize;
            let mut objects = Vec::with_capacity(count);
            for _ in 0..count {
                let class = read_u32(r)? as usize;
                let mut v = [0.0; 4];
                for x in v.iter_mut() {
                    let mut b = [0u8; 8];
                    r.read_exact(&mut b)?;
                    *x = f64::from_le_bytes(b);
                }
                objects.push(SceneObject { class, bbox: BBox::new(v[0], v[1], v[2], v[3]) });
            }
            let mut pixels = vec![0u8; 3 * size * size];
            r.read_exact(&mut pixels)?;
            scenes.push(Scene { context, objects, pixels });
        }
        Ok(Dataset { image_size: size, scenes })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Annotations as `image_id,context,class,x1,y1,x2,y2`.
    pub fn write_annotations<W: Write>(&self, w: &mut W, spec: &WorldSpec) -> Result<()> {
        writeln!(w, "image_id,context,class,x1,y1,x2,y2")?;
        for (i, s) in self.scenes.iter().enumerate() {
            for o in &s.objects {
                writeln!(
                    w,
                    "{i},{},{},{},{},{},{}",
                    spec.contexts[s.context].name,
                    spec.categories[o.class].name,
                    o.bbox.x1,
                    o.bbox.y1,
                    o.bbox.x2,
                    o.bbox.y2
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_world_is_valid_and_deterministic() {
        let spec = WorldSpec::default();
        let a = generate_dataset(&spec, 10, 0).unwrap();
        let b = generate_dataset(&spec, 10, 0).unwrap();
        assert_eq!(a, b);
        assert!(a.scenes.iter().all(|s| !s.objects.is_empty()));
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        assert_eq!(Dataset::read_from(&mut buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn undisambiguated_pair_is_rejected() {
        let mut spec = WorldSpec::default();
        spec.contexts[1].weights = spec.contexts[0].weights.clone();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn knowledge_graph_structure() {
        let kg = WorldSpec::default().knowledge_graph().unwrap();
        assert_eq!(kg.related("buoy", "appears_in"), vec!["harbor"]);
        assert_eq!(kg.related("beacon", "appears_in"), vec!["airfield"]);
        assert_eq!(kg.related("buoy", "similar_appearance"), vec!["beacon"]);
    }
}
