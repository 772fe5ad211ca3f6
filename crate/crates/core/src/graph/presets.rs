use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::LayerOp;

use super::{LayerDecl, ModelGraph};

/// A named architecture available to the CLI.
pub trait ArchitecturePreset: Send + Sync {
    fn name(&self) -> &'static str;
    fn blueprint(&self, num_classes: usize) -> Vec<LayerDecl>;
}

fn conv_stack(cfg: &[Option<usize>], num_classes: usize) -> Vec<LayerDecl> {
    let mut decls = Vec::new();
    let (mut conv, mut pool) = (0, 0);
    for entry in cfg {
        match entry {
            Some(width) => {
                conv += 1;
                decls.push(LayerDecl::conv(&format!("conv{conv}"), *width, 3, 1, 1));
                decls.push(LayerDecl::simple(&format!("relu{conv}"), LayerOp::Relu));
            }
            None => {
                pool += 1;
                decls.push(LayerDecl::simple(
                    &format!("pool{pool}"),
                    LayerOp::MaxPool { size: 2 },
                ));
            }
        }
    }
    decls.push(LayerDecl::simple("flatten", LayerOp::Flatten));
    decls.push(LayerDecl::linear("fc", num_classes));
    decls
}

/// Six 3×3 convolutions in three pooled stages (16-32 / 64-64 / 128-128).
struct TinyVgg6;

impl ArchitecturePreset for TinyVgg6 {
    fn name(&self) -> &'static str {
        "tinyvgg6"
    }

    fn blueprint(&self, num_classes: usize) -> Vec<LayerDecl> {
        conv_stack(
            &[Some(16), Some(32), None, Some(64), Some(64), None, Some(128), Some(128), None],
            num_classes,
        )
    }
}

/// The 13-convolution VGG-16 feature extractor with a single linear classifier.
struct Vgg16;

impl ArchitecturePreset for Vgg16 {
    fn name(&self) -> &'static str {
        "vgg16"
    }

    fn blueprint(&self, num_classes: usize) -> Vec<LayerDecl> {
        let s = Some;
        conv_stack(
            &[
                s(64), s(64), None,
                s(128), s(128), None,
                s(256), s(256), s(256), None,
                s(512), s(512), s(512), None,
                s(512), s(512), s(512), None,
            ],
            num_classes,
        )
    }
}

/// Name → architecture lookup.
pub struct PresetRegistry {
    presets: Vec<Box<dyn ArchitecturePreset>>,
}

impl Default for PresetRegistry {
    fn default() -> Self {
        let mut r = Self { presets: Vec::new() };
        r.register(Box::new(TinyVgg6));
        r.register(Box::new(Vgg16));
        r
    }
}

impl PresetRegistry {
    pub fn register(&mut self, preset: Box<dyn ArchitecturePreset>) {
        self.presets.retain(|p| p.name() != preset.name());
        self.presets.push(preset);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.presets.iter().map(|p| p.name()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn ArchitecturePreset> {
        self.presets
            .iter()
            .find(|p| p.name() == name)
            .map(|p| p.as_ref())
            .ok_or_else(|| Error::UnknownName {
                kind: "architecture",
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn build(&self, name: &str, input_shape: [usize; 3], num_classes: usize, seed: u64) -> Result<ModelGraph> {
        let preset = self.get(name)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelGraph::from_blueprint(input_shape, &preset.blueprint(num_classes), &mut rng)
    }
}

pub fn preset_names() -> Vec<&'static str> {
    PresetRegistry::default().names()
}

/// Build a built-in architecture for 10 classes, initialized from `seed`.
pub fn build_preset(name: &str, input_shape: [usize; 3], seed: u64) -> Result<ModelGraph> {
    PresetRegistry::default().build(name, input_shape, 10, seed)
}
