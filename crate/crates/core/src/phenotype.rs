//! Decoded network structure, shape propagation and analytic complexity.
//!
//! Blocks consume a `(freq, time, channels)` tensor. Each block runs an
//! optional convolution group, feeds its output to every active pooling
//! layer (average pool, PCG, nearest-neighbour upsample), concatenates the
//! group output with the pooling-layer outputs, and finishes with a PCG at
//! the shared block-output width. A 3x3 mask head maps the last block to
//! two mask channels.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{Activation, GeneRecord, PcgGene};

pub const KERNEL_SIZE: u64 = 3;
pub const INPUT_FREQ_BINS: u32 = 512;
pub const INPUT_FRAMES: u32 = 64;
pub const MASK_CHANNELS: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShapeError {
    #[error("{layer}: pool {pool_freq}x{pool_time} does not divide input {freq}x{time}")]
    NonDivisiblePool {
        layer: String,
        pool_freq: u32,
        pool_time: u32,
        freq: u32,
        time: u32,
    },
    #[error("{layer}: expected {expected} input channels, got {actual}")]
    ChannelMismatch {
        layer: String,
        expected: u32,
        actual: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub freq: u32,
    pub time: u32,
    pub channels: u32,
}

impl TensorShape {
    pub fn new(freq: u32, time: u32, channels: u32) -> Self {
        Self {
            freq,
            time,
            channels,
        }
    }

    pub fn with_channels(self, channels: u32) -> Self {
        Self { channels, ..self }
    }

    pub fn area(&self) -> u64 {
        self.freq as u64 * self.time as u64
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.freq, self.time, self.channels)
    }
}

/// How a convolution group's residual connection is wired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Residual {
    None,
    /// Group input added to group output (channel counts match).
    Input,
    /// First convolution's output added to group output.
    FirstConv,
}

/// Two stacked 3x3 convolutions, `in_channels -> channels -> channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvGroupSpec {
    pub in_channels: u32,
    pub channels: u32,
    pub activations: [Activation; 2],
    pub residual: Residual,
}

impl ConvGroupSpec {
    fn from_gene(in_channels: u32, channels: u32, gene: &PcgGene) -> Self {
        let residual = match (gene.skip, in_channels == channels) {
            (false, _) => Residual::None,
            (true, true) => Residual::Input,
            (true, false) => Residual::FirstConv,
        };
        Self {
            in_channels,
            channels,
            activations: gene.activations,
            residual,
        }
    }

    /// The two convolutions as `(in, out)` channel pairs.
    pub fn convs(&self) -> [(u32, u32); 2] {
        [
            (self.in_channels, self.channels),
            (self.channels, self.channels),
        ]
    }

    fn sigmoid_count(&self) -> usize {
        self.activations
            .iter()
            .filter(|a| **a == Activation::Sigmoid)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolingLayerSpec {
    pub pool_time: u32,
    pub pool_freq: u32,
    pub pcg: ConvGroupSpec,
}

impl PoolingLayerSpec {
    pub fn area(&self) -> u32 {
        self.pool_time * self.pool_freq
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    /// 1-based block number.
    pub index: usize,
    pub input_channels: u32,
    pub cg: Option<ConvGroupSpec>,
    pub pooling_layers: Vec<PoolingLayerSpec>,
    pub concat_channels: u32,
    pub pcg: ConvGroupSpec,
}

impl BlockSpec {
    /// Width of the tensor fed to pooling layers and the concatenation.
    pub fn trunk_channels(&self) -> u32 {
        self.cg.map_or(self.input_channels, |cg| cg.channels)
    }
}

/// Element-wise addition of block `from`'s output into block `to`'s input
/// (1-based block numbers).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSkip {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskHead {
    pub in_channels: u32,
    pub out_channels: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input: TensorShape,
    pub fc_channels: u32,
    pub blocks: Vec<BlockSpec>,
    pub skips: Vec<BlockSkip>,
    pub mask_head: MaskHead,
}

/// Builds the phenotype. Dormant pooling layers and empty convolution
/// groups are dropped here.
pub fn build_architecture(record: &GeneRecord) -> ArchitectureSpec {
    let fc = record.fc_channels;
    let mut blocks = Vec::with_capacity(record.blocks.len());
    let mut input_channels = 1;
    for (b, gene) in record.blocks.iter().enumerate() {
        let cg = gene
            .cg
            .channels
            .map(|c| ConvGroupSpec::from_gene(input_channels, c, &gene.cg.pcg));
        let trunk = cg.map_or(input_channels, |cg| cg.channels);
        let pooling_layers: Vec<_> = gene
            .pls
            .iter()
            .filter(|pl| !pl.is_dormant())
            .map(|pl| PoolingLayerSpec {
                pool_time: pl.pool_time,
                pool_freq: pl.pool_freq,
                pcg: ConvGroupSpec::from_gene(trunk, pl.channels, &pl.pcg),
            })
            .collect();
        let concat_channels = trunk + pooling_layers.iter().map(|pl| pl.pcg.channels).sum::<u32>();
        blocks.push(BlockSpec {
            index: b + 1,
            input_channels,
            cg,
            pooling_layers,
            concat_channels,
            pcg: ConvGroupSpec::from_gene(concat_channels, fc, &gene.pcg),
        });
        input_channels = fc;
    }
    let n = record.blocks.len();
    let skips = (1..n)
        .flat_map(|to| (0..to).map(move |from| (from, to)))
        .filter(|&(from, to)| record.skip(from, to))
        .map(|(from, to)| BlockSkip {
            from: from + 1,
            to: to + 1,
        })
        .collect();
    ArchitectureSpec {
        input: TensorShape::new(INPUT_FREQ_BINS, INPUT_FRAMES, 1),
        fc_channels: fc,
        blocks,
        skips,
        mask_head: MaskHead {
            in_channels: fc,
            out_channels: MASK_CHANNELS,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    AvgPool,
    Upsample,
    Concat,
    Add,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub kind: LayerKind,
    pub input: TensorShape,
    pub output: TensorShape,
}

/// One 3x3 convolution with stride 1 and same padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub in_channels: u32,
    pub out_channels: u32,
    pub freq: u32,
    pub time: u32,
}

impl ConvLayer {
    pub fn weights(&self) -> u64 {
        KERNEL_SIZE * KERNEL_SIZE * self.in_channels as u64 * self.out_channels as u64
    }

    pub fn biases(&self) -> u64 {
        self.out_channels as u64
    }

    /// Multiply-adds counted as two operations per weight per output pixel.
    pub fn flops(&self) -> u64 {
        2 * self.weights() * self.freq as u64 * self.time as u64
    }
}

struct Tracer {
    layers: Vec<LayerShape>,
}

impl Tracer {
    fn push(&mut self, name: String, kind: LayerKind, input: TensorShape, output: TensorShape) {
        self.layers.push(LayerShape {
            name,
            kind,
            input,
            output,
        });
    }

    fn conv_group(
        &mut self,
        prefix: &str,
        group: &ConvGroupSpec,
        input: TensorShape,
    ) -> Result<TensorShape, ShapeError> {
        if input.channels != group.in_channels {
            return Err(ShapeError::ChannelMismatch {
                layer: format!("{prefix}.conv1"),
                expected: group.in_channels,
                actual: input.channels,
            });
        }
        let mid = input.with_channels(group.channels);
        self.push(format!("{prefix}.conv1"), LayerKind::Conv, input, mid);
        self.push(format!("{prefix}.conv2"), LayerKind::Conv, mid, mid);
        Ok(mid)
    }
}

/// Annotates every layer with its input and output shape.
pub fn propagate_shapes(arch: &ArchitectureSpec) -> Result<Vec<LayerShape>, ShapeError> {
    let mut t = Tracer { layers: Vec::new() };
    let mut outputs: Vec<TensorShape> = Vec::with_capacity(arch.blocks.len());
    let mut current = arch.input;
    for block in &arch.blocks {
        let name = format!("block{}", block.index);
        let incoming: Vec<_> = arch.skips.iter().filter(|s| s.to == block.index).collect();
        if !incoming.is_empty() {
            for skip in &incoming {
                let src = outputs[skip.from - 1];
                if src != current {
                    return Err(ShapeError::ChannelMismatch {
                        layer: format!("{name}.skip_add"),
                        expected: current.channels,
                        actual: src.channels,
                    });
                }
            }
            t.push(format!("{name}.skip_add"), LayerKind::Add, current, current);
        }
        let trunk = match &block.cg {
            Some(cg) => t.conv_group(&format!("{name}.cg"), cg, current)?,
            None => current,
        };
        let mut concat = trunk.channels;
        for (j, pl) in block.pooling_layers.iter().enumerate() {
            let prefix = format!("{name}.pl{}", j + 1);
            if trunk.freq % pl.pool_freq != 0 || trunk.time % pl.pool_time != 0 {
                return Err(ShapeError::NonDivisiblePool {
                    layer: format!("{prefix}.pool"),
                    pool_freq: pl.pool_freq,
                    pool_time: pl.pool_time,
                    freq: trunk.freq,
                    time: trunk.time,
                });
            }
            let pooled = TensorShape::new(
                trunk.freq / pl.pool_freq,
                trunk.time / pl.pool_time,
                trunk.channels,
            );
            t.push(format!("{prefix}.pool"), LayerKind::AvgPool, trunk, pooled);
            let out = t.conv_group(&format!("{prefix}.pcg"), &pl.pcg, pooled)?;
            let up = TensorShape::new(trunk.freq, trunk.time, out.channels);
            t.push(format!("{prefix}.upsample"), LayerKind::Upsample, out, up);
            concat += out.channels;
        }
        let joined = trunk.with_channels(concat);
        if !block.pooling_layers.is_empty() {
            t.push(format!("{name}.concat"), LayerKind::Concat, trunk, joined);
        }
        current = t.conv_group(&format!("{name}.pcg"), &block.pcg, joined)?;
        outputs.push(current);
    }
    let head = current.with_channels(arch.mask_head.out_channels);
    t.push("mask_head".into(), LayerKind::Conv, current, head);
    Ok(t.layers)
}

/// Every convolution in execution order, at its working resolution.
pub fn conv_layers(arch: &ArchitectureSpec) -> Vec<ConvLayer> {
    let full = arch.input;
    let mut out = Vec::new();
    let group =
        |out: &mut Vec<ConvLayer>, prefix: String, g: &ConvGroupSpec, freq: u32, time: u32| {
            for (k, (cin, cout)) in g.convs().into_iter().enumerate() {
                out.push(ConvLayer {
                    name: format!("{prefix}.conv{}", k + 1),
                    in_channels: cin,
                    out_channels: cout,
                    freq,
                    time,
                });
            }
        };
    for block in &arch.blocks {
        let name = format!("block{}", block.index);
        if let Some(cg) = &block.cg {
            group(&mut out, format!("{name}.cg"), cg, full.freq, full.time);
        }
        for (j, pl) in block.pooling_layers.iter().enumerate() {
            group(
                &mut out,
                format!("{name}.pl{}.pcg", j + 1),
                &pl.pcg,
                full.freq / pl.pool_freq,
                full.time / pl.pool_time,
            );
        }
        group(
            &mut out,
            format!("{name}.pcg"),
            &block.pcg,
            full.freq,
            full.time,
        );
    }
    out.push(ConvLayer {
        name: "mask_head".into(),
        in_channels: arch.mask_head.in_channels,
        out_channels: arch.mask_head.out_channels,
        freq: full.freq,
        time: full.time,
    });
    out
}

/// Trainable parameters: convolution weights plus biases.
pub fn count_params(arch: &ArchitectureSpec) -> u64 {
    conv_layers(arch)
        .iter()
        .map(|c| c.weights() + c.biases())
        .sum()
}

/// Convolution weights only.
pub fn count_weights(arch: &ArchitectureSpec) -> u64 {
    conv_layers(arch).iter().map(ConvLayer::weights).sum()
}

/// Inference FLOPs for one input patch; pooling, upsampling, additions and
/// activations are not counted.
pub fn count_flops(arch: &ArchitectureSpec) -> u64 {
    conv_layers(arch).iter().map(ConvLayer::flops).sum()
}

/// Activations set to sigmoid in any live convolution.
pub fn sigmoid_count(arch: &ArchitectureSpec) -> usize {
    arch.blocks
        .iter()
        .map(|b| {
            b.cg.map_or(0, |cg| cg.sigmoid_count())
                + b.pooling_layers
                    .iter()
                    .map(|pl| pl.pcg.sigmoid_count())
                    .sum::<usize>()
                + b.pcg.sigmoid_count()
        })
        .sum()
}

/// Number of distinct pooling areas `T*F` across all active pooling layers.
pub fn distinct_pool_areas(arch: &ArchitectureSpec) -> usize {
    let mut areas: Vec<u32> = arch
        .blocks
        .iter()
        .flat_map(|b| b.pooling_layers.iter().map(PoolingLayerSpec::area))
        .collect();
    areas.sort_unstable();
    areas.dedup();
    areas.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{decode_genome, Genome, GenomeLayout, PoolingLayerGene};

    fn seed_arch() -> ArchitectureSpec {
        let layout = GenomeLayout::default();
        build_architecture(&decode_genome(&Genome::seed(), &layout).unwrap())
    }

    #[test]
    fn seed_structure() {
        let arch = seed_arch();
        assert_eq!(arch.blocks.len(), 5);
        assert!(arch.skips.is_empty());
        for (i, block) in arch.blocks.iter().enumerate() {
            let cg = block.cg.unwrap();
            assert_eq!(cg.in_channels, if i == 0 { 1 } else { 128 });
            assert_eq!(cg.channels, 64);
            assert_eq!(cg.residual, Residual::FirstConv);
            assert_eq!(block.pooling_layers.len(), 1);
            let pl = block.pooling_layers[0];
            assert_eq!((pl.pool_freq, pl.pool_time, pl.pcg.channels), (16, 1, 64));
            assert_eq!(pl.pcg.residual, Residual::Input);
            assert_eq!(block.concat_channels, 128);
            assert_eq!(block.pcg.channels, 128);
            assert_eq!(block.pcg.residual, Residual::Input);
        }
        assert_eq!(
            arch.mask_head,
            MaskHead {
                in_channels: 128,
                out_channels: 2
            }
        );
    }

    #[test]
    fn seed_counts() {
        let arch = seed_arch();
        assert_eq!(count_weights(&arch), 2_325_312);
        assert_eq!(count_params(&arch), 2_327_874);
        assert_eq!(count_flops(&arch), 129_742_405_632);
    }

    #[test]
    fn single_conv_costs() {
        let c = ConvLayer {
            name: "c".into(),
            in_channels: 1,
            out_channels: 64,
            freq: 512,
            time: 64,
        };
        assert_eq!((c.weights(), c.biases()), (576, 64));
        let c = ConvLayer {
            name: "c".into(),
            in_channels: 64,
            out_channels: 64,
            freq: 512,
            time: 64,
        };
        assert_eq!(c.flops(), 2_415_919_104);
        let pooled = ConvLayer {
            freq: 32,
            time: 64,
            ..c.clone()
        };
        assert_eq!(pooled.flops() * 16, c.flops());
    }

    #[test]
    fn empty_block_reduces_to_pcg() {
        let layout = GenomeLayout::default();
        let record = decode_genome(&Genome::zeros(&layout), &layout).unwrap();
        let arch = build_architecture(&record);
        let b0 = &arch.blocks[0];
        assert!(b0.cg.is_none());
        assert!(b0.pooling_layers.is_empty());
        assert_eq!(b0.concat_channels, 1);
        assert_eq!(b0.pcg.in_channels, 1);
        assert_eq!(b0.pcg.channels, 32);
        // 5 block PCGs + head
        assert_eq!(conv_layers(&arch).len(), 11);
    }

    #[test]
    fn single_pooling_layer_from_raw_input() {
        let layout = GenomeLayout::default();
        let mut record = decode_genome(&Genome::zeros(&layout), &layout).unwrap();
        record.blocks[0].pls[0] = PoolingLayerGene {
            pool_time: 4,
            pool_freq: 4,
            ..PoolingLayerGene::dormant()
        };
        let arch = build_architecture(&record);
        let b0 = &arch.blocks[0];
        assert_eq!(b0.pooling_layers[0].pcg.convs(), [(1, 16), (16, 16)]);
        assert_eq!(b0.concat_channels, 17);
        let layers = conv_layers(&arch);
        let pl: u64 = layers
            .iter()
            .filter(|l| l.name.starts_with("block1.pl1"))
            .map(ConvLayer::weights)
            .sum();
        assert_eq!(pl, 9 * 16 + 9 * 16 * 16);
    }

    #[test]
    fn skip_into_second_block() {
        let layout = GenomeLayout::default();
        let mut g = Genome::seed();
        g.set(2, true);
        let arch = build_architecture(&decode_genome(&g, &layout).unwrap());
        assert_eq!(arch.skips, vec![BlockSkip { from: 1, to: 2 }]);
        let shapes = propagate_shapes(&arch).unwrap();
        let add = shapes.iter().find(|l| l.name == "block2.skip_add").unwrap();
        assert_eq!(add.kind, LayerKind::Add);
        assert_eq!(add.input, TensorShape::new(512, 64, 128));
        // skips are parameter free
        assert_eq!(count_params(&arch), count_params(&seed_arch()));
    }

    #[test]
    fn pooled_shapes() {
        let arch = seed_arch();
        let shapes = propagate_shapes(&arch).unwrap();
        let pool = shapes.iter().find(|l| l.name == "block1.pl1.pool").unwrap();
        assert_eq!(pool.input, TensorShape::new(512, 64, 64));
        assert_eq!(pool.output, TensorShape::new(32, 64, 64));
        let up = shapes
            .iter()
            .find(|l| l.name == "block1.pl1.upsample")
            .unwrap();
        assert_eq!(up.output, TensorShape::new(512, 64, 64));
        assert_eq!(shapes.last().unwrap().output, TensorShape::new(512, 64, 2));

        let layout = GenomeLayout::default();
        let mut record = decode_genome(&Genome::seed(), &layout).unwrap();
        record.blocks[0].pls[0].pool_time = 64;
        record.blocks[0].pls[0].pool_freq = 64;
        let shapes = propagate_shapes(&build_architecture(&record)).unwrap();
        let pool = shapes.iter().find(|l| l.name == "block1.pl1.pool").unwrap();
        assert_eq!((pool.output.freq, pool.output.time), (8, 1));
        assert!(shapes
            .iter()
            .all(|l| !(l.kind == LayerKind::AvgPool && l.input == l.output)));
    }

    #[test]
    fn non_divisible_pool_is_rejected() {
        let mut arch = seed_arch();
        arch.blocks[0].pooling_layers[0].pool_freq = 3;
        assert!(matches!(
            propagate_shapes(&arch),
            Err(ShapeError::NonDivisiblePool { .. })
        ));
    }

    #[test]
    fn adding_a_pooling_layer_increases_cost() {
        let layout = GenomeLayout::default();
        let base = decode_genome(&Genome::seed(), &layout).unwrap();
        let mut more = base.clone();
        more.blocks[2].pls[1].pool_time = 4;
        let (a, b) = (build_architecture(&base), build_architecture(&more));
        assert!(count_params(&b) > count_params(&a));
        assert!(count_flops(&b) > count_flops(&a));
    }

    #[test]
    fn surrogate_features() {
        let arch = seed_arch();
        assert_eq!(distinct_pool_areas(&arch), 1);
        assert_eq!(sigmoid_count(&arch), 0);
    }
}
