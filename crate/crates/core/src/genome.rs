//! Fixed-length bitstring genomes and their structured gene records.
//!
//! A genome is laid out as `FC | FS | B1 | ... | Bn`. Every block carries a
//! convolution group (`C S A A`), `max_pooling_layers` pooling-layer slots
//! (`PS_T PS_F PC S A A`) and a trailing post-convolution group (`S A A`).
//! Pooling layers whose pool size is 1x1 and convolution groups with no
//! channels are dormant: their remaining bits are still carried (and
//! inherited) but have no effect on the decoded network.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Values selected by the Gray-coded two-bit fields, in index order
/// `00, 01, 11, 10`.
const FC_VALUES: [u32; 4] = [32, 64, 128, 256];
const CG_VALUES: [Option<u32>; 4] = [None, Some(32), Some(64), Some(128)];
const POOL_VALUES: [u32; 4] = [1, 4, 16, 64];
const PC_VALUES: [u32; 4] = [16, 32, 64, 128];

const FC_BITS: usize = 2;
const CG_BITS: usize = 5;
const PL_BITS: usize = 9;
const PCG_BITS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("genome length mismatch: expected {expected} bits, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("illegal value {value} for field `{field}`")]
    IllegalValue { field: String, value: String },
    #[error("invalid character {ch:?} at position {position}")]
    InvalidChar { position: usize, ch: char },
    #[error("fs matrix has {actual} entries, layout requires {expected}")]
    SkipMatrix { expected: usize, actual: usize },
    #[error("expected {expected} blocks, record has {actual}")]
    BlockCount { expected: usize, actual: usize },
    #[error("block {block}: expected {expected} pooling-layer slots, record has {actual}")]
    PoolingSlots {
        block: usize,
        expected: usize,
        actual: usize,
    },
}

/// Shape parameters of the genome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenomeLayout {
    pub num_blocks: usize,
    pub max_pooling_layers: usize,
}

impl Default for GenomeLayout {
    fn default() -> Self {
        Self {
            num_blocks: 5,
            max_pooling_layers: 2,
        }
    }
}

impl GenomeLayout {
    pub fn new(num_blocks: usize, max_pooling_layers: usize) -> Self {
        Self {
            num_blocks,
            max_pooling_layers,
        }
    }

    /// Width of the inter-block skip field, `1 + 2 + ... + (num_blocks - 1)`.
    pub fn skip_bits(&self) -> usize {
        self.num_blocks * self.num_blocks.saturating_sub(1) / 2
    }

    pub fn block_bits(&self) -> usize {
        CG_BITS + PL_BITS * self.max_pooling_layers + PCG_BITS
    }

    pub fn total_bits(&self) -> usize {
        FC_BITS + self.skip_bits() + self.num_blocks * self.block_bits()
    }

    /// Offset of block `index` (0-based) within the genome.
    pub fn block_offset(&self, index: usize) -> usize {
        FC_BITS + self.skip_bits() + index * self.block_bits()
    }

    /// Position of the skip flag from block `from` to block `to` (0-based,
    /// `from < to`) inside the skip field.
    pub fn skip_index(&self, from: usize, to: usize) -> usize {
        debug_assert!(from < to && to < self.num_blocks);
        to * (to - 1) / 2 + from
    }

    /// Bit ranges (start, len) that are phenotype-inert for this record.
    pub fn dormant_ranges(&self, record: &GeneRecord) -> Vec<(usize, usize)> {
        let mut ranges = Vec::new();
        for (b, block) in record.blocks.iter().enumerate() {
            let base = self.block_offset(b);
            if block.cg.channels.is_none() {
                ranges.push((base + 2, 3));
            }
            for (j, pl) in block.pls.iter().enumerate() {
                if pl.is_dormant() {
                    ranges.push((base + CG_BITS + j * PL_BITS + 4, 5));
                }
            }
        }
        ranges
    }
}

/// A fixed-length architecture bitstring.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genome {
    bits: Vec<bool>,
}

impl Genome {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(layout: &GenomeLayout) -> Self {
        Self {
            bits: vec![false; layout.total_bits()],
        }
    }

    /// The hand-designed seed architecture used to start a search: FC=128,
    /// no inter-block skips, and five identical blocks with a 64-channel CG,
    /// one active 1x16 pooling layer and one dormant 1x1 slot.
    pub fn seed() -> Self {
        let block = "11100|001111100|000011100|100";
        let text = format!("11|0000000000|{block}|{block}|{block}|{block}|{block}");
        text.parse().expect("seed genome literal is well formed")
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn flip(&mut self, i: usize) {
        self.bits[i] = !self.bits[i];
    }

    pub fn hamming(&self, other: &Genome) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Plain `0`/`1` string with no separators.
    pub fn to_bit_string(&self) -> String {
        self.bits
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }

    /// Canonical text form `FC|FS|CG|PL..|PCG|...`, grouped for `layout`.
    pub fn to_text(&self, layout: &GenomeLayout) -> Result<String, CodecError> {
        check_len(self, layout)?;
        let raw = self.to_bit_string();
        let mut groups = vec![&raw[..FC_BITS], &raw[FC_BITS..FC_BITS + layout.skip_bits()]];
        for b in 0..layout.num_blocks {
            let mut start = layout.block_offset(b);
            let widths = std::iter::once(CG_BITS)
                .chain(std::iter::repeat_n(PL_BITS, layout.max_pooling_layers))
                .chain(std::iter::once(PCG_BITS));
            for w in widths {
                groups.push(&raw[start..start + w]);
                start += w;
            }
        }
        Ok(groups.join("|"))
    }

    /// Parses text for a specific layout, rejecting wrong bit counts.
    pub fn from_text(text: &str, layout: &GenomeLayout) -> Result<Self, CodecError> {
        let genome: Genome = text.parse()?;
        check_len(&genome, layout)?;
        Ok(genome)
    }
}

/// Parses any number of `0`/`1` digits, ignoring `|` separators and
/// whitespace. Positions in errors are 1-based character columns.
impl FromStr for Genome {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut bits = Vec::with_capacity(s.len());
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => bits.push(false),
                '1' => bits.push(true),
                '|' => {}
                c if c.is_whitespace() => {}
                c => {
                    return Err(CodecError::InvalidChar {
                        position: i + 1,
                        ch: c,
                    })
                }
            }
        }
        Ok(Self { bits })
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_text(&GenomeLayout::default()) {
            Ok(text) => f.write_str(&text),
            Err(_) => f.write_str(&self.to_bit_string()),
        }
    }
}

/// Serialized as the plain bit string.
impl Serialize for Genome {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_bit_string())
    }
}

impl<'de> Deserialize<'de> for Genome {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Sigmoid,
}

impl Activation {
    fn from_bit(bit: bool) -> Self {
        if bit {
            Activation::Sigmoid
        } else {
            Activation::Relu
        }
    }

    fn bit(self) -> bool {
        self == Activation::Sigmoid
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => f.write_str("ReLU"),
            Activation::Sigmoid => f.write_str("Sigmoid"),
        }
    }
}

/// `S-A-A`: residual flag plus one activation per convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PcgGene {
    pub skip: bool,
    pub activations: [Activation; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ConvGroupGene {
    /// `None` turns the group into a direct connection.
    pub channels: Option<u32>,
    pub pcg: PcgGene,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolingLayerGene {
    pub pool_time: u32,
    pub pool_freq: u32,
    pub channels: u32,
    pub pcg: PcgGene,
}

impl PoolingLayerGene {
    /// A disabled slot with zeroed payload.
    pub fn dormant() -> Self {
        Self {
            pool_time: 1,
            pool_freq: 1,
            channels: PC_VALUES[0],
            pcg: PcgGene::default(),
        }
    }

    pub fn is_dormant(&self) -> bool {
        self.pool_time == 1 && self.pool_freq == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockGene {
    pub cg: ConvGroupGene,
    pub pls: Vec<PoolingLayerGene>,
    pub pcg: PcgGene,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeneRecord {
    /// Output channels shared by every block's final PCG.
    pub fc_channels: u32,
    /// Skip flags in genome order: for destination block `q` (0-based,
    /// `q >= 1`), the flags for sources `0..q`.
    pub fs_matrix: Vec<bool>,
    pub blocks: Vec<BlockGene>,
}

impl GeneRecord {
    /// Whether the inter-block skip from block `from` to block `to` (both
    /// 0-based) is enabled.
    pub fn skip(&self, from: usize, to: usize) -> bool {
        from < to && to < self.blocks.len() && self.fs_matrix[to * (to - 1) / 2 + from]
    }
}

fn check_len(genome: &Genome, layout: &GenomeLayout) -> Result<(), CodecError> {
    if genome.len() != layout.total_bits() {
        return Err(CodecError::Length {
            expected: layout.total_bits(),
            actual: genome.len(),
        });
    }
    Ok(())
}

fn gray_index(hi: bool, lo: bool) -> usize {
    match (hi, lo) {
        (false, false) => 0,
        (false, true) => 1,
        (true, true) => 2,
        (true, false) => 3,
    }
}

fn gray_bits(index: usize) -> (bool, bool) {
    match index {
        0 => (false, false),
        1 => (false, true),
        2 => (true, true),
        _ => (true, false),
    }
}

struct BitReader<'a> {
    bits: &'a [bool],
    pos: usize,
}

impl BitReader<'_> {
    fn bit(&mut self) -> bool {
        let b = self.bits[self.pos];
        self.pos += 1;
        b
    }

    fn two(&mut self) -> usize {
        let hi = self.bit();
        let lo = self.bit();
        gray_index(hi, lo)
    }

    fn pcg(&mut self) -> PcgGene {
        PcgGene {
            skip: self.bit(),
            activations: [
                Activation::from_bit(self.bit()),
                Activation::from_bit(self.bit()),
            ],
        }
    }
}

/// Decodes every field, dormant payloads included. Total for any genome
/// of the right length.
pub fn decode_genome(genome: &Genome, layout: &GenomeLayout) -> Result<GeneRecord, CodecError> {
    check_len(genome, layout)?;
    let mut r = BitReader {
        bits: genome.bits(),
        pos: 0,
    };
    let fc_channels = FC_VALUES[r.two()];
    let fs_matrix = (0..layout.skip_bits()).map(|_| r.bit()).collect();
    let blocks = (0..layout.num_blocks)
        .map(|_| {
            let channels = CG_VALUES[r.two()];
            let cg = ConvGroupGene {
                channels,
                pcg: r.pcg(),
            };
            let pls = (0..layout.max_pooling_layers)
                .map(|_| PoolingLayerGene {
                    pool_time: POOL_VALUES[r.two()],
                    pool_freq: POOL_VALUES[r.two()],
                    channels: PC_VALUES[r.two()],
                    pcg: r.pcg(),
                })
                .collect();
            BlockGene {
                cg,
                pls,
                pcg: r.pcg(),
            }
        })
        .collect();
    debug_assert_eq!(r.pos, layout.total_bits());
    Ok(GeneRecord {
        fc_channels,
        fs_matrix,
        blocks,
    })
}

struct BitWriter {
    bits: Vec<bool>,
}

impl BitWriter {
    fn two<T: PartialEq + fmt::Debug>(
        &mut self,
        values: &[T; 4],
        value: &T,
        field: impl FnOnce() -> String,
    ) -> Result<(), CodecError> {
        let index =
            values
                .iter()
                .position(|v| v == value)
                .ok_or_else(|| CodecError::IllegalValue {
                    field: field(),
                    value: format!("{value:?}"),
                })?;
        let (hi, lo) = gray_bits(index);
        self.bits.push(hi);
        self.bits.push(lo);
        Ok(())
    }

    fn pcg(&mut self, pcg: &PcgGene) {
        self.bits.push(pcg.skip);
        self.bits.push(pcg.activations[0].bit());
        self.bits.push(pcg.activations[1].bit());
    }
}

/// Inverse of [`decode_genome`]; validates every field against its legal
/// value set.
pub fn encode_record(record: &GeneRecord, layout: &GenomeLayout) -> Result<Genome, CodecError> {
    if record.fs_matrix.len() != layout.skip_bits() {
        return Err(CodecError::SkipMatrix {
            expected: layout.skip_bits(),
            actual: record.fs_matrix.len(),
        });
    }
    if record.blocks.len() != layout.num_blocks {
        return Err(CodecError::BlockCount {
            expected: layout.num_blocks,
            actual: record.blocks.len(),
        });
    }
    let mut w = BitWriter {
        bits: Vec::with_capacity(layout.total_bits()),
    };
    w.two(&FC_VALUES, &record.fc_channels, || "fc_channels".into())?;
    w.bits.extend_from_slice(&record.fs_matrix);
    for (b, block) in record.blocks.iter().enumerate() {
        if block.pls.len() != layout.max_pooling_layers {
            return Err(CodecError::PoolingSlots {
                block: b + 1,
                expected: layout.max_pooling_layers,
                actual: block.pls.len(),
            });
        }
        w.two(&CG_VALUES, &block.cg.channels, || {
            format!("blocks[{b}].cg.channels")
        })?;
        w.pcg(&block.cg.pcg);
        for (j, pl) in block.pls.iter().enumerate() {
            w.two(&POOL_VALUES, &pl.pool_time, || {
                format!("blocks[{b}].pls[{j}].pool_time")
            })?;
            w.two(&POOL_VALUES, &pl.pool_freq, || {
                format!("blocks[{b}].pls[{j}].pool_freq")
            })?;
            w.two(&PC_VALUES, &pl.channels, || {
                format!("blocks[{b}].pls[{j}].channels")
            })?;
            w.pcg(&pl.pcg);
        }
        w.pcg(&block.pcg);
    }
    Ok(Genome::from_bits(w.bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn relu_skip() -> PcgGene {
        PcgGene {
            skip: true,
            activations: [Activation::Relu; 2],
        }
    }

    #[test]
    fn default_layout_is_142_bits() {
        let layout = GenomeLayout::default();
        assert_eq!(layout.skip_bits(), 10);
        assert_eq!(layout.block_bits(), 26);
        assert_eq!(layout.total_bits(), 142);
    }

    #[test]
    fn total_bits_is_linear_in_pooling_slots() {
        for j in 0..6 {
            let a = GenomeLayout::new(5, j).total_bits();
            let b = GenomeLayout::new(5, j + 1).total_bits();
            assert_eq!(b - a, 9 * 5);
        }
    }

    #[test]
    fn seed_decodes_to_reference_table() {
        let layout = GenomeLayout::default();
        let record = decode_genome(&Genome::seed(), &layout).unwrap();
        assert_eq!(record.fc_channels, 128);
        assert!(record.fs_matrix.iter().all(|b| !b));
        assert_eq!(record.blocks.len(), 5);
        for block in &record.blocks {
            assert_eq!(block.cg.channels, Some(64));
            assert_eq!(block.cg.pcg, relu_skip());
            assert_eq!(
                block.pls[0],
                PoolingLayerGene {
                    pool_time: 1,
                    pool_freq: 16,
                    channels: 64,
                    pcg: relu_skip()
                }
            );
            assert!(block.pls[1].is_dormant());
            // dormant payload is carried verbatim
            assert_eq!(block.pls[1].channels, 64);
            assert_eq!(block.pls[1].pcg, relu_skip());
            assert_eq!(block.pcg, relu_skip());
        }
    }

    #[test]
    fn zero_genome_decodes_to_minimal_record() {
        let layout = GenomeLayout::default();
        let record = decode_genome(&Genome::zeros(&layout), &layout).unwrap();
        assert_eq!(record.fc_channels, 32);
        assert!(record.fs_matrix.iter().all(|b| !b));
        for block in &record.blocks {
            assert_eq!(block.cg.channels, None);
            assert_eq!(block.cg.pcg, PcgGene::default());
            assert!(block.pls.iter().all(|pl| pl.is_dormant()));
            assert_eq!(block.pcg, PcgGene::default());
        }
    }

    #[test]
    fn pool_size_gray_code() {
        let layout = GenomeLayout::default();
        let mut g = Genome::zeros(&layout);
        let pl = layout.block_offset(0) + 5;
        // PS_T = "11", PS_F = "10"
        g.set(pl, true);
        g.set(pl + 1, true);
        g.set(pl + 2, true);
        let record = decode_genome(&g, &layout).unwrap();
        assert_eq!(
            (
                record.blocks[0].pls[0].pool_time,
                record.blocks[0].pls[0].pool_freq
            ),
            (16, 64)
        );
    }

    #[test]
    fn fc_256_encodes_as_10() {
        let layout = GenomeLayout::default();
        let mut record = decode_genome(&Genome::seed(), &layout).unwrap();
        record.fc_channels = 256;
        let g = encode_record(&record, &layout).unwrap();
        assert_eq!((g.bit(0), g.bit(1)), (true, false));
    }

    #[test]
    fn seed_round_trips() {
        let layout = GenomeLayout::default();
        let seed = Genome::seed();
        let back = encode_record(&decode_genome(&seed, &layout).unwrap(), &layout).unwrap();
        assert_eq!(back, seed);
    }

    #[test]
    fn defaulted_dormant_slot_encodes_as_zero_bits() {
        let layout = GenomeLayout::default();
        let mut record = decode_genome(&Genome::seed(), &layout).unwrap();
        record.blocks[2].pls[1] = PoolingLayerGene::dormant();
        let g = encode_record(&record, &layout).unwrap();
        let start = layout.block_offset(2) + 5 + 9;
        assert!((start..start + 9).all(|i| !g.bit(i)));
    }

    #[test]
    fn illegal_values_name_the_field() {
        let layout = GenomeLayout::default();
        let mut record = decode_genome(&Genome::seed(), &layout).unwrap();
        record.fc_channels = 100;
        match encode_record(&record, &layout) {
            Err(CodecError::IllegalValue { field, .. }) => assert_eq!(field, "fc_channels"),
            other => panic!("unexpected {other:?}"),
        }
        let mut record = decode_genome(&Genome::seed(), &layout).unwrap();
        record.blocks[3].pls[0].pool_freq = 8;
        match encode_record(&record, &layout) {
            Err(CodecError::IllegalValue { field, .. }) => {
                assert_eq!(field, "blocks[3].pls[0].pool_freq")
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut record = decode_genome(&Genome::seed(), &layout).unwrap();
        record.blocks[0].cg.channels = Some(16);
        assert!(matches!(
            encode_record(&record, &layout),
            Err(CodecError::IllegalValue { .. })
        ));
    }

    #[test]
    fn skip_flag_reading_order() {
        let layout = GenomeLayout::default();
        assert_eq!(layout.skip_index(0, 1), 0);
        assert_eq!(layout.skip_index(0, 2), 1);
        assert_eq!(layout.skip_index(1, 2), 2);
        assert_eq!(layout.skip_index(3, 4), 9);
        let mut g = Genome::zeros(&layout);
        g.set(2, true); // first FS bit
        let record = decode_genome(&g, &layout).unwrap();
        assert!(record.skip(0, 1));
        assert!(!record.skip(0, 2));
    }

    #[test]
    fn text_form() {
        let layout = GenomeLayout::default();
        let zeros = "0".repeat(142);
        assert_eq!(
            Genome::from_text(&zeros, &layout).unwrap(),
            Genome::zeros(&layout)
        );

        let seed = Genome::seed();
        let text = seed.to_text(&layout).unwrap();
        assert_eq!(text.split('|').count(), 22);
        assert!(text.starts_with("11|0000000000|11100|001111100|000011100|100|"));
        let noisy = text.replace('|', " \n");
        assert_eq!(
            Genome::from_text(&noisy, &layout)
                .unwrap()
                .to_text(&layout)
                .unwrap(),
            text
        );

        let short = "0".repeat(141);
        assert_eq!(
            Genome::from_text(&short, &layout),
            Err(CodecError::Length {
                expected: 142,
                actual: 141
            })
        );
        assert_eq!(
            Genome::from_text("01|0x1", &layout),
            Err(CodecError::InvalidChar {
                position: 5,
                ch: 'x'
            })
        );
    }

    #[test]
    fn decode_rejects_wrong_length() {
        let layout = GenomeLayout::default();
        let g = Genome::from_bits(vec![false; 143]);
        assert!(matches!(
            decode_genome(&g, &layout),
            Err(CodecError::Length {
                expected: 142,
                actual: 143
            })
        ));
    }

    proptest! {
        #[test]
        fn any_genome_round_trips(bits in proptest::collection::vec(any::<bool>(), 142)) {
            let layout = GenomeLayout::default();
            let g = Genome::from_bits(bits);
            let record = decode_genome(&g, &layout).unwrap();
            prop_assert_eq!(encode_record(&record, &layout).unwrap(), g);
        }

        #[test]
        fn other_layouts_round_trip(blocks in 1usize..7, slots in 0usize..4, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let layout = GenomeLayout::new(blocks, slots);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = Genome::from_bits((0..layout.total_bits()).map(|_| rng.gen()).collect());
            let record = decode_genome(&g, &layout).unwrap();
            prop_assert_eq!(encode_record(&record, &layout).unwrap(), g);
        }
    }
}
