//! Plain-text architecture report for a genome.

use std::fmt::Write;

use thiserror::Error;

use crate::genome::{decode_genome, CodecError, Genome, GenomeLayout, PcgGene};
use crate::phenotype::{
    build_architecture, count_flops, count_params, propagate_shapes, LayerKind, ShapeError,
    TensorShape,
};

#[derive(Debug, Error)]
pub enum DescribeError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// `1234567` becomes `1,234,567`.
pub fn group_digits(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn pcg_text(p: &PcgGene) -> String {
    format!(
        "S={} {}/{}",
        p.skip as u8, p.activations[0], p.activations[1]
    )
}

fn shape_text(s: &TensorShape) -> String {
    format!("{}x{}x{}", s.freq, s.time, s.channels)
}

fn kind_text(k: LayerKind) -> &'static str {
    match k {
        LayerKind::Conv => "conv3x3",
        LayerKind::AvgPool => "avgpool",
        LayerKind::Upsample => "upsample",
        LayerKind::Concat => "concat",
        LayerKind::Add => "add",
    }
}

/// Parses `text` and reports the decoded genes, every layer's shape and the
/// parameter and FLOP totals.
pub fn describe(text: &str, layout: &GenomeLayout) -> Result<String, DescribeError> {
    let genome = Genome::from_text(text, layout)?;
    let record = decode_genome(&genome, layout)?;
    let arch = build_architecture(&record);
    let shapes = propagate_shapes(&arch)?;

    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "genome  {}", genome.to_text(layout)?).unwrap();
    writeln!(w, "FC      {} channels", record.fc_channels).unwrap();
    let skips: Vec<String> = arch
        .skips
        .iter()
        .map(|s| format!("{}->{}", s.from, s.to))
        .collect();
    writeln!(
        w,
        "FS      {}",
        if skips.is_empty() {
            "none".to_string()
        } else {
            skips.join(", ")
        }
    )
    .unwrap();
    writeln!(w).unwrap();

    writeln!(
        w,
        "{:<6} {:<22} {:<30} PCG",
        "block", "CG", "pooling layers"
    )
    .unwrap();
    for (b, block) in record.blocks.iter().enumerate() {
        let cg = match block.cg.channels {
            Some(c) => format!("{c} {}", pcg_text(&block.cg.pcg)),
            None => "none".to_string(),
        };
        let pls: Vec<String> = block
            .pls
            .iter()
            .map(|pl| {
                if pl.is_dormant() {
                    "-".to_string()
                } else {
                    format!(
                        "{}x{}/{} {}",
                        pl.pool_time,
                        pl.pool_freq,
                        pl.channels,
                        pcg_text(&pl.pcg)
                    )
                }
            })
            .collect();
        writeln!(
            w,
            "{:<6} {:<22} {:<30} {}",
            b + 1,
            cg,
            pls.join("; "),
            pcg_text(&block.pcg)
        )
        .unwrap();
    }
    writeln!(w).unwrap();

    writeln!(
        w,
        "{:<24} {:<9} {:>14} {:>14}",
        "layer", "kind", "input", "output"
    )
    .unwrap();
    for s in &shapes {
        writeln!(
            w,
            "{:<24} {:<9} {:>14} {:>14}",
            s.name,
            kind_text(s.kind),
            shape_text(&s.input),
            shape_text(&s.output)
        )
        .unwrap();
    }
    writeln!(w).unwrap();

    let params = count_params(&arch);
    let flops = count_flops(&arch);
    writeln!(
        w,
        "{} params ({:.2} M)",
        group_digits(params),
        params as f64 / 1e6
    )
    .unwrap();
    writeln!(
        w,
        "{} FLOPs ({:.2} G)",
        group_digits(flops),
        flops as f64 / 1e9
    )
    .unwrap();
    Ok(out)
}
