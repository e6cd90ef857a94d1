//! Training artifacts: checkpoints, curve CSVs, and the experiment report.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fctl_core::net::{Conv, ToyNetParams};
use fctl_core::tensor::{Dims, FeatureMap};
use fctl_core::train::{EpochStats, ExperimentReport};

use crate::fmap;

/// Every parameter tensor with a stable name. Weights map onto the tensor
/// container as (out, in, k, k); biases as (out, 1, 1, 1).
pub fn named_tensors(params: &ToyNetParams) -> Vec<(String, FeatureMap)> {
    let mut out = Vec::new();
    let mut push = |name: &str, c: &Conv| {
        let wdims = Dims::new(c.out_ch, c.in_ch, c.ksize, c.ksize);
        out.push((format!("{name}.weight"), FeatureMap::from_vec(wdims, c.weights.clone()).unwrap()));
        let bdims = Dims::new(c.out_ch, 1, 1, 1);
        out.push((format!("{name}.bias"), FeatureMap::from_vec(bdims, c.bias.clone()).unwrap()));
    };
    push("stem", &params.stem);
    push("down1", &params.down1);
    push("down2", &params.down2);
    for (i, c) in params.lateral.iter().enumerate() {
        push(&format!("lateral{i}"), c);
    }
    for (i, c) in params.head.iter().enumerate() {
        push(&format!("head{i}"), c);
    }
    out
}

/// One FMAP file per tensor plus a `manifest.txt` of `name file shape` lines.
pub fn write_checkpoint(params: &ToyNetParams, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut manifest = String::new();
    for (name, tensor) in named_tensors(params) {
        let file = format!("{name}.fmap");
        fmap::write_tensor_file(&tensor, &dir.join(&file))?;
        let d = tensor.dims();
        manifest.push_str(&format!(
            "{name} {file} {}x{}x{}x{}\n",
            d.batch, d.channels, d.width, d.height
        ));
    }
    std::fs::write(dir.join("manifest.txt"), manifest)
        .with_context(|| format!("writing manifest in {}", dir.display()))?;
    Ok(())
}

pub fn read_checkpoint(dir: &Path) -> Result<ToyNetParams> {
    let manifest_path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let mut params = ToyNetParams::init(0).zeros_like();
    let mut seen = 0usize;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        let (name, file) = match (parts.next(), parts.next()) {
            (Some(n), Some(f)) => (n, f),
            _ => bail!("{}: malformed manifest line {line:?}", manifest_path.display()),
        };
        let tensor = fmap::read_tensor_file(&dir.join(file))?;
        let conv = lookup_mut(&mut params, name.trim_end_matches(".weight").trim_end_matches(".bias"))
            .ok_or_else(|| anyhow!("manifest names unknown tensor {name:?}"))?;
        let slot = if name.ends_with(".weight") {
            &mut conv.weights
        } else if name.ends_with(".bias") {
            &mut conv.bias
        } else {
            bail!("manifest names unknown tensor {name:?}");
        };
        if slot.len() != tensor.dims().len() {
            bail!("{name}: has {} values, architecture expects {}", tensor.dims().len(), slot.len());
        }
        slot.copy_from_slice(tensor.data());
        seen += 1;
    }
    if seen != 18 {
        bail!("{}: lists {seen} tensors, architecture has 18", manifest_path.display());
    }
    Ok(params)
}

fn lookup_mut<'a>(params: &'a mut ToyNetParams, name: &str) -> Option<&'a mut Conv> {
    match name {
        "stem" => Some(&mut params.stem),
        "down1" => Some(&mut params.down1),
        "down2" => Some(&mut params.down2),
        "lateral0" => Some(&mut params.lateral[0]),
        "lateral1" => Some(&mut params.lateral[1]),
        "lateral2" => Some(&mut params.lateral[2]),
        "head0" => Some(&mut params.head[0]),
        "head1" => Some(&mut params.head[1]),
        "head2" => Some(&mut params.head[2]),
        _ => None,
    }
}

pub fn curves_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,det_loss,eansdl_term,attenuation\n");
    for row in curve {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.det_loss, row.eansdl_term, row.attenuation
        ));
    }
    out
}

/// Human-readable summary followed by a machine-readable key=value block.
/// Every median in the block is recomputable from the per-seed rows it also
/// contains.
pub fn render_report(report: &ExperimentReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("experiment over {} seeds\n", report.rows.len()));
    out.push_str("per-seed objectness F1 on degraded validation (ideal model / baseline / corrected):\n");
    for row in &report.rows {
        out.push_str(&format!(
            "  seed {}: {} / {} / {}\n",
            row.seed, row.ideal_on_degraded.f1, row.baseline_on_degraded.f1, row.fctl_on_degraded.f1
        ));
    }
    out.push_str(&format!(
        "median F1: baseline {} vs corrected {} (relative change {})\n",
        report.median_baseline_f1, report.median_fctl_f1, report.relative_improvement_f1
    ));
    out.push_str(&format!(
        "median detection loss: baseline {} vs corrected {} (relative change {})\n",
        report.median_baseline_loss, report.median_fctl_loss, report.relative_improvement_loss
    ));
    out.push('\n');
    for row in &report.rows {
        let seed = row.seed;
        for (tag, m) in [
            ("ideal_on_ideal", &row.ideal_on_ideal),
            ("ideal_on_degraded", &row.ideal_on_degraded),
            ("baseline_on_degraded", &row.baseline_on_degraded),
            ("fctl_on_degraded", &row.fctl_on_degraded),
        ] {
            out.push_str(&format!("seed_{seed}_{tag}_f1={}\n", m.f1));
            out.push_str(&format!("seed_{seed}_{tag}_det_loss={}\n", m.det_loss));
        }
    }
    out.push_str(&format!("median_ideal_f1={}\n", report.median_ideal_f1));
    out.push_str(&format!("median_baseline_f1={}\n", report.median_baseline_f1));
    out.push_str(&format!("median_fctl_f1={}\n", report.median_fctl_f1));
    out.push_str(&format!("median_baseline_loss={}\n", report.median_baseline_loss));
    out.push_str(&format!("median_fctl_loss={}\n", report.median_fctl_loss));
    out.push_str(&format!("relative_improvement_f1={}\n", report.relative_improvement_f1));
    out.push_str(&format!("relative_improvement_loss={}\n", report.relative_improvement_loss));
    out
}
