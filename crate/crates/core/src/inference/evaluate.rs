use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    capped_mean, denormalize, load_image, normalize, psnr, psnr_serde, save_image, DatasetManifest,
    Partition,
};
use crate::error::{Error, Result};
use crate::inference::select::{output_psnrs, restore_select, ExpertSet};
use crate::layers::{config_digest, GeneratorNet};
use crate::numerics::Tensor;

pub const REPORT_FILE: &str = "report.json";
pub const GRID_DIR: &str = "grids";
/// Width of the highlight around the selected panel.
pub const BORDER: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub input: String,
    pub target: String,
    pub partition: Partition,
    /// PSNR of the degraded input itself.
    #[serde(with = "psnr_serde")]
    pub input_psnr: f64,
    #[serde(with = "psnr_serde::vec")]
    pub expert_psnrs: Vec<f64>,
    pub scores: Vec<f64>,
    pub chosen_index: usize,
    pub oracle_index: usize,
    #[serde(with = "psnr_serde")]
    pub selected_psnr: f64,
    #[serde(with = "psnr_serde")]
    pub oracle_psnr: f64,
    /// PSNR of a reference (pretrained) generator, when one was supplied.
    #[serde(
        default,
        with = "psnr_serde::option",
        skip_serializing_if = "Option::is_none"
    )]
    pub pretrained_psnr: Option<f64>,
}

/// Mean PSNRs with the 60 dB cap applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Means {
    pub input: f64,
    pub experts: Vec<f64>,
    pub selected: f64,
    pub oracle: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub count: usize,
    pub means: Means,
    pub agreement_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_digest: String,
    pub per_image: Vec<ImageResult>,
    pub means: Means,
    /// Fraction of images where the discriminator picked the oracle's expert.
    pub agreement_rate: f64,
    pub per_partition: BTreeMap<String, PartitionSummary>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

fn summarize(rows: &[&ImageResult]) -> Option<(Means, f64)> {
    let n_experts = rows.first()?.expert_psnrs.len();
    let mean = |f: &dyn Fn(&ImageResult) -> f64| {
        capped_mean(rows.iter().map(|r| f(r))).expect("non-empty")
    };
    let pretrained = if rows.iter().all(|r| r.pretrained_psnr.is_some()) {
        capped_mean(rows.iter().filter_map(|r| r.pretrained_psnr))
    } else {
        None
    };
    let means = Means {
        input: mean(&|r| r.input_psnr),
        experts: (0..n_experts)
            .map(|i| mean(&|r| r.expert_psnrs[i]))
            .collect(),
        selected: mean(&|r| r.selected_psnr),
        oracle: mean(&|r| r.oracle_psnr),
        pretrained,
    };
    let agree = rows
        .iter()
        .filter(|r| r.chosen_index == r.oracle_index)
        .count();
    Some((means, agree as f64 / rows.len() as f64))
}

/// Evaluates every record: each expert alone, discriminator selection,
/// oracle selection and (optionally) a reference generator. With
/// `grid_dir`, writes one comparison strip per image.
pub fn evaluate(
    manifest: &DatasetManifest,
    experts: &ExpertSet,
    pretrained: Option<&GeneratorNet>,
    grid_dir: Option<&Path>,
) -> Result<EvalReport> {
    if manifest.is_empty() {
        return Err(Error::Manifest("cannot evaluate an empty manifest".into()));
    }
    if let Some(dir) = grid_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let per_image = manifest
        .records()
        .par_iter()
        .map(|r| {
            let degraded = load_image(manifest.resolve(&r.input))?;
            let target = load_image(manifest.resolve(&r.target))?;
            let mut sel = restore_select(
                &normalize(&degraded),
                &experts.generators,
                &experts.discriminator,
            )?;
            sel.attach_ground_truth(&target)?;
            let psnrs = sel.psnrs.clone().expect("attached");
            let oracle_index = sel.oracle_index.expect("attached");
            let pretrained_psnr = pretrained
                .map(|g| -> Result<f64> {
                    let out = g.forward(&normalize(&degraded))?;
                    Ok(output_psnrs(&[out], &target)?[0])
                })
                .transpose()?;
            if let Some(dir) = grid_dir {
                let grid = comparison_grid(&degraded, &sel.outputs, sel.chosen_index, &target)?;
                save_image(&grid, grid_path(dir, &r.input))?;
            }
            Ok(ImageResult {
                input: r.input.clone(),
                target: r.target.clone(),
                partition: r.partition,
                input_psnr: psnr(&degraded, &target)?,
                selected_psnr: psnrs[sel.chosen_index],
                oracle_psnr: psnrs[oracle_index],
                expert_psnrs: psnrs,
                scores: sel.scores,
                chosen_index: sel.chosen_index,
                oracle_index,
                pretrained_psnr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&ImageResult> = per_image.iter().collect();
    let (means, agreement_rate) = summarize(&all).expect("non-empty");
    let mut per_partition = BTreeMap::new();
    let tags = [
        Partition::Lq,
        Partition::Mq,
        Partition::Hq,
        Partition::Unassigned,
    ];
    for p in tags {
        let rows: Vec<&ImageResult> = per_image.iter().filter(|r| r.partition == p).collect();
        if let Some((m, a)) = summarize(&rows) {
            per_partition.insert(
                p.as_str().to_string(),
                PartitionSummary {
                    count: rows.len(),
                    means: m,
                    agreement_rate: a,
                },
            );
        }
    }
    let first = &experts.generators[0];
    Ok(EvalReport {
        config_digest: config_digest(
            "expert-set",
            &(&first.config, &experts.discriminator.config),
        ),
        per_image,
        means,
        agreement_rate,
        per_partition,
    })
}

/// `grids/<input path with separators replaced>.png`.
pub fn grid_path(dir: &Path, input: &str) -> PathBuf {
    let stem = input.trim_end_matches(".png").replace(['/', '\\'], "_");
    dir.join(format!("{stem}.png"))
}

/// Horizontal strip: degraded | each expert | selected (red border) | GT.
/// Images are 8-bit except the normalized expert outputs.
pub fn comparison_grid(
    degraded: &Tensor,
    outputs: &[Tensor],
    chosen: usize,
    target: &Tensor,
) -> Result<Tensor> {
    let (c, h, w) = degraded.dims3()?;
    let mut panels: Vec<Tensor> = vec![degraded.clone()];
    panels.extend(outputs.iter().map(denormalize));
    let mut selected = denormalize(
        outputs
            .get(chosen)
            .ok_or_else(|| Error::dim("chosen index out of range"))?,
    );
    draw_border(&mut selected, h, w);
    panels.push(selected);
    panels.push(target.clone());
    for p in &panels {
        if p.shape() != [c, h, w] {
            return Err(Error::dim(format!(
                "grid panel {:?} does not match {:?}",
                p.shape(),
                [c, h, w]
            )));
        }
    }
    let total_w = w * panels.len();
    let mut grid = Tensor::zeros(&[c, h, total_w]);
    let data = grid.data_mut();
    for (k, p) in panels.iter().enumerate() {
        for ch in 0..c {
            for i in 0..h {
                let src = &p.data()[(ch * h + i) * w..(ch * h + i + 1) * w];
                let dst = (ch * h + i) * total_w + k * w;
                data[dst..dst + w].copy_from_slice(src);
            }
        }
    }
    Ok(grid)
}

fn draw_border(img: &mut Tensor, h: usize, w: usize) {
    let red = [255.0, 0.0, 0.0];
    let data = img.data_mut();
    for (ch, &v) in red.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                if i < BORDER || j < BORDER || i + BORDER >= h || j + BORDER >= w {
                    data[(ch * h + i) * w + j] = v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(input: &str, psnrs: [f64; 3], chosen: usize, partition: Partition) -> ImageResult {
        let oracle = crate::inference::argmax_first(&psnrs).unwrap();
        ImageResult {
            input: input.into(),
            target: format!("gt_{input}"),
            partition,
            input_psnr: 10.0,
            expert_psnrs: psnrs.to_vec(),
            scores: vec![0.1, 0.2, 0.3],
            chosen_index: chosen,
            oracle_index: oracle,
            selected_psnr: psnrs[chosen],
            oracle_psnr: psnrs[oracle],
            pretrained_psnr: None,
        }
    }

    #[test]
    fn means_are_arithmetic_and_capped() {
        let a = row("a", [10.0, 12.0, 11.0], 0, Partition::Lq);
        let b = row("b", [20.0, f64::INFINITY, 19.0], 1, Partition::Lq);
        let (m, agree) = summarize(&[&a, &b]).unwrap();
        assert_eq!(m.selected, 35.0);
        assert_eq!(m.experts[0], 15.0);
        assert_eq!(m.oracle, 36.0);
        assert_eq!(agree, 0.5);
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn report_json_round_trip() {
        let rows = vec![
            row("a", [10.123456789, 12.5, 11.0], 2, Partition::Mq),
            row("b", [f64::INFINITY, 1.0 / 3.0, 19.0], 1, Partition::Hq),
        ];
        let refs: Vec<&ImageResult> = rows.iter().collect();
        let (means, agreement_rate) = summarize(&refs).unwrap();
        let report = EvalReport {
            config_digest: "abc".into(),
            per_image: rows,
            means,
            agreement_rate,
            per_partition: BTreeMap::new(),
        };
        let text = report.to_json().unwrap();
        assert!(text.contains("\"inf\""));
        let back = EvalReport::from_json(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn grid_layout_and_border() {
        let deg = Tensor::full(&[3, 8, 8], 10.0);
        let gt = Tensor::full(&[3, 8, 8], 200.0);
        let outs = vec![
            Tensor::full(&[3, 8, 8], -1.0),
            Tensor::full(&[3, 8, 8], 1.0),
            Tensor::zeros(&[3, 8, 8]),
        ];
        let g = comparison_grid(&deg, &outs, 1, &gt).unwrap();
        assert_eq!(g.shape(), &[3, 8, 48]);
        let px = |ch: usize, i: usize, j: usize| g.data()[(ch * 8 + i) * 48 + j];
        assert_eq!(px(0, 4, 4), 10.0);
        assert_eq!(px(0, 4, 12), 0.0);
        assert_eq!(px(0, 4, 20), 255.0);
        // selected panel: interior keeps the image, edge is red
        assert_eq!(px(1, 4, 36), 255.0);
        assert_eq!(
            (px(0, 0, 32), px(1, 0, 32), px(2, 0, 32)),
            (255.0, 0.0, 0.0)
        );
        assert_eq!((px(0, 7, 39), px(1, 6, 38)), (255.0, 0.0));
        assert_eq!(px(0, 4, 44), 200.0);
    }

    #[test]
    fn identity_restoration_reaches_sentinel() {
        let gt = Tensor::from_fn(&[3, 4, 4], |i| (i * 7 % 256) as f64);
        let p = output_psnrs(&[Tensor::zeros(&[3, 4, 4]), normalize(&gt)], &gt).unwrap();
        assert_eq!(p[1], f64::INFINITY);
        assert_eq!(crate::inference::argmax_first(&p), Some(1));
    }
}
