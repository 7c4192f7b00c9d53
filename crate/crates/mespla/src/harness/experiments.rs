//! Modality ablations and the lighting-robustness study.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mfef::ModelConfig;
use crate::preprocess::{ModalityMask, PreprocessConfig, DEFAULT_NIGHT_ALPHA};
use crate::sensors::Dataset;

use super::metrics::{evaluate_prepared, Metrics};
use super::train::{prepare, train_on_prepared, PreparedData, TrainConfig};

/// The six modality combinations of the ablation table, in report order.
pub fn table_combos() -> Vec<ModalityMask> {
    vec![
        ModalityMask::new(true, false, false),
        ModalityMask::new(false, true, false),
        ModalityMask::new(true, false, true),
        ModalityMask::new(true, true, false),
        ModalityMask::new(false, true, true),
        ModalityMask::new(true, true, true),
    ]
}

/// Shared configuration of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub night_alpha: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                width_mult: 0.25,
                seed: 5,
                ..Default::default()
            },
            train: TrainConfig::default(),
            preprocess: PreprocessConfig::default(),
            night_alpha: DEFAULT_NIGHT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub mask: ModalityMask,
    pub rmse_day: f64,
    /// Absent for combinations without images (lidar unaffected by light).
    pub rmse_night: Option<f64>,
    /// (night - day) / day in percent, recomputable from the row's cells.
    pub change_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub night_alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightingRow {
    pub label: String,
    pub mask: ModalityMask,
    pub rmse_day: f64,
    /// RMSE per sweep alpha, aligned with `LightingReport::alphas`; absent
    /// for image-free combinations.
    pub rmse_per_alpha: Vec<Option<f64>>,
}

/// One row of the improvement table: RMSE reduction (in percent of the
/// single-modality baseline) gained by adding modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionRow {
    pub base_label: String,
    pub combo_label: String,
    pub base_rmse: f64,
    pub combo_rmse: f64,
    pub reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightingReport {
    pub alphas: Vec<f64>,
    pub rows: Vec<LightingRow>,
    pub reductions: Vec<ReductionRow>,
}

/// Everything one full study produces.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyResults {
    pub ablation: AblationReport,
    pub lighting: LightingReport,
    /// Day-evaluation CDF per combination label.
    pub cdfs: Vec<(String, Vec<(f64, f64)>)>,
}

fn night_image_inputs(
    ds: &Dataset,
    data: &PreparedData,
    alpha: f64,
) -> Result<Vec<crate::preprocess::ModelInput>> {
    ds.samples
        .par_iter()
        .zip(data.inputs.par_iter())
        .map(|(s, inp)| {
            let mut night = inp.clone();
            night.image_tensor = crate::preprocess::image_to_tensor(&s.image, Some(alpha))?;
            Ok(night)
        })
        .collect()
}

/// Train every combination once (shared seeds) and evaluate it at day plus
/// every sweep alpha. The backbone of both public suites.
pub fn run_study(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    combos: &[ModalityMask],
    alphas: &[f64],
) -> Result<StudyResults> {
    if combos.is_empty() {
        return Err(Error::Config("combination list must be nonempty".into()));
    }
    for c in combos {
        if !c.any() {
            return Err(Error::Config(
                "every combination needs at least one modality".into(),
            ));
        }
    }
    for &a in alphas {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::Config(format!(
                "sweep alphas must lie in (0, 1], got {a}"
            )));
        }
    }
    if !(cfg.night_alpha > 0.0 && cfg.night_alpha < 1.0) {
        return Err(Error::Config(format!(
            "night_alpha must lie in (0, 1), got {}",
            cfg.night_alpha
        )));
    }

    let data = prepare(ds, &cfg.preprocess)?;
    let test_labels: Vec<f64> = ds.split.test.iter().map(|&i| data.labels[i]).collect();

    // Night tensors per requested alpha, computed once and shared.
    let mut alpha_list: Vec<f64> = alphas.to_vec();
    if !alpha_list.iter().any(|a| *a == cfg.night_alpha) {
        alpha_list.push(cfg.night_alpha);
    }
    let night_sets: Vec<(f64, Vec<crate::preprocess::ModelInput>)> = alpha_list
        .iter()
        .map(|&a| -> Result<_> {
            if a == 1.0 {
                // Identity brightness: reuse the day tensors.
                Ok((a, Vec::new()))
            } else {
                Ok((a, night_image_inputs(ds, &data, a)?))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    struct ComboOutcome {
        mask: ModalityMask,
        day: Metrics,
        night_by_alpha: Vec<(f64, Option<Metrics>)>,
    }

    let outcomes: Vec<ComboOutcome> = combos
        .par_iter()
        .map(|&mask| -> Result<ComboOutcome> {
            let mut tcfg = cfg.train.clone();
            tcfg.modality_mask = mask;
            let (model, _history) = train_on_prepared(&data, ds, &cfg.model, &tcfg)?;
            let day_refs: Vec<&crate::preprocess::ModelInput> =
                ds.split.test.iter().map(|&i| &data.inputs[i]).collect();
            let day = evaluate_prepared(&model, &day_refs, &test_labels)?;
            let mut night_by_alpha = Vec::with_capacity(night_sets.len());
            for (a, night_inputs) in &night_sets {
                if !mask.image {
                    night_by_alpha.push((*a, None));
                    continue;
                }
                let refs: Vec<&crate::preprocess::ModelInput> = if *a == 1.0 {
                    ds.split.test.iter().map(|&i| &data.inputs[i]).collect()
                } else {
                    ds.split.test.iter().map(|&i| &night_inputs[i]).collect()
                };
                let m = evaluate_prepared(&model, &refs, &test_labels)?;
                night_by_alpha.push((*a, Some(m)));
            }
            Ok(ComboOutcome {
                mask,
                day,
                night_by_alpha,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Ablation table at the headline night alpha.
    let rows: Vec<AblationRow> = outcomes
        .iter()
        .map(|o| {
            let night = o
                .night_by_alpha
                .iter()
                .find(|(a, _)| *a == cfg.night_alpha)
                .and_then(|(_, m)| m.as_ref())
                .map(|m| m.rmse_db);
            AblationRow {
                label: o.mask.label(),
                mask: o.mask,
                rmse_day: o.day.rmse_db,
                rmse_night: night,
                change_pct: night.map(|n| (n - o.day.rmse_db) / o.day.rmse_db * 100.0),
            }
        })
        .collect();
    let ablation = AblationReport {
        rows,
        night_alpha: cfg.night_alpha,
    };

    // Lighting sweep rows (only for the requested alphas, in their order).
    let lighting_rows: Vec<LightingRow> = outcomes
        .iter()
        .map(|o| LightingRow {
            label: o.mask.label(),
            mask: o.mask,
            rmse_day: o.day.rmse_db,
            rmse_per_alpha: alphas
                .iter()
                .map(|a| {
                    o.night_by_alpha
                        .iter()
                        .find(|(aa, _)| aa == a)
                        .and_then(|(_, m)| m.as_ref())
                        .map(|m| m.rmse_db)
                })
                .collect(),
        })
        .collect();

    // Improvement table relative to each single-modality baseline (day).
    let day_of = |mask: ModalityMask| -> Option<f64> {
        outcomes
            .iter()
            .find(|o| o.mask == mask)
            .map(|o| o.day.rmse_db)
    };
    let mut reductions = Vec::new();
    let singles = [
        ModalityMask::new(true, false, false),
        ModalityMask::new(false, true, false),
    ];
    for base in singles {
        let Some(base_rmse) = day_of(base) else {
            continue;
        };
        for o in &outcomes {
            let m = o.mask;
            let is_superset = (!base.image || m.image)
                && (!base.cloud || m.cloud)
                && (!base.gps || m.gps)
                && m.count() > base.count();
            if !is_superset {
                continue;
            }
            reductions.push(ReductionRow {
                base_label: base.label(),
                combo_label: m.label(),
                base_rmse,
                combo_rmse: o.day.rmse_db,
                reduction_pct: (base_rmse - o.day.rmse_db) / base_rmse * 100.0,
            });
        }
    }
    let lighting = LightingReport {
        alphas: alphas.to_vec(),
        rows: lighting_rows,
        reductions,
    };

    let cdfs = outcomes
        .iter()
        .map(|o| (o.mask.label(), o.day.cdf.clone()))
        .collect();

    Ok(StudyResults {
        ablation,
        lighting,
        cdfs,
    })
}

/// The ablation table: per combination, a fresh model trained under a shared
/// seed policy and evaluated at day and at the headline night alpha.
pub fn ablation_suite(
    ds: &Dataset,
    combos: &[ModalityMask],
    cfg: &ExperimentConfig,
) -> Result<AblationReport> {
    Ok(run_study(ds, cfg, combos, &[cfg.night_alpha])?.ablation)
}

/// RMSE across a brightness sweep plus the improvement table relative to
/// the single-modality baselines.
pub fn lighting_suite(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    alphas: &[f64],
) -> Result<LightingReport> {
    Ok(run_study(ds, cfg, &table_combos(), alphas)?.lighting)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combo_labels_match_the_table_row_set() {
        let labels: Vec<String> = table_combos().iter().map(|c| c.label()).collect();
        assert_eq!(
            labels,
            vec![
                "RGB Images",
                "Point Clouds",
                "RGB Images & GPS",
                "RGB Images & Point Clouds",
                "Point Clouds & GPS",
                "RGB Images & Point Clouds & GPS",
            ]
        );
    }

    #[test]
    fn invalid_alphas_and_empty_combos_rejected() {
        let ds = {
            use crate::scene::{build_scene, generate_routes, SceneConfig};
            let scene = build_scene(&SceneConfig::default()).unwrap();
            let routes = generate_routes(&scene, 2, 11).unwrap();
            crate::sensors::generate_dataset_with(
                &scene,
                &routes,
                8,
                2,
                3,
                &crate::sensors::GenOptions {
                    camera: crate::sensors::CameraConfig {
                        width: 32,
                        height: 32,
                        ..Default::default()
                    },
                    lidar: crate::sensors::LidarConfig {
                        azimuth_steps: 60,
                        elevation_steps: 4,
                        ..Default::default()
                    },
                    ..Default::default()
                },
            )
            .unwrap()
        };
        let cfg = ExperimentConfig::default();
        assert!(matches!(
            run_study(&ds, &cfg, &[], &[0.5]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            run_study(&ds, &cfg, &table_combos(), &[1.5]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            run_study(
                &ds,
                &cfg,
                &[ModalityMask::new(false, false, false)],
                &[0.5]
            ),
            Err(Error::Config(_))
        ));
    }
}
