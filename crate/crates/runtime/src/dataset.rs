//! Labelled training data from the simulated plant.

use milltwin_core::model::{LabeledDataset, LabeledSample};
use milltwin_core::plant::{Plant, PlantError, PlantState, Scenario};

use crate::config::PlantConfig;
use crate::files::{DatasetMeta, DatasetRow};

pub const DATASET_VERSION: u32 = 1;

/// Run the plant open loop over `scenario` and cut the signal into
/// fixed windows of `window_samples`. Each row carries the window's peak
/// absolute amplitude and is labelled contact when more than half of its
/// samples fall inside a contact interval. A trailing partial window is
/// discarded.
pub fn generate(
    scenario: &Scenario,
    plant: &PlantConfig,
    window_samples: usize,
) -> Result<(DatasetMeta, Vec<DatasetRow>), PlantError> {
    if window_samples == 0 {
        return Err(PlantError::InvalidScenario("window length must be at least 1"));
    }
    let state = PlantState::new(plant.spindle_rpm, plant.feed_mm_per_min, plant.seed);
    let mut sim = Plant::new(scenario.clone(), state, plant.limits)?;
    let mut rows = Vec::new();
    while let Some(g) = sim.generate(window_samples) {
        if g.block.len() < window_samples {
            break;
        }
        let peak = g
            .block
            .samples()
            .iter()
            .map(|&v| f64::from(v).abs())
            .fold(0.0, f64::max);
        let in_contact = g.labels.iter().filter(|&&c| c).count();
        rows.push(DatasetRow {
            window: rows.len() as u64,
            start_index: g.block.start_index(),
            peak_amplitude_volts: peak,
            label: 2 * in_contact > window_samples,
        });
    }
    let meta = DatasetMeta {
        version: DATASET_VERSION,
        seed: plant.seed,
        sample_rate_hz: scenario.sample_rate_hz,
        window_samples: window_samples as u64,
    };
    Ok((meta, rows))
}

pub fn to_labeled(rows: &[DatasetRow]) -> LabeledDataset {
    LabeledDataset::new(rows.iter().map(DatasetRow::sample).collect::<Vec<LabeledSample>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_gives_1555_rows() {
        let (meta, rows) = generate(&Scenario::dataset_default(), &PlantConfig::default(), 10_000).unwrap();
        assert_eq!(rows.len(), 1555);
        assert_eq!(meta.window_samples, 10_000);
        // 2 s of contact in every 5 s: 20 of each 50 windows.
        let positives = rows.iter().filter(|r| r.label).count();
        assert_eq!(positives, 31 * 20);
        assert!(rows[10].label && !rows[9].label && !rows[30].label);
    }
}
