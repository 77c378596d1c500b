#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use milltwin::config::{PipelineConfig, PlantConfig};
use milltwin::dataset;
use milltwin::core::model::{train, Mlp, TrainConfig, TrainReport};
use milltwin::core::plant::Scenario;

pub struct Trained {
    pub model: Arc<Mlp>,
    pub report: TrainReport,
    pub seconds: f64,
}

/// The default dataset and model, built once per test binary.
pub fn trained() -> &'static Trained {
    static MODEL: OnceLock<Trained> = OnceLock::new();
    MODEL.get_or_init(|| {
        let (_, rows) = dataset::generate(&Scenario::dataset_default(), &PlantConfig::default(), 10_000).unwrap();
        let started = std::time::Instant::now();
        let (model, report) = train(&dataset::to_labeled(&rows), &TrainConfig::default()).unwrap();
        Trained {
            model: Arc::new(model),
            report,
            seconds: started.elapsed().as_secs_f64(),
        }
    })
}

/// Ten seconds at 100 kHz with one contact interval.
pub fn ten_second_config(contact: (f64, f64)) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.scenario = Scenario {
        duration_s: 10.0,
        contact_intervals: vec![contact],
        ..Scenario::default()
    };
    cfg
}

/// Report JSON with the timing section removed.
pub fn untimed(report: &milltwin::pipeline::RunReport) -> serde_json::Value {
    let mut v = serde_json::to_value(report).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}
