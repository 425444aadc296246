use fairdiff_core::conditioning::dataset_conditions;
use fairdiff_core::data::{Column, ColumnData, Dataset, TableSchema, TabularEncoder};
use fairdiff_core::denoiser::{train, ConditionCards, ConditionSpec, Denoiser, DenoiserConfig, LatentCodec, TrainedModel, TrainingData};
use fairdiff_core::diffusion::{NoiseSchedule, ScheduleKind};
use fairdiff_core::guidance::{reverse_sample, GuidanceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn label_conditioned_mean_tracks_the_class() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 3000;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let yi = rng.gen_bool(0.5);
        let noise: f64 = rng.sample(StandardNormal);
        x.push(3.0 * f64::from(u8::from(yi)) + noise);
        y.push(u32::from(yi));
    }
    let class_mean = x.iter().zip(&y).filter(|(_, &c)| c == 1).map(|(v, _)| v).sum::<f64>()
        / y.iter().filter(|&&c| c == 1).count() as f64;
    let schema = TableSchema::new(
        vec![Column::numerical("x"), Column::categorical("y", ["0", "1"])],
        "y",
        vec![],
    )
    .unwrap();
    let ds = Dataset::new(schema, vec![ColumnData::Numerical(x), ColumnData::Categorical(y)]).unwrap();
    let enc = TabularEncoder::fit(&ds, false).unwrap();
    let x0 = enc.encode(&ds).unwrap();
    let conds = dataset_conditions(&ds);
    let config = DenoiserConfig {
        epochs: 150,
        ..Default::default()
    };
    let cards = ConditionCards {
        label: 2,
        sensitive: vec![],
    };
    let mut model = Denoiser::new(config, x0.layout().clone(), cards).unwrap();
    let schedule = NoiseSchedule::new(ScheduleKind::Cosine, 100).unwrap();
    train(
        &mut model,
        &TrainingData {
            x0: &x0,
            conditions: &conds,
        },
        &schedule,
        |_, _| {},
    )
    .unwrap();
    let tm = TrainedModel {
        model,
        codec: LatentCodec::Identity,
        data_layout: x0.layout().clone(),
        schedule,
    };
    let wanted = vec![ConditionSpec::full(1, &[]); 2000];
    let out = enc.decode(&reverse_sample(&tm, &wanted, &GuidanceConfig::default(), 3, 1).unwrap()).unwrap();
    let mean = out.numerical(0).iter().sum::<f64>() / 2000.0;
    assert!((mean - class_mean).abs() <= 0.1, "generated {mean}, class mean {class_mean}");
}
