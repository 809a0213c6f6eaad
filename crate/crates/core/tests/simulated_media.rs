use dipme_core::preprocess::PreprocessConfig;
use dipme_core::sensor::CalibrationParams;
use dipme_core::simulator::{generate_dataset, media_model, MediaClass, MediaModel, OperatorProfile, Simulator};

/// Variance of the processed axial force around its least-squares
/// `a * depth^alpha` trend.
fn fluctuation_variance(m: &MediaModel, seed: u64) -> f64 {
    let rec = Simulator::default()
        .simulate_dip(m, &OperatorProfile::default(), &CalibrationParams::default(), seed)
        .unwrap();
    let s = PreprocessConfig::default().onset_aligned::<f64>(&rec).unwrap();
    let basis: Vec<f64> = s.depth.iter().map(|d| d.max(0.0).powf(m.resistance_exponent)).collect();
    let a = basis.iter().zip(&s.fz).map(|(b, f)| b * f).sum::<f64>() / basis.iter().map(|b| b * b).sum::<f64>();
    let r: Vec<f64> = basis.iter().zip(&s.fz).map(|(b, f)| f - a * b).collect();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len() as f64
}

#[test]
fn coarse_grains_fluctuate_more_at_equal_resistance() {
    let fine = media_model(MediaClass::NuSoil);
    let mut coarse = media_model(MediaClass::Mung);
    coarse.resistance_gain = fine.resistance_gain;
    coarse.resistance_exponent = fine.resistance_exponent;
    let n = 50;
    let (mut vf, mut vc, mut wins) = (0.0, 0.0, 0);
    for seed in 0..n {
        let (f, c) = (fluctuation_variance(&fine, seed), fluctuation_variance(&coarse, seed));
        vf += f;
        vc += c;
        wins += usize::from(c > f);
    }
    assert!(vc > vf, "mean variance coarse {} vs fine {}", vc / n as f64, vf / n as f64);
    assert!(wins * 10 >= n as usize * 9, "coarse larger in only {wins}/{n} seeds");
}

#[test]
fn dataset_sizes_match_published_counts() {
    let sim = Simulator::default();
    let lib = dipme_core::simulator::default_media_library();
    let calib = CalibrationParams::default();
    let one = generate_dataset(&sim, &lib, 40, &[OperatorProfile::default()], &calib, 0).unwrap();
    assert_eq!(one.len(), 240);
    let study = generate_dataset(&sim, &lib, 3, &OperatorProfile::cohort(10, 0), &calib, 0).unwrap();
    assert_eq!(study.len(), 180);
    for c in 0..6 {
        assert_eq!(one.iter().filter(|r| r.label == Some(c)).count(), 40);
        assert_eq!(study.iter().filter(|r| r.label == Some(c)).count(), 30);
    }
}
