use std::collections::BTreeMap;

use ndarray::Array2;
use pnf::data::{BiopsyCore, Category, IMAGE_SIZE};
use pnf::metrics::{
    emit_figures, evaluate_run, CorePrediction, CoreRow, EvalOptions, EvalReport, InvolvementBucket, OperatingPoint,
    PatientRow, ScoreSource, SensitivityPoint, Stratification, Task, TaskReport, LEGEND_HEIGHT,
};
use pnf::riskscore::RiskBins;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn core(id: &str, subject: &str, gg: u8, inv: f64, reference: Option<u8>) -> BiopsyCore {
    let mut mask = Array2::from_elem((IMAGE_SIZE, IMAGE_SIZE), false);
    for r in 100..160 {
        for c in 125..131 {
            mask[[r, c]] = true;
        }
    }
    BiopsyCore {
        core_id: id.into(),
        subject_id: subject.into(),
        image: Array2::from_elem((IMAGE_SIZE, IMAGE_SIZE), 0.5),
        needle_mask: mask,
        grade_group: gg,
        involvement: inv,
        risk_score_reference: reference,
    }
}

fn pred(c: &BiopsyCore, heat: f64, risk: f64) -> CorePrediction {
    CorePrediction {
        core_id: c.core_id.clone(),
        subject_id: c.subject_id.clone(),
        pca_score: Some(heat),
        risk: Some(risk),
    }
}

/// (id, subject, GG, involvement, reference, heatmap score, risk probability)
const FIXTURE: [(&str, &str, u8, f64, Option<u8>, f64, f64); 6] = [
    ("a", "P1", 0, 0.0, Some(2), 0.10, 0.15),
    ("b", "P1", 3, 0.5, Some(4), 0.60, 0.70),
    ("c", "P2", 1, 0.1, None, 0.55, 0.35),
    ("d", "P2", 2, 0.3, None, 0.50, 0.40),
    ("e", "P3", 0, 0.0, None, 0.20, 0.85),
    ("f", "P3", 4, 0.9, None, 0.80, 0.95),
];

fn fixture() -> (Vec<BiopsyCore>, Vec<CorePrediction>, RiskBins) {
    let cores: Vec<BiopsyCore> = FIXTURE.iter().map(|f| core(f.0, f.1, f.2, f.3, f.4)).collect();
    let preds = cores.iter().zip(&FIXTURE).map(|(c, f)| pred(c, f.5, f.6)).collect();
    let mut bins = RiskBins::new([0.2, 0.4, 0.6, 0.9]).unwrap();
    bins.provenance.operating_threshold = Some(0.5);
    (cores, preds, bins)
}

fn sens(values: [f64; 4]) -> Vec<SensitivityPoint> {
    [0.2, 0.4, 0.6, 0.8]
        .into_iter()
        .zip(values)
        .map(|(specificity, s)| SensitivityPoint {
            specificity,
            sensitivity: Some(s),
        })
        .collect()
}

fn bucket(lower: f64, upper: f64, n_cores: usize, n_positive: usize, auroc: Option<f64>, act: Option<f64>) -> InvolvementBucket {
    InvolvementBucket {
        lower,
        upper,
        n_cores,
        n_positive,
        n_negative: 2,
        auroc,
        mean_activation: act,
    }
}

#[test]
fn six_core_fixture_matches_hand_computed_report() {
    let (cores, preds, bins) = fixture();
    let opts = EvalOptions {
        specificities: vec![0.2, 0.4, 0.6, 0.8],
        ..EvalOptions::default()
    };
    let report = evaluate_run(&preds, &cores, Some(&bins), &opts).unwrap();

    // Discretized risk with left-closed bins [0,.2) [.2,.4) [.4,.6) [.6,.9) [.9,1]:
    // .15→1 .70→4 .35→2 .40→3 .85→4 .95→5.
    let scores = [1u8, 4, 2, 3, 4, 5];
    let categories = [
        Category::Benign,
        Category::CsPca,
        Category::IsPca,
        Category::IsPca,
        Category::Benign,
        Category::CsPca,
    ];
    let core_rows: Vec<CoreRow> = FIXTURE
        .iter()
        .enumerate()
        .map(|(i, f)| CoreRow {
            core_id: f.0.into(),
            subject_id: f.1.into(),
            grade_group: f.2,
            category: categories[i],
            involvement: f.3,
            pca_score: Some(f.5),
            risk: Some(f.6),
            model_score: Some(scores[i]),
            reference_score: f.4,
        })
        .collect();
    let expected = EvalReport {
        n_cores: 6,
        n_subjects: 3,
        tasks: vec![
            // positives {4,5} vs negatives {1,2,3,4}: 3.5 + 4 of 8 pairs.
            // Specificity ≥ .2/.4/.6 is reached at τ = 2/3/4, catching both positives;
            // ≥ .8 needs τ = 5.
            TaskReport {
                task: Task::CspcaVsRest,
                score_source: ScoreSource::RiskScore,
                fallback: false,
                n: 6,
                n_positive: 2,
                n_negative: 4,
                auroc: Some(7.5 / 8.0),
                sensitivity: sens([1.0, 1.0, 1.0, 0.5]),
            },
            // positives {.6,.5,.8} vs negatives {.1,.55,.2}: 3 + 2 + 3 of 9 pairs.
            // τ = .5 gives specificity 2/3 with all positives; ≥ .8 needs τ = .6.
            TaskReport {
                task: Task::PcaVsRest,
                score_source: ScoreSource::HeatmapMean,
                fallback: false,
                n: 6,
                n_positive: 3,
                n_negative: 3,
                auroc: Some(8.0 / 9.0),
                sensitivity: sens([1.0, 1.0, 1.0, 2.0 / 3.0]),
            },
        ],
        stratification_source: ScoreSource::RiskProbability,
        // benign negatives a (.15) and e (.85); activations are heatmap scores
        stratification: Stratification {
            buckets: vec![
                bucket(0.0, 0.2, 1, 0, None, Some(0.55)),
                bucket(0.2, 0.4, 1, 0, None, Some(0.50)),
                bucket(0.4, 0.6, 1, 1, Some(0.5), Some(0.60)),
                bucket(0.6, 0.8, 0, 0, None, None),
                bucket(0.8, 1.0, 1, 1, Some(1.0), Some(0.80)),
            ],
            n_benign: 2,
            benign_mean_activation: Some((0.10 + 0.20) / 2.0),
        },
        // patient scores 4, 3, 5 with labels cspca, ispca, cspca
        patient_task: Some(TaskReport {
            task: Task::CspcaVsRest,
            score_source: ScoreSource::PatientMaxScore,
            fallback: false,
            n: 3,
            n_positive: 2,
            n_negative: 1,
            auroc: Some(1.0),
            sensitivity: sens([1.0; 4]),
        }),
        top_score_benign_fraction: Some(0.0),
        // risk ≥ .5: b, e, f. Both positives caught; e is the one false positive of four.
        operating_point: Some(OperatingPoint {
            threshold: Some(0.5),
            sensitivity: 1.0,
            specificity: 0.75,
        }),
        cores: core_rows,
        patients: vec![
            PatientRow {
                subject_id: "P1".into(),
                cores: vec!["a".into(), "b".into()],
                model_score: Some(4),
                diagnosis: Category::CsPca,
                reference_score: Some(4),
            },
            PatientRow {
                subject_id: "P2".into(),
                cores: vec!["c".into(), "d".into()],
                model_score: Some(3),
                diagnosis: Category::IsPca,
                reference_score: None,
            },
            PatientRow {
                subject_id: "P3".into(),
                cores: vec!["e".into(), "f".into()],
                model_score: Some(5),
                diagnosis: Category::CsPca,
                reference_score: None,
            },
        ],
        undefined: vec![
            "bucket(0,0.2].auroc".into(),
            "bucket(0.2,0.4].auroc".into(),
            "bucket(0.6,0.8].auroc".into(),
        ],
    };
    assert_eq!(report, expected);

    let json = serde_json::to_string(&report).unwrap();
    let back: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}

#[test]
fn top_score_benign_fraction_hand_count() {
    // One core per subject. Risk ≥ .9 lands in grade 5.
    let spec = [
        ("S1", 0, 0.0, 0.95),
        ("S2", 3, 0.4, 0.97),
        ("S3", 1, 0.2, 0.92),
        ("S4", 0, 0.0, 0.99),
        ("S5", 0, 0.0, 0.30),
        ("S6", 4, 0.6, 0.50),
    ];
    let cores: Vec<BiopsyCore> = spec.iter().map(|s| core(&format!("{}-1", s.0), s.0, s.1, s.2, None)).collect();
    let preds: Vec<CorePrediction> = cores.iter().zip(&spec).map(|(c, s)| pred(c, 0.5, s.3)).collect();
    let bins = RiskBins::new([0.2, 0.4, 0.6, 0.9]).unwrap();
    let report = evaluate_run(&preds, &cores, Some(&bins), &EvalOptions::default()).unwrap();
    // grade 5: S1 (benign), S2 (cspca), S3 (ispca), S4 (benign) → 2 of 4
    assert_eq!(report.top_score_benign_fraction, Some(0.5));
    assert!(report.operating_point.is_none());
}

#[test]
fn patient_score_is_max_of_core_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bins = RiskBins::new([0.1, 0.3, 0.55, 0.8]).unwrap();
    for _ in 0..50 {
        let n_subjects = rng.random_range(2..8);
        let mut cores = Vec::new();
        let mut preds = Vec::new();
        for s in 0..n_subjects {
            for k in 0..rng.random_range(1..6) {
                let gg = rng.random_range(0..=5u8);
                let inv = if gg == 0 { 0.0 } else { rng.random_range(0.01..=1.0) };
                let c = core(&format!("s{s}c{k}"), &format!("s{s}"), gg, inv, None);
                preds.push(pred(&c, rng.random(), rng.random()));
                cores.push(c);
            }
        }
        let report = evaluate_run(&preds, &cores, Some(&bins), &EvalOptions::default()).unwrap();
        for p in &report.patients {
            let mut best = 0;
            for row in &report.cores {
                if row.subject_id == p.subject_id {
                    best = best.max(row.model_score.unwrap());
                }
            }
            assert_eq!(p.model_score, Some(best));
        }
        let total: usize = report.stratification.buckets.iter().map(|b| b.n_cores).sum();
        assert_eq!(total + report.stratification.n_benign, report.n_cores);
    }
}

#[test]
fn figures_file_contract() {
    let (cores, preds, bins) = fixture();
    let report = evaluate_run(&preds, &cores, Some(&bins), &EvalOptions::default()).unwrap();
    let mut heat = BTreeMap::new();
    heat.insert("b".to_string(), Array2::from_elem((IMAGE_SIZE, IMAGE_SIZE), 0.7));
    let dir = tempfile::tempdir().unwrap();
    let files = emit_figures(&report, &heat, &cores, dir.path()).unwrap();

    assert_eq!(files.overlays.len(), 1);
    assert!(files.overlays[0].ends_with("overlay_b_score4.png"));
    let img = image::open(&files.overlays[0]).unwrap();
    assert_eq!((img.width(), img.height()), (IMAGE_SIZE as u32, IMAGE_SIZE as u32 + LEGEND_HEIGHT));
    assert!(files.checkerboard_png.is_file());

    let mut r = csv::Reader::from_path(&files.checkerboard_csv).unwrap();
    let header = r.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for (row, patient) in rows.iter().zip(&report.patients) {
        assert_eq!(&row[col("subject_id")], patient.subject_id);
        assert_eq!(row[col("patient_score")], patient.model_score.unwrap().to_string());
        for (i, id) in patient.cores.iter().enumerate() {
            let fed = report.cores.iter().find(|c| &c.core_id == id).unwrap();
            assert_eq!(&row[col(&format!("core_{}", i + 1))], id);
            assert_eq!(row[col(&format!("score_{}", i + 1))], fed.model_score.unwrap().to_string());
            assert_eq!(row[col(&format!("pathology_{}", i + 1))], fed.category.to_string());
        }
    }
}
