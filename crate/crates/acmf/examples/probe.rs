use std::fs::File;
use std::time::Instant;

use acmf::coupling::{build_graph, CouplingConfig, Metric};
use acmf::dataset::{
    load_attributes_auto, load_ratings, support_bucket_edges, RatingScale, RatingsFormat,
};
use acmf::evaluation::{cross_validate, CvOptions};
use acmf::factorization::TrainConfig;

fn main() {
    let dir = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k");
    let ratings = load_ratings(
        File::open(dir.join("u.data")).unwrap(),
        RatingsFormat::MovielensTab,
        RatingScale::new(1.0, 5.0),
    )
    .unwrap();
    let table = load_attributes_auto(&std::fs::read(dir.join("u.item")).unwrap())
        .unwrap()
        .align_to(ratings.items());

    let cos = build_graph(
        &table,
        &CouplingConfig {
            metric: Metric::Cos,
            neighborhood_size: 40,
            ..CouplingConfig::default()
        },
    )
    .unwrap();
    let sms = build_graph(
        &table,
        &CouplingConfig {
            metric: Metric::Sms,
            neighborhood_size: 40,
            ..CouplingConfig::default()
        },
    )
    .unwrap();
    println!("cos: {} edges, sms: {} edges", cos.n_edges(), sms.n_edges());

    let opts = CvOptions::new(5, 42).with_coldstart(support_bucket_edges());
    let mut rsvd_folds: Vec<f64> = Vec::new();
    for (name, beta, graph) in [
        ("RSVD       ", 0.0, None),
        ("IEMF b=0.01", 0.01, Some(&cos)),
        ("IEMF b=0.05", 0.05, Some(&cos)),
        ("IEMF b=0.1 ", 0.1, Some(&cos)),
        ("IEMF b=0.2 ", 0.2, Some(&cos)),
        ("IEMF b=0.4 ", 0.4, Some(&cos)),
        ("IEMF b=0.7 ", 0.7, Some(&cos)),
        ("IEMF b=1.0 ", 1.0, Some(&cos)),
        ("CBMF b=0.1 ", 0.1, Some(&sms)),
    ] {
        let cfg = TrainConfig {
            beta,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let result = cross_validate(&ratings, graph, &cfg, &opts).unwrap();
        let fold_maes: Vec<f64> = result.per_fold.iter().map(|r| r.mae).collect();
        if beta == 0.0 {
            rsvd_folds = fold_maes.clone();
        }
        let wins = fold_maes
            .iter()
            .zip(&rsvd_folds)
            .filter(|(m, r)| m < r)
            .count();
        let cold = result
            .coldstart_mean
            .as_ref()
            .unwrap()
            .iter()
            .find(|b| b.label == "1-10")
            .unwrap();
        println!(
            "{name}: mean MAE {:.5} RMSE {:.5} | wins {wins}/5 | cold(1-10) {:.4} | {:.0}s",
            result.mean.mae,
            result.mean.rmse,
            cold.mae.unwrap_or(f64::NAN),
            t.elapsed().as_secs_f64(),
        );
    }
}
