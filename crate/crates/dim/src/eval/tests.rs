use super::*;
use crate::attacks::{ArchiveRecord, AttackArchive, Distances};
use crate::rng;
use rand::Rng;

fn archive(model: &str, attack: &str, norm: Norm, dists: Vec<f32>) -> AttackArchive {
    AttackArchive {
        model: model.into(),
        attack: attack.into(),
        norm,
        epsilon: None,
        records: dists
            .into_iter()
            .enumerate()
            .map(|(i, d)| ArchiveRecord {
                index: i as u32,
                success: d.is_finite(),
                distances: Distances { l0: d, l1: d, l2: d, linf: d },
                image: None,
            })
            .collect(),
    }
}

#[test]
fn threshold_accuracy_hand_cases() {
    let dists = [0.0, 0.2, f32::INFINITY, 0.5, 0.3];
    // Strictly greater than 0.3 counts as robust: inf and 0.5.
    assert!((accuracy_at_threshold(&dists, 0.3) - 0.4).abs() < 1e-12);
    assert_eq!(accuracy_at_threshold(&[f32::INFINITY; 4], 0.3), 1.0);
    assert_eq!(accuracy_at_threshold(&[0.0; 4], 0.3), 0.0);
}

#[test]
fn threshold_accuracy_monotone_in_eps() {
    let mut rng = rng::stream(3, "eval-mono", 0);
    let dists: Vec<f32> = (0..200)
        .map(|_| {
            let u: f32 = rng.gen();
            if u < 0.1 {
                0.0
            } else if u > 0.9 {
                f32::INFINITY
            } else {
                rng.gen_range(0.0..2.0)
            }
        })
        .collect();
    let mut last = 0.0;
    for step in 0..50 {
        let eps = step as f32 * 0.05;
        let acc = accuracy_at_threshold(&dists, eps);
        if step > 0 {
            assert!(acc <= last, "accuracy must not grow as eps grows");
        }
        last = acc;
    }
}

#[test]
fn median_hand_cases() {
    assert_eq!(median_distance(&[0.0, 0.2, 0.3, 0.5, f32::INFINITY]), 0.3);
    assert_eq!(median_distance(&[f32::INFINITY, f32::INFINITY, 1.0]), f32::INFINITY);
    assert_eq!(median_distance(&[0.2]), 0.2);
    // Lower median on even counts.
    assert_eq!(median_distance(&[0.1, 0.2, 0.3, 0.4]), 0.2);
}

#[test]
fn median_matches_sort_oracle_randomized() {
    let mut rng = rng::stream(7, "median-oracle", 0);
    for _ in 0..2000 {
        let n = rng.gen_range(1..30);
        let dists: Vec<f32> = (0..n)
            .map(|_| {
                let u: f32 = rng.gen();
                if u < 0.15 {
                    0.0
                } else if u > 0.85 {
                    f32::INFINITY
                } else {
                    rng.gen_range(0.0..3.0)
                }
            })
            .collect();
        let mut sorted = dists.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = sorted[(sorted.len() - 1) / 2];
        assert_eq!(median_distance(&dists), oracle);
    }
}

fn build_table() -> DistanceTable {
    let archives = vec![
        archive("cnn", "PGD", Norm::L2, vec![0.4, f32::INFINITY, 0.2, 1.9]),
        archive("cnn", "DDNAttack", Norm::L2, vec![f32::INFINITY, 1.0, 0.9, 2.0]),
        archive("cnn", "PGD", Norm::Linf, vec![0.1, 0.1, f32::INFINITY, 0.4]),
        archive("dim", "PGD", Norm::L2, vec![1.9, 1.8, f32::INFINITY, f32::INFINITY]),
    ];
    DistanceTable::from_archives(
        vec![
            ("cnn".into(), vec![true, true, true, true]),
            ("dim".into(), vec![true, true, true, false]),
        ],
        &archives,
        &Thresholds::default(),
    )
    .unwrap()
}

#[test]
fn aggregation_is_identity_for_single_attack() {
    let table = build_table();
    let dim = table.model_index("dim").unwrap();
    let agg = aggregate_over_attacks(&table, dim, Norm::L2).unwrap();
    // The dim row has the clean-miss override applied on sample 3.
    assert_eq!(agg, vec![1.9, 1.8, f32::INFINITY, 0.0]);
}

#[test]
fn aggregation_takes_per_sample_minimum() {
    let table = build_table();
    let cnn = table.model_index("cnn").unwrap();
    let agg = aggregate_over_attacks(&table, cnn, Norm::L2).unwrap();
    assert_eq!(agg, vec![0.4, 1.0, 0.2, 1.9]);
}

#[test]
fn aggregate_accuracy_never_exceeds_per_attack_accuracy() {
    let mut rng = rng::stream(11, "agg-prop", 0);
    for _ in 0..300 {
        let n = rng.gen_range(3..20);
        let attacks = rng.gen_range(1..5);
        let archives: Vec<AttackArchive> = (0..attacks)
            .map(|a| {
                let dists: Vec<f32> = (0..n)
                    .map(|_| {
                        let u: f32 = rng.gen();
                        if u > 0.8 {
                            f32::INFINITY
                        } else {
                            rng.gen_range(0.0..3.0)
                        }
                    })
                    .collect();
                archive("m", &format!("A{a}"), Norm::L2, dists)
            })
            .collect();
        let table = DistanceTable::from_archives(
            vec![("m".into(), vec![true; n])],
            &archives,
            &Thresholds::default(),
        )
        .unwrap();
        let summaries = summarize(&table, &Thresholds::default());
        let s = &summaries[0].norms[0];
        for (_, acc) in &s.per_attack {
            assert!(
                s.aggregate_accuracy <= acc + 1e-12,
                "aggregate {} vs per-attack {acc}",
                s.aggregate_accuracy
            );
        }
    }
}

#[test]
fn minimal_accuracy_is_min_over_all_rows() {
    let table = build_table();
    let summaries = summarize(&table, &Thresholds::default());
    let cnn = &summaries[0];
    let expected = cnn
        .norms
        .iter()
        .flat_map(|s| s.per_attack.iter().map(|(_, a)| *a))
        .fold(f64::INFINITY, f64::min);
    assert_eq!(cnn.minimal_accuracy(), expected);
    // Forcing one zero-accuracy row forces the minimum to zero.
    let archives = vec![
        archive("m", "A", Norm::L2, vec![0.0, 0.0]),
        archive("m", "B", Norm::L2, vec![f32::INFINITY, f32::INFINITY]),
    ];
    let t = DistanceTable::from_archives(
        vec![("m".into(), vec![true, true])],
        &archives,
        &Thresholds::default(),
    )
    .unwrap();
    assert_eq!(summarize(&t, &Thresholds::default())[0].minimal_accuracy(), 0.0);
}

#[test]
fn report_csv_round_trips() {
    let table = build_table();
    let thresholds = Thresholds::default();
    let summaries = summarize(&table, &thresholds);
    let csv = render_csv(&table, &summaries, &thresholds);
    let parsed = parse_report_csv(&csv).unwrap();
    assert_eq!(parsed.models, vec!["cnn".to_string(), "dim".to_string()]);
    // Row count: unique (attack, norm) pairs.
    assert_eq!(parsed.attack_rows.len(), 3);
    // Missing cells stay missing.
    let linf_row = parsed
        .attack_rows
        .iter()
        .find(|(a, n, _, _)| a == "PGD" && n == "Linf")
        .unwrap();
    assert!(linf_row.3[0].is_some());
    assert!(linf_row.3[1].is_none());
    // Values survive the round trip.
    let l2_row = parsed
        .attack_rows
        .iter()
        .find(|(a, n, _, _)| a == "PGD" && n == "L2")
        .unwrap();
    let cnn_acc = summaries[0].norms.iter().find(|s| s.norm == Norm::L2).unwrap();
    let (_, expect) = cnn_acc.per_attack.iter().find(|(n, _)| n == "PGD").unwrap();
    assert!((l2_row.3[0].unwrap() - expect * 100.0).abs() < 1e-3);
    // Summary rows parse with medians.
    let all_l2 = parsed.all_rows.iter().find(|(n, _)| n == "ALL_L2").unwrap();
    let (median, acc) = all_l2.1[0].unwrap();
    let s = summaries[0].norms.iter().find(|s| s.norm == Norm::L2).unwrap();
    assert_eq!(median, s.median);
    assert!((acc - s.aggregate_accuracy * 100.0).abs() < 1e-3);
    assert_eq!(parsed.minimal_accuracy.len(), 2);
}

#[test]
fn imported_archive_adds_exactly_one_row() {
    let mut archives = vec![archive("cnn", "PGD", Norm::L2, vec![0.4, 0.5])];
    let t1 = DistanceTable::from_archives(
        vec![("cnn".into(), vec![true, true])],
        &archives,
        &Thresholds::default(),
    )
    .unwrap();
    archives.push(archive("cnn", "BrendelBethgeAttack", Norm::L2, vec![0.2, 0.3]));
    let t2 = DistanceTable::from_archives(
        vec![("cnn".into(), vec![true, true])],
        &archives,
        &Thresholds::default(),
    )
    .unwrap();
    assert_eq!(t2.rows.len(), t1.rows.len() + 1);
}

fn blobs(n_per: usize, sep: f32, seed: u64) -> (Vec<Vec<f32>>, Vec<u8>) {
    let mut rng = rng::stream(seed, "blobs", 0);
    let mut latents = Vec::new();
    let mut labels = Vec::new();
    for class in 0..2u8 {
        for _ in 0..n_per {
            let center = if class == 0 { 0.0 } else { sep };
            let row: Vec<f32> = (0..10)
                .map(|d| center * f32::from(d % 2 == 0) + rng.gen_range(-0.5..0.5))
                .collect();
            latents.push(row);
            labels.push(class);
        }
    }
    (latents, labels)
}

#[test]
fn tsne_separates_well_separated_blobs() {
    let (latents, labels) = blobs(45, 8.0, 5);
    let cfg = TsneConfig { perplexity: 20.0, iters: 500, ..Default::default() };
    let emb = tsne_embed(&latents, &labels, 0, &cfg).unwrap();
    assert_eq!(emb.points.len(), latents.len());
    assert!(emb.final_kl < emb.initial_kl, "{} vs {}", emb.final_kl, emb.initial_kl);
    let sil = class_silhouette(&emb.points, &emb.labels, 0);
    assert!(sil > 0.5, "silhouette {sil}");
}

#[test]
fn tsne_is_equivariant_under_permutation() {
    let (latents, labels) = blobs(20, 4.0, 9);
    let cfg = TsneConfig { perplexity: 10.0, iters: 120, ..Default::default() };
    let emb = tsne_embed(&latents, &labels, 0, &cfg).unwrap();
    // Reverse the rows; outputs must permute identically.
    let rev_latents: Vec<Vec<f32>> = latents.iter().rev().cloned().collect();
    let rev_labels: Vec<u8> = labels.iter().rev().cloned().collect();
    let emb_rev = tsne_embed(&rev_latents, &rev_labels, 0, &cfg).unwrap();
    for i in 0..latents.len() {
        let j = latents.len() - 1 - i;
        assert_eq!(emb.points[i], emb_rev.points[j], "row {i}");
    }
}

#[test]
fn tsne_rejects_degenerate_inputs() {
    let latents = vec![vec![1.0f32; 10]; 100];
    let labels = vec![0u8; 100];
    assert!(tsne_embed(&latents, &labels, 0, &TsneConfig::default()).is_err());
    // Too few samples for the perplexity.
    let (latents, labels) = blobs(10, 4.0, 2);
    let cfg = TsneConfig { perplexity: 10.0, ..Default::default() };
    assert!(tsne_embed(&latents, &labels, 0, &cfg).is_err());
}

#[test]
fn scatter_outputs_have_all_classes_and_rows() {
    let points: Vec<[f32; 2]> = (0..20).map(|i| [i as f32, (i % 5) as f32]).collect();
    let labels: Vec<u8> = (0..20).map(|i| (i % 10) as u8).collect();
    let emb = LatentEmbedding {
        points,
        labels,
        model_index: 3,
        initial_kl: 1.0,
        final_kl: 0.5,
    };
    let svg = render_svg(&emb);
    for color in ["#1f77b4", "#17becf", "#bcbd22"] {
        assert!(svg.contains(color), "missing {color}");
    }
    assert!(svg.contains("internal model 3"));
    let csv = render_points_csv(&emb);
    assert_eq!(csv.lines().count(), 21); // header + one line per point
}

#[test]
fn latent_extraction_width_and_purity() {
    use crate::data::ImageBatch;
    use crate::models::{denoiser_arch, internal_model_arch, Denoiser, DimClassifier, InternalModelSet};
    use crate::nn::Network;
    use crate::tensor::Tensor;
    let denoiser = Denoiser::new(Network::with_init(denoiser_arch(), 4).unwrap()).unwrap();
    let ims = InternalModelSet::new(
        (0..10)
            .map(|k| Network::with_init(internal_model_arch(), k).unwrap())
            .collect(),
    )
    .unwrap();
    let dim = DimClassifier::dim(denoiser, ims);
    // Two identical images: identical latent rows of width 10.
    let img = vec![0.4f32; 784];
    let mut data = img.clone();
    data.extend_from_slice(&img);
    let batch = ImageBatch::new(Tensor::new(vec![2, 1, 28, 28], data).unwrap(), vec![1, 1]).unwrap();
    let latents = extract_latents(&dim, &batch, 7).unwrap();
    assert_eq!(latents.len(), 2);
    assert_eq!(latents[0].len(), 10);
    assert_eq!(latents[0], latents[1]);
    assert!(extract_latents(&dim, &batch, 10).is_err());
}
