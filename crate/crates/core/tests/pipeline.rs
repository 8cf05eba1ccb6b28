use std::path::PathBuf;

use arn::dataset::{
    load_idx, model_from_str, model_to_string, sample_per_class, split_per_class, DatasetError,
    LabeledImageSet,
};
use arn::graph::{Layer, LayerConfig, NodeId};
use arn::vision::{reorder_features, tile_image, NO_WINNER};
use arn::{ArnClassifier, FeatureList, Image, Label, PipelineConfig, ReorderOp, VisionError};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn pool() -> LabeledImageSet {
    let d = data_dir();
    load_idx(
        &d.join("mnist-10k-images-idx3-ubyte.gz"),
        &d.join("mnist-10k-labels-idx1-ubyte.gz"),
    )
    .expect("bundled MNIST subset loads")
}

fn small_config() -> PipelineConfig {
    PipelineConfig {
        perturbation_angles: Vec::new(),
        ..PipelineConfig::default()
    }
}

fn trained(n_per_class: usize, seed: u64) -> (ArnClassifier, LabeledImageSet) {
    let set = sample_per_class(&pool(), n_per_class, seed).unwrap();
    let mut net = ArnClassifier::new(small_config()).unwrap();
    net.train(&set.images, &set.labels).unwrap();
    (net, set)
}

#[test]
fn bundled_subset_shape() {
    let set = pool();
    assert_eq!(set.len(), 10_000);
    assert!(set.images.iter().all(|i| i.height() == 28 && i.width() == 28));
    assert!(set.class_indices().iter().all(|c| c.len() >= 800));
}

#[test]
fn sampling_is_stratified_and_seeded() {
    let set = pool();
    let a = sample_per_class(&set, 50, 9).unwrap();
    assert_eq!(a.len(), 500);
    assert!(a.class_indices().iter().all(|c| c.len() == 50));
    // Round-robin interleave.
    assert!(a.labels.iter().enumerate().all(|(i, l)| l.0 as usize == i % 10));
    assert_eq!(a, sample_per_class(&set, 50, 9).unwrap());
    assert_ne!(a.images, sample_per_class(&set, 50, 10).unwrap().images);
    assert!(sample_per_class(&set, 0, 1).unwrap().is_empty());
    assert!(matches!(
        sample_per_class(&set, 5000, 1),
        Err(DatasetError::InsufficientClass { .. })
    ));
}

#[test]
fn split_is_disjoint_with_stable_test_set() {
    let set = pool();
    let (train, test) = split_per_class(&set, 50, 15, 3).unwrap();
    let (_, test_big) = split_per_class(&set, 200, 15, 3).unwrap();
    assert_eq!(test, test_big);
    for img in &test.images {
        assert!(!train.images.contains(img));
    }
}

#[test]
fn first_image_growth() {
    let set = pool();
    let mut net = ArnClassifier::new(small_config()).unwrap();
    let report = net.train(&set.images[..1], &set.labels[..1]).unwrap();
    assert!(report.l1_nodes <= 16);
    assert_eq!(report.l2_nodes, 1);
}

#[test]
fn l1_is_shared_across_tiles() {
    let (net, set) = trained(5, 2);
    // Ids seen across all tiles index one layer, and the blank corner tiles
    // of different digits resolve to the same node.
    let mut corner_winners = Vec::new();
    for img in &set.images {
        let (_, trace) = net.predict(img).unwrap();
        for step in &trace.tiles {
            if let Some(id) = step.winner {
                assert!(id.index() < net.l1().len());
            }
        }
        corner_winners.push(trace.tiles[0].winner);
    }
    corner_winners.dedup();
    assert_eq!(corner_winners.len(), 1);
}

#[test]
fn training_is_deterministic() {
    let (a, _) = trained(10, 4);
    let (b, _) = trained(10, 4);
    assert_eq!(a.l1().len(), b.l1().len());
    assert_eq!(a.l2().len(), b.l2().len());
    assert_eq!(model_to_string(&a, Some(4)), model_to_string(&b, Some(4)));
    assert_eq!(a.fingerprint(), b.fingerprint());
}

#[test]
fn training_images_recognize_themselves() {
    let (net, set) = trained(20, 5);
    for (img, &label) in set.images.iter().zip(&set.labels) {
        let (p, _) = net.predict(img).unwrap();
        assert!(
            p.labels.contains(&label),
            "training image of {label} predicted {:?}",
            p.labels
        );
    }
}

#[test]
fn shuffled_order_still_self_recognizes() {
    let set = sample_per_class(&pool(), 10, 6).unwrap();
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.reverse();
    order.rotate_left(37);
    let images: Vec<Image> = order.iter().map(|&i| set.images[i].clone()).collect();
    let labels: Vec<Label> = order.iter().map(|&i| set.labels[i]).collect();
    let mut net = ArnClassifier::new(small_config()).unwrap();
    net.train(&images, &labels).unwrap();
    let eval = net.evaluate(&images, &labels).unwrap();
    assert_eq!(eval.counts.wrong + eval.counts.unrecognized, 0);
}

#[test]
fn model_round_trip_is_classification_exact() {
    let (net, _) = trained(10, 7);
    let text = model_to_string(&net, Some(7));
    let back = model_from_str(&text).unwrap();
    assert_eq!(back.seed, Some(7));
    assert_eq!(back.network, net);
    let test = sample_per_class(&pool(), 10, 1234).unwrap();
    for img in &test.images {
        let (pa, ta) = net.predict(img).unwrap();
        let (pb, tb) = back.network.predict(img).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ta.tiles, tb.tiles);
        assert_eq!(ta.l2_output.to_bits(), tb.l2_output.to_bits());
    }
}

#[test]
fn corrupted_model_is_rejected() {
    let (net, _) = trained(3, 8);
    let text = model_to_string(&net, None);
    // Change one digit inside the body.
    let at = text.find("\"hit_count\": ").unwrap() + "\"hit_count\": ".len();
    let mut bytes = text.into_bytes();
    bytes[at] = if bytes[at] == b'7' { b'8' } else { b'7' };
    let err = model_from_str(&String::from_utf8(bytes).unwrap()).err().unwrap();
    assert!(matches!(err, DatasetError::HashMismatch { .. }), "{err}");
}

#[test]
fn future_format_version_is_rejected() {
    let (net, _) = trained(3, 8);
    let text = model_to_string(&net, None).replacen("\"format_version\": 1", "\"format_version\": 2", 1);
    match model_from_str(&text) {
        Err(DatasetError::VersionMismatch { expected, found }) => {
            assert_eq!((expected, found), (1, 2));
        }
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("version 2 accepted"),
    }
    assert!(matches!(
        model_from_str("{not json"),
        Err(DatasetError::Malformed(_))
    ));
}

#[test]
fn trace_replays_and_goes_stale() {
    let (mut net, set) = trained(5, 9);
    let (_, trace) = net.predict(&set.images[3]).unwrap();
    assert_eq!(trace.tiles.len(), 16);
    let report = net.trace_explain(&trace).unwrap();
    assert_eq!(report.lines().filter(|l| l.starts_with("tile")).count(), 16);
    assert_eq!(report.lines().filter(|l| l.starts_with("decision")).count(), 1);
    assert_eq!(report, net.trace_explain(&trace).unwrap());

    let more = sample_per_class(&pool(), 5, 99).unwrap();
    net.train(&more.images, &more.labels).unwrap();
    assert!(matches!(
        net.trace_explain(&trace),
        Err(VisionError::StaleTrace { .. })
    ));
}

#[test]
fn masked_blank_image_reaches_l2_as_all_sentinels() {
    let set = sample_per_class(&pool(), 50, 10).unwrap();
    let mut net = ArnClassifier::new(PipelineConfig {
        mask_floor: Some(0.1),
        ..small_config()
    })
    .unwrap();
    net.train(&set.images, &set.labels).unwrap();
    let (_, trace) = net.predict(&Image::zeros(28, 28)).unwrap();
    assert!(trace.tiles.iter().all(|t| t.winner.is_none()));
    assert!(trace.features.entries.iter().all(|&e| e == NO_WINNER));
    let report = net.trace_explain(&trace).unwrap();
    assert_eq!(report.lines().filter(|l| l.ends_with("no L1 winner")).count(), 16);
    // L2 still reads graded L1 responses, so a node stored over faint
    // strokes can resonate with the empty tiles.
    assert_eq!(
        trace.l2_winner.is_some(),
        trace.l2_output >= net.config().l2_threshold
    );
}

#[test]
fn unmasked_blank_tiles_share_one_background_node() {
    let (net, _) = trained(10, 10);
    let (_, trace) = net.predict(&Image::zeros(28, 28)).unwrap();
    let first = trace.tiles[0]
        .winner
        .expect("blank tiles are learned from digit borders");
    assert!(trace
        .tiles
        .iter()
        .all(|t| t.winner == Some(first) && t.output == 1.0));
    assert_eq!(net.l1().node(first).unwrap().centers, vec![0.0; 49]);
}

#[test]
fn masking_never_widens_new_nodes() {
    let set = sample_per_class(&pool(), 5, 11).unwrap();
    let mut plain = ArnClassifier::new(small_config()).unwrap();
    let mut masked = ArnClassifier::new(PipelineConfig {
        mask_floor: Some(0.1),
        ..small_config()
    })
    .unwrap();
    plain.train(&set.images, &set.labels).unwrap();
    masked.train(&set.images, &set.labels).unwrap();
    assert!(plain.l1().nodes().iter().all(|n| n.width() == 49));
    // A masked node keeps only the pixels above the floor when it was grown.
    assert!(masked.l1().nodes().iter().all(|n| n.width() < 49));
    assert!(masked.l1().resonator_count() < plain.l1().resonator_count());
}

#[test]
fn masked_blank_tiles_emit_the_sentinel() {
    let (net, set) = {
        let set = sample_per_class(&pool(), 3, 12).unwrap();
        let mut net = ArnClassifier::new(PipelineConfig {
            mask_floor: Some(0.1),
            ..small_config()
        })
        .unwrap();
        net.train(&set.images, &set.labels).unwrap();
        (net, set)
    };
    let (_, trace) = net.predict(&set.images[0]).unwrap();
    // The top-left tile of an MNIST digit is empty.
    assert_eq!(trace.tiles[0].winner, None);
    assert_eq!(trace.features.entries[0], NO_WINNER);
}

#[test]
fn feature_list_from_real_image() {
    let (net, set) = trained(3, 13);
    let (_, trace) = net.predict(&set.images[0]).unwrap();
    assert_eq!(trace.features.len(), 16);
    assert!(trace.features.entries.iter().all(|&v| (0.0..=1.0).contains(&v)));
    for (i, step) in trace.tiles.iter().enumerate() {
        assert_eq!(trace.features.feature(i), step.winner);
    }
    let tiles = tile_image(&set.images[0], &net.config().tiling).unwrap();
    assert_eq!(tiles.len(), 16);
}

#[test]
fn reorders_compose() {
    let list = FeatureList::from_winners(
        &(0..16)
            .map(|i| (i % 3 != 0).then_some(NodeId(i)))
            .collect::<Vec<_>>(),
        4,
        4,
        4096,
    )
    .unwrap();
    let h = reorder_features(&list, ReorderOp::MirrorH);
    let v = reorder_features(&list, ReorderOp::MirrorV);
    // Mirroring both ways is the 180° reversal.
    assert_eq!(
        reorder_features(&h, ReorderOp::MirrorV),
        reorder_features(&list, ReorderOp::Reverse)
    );
    assert_eq!(
        reorder_features(&v, ReorderOp::MirrorH),
        reorder_features(&list, ReorderOp::Reverse)
    );
}

#[test]
fn layer_grows_from_plain_vectors() {
    let mut layer = Layer::new(LayerConfig::new(3, 0.9, 2.42)).unwrap();
    let a = layer.train_step(&[0.1, 0.2, 0.3][..], None).unwrap();
    let b = layer.train_step(&[0.1, 0.2, 0.3][..], None).unwrap();
    assert_eq!(a.created, Some(NodeId(0)));
    assert_eq!(b.winner, Some(NodeId(0)));
    assert_eq!(b.output, 1.0);
}
