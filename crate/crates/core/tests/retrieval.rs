use std::thread;

use dse_core::data::synthetic_sentences;
use dse_core::encoder::EncoderConfig;
use dse_core::numkernel::{Parameterized, SeededRng, Tensor};
use dse_core::retrieval::{
    build_index, build_index_parallel, offline_pairwise, online_query, run_benchmark, BenchmarkOptions,
    EmbeddingIndex, Scenario, ScoringMode,
};
use dse_core::student::{StudentConfig, StudentModel};
use dse_core::teacher::{TaskKind, TeacherConfig, TeacherModel};
use dse_core::DseError;

fn encoder() -> EncoderConfig {
    EncoderConfig {
        num_layers: 2,
        hidden: 16,
        heads: 2,
        ffn: 32,
        max_len: 16,
        vocab_size: 512,
        ..Default::default()
    }
}

fn models(task: TaskKind) -> (StudentModel, TeacherModel) {
    let mut s = StudentModel::new(
        &StudentConfig {
            encoder: encoder(),
            task,
            head_hidden: 8,
        },
        1,
    )
    .unwrap();
    // Larger head weights than the default init so scores are well spread.
    let mut rng = SeededRng::new(2);
    for (_, p) in s.head_parameters_mut() {
        let shape = p.value.shape().to_vec();
        p.value = Tensor::randn(&shape, 0.3, &mut rng);
    }
    let t = TeacherModel::new(
        &TeacherConfig {
            encoder: encoder(),
            task,
        },
        3,
    )
    .unwrap();
    (s, t)
}

#[test]
fn singleton_index_and_pass_accounting() {
    let (s, _) = models(TaskKind::Binary);
    let catalog = synthetic_sentences(4, 1);
    let index = build_index(&s, &catalog).unwrap();
    assert_eq!(index.len(), 1);
    assert_eq!(index.row(0), s.embed(&catalog[0]).unwrap().as_slice());

    let catalog = synthetic_sentences(5, 37);
    let before = s.encoder.pass_count();
    let index = build_index(&s, &catalog).unwrap();
    assert_eq!(s.encoder.pass_count() - before, 37);
    assert_eq!(index.dim(), s.embedding_dim());
    assert!(matches!(build_index(&s, &[]), Err(DseError::Input(_))));
}

#[test]
fn parallel_build_matches_serial() {
    let (s, _) = models(TaskKind::Binary);
    let catalog = synthetic_sentences(6, 40);
    assert_eq!(
        build_index(&s, &catalog).unwrap(),
        build_index_parallel(&s, &catalog).unwrap()
    );
}

#[test]
fn index_file_round_trip() {
    let (s, _) = models(TaskKind::Regression);
    let index = build_index(&s, &synthetic_sentences(7, 25)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("catalog.idx");
    index.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"DSEIDX1\n{"));
    let back = EmbeddingIndex::load(&path).unwrap();
    assert_eq!(back, index);
    assert!(back
        .data()
        .iter()
        .zip(index.data())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    back.check_model(&s).unwrap();

    let (mut other, _) = models(TaskKind::Regression);
    other.head_w2.value.data_mut()[0] += 1.0;
    assert!(matches!(back.check_model(&other), Err(DseError::Incompatible(_))));

    assert!(matches!(
        EmbeddingIndex::from_bytes(&bytes[..bytes.len() - 3]),
        Err(DseError::Corrupt(_))
    ));
    assert!(matches!(
        EmbeddingIndex::from_bytes(b"DSEIDX2\n{}"),
        Err(DseError::Format(_))
    ));
}

#[test]
fn offline_counts_for_twenty_sentences() {
    let (s, t) = models(TaskKind::Binary);
    let catalog = synthetic_sentences(8, 20);
    let teacher = offline_pairwise(&s, &t, &catalog, ScoringMode::Teacher).unwrap();
    assert_eq!((teacher.encoder_passes, teacher.head_evals), (400, 0));
    let dse = offline_pairwise(&s, &t, &catalog, ScoringMode::Dse).unwrap();
    assert_eq!((dse.encoder_passes, dse.head_evals), (20, 400));
    assert_eq!(
        teacher.scores.get(3, 5),
        t.score(&catalog[3], &catalog[5]).unwrap().as_slice()
    );
}

#[test]
fn offline_dse_matrix_matches_naive_loop() {
    let (s, t) = models(TaskKind::Multiclass);
    let catalog = synthetic_sentences(9, 50);
    let run = offline_pairwise(&s, &t, &catalog, ScoringMode::Dse).unwrap();
    for i in 0..50 {
        for j in 0..50 {
            let naive = s.score(&catalog[i], &catalog[j]).unwrap();
            for (a, b) in run.scores.get(i, j).iter().zip(&naive) {
                assert!((a - b).abs() <= 1e-12, "({i}, {j})");
            }
        }
    }
}

#[test]
fn online_ranking_matches_naive_sort() {
    let (s, _) = models(TaskKind::Binary);
    let catalog = synthetic_sentences(10, 200);
    let index = build_index(&s, &catalog).unwrap();
    let q = synthetic_sentences(11, 1).remove(0);

    let (p0, h0) = (s.encoder.pass_count(), s.head_eval_count());
    let ranked = online_query(&index, &s, &q, 200, None).unwrap();
    assert_eq!(s.encoder.pass_count() - p0, 1);
    assert_eq!(s.head_eval_count() - h0, 200);

    let mut naive: Vec<(usize, f64)> = catalog
        .iter()
        .enumerate()
        .map(|(i, x)| (i, s.score(&q, x).unwrap()[1]))
        .collect();
    naive.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    assert_eq!(ranked.len(), 200);
    for (r, n) in ranked.iter().zip(&naive) {
        assert_eq!(r.0, n.0);
        assert!((r.1 - n.1).abs() <= 1e-12);
    }
    let mut ids: Vec<usize> = ranked.iter().map(|r| r.0).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..200).collect::<Vec<_>>());

    let top3 = online_query(&index, &s, &q, 3, None).unwrap();
    assert_eq!(top3, ranked[..3]);
    let by_first = online_query(&index, &s, &q, 5, Some(0)).unwrap();
    assert_eq!(by_first[0].1, s.score(&q, &catalog[by_first[0].0]).unwrap()[0]);
    assert!(matches!(
        online_query(&index, &s, &q, 0, None),
        Err(DseError::Input(_))
    ));
    assert!(matches!(
        online_query(&index, &s, &q, 201, None),
        Err(DseError::Input(_))
    ));
    assert!(online_query(&index, &s, &q, 1, Some(2)).is_err());
}

#[test]
fn equal_scores_rank_lower_id_first() {
    let (s, _) = models(TaskKind::Regression);
    let mut catalog = synthetic_sentences(12, 6);
    catalog[4] = catalog[1].clone();
    let index = build_index(&s, &catalog).unwrap();
    let q = synthetic_sentences(13, 1).remove(0);
    let ranked = online_query(&index, &s, &q, 6, None).unwrap();
    let p1 = ranked.iter().position(|r| r.0 == 1).unwrap();
    let p4 = ranked.iter().position(|r| r.0 == 4).unwrap();
    assert_eq!(ranked[p1].1.to_bits(), ranked[p4].1.to_bits());
    assert_eq!(p4, p1 + 1);
}

#[test]
fn concurrent_queries_match_serial() {
    let (s, _) = models(TaskKind::Binary);
    let index = build_index(&s, &synthetic_sentences(14, 60)).unwrap();
    let queries = synthetic_sentences(15, 8);
    let serial: Vec<_> = queries
        .iter()
        .map(|q| online_query(&index, &s, q, 10, None).unwrap())
        .collect();
    let parallel: Vec<_> = thread::scope(|scope| {
        let handles: Vec<_> = queries
            .iter()
            .map(|q| scope.spawn(|| online_query(&index, &s, q, 10, None).unwrap()))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}

#[test]
fn benchmark_report_is_consistent() {
    let (s, t) = models(TaskKind::Binary);
    let opts = BenchmarkOptions { seed: 3, repeats: 2 };
    let online = run_benchmark(Scenario::Online(100), &s, &t, &opts).unwrap();
    assert_eq!(online.teacher_encoder_passes, 100);
    assert_eq!(online.dse_encoder_passes, 1);
    assert_eq!(online.dse_head_evals, 100);
    let recomputed = online.teacher_seconds / (online.dse_embed_seconds + online.dse_head_seconds);
    assert_eq!(online.speedup, recomputed);
    assert!(online.speedup > 0.0);

    let offline = run_benchmark(Scenario::Offline(12), &s, &t, &opts).unwrap();
    assert_eq!(offline.teacher_encoder_passes, 144);
    assert_eq!((offline.dse_encoder_passes, offline.dse_head_evals), (12, 144));

    let json = serde_json::to_value(&online).unwrap();
    assert_eq!(json["N"], 100);
    assert_eq!(json["scenario"], "online");
    let table = online.to_table();
    assert!(table.contains("DSE (psi phase)") && table.contains("DSE (f phase)"));
    assert!(run_benchmark(Scenario::Online(0), &s, &t, &opts).is_err());
}

#[test]
fn student_parameters_untouched_by_scoring() {
    let (s, t) = models(TaskKind::Binary);
    let snapshot: Vec<Vec<f64>> = s
        .parameters()
        .iter()
        .map(|(_, p)| p.value.data().to_vec())
        .collect();
    offline_pairwise(&s, &t, &synthetic_sentences(16, 5), ScoringMode::Dse).unwrap();
    let after: Vec<Vec<f64>> = s
        .parameters()
        .iter()
        .map(|(_, p)| p.value.data().to_vec())
        .collect();
    assert_eq!(snapshot, after);
}
