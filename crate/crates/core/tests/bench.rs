use iiga::attention::{AttentionMode, IigaConfig};
use iiga::bench::{bench_attention, flop_count, BenchConfig};

/// Chunk lengths for stride = W, written out independently.
fn chunk_lengths(t: u64, w: u64) -> Vec<u64> {
    let mut out = vec![w; (t / w) as usize];
    if !t.is_multiple_of(w) {
        out.push(t % w);
    }
    out
}

#[test]
fn intra_scores_are_vanilla_over_chunk_count() {
    let v = flop_count(240, 64, 12, 4, AttentionMode::Vanilla).unwrap();
    let i = flop_count(240, 64, 12, 4, AttentionMode::Intra).unwrap();
    assert_eq!(i.score_flops * 20, v.score_flops);
    assert_eq!(i.weighted_sum_flops * 20, v.weighted_sum_flops);
    assert_eq!(v.score_flops, 240 * 240 * 64);
}

#[test]
fn full_scale_totals() {
    let (t, d, w) = (256u64, 256u64, 12u64);
    let sq: u64 = chunk_lengths(t, w).iter().map(|l| l * l).sum();
    let c = chunk_lengths(t, w).len() as u64;
    let proj = 4 * t * d * d;
    let vanilla = proj + 2 * t * t * d;
    let intra = proj + 2 * d * sq;
    let inter = intra + 4 * c * d * d + 2 * c * c * d + t * d;
    assert_eq!((vanilla, intra, inter), (100_663_296, 68_665_344, 74_745_856));

    let v = flop_count(256, 256, 12, 8, AttentionMode::Vanilla).unwrap();
    let i = flop_count(256, 256, 12, 8, AttentionMode::Intra).unwrap();
    let ii = flop_count(256, 256, 12, 8, AttentionMode::IntraInter).unwrap();
    assert_eq!(v.total_flops, vanilla);
    assert_eq!(i.total_flops, intra);
    assert_eq!(ii.total_flops, inter);
    // At least 20% below vanilla: 5·intra ≤ 4·vanilla.
    assert!(5 * i.total_flops <= 4 * v.total_flops);
    assert!(5 * ii.total_flops <= 4 * v.total_flops);
    for r in [&v, &i, &ii] {
        assert_eq!(
            r.total_flops,
            r.score_flops + r.weighted_sum_flops + r.projection_flops + r.pooling_flops
        );
    }
}

#[test]
fn linear_versus_quadratic_growth() {
    for t in [48, 96, 120] {
        let v1 = flop_count(t, 32, 12, 4, AttentionMode::Vanilla).unwrap();
        let v2 = flop_count(2 * t, 32, 12, 4, AttentionMode::Vanilla).unwrap();
        let i1 = flop_count(t, 32, 12, 4, AttentionMode::Intra).unwrap();
        let i2 = flop_count(2 * t, 32, 12, 4, AttentionMode::Intra).unwrap();
        assert_eq!(v2.score_flops, 4 * v1.score_flops);
        assert_eq!(i2.score_flops, 2 * i1.score_flops);
    }
}

#[test]
fn bench_report_is_complete_and_flops_are_stable() {
    let cfg = BenchConfig {
        encoder: IigaConfig {
            n_blocks: 1,
            heads: 2,
            d_model: 16,
            d_ff: 32,
            ..IigaConfig::toy()
        },
        sizes: vec![12, 48],
        repetitions: 20,
        warmup: 2,
        seed: 1,
    };
    let a = bench_attention::<f64>(&cfg).unwrap();
    let b = bench_attention::<f32>(&cfg).unwrap();
    assert_eq!(a.sizes.len(), 2);
    for (sa, sb) in a.sizes.iter().zip(&b.sizes) {
        assert_eq!(sa.modes.len(), 3);
        for (ma, mb) in sa.modes.iter().zip(&sb.modes) {
            assert_eq!(ma.flops, mb.flops);
            assert_eq!(ma.samples.len(), 20);
            assert!(ma.median_seconds > 0.0 && ma.mad_seconds >= 0.0);
        }
    }
    // T = W: one chunk, identical totals for vanilla and intra.
    assert_eq!(
        a.sizes[0].modes[0].flops.total_flops,
        a.sizes[0].modes[1].flops.total_flops
    );
    assert!(bench_attention::<f64>(&BenchConfig {
        repetitions: 5,
        ..cfg.clone()
    })
    .is_err());
    assert!(bench_attention::<f64>(&BenchConfig { sizes: vec![], ..cfg }).is_err());
}
