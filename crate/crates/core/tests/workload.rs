use std::collections::HashMap;

use tierkv::workload::{
    final_lengths, generate_trace, load_trace, parse_trace, preset, save_trace, trace_to_string,
    Arrival, GenConfig, LengthDist, TraceRecord,
};

fn gaps(trace: &[TraceRecord], session_ms: u64) -> Vec<f64> {
    let mut last: HashMap<u64, u64> = HashMap::new();
    let mut out = Vec::new();
    for r in trace {
        if let Some(prev) = last.insert(r.user, r.ts) {
            out.push((r.ts - prev - session_ms) as f64);
        }
    }
    out
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(),
    )
}

fn many_visits(arrival: Arrival) -> GenConfig {
    GenConfig {
        num_users: 200,
        total_requests: 40_000,
        arrival,
        session_ms: 1000,
        length: LengthDist::Fixed { len: 400 },
        min_len: 1,
        max_len: 400,
        delta_mean: 1.0,
        ..preset("kuairand1k").unwrap()
    }
}

#[test]
fn save_load_round_trip() {
    let g = GenConfig {
        num_users: 20,
        total_requests: 100,
        vocab: 50,
        ..preset("mt").unwrap()
    };
    let t = generate_trace(&g).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    save_trace(&path, &t).unwrap();
    assert_eq!(load_trace(&path).unwrap(), t);
    assert_eq!(parse_trace(&trace_to_string(&t)).unwrap(), t);
}

#[test]
fn same_seed_same_bytes() {
    let g = preset("kuairand1k").unwrap();
    assert_eq!(
        trace_to_string(&generate_trace(&g).unwrap()),
        trace_to_string(&generate_trace(&g).unwrap())
    );
    let other = GenConfig {
        seed: 1,
        ..g.clone()
    };
    assert_ne!(generate_trace(&g).unwrap(), generate_trace(&other).unwrap());
}

#[test]
fn kuairand_preset_statistics() {
    let g = preset("kuairand1k").unwrap();
    let t = generate_trace(&g).unwrap();
    assert_eq!(t.len(), g.total_requests);
    let lens = final_lengths(&t);
    assert_eq!(lens.len(), 1000);
    let mean = lens.iter().map(|(_, l)| *l as f64).sum::<f64>() / lens.len() as f64;
    assert!((mean - 6375.0).abs() <= 637.5, "mean {mean}");
    assert!(lens.iter().all(|(_, l)| (1..=20_000).contains(l)));
}

#[test]
fn mt_preset_lengths_in_bounds() {
    let t = generate_trace(&preset("mt").unwrap()).unwrap();
    let lens = final_lengths(&t);
    assert_eq!(lens.len(), 2884);
    assert!(lens.iter().all(|(_, l)| (4000..=6000).contains(l)));
}

#[test]
fn lognormal_gaps_fit_configured_parameters() {
    let g = many_visits(Arrival::LogNormal {
        mu: 10.0,
        sigma: 1.5,
    });
    let logs: Vec<f64> = gaps(&generate_trace(&g).unwrap(), g.session_ms)
        .into_iter()
        .map(|x| x.max(1.0).ln())
        .collect();
    let (m, s) = mean_sd(&logs);
    assert!((m - 10.0).abs() < 0.05, "log mean {m}");
    assert!((s - 1.5).abs() < 0.05, "log sd {s}");
    // upper quantile ratios of a log-normal: q99 / q50 = exp(2.326 sigma)
    let mut sorted = logs.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[(p * (sorted.len() - 1) as f64) as usize];
    assert!(((q(0.99) - q(0.5)) - 2.326 * 1.5).abs() < 0.15);
}

#[test]
fn pareto_gaps_have_configured_tail_index() {
    let g = many_visits(Arrival::Pareto {
        scale: 1000.0,
        shape: 1.5,
    });
    let mut x = gaps(&generate_trace(&g).unwrap(), g.session_ms);
    x.sort_by(|a, b| b.total_cmp(a));
    // Hill estimator over the top 5%
    let k = x.len() / 20;
    let hill = k as f64 / x[..k].iter().map(|v| (v / x[k]).ln()).sum::<f64>();
    assert!((hill - 1.5).abs() < 0.15, "tail index {hill}");
    assert!(x.iter().all(|&v| v >= 999.0));
}

#[test]
fn visits_of_a_user_cluster_in_time() {
    let g = preset("kuairand1k").unwrap();
    let t = generate_trace(&g).unwrap();
    // median same-user gap is well below the mean gap
    let gs = gaps(&t, g.session_ms);
    let mut sorted = gs.clone();
    sorted.sort_by(f64::total_cmp);
    let (mean, _) = mean_sd(&gs);
    assert!(sorted[sorted.len() / 2] < 0.7 * mean);
}
