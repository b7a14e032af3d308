mod common;

use std::collections::HashSet;

use codedit::benchdata::{dataset_stats, load_benchmark, save_benchmark, CorpusPair, Vocab, NEIGHBORS_PER_INSTANCE};
use codedit::toymodel::{prompt_key, KeyMode};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn neighbors_are_the_brute_force_nearest() {
    let n = 8;
    let (model, corpus, bench) = common::small_setup(n);
    let v = Vocab::standard();
    let key = |p: &CorpusPair| prompt_key(&model, &v.prompt(p.input()), 1, KeyMode::Mean).unwrap();
    let pool = &corpus[n..];
    let pool_keys: Vec<Vec<f64>> = pool.iter().map(key).collect();
    for (inst, target) in bench.iter().zip(&corpus[..n]) {
        let k = key(target);
        let mut scored: Vec<(f64, usize)> = pool_keys.iter().enumerate().map(|(i, p)| (cosine(&k, p), i)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let expect: Vec<&str> = scored[..NEIGHBORS_PER_INSTANCE].iter().map(|&(_, i)| pool[i].input()).collect();
        let got: Vec<&str> = inst.neighbors.iter().map(|nb| nb.x_u.as_str()).collect();
        assert_eq!(got, expect, "{}", inst.id);
    }
}

#[test]
fn instances_come_from_the_right_pools() {
    let n = 8;
    let (_, corpus, bench) = common::small_setup(n);
    let pool: HashSet<&str> = corpus[n..].iter().map(CorpusPair::input).collect();
    for (inst, target) in bench.iter().zip(&corpus[..n]) {
        assert_eq!(inst.id, target.id);
        assert_eq!((inst.x.as_str(), inst.y.as_str()), (target.input(), target.output()));
        assert_eq!(inst.rewrites.len(), 1);
        assert_ne!(inst.rewrites[0], inst.x);
        for nb in &inst.neighbors {
            assert!(pool.contains(nb.x_u.as_str()));
            assert_ne!(nb.x_u, inst.x);
        }
    }
}

#[test]
fn file_round_trip_and_stats() {
    let (_, _, bench) = common::small_setup(6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.jsonl");
    save_benchmark(&path, &bench).unwrap();
    assert_eq!(load_benchmark(&path).unwrap(), bench);
    let stats = dataset_stats(&bench).unwrap();
    assert_eq!(stats.instances, 6);
}
