//! Brute-force metric references, written without reusing library code.

/// Valid (score, grade) pairs in ranked order, by repeated selection of
/// the highest remaining score (earliest index on ties).
pub fn ranked(scores: &[f64], grades: &[f64], mask: &[bool]) -> Vec<(f64, f64)> {
    let mut left: Vec<usize> = (0..scores.len()).filter(|&i| mask[i]).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for p in 1..left.len() {
            if scores[left[p]] > scores[left[best]] {
                best = p;
            }
        }
        let i = left.remove(best);
        out.push((scores[i], grades[i]));
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn dcg_of(grades: &[f64], k: usize) -> f64 {
    let mut total = 0.0;
    for (r, g) in grades.iter().enumerate() {
        if r < k {
            total += (2f64.powf(*g) - 1.0) / ((r + 2) as f64).log2();
        }
    }
    total
}

pub fn metric(name: &str, scores: &[f64], grades: &[f64], mask: &[bool], g_max: u32, k: usize) -> f64 {
    let list = ranked(scores, grades, mask);
    let g: Vec<f64> = list.iter().map(|x| x.1).collect();
    let n = g.len();
    match name {
        "mrr" => {
            for r in 0..n.min(k) {
                if g[r] > 0.0 {
                    return 1.0 / (r + 1) as f64;
                }
            }
            0.0
        }
        "err" => {
            let rel = |x: f64| (2f64.powf(x) - 1.0) / 2f64.powf(g_max.max(1) as f64);
            let mut total = 0.0;
            for r in 0..n.min(k) {
                let mut p = rel(g[r]) / (r + 1) as f64;
                for i in 0..r {
                    p *= 1.0 - rel(g[i]);
                }
                total += p;
            }
            total
        }
        "arp" => {
            let ranks: Vec<f64> = (0..n).filter(|&r| g[r] > 0.0).map(|r| (r + 1) as f64).collect();
            if ranks.is_empty() {
                0.0
            } else {
                ranks.iter().sum::<f64>() / ranks.len() as f64
            }
        }
        "dcg" => dcg_of(&g, k),
        "ndcg" => {
            let ideal = permutations(n)
                .iter()
                .map(|p| dcg_of(&p.iter().map(|&i| g[i]).collect::<Vec<_>>(), k))
                .fold(0.0, f64::max);
            if ideal == 0.0 {
                0.0
            } else {
                dcg_of(&g, k) / ideal
            }
        }
        "precision" => (0..n.min(k)).filter(|&r| g[r] > 0.0).count() as f64 / k as f64,
        "map" => {
            let rel: Vec<usize> = (0..n).filter(|&r| g[r] > 0.0).collect();
            if rel.is_empty() {
                return 0.0;
            }
            let mut total = 0.0;
            for &r in &rel {
                let above = (0..=r).filter(|&i| g[i] > 0.0).count();
                total += above as f64 / (r + 1) as f64;
            }
            total / rel.len() as f64
        }
        "opa" => {
            let (mut pairs, mut good) = (0, 0);
            for a in 0..n {
                for b in 0..n {
                    if list[a].1 > list[b].1 {
                        pairs += 1;
                        if list[a].0 > list[b].0 {
                            good += 1;
                        }
                    }
                }
            }
            if pairs == 0 {
                0.0
            } else {
                good as f64 / pairs as f64
            }
        }
        other => panic!("no oracle for {other}"),
    }
}
