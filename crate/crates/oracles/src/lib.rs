//! Slow, obviously-correct reference implementations used to check the
//! fast paths in `growmerge`.

type Vec64 = Vec<f64>;

/// Every permutation of `0..n`, in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Smallest total cost over all permutations of a square matrix.
pub fn brute_min_cost(rows: &[Vec<f64>]) -> f64 {
    permutations(rows.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(r, &c)| rows[r][c]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Best agreement fraction over every one-to-one relabeling.
pub fn brute_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let relabel = |v: &[usize]| -> Vec<usize> {
        let mut ids: Vec<usize> = v.to_vec();
        ids.sort_unstable();
        ids.dedup();
        v.iter().map(|x| ids.binary_search(x).unwrap()).collect()
    };
    let (p, t) = (relabel(pred), relabel(truth));
    let n = p.iter().chain(&t).max().unwrap() + 1;
    let best = permutations(n)
        .iter()
        .map(|perm| p.iter().zip(&t).filter(|(a, b)| perm[**a] == **b).count())
        .max()
        .unwrap();
    best as f64 / pred.len() as f64
}

fn mean_gap(embeddings: &[Vec64], target: &[f64], members: &[usize]) -> f64 {
    (0..target.len())
        .map(|d| {
            let mu = members.iter().map(|&i| embeddings[i][d]).sum::<f64>() / members.len() as f64;
            (target[d] - mu).powi(2)
        })
        .sum()
}

/// Greedy herding that recomputes the candidate mean from scratch each
/// time; ties go to the lowest index.
pub fn brute_herding(embeddings: &[Vec64], m: usize) -> Vec<usize> {
    let target = class_mean(embeddings);
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < m.min(embeddings.len()) {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..embeddings.len()).filter(|i| !chosen.contains(i)) {
            let members: Vec<usize> = chosen.iter().copied().chain([i]).collect();
            let dist = mean_gap(embeddings, &target, &members);
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

/// True when every pick in `chosen` is optimal at its step up to `tol`, so
/// near-ties broken by rounding still count as agreement.
pub fn herding_is_greedy(embeddings: &[Vec64], chosen: &[usize], m: usize, tol: f64) -> bool {
    let target = class_mean(embeddings);
    if chosen.len() != m.min(embeddings.len()) {
        return false;
    }
    (0..chosen.len()).all(|step| {
        let prefix = &chosen[..step];
        let gap = |i: usize| mean_gap(embeddings, &target, &prefix.iter().copied().chain([i]).collect::<Vec<_>>());
        let best = (0..embeddings.len()).filter(|i| !prefix.contains(i)).map(gap).fold(f64::INFINITY, f64::min);
        !prefix.contains(&chosen[step]) && gap(chosen[step]) <= best + tol
    })
}

fn class_mean(embeddings: &[Vec64]) -> Vec64 {
    let dim = embeddings[0].len();
    (0..dim).map(|d| embeddings.iter().map(|e| e[d]).sum::<f64>() / embeddings.len() as f64).collect()
}
