use std::collections::BTreeMap;

use coach_core::baselines::{
    train_decision_tree, train_linear_svm_traced, train_naive_bayes, train_random_forest, ForestParams,
    LinearSvmModel, TreeNode,
};
use coach_core::corpus::Label;
use coach_core::synth::marker_corpus;
use coach_core::textproc::{tokenize, transcript_tokens, SparseVec, TfidfModel};

/// TF-IDF features and labels for a marker corpus.
fn featurized(n: usize, seed: u64) -> (Vec<Vec<String>>, Vec<SparseVec>, Vec<Label>, TfidfModel) {
    let corpus = marker_corpus(n, 4, seed);
    let pairs = corpus.labeled_pairs();
    let docs: Vec<Vec<String>> = pairs
        .iter()
        .map(|p| {
            let mut d = tokenize(&corpus.questions[&p.question_id].text);
            d.extend(transcript_tokens(&corpus.transcripts[&p.call_id]));
            d
        })
        .collect();
    let tfidf = TfidfModel::fit(&docs).unwrap();
    let x = docs.iter().map(|d| tfidf.transform(d)).collect();
    let y = pairs.iter().map(|p| p.label).collect();
    (docs, x, y, tfidf)
}

#[test]
fn naive_bayes_matches_hand_rolled_oracle() {
    let (_, x, y, tfidf) = featurized(200, 21);
    let model = train_naive_bayes(&x, &y, 1.0).unwrap();
    // Oracle keyed by token string rather than feature index.
    let mut sums: [BTreeMap<&str, f64>; 2] = [BTreeMap::new(), BTreeMap::new()];
    let mut counts = [0.0f64; 2];
    for (xi, yi) in x.iter().zip(&y) {
        let c = if *yi == Label::Coachable { 1 } else { 0 };
        counts[c] += 1.0;
        for (j, v) in xi.iter() {
            *sums[c].entry(tfidf.tokens()[j as usize].as_str()).or_insert(0.0) += v;
        }
    }
    let v = tfidf.dim() as f64;
    let totals = [0, 1].map(|c| sums[c].values().sum::<f64>() + v);
    let mut agree = 0;
    for xi in &x {
        let joint = [0, 1].map(|c| {
            (counts[c] / x.len() as f64).ln()
                + xi
                    .iter()
                    .map(|(j, w)| {
                        let tok = tfidf.tokens()[j as usize].as_str();
                        w * ((sums[c].get(tok).copied().unwrap_or(0.0) + 1.0) / totals[c]).ln()
                    })
                    .sum::<f64>()
        });
        let want = if joint[1] > joint[0] { Label::Coachable } else { Label::NotCoachable };
        let p1 = 1.0 / (1.0 + (joint[0] - joint[1]).exp());
        let got = model.predict(xi);
        assert_eq!(got.label, want);
        assert!((got.score - p1).abs() < 1e-9);
        agree += usize::from(got.label == want);
    }
    assert_eq!(agree, x.len());
    let priors: f64 = model.log_priors.iter().map(|l| l.exp()).sum();
    assert!((priors - 1.0).abs() < 1e-12);
}

fn oracle_hinge(m: &LinearSvmModel, x: &[SparseVec], y: &[Label], lambda: f64) -> f64 {
    let mut reg = m.bias * m.bias;
    for w in &m.weights {
        reg += w * w;
    }
    let mut loss = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let mut f = m.bias;
        for (j, v) in xi.iter() {
            f += m.weights[j as usize] * v;
        }
        let s = if *yi == Label::Coachable { 1.0 } else { -1.0 };
        loss += (1.0 - s * f).max(0.0);
    }
    lambda / 2.0 * reg + loss / x.len() as f64
}

#[test]
fn svm_objective_decreases_over_averaged_epochs() {
    let (_, x, y, _) = featurized(200, 22);
    let lambda = 1e-2;
    let trace = train_linear_svm_traced(&x, &y, lambda, 15, 3).unwrap();
    let objectives: Vec<f64> = trace
        .epoch_snapshots
        .iter()
        .map(|m| oracle_hinge(m, &x, &y, lambda))
        .collect();
    for w in objectives.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "objective rose: {objectives:?}");
    }
    assert_eq!(
        coach_core::baselines::hinge_objective(&trace.model, &x, &y, lambda),
        *objectives.last().unwrap()
    );
}

fn scale(x: &[SparseVec], factors: &[f64]) -> Vec<SparseVec> {
    x.iter()
        .map(|v| SparseVec::from_pairs(v.dim, v.iter().map(|(j, w)| (j, w * factors[j as usize]))))
        .collect()
}

#[test]
fn tree_label_function_survives_monotone_rescaling() {
    let (_, x, y, tfidf) = featurized(160, 23);
    let factors: Vec<f64> = (0..tfidf.dim()).map(|j| 0.5 + (j % 7) as f64).collect();
    let xs = scale(&x, &factors);
    let a = train_decision_tree(&x, &y, 20, 2).unwrap();
    let b = train_decision_tree(&xs, &y, 20, 2).unwrap();
    for (u, v) in x.iter().zip(&xs) {
        assert_eq!(a.predict(u).label, b.predict(v).label);
    }
}

fn walk(nodes: &[TreeNode], x: &SparseVec) -> Label {
    let mut i = 0usize;
    loop {
        match &nodes[i] {
            TreeNode::Leaf { counts } => {
                return if counts[1] > counts[0] { Label::Coachable } else { Label::NotCoachable };
            }
            TreeNode::Split { feature, threshold, left, right } => {
                i = if x.get(*feature) <= *threshold { *left as usize } else { *right as usize };
            }
        }
    }
}

#[test]
fn forest_vote_equals_brute_force_tally() {
    let (_, x, y, _) = featurized(120, 24);
    let params = ForestParams {
        n_trees: 15,
        seed: 4,
        ..ForestParams::default()
    };
    let forest = train_random_forest(&x, &y, &params).unwrap();
    assert_eq!(forest.trees.len(), 15);
    let (_, probe, _, _) = featurized(60, 25);
    for xi in x.iter().chain(&probe).filter(|v| v.dim == forest.dim) {
        let tally = forest.trees.iter().filter(|t| walk(&t.nodes, xi) == Label::Coachable).count();
        assert_eq!(forest.votes(xi), tally);
        let want = if 2 * tally > forest.trees.len() { Label::Coachable } else { Label::NotCoachable };
        let got = forest.predict(xi);
        assert_eq!(got.label, want);
        assert_eq!(got.score, tally as f64 / 15.0);
    }
    let again = train_random_forest(&x, &y, &params).unwrap();
    assert_eq!(again, forest);
}
