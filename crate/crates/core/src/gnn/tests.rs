use ndarray::{array, Array1, Array2};
use proptest::prelude::*;

use super::*;
use crate::channel::{sample_realization, stream_rng, ChannelRealization, ScenarioConfig};
use crate::graph::NetworkGraph;
use crate::training::{AdamState, PreparedBatch};

fn scenario(k: usize, j: usize, n: (usize, usize), m: (usize, usize)) -> ScenarioConfig {
    ScenarioConfig {
        users: k,
        ris: j,
        bs_rows: n.0,
        bs_cols: n.1,
        ris_rows: m.0,
        ris_cols: m.1,
        ..ScenarioConfig::default()
    }
}

fn small_config(layers: usize, seed: u64) -> GnnConfig {
    GnnConfig {
        message_dim: 6,
        layers,
        hidden: vec![10, 9],
        activation: Activation::Tanh,
        feature_scale: None,
        seed,
    }
}

fn realization(s: &ScenarioConfig, seed: u64) -> ChannelRealization<f64> {
    sample_realization(s, &mut stream_rng(seed, 3))
}

/// Per-node evaluation of every layer with explicit loops over users and RISs.
fn straight_line(graph: &NetworkGraph<f64>, p: &ModelParams<f64>) -> (Array2<f64>, Array2<f64>) {
    let (k, j, dm) = (graph.users(), graph.ris(), p.config.message_dim);
    let s = p.feature_scale;
    let z: Vec<Array1<f64>> = (0..k).map(|u| graph.user_feature(u).to_owned() * s).collect();
    let e = |r: usize, u: usize| graph.edge_feature(r, u).to_owned() * s;
    let mut d: Vec<Array1<f64>> = vec![Array1::zeros(2 * p.bs_antennas()); k];
    let mut c: Vec<Array1<f64>> = vec![Array1::zeros(p.ris_elements()); j];
    let mut from_ris: Vec<Vec<Array1<f64>>> = vec![Vec::new(); j];
    for _ in 0..p.layers() {
        let incoming_user: Vec<Array1<f64>> = (0..k)
            .map(|u| mean_message(&from_ris.iter().filter(|m| !m.is_empty()).map(|m| m[u].clone()).collect::<Vec<_>>(), dm))
            .collect();
        let from_user: Vec<Vec<Array1<f64>>> = (0..j)
            .map(|r| {
                (0..k)
                    .map(|u| user_message(p, z[u].view(), e(r, u).view(), d[u].view(), incoming_user[u].view()).unwrap())
                    .collect()
            })
            .collect();
        let incoming_ris: Vec<Array1<f64>> = (0..j).map(|r| mean_message(&from_user[r], dm)).collect();
        from_ris = (0..j)
            .map(|r| {
                (0..k)
                    .map(|u| ris_message(p, e(r, u).view(), c[r].view(), incoming_ris[r].view()).unwrap())
                    .collect()
            })
            .collect();
        let to_user: Vec<Array1<f64>> = (0..k)
            .map(|u| mean_message(&from_ris.iter().map(|m| m[u].clone()).collect::<Vec<_>>(), dm))
            .collect();
        d = (0..k).map(|u| update_user(p, z[u].view(), d[u].view(), to_user[u].view()).unwrap()).collect();
        c = (0..j).map(|r| update_ris(p, c[r].view(), incoming_ris[r].view()).unwrap()).collect();
    }
    let stack = |rows: &[Array1<f64>], width: usize| {
        let mut out = Array2::zeros((rows.len(), width));
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).assign(r);
        }
        out
    };
    (stack(&d, 2 * p.bs_antennas()), stack(&c, p.ris_elements()))
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn dimensions_follow_the_scenario() {
    let s = scenario(3, 2, (2, 2), (2, 3));
    let p = ModelParams::<f64>::new(&GnnConfig::default(), &s).unwrap();
    let (n, m, dm) = (4, 6, 128);
    assert_eq!(p.user_message.input_dim(), 2 * n + 2 * n * m + 2 * n + dm);
    assert_eq!(p.ris_message.input_dim(), 2 * n * m + m + dm);
    assert_eq!(p.user_update.input_dim(), 4 * n + dm);
    assert_eq!(p.ris_update.input_dim(), m + dm);
    assert_eq!(p.user_message.output_dim(), dm);
    assert_eq!(p.ris_message.output_dim(), dm);
    assert_eq!(p.user_update.output_dim(), 2 * n);
    assert_eq!(p.ris_update.output_dim(), m);
    assert_eq!(p.user_message.sizes(), vec![p.user_message.input_dim(), 512, 512, dm]);
}

#[test]
fn zero_networks_give_zero_messages_and_representations() {
    let s = scenario(2, 2, (1, 2), (2, 1));
    let cfg = small_config(2, 0);
    let (n, m) = (2, 2);
    let layout = InputLayout {
        bs_antennas: n,
        ris_elements: m,
        message_dim: 6,
    };
    let zero = |input: usize, out: usize| Mlp::zeros(input, &cfg.hidden, out, cfg.activation);
    let p = ModelParams::from_networks(
        cfg.clone(),
        n,
        m,
        [
            zero(layout.user_message()[3].end, 6),
            zero(layout.ris_message()[2].end, 6),
            zero(layout.user_update()[2].end, 2 * n),
            zero(layout.ris_update()[1].end, m),
        ],
    )
    .unwrap();
    let x = Array1::from_elem(p.user_message.input_dim(), 1.0);
    assert!(p.user_message.forward(x.view()).unwrap().iter().all(|&v| v == 0.0));
    let real = realization(&s, 1);
    let g = NetworkGraph::build(&real).unwrap();
    let reps = representations(&[&g], &p).unwrap();
    assert!(reps[0].0.iter().all(|&v| v == 0.0));
    assert!(reps[0].1.iter().all(|&v| v == 0.0));
    // all-zero d falls back to the first antenna and says so
    let sol = forward(&g, &p, 4.0).unwrap();
    assert_eq!(sol.diagnostics.len(), 2);
    assert_eq!(sol.beamformers[0][0], Complex::new(2f64.sqrt(), 0.0));
    assert!(sol.phases.iter().flatten().all(|v| *v == Complex::new(1.0, 0.0)));
}

#[test]
fn mean_of_one_message_is_that_message() {
    let msg = array![1.5, -2.0, 0.25];
    assert_eq!(mean_message(std::slice::from_ref(&msg), 3), msg);
    assert_eq!(mean_message::<f64>(&[], 3), Array1::<f64>::zeros(3));
    let pair = [array![1.0, 2.0], array![3.0, -4.0]];
    let swapped = [pair[1].clone(), pair[0].clone()];
    assert_eq!(mean_message(&pair, 2), mean_message(&swapped, 2));
}

#[test]
fn batched_forward_matches_per_node_evaluation() {
    for (layers, k, j) in [(1, 2, 1), (1, 1, 3), (2, 3, 2), (3, 2, 0)] {
        let s = scenario(k, j, (1, 2), (2, 1));
        let p = ModelParams::<f64>::new(&small_config(layers, 5), &s).unwrap();
        for seed in 0..3 {
            let g = NetworkGraph::build(&realization(&s, seed)).unwrap();
            let (d, c) = straight_line(&g, &p);
            let reps = representations(&[&g], &p).unwrap();
            assert!(max_abs_diff(&reps[0].0, &d) < 1e-12, "T={layers} K={k} J={j}");
            assert!(max_abs_diff(&reps[0].1, &c) < 1e-12);
        }
    }
}

#[test]
fn packing_graphs_does_not_mix_samples() {
    let s = scenario(3, 2, (2, 1), (1, 2));
    let p = ModelParams::<f64>::new(&small_config(2, 1), &s).unwrap();
    let other = scenario(1, 4, (2, 1), (1, 2));
    let reals = [realization(&s, 0), realization(&other, 1), realization(&s.clone(), 2)];
    let graphs: Vec<_> = reals.iter().map(|r| NetworkGraph::build(r).unwrap()).collect();
    let refs: Vec<_> = graphs.iter().collect();
    let packed = representations(&refs, &p).unwrap();
    for (g, (d, c)) in graphs.iter().zip(&packed) {
        let alone = representations(&[g], &p).unwrap().remove(0);
        assert!(max_abs_diff(d, &alone.0) < 1e-13);
        assert!(max_abs_diff(c, &alone.1) < 1e-13);
    }
}

#[test]
fn projection_examples() {
    let (w, fallback) = project_beam(array![1.0, 0.0].view(), 4.0, 1);
    assert!(!fallback);
    assert_eq!(w, array![Complex::new(2.0, 0.0)]);

    let two_pi = 2.0 * std::f64::consts::PI;
    let sol = project(&Array2::from_elem((1, 2), 1.0), &array![[0.0, two_pi, -two_pi]], 1.0).unwrap();
    for v in &sol.phases[0] {
        assert!((v - Complex::new(1.0, 0.0)).norm() <= 1e-12);
    }

    let d = array![[0.3, -1.2, 2.0, 0.1], [5.0, 0.0, -0.5, 3.0], [1e-3, 2e-3, 0.0, 0.0]];
    let sol = project(&d, &Array2::zeros((0, 3)), 6.0).unwrap();
    for w in &sol.beamformers {
        assert!((w.iter().map(|z| z.norm_sqr()).sum::<f64>() - 2.0).abs() <= 1e-10);
    }
    assert!(sol.diagnostics.is_empty());
    assert!(project(&Array2::zeros((1, 3)), &Array2::zeros((0, 1)), 1.0).is_err());
}

#[test]
fn identical_users_get_identical_beams() {
    let s = scenario(3, 2, (2, 1), (2, 1));
    let p = ModelParams::<f64>::new(&small_config(2, 9), &s).unwrap();
    let mut real = realization(&s, 4);
    real.direct[2] = real.direct[0].clone();
    for j in 0..2 {
        real.ris_user[j][2] = real.ris_user[j][0].clone();
    }
    let sol = forward(&NetworkGraph::build(&real).unwrap(), &p, 1.0).unwrap();
    assert_eq!(sol.beamformers[0], sol.beamformers[2]);
}

#[test]
fn permuting_users_and_ris_permutes_outputs() {
    let s = scenario(4, 3, (2, 1), (1, 2));
    let p = ModelParams::<f64>::new(&small_config(2, 2), &s).unwrap();
    let real = realization(&s, 8);
    let (pu, pr) = ([2, 0, 3, 1], [1, 2, 0]);
    let mut permuted = real.clone();
    permuted.direct = pu.iter().map(|&k| real.direct[k].clone()).collect();
    permuted.bs_ris = pr.iter().map(|&j| real.bs_ris[j].clone()).collect();
    permuted.ris_user = pr.iter().map(|&j| pu.iter().map(|&k| real.ris_user[j][k].clone()).collect()).collect();
    let a = forward(&NetworkGraph::build(&real).unwrap(), &p, 1.0).unwrap();
    let b = forward(&NetworkGraph::build(&permuted).unwrap(), &p, 1.0).unwrap();
    for (i, &k) in pu.iter().enumerate() {
        let diff = (&b.beamformers[i] - &a.beamformers[k]).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff <= 1e-9);
    }
    for (i, &j) in pr.iter().enumerate() {
        let diff = (&b.phases[i] - &a.phases[j]).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff <= 1e-9);
    }
}

#[test]
fn one_model_serves_any_user_and_ris_count() {
    let train = scenario(4, 6, (2, 2), (2, 2));
    let p = ModelParams::<f64>::new(&small_config(2, 3), &train).unwrap();
    for (k, j) in [(1, 0), (1, 1), (4, 3), (6, 10), (2, 8)] {
        let real = realization(&scenario(k, j, (2, 2), (2, 2)), 0);
        let sol = forward(&NetworkGraph::build(&real).unwrap(), &p, 0.1).unwrap();
        assert_eq!(sol.beamformers.len(), k);
        assert_eq!(sol.phases.len(), j);
    }
    let wrong = realization(&scenario(2, 1, (1, 2), (2, 2)), 0);
    assert!(matches!(
        forward(&NetworkGraph::build(&wrong).unwrap(), &p, 0.1),
        Err(Error::Dimension { .. })
    ));
    assert!(p.check_scenario(&scenario(2, 1, (2, 2), (1, 2))).is_err());
}

#[test]
fn f32_and_f64_agree() {
    let s = scenario(2, 2, (2, 1), (1, 2));
    let p64 = ModelParams::<f64>::new(&small_config(2, 4), &s).unwrap();
    let p32 = ModelParams::<f32>::new(&small_config(2, 4), &s).unwrap();
    let g64 = NetworkGraph::build(&realization(&s, 0)).unwrap();
    let r32: ChannelRealization<f32> = sample_realization(&s, &mut stream_rng(0, 3));
    let g32 = NetworkGraph::build(&r32).unwrap();
    let (a, b) = (forward(&g64, &p64, 1.0).unwrap(), forward(&g32, &p32, 1.0).unwrap());
    for (x, y) in a.beamformers.iter().flatten().zip(b.beamformers.iter().flatten()) {
        assert!((x.re - y.re as f64).abs() < 1e-4 && (x.im - y.im as f64).abs() < 1e-4);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let s = scenario(2, 2, (1, 2), (2, 1));
    let mut p = ModelParams::<f64>::new(&small_config(1, 6), &s).unwrap();
    let reals: Vec<_> = (0..2).map(|i| realization(&s, i)).collect();
    let refs: Vec<_> = reals.iter().collect();
    let batch = PreparedBatch::new(&refs, &p, &s).unwrap();
    let grad = batch.loss_and_gradient(&p).unwrap();
    let h = 1e-6;
    // rounding in the loss limits central differences to about 1e-5 of its scale
    let floor = 1e-5 * grad.loss.abs().max(1.0);
    let mut checked = 0;
    for t in 0..p.tensors().len() {
        let shape = p.tensors()[t].dim();
        for idx in [(0, 0), (shape.0 - 1, shape.1 - 1), (shape.0 / 2, shape.1 / 2)] {
            let orig = p.tensors()[t][idx];
            p.tensors_mut()[t][idx] = orig + h;
            let up = batch.loss_and_gradient(&p).unwrap().loss;
            p.tensors_mut()[t][idx] = orig - h;
            let down = batch.loss_and_gradient(&p).unwrap().loss;
            p.tensors_mut()[t][idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grad.grads[t][idx];
            let scale = an.abs().max(fd.abs()).max(floor);
            assert!((an - fd).abs() / scale < 1e-4, "tensor {t} {idx:?}: analytic {an} vs fd {fd}");
            checked += 1;
        }
    }
    assert_eq!(checked, 3 * p.tensors().len());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let s = scenario(3, 2, (2, 1), (1, 2));
    let p = ModelParams::<f64>::new(&small_config(2, 12), &s).unwrap();
    let mut opt = AdamState::zeros(p.tensors().iter().map(|t| t.dim()));
    opt.step = 7;
    opt.first[0][(0, 0)] = 0.125;
    save_checkpoint(&path, &p, Some(&opt)).unwrap();
    let (q, loaded_opt) = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(q, p);
    assert_eq!(loaded_opt.unwrap(), opt);
    for seed in 0..5 {
        let g = NetworkGraph::build(&realization(&s, seed)).unwrap();
        assert_eq!(forward(&g, &p, 1.0).unwrap(), forward(&g, &q, 1.0).unwrap());
    }
}

#[test]
fn checkpoint_version_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let s = scenario(1, 1, (1, 2), (1, 2));
    let p = ModelParams::<f64>::new(&small_config(1, 0), &s).unwrap();
    save_checkpoint(&path, &p, None).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    json["header"]["format_version"] = serde_json::json!(CHECKPOINT_VERSION + 1);
    std::fs::write(&path, json.to_string()).unwrap();
    assert!(matches!(
        load_checkpoint::<f64>(&path),
        Err(Error::CheckpointVersion { found, .. }) if found == CHECKPOINT_VERSION + 1
    ));
}

#[test]
fn checkpoint_for_other_antenna_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let big = scenario(2, 1, (4, 4), (4, 4));
    let cfg = GnnConfig {
        message_dim: 8,
        hidden: vec![8],
        ..GnnConfig::default()
    };
    save_checkpoint(&path, &ModelParams::<f64>::new(&cfg, &big).unwrap(), None).unwrap();
    let (loaded, _) = load_checkpoint::<f64>(&path).unwrap();
    assert!(matches!(
        loaded.check_scenario(&scenario(2, 1, (2, 2), (4, 4))),
        Err(Error::Dimension { expected: 16, actual: 4, .. })
    ));
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let s = scenario(1, 1, (1, 2), (1, 2));
    save_checkpoint(&path, &ModelParams::<f64>::new(&small_config(1, 0), &s).unwrap(), None).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    json["networks"][0][0]["bias"] = serde_json::json!([1.0]);
    std::fs::write(&path, json.to_string()).unwrap();
    assert!(load_checkpoint::<f64>(&path).is_err());
    assert!(load_checkpoint::<f64>(dir.path().join("missing.json")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_are_always_feasible(k in 1usize..5, j in 0usize..4, seed in 0u64..1000, power_dbm in -10.0f64..40.0) {
        let mut s = scenario(k, j, (2, 1), (1, 3));
        s.tx_power_dbm = power_dbm;
        let p = ModelParams::<f64>::new(&small_config(2, seed), &s).unwrap();
        let g = NetworkGraph::build(&realization(&s, seed)).unwrap();
        let sol = forward(&g, &p, s.tx_power_w()).unwrap();
        let (power, modulus) = sol.constraint_violation(s.tx_power_w());
        prop_assert!(power <= 1e-10 * s.tx_power_w().max(1.0));
        prop_assert!(modulus <= 1e-12);
    }

    #[test]
    fn projected_power_is_exact(d in proptest::collection::vec(-1e3f64..1e3, 2..12), p in 1e-3f64..10.0, k in 1usize..8) {
        let n = d.len() / 2;
        let d = Array1::from(d[..2 * n].to_vec());
        let (w, fallback) = project_beam(d.view(), p, k);
        let power: f64 = w.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((power - p / k as f64).abs() <= 1e-10);
        prop_assert_eq!(fallback, d.iter().all(|&x| x == 0.0));
    }
}
