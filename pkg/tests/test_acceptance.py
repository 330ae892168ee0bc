"""Acceptance run: one test per criterion, each printing a PASS/FAIL line.

Criteria 4, 5 and 7 share two identical `revib train` runs on the avoid set;
criterion 6 trains the same desk configuration on a linear+avoid mix.
"""

import json

import numpy as np
import pytest

from gradcheck import max_rel_error
from revib import cli, dataio, diagnostics as dg, linear, metrics, spectrum, synthetic
from revib.config import RunConfig
from revib.dataio import Sample
from revib.model import Batch, ModelConfig, ReModel, best_of_k_tensor
from revib.nn import (MLP, LayerNorm, MultiHeadAttention, ParamStore, Tensor, Transformer,
                      TransformerConfig)
from revib.resonance import ReBias, ResonanceEncoder
from revib.self_vibration import (DifferentialEncoder, SelfVibration, SpectralEmbedding,
                                  interpolate)

pytestmark = pytest.mark.slow

SMALL = ModelConfig(d=8, n_heads=2, n_layers=1)


def run_cli(*argv):
    code = cli.main(["--threads", "1"] + [str(a) for a in argv])
    assert code == 0, f"revib {argv[0]} exited with {code}"


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    cfg = RunConfig()
    cfg.model.d, cfg.model.n_heads, cfg.model.n_layers = 32, 4, 1
    cfg.train.batch_size, cfg.train.lr, cfg.train.epochs, cfg.train.seed = 32, 1e-3, 50, 0
    (root / "desk.json").write_text(cfg.dumps())
    run_cli("prepare", "--config", root / "desk.json", "--synthetic", "avoid",
            "--n-scenes", 200, "--seed", 0, "--out", root / "avoid.json")
    for name in ("runA", "runB"):
        run_cli("train", "--config", root / "desk.json", "--data", root / "avoid.json",
                "--run-dir", root / name)
    return root


def rnd(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


def walk(p_end, v, t_h=8):
    return np.asarray(p_end) + np.arange(-(t_h - 1), 1)[:, None] * np.asarray(v)


# ---------------------------------------------------------------- 1


def test_criterion_1_oracles(record):
    errs = {}
    X = rnd((8, 2), 0)
    A = linear.design_matrix(1, 8)
    w_normal = np.linalg.solve(A.T @ A, A.T @ X)
    errs["lsq"] = np.max(np.abs(linear.fit(X) - w_normal))

    worst_rt = worst_pv = 0.0
    for seed in range(50):
        Z = rnd((8, 2), seed) * 10
        S = spectrum.forward(Z, "haar")
        worst_rt = max(worst_rt, np.max(np.abs(spectrum.inverse(S) - Z)))
        worst_pv = max(worst_pv, abs(np.sum(Z ** 2) - np.sum(S.coeffs ** 2)) / np.sum(Z ** 2))
    errs["haar_round_trip"], errs["parseval"] = worst_rt, worst_pv

    Y, P = rnd((12, 2), 1), rnd((20, 12, 2), 2)
    ade = min(sum(np.hypot(*(P[k, t] - Y[t])) for t in range(12)) / 12 for k in range(20))
    fde = min(np.hypot(*(P[k, -1] - Y[-1])) for k in range(20))
    errs["minADE"] = abs(metrics.min_ade(Y, P) - ade)
    errs["minFDE"] = abs(metrics.min_fde(Y, P) - fde)

    store = ParamStore(0)
    enc = ResonanceEncoder(store, M=4, T_h=4, d=8, n_theta=8)
    feats = Tensor(rnd((7, 4), 3))
    rng = np.random.default_rng(4)
    polar = np.column_stack([rng.uniform(0, 10, 7), rng.uniform(0, 2 * np.pi, 7)])
    owner = np.array([0, 1, 0, 0, 1, 1, 0])
    rows = enc.gather(feats, polar, owner, 2).rows.data
    pos = np.tanh(polar @ enc.position.w.data + enc.position.b.data)
    brute = np.zeros((2, 8, 8))
    for b in range(2):
        for n in range(8):
            members = [j for j in range(7) if owner[j] == b
                       and 2 * np.pi * n / 8 <= polar[j, 1] < 2 * np.pi * (n + 1) / 8]
            if members:
                brute[b, n] = np.mean([np.concatenate([feats.data[j], pos[j]]) for j in members],
                                      axis=0)
    errs["gather"] = np.max(np.abs(rows - brute))

    limits = {"lsq": 1e-9, "haar_round_trip": 1e-9, "parseval": 1e-9, "minADE": 1e-12,
              "minFDE": 1e-12, "gather": 1e-12}
    ok = all(errs[k] < limits[k] for k in limits)
    record(1, "oracle equivalence", ok, ", ".join(f"{k}={errs[k]:.1e}" for k in limits))
    assert ok, errs


# ---------------------------------------------------------------- 2


def gradient_blocks():
    cfg = TransformerConfig(8, 2, 1)

    def mlp():
        s = ParamStore(0)
        m = MLP(s, "m", [6, 8, 3], act="relu", out_act="tanh")
        x = rnd((4, 6), 1)
        return lambda: m(x), list(s.params.values())

    def layer_norm():
        s = ParamStore(0)
        ln = LayerNorm(s, "ln", 8)
        x = Tensor(rnd((5, 8), 2), requires_grad=True)
        return lambda: ln(x), [x] + list(s.params.values())

    def attention():
        s = ParamStore(0)
        a = MultiHeadAttention(s, "a", cfg)
        q = Tensor(rnd((2, 3, 8), 3), requires_grad=True)
        kv = Tensor(rnd((2, 4, 8), 4), requires_grad=True)
        return lambda: a(q, kv, kv), [q, kv] + list(s.params.values())

    def transformer():
        s = ParamStore(0)
        t = Transformer(s, "t", cfg, d_tgt=4)
        src = Tensor(rnd((2, 5, 8), 5), requires_grad=True)
        tgt = Tensor(rnd((2, 4, 4), 6), requires_grad=True)
        return lambda: t(src, tgt), [src, tgt] + list(s.params.values())

    def spectral_embedding():
        s = ParamStore(0)
        e = SpectralEmbedding(s, "e", 4, 4)
        S = rnd((3, 4, 4), 7)
        return lambda: e(S), list(s.params.values())

    def differential():
        s = ParamStore(0)
        e = DifferentialEncoder(s, 4, 8)
        a, b = rnd((2, 4, 4), 8), rnd((2, 4, 4), 9)
        return lambda: e(a, b), list(s.params.values())

    def self_path():
        s = ParamStore(0)
        sv = SelfVibration(s, cfg, kind="haar", t_h=8, t_f=12, n_way=4)
        dfe = Tensor(rnd((2, 4, 4), 10), requires_grad=True)
        fit, z = rnd((2, 2, 4, 4), 11)
        return lambda: sv.bias(sv.feature(dfe, fit, z)), [dfe] + list(s.params.values())

    def resonance():
        s = ParamStore(0)
        enc = ResonanceEncoder(s, M=4, T_h=4, d=8, n_theta=8)
        ego, nb = rnd((2, 4, 4), 12), rnd((3, 4, 4), 13)
        rng = np.random.default_rng(14)
        polar = np.column_stack([rng.uniform(0, 5, 3), rng.uniform(0, 2 * np.pi, 3)])
        owner = np.array([0, 1, 1])
        return lambda: enc(ego, nb, polar, owner).rows, list(s.params.values())

    def re_head():
        s = ParamStore(0)
        h = ReBias(s, cfg, kind="haar", t_h=8, t_f=12, n_theta=8)
        dfe = Tensor(rnd((2, 4, 4), 15), requires_grad=True)
        F = Tensor(rnd((2, 8, 8), 16), requires_grad=True)
        diff, z = rnd((2, 2, 4, 4), 17)
        return lambda: h.bias(h.feature(dfe, F, diff, z)), [dfe, F] + list(s.params.values())

    def full_model():
        samples = [smp for sc in synthetic.generate_synthetic("avoid", 2, 0)
                   for smp in dataio.make_samples(sc, dataio.DatasetConfig())][:2]
        m = ReModel(SMALL, seed=5)
        batch = Batch(samples, m.cfg)
        z_s, z_r = m.sample_noise(np.random.default_rng(0), 2, 2)
        loss = lambda: best_of_k_tensor(m.forward(batch, z_s, z_r).total, batch.future, 2)[0]
        return loss, list(m.store.params.values())

    return {f.__name__: f for f in (mlp, layer_norm, attention, transformer, spectral_embedding,
                                    differential, self_path, resonance, re_head, full_model)}


def test_criterion_2_gradients(record):
    errs = {}
    for name, make in gradient_blocks().items():
        fn, params = make()
        errs[name] = max_rel_error(fn, params, per_tensor=6 if name == "full_model" else None)
    worst = max(errs, key=errs.get)
    ok = all(e < 1e-4 for e in errs.values())
    record(2, "gradient suite (d=8)", ok,
           f"{len(errs)} blocks, worst {worst}={errs[worst]:.1e} (limit 1e-4)")
    assert ok, errs


# ---------------------------------------------------------------- 3


def test_criterion_3_structure(record):
    samples = [s for sc in synthetic.generate_synthetic("avoid", 4, 0)
               for s in dataio.make_samples(sc, dataio.DatasetConfig())]
    model = ReModel(SMALL, seed=1)
    arr = model.predict_arrays(samples, 5, seed=0)
    superposition = bool(np.array_equal(arr["total"], (arr["self"] + arr["re"]) + arr["base"]))

    store = ParamStore(2)
    renc = ResonanceEncoder(store, M=4, T_h=4, d=8, n_theta=8)
    a, b = rnd((2, 5, 4, 4), 3)
    swap = bool(np.array_equal(renc.resonance_feature(a, b).data, renc.resonance_feature(b, a).data))

    ego = walk([0.0, 0.0], [0.5, 0.0])
    nbs = [walk([3.0, 0.5], [-0.4, 0.0]), walk([4.0, 1.0], [-0.5, 0.1]),
           walk([2.0, 0.2], [0.0, 0.3]), walk([-3.0, -0.1], [0.5, 0.0])]
    s1 = Sample(ego, np.zeros((12, 2)), nbs, 0, 0, "t")
    shift = np.array([120.0, -45.0])
    s2 = Sample(ego + shift, np.zeros((12, 2)), [n + shift for n in nbs], 0, 0, "t")

    def res(s):
        bt = Batch([s], model.cfg)
        return model.resonance(bt.spec_rel_ego, bt.spec_rel_nb, bt.polar, bt.owner).features.data

    translation = np.max(np.abs(res(s1) - res(s2)))

    def re_bias(s):
        z_s, z_r = model.sample_noise(np.random.default_rng(0), 1, 3)
        return model.forward(Batch([s], model.cfg), z_s, z_r).re_bias.data

    s3 = Sample(ego, np.zeros((12, 2)), [nbs[2], nbs[0], nbs[3], nbs[1]], 0, 0, "t")
    permutation = np.max(np.abs(re_bias(s1) - re_bias(s3)))

    keys = np.array([8, 11, 14, 17, 20])
    fidelity, continuity = True, 0.0
    for seed in range(50):
        vals = rnd((5, 2), seed) * 3
        out = interpolate(keys, vals, np.arange(8, 21), "hermite")
        fidelity &= bool(np.array_equal(out[keys - 8], vals))
        for k in keys[1:-1] - 8:
            continuity = max(continuity, np.max(np.abs((out[k] - out[k - 1]) - (out[k + 1] - out[k]))))

    ok = (superposition and swap and translation < 1e-12 and permutation < 1e-12 and fidelity
          and continuity < 1e-9)
    record(3, "structural identities", ok,
           f"superposition exact={superposition}, swap bitwise={swap}, "
           f"translation={translation:.1e}, permutation={permutation:.1e}, "
           f"keypoints exact={fidelity}, velocity jump={continuity:.1e}")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_learning_signal(desk, record):
    man = json.loads((desk / "runA" / "manifest.json").read_text())
    init, final = man["init_loss"], man["loss_curve"][-1]
    ckpt, data = desk / "runA" / "checkpoint.bin", desk / "avoid.json"
    run_cli("eval", "--checkpoint", ckpt, "--data", data, "--out", desk / "evalA")
    run_cli("eval", "--checkpoint", ckpt, "--data", data, "--no-self", "--no-re", "--K", 20,
            "--out", desk / "evalLin")
    full = json.loads((desk / "evalA" / "metrics.json").read_text())
    lin = json.loads((desk / "evalLin" / "metrics.json").read_text())
    gain = 1 - full["minADE"] / lin["minADE"]
    ok_a, ok_b = final <= 0.5 * init, gain >= 0.10
    record(4, "learning signal (avoid, 50 epochs)", ok_a and ok_b,
           f"(a) loss {init:.4f} -> {final:.4f} ratio {final / init:.3f} (<= 0.5); "
           f"(b) test minADE_20 {full['minADE']:.4f} vs linear-only {lin['minADE']:.4f}, "
           f"gain {100 * gain:.1f}% (>= 10%) on {full['n_samples']} samples")
    assert ok_a and ok_b


# ---------------------------------------------------------------- 5


def test_criterion_5_causality(desk, record):
    model, cfg, _ = cli._load_model(desk / "runA" / "checkpoint.bin")
    test = cli._split_samples(desk / "avoid.json", cfg, "test")
    speed = 1.3 * cfg.data.frame_interval
    near, far = [], []
    for s in test:
        v = s.ego_obs[-1] - s.ego_obs[-2]
        u = v / np.linalg.norm(v)
        manual = dg.walking_manual(-u, speed, cfg.data.t_h)
        c = dg.social_modification(model, s.with_neighbors([]), manual,
                                   [s.ego_obs[-1] + 2.0 * u, s.ego_obs[-1] + 50.0 * u])
        near.append(c[0])
        far.append(c[1])
    ratio = np.mean(near) / np.mean(far)

    cfg.model.use_re = False
    s = test[0]
    v = s.ego_obs[-1] - s.ego_obs[-2]
    grid = dg.social_modification_grid(
        model, s, dg.walking_manual(-v, speed, cfg.data.t_h),
        dg.GridSpec.around(s.ego_obs[-1], 5.0, 0.5))
    zero = bool(np.all(grid.values == 0.0))
    cfg.model.use_re = True

    ok = ratio >= 2.0 and zero
    record(5, "intervention causality", ok,
           f"mean c 2 m ahead {np.mean(near):.3e} m vs 50 m ahead {np.mean(far):.3e} m, "
           f"ratio {ratio:.2f} (>= 2) over {len(test)} egos; re-bias off: "
           f"max c {grid.values.max():.1e} on {len(grid.values)} cells")
    assert ok


# ---------------------------------------------------------------- 6


def test_criterion_6_energy_shares(desk, record):
    run_cli("prepare", "--config", desk / "desk.json", "--synthetic", "linear,avoid",
            "--n-scenes", 100, "--seed", 0, "--out", desk / "mixed.json")
    run_cli("train", "--config", desk / "desk.json", "--data", desk / "mixed.json",
            "--run-dir", desk / "runM")
    model, cfg, _ = cli._load_model(desk / "runM" / "checkpoint.bin")
    test = cli._split_samples(desk / "mixed.json", cfg, "test")
    arr = model.predict_arrays(test, cfg.train.k_eval, seed=0)
    origin = np.stack([s.ego_obs[-1] for s in test])[:, None, None, :]
    shares = dg.bias_energy_shares(arr["base"], arr["self"], arr["re"], origin)
    ok = shares["linear"] > shares["self"] and shares["linear"] > shares["re"]
    record(6, "linear base dominates energy", ok,
           "shares % (displacement from last observed point): "
           + ", ".join(f"{k} {v:.2f}" for k, v in shares.items()))
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_reproducibility(desk, record):
    a, b = desk / "runA", desk / "runB"
    same = {f: (a / f).read_bytes() == (b / f).read_bytes()
            for f in ("checkpoint.bin", "manifest.json", "loss_curve.csv")}
    for name in ("runA", "runB"):
        run_cli("eval", "--checkpoint", desk / name / "checkpoint.bin", "--data",
                desk / "avoid.json", "--out", desk / f"repro-{name}")
    for f in ("metrics.json", "per_sample.csv"):
        same[f] = (desk / "repro-runA" / f).read_bytes() == (desk / "repro-runB" / f).read_bytes()
    ok = all(same.values())
    record(7, "reproducibility (--threads 1)", ok,
           ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok
