import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from revib import dataio, diagnostics as dg, synthetic
from revib.model import ModelConfig, ReModel

SMALL = dict(d=8, n_heads=2, n_layers=1)
SAMPLE = next(s for sc in synthetic.generate_synthetic("avoid", 2, 0)
              for s in dataio.make_samples(sc, dataio.DatasetConfig()))


# ---------------------------------------------------------------- energy


def test_energy_pure_base():
    base = np.random.default_rng(0).standard_normal((3, 12, 2))
    z = np.zeros_like(base)
    got = dg.bias_energy_shares(base, z, z)
    assert got["linear"] == pytest.approx(100.0, abs=1e-12) and got["self"] == got["re"] == 0.0


def test_energy_matches_direct_square_sum():
    rng = np.random.default_rng(1)
    base, s, r = rng.standard_normal((3, 4, 5, 12, 2))
    e = [sum(np.sum(x[i, k] ** 2) for i in range(4) for k in range(5)) for x in (base, s, r)]
    got = dg.bias_energy_shares(base, s, r)
    for name, v in zip(("linear", "self", "re"), e):
        assert got[name] == pytest.approx(100 * v / sum(e), abs=1e-12)


def test_energy_origin_shift():
    base = np.ones((2, 12, 2)) * 5.0
    s = np.random.default_rng(2).standard_normal((2, 12, 2))
    assert dg.bias_energy_shares(base, s, s, origin=5.0)["linear"] == 0.0


def test_energy_all_zero_is_undefined():
    z = np.zeros((1, 12, 2))
    with pytest.raises(dg.DiagnosticError):
        dg.bias_energy_shares(z, z, z)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(1e-3, 1e3))
def test_energy_shares_sum_to_100(seed, scale):
    base, s, r = np.random.default_rng(seed).standard_normal((3, 2, 12, 2)) * scale
    assert sum(dg.bias_energy_shares(base, s, r).values()) == pytest.approx(100.0, abs=1e-9)


# ---------------------------------------------------------------- directions


def test_direction_cases():
    xs = np.linspace(-2, 3, 20)
    assert dg.vibration_direction(np.column_stack([xs, np.full(20, 4.0)])) == pytest.approx(0.0, abs=1e-12)
    assert dg.vibration_direction(np.column_stack([np.full(20, -1.0), xs])) == pytest.approx(np.pi / 2, abs=1e-12)
    assert dg.vibration_direction(np.column_stack([xs, -xs + 2])) == pytest.approx(np.pi / 4, abs=1e-12)


def test_direction_degenerate():
    with pytest.raises(dg.DiagnosticError):
        dg.vibration_direction(np.tile([1.0, 2.0], (5, 1)))
    with pytest.raises(dg.DiagnosticError):
        dg.vibration_direction(np.zeros((1, 2)))


def test_vibration_angles_marks_degenerate_as_nan():
    rng = np.random.default_rng(3)
    s = rng.standard_normal((2, 6, 12, 2))
    r = np.zeros_like(s)
    out = dg.vibration_angles(s, r)
    assert np.all(np.isfinite(out[:, 0])) and np.all(np.isnan(out[:, 1]))
    assert np.all((out[:, 0] >= 0) & (out[:, 0] <= np.pi / 2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(1e-2, 1e2), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_direction_scale_and_translation_invariant(seed, a, dx, dy):
    P = np.random.default_rng(seed).standard_normal((20, 2))
    ref = dg.vibration_direction(P)
    assert dg.vibration_direction(a * P + [dx, dy]) == pytest.approx(ref, abs=1e-7)


# ---------------------------------------------------------------- interventions


def test_grid_cells_layout():
    g = dg.GridSpec.around((1.0, -1.0), 1.0, 0.5)
    cells = g.cells()
    assert len(cells) == 25
    assert cells[0].tolist() == [0.0, -2.0] and cells[-1].tolist() == [2.0, 0.0]
    assert cells[1].tolist() == [0.5, -2.0]


def test_re_head_zeroed_gives_zero_everywhere():
    model = ReModel(ModelConfig(use_re=False, **SMALL), seed=0)
    manual = dg.walking_manual(np.pi, 0.5, 8)
    grid = dg.social_modification_grid(model, SAMPLE, manual,
                                       dg.GridSpec.around(SAMPLE.ego_obs[-1], 3.0, 1.0))
    assert len(grid.values) == len(grid.cells) == 49
    assert np.array_equal(grid.values, np.zeros(49))
    assert dg.social_modification(model, SAMPLE, manual, [[1.0, 0.0]], K=3).tolist() == [0.0]


def test_social_path_reacts_on_random_net():
    model = ReModel(ModelConfig(**SMALL), seed=0)
    manual = dg.walking_manual(np.pi, 0.5, 8)
    c = dg.social_modification(model, SAMPLE, manual, SAMPLE.ego_obs[-1] + [[2.0, 0.0]])
    assert c[0] > 0 and np.isfinite(c[0])


def test_no_manual_means_no_change():
    model = ReModel(ModelConfig(**SMALL), seed=0)
    assert np.array_equal(dg.social_modification(model, SAMPLE, None, np.zeros((4, 2))),
                          np.zeros(4))


def test_cell_on_ego_is_flagged(tmp_path):
    model = ReModel(ModelConfig(**SMALL), seed=0)
    manual = dg.walking_manual(0.0, 0.5, 8)
    g = dg.GridSpec.around(SAMPLE.ego_obs[-1], 1.0, 1.0)
    grid = dg.social_modification_grid(model, SAMPLE, manual, g)
    assert grid.flagged.sum() == 1 and np.all(grid.values >= 0)
    grid.write_csv(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "x,y,c,at_ego" and len(lines) == 10


def test_manual_shape_checked():
    model = ReModel(ModelConfig(**SMALL), seed=0)
    with pytest.raises(dg.DiagnosticError):
        dg.social_modification(model, SAMPLE, np.zeros((5, 2)), np.zeros((1, 2)))


def test_walking_manual_ends_at_origin():
    m = dg.walking_manual(np.pi / 2, 1.3, 8)
    assert np.array_equal(m[-1], [0.0, 0.0])
    assert np.allclose(np.diff(m, axis=0), [0.0, 1.3], atol=1e-15)


# ---------------------------------------------------------------- contributions


def test_contribution_split_cases():
    rng = np.random.default_rng(4)
    w_r, w_p = rng.standard_normal((2, 4, 8))
    f, fp = rng.standard_normal((2, 3, 4))
    r, p = dg.contribution_split(w_r, w_p, f, np.zeros_like(fp))
    assert np.array_equal(p, np.zeros(3))
    r2, _ = dg.contribution_split(w_r, w_p, 2 * f, fp)
    assert np.allclose(r2, 4 * r, rtol=1e-14)
    r, p = dg.contribution_split(w_r, w_p, f, fp)
    for i in range(3):
        vr = sum(sum(f[i, a] * w_r[a, b] for a in range(4)) ** 2 for b in range(8))
        vp = sum(sum(fp[i, a] * w_p[a, b] for a in range(4)) ** 2 for b in range(8))
        assert r[i] == pytest.approx(vr, rel=1e-12) and p[i] == pytest.approx(vp, rel=1e-12)
    with pytest.raises(dg.DiagnosticError):
        dg.contribution_split(w_r, w_p, f[:, :3], fp)


def test_partition_contributions_on_model():
    model = ReModel(ModelConfig(**SMALL), seed=0)
    w_r, w_p = dg.first_layer_blocks(model)
    assert w_r.shape == (4, 8) and w_p.shape == (4, 8)
    rows, counts, _ = dg.resonance_rows(model, SAMPLE)
    r, p = dg.partition_contributions(model, SAMPLE)
    assert r.shape == p.shape == (8,)
    assert np.all(r[counts == 0] == 0) and np.all(p[counts == 0] == 0)


# ---------------------------------------------------------------- PCA


def power_iteration(C, n, iters=5000):
    vecs = []
    rng = np.random.default_rng(0)
    for _ in range(n):
        v = rng.standard_normal(len(C))
        for _ in range(iters):
            for u in vecs:
                v -= (v @ u) * u
            v = C @ v
            v /= np.linalg.norm(v)
        vecs.append(v)
    return np.array(vecs).T


def test_pca_matches_power_iteration():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((60, 4)) * [5.0, 3.0, 1.0, 0.5] @ np.linalg.qr(rng.standard_normal((4, 4)))[0]
    proj, ratio = dg.feature_pca(X)
    Xc = X - X.mean(axis=0)
    V = power_iteration(Xc.T @ Xc / 59, 2)
    for k in range(2):
        cos = abs(proj[:, k] @ (Xc @ V[:, k])) / (np.linalg.norm(proj[:, k]) * np.linalg.norm(Xc @ V[:, k]))
        assert np.arccos(min(cos, 1.0)) < 1e-6
    assert 1 >= ratio[0] >= ratio[1] >= 0


def test_pca_degenerate_inputs():
    proj, ratio = dg.feature_pca(np.tile([1.0, 2.0, 3.0], (5, 1)))
    assert np.array_equal(proj, np.zeros((5, 2))) and np.array_equal(ratio, np.zeros(2))
    t = np.linspace(0, 1, 10)[:, None]
    _, ratio = dg.feature_pca(t * [1.0, -2.0, 0.5])
    assert ratio[0] == pytest.approx(1.0, abs=1e-12) and abs(ratio[1]) < 1e-12
    with pytest.raises(dg.DiagnosticError):
        dg.feature_pca(np.zeros((1, 3)))
