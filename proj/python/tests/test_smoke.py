import json
import math

import numpy as np
import pytest

import cbmfix


def test_matrix_round_trip(tmp_path):
    a = np.arange(12, dtype=np.float64).reshape(3, 4) / 7.0
    path = tmp_path / "a.f64"
    cbmfix.save_matrix(a, path)
    b = cbmfix.load_matrix(path)
    assert b.shape == (3, 4)
    assert np.array_equal(a, b)
    assert json.loads((tmp_path / "a.f64.json").read_text())["rows"] == 3


def test_corrupt_payload_is_rejected(tmp_path):
    path = tmp_path / "a.f64"
    cbmfix.save_matrix(np.ones((2, 2)), path)
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(cbmfix.FormatError):
        cbmfix.load_matrix(path)


def test_teacher_sums_to_one():
    rng = np.random.default_rng(0)
    t = cbmfix.build_teacher(rng.normal(size=2), rng.normal(size=5), [1, 3], 2.0)
    assert math.isclose(sum(t), 1.0, abs_tol=1e-12)
    frozen = cbmfix.softmax(np.asarray([0.0, 1.0, 2.0]), 1.0)
    assert math.isclose(sum(frozen), 1.0, abs_tol=1e-12)


def test_distillation_grad_matches_finite_difference():
    rng = np.random.default_rng(1)
    teacher = cbmfix.softmax(rng.normal(size=4), 1.0)
    z = rng.normal(size=4)
    g = cbmfix.distillation_grad(teacher, z, 1.5)
    h = 1e-6
    for j in range(4):
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        fd = (cbmfix.distillation_loss(teacher, zp, 1.5) - cbmfix.distillation_loss(teacher, zm, 1.5)) / (2 * h)
        assert abs(fd - g[j]) < 1e-6


def test_nmf_rank_one():
    u = np.array([[1.0, 2.0, 0.5]])
    h = np.array([[1.0], [3.0], [0.2], [2.0]])
    basis, coeffs, history = cbmfix.fit_nmf(h @ u, 1, 200, 3)
    recon = coeffs @ basis
    assert np.linalg.norm(recon - h @ u) / np.linalg.norm(h @ u) < 1e-6
    assert all(b <= a + 1e-10 for a, b in zip(history, history[1:]))


def test_select_interventions_prefers_large_entries():
    s_nt = np.array([[0.0, 5.0, 1.0, -1.0]])
    s_pf = np.array([[3.0, 0.0, 0.0, 0.0]])
    assert cbmfix.select_interventions(s_nt, s_pf, 2) == [[1, 0]]
    with pytest.raises(cbmfix.InvalidArgument):
        cbmfix.select_interventions(s_nt, s_pf, 3)


def test_synthetic_pipeline_end_to_end(tmp_path):
    config = cbmfix.generate_synth(tmp_path / "data", seed=42)
    report = cbmfix.run(config, tmp_path / "out")
    assert report["gamma"] == [4, 11]
    assert report["post_gamma_acc"] > report["pre_gamma_acc"]
    assert report["corrected"] >= report["coverage"] >= 0
    assert report["post_correct"] - report["pre_correct"] == report["corrected"] - report["newly_broken"]
    again = cbmfix.run(config, tmp_path / "out2")
    assert again == report


def test_missing_input_names_the_stage(tmp_path):
    config = cbmfix.generate_synth(tmp_path / "data", seed=7)
    (tmp_path / "data" / "labels_val.csv").unlink()
    with pytest.raises(cbmfix.StageError, match="inputs"):
        cbmfix.run(config, tmp_path / "out")
