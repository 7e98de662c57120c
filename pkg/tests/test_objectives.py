"""Contrastive losses against closed-form values and a scalar brute-force oracle."""

import math

import numpy as np
import pytest

from gesturerep import diffcore as dc
from gesturerep.diffcore import ContractError, Tensor
from gesturerep.objectives import LossConfig, combined_loss, multimodal_info_nce, unimodal_nt_xent

CFG = LossConfig(temperature=0.1)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / max(np.linalg.norm(v), 1e-12)


def _nt_xent_bruteforce(views, tau):
    """Direct per-anchor evaluation with python floats (independent oracle)."""
    z = [_unit(v) for v in views]
    two_n = len(z)
    n = two_n // 2
    total = 0.0
    for i in range(two_n):
        j = i + n if i < n else i - n
        num = math.exp(float(np.dot(z[i], z[j])) / tau)
        den = sum(math.exp(float(np.dot(z[i], z[k])) / tau) for k in range(two_n) if k != i)
        total += -math.log(num / den)
    return total / two_n


def _info_nce_bruteforce(zg, zs, tau):
    g = [_unit(v) for v in zg]
    s = [_unit(v) for v in zs]
    n = len(g)
    total = 0.0
    for l in range(n):
        num = math.exp(float(np.dot(g[l], s[l])) / tau)
        den_g = sum(math.exp(float(np.dot(g[l], s[k])) / tau) for k in range(n))
        den_s = sum(math.exp(float(np.dot(s[l], g[k])) / tau) for k in range(n))
        total += -math.log(num / den_g) - math.log(num / den_s)
    return total / (2 * n)


class TestUnimodal:
    def test_single_instance_is_zero(self):
        views = Tensor(np.array([[1.0, 0.0], [0.6, 0.8]]))
        assert unimodal_nt_xent(views, CFG).item() == 0.0

    def test_all_identical_is_ln3(self):
        views = Tensor(np.ones((4, 7)))
        assert unimodal_nt_xent(views, CFG).item() == pytest.approx(math.log(3.0), abs=1e-9)

    def test_orthonormal_pairs_match_bruteforce(self):
        e1 = np.array([1.0, 0.0, 0.0])
        e2 = np.array([0.0, 1.0, 0.0])
        views = np.stack([e1, e2, e1, e2])  # instance 0 -> (e1, e1), instance 1 -> (e2, e2)
        mine = unimodal_nt_xent(Tensor(views), CFG).item()
        assert mine == pytest.approx(_nt_xent_bruteforce(views, 0.1), abs=1e-10)

    def test_random_batches_match_bruteforce(self):
        rng = np.random.default_rng(0)
        for n_b in (2, 3, 4):
            views = rng.normal(size=(2 * n_b, 5))
            mine = unimodal_nt_xent(Tensor(views), CFG).item()
            assert mine == pytest.approx(_nt_xent_bruteforce(views, 0.1), abs=1e-10)

    def test_odd_view_count_rejected(self):
        with pytest.raises(ContractError):
            unimodal_nt_xent(Tensor(np.ones((3, 4))), CFG)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        n = 4
        a, b = rng.normal(size=(n, 6)), rng.normal(size=(n, 6))
        perm = rng.permutation(n)
        l1 = unimodal_nt_xent(Tensor(np.concatenate([a, b])), CFG).item()
        l2 = unimodal_nt_xent(Tensor(np.concatenate([a[perm], b[perm]])), CFG).item()
        assert l1 == pytest.approx(l2, abs=1e-10)

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        views = rng.normal(size=(6, 5))
        scaled = views.copy()
        scaled[2] *= 37.0
        l1 = unimodal_nt_xent(Tensor(views), CFG).item()
        l2 = unimodal_nt_xent(Tensor(scaled), CFG).item()
        assert l1 == pytest.approx(l2, abs=1e-10)

    def test_gradcheck(self):
        rng = np.random.default_rng(3)
        for n_b in (2, 3, 4):
            err = dc.check_gradients(lambda x: unimodal_nt_xent(x, CFG),
                                     rng.normal(size=(2 * n_b, 5)))
            assert err < 1e-4


class TestMultimodal:
    def test_single_pair_is_zero(self):
        z = Tensor(np.array([[0.3, 0.4]]))
        assert multimodal_info_nce(z, z, CFG).item() == 0.0

    def test_orthonormal_aligned(self):
        e = np.eye(2)
        loss = multimodal_info_nce(Tensor(e), Tensor(e), CFG).item()
        assert loss == pytest.approx(math.log1p(math.exp(-10.0)), abs=1e-9)

    def test_swapped_positives(self):
        e = np.eye(2)
        loss = multimodal_info_nce(Tensor(e), Tensor(e[::-1].copy()), CFG).item()
        assert loss == pytest.approx(10.0 + math.log1p(math.exp(-10.0)), abs=1e-9)

    def test_random_batches_match_bruteforce(self):
        rng = np.random.default_rng(4)
        for n_b in (2, 3, 4):
            zg = rng.normal(size=(n_b, 6))
            zs = rng.normal(size=(n_b, 6))
            mine = multimodal_info_nce(Tensor(zg), Tensor(zs), CFG).item()
            assert mine == pytest.approx(_info_nce_bruteforce(zg, zs, 0.1), abs=1e-10)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ContractError):
            multimodal_info_nce(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 4))), CFG)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        zg, zs = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
        perm = rng.permutation(5)
        l1 = multimodal_info_nce(Tensor(zg), Tensor(zs), CFG).item()
        l2 = multimodal_info_nce(Tensor(zg[perm]), Tensor(zs[perm]), CFG).item()
        assert l1 == pytest.approx(l2, abs=1e-10)

    def test_scale_invariance(self):
        rng = np.random.default_rng(6)
        zg, zs = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
        zg2 = zg.copy()
        zg2[1] *= 0.001
        l1 = multimodal_info_nce(Tensor(zg), Tensor(zs), CFG).item()
        l2 = multimodal_info_nce(Tensor(zg2), Tensor(zs), CFG).item()
        assert l1 == pytest.approx(l2, abs=1e-10)

    def test_monotone_in_positive_similarity(self):
        # N_b = 2: push z^G_0 toward its positive while negatives stay fixed
        zs = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        losses = []
        for theta in np.linspace(0.0, np.pi / 2, 25):
            zg0 = np.array([np.sin(theta), 0.0, np.cos(theta)])  # cos sim to positive rises
            zg = np.stack([zg0, zs[1]])
            losses.append(multimodal_info_nce(Tensor(zg), Tensor(zs), CFG).item())
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_gradcheck(self):
        rng = np.random.default_rng(7)
        for n_b in (2, 3, 4):
            pt = {"g": rng.normal(size=(n_b, 5)), "s": rng.normal(size=(n_b, 5))}
            err = dc.check_gradients(lambda p: multimodal_info_nce(p["g"], p["s"], CFG), pt)
            assert err < 1e-4

    def test_finite_on_finite_inputs(self):
        rng = np.random.default_rng(8)
        zg = rng.normal(size=(4, 3)) * 1e6
        zs = rng.normal(size=(4, 3)) * 1e-6
        assert np.isfinite(multimodal_info_nce(Tensor(zg), Tensor(zs), CFG).item())


class TestCombined:
    def test_mean_of_two(self):
        assert combined_loss(0.4, 0.6) == pytest.approx(0.5)
        assert combined_loss(0.0, 0.0) == 0.0
        assert combined_loss(math.log(3.0), 0.0) == pytest.approx(0.5 * math.log(3.0))

    def test_tensor_variant(self):
        out = combined_loss(Tensor(np.array(0.4)), Tensor(np.array(0.6)))
        assert out.item() == pytest.approx(0.5)
