import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpavc.errors import CompatibilityError, ConfigError, ProfileError
from tpavc.nn import ParamTensor, Tape, finite_difference_check
from tpavc.nn import tensor as T
from tpavc.tpa import (
    N_PROTOTYPES,
    PrototypeBank,
    PrototypeHyper,
    init_prototypes,
    loss_cluster,
    loss_diversity,
    loss_prototype_total,
    loss_separation,
    match_prototype,
    similarity,
    similarity_vector,
    squared_distances,
)

OWNER = np.repeat(np.arange(4), 6)


def random_bank(rng, dim=8):
    return PrototypeBank(rng.normal(size=(N_PROTOTYPES, dim)))


def test_similarity_at_zero_distance():
    p = np.array([0.3, -1.2, 4.0])
    assert abs(similarity(p, p) - np.log(1e4)) < 1e-12
    assert abs(similarity(p, p) - 9.210340371976184) < 1e-12


def test_similarity_decreases_with_distance():
    p = np.zeros(4)
    sims = [similarity(p, np.full(4, t)) for t in np.linspace(0, 10, 100)]
    assert np.all(np.diff(sims) < 0)
    assert sims[-1] > 0


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1e3), st.floats(1e-8, 1e-1))
def test_similarity_positive_and_bounded(d, eps):
    s = similarity(np.zeros(1), np.array([d]), eps)
    assert 0 <= s <= np.log(1 / eps) + 1e-9


def test_match_is_nearest_neighbour():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        bank = random_bank(rng, 6)
        F = rng.normal(size=6)
        idx, _ = match_prototype(bank, F)
        nearest = int(np.argmin(np.sum((bank.bank.data - F) ** 2, axis=1)))
        assert idx == nearest


def test_match_ties_pick_lowest_index():
    vec = np.zeros((N_PROTOTYPES, 3))
    vec[5] = vec[9] = [1.0, 0, 0]
    vec[[i for i in range(N_PROTOTYPES) if i not in (5, 9)]] = 50.0
    idx, _ = match_prototype(PrototypeBank(vec), np.array([1.0, 0, 0]))
    assert idx == 5


def test_exact_match_hits_ceiling():
    rng = np.random.default_rng(1)
    bank = random_bank(rng)
    idx, s = match_prototype(bank, bank.bank.data[13])
    assert idx == 13 and abs(s[13] - np.log(1.0 / 1e-4)) < 1e-12


def test_cluster_zero_at_exact_match_and_separation_nonpositive():
    rng = np.random.default_rng(2)
    bank = random_bank(rng)
    season = np.array([0, 1, 2, 3])
    F = bank.bank.data[[2, 7, 12, 23]]
    d2 = squared_distances(T.as_tensor(F), bank.bank)
    assert float(loss_cluster(d2, season, OWNER).data) == 0.0
    assert float(loss_separation(d2, season, OWNER).data) < 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_losses_sign(seed):
    rng = np.random.default_rng(seed)
    bank = random_bank(rng, 4)
    F = rng.normal(size=(5, 4)) * 3
    season = rng.integers(0, 4, size=5)
    d2 = squared_distances(T.as_tensor(F), bank.bank)
    assert float(loss_cluster(d2, season, OWNER).data) >= 0
    assert float(loss_separation(d2, season, OWNER).data) <= 0
    assert float(loss_diversity(bank.bank, OWNER, 0.3).data) >= 0


def test_diversity_orthogonal_and_duplicated():
    # every season holds the same six axes, so only cross-season pairs coincide
    vec = np.tile(np.eye(6), (4, 1))
    assert float(loss_diversity(T.as_tensor(vec), OWNER, 0.3).data) == 0.0
    dup = vec.copy()
    dup[1] = dup[0]
    for xi in (0.0, 0.3, 0.99):
        got = float(loss_diversity(T.as_tensor(dup), OWNER, xi).data)
        assert abs(got - 2 * max(0.0, 1 - xi)) < 1e-12


def test_total_is_weighted_sum():
    rng = np.random.default_rng(3)
    bank = random_bank(rng)
    hyper = PrototypeHyper(lambda_clst=0.7, lambda_sep=0.2, lambda_div=0.05)
    F = rng.normal(size=(6, 8))
    season = rng.integers(0, 4, size=6)
    d2 = squared_distances(T.as_tensor(F), bank.bank)
    logits = T.as_tensor(rng.normal(size=(6, 4)))
    parts = loss_prototype_total(logits, d2, season, bank, hyper).values()
    recomposed = parts["ce"] + 0.7 * parts["clst"] + 0.2 * parts["sep"] + 0.05 * parts["div"]
    assert abs(parts["total"] - recomposed) < 1e-12


def test_bank_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    bank = random_bank(rng, 4)
    hyper = PrototypeHyper(xi=-0.9)
    F = rng.normal(size=(5, 4))
    season = np.array([0, 1, 2, 3, 1])
    W = ParamTensor(rng.normal(size=(N_PROTOTYPES, 4)), "W")

    def loss():
        d2 = squared_distances(T.as_tensor(F), bank.bank)
        logits = T.matmul(similarity_vector(d2, hyper.eps), W)
        return loss_prototype_total(logits, d2, season, bank, hyper).total

    params = dict(bank.parameters())
    params["W"] = W
    assert finite_difference_check(loss, params) < 1e-4


def test_bank_shape_checked():
    with pytest.raises(ValueError):
        PrototypeBank(np.zeros((23, 4)))


def test_projection_bounds_rows():
    rng = np.random.default_rng(5)
    bank = PrototypeBank(rng.normal(size=(N_PROTOTYPES, 4)) * 10)
    small = np.argmin(np.linalg.norm(bank.bank.data, axis=1))
    bank.bank.data[small] = [0.1, 0, 0, 0]
    before = bank.bank.data.copy()
    bank.project(1.0)
    norms = np.linalg.norm(bank.bank.data, axis=1)
    assert np.all(norms <= 2.0 + 1e-12)
    assert np.array_equal(bank.bank.data[small], before[small])
    moved = np.linalg.norm(before, axis=1) > 2.0
    cos = np.sum(before[moved] * bank.bank.data[moved], axis=1) / (
        np.linalg.norm(before[moved], axis=1) * norms[moved])
    assert np.allclose(cos, 1.0)


def test_frozen_bank_not_projected_or_trained():
    bank = PrototypeBank(np.full((N_PROTOTYPES, 4), 9.0), frozen=True)
    bank.project(1.0)
    assert np.all(bank.bank.data == 9.0) and bank.trainable() == {}


def test_bank_round_trip_and_dim_guard(tmp_path):
    rng = np.random.default_rng(6)
    bank = random_bank(rng, 8)
    bank.save(tmp_path / "b.ckpt")
    back = PrototypeBank.load(tmp_path / "b.ckpt", expected_dim=8)
    assert back.bank.data.tobytes() == bank.bank.data.tobytes() and back.frozen
    with pytest.raises(CompatibilityError, match="size 8"):
        PrototypeBank.load(tmp_path / "b.ckpt", expected_dim=16)


def test_data_init_is_seeded_and_standardised(year):
    a = init_prototypes(year, 4, "data", seed=2)
    b = init_prototypes(year, 4, "data", seed=2)
    assert a.bank.data.tobytes() == b.bank.data.tobytes()
    assert a.dim == 8
    assert np.allclose(a.bank.data.mean(axis=1), 0.0, atol=1e-12)
    assert np.allclose(a.bank.data.std(axis=1), 1.0, atol=1e-9)
    r = init_prototypes(None, 4, "random", seed=2)
    assert r.bank.shape == (N_PROTOTYPES, 8)


def test_init_errors(short_profiles):
    with pytest.raises(ConfigError):
        init_prototypes(None, 4, "kmeans")
    with pytest.raises(ProfileError):
        init_prototypes(None, 4, "data")
    with pytest.raises(ProfileError, match="needs 6"):
        init_prototypes(short_profiles, 4, "data")


def test_hyper_validation():
    with pytest.raises(ConfigError):
        PrototypeHyper(eps=0).validate()
    with pytest.raises(ConfigError):
        PrototypeHyper(xi=1.0).validate()
    with pytest.raises(ConfigError):
        PrototypeHyper(lambda_sep=-1).validate()


def test_gradient_flows_only_through_tape():
    bank = PrototypeBank(np.ones((N_PROTOTYPES, 2)))
    bank.zero_grad()
    with Tape() as tape:
        d2 = squared_distances(T.as_tensor(np.zeros((1, 2))), bank.bank)
        loss = loss_cluster(d2, np.array([0]), OWNER)
    tape.backward(loss)
    g = bank.bank.grad
    # masked min over six equal distances sends the gradient to one own-season row
    assert np.count_nonzero(np.abs(g).sum(axis=1)) == 1 and np.abs(g[:6]).sum() > 0
