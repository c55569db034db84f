import numpy as np
import pytest

from littarget.graph import Dag, build_augmented_graph, oracle_indicator_sets
from littarget.recovery import (
    ContrastiveConfig,
    IcaOptions,
    MixingEstimate,
    RecoveredNoises,
    RecoveryError,
    contrastive_features,
    contrastive_recover,
    env_correlations,
    estimate_k,
    fastica_recover,
    indicator_from_correlation,
    indicator_from_mixing,
    match_components,
    mixing_from_components,
    whiten,
)
from littarget.sets import IndicatorSets
from littarget.simulate import (
    EnvironmentPlan,
    LinearMechanism,
    MultiEnvDataset,
    ScmSpec,
    generate,
    make_environment_plan,
    random_dag,
    random_linear_spec,
    sample_targets,
)


def collider_data(seed=0, m=5000, D=8):
    g = Dag(["observed"] * 3, [(0, 2), (1, 2)])
    spec = ScmSpec(g, LinearMechanism({(0, 2): 1.0, (1, 2): 1.0}))
    plan = make_environment_plan({0, 1}, 3, D, seed)
    return generate(spec, plan, m, seed)


def support(I):
    return sorted(sorted(I[v]) for v in I.variables)


def test_single_variable_recovery():
    g = Dag(["observed"], [])
    spec = ScmSpec(g, LinearMechanism({}))
    plan = EnvironmentPlan(4, [[1.0], [1.5], [2.5], [3.0]], frozenset({0}))
    data = generate(spec, plan, 5000, 1)
    noises, mixing = fastica_recover(data, 1)
    assert abs(np.corrcoef(noises.samples[:, 0], data.noise[:, 0])[0, 1]) >= 0.99
    assert mixing.values[0, 0] > 0


def test_collider_mixing_support():
    data = collider_data()
    noises, mixing = fastica_recover(data, 2)
    I = indicator_from_mixing(mixing, 0.2)
    # {X0}, {X1}, {X0, X1} up to a relabeling of the components
    assert sorted(map(len, (I[0], I[1], I[2]))) == [1, 1, 2]
    assert I[0] | I[1] == I[2] and not I[0] & I[1]
    _, scores = match_components(noises.samples, data.noise[:, [0, 1]])
    assert scores.min() > 0.95


def test_components_white_and_signs_fixed():
    data = collider_data(1)
    noises, mixing = fastica_recover(data, 2)
    cov = np.cov(noises.samples.T, bias=True)
    assert np.allclose(cov, np.eye(2), atol=1e-8)
    idx = np.argmax(np.abs(mixing.values), axis=0)
    assert (mixing.values[idx, [0, 1]] > 0).all()


def test_loadings_equal_covariance_with_components():
    data = collider_data(2)
    noises, mixing = fastica_recover(data, 2)
    Xc = data.X - data.X.mean(0)
    assert np.allclose(Xc.T @ noises.samples / len(Xc), mixing.values, atol=1e-8)
    # the least-squares route gives the same loadings
    assert np.allclose(mixing_from_components(data, noises).values, mixing.values, atol=1e-6)


def test_column_permutation_equivariance():
    data = collider_data(3)
    perm = [2, 0, 1]
    shuffled = MultiEnvDataset(data.X[:, perm], data.env, [data.observed_ids[p] for p in perm])
    I_a = indicator_from_mixing(fastica_recover(data, 2)[1])
    I_b = indicator_from_mixing(fastica_recover(shuffled, 2)[1])
    assert support(I_a) == support(I_b)
    a, _ = fastica_recover(data, 2)
    b, _ = fastica_recover(shuffled, 2)
    _, scores = match_components(a.samples, b.samples)
    assert scores.min() > 0.99


def test_whiten_identity_and_rank_error():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(500, 3)) @ [[1, 2, 0], [0, 1, 0], [0, 3, 1]]
    Z, K, mean = whiten(X)
    assert np.allclose(Z.T @ Z / len(Z), np.eye(3))
    with pytest.raises(RecoveryError):
        whiten(np.column_stack([X[:, 0], X[:, 0]]))


def test_fastica_argument_errors():
    data = collider_data(5, m=200)
    with pytest.raises(ValueError):
        fastica_recover(data, 4)
    with pytest.raises(RecoveryError):
        fastica_recover(data, 2, IcaOptions(max_iter=1, tol=0.0))


def test_estimate_k_on_collider():
    assert estimate_k(collider_data(6)) == 2


# -- indicator sets ---------------------------------------------------------

def test_indicator_from_mixing_examples():
    m = MixingEstimate([[1, 0], [0, 1], [1, 1]], [1, 2, 3])
    assert indicator_from_mixing(m).as_dict() == {1: {0}, 2: {1}, 3: {0, 1}}
    # a column below the threshold is unused
    m = MixingEstimate([[1, 0.1], [0.5, -0.15]], [0, 1])
    I = indicator_from_mixing(m)
    assert I.unused_noises() == {1}
    assert I.as_dict() == {0: {0}, 1: {0}}


def test_seven_node_residuals_from_mixing(seven):
    I0 = oracle_indicator_sets(seven)
    M = I0.to_matrix().astype(float) * 0.7
    I = indicator_from_mixing(MixingEstimate(M, I0.variables))
    assert I == I0
    assert I.residual(1) == {0} and I.residual(3) == set() and I.residual(5) == {2}


def test_indicator_from_mixing_scale_invariant_in_sign():
    m = MixingEstimate([[0.3, -0.5], [-0.25, 0.0]], [0, 1])
    flipped = MixingEstimate(-m.values, m.row_ids)
    assert indicator_from_mixing(m) == indicator_from_mixing(flipped)


def test_correlation_identical_column():
    data = collider_data(7, m=1000)
    noises = RecoveredNoises(data.X[:, [2]], data.env)
    rho = env_correlations(data, noises).sum(axis=0)
    assert rho[2, 0] == pytest.approx(data.n_envs)
    I, n_tests = indicator_from_correlation(data, noises)
    assert 0 in I[2]
    assert n_tests == 3


def test_correlation_independent_column_excluded():
    data = collider_data(8)
    rng = np.random.default_rng(8)
    excluded = 0
    for _ in range(20):
        noises = RecoveredNoises(rng.normal(size=(len(data.env), 1)), data.env)
        I, _ = indicator_from_correlation(data, noises)
        excluded += all(not I[v] for v in I.variables)
    assert excluded == 20


def test_correlation_alignment_and_variance_errors():
    data = collider_data(9, m=100)
    with pytest.raises(ValueError):
        env_correlations(data, RecoveredNoises(np.ones((10, 1)), np.zeros(10)))
    with pytest.raises(RecoveryError):
        env_correlations(data, RecoveredNoises(np.ones((len(data.env), 1)), data.env))


def test_indicator_sets_match_oracle_end_to_end():
    hits = total = 0
    for trial in range(6):
        rng = np.random.default_rng([21, trial])
        g = random_dag(7, 1.5 / 6, 0, rng)
        T = sample_targets(g, 1, rng)
        spec = random_linear_spec(g, rng)
        data = generate(spec, make_environment_plan(T, 7, 16, rng), 5000, rng)
        noises, mixing = fastica_recover(data, len(T), IcaOptions(seed=rng))
        assignment, _ = match_components(noises.samples, data.noise[:, sorted(T)])
        I = indicator_from_mixing(mixing).relabel({int(c): i for i, c in enumerate(assignment)})
        I0 = oracle_indicator_sets(build_augmented_graph(g, T))
        hits += sum(I[v] == I0[v] for v in I0.variables)
        total += len(I0.variables)
    assert hits / total >= 0.9


# -- evaluation matching ----------------------------------------------------

def test_match_components_recovers_permutation_and_sign():
    rng = np.random.default_rng(10)
    truth = rng.laplace(size=(1000, 4))
    perm = [2, 0, 3, 1]
    rec = truth[:, perm] * [1, -2, 3, -1]
    assignment, scores = match_components(rec, truth)
    assert [perm[a] for a in assignment] == [0, 1, 2, 3]
    assert np.allclose(scores, 1.0)
    # monotone distortion keeps the rank correlation at one
    _, s = match_components(np.exp(truth), truth, "spearman")
    assert np.allclose(s, 1.0)
    with pytest.raises(ValueError):
        match_components(rec, truth, "kendall")


# -- exports ----------------------------------------------------------------

def test_noise_and_mixing_export_round_trip():
    rng = np.random.default_rng(11)
    n = RecoveredNoises(rng.normal(size=(5, 3)), [0, 0, 1, 1, 1])
    text = n.to_csv()
    assert text.splitlines()[0] == "env,nt_1,nt_2,nt_3"
    back = RecoveredNoises.from_csv(text)
    assert np.array_equal(back.samples, n.samples) and np.array_equal(back.env, n.env)
    m = MixingEstimate(rng.normal(size=(3, 2)), [4, 5, 9])
    m2 = MixingEstimate.loads(m.dumps())
    assert np.array_equal(m2.values, m.values) and m2.row_ids == (4, 5, 9)
    with pytest.raises(ValueError):
        MixingEstimate.loads("1 2\n")
    with pytest.raises(ValueError):
        RecoveredNoises.from_csv("env,x_1\n0,1\n")


# -- contrastive path -------------------------------------------------------

def test_contrastive_requires_enough_environments():
    data = collider_data(12, m=100, D=2)
    with pytest.raises(ValueError):
        contrastive_features(data, 2)
    with pytest.raises(ValueError):
        contrastive_features(collider_data(12, m=100), 2, ContrastiveConfig(optimizer="rmsprop"))


def test_contrastive_recover_shape_and_determinism():
    data = collider_data(13, m=300)
    cfg = ContrastiveConfig(hidden=16, epochs=2)
    a = contrastive_recover(data, 2, cfg, seed=3)
    b = contrastive_recover(data, 2, cfg, seed=3)
    assert a.samples.shape == (len(data.env), 2)
    assert np.array_equal(a.samples, b.samples)
    F = contrastive_features(data, 2, ContrastiveConfig(hidden=16, epochs=1, feature_dim=3))
    assert F.shape == (len(data.env), 3)
