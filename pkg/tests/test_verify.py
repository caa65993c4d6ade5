import json
import warnings

import numpy as np
import pytest

from conftest import timelike_samples
from lfgeom import (
    Budget,
    CapsuleSpec,
    check_capsule,
    check_concavity_pair,
    check_parallel_L_constancy,
    check_variation_concavity,
    integrate_geodesic,
    reverse_model,
    zoo_model,
)
from lfgeom.errors import BadConfig, EndpointConditionViolated, NotTimelike
from lfgeom.geodesics import constant_path
from lfgeom.verify import (
    CONC_REL_TOL,
    FAIL,
    PASS,
    _capsule_configs,
    _sample_members,
    jacobi_norm_concavity,
    membership,
    run_check,
    verify_theorem_1_1,
)
from lfgeom.rng import substream


def _sphere_pair(m):
    eta = integrate_geodesic(m, [-0.45, -0.1, -0.25], [0.5, 0.0, 0.25])
    xi = integrate_geodesic(m, [-0.05, 0.1, -0.25], [0.5, 0.0, 0.25])
    return eta, xi


def _spacelike_gamma(m):
    return integrate_geodesic(m, [-0.3, 0.0, 0.0], [0.0, 0.2, 0.0], (-1.0, 1.0), stops=np.linspace(-1, 1, 9))


# -- concavity ----------------------------------------------------------------

def test_minkowski_constant_pair_passes():
    m = zoo_model("minkowski")
    rep = check_concavity_pair(m, constant_path(m, [0.0, 0.0]), constant_path(m, [2.0, 0.5]), grid_size=9)
    assert rep.verdict == PASS
    assert np.ptp(rep.values) <= 1e-12
    assert rep.values[0] == pytest.approx(np.sqrt(4 - 0.25), abs=1e-12)


def test_product_sphere_pair_fails():
    m = zoo_model("product_sphere")
    eta, xi = _sphere_pair(m)
    rep = check_concavity_pair(m, eta, xi, grid_size=17, timelike_only=True)
    assert rep.verdict == FAIL and rep.worst_deficit < -1e-5
    assert rep.witness is not None


def test_same_pair_on_hyperbolic_product_passes():
    m = zoo_model("product_hyperbolic")
    eta = integrate_geodesic(m, [-0.45, -0.1, -0.25], [0.5, 0.0, 0.25])
    xi = integrate_geodesic(m, [-0.05, 0.1, -0.25], [0.5, 0.0, 0.25])
    assert check_concavity_pair(m, eta, xi, grid_size=17, timelike_only=True).verdict == PASS


def test_concavity_endpoint_and_timelike_guards():
    m = zoo_model("minkowski")
    with pytest.raises(EndpointConditionViolated):
        check_concavity_pair(m, constant_path(m, [0.0, 0.0]), constant_path(m, [0.0, 2.0]))
    spacelike = integrate_geodesic(m, [0.0, 0.0], [0.0, 1.0])
    with pytest.raises(NotTimelike):
        check_concavity_pair(m, spacelike, constant_path(m, [3.0, 0.0]), timelike_only=True)
    with pytest.raises(BadConfig):
        check_concavity_pair(m, constant_path(m, [0.0, 0.0]), constant_path(m, [2.0, 0.0]), grid_size=2)


def test_coincident_endpoint_allowed():
    m = zoo_model("minkowski")
    eta = integrate_geodesic(m, [0.0, 0.0], [1.0, 0.0])
    rep = check_concavity_pair(m, eta, constant_path(m, [1.0, 0.0]), grid_size=9)
    assert rep.values[-1] == 0.0 and rep.verdict == PASS


# -- variation concavity ----------------------------------------------------------

def test_variation_minkowski():
    m = zoo_model("minkowski")
    rep = check_variation_concavity(m, lambda s: np.array([s, 0.0]), lambda s: np.array([s + 2.0, 0.0]),
                                    s_grid=5, t_grid=9)
    assert rep.verdict == PASS


@pytest.mark.parametrize("name", ["product_hyperbolic", "de_sitter"])
def test_variation_nonnegative_curvature(zoo, name):
    m = zoo[name]
    rng = np.random.default_rng(30)
    for _ in range(10 if name == "product_hyperbolic" else 3):
        a0 = np.r_[-0.25, rng.uniform(-0.1, 0.1, 2)]
        b0 = a0 + np.r_[0.3, rng.uniform(-0.05, 0.05, 2)]
        du, dv = np.r_[0.15, rng.uniform(-0.05, 0.05, 2)], np.r_[0.15, rng.uniform(-0.05, 0.05, 2)]
        rep = check_variation_concavity(m, lambda s: a0 + s * du, lambda s: b0 + s * dv, s_grid=5, t_grid=17)
        assert rep.verdict == PASS, rep.witness


def test_jacobi_norm_concave_on_passing_models():
    for name in ("de_sitter", "product_hyperbolic"):
        m = zoo_model(name)
        assert jacobi_norm_concavity(m, substream(1, "jacobi"), count=20) >= -1e-5


# -- capsules -------------------------------------------------------------------

def test_capsule_minkowski_bruteforce():
    m = zoo_model("minkowski")
    gamma = integrate_geodesic(m, [0.0, -1.0], [0.0, 2.0], stops=np.linspace(0, 1, 9))
    rng = np.random.default_rng(31)
    members = _sample_members(m, [gamma], [0.5], 12, rng, 9, 10_000)[0]
    assert len(members) == 12
    ts = np.linspace(0, 1, 20001)
    G = gamma.position(ts)

    def tau_max(z):
        d = z - G
        q = d[:, 0] ** 2 - d[:, 1] ** 2
        return np.sqrt(np.max(np.where(d[:, 0] > 0, q, 0.0)))

    for z1, z2 in zip(members[::2], members[1::2]):
        assert tau_max(z1) >= 0.5 - 1e-9 and tau_max(z2) >= 0.5 - 1e-9
        assert tau_max(0.5 * (z1 + z2)) >= 0.5 - 1e-9
    rep = check_capsule(m, CapsuleSpec(gamma, 0.5, pairs=6, s_grid=5), rng=np.random.default_rng(1))
    assert rep.verdict == PASS


def test_capsule_product_sphere_witness():
    m = zoo_model("product_sphere")
    gamma = _spacelike_gamma(m)
    z1, z2 = np.array([0.1, -0.2, 0.2]), np.array([0.1, 0.2, 0.2])
    r = float(membership(m, gamma, np.stack([z1, z2])).min())
    rep = check_capsule(m, CapsuleSpec(gamma, r, pairs=0, s_grid=9, witness_pairs=[(z1, z2)]))
    assert rep.verdict == FAIL and rep.worst_deficit < -1e-4
    assert 0.0 < rep.witness["s"] < 1.0


def test_capsule_same_configuration_on_hyperbolic_passes():
    m = zoo_model("product_hyperbolic")
    gamma = _spacelike_gamma(m)
    z1, z2 = np.array([0.1, -0.2, 0.2]), np.array([0.1, 0.2, 0.2])
    r = float(membership(m, gamma, np.stack([z1, z2])).min())
    assert check_capsule(m, CapsuleSpec(gamma, r, pairs=0, s_grid=9, witness_pairs=[(z1, z2)])).verdict == PASS


def test_capsule_spec_validation():
    m = zoo_model("minkowski")
    gamma = integrate_geodesic(m, [0.0, -1.0], [0.0, 2.0])
    with pytest.raises(BadConfig):
        CapsuleSpec(gamma, 0.0)
    with pytest.raises(BadConfig):
        CapsuleSpec(gamma, 0.5, side="sideways")


def test_past_capsules_equal_future_capsules_of_reverse():
    m = zoo_model("de_sitter")
    b = Budget(capsule_pairs=2, capsule_random_pairs=0)
    past = run_check(m, "past_capsules", 5, b)
    rng = substream(5, "past_capsules")
    from lfgeom.verify import _run_capsule_scan
    verdict, worst, _, _ = _run_capsule_scan(reverse_model(m), rng, b, "future")
    assert past.verdict == verdict and past.worst_deficit == worst


# -- parallel transport and reports ---------------------------------------------------

def test_parallel_L_constancy_de_sitter():
    m = zoo_model("de_sitter")
    path = integrate_geodesic(m, [-0.3, 0.05, -0.1], [0.5, 0.15, 0.1], stops=np.linspace(0, 1, 9))
    rep = check_parallel_L_constancy(m, path, [1.0, 0.1, -0.2])
    assert rep.verdict == PASS and rep.details["max_deviation"] <= 1e-6


def test_parallel_L_constancy_minkowski_exact():
    m = zoo_model("minkowski")
    path = integrate_geodesic(m, [0.0, 0.0], [1.0, 0.3])
    assert check_parallel_L_constancy(m, path, [1.0, 0.1]).details["max_deviation"] == 0.0


def test_parallel_requires_timelike():
    m = zoo_model("minkowski")
    with pytest.raises(NotTimelike):
        check_parallel_L_constancy(m, integrate_geodesic(m, [0.0, 0.0], [1.0, 0.3]), [0.0, 1.0])


def test_report_schema_and_verdict_rule():
    m = zoo_model("product_sphere")
    rep = run_check(m, "flag_curvature", 3, Budget(flags=100))
    js = rep.to_json()
    assert list(js) == ["check", "verdict", "worst_deficit", "witness", "seed", "runtime_ms"]
    assert js["runtime_ms"] is None and isinstance(rep.to_json(True)["runtime_ms"], float)
    assert (rep.verdict == FAIL) == (rep.worst_deficit < -1e-6)
    json.dumps(js)


def test_budget_from_dict():
    assert Budget.from_dict({"flags": 7}).flags == 7
    with pytest.raises(BadConfig):
        Budget.from_dict({"flagz": 7})
    with pytest.raises(BadConfig):
        run_check(zoo_model("minkowski"), "nonsense")


def test_non_berwald_warning():
    m = zoo_model("perturbed_finsler")
    b = Budget(flags=50, concavity_pairs=2, grid=9)
    with pytest.warns(UserWarning, match="not Berwald"):
        rep = verify_theorem_1_1(m, b, 0, conditions=("flag_curvature",))
    assert rep.berwald is False and rep.warnings
