import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from enkf_cal import InsufficientEnsembleError, ValidationError
from enkf_cal.ensemble import (
    CsvFormatError,
    JointEnsemble,
    MomentEstimate,
    ObservationModel,
    build_incidence,
    compute_moments,
    load_observation,
    load_tabulated_ensemble,
    partition,
    save_ensemble,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def ensembles(min_m=2, max_m=12, max_p=5):
    return st.integers(min_m, max_m).flatmap(
        lambda m: st.integers(2, max_p).flatmap(
            lambda p: arrays(np.float64, (m, p), elements=finite).map(lambda X: JointEnsemble(X, 1, p - 1))
        )
    )


def test_two_point_moments():
    mo = compute_moments(JointEnsemble([[0.0, 0.0], [2.0, 2.0]], 1, 1))
    np.testing.assert_array_equal(mo.mu_pr, [1.0, 1.0])
    np.testing.assert_array_equal(mo.sigma_pr, [[2.0, 2.0], [2.0, 2.0]])


def test_identical_members_have_zero_covariance():
    row = [0.3, -1.0, 2.5]
    mo = compute_moments(JointEnsemble([row] * 5, 1, 2))
    np.testing.assert_allclose(mo.mu_pr, row, rtol=0, atol=1e-15)
    np.testing.assert_allclose(mo.sigma_pr, 0.0, atol=1e-15)


def test_cosmology_shaped_moments():
    X = np.random.default_rng(3).standard_normal((128, 60))
    mo = compute_moments(JointEnsemble(X, 5, 55))
    assert mo.mu_pr.shape == (60,) and mo.sigma_pr.shape == (60, 60)
    assert mo.sigma_te.shape == (5, 55)


def test_single_member_rejected():
    with pytest.raises(InsufficientEnsembleError):
        compute_moments(JointEnsemble([[1.0, 2.0]], 1, 1))


def test_members_are_read_only():
    ens = JointEnsemble(np.zeros((3, 2)), 1, 1)
    with pytest.raises(ValueError):
        ens.members[0, 0] = 1.0


def test_row_width_checked():
    with pytest.raises(ValidationError):
        JointEnsemble(np.zeros((3, 4)), 1, 2)


@given(ensembles(), st.randoms(use_true_random=False))
def test_moments_permutation_invariant(ens, rnd):
    perm = list(range(ens.m))
    rnd.shuffle(perm)
    a = compute_moments(ens)
    b = compute_moments(JointEnsemble(ens.members[perm], ens.d_theta, ens.d_eta))
    scale = 1.0 + np.abs(a.sigma_pr).max()
    np.testing.assert_allclose(a.mu_pr, b.mu_pr, atol=1e-10 * (1 + np.abs(a.mu_pr).max()))
    np.testing.assert_allclose(a.sigma_pr, b.sigma_pr, atol=1e-10 * scale)


@given(ensembles())
def test_covariance_psd_and_symmetric(ens):
    S = compute_moments(ens).sigma_pr
    np.testing.assert_array_equal(S, S.T)
    tr = np.trace(S)
    z = np.random.default_rng(0).standard_normal((50, S.shape[0]))
    assert np.all(np.einsum("ij,jk,ik->i", z, S, z) >= -1e-10 * max(tr, 1e-300) - 1e-12)


@settings(max_examples=50)
@given(ensembles(max_p=4), st.integers(0, 2**32 - 1))
def test_affine_equivariance(ens, seed):
    rng = np.random.default_rng(seed)
    p = ens.p
    A = rng.standard_normal((p, p))
    b = rng.standard_normal(p)
    mo = compute_moments(ens)
    mapped = compute_moments(JointEnsemble(ens.members @ A.T + b, ens.d_theta, ens.d_eta))
    scale = 1.0 + np.abs(ens.members).max() ** 2 * np.abs(A).max() ** 2 * p
    np.testing.assert_allclose(mapped.mu_pr, A @ mo.mu_pr + b, atol=1e-9 * np.sqrt(scale))
    np.testing.assert_allclose(mapped.sigma_pr, A @ mo.sigma_pr @ A.T, atol=1e-9 * scale)


def test_incidence_scalar_toy():
    np.testing.assert_array_equal(build_incidence([0], 1, 1), [[0.0, 1.0]])


def test_incidence_all_outputs():
    H = build_incidence(range(4), 2, 4)
    np.testing.assert_array_equal(H, np.hstack([np.zeros((4, 2)), np.eye(4)]))


def test_incidence_cosmology_shape():
    idx = np.linspace(6, 51, 22).round().astype(int)
    H = build_incidence(idx, 5, 55)
    assert H.shape == (22, 60)
    np.testing.assert_array_equal(H.sum(axis=1), 1.0)
    assert not H[:, :5].any()


@pytest.mark.parametrize("idx", [[0, 0], [-1], [3]])
def test_incidence_bad_indices(idx):
    with pytest.raises(ValidationError):
        build_incidence(idx, 1, 3)


@given(st.lists(st.integers(0, 9), min_size=1, max_size=10, unique=True), arrays(np.float64, 12, elements=finite))
def test_incidence_extracts_selected_outputs(idx, x):
    H = build_incidence(idx, 2, 10)
    np.testing.assert_array_equal(H @ x, x[2 + np.asarray(idx)])


def test_partition_blocks_tile():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((6, 6))
    mo = MomentEstimate(rng.standard_normal(6), A @ A.T, 2)
    b = partition(mo)
    S = np.block([[b.sigma_tt, b.sigma_te], [b.sigma_et, b.sigma_ee]])
    np.testing.assert_array_equal(S, mo.sigma_pr)
    np.testing.assert_array_equal(b.sigma_et, b.sigma_te.T)
    np.testing.assert_array_equal(np.concatenate([b.mu_theta, b.mu_eta]), mo.mu_pr)


def test_partition_scalar_and_ice_shapes():
    b = partition(MomentEstimate([1.0, 2.0], [[2.0, 1.0], [1.0, 3.0]], 1))
    assert b.sigma_tt.shape == (1, 1) and b.sigma_ee.shape == (1, 1)
    S = np.eye(1082)
    b = partition(MomentEstimate(np.zeros(1082), S, 2))
    assert b.sigma_tt.shape == (2, 2) and b.sigma_te.shape == (2, 1080) and b.sigma_ee.shape == (1080, 1080)


def test_observation_model_validation():
    with pytest.raises(ValidationError):
        ObservationModel([[0.0, 1.0]], [1.0], [[-1.0]])
    with pytest.raises(ValidationError):
        ObservationModel([[1.0, 0.0]], [1.0], [[1.0]], mode="incidence", d_theta=1)
    with pytest.raises(ValidationError):
        ObservationModel([[0.0, 1.0]], [1.0, 2.0], np.eye(2))


def test_csv_round_trip(tmp_path):
    ens = JointEnsemble([[0.1, 1.0 / 3.0], [-2.5, 1e-17]], 1, 1)
    path = tmp_path / "e.csv"
    save_ensemble(ens, path)
    assert path.read_text().splitlines()[0] == "theta_1,eta_1"
    back = load_tabulated_ensemble(path, 1)
    np.testing.assert_array_equal(back.members, ens.members)


@given(ensembles(max_m=6))
@settings(max_examples=25)
def test_csv_round_trip_property(tmp_path_factory, ens):
    path = tmp_path_factory.mktemp("rt") / "e.csv"
    save_ensemble(ens, path)
    np.testing.assert_array_equal(load_tabulated_ensemble(path).members, ens.members)


def test_csv_cosmology_shape(tmp_path):
    X = np.random.default_rng(0).standard_normal((128, 60))
    save_ensemble(JointEnsemble(X, 5, 55), tmp_path / "c.csv")
    ens = load_tabulated_ensemble(tmp_path / "c.csv", 5)
    assert (ens.m, ens.d_theta, ens.d_eta) == (128, 5, 55)


def test_csv_missing_field_names_row(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("theta_1,eta_1\n1,2\n3\n")
    with pytest.raises(CsvFormatError, match="row 3"):
        load_tabulated_ensemble(p)


def test_csv_non_numeric_names_cell(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("theta_1,eta_1\n1,2\n3,abc\n")
    with pytest.raises(CsvFormatError, match="row 3, column 2"):
        load_tabulated_ensemble(p)


def test_csv_header_dimension_check(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("theta_1,theta_2,eta_1\n1,2,3\n4,5,6\n")
    with pytest.raises(CsvFormatError):
        load_tabulated_ensemble(p, 1)


def test_observation_json_diag_and_full(tmp_path):
    (tmp_path / "o.json").write_text('{"y": [1, 2], "sigma_y": {"diag": [0.5, 0.25]}, "h_indices": [2, 0]}')
    obs = load_observation(tmp_path / "o.json", 1, 3)
    assert obs.mode == "incidence"
    np.testing.assert_array_equal(obs.H, [[0, 0, 0, 1], [0, 1, 0, 0]])
    np.testing.assert_array_equal(obs.sigma_y, np.diag([0.5, 0.25]))
    np.savetxt(tmp_path / "s.csv", [[1.0, 0.2], [0.2, 1.0]], delimiter=",")
    (tmp_path / "o2.json").write_text('{"y": [1, 2], "sigma_y": {"full_csv": "s.csv"}, "h_indices": [0, 1]}')
    obs2 = load_observation(tmp_path / "o2.json", 1, 3)
    np.testing.assert_array_equal(obs2.sigma_y, [[1.0, 0.2], [0.2, 1.0]])
