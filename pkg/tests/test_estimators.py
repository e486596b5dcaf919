import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from oatomo import solvers
from oatomo.estimators import (
    A2TVReconstructor,
    ForwardModel,
    LSQRReconstructor,
    TikhonovReconstructor,
    TVL1Reconstructor,
)
from oatomo.phantoms import PhantomSpec, vessel_phantom


@pytest.fixture(scope="module")
def fm():
    return ForwardModel(nx=16, ny=16, n_detectors=12).fit()


@pytest.fixture(scope="module")
def phantom():
    return vessel_phantom(PhantomSpec(size=16, seed=1)).values


def test_forward_model_matches_matrix(fm, phantom):
    P = fm.transform(phantom)
    assert P.shape == (1, fm.geometry_.n_detectors * fm.geometry_.n_samples)
    assert np.allclose(P[0], fm.matrix_ @ phantom.ravel())
    batch = fm.transform(np.stack([phantom.ravel(), 2 * phantom.ravel()]))
    assert np.allclose(batch[1], 2 * batch[0])
    back = fm.inverse_transform(P)
    assert back.shape == (1, 256)
    assert fm.matrix_.is_normalized()
    raw = ForwardModel(nx=16, ny=16, n_detectors=12, normalize=False).fit()
    assert np.allclose(raw.matrix_.csr.toarray() / fm.matrix_.norm_factor, fm.matrix_.csr.toarray(), rtol=1e-12)


def test_forward_model_validation():
    with pytest.raises(NotFittedError):
        ForwardModel().transform(np.zeros((1, 4096)))
    with pytest.raises(ValueError):
        ForwardModel(nx=1).fit()
    with pytest.raises(ValueError):
        ForwardModel(n_detectors=0).fit()
    fm = ForwardModel(nx=8, ny=8, n_detectors=2).fit()
    with pytest.raises(ValueError):
        fm.transform(np.zeros((1, 65)))
    bad = np.zeros((8, 8))
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        fm.transform(bad)


def test_params_and_clone(fm):
    rec = A2TVReconstructor(fm, lam=0.5, k=0.15, iters=10)
    assert rec.get_params()["k"] == 0.15
    twin = clone(rec)
    # nested estimators are cloned unfitted, as usual for sklearn
    assert twin.lam == 0.5 and twin.model.get_params() == fm.get_params()
    assert not hasattr(twin.model, "matrix_")
    rec.set_params(k=0.3)
    assert rec.k == 0.3


def test_reconstructors_match_solvers(fm, phantom):
    P = fm.transform(phantom)
    cfg = solvers.SolverConfig(iters=50, lam=0.01, k=0.3, trace_stride=5)
    rec = A2TVReconstructor(fm, lam=0.01, k=0.3, iters=50, trace_stride=5).fit()
    U = rec.predict(P)
    u_ref, trace = solvers.chambolle_pock_a2tv(fm.matrix_, P[0], cfg, (16, 16))
    assert U.shape == (1, 16, 16)
    assert np.array_equal(U[0], u_ref)
    assert rec.traces_[0].total == trace.total

    tv = TVL1Reconstructor(fm, alpha=2.0, mu=0.1, iters=30, haar_levels=2).fit()
    cfg = solvers.SolverConfig(iters=30, alpha=2.0, mu=0.1, haar_levels=2)
    u_ref, _ = solvers.chambolle_pock_tvl1(fm.matrix_, P[0], cfg, (16, 16))
    assert np.array_equal(tv.predict(P)[0], u_ref)

    ls = LSQRReconstructor(fm, iters=20).fit()
    u_ref, _ = solvers.lsqr(fm.matrix_, P[0], 20, 0.0)
    assert np.array_equal(ls.transform(P)[0], np.ravel(u_ref))

    tk = TikhonovReconstructor(fm, lam=0.5, iters=20).fit()
    assert np.array_equal(tk.transform(P)[0], np.ravel(solvers.tikhonov(fm.matrix_, P[0], 0.5, 20, 0.0)))


def test_score_is_negative_mad(fm, phantom):
    P = fm.transform(phantom)
    rec = LSQRReconstructor(fm, iters=30).fit()
    U = rec.transform(P)
    assert rec.score(P, phantom.reshape(1, -1)) == pytest.approx(-np.mean(np.abs(U - phantom.ravel())))
    with pytest.raises(ValueError):
        rec.score(np.vstack([P, P]), phantom.reshape(1, -1))


def test_reconstructor_validation(fm):
    with pytest.raises(TypeError):
        LSQRReconstructor(model="nope").fit()
    with pytest.raises(ValueError):
        A2TVReconstructor(fm, k=0.0).fit()
    with pytest.raises(ValueError):
        TVL1Reconstructor(fm, alpha=-1.0).fit()
    with pytest.raises(ValueError):
        TikhonovReconstructor(fm, lam=-1.0).fit()
    with pytest.raises(ValueError):
        LSQRReconstructor(fm, iters=0).fit()
    with pytest.raises(NotFittedError):
        LSQRReconstructor(fm).transform(np.zeros(10))
