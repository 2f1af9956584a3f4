import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from trtclosure.closure import ClosureModel, central_difference
from trtclosure.learn import ClosureLearner
from trtclosure.termlib import base_defaults


def free_support(lib, w):
    forced = set(lib.forced_index.tolist())
    return {lib[j].name for j in np.flatnonzero(w) if j not in forced}


def test_planted_flux_recovered(planted_fit):
    truth, _, learner = planted_fit
    m = learner.models_[0]
    assert free_support(m.lib_F, m.w_F) == free_support(truth.lib_F, truth.w_F)
    sup = np.flatnonzero(truth.w_F)
    assert np.max(np.abs(m.w_F[sup] / truth.w_F[sup] - 1)) < 1e-3
    assert np.allclose(m.w0, truth.w0, rtol=1e-3)


def test_planted_report(planted_fit):
    _, ds, learner = planted_fit
    rep = learner.report_["datasets"][0]
    assert rep["shape_F"][1] == 38 and rep["shape_S"][1] == 62
    assert rep["audit"]["total_violations"] == 0
    assert set(learner.lambdas_) == {"F", "S"}
    assert learner.report_["wall_time"] > 0
    assert learner.models_[0].provenance["dataset"] == ds.content_hash()


def test_predict_matches_model_rhs(planted_fit):
    truth, ds, learner = planted_fit
    out = learner.predict(ds)
    assert out.shape == (4,) + ds.shape
    j = ds.t.size // 2
    ref = truth.rhs(ds.state(j), central_difference(ds.dx))
    # the e-equation is the most tightly determined one
    assert np.allclose(out[0, :, j], ref[0], rtol=1e-3, atol=1e-3 * np.max(np.abs(ref[0])))


def test_saved_model_round_trip(planted_fit, tmp_path):
    m = planted_fit[2].models_[0]
    back = ClosureModel.load(m.save(tmp_path / "m.json"))
    assert np.array_equal(back.w_F, m.w_F) and np.array_equal(back.w_S, m.w_S)


def test_sklearn_parameters():
    est = ClosureLearner(p_tot=3, p_max=2, refine=1)
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.set_params(tau=1e-3)
    assert c.tau == 1e-3 and est.tau == 1e-4
    assert "ClosureLearner" in repr(est)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        ClosureLearner().predict(None)


def test_input_validation(planted):
    _, ds = planted
    with pytest.raises(ValueError):
        ClosureLearner().fit([])
    with pytest.raises(TypeError):
        ClosureLearner().fit([np.zeros(3)])
    with pytest.raises(ValueError, match="gamma"):
        ClosureLearner().fit(ds.replace(params={"rho_cv": 1.0}))
    with pytest.raises(ValueError):
        ClosureLearner(base="guess").fit(ds)
    with pytest.raises(ValueError):
        ClosureLearner(p_tot=2, p_max=3).fit(ds)


def test_analytic_base_and_window(planted):
    _, ds = planted
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = ClosureLearner(base="analytic", refine=0, x_range=(0.0, 2.0), t_range=(0.0, 1e-10)).fit(ds)
    m = est.models_[0]
    assert np.array_equal(m.w0, base_defaults(ds.params["gamma"], ds.params["rho_cv"]))
    n_x = np.count_nonzero(ds.x <= 2.0)
    assert est.report_["datasets"][0]["test_functions"]["selection"]["x"]["N"] == n_x


def test_group_learning_of_copies_is_symmetric(planted):
    _, a = planted
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = ClosureLearner(refine=0, group=True).fit([a, a])
    m0, m1 = est.models_
    assert np.array_equal(m0.w_F, m1.w_F) and np.array_equal(m0.w_S, m1.w_S)
    assert len(est.lambdas_["F"]) == 2 and est.lambdas_["F"][0] == est.lambdas_["F"][1]
