import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lolprf.core import ContractViolation, Query, VectorRepr
from lolprf.estimator import BruteForceRetriever, LoLReformulator, RocchioReformulator, check_queries
from lolprf.index import build_matrix, search
from lolprf.synth import SynthConfig, generate


@pytest.fixture(scope="module")
def ds():
    return generate(SynthConfig(n_topics=6, docs_per_topic=6, n_distractors=12, vocab_size=60,
                                queries_per_topic=4, seed=3))


@pytest.fixture(scope="module")
def matrix(ds):
    return build_matrix(ds.corpus)


@pytest.fixture(scope="module")
def fitted(ds, matrix):
    est = LoLReformulator(learning_rate=3e-3, revision_budget=4, width=8, ffn_width=16, mlp_width=8,
                          first_pass_depth=20, pool_cap=16, seed=1)
    return est.fit(ds.train_queries, ds.qrels, matrix=matrix, dev_X=ds.dev_queries)


def test_params_round_trip_through_clone():
    est = LoLReformulator(lam=0.5, k_size=3)
    params = est.get_params()
    assert params["lam"] == 0.5 and params["k_size"] == 3
    copy = clone(est)
    assert copy.get_params() == params
    copy.set_params(lam=2.0)
    assert copy.lam == 2.0 and est.lam == 0.5


def test_unfitted_use_raises(ds):
    with pytest.raises(NotFittedError):
        LoLReformulator().transform(ds.dev_queries)
    with pytest.raises(NotFittedError):
        RocchioReformulator().predict(ds.dev_queries)


def test_lol_transform_and_predict(ds, matrix, fitted):
    out = fitted.transform(ds.dev_queries, depth=2)
    assert out.shape == (len(ds.dev_queries), 16)
    assert np.all(np.isfinite(out))
    runs = fitted.predict(ds.dev_queries, depth=2, top_n=7)
    q = ds.dev_queries[0]
    assert runs[q.query_id] == search(matrix, VectorRepr.dense(out[0]), 7, q.query_id, runs[q.query_id].produced_by)
    assert 0.0 <= fitted.score(ds.dev_queries, ds.qrels) <= 1.0
    assert fitted.best_epoch_ in (1, 2)


def test_lol_rejects_depth_beyond_model(ds, fitted):
    with pytest.raises(ContractViolation):
        fitted.transform(ds.dev_queries, depth=6)


def test_lol_holds_out_dev_split_when_none_given(ds, matrix):
    est = LoLReformulator(revision_budget=2, width=8, ffn_width=16, mlp_width=8, first_pass_depth=20, pool_cap=8)
    est.fit(ds.train_queries, ds.qrels, matrix=matrix)
    assert hasattr(est, "params_")


def test_lol_fit_is_deterministic(ds, matrix, fitted):
    again = clone(fitted).fit(ds.train_queries, ds.qrels, matrix=matrix, dev_X=ds.dev_queries)
    assert again.log_ == fitted.log_


def test_rocchio_without_feedback_weight_returns_query(ds, matrix):
    est = RocchioReformulator(beta=0.0, depth=3).fit(matrix=matrix)
    out = est.transform(ds.dev_queries)
    assert np.array_equal(out, np.vstack([q.vector.to_array() for q in ds.dev_queries]))


def test_retriever_matches_search(ds, matrix):
    ret = BruteForceRetriever(top_n=5).fit(ds.corpus)
    runs = ret.predict(ds.dev_queries)
    q = ds.dev_queries[0]
    assert runs[q.query_id] == search(matrix, q.vector, 5, q.query_id, "base")
    assert 0.0 <= ret.score(ds.dev_queries, ds.qrels) <= 1.0


def test_query_validation(matrix):
    good = Query("a", (), VectorRepr.dense(np.ones(16)))
    with pytest.raises(ContractViolation):
        check_queries([])
    with pytest.raises(ContractViolation):
        check_queries([good, good])
    with pytest.raises(ContractViolation):
        check_queries([good, Query("b", (), VectorRepr.dense(np.ones(3)))])
    with pytest.raises(ContractViolation):
        check_queries([Query("c", (), VectorRepr.dense(np.ones(3)))], matrix)
    with pytest.raises(ContractViolation):
        check_queries(["not a query"])
    assert check_queries(good) == [good]
