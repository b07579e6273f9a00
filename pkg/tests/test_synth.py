import numpy as np
import pytest

from lolprf.core import ContractViolation, RankedList, RelevanceJudgments
from lolprf.index import build_matrix
from lolprf.prf import first_pass_runs
from lolprf.synth import SynthConfig, drift_profile, generate, write_dataset


def top1_on_topic_rate(ds):
    matrix = build_matrix(ds.corpus)
    runs = first_pass_runs(matrix, ds.queries, 1)
    hits = [ds.doc_topics[runs[q.query_id].doc_ids[0]] == (ds.query_topics[q.query_id][0], "on") for q in ds.queries]
    return float(np.mean(hits))


def test_same_seed_gives_identical_files(tmp_path):
    cfg = SynthConfig(n_topics=8, docs_per_topic=5, n_distractors=10, vocab_size=80, seed=9)
    a = write_dataset(generate(cfg), tmp_path / "a")
    b = write_dataset(generate(cfg), tmp_path / "b")
    for name in a:
        assert a[name].read_bytes() == b[name].read_bytes(), name


def test_different_seeds_differ():
    a = generate(SynthConfig(n_topics=4, docs_per_topic=3, n_distractors=2, vocab_size=40, seed=1))
    b = generate(SynthConfig(n_topics=4, docs_per_topic=3, n_distractors=2, vocab_size=40, seed=2))
    assert a.corpus[0].vector != b.corpus[0].vector


def test_default_shape():
    ds = generate(SynthConfig())
    assert len(ds.corpus) == 2000
    assert len(set(t for t, _ in ds.doc_topics.values())) == 50
    assert not {q.query_id for q in ds.train_queries} & {q.query_id for q in ds.dev_queries}


def test_unambiguous_queries_retrieve_on_topic_first():
    assert top1_on_topic_rate(generate(SynthConfig(ambiguity_rate=0.0))) >= 0.95


def test_full_ambiguity_mixes_every_query():
    ds = generate(SynthConfig(ambiguity_rate=1.0, n_topics=10, docs_per_topic=5, n_distractors=10, vocab_size=100))
    assert all(amb for _, _, amb in ds.query_topics.values())
    sparse = generate(SynthConfig(ambiguity_rate=1.0, n_topics=10, docs_per_topic=5, n_distractors=10,
                                  vocab_size=100, kind="sparse"))
    shared_start = 10 * 8
    for q in sparse.queries:
        t, u, _ = sparse.query_topics[q.query_id]
        assert shared_start + t in q.text  # the collision term


def test_ambiguity_lowers_first_pass_precision():
    clean = top1_on_topic_rate(generate(SynthConfig(ambiguity_rate=0.0)))
    mixed = top1_on_topic_rate(generate(SynthConfig(ambiguity_rate=1.0)))
    assert mixed < clean


def test_grades_follow_topic_roles():
    ds = generate(SynthConfig(n_topics=4, docs_per_topic=3, n_distractors=8, vocab_size=40, seed=0))
    for q in ds.queries:
        t = ds.query_topics[q.query_id][0]
        for d, (topic, role) in ds.doc_topics.items():
            expected = (2 if role == "on" else 1) if topic == t else 0
            assert ds.qrels.grade(q.query_id, d) == expected


def test_on_topic_docs_beat_others_against_prototype():
    ds = generate(SynthConfig(seed=5))
    on, other = [], []
    for doc in ds.corpus:
        topic, role = ds.doc_topics[doc.doc_id]
        scores = ds.prototypes @ doc.vector.to_array()
        (on if role == "on" else other).append(scores[topic])
    assert np.mean(on) > np.mean(other)


@pytest.mark.parametrize("kw", [dict(vocab_size=10), dict(n_topics=1), dict(ambiguity_rate=1.5),
                                dict(docs_per_topic=0), dict(kind="bogus"), dict(dense_dim=1)])
def test_invalid_configs_rejected(kw):
    with pytest.raises(ContractViolation):
        generate(SynthConfig(**kw))


# -- drift profile -----------------------------------------------------------------

def ranked(qid, ids):
    return RankedList(qid, [(d, float(-i)) for i, d in enumerate(ids)])


def test_all_relevant_profile_is_flat_one():
    qrels = RelevanceJudgments({("q", f"d{i}"): 1 for i in range(5)})
    prof = drift_profile([ranked("q", [f"d{i}" for i in range(5)])], qrels, range(1, 6))
    assert prof == {k: 1.0 for k in range(1, 6)}


def test_alternating_profile():
    qrels = RelevanceJudgments({("q", d): 1 for d in ("r1", "r2", "r3")})
    prof = drift_profile([ranked("q", ["r1", "x1", "r2", "x2", "r3"])], qrels, range(0, 6))
    assert 0 not in prof
    assert [round(prof[k], 3) for k in range(1, 6)] == [1.0, 0.5, 0.667, 0.5, 0.6]


def test_short_run_rejected():
    with pytest.raises(ContractViolation):
        drift_profile([ranked("q", ["a"])], RelevanceJudgments(), [3])


def test_profile_non_increasing_for_separable_topics():
    ds = generate(SynthConfig(n_topics=10, docs_per_topic=3, n_distractors=20, vocab_size=100,
                              noise_sigma=0.0, query_noise=0.0, ambiguity_rate=0.0, seed=2))
    runs = first_pass_runs(build_matrix(ds.corpus), ds.queries, 5)
    prof = drift_profile(runs, ds.qrels, range(1, 6), threshold=2)
    values = [prof[k] for k in range(1, 6)]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    assert values[0] == 1.0 and values[-1] < 1.0
