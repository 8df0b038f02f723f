import json

import numpy as np
import pytest

from stn.data import HdaDataset, SynthSpec, gen_synthetic
from stn.errors import ConfigError, ShapeError
from stn.evalkit import (
    SuiteReport,
    TrialReport,
    accuracy,
    export_embeddings,
    gradcheck_suite,
    read_embeddings,
    run_ablations,
    run_trials,
    trial_dataset,
)
from stn.model import ModelConfig, init_params, project_source, project_target
from stn.trainer import VARIANTS, TrainConfig, predict, train

SYNTH = SynthSpec(n_classes=3, d_s=6, d_t=5, n_source_per_class=15, n_unlabeled_per_class=8)
MCFG = ModelConfig(d_s=6, d_t=5, n_classes=3, d=8)
FAST = TrainConfig(iters=15)


@pytest.mark.parametrize(
    "pred,truth,expected",
    [([0, 1, 2], [0, 1, 2], 1.0), ([1, 2, 0], [0, 1, 2], 0.0), ([0, 1, 1, 1], [0, 1, 2, 1], 0.75)],
)
def test_accuracy_cases(pred, truth, expected):
    assert accuracy(pred, truth) == expected


def test_accuracy_rejects_length_mismatch():
    with pytest.raises(ShapeError):
        accuracy([0, 1], [0, 1, 2])
    with pytest.raises(ShapeError):
        accuracy([], [])


def test_single_trial_mean_is_that_trial():
    rep = run_trials(SYNTH, MCFG, FAST, n_trials=1, base_seed=5)
    (trial,) = rep.trials["full"]
    assert trial.seed == 5
    assert rep.mean("full") == trial.accuracy and rep.std("full") == 0.0


def test_constant_accuracies_have_zero_std():
    rep = SuiteReport({"full": [TrialReport(s, "full", 0.7, 1.0) for s in range(4)]})
    assert rep.std("full") == 0.0
    assert rep.mean("full") == pytest.approx(0.7, abs=1e-15)


def test_std_is_population():
    rep = SuiteReport({"full": [TrialReport(s, "full", a, 1.0) for s, a in enumerate([0.5, 1.0])]})
    assert rep.std("full") == pytest.approx(0.25, abs=1e-15)


def test_trials_are_deterministic():
    a = run_trials(SYNTH, MCFG, FAST, n_trials=2)
    b = run_trials(SYNTH, MCFG, FAST, n_trials=2)
    assert a.to_json(False) == b.to_json(False)


def test_parallel_matches_serial():
    a = run_trials(SYNTH, MCFG, FAST, n_trials=3)
    b = run_trials(SYNTH, MCFG, FAST, n_trials=3, n_jobs=2)
    assert a.to_json(False) == b.to_json(False)


def test_ablations_cover_variants_on_paired_splits(monkeypatch):
    import stn.evalkit as ek

    seen = []
    real = ek._run_one

    def spy(job):
        seen.append((job[2].variant, job[3], job[0].X_l.tobytes()))
        return real(job)

    monkeypatch.setattr(ek, "_run_one", spy)
    rep = run_ablations(SYNTH, MCFG, FAST, n_trials=2)
    assert rep.variants == list(VARIANTS)
    assert all(len(rep.trials[v]) == 2 for v in VARIANTS)
    for seed in (0, 1):
        splits = {x for v, s, x in seen if s == seed}
        assert len(splits) == 1


def test_zero_trials_rejected():
    with pytest.raises(ConfigError):
        run_trials(SYNTH, MCFG, FAST, n_trials=0)


def test_trial_dataset_resamples_only_with_truth():
    ds = gen_synthetic(SYNTH)
    redrawn = trial_dataset(ds, 9)
    assert np.array_equal(np.bincount(redrawn.y_l), np.bincount(ds.y_l))
    assert redrawn.n_u == ds.n_u
    blind = HdaDataset(ds.X_s, ds.y_s, ds.X_l, ds.y_l, ds.X_u, ds.n_classes)
    assert trial_dataset(blind, 9) is blind


def test_r_eq_0_invariant_to_unlabeled_order():
    ds = gen_synthetic(SYNTH)
    order = np.random.default_rng(0).permutation(ds.n_u)
    shuffled = ds.permute_unlabeled(order)
    cfg = TrainConfig(iters=50, variant="r_eq_0")
    a = train(ds, MCFG, cfg).params
    b = train(shuffled, MCFG, cfg).params
    # only the unlabeled mean depends on X_u; summation order moves it by rounding
    np.testing.assert_allclose(a.flat(), b.flat(), rtol=0, atol=1e-9)
    pa, pb = predict(a, ds.X_u), predict(b, shuffled.X_u)
    assert np.array_equal(pa[order], pb)
    truth = ds.y_u_truth.reveal()
    assert accuracy(pa, truth) == accuracy(pb, truth[order])


def test_embedding_export_roundtrip(tmp_path):
    ds = gen_synthetic(SYNTH)
    params = init_params(MCFG)
    path = export_embeddings(params, ds, tmp_path / "emb.csv", MCFG.slope)
    domains, labels, Z = read_embeddings(path)
    assert Z.shape == (ds.n_s + ds.n_l + ds.n_u, MCFG.d)
    assert domains.count("source") == ds.n_s and domains.count("target_unlabeled") == ds.n_u
    assert np.all(labels[-ds.n_u:] == -1)
    expected = np.vstack([project_source(params, ds.X_s), project_target(params, ds.X_l),
                          project_target(params, ds.X_u)])
    np.testing.assert_allclose(Z, expected, atol=1e-9, rtol=0)


def test_suite_json_schema(tmp_path):
    rep = run_ablations(SYNTH, MCFG, FAST, n_trials=2, variants=("full", "beta_0"))
    data = json.loads(rep.dump(tmp_path / "suite.json").read_text())
    assert [e["variant"] for e in data] == ["full", "beta_0"]
    for entry in data:
        assert set(entry) == {"variant", "trials", "mean", "std"}
        accs = [t["accuracy"] for t in entry["trials"]]
        assert all(set(t) == {"seed", "accuracy", "wall_ms"} for t in entry["trials"])
        assert entry["mean"] == pytest.approx(np.mean(accs), abs=1e-15)
        assert entry["std"] == pytest.approx(np.std(accs), abs=1e-15)
    assert "wall_ms" not in json.dumps(rep.to_json(include_wall_time=False))


def test_missing_truth_gives_null_accuracy():
    ds = gen_synthetic(SYNTH)
    blind = HdaDataset(ds.X_s, ds.y_s, ds.X_l, ds.y_l, ds.X_u, ds.n_classes)
    data = run_trials(blind, MCFG, FAST, n_trials=1).to_json()
    assert data[0]["trials"][0]["accuracy"] is None and data[0]["mean"] is None


def test_gradcheck_suite_passes():
    results = gradcheck_suite()
    assert len(results) == 3 * len(VARIANTS)
    assert {r for _, r, _ in results} == {0, 150, 300}
    for variant, r, rep in results:
        assert rep.passed and rep.n_checked >= 100, (variant, r, str(rep))
