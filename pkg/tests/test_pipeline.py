"""Tests training, weight selection, diagnostics, estimation and the experiment runner."""

import math

import numpy as np
import pandas as pd
import pytest

from inviv import nn
from inviv.errors import ConfigurationError, ContractError
from inviv.losses import InvarianceKind
from inviv.pipeline.diagnostics import identifiability_from_latents, identifiability_report
from inviv.pipeline.estimation import (
    EXPERIMENT_METHODS,
    METHODS,
    default_methods,
    estimate_methods,
    outcomes_frame,
    parse_methods,
)
from inviv.pipeline.experiments import (
    RESULT_COLUMNS,
    ExperimentName,
    ExperimentScale,
    experiment_tasks,
    run_experiment,
    summarize,
)
from inviv.pipeline.selection import IndependenceSubset, SelectionMode, cross_validate
from inviv.pipeline.training import TERM_NAMES, TrainConfig, train
from inviv.simgen import (
    CounterexampleName,
    EnvDataset,
    MixingKind,
    MixingSpec,
    d2_spec,
    make_counterexample,
    pool,
    simulate,
)

POLY1 = MixingSpec(degree=1)


def _small_config(**kwargs: object) -> TrainConfig:
    defaults: dict = {"epochs": 2, "batch_size": 50, "hidden": 16, "log_every": 1}
    defaults.update(kwargs)
    return TrainConfig(**defaults)


def _strip_oracle(ds: EnvDataset) -> EnvDataset:
    return EnvDataset(env=ds.env, split=ds.split, seed=ds.seed, z=ds.z, d=ds.d, y=ds.y)


def test_config_validation() -> None:
    with pytest.raises(ConfigurationError):
        TrainConfig(lambda1=-1.0).validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=2).validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(p_hat=0).validate()
    TrainConfig().validate()


def test_decoder_follows_mixing() -> None:
    poly = TrainConfig().for_mixing(MixingSpec(degree=3))
    assert poly.decoder == nn.DecoderKind.POLYNOMIAL and poly.decoder_degree == 3
    mlp = TrainConfig().for_mixing(MixingSpec(kind=MixingKind.INVERTIBLE_MLP))
    assert mlp.decoder == nn.DecoderKind.MLP


def test_single_environment_needs_zero_invariance_weight() -> None:
    data = simulate(d2_spec(), POLY1, n_train=60, n_val=10)
    with pytest.raises(ConfigurationError):
        train(data.train[:1], _small_config())


def test_tiny_environments_are_rejected() -> None:
    data = simulate(d2_spec(), POLY1, n_train=3, n_val=3)
    with pytest.raises(ConfigurationError):
        train(data.train, _small_config())


def test_history_frame_columns() -> None:
    data = simulate(d2_spec(), POLY1, n_train=100, n_val=50)
    result = train(data.train, _small_config(epochs=1), data.val)
    frame = result.history_frame()
    assert list(frame.columns) == ["epoch", *[f"train_{k}" for k in TERM_NAMES], *[f"val_{k}" for k in TERM_NAMES]]
    assert len(frame) == 1
    assert result.steps == 2
    assert all(math.isfinite(v) for v in result.final.train.values())


@pytest.mark.slow
def test_training_is_deterministic() -> None:
    data = simulate(d2_spec(), POLY1, n_train=200, n_val=50, seed=0)
    config = _small_config(epochs=3, seed=5)
    a, b = train(data.train, config, data.val), train(data.train, config, data.val)
    for name, value in a.model.params.items():
        np.testing.assert_array_equal(value, b.model.params[name])
    assert a.history_frame().equals(b.history_frame())


@pytest.mark.slow
def test_training_reduces_reconstruction_loss() -> None:
    data = simulate(d2_spec(), POLY1, n_train=200, n_val=50, seed=0)
    result = train(data.train, _small_config(epochs=30, lr=1e-2), data.val)
    assert result.history[-1].train["rec"] < result.history[0].train["rec"]
    assert result.history[-1].val is not None


def test_independence_subset() -> None:
    assert IndependenceSubset.WITH.admits(1.0) and not IndependenceSubset.WITH.admits(0.0)
    assert IndependenceSubset.WITHOUT.admits(0.0) and not IndependenceSubset.WITHOUT.admits(1.0)
    assert IndependenceSubset.ANY.admits(0.0)


def test_empty_grid_is_rejected() -> None:
    data = simulate(d2_spec(), POLY1, n_train=60, n_val=20)
    with pytest.raises(ConfigurationError):
        cross_validate(data.train, data.val, _small_config(), [1.0], [0.0], subset=IndependenceSubset.WITH)


@pytest.mark.slow
@pytest.mark.parametrize("mode", list(SelectionMode))
def test_cross_validate_picks_lowest_score(mode: SelectionMode) -> None:
    data = simulate(d2_spec(), POLY1, n_train=100, n_val=50)
    cv = cross_validate(data.train, data.val, _small_config(epochs=1), [1.0, 10.0], [0.0], mode=mode)
    assert len(cv.runs) == 2
    assert cv.best_run.score == min(run.score for run in cv.runs)
    frame = cv.runs_frame()
    assert frame["selected"].sum() == 1
    assert set(frame["status"]) == {"ok"}
    assert cv.best.lambda1 == cv.best_run.lambda1


def test_oracle_latents_are_perfectly_identified() -> None:
    data = simulate(d2_spec(), POLY1, n_train=300, n_val=10)
    w = [ds.w for ds in data.train]
    v = [ds.v for ds in data.train]
    report = identifiability_from_latents(w, v, w, v)
    assert report.r2_w == pytest.approx([1.0, 1.0])
    assert report.r2_v == pytest.approx([1.0, 1.0])
    assert report.min_sv_a == pytest.approx(1.0)
    assert report.p_hat == 2 and report.q_hat == 2 and report.n == 600
    assert report.latent_min_eigenvalue > 0


def test_affine_images_recover_the_map() -> None:
    data = simulate(d2_spec(), POLY1, n_train=300, n_val=10)
    m = np.array([[2.0, 0.5], [0.0, 1.0]])
    w = [ds.w for ds in data.train]
    v = [ds.v for ds in data.train]
    w_hat = [x @ m + 3.0 for x in w]
    report = identifiability_from_latents(w_hat, v, w, v, include_v=False)
    assert min(report.r2_w) == pytest.approx(1.0)
    assert report.min_sv_a == pytest.approx(np.linalg.svd(m, compute_uv=False).min())
    assert report.r2_v is None


def test_identifiability_needs_oracle() -> None:
    data = simulate(d2_spec(), POLY1, n_train=20, n_val=10)
    model = nn.build_model(nn.Architecture(d_z=5, p_hat=2, q_hat=2, hidden=8), seed=0)
    with pytest.raises(ContractError):
        identifiability_report(model, [_strip_oracle(ds) for ds in data.val])
    report = identifiability_report(model, data.val, lambda2=0.0)
    assert report.r2_v is None


def test_method_registry() -> None:
    assert list(METHODS)[: len(EXPERIMENT_METHODS)] == list(EXPERIMENT_METHODS)
    assert default_methods(has_model=False, has_oracle=False, num_envs=1) == ["2sls_z", "egger_z"]
    assert len(default_methods(has_model=True, has_oracle=True, num_envs=2)) == len(METHODS)
    assert parse_methods("2sls_z, egger_z") == ["2sls_z", "egger_z"]
    with pytest.raises(ConfigurationError):
        parse_methods("2sls_z,bogus")
    with pytest.raises(ConfigurationError):
        parse_methods(" , ")


def test_inapplicable_methods_become_status_rows() -> None:
    ce = make_counterexample(CounterexampleName.COLLIDER_C5, n=500)
    data = pool([ce.dataset])
    outcomes = estimate_methods(data, ["2sls_w_oracle", "egger_z", "po_k_2sls_z"], theta_true=ce.theta)
    assert [o.status for o in outcomes] == ["ok", "ConfigurationError", "ConfigurationError"]
    frame = outcomes_frame(outcomes, num_coords=1)
    assert frame["theta_hat"].isna().tolist() == [False, True, True]
    assert frame.loc[0, "bias"] == pytest.approx(0.0, abs=0.3)


def test_estimation_inputs_are_checked() -> None:
    data = simulate(d2_spec(), POLY1, n_train=50, n_val=10)
    with pytest.raises(ConfigurationError):
        estimate_methods(pool(data.train), ["2sls_what"])
    with pytest.raises(ContractError):
        estimate_methods(pool([_strip_oracle(ds) for ds in data.train]), ["2sls_w_oracle"])


def test_all_methods_run_on_simulated_data() -> None:
    data = simulate(d2_spec(), POLY1, n_train=500, n_val=10)
    model = nn.build_model(nn.Architecture(d_z=5, p_hat=2, q_hat=2, hidden=8), seed=0)
    model.fit_standardization(np.vstack([ds.z for ds in data.train]))
    outcomes = estimate_methods(pool(data.train), list(METHODS), theta_true=d2_spec().theta_vector(), model=model)
    statuses = {o.method: o.status for o in outcomes}
    for name in ("2sls_z", "egger_z", "po_k_2sls_z", "po_k_egger_z", "2sls_w_oracle", "po_2sls_wv_oracle"):
        assert statuses[name] == "ok", name
    assert len(outcomes_frame(outcomes, num_coords=2)) == 2 * len(METHODS)


@pytest.mark.parametrize(
    "name,settings",
    [
        (ExperimentName.MIXING_ABLATION, 4),
        (ExperimentName.MISSPEC_DIMS, 4),
        (ExperimentName.INDEPENDENCE_ABLATION, 4),
        (ExperimentName.THREE_ENV, 4),
        (ExperimentName.INVARIANCE_LOSS_ABLATION, len(InvarianceKind)),
    ],
)
def test_experiment_tasks(name: ExperimentName, settings: int) -> None:
    tasks = experiment_tasks(name, seeds=[3, 4])
    assert len(tasks) == 2 * settings
    assert [t.seed for t in tasks[:settings]] == [3] * settings
    seeds = {t.train_seed for t in tasks}
    assert len(seeds) == len(tasks)
    assert experiment_tasks(name, seeds=[3, 4])[0].train_seed == tasks[0].train_seed


def test_misspecified_dimensions_vary_p_hat() -> None:
    tasks = experiment_tasks(ExperimentName.MISSPEC_DIMS, seeds=[0])
    assert [t.p_hat for t in tasks] == [1, 2, 3, 4]
    assert {t.mixing.label for t in tasks} == {"poly3"}


def test_experiment_name_parsing() -> None:
    assert ExperimentName.parse("three_env") == ExperimentName.THREE_ENV
    with pytest.raises(ConfigurationError, match="mixing_ablation"):
        ExperimentName.parse("bogus")
    with pytest.raises(ConfigurationError):
        run_experiment("three_env", seeds=[])


def _result_row(**kwargs: object) -> dict:
    row: dict = dict.fromkeys(RESULT_COLUMNS, 0)
    row.update(
        experiment="independence_ablation",
        mixing="poly2",
        p_hat=2,
        q_hat=2,
        invariance="mmd_poly2",
        method="2sls_what",
        status="ok",
    )
    row.update(kwargs)
    return row


def test_summarize_groups_by_regime() -> None:
    results = pd.DataFrame(
        [
            _result_row(seed=0, lambda2=0.0, bias=0.2),
            _result_row(seed=1, lambda2=0.0, bias=-0.4),
            _result_row(seed=0, lambda2=5.0, bias=0.1),
            _result_row(seed=1, lambda2=5.0, bias=math.nan, status="WeakInstrumentError"),
        ]
    )
    summary = summarize(results).set_index("regime")
    assert summary.loc["without", "count"] == 2
    assert summary.loc["without", "mean"] == pytest.approx(-0.1)
    assert summary.loc["without", "mean_abs"] == pytest.approx(0.3)
    assert summary.loc["with", "count"] == 1
    assert summarize(results.iloc[3:]).empty


@pytest.mark.slow
def test_run_experiment_end_to_end() -> None:
    scale = ExperimentScale(n_train=80, n_val=40, epochs=1, batch_size=40, lambda1_grid=[1.0], lambda2_grid=[1.0])
    result = run_experiment(ExperimentName.INVARIANCE_LOSS_ABLATION, seeds=[0], scale=scale)
    assert result.total_tasks == len(InvarianceKind)
    assert list(result.results.columns) == RESULT_COLUMNS
    assert set(result.results["method"]) <= set(EXPERIMENT_METHODS)
    assert set(result.results["invariance"]) <= {kind.value for kind in InvarianceKind}
    assert not summarize(result.results).empty


def _mean_abs_bias(results: pd.DataFrame, method: str, **match: object) -> float:
    rows = results[(results["method"] == method) & (results["status"] == "ok")]
    for column, value in match.items():
        rows = rows[rows[column] == value]
    assert not rows.empty, (method, match)
    return float(rows["bias"].abs().mean())


@pytest.mark.slow
def test_desk_training_identifies_invariant_block() -> None:
    scale = ExperimentScale()
    data = simulate(d2_spec(), POLY1, n_train=scale.n_train, n_val=scale.n_val, seed=0)
    config = TrainConfig(
        epochs=scale.epochs,
        batch_size=scale.batch_size,
        lr=scale.lr,
        lambda1=10.0,
        lambda2=10.0,
    ).for_mixing(POLY1)
    model = train(data.train, config).model
    report = identifiability_report(model, data.val, lambda2=10.0)
    assert min(report.r2_w) > 0.95, report.r2_w
    assert report.min_sv_a > 0.1
    assert report.latent_min_eigenvalue > 1e-3


@pytest.mark.slow
def test_learned_instruments_beat_observed_instruments() -> None:
    scale = ExperimentScale(lambda1_grid=[10.0], lambda2_grid=[10.0])
    result = run_experiment(ExperimentName.MIXING_ABLATION, seeds=[0], scale=scale)
    assert result.failed_tasks == 0
    for mixing in sorted(set(result.results["mixing"])):
        assert _mean_abs_bias(result.results, "2sls_what", mixing=mixing) < 0.05, mixing
        assert _mean_abs_bias(result.results, "po_2sls_what", mixing=mixing) < 0.05, mixing
        assert _mean_abs_bias(result.results, "2sls_z", mixing=mixing) > 0.05, mixing


@pytest.mark.slow
def test_misspecified_dimensions_run_end_to_end() -> None:
    scale = ExperimentScale(n_train=400, n_val=200, epochs=2, batch_size=100, lambda1_grid=[1.0], lambda2_grid=[1.0])
    results = run_experiment(ExperimentName.MISSPEC_DIMS, seeds=[0], scale=scale).results
    assert sorted(set(results["p_hat"])) == [1, 2, 3, 4]
    # One learned instrument cannot identify two exposures.
    too_few = results[(results["p_hat"] == 1) & (results["method"] == "2sls_what")]
    assert not too_few.empty and (too_few["status"] != "ok").all()
    enough = results[(results["p_hat"] == 2) & (results["method"] == "2sls_what")]
    assert (enough["status"] == "ok").any()


@pytest.mark.slow
def test_independence_term_reduces_partialled_bias_under_mlp_mixing() -> None:
    scale = ExperimentScale(lambda1_grid=[10.0], lambda2_grid=[0.0, 10.0])
    results = run_experiment(ExperimentName.INDEPENDENCE_ABLATION, seeds=[0, 1], scale=scale).results
    summary = summarize(results)
    summary = summary[(summary["mixing"] == "mlp") & (summary["method"] == "po_2sls_what")]
    by_regime = summary.groupby("regime")["mean_abs"].mean()
    assert set(by_regime.index) == {"with", "without"}
    assert by_regime["without"] >= 2.0 * by_regime["with"]


@pytest.mark.slow
def test_results_do_not_depend_on_worker_count() -> None:
    scale = ExperimentScale(n_train=80, n_val=40, epochs=1, batch_size=40, lambda1_grid=[1.0], lambda2_grid=[1.0])
    serial = run_experiment(ExperimentName.THREE_ENV, seeds=[0, 1], scale=scale, jobs=1)
    parallel = run_experiment(ExperimentName.THREE_ENV, seeds=[0, 1], scale=scale, jobs=2)
    assert serial.results.to_csv(index=False) == parallel.results.to_csv(index=False)
