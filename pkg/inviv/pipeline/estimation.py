"""Defines the named effect-estimation methods compared in the experiments."""

import enum
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from inviv import estimators as est, nn
from inviv.errors import ConfigurationError, ContractError, NumericalError
from inviv.numerics import Matrix
from inviv.schemas import EstimateReport
from inviv.simgen import PooledData

logger = logging.getLogger(__name__)

STATUS_OK = "ok"


class Requirement(enum.Flag):
    NONE = 0
    MODEL = enum.auto()
    ORACLE = enum.auto()
    ENVS = enum.auto()


@dataclass(frozen=True)
class EstimationInputs:
    data: PooledData
    theta_true: Matrix | None
    w_hat: Matrix | None = None
    v_hat: Matrix | None = None
    partial_z: bool = True


@dataclass(frozen=True)
class Method:
    name: str
    label: str
    requires: Requirement
    run: Callable[[EstimationInputs], EstimateReport]


def _po_k(inputs: EstimationInputs, name: str, egger: bool) -> EstimateReport:
    data = inputs.data
    d, y = est.po_env_indicator(data.env, data.d, data.y)
    (z,) = est.po_env_indicator(data.env, data.z) if inputs.partial_z else (data.z,)
    if egger:
        return est.mr_egger(z, d, y, inputs.theta_true, method=name)
    return est.tsls(z, d, y, inputs.theta_true, method=name)


def _what(inputs: EstimationInputs) -> Matrix:
    assert inputs.w_hat is not None
    return inputs.w_hat


def _vhat(inputs: EstimationInputs) -> Matrix:
    assert inputs.v_hat is not None
    return inputs.v_hat


def _oracle(inputs: EstimationInputs, name: str) -> Matrix:
    value = getattr(inputs.data, name)
    assert value is not None
    return value


METHODS: dict[str, Method] = {
    m.name: m
    for m in (
        Method(
            "2sls_what",
            "2SLS(Ŵ)",
            Requirement.MODEL,
            lambda x: est.tsls(_what(x), x.data.d, x.data.y, x.theta_true, method="2sls_what"),
        ),
        Method(
            "po_2sls_what",
            "PO(V̂)-2SLS(Ŵ)",
            Requirement.MODEL,
            lambda x: est.po_tsls(_what(x), _vhat(x), x.data.d, x.data.y, x.theta_true, method="po_2sls_what"),
        ),
        Method(
            "2sls_z",
            "2SLS(Z)",
            Requirement.NONE,
            lambda x: est.tsls(x.data.z, x.data.d, x.data.y, x.theta_true, method="2sls_z"),
        ),
        Method(
            "egger_z",
            "Egger(Z)",
            Requirement.NONE,
            lambda x: est.mr_egger(x.data.z, x.data.d, x.data.y, x.theta_true, method="egger_z"),
        ),
        Method("po_k_2sls_z", "PO(K)-2SLS(Z)", Requirement.ENVS, lambda x: _po_k(x, "po_k_2sls_z", egger=False)),
        Method("po_k_egger_z", "PO(K)-Egger(Z)", Requirement.ENVS, lambda x: _po_k(x, "po_k_egger_z", egger=True)),
        Method(
            "2sls_w_oracle",
            "2SLS(W)",
            Requirement.ORACLE,
            lambda x: est.tsls(_oracle(x, "w"), x.data.d, x.data.y, x.theta_true, method="2sls_w_oracle"),
        ),
        Method(
            "po_2sls_wv_oracle",
            "PO(V)-2SLS(W)",
            Requirement.ORACLE,
            lambda x: est.po_tsls(
                _oracle(x, "w"), _oracle(x, "v"), x.data.d, x.data.y, x.theta_true, method="po_2sls_wv_oracle"
            ),
        ),
    )
}

EXPERIMENT_METHODS = ("2sls_what", "po_2sls_what", "2sls_z", "egger_z", "po_k_2sls_z", "po_k_egger_z")


@dataclass(frozen=True)
class MethodOutcome:
    method: str
    label: str
    report: EstimateReport | None
    status: str = STATUS_OK

    @property
    def ok(self) -> bool:
        return self.report is not None


def default_methods(has_model: bool, has_oracle: bool, num_envs: int) -> list[str]:
    """Every registered method whose inputs are available, in registry order."""
    available = Requirement.NONE
    if has_model:
        available |= Requirement.MODEL
    if has_oracle:
        available |= Requirement.ORACLE
    if num_envs >= 2:
        available |= Requirement.ENVS
    return [name for name, m in METHODS.items() if m.requires & available == m.requires]


def parse_methods(text: str) -> list[str]:
    names = [name.strip() for name in text.split(",") if name.strip()]
    unknown = [name for name in names if name not in METHODS]
    if unknown or not names:
        raise ConfigurationError(f"Unknown methods {unknown}; choose from {', '.join(METHODS)}")
    return names


def estimate_methods(
    data: PooledData,
    methods: Sequence[str],
    theta_true: Matrix | None = None,
    model: nn.AutoencoderModel | None = None,
    partial_z: bool = True,
) -> list[MethodOutcome]:
    """Runs each named method on the pooled data.

    Rank-guard and other numerical failures, and methods that do not apply to the data (too few
    instruments for Egger, one environment for PO(K)), are reported as an outcome with the error class
    as status; the remaining methods still run.

    Args:
        data: Pooled observations, with oracle latents for the oracle methods.
        methods: Method names from ``METHODS``.
        theta_true: True effect, used for the bias.
        model: Trained autoencoder, required by the Ŵ / V̂ methods.
        partial_z: Whether PO(K) also partials the environment out of Z.

    Returns:
        One outcome per requested method, in request order.

    Raises:
        ConfigurationError: If a method is unknown or needs a model that was not given.
        ContractError: If an oracle method is requested without oracle columns.
    """
    for name in methods:
        if name not in METHODS:
            raise ConfigurationError(f"Unknown method {name!r}; choose from {', '.join(METHODS)}")
        requires = METHODS[name].requires
        if Requirement.MODEL in requires and model is None:
            raise ConfigurationError(f"Method {name} needs a trained model")
        if Requirement.ORACLE in requires and not data.has_oracle:
            raise ContractError(f"Method {name} needs the oracle W and V columns")

    w_hat = v_hat = None
    if model is not None:
        w_hat, v_hat = nn.encode(model, data.z)
    inputs = EstimationInputs(data=data, theta_true=theta_true, w_hat=w_hat, v_hat=v_hat, partial_z=partial_z)

    outcomes = []
    for name in methods:
        method = METHODS[name]
        try:
            report = method.run(inputs)
        except (NumericalError, ConfigurationError) as e:
            logger.warning("Method %s failed: %s", name, e)
            outcomes.append(MethodOutcome(method=name, label=method.label, report=None, status=type(e).__name__))
        else:
            outcomes.append(MethodOutcome(method=name, label=method.label, report=report))
    return outcomes


def outcomes_frame(outcomes: Sequence[MethodOutcome], num_coords: int) -> pd.DataFrame:
    """One row per method and exposure coordinate; failed methods get NaN estimates."""
    rows = []
    for outcome in outcomes:
        report = outcome.report
        for coord in range(num_coords):
            if report is None:
                theta_hat = bias = se = min_sv = math.nan
            else:
                theta_hat, se = report.theta_hat[coord], report.se[coord]
                bias = math.nan if report.bias is None else report.bias[coord]
                min_sv = report.min_sv_first_stage
            rows.append(
                {
                    "method": outcome.method,
                    "label": outcome.label,
                    "coord": coord,
                    "theta_hat": theta_hat,
                    "bias": bias,
                    "se": se,
                    "min_sv_firststage": min_sv,
                    "status": outcome.status,
                }
            )
    return pd.DataFrame(rows)


def theta_or_none(theta: Sequence[float] | None) -> Matrix | None:
    if theta is None or len(theta) == 0:
        return None
    return np.asarray(theta, dtype=np.float64).reshape(-1, 1)
