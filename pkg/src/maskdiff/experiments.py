"""Experiment drivers, configuration and result tables.

A config is a JSON document::

    {
      "experiment": "euler_scaling",
      "vocab": {"d": 3, "S": 3},
      "q0": {"kind": "dirichlet", "count": 5, "concentration": 1.0},
      "predictors": [{"kind": "exact"}, {"kind": "mixture", "lambda": 0.1}],
      "schedule": {"T": 2.0, "delta": 0.05, "kappa": [0.2, 0.1], "kind": "decaying"},
      "trials": 100000,
      "seed": 0,
      "out": "results/euler.csv"
    }

Each experiment returns a :class:`ResultTable` of ``(point, metric, value,
error)`` rows plus named assertions.  Everything random is derived from the
master seed, so the same (config, seed) reproduces every value bit-exactly.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .forward import (
    construct_q_gamma,
    ctmc_propagate,
    init_tv_closed_form,
    marginal,
    score_scale,
)
from .losses import QuadratureSpec, expected_rate_gap, integrated_score_entropy, prop2_identity_gap
from .predictors import ExactPredictor, Predictor, RhoCorruptedPredictor, predictor_from_spec
from .samplers import build_schedule, euler_exact_output, fhs_exact_output, fhs_sample_batch, histogram
from .state import DenseDistribution, Vocab, distribution_from_json, kl, load_distribution, tv


class ConfigError(ValueError):
    pass


class OverwriteError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration

Q0_KINDS = ("delta", "product", "dirichlet", "file", "inline")


@dataclass
class ExperimentConfig:
    experiment: str
    vocab: Vocab
    q0: dict
    predictors: list
    schedule: dict
    trials: int = 100_000
    seed: int = 0
    out: str | None = None
    instance: dict | None = None
    options: dict = field(default_factory=dict)
    base_dir: Path = field(default=Path("."), repr=False)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {"experiment", "vocab", "q0", "predictors", "schedule", "trials", "seed", "out",
                 "instance", "options"}
        extra = sorted(set(doc) - known)
        if extra:
            raise ConfigError(f"unknown config field(s) {extra}; valid fields: {sorted(known)}")
        name = doc.get("experiment")
        if name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {name!r}; valid names: {', '.join(sorted(EXPERIMENTS))}")
        try:
            v = doc["vocab"]
            vocab = Vocab(S=int(v["S"]), d=int(v["d"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"vocab: expected {{'d': int, 'S': int}} ({e})") from None
        q0 = dict(doc.get("q0", {"kind": "dirichlet"}))
        if q0.get("kind") not in Q0_KINDS:
            raise ConfigError(f"q0.kind must be one of {Q0_KINDS}, got {q0.get('kind')!r}")
        if int(q0.get("count", 1)) < 1:
            raise ConfigError("q0.count must be >= 1")
        preds = list(doc.get("predictors", [{"kind": "exact"}]))
        for k, p in enumerate(preds):
            if not isinstance(p, dict) or p.get("kind") not in ("exact", "rho", "mixture"):
                raise ConfigError(f"predictors[{k}].kind must be exact, rho or mixture")
            if p["kind"] == "mixture" and not 0 <= float(p.get("lambda", -1)) <= 1:
                raise ConfigError(f"predictors[{k}].lambda must lie in [0, 1]")
        sched = dict(doc.get("schedule", {}))
        kap = sched.get("kappa", [])
        sched["kappa"] = [float(k) for k in (kap if isinstance(kap, list) else [kap])]
        if any(not 0 < k < 1 for k in sched["kappa"]):
            raise ConfigError("schedule.kappa values must lie in (0, 1)")
        if sched.get("kind", "decaying") not in ("constant", "decaying"):
            raise ConfigError("schedule.kind must be constant or decaying")
        for key in ("T", "delta"):
            if key in sched and not float(sched[key]) >= 0:
                raise ConfigError(f"schedule.{key} must be non-negative")
        trials = int(doc.get("trials", 100_000))
        if trials < 1:
            raise ConfigError("trials must be >= 1")
        seed = int(doc.get("seed", 0))
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        return cls(experiment=name, vocab=vocab, q0=q0, predictors=preds, schedule=sched,
                   trials=trials, seed=seed, out=doc.get("out"), instance=doc.get("instance"),
                   options=dict(doc.get("options", {})), base_dir=Path(base_dir))

    def to_dict(self) -> dict:
        doc = {
            "experiment": self.experiment,
            "vocab": {"d": self.vocab.d, "S": self.vocab.S},
            "q0": self.q0,
            "predictors": self.predictors,
            "schedule": self.schedule,
            "trials": self.trials,
            "seed": self.seed,
            "out": self.out,
            "instance": self.instance,
            "options": self.options,
        }
        return doc

    def config_hash(self) -> str:
        doc = self.to_dict()
        doc.pop("out")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def rng(self, stream: int) -> np.random.Generator:
        """Independent generator for a named sub-stream of the master seed."""
        return np.random.default_rng(np.random.SeedSequence([self.seed, stream]))


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse a JSON config; parse errors carry ``path:line:col``."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        line = text.splitlines()[e.lineno - 1] if e.lineno - 1 < len(text.splitlines()) else ""
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}\n    {line}") from None
    doc = apply_overrides(doc, overrides or {})
    return ExperimentConfig.from_dict(doc, base_dir=path.parent)


def apply_overrides(doc: dict, overrides: dict) -> dict:
    doc = copy.deepcopy(doc)
    if overrides.get("seed") is not None:
        doc["seed"] = overrides["seed"]
    if overrides.get("trials") is not None:
        doc["trials"] = overrides["trials"]
    if overrides.get("out") is not None:
        doc["out"] = str(overrides["out"])
    if overrides.get("kappa") is not None:
        doc.setdefault("schedule", {})["kappa"] = list(overrides["kappa"])
    return doc


def build_q0_list(cfg: ExperimentConfig) -> list[DenseDistribution]:
    spec, vocab = cfg.q0, cfg.vocab
    kind = spec["kind"]
    if kind == "delta":
        return [DenseDistribution.delta(spec["tokens"], vocab)]
    if kind == "product":
        return [DenseDistribution.product(spec["factors"], vocab)]
    if kind == "inline":
        return [distribution_from_json({"d": vocab.d, "S": vocab.S, **spec["doc"]})]
    if kind == "file":
        p = Path(spec["path"])
        if not p.is_absolute():
            p = cfg.base_dir / p
        q = load_distribution(p)
        if q.vocab != vocab:
            raise ConfigError(f"{p}: distribution has {q.vocab}, config says {vocab}")
        return [q]
    from .state import random_distribution
    rng = cfg.rng(1)
    return [random_distribution(vocab, rng, mask_free=spec.get("mask_free", True),
                                concentration=float(spec.get("concentration", 1.0)),
                                sparsity=float(spec.get("sparsity", 0.0)))
            for _ in range(int(spec.get("count", 1)))]


# ---------------------------------------------------------------------------
# results

@dataclass
class Assertion:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}" + (f"  ({self.detail})" if self.detail else "")


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    assertions: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, point: str, metric: str, value, error=None) -> None:
        self.rows.append((point, metric, float(value), None if error is None else float(error)))

    def check(self, name: str, ok: bool, detail: str = "") -> None:
        self.assertions.append(Assertion(name, bool(ok), detail))

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def value(self, point: str, metric: str) -> float:
        for p, m, v, _ in self.rows:
            if p == point and m == metric:
                return v
        raise KeyError((point, metric))

    def column(self, metric: str) -> list[float]:
        return [v for _, m, v, _ in self.rows if m == metric]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "metric", "value", "error"])
        for p, m, v, e in self.rows:
            w.writerow([p, m, repr(v), "" if e is None else repr(e)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "metadata": self.metadata,
            "assertions": [{"name": a.name, "passed": a.passed, "detail": a.detail} for a in self.assertions],
        }

    def write(self, out, force: bool = False) -> tuple[Path, Path]:
        """Write ``out`` (CSV) and ``out`` with suffix ``.json`` (sidecar)."""
        out = Path(out)
        side = out.with_suffix(".json")
        if out.exists() and not force:
            old = None
            if side.exists():
                try:
                    old = json.loads(side.read_text()).get("metadata", {}).get("config_hash")
                except json.JSONDecodeError:
                    old = None
            if old != self.metadata.get("config_hash"):
                raise OverwriteError(
                    f"{out} was written by config {old!r}, not {self.metadata.get('config_hash')!r}; "
                    "pass force=True (--force) to overwrite"
                )
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(self.to_csv())
        side.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return out, side


def _pt(**kw) -> str:
    return ";".join(f"{k}={v}" for k, v in kw.items())


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


# ---------------------------------------------------------------------------
# Euler scaling

def worst_case_instance(d: int, S: int, anchor=None, epsilon: float = 0.01, T: float | None = None) -> dict:
    """Singleton worst case for Euler: target ``delta_a`` run forward for ``gamma``.

    ``gamma = epsilon^{1/4} / d`` and, by default, ``T = log(d / sqrt(epsilon))``.
    The sampler runs the exact reverse of ``delta_a`` over horizon ``T + gamma``
    and stops ``gamma`` early, so its reference law is ``q_gamma``.
    """
    vocab = Vocab(S, d)
    a = tuple(anchor) if anchor is not None else tuple(i % (S - 1) for i in range(d))
    gamma = epsilon**0.25 / d
    if T is None:
        T = math.log(d / math.sqrt(epsilon))
    return {"vocab": vocab, "anchor": a, "gamma": gamma, "T": T,
            "target": construct_q_gamma(a, gamma, vocab),
            "pred": ExactPredictor(DenseDistribution.delta(a, vocab))}


def coordinate_mask_mass(p: DenseDistribution, i: int) -> float:
    t = np.moveaxis(p.tensor(), i, 0)
    return float(t[p.vocab.mask_id].sum())


def euler_on_worst_case(inst: dict, kappa: float) -> dict:
    """Constant-step Euler on the worst-case instance; returns tv and ``p_M`` both ways."""
    from .samplers import p_mask_product

    T, gamma = inst["T"], inst["gamma"]
    sched = build_schedule(T + gamma, gamma, kappa, "constant")
    out = euler_exact_output(None, inst["pred"], sched)
    pm = [coordinate_mask_mass(out, i) for i in range(inst["vocab"].d)]
    return {
        "tv": tv(out, inst["target"]),
        "tv_q0": tv(out, DenseDistribution.delta(inst["anchor"], inst["vocab"])),
        "p_mask": pm,
        "p_mask_formula": p_mask_product(T, gamma, sched.grid),
        "n_steps": sched.n_steps,
        "out": out,
    }


def exp_euler_scaling(cfg: ExperimentConfig) -> ResultTable:
    """Euler tv versus step granularity kappa; worst-case p_M closed form and slope."""
    res = ResultTable()
    kappas = cfg.schedule.get("kappa") or [0.2, 0.1, 0.05, 0.025]
    if cfg.instance is not None:
        inst = worst_case_instance(cfg.vocab.d, cfg.vocab.S, cfg.instance.get("anchor"),
                             float(cfg.instance.get("epsilon", 0.01)), cfg.instance.get("T"))
        tvs = []
        worst = 0.0
        for kap in kappas:
            r = euler_on_worst_case(inst, kap)
            pt = _pt(kappa=kap)
            res.add(pt, "tv_q_delta", r["tv"])
            res.add(pt, "tv_q0", r["tv_q0"])
            res.add(pt, "p_mask", r["p_mask"][0])
            res.add(pt, "p_mask_formula", r["p_mask_formula"])
            res.add(pt, "n_steps", r["n_steps"])
            diff = max(abs(m - r["p_mask_formula"]) for m in r["p_mask"])
            worst = max(worst, diff)
            tvs.append(r["tv"])
        res.add("all", "gamma", inst["gamma"])
        res.add("all", "T", inst["T"])
        res.check("p_M matches product formula", worst <= 1e-10, f"max |diff| = {worst:.2e}")
        if len(kappas) >= 2:
            slope = loglog_slope(kappas, tvs)
            res.add("all", "loglog_slope", slope)
            res.check("tv slope in [0.8, 1.2]", 0.8 <= slope <= 1.2, f"slope = {slope:.3f}")
        return res

    T = float(cfg.schedule.get("T", 2.0))
    delta = float(cfg.schedule.get("delta", 0.01))
    kind = cfg.schedule.get("kind", "decaying")
    for j, q0 in enumerate(build_q0_list(cfg)):
        pred = ExactPredictor(q0)
        q_delta = marginal(q0, delta)
        tvs = []
        for kap in kappas:
            sched = build_schedule(T, delta, kap, kind)
            out = euler_exact_output(None, pred, sched)
            pt = _pt(q0=j, kappa=kap)
            tvs.append(tv(out, q_delta))
            res.add(pt, "tv_q_delta", tvs[-1])
            res.add(pt, "tv_q0", tv(out, q0))
            res.add(pt, "n_steps", sched.n_steps)
        res.add(_pt(q0=j), "floor_envelope", cfg.vocab.d * (delta + math.exp(-T)))
        if len(kappas) >= 2 and min(tvs) > 0:
            res.add(_pt(q0=j), "loglog_slope", loglog_slope(kappas, tvs))
    return res


# ---------------------------------------------------------------------------
# FHS exactness

def fhs_predictors(cfg: ExperimentConfig, q0: DenseDistribution) -> list[tuple[str, Predictor]]:
    return [(p["kind"] if p["kind"] != "mixture" else f"mixture{p['lambda']}", predictor_from_spec(p, q0))
            for p in cfg.predictors]


def rho_instance(d: int, S: int = 3, epsilon: float = 0.3, anchor=None, other=None) -> dict:
    vocab = Vocab(S, d)
    a = tuple(anchor) if anchor is not None else (0,) * d
    b = tuple(other) if other is not None else (1,) * d
    rho = -math.expm1(-epsilon / d)
    return {"vocab": vocab, "q0": DenseDistribution.delta(a, vocab),
            "pred": RhoCorruptedPredictor(a, b, rho, vocab), "rho": rho, "epsilon": epsilon}


def exp_fhs_exactness(cfg: ExperimentConfig) -> ResultTable:
    """First-hitting sampler output KL against the integrated score entropy."""
    res = ResultTable()
    if cfg.instance is not None:
        eps = float(cfg.instance.get("epsilon", 0.3))
        inst = rho_instance(cfg.vocab.d, cfg.vocab.S, eps, cfg.instance.get("anchor"), cfg.instance.get("other"))
        k = kl(inst["q0"], fhs_exact_output(inst["pred"], inst["vocab"]))
        lse = integrated_score_entropy(inst["q0"], inst["pred"])
        res.add("rho", "kl", k)
        res.add("rho", "integrated_se", lse)
        res.add("rho", "closed_form", -cfg.vocab.d * math.log1p(-inst["rho"]))
        res.check("rho instance: kl = epsilon", abs(k - eps) <= 1e-9, f"kl = {k!r}")
        res.check("rho instance: integrated SE = epsilon", abs(lse - eps) <= 1e-6, f"lse = {lse!r}")
        return res
    for j, q0 in enumerate(build_q0_list(cfg)):
        if q0.mask_mass() > 0:
            raise ValueError("fhs exactness needs a mask-free q0")
        for name, pred in fhs_predictors(cfg, q0):
            k = kl(q0, fhs_exact_output(pred, cfg.vocab))
            lse = integrated_score_entropy(q0, pred)
            pt = _pt(q0=j, pred=name)
            res.add(pt, "kl", k)
            res.add(pt, "integrated_se", lse)
            res.add(pt, "slack", lse - k)
            res.check(f"{pt}: kl <= integrated SE", k <= lse + 1e-6, f"kl={k:.3e}, lse={lse:.3e}")
            if name == "exact":
                res.check(f"{pt}: exact kl <= 1e-10", k <= 1e-10, f"kl={k:.2e}")
    return res


# ---------------------------------------------------------------------------
# path-wise TV decomposition

def _estimated_generator(pred: Predictor, T: float):
    """``s -> R_hat(s)``: unmasking rates ``score(x, i, a, T - s)`` on every state."""
    from .forward import Generator
    from .losses import _moves, _mu_on_moves

    vocab = pred.vocab
    mv = _moves(vocab)
    live = np.ones(vocab.n_states, bool)
    n = vocab.n_states

    def gen(s):
        u = T - s
        R = np.zeros((n, n))
        R[mv.src, mv.dst] = score_scale(u) * _mu_on_moves(pred, mv, u, live)
        R[np.arange(n), np.arange(n)] = -R.sum(axis=1)
        return Generator(R, time=s)

    return gen


def _geometric_grid(T: float, delta: float, n: int) -> np.ndarray:
    # uniform in log forward time: rates grow like 1/u near the stopping time
    g = T - np.geomspace(T, delta, n + 1)
    g[0], g[-1] = 0.0, T - delta
    return g


def path_tv_sides(q0: DenseDistribution, pred: Predictor, T: float, delta: float, init: str = "q_T",
               tol: float = 1e-7, lhs_tol: float = 1e-8, start: int = 64,
               max_substeps: int = 32768) -> dict:
    """Both sides of the path-wise TV bound for the estimated reverse chain.

    LHS: ``tv(p_{T-delta}, q_delta)`` with ``p`` propagated under the estimated
    generator from ``q_T`` (``init="q_T"``) or the all-mask state.  RHS: initial
    tv plus ``int_delta^T E_{q_u} sum |R_hat - R| du``.  Substeps (LHS) and
    quadrature nodes (RHS) double until they change by less than ``lhs_tol``
    and ``tol`` respectively.
    """
    vocab = q0.vocab
    if not T > delta > 0:
        raise ValueError("need T > delta > 0")
    qT = marginal(q0, T)
    p0 = qT if init == "q_T" else DenseDistribution.delta(vocab.all_mask(), vocab)
    init_tv = tv(p0, qT)
    target = marginal(q0, delta)
    gen = _estimated_generator(pred, T)

    n = start
    lhs = tv(ctmc_propagate(p0, gen, 0.0, T - delta, grid=_geometric_grid(T, delta, n)), target)
    lhs_change = math.inf
    while n < max_substeps:
        n *= 2
        new = tv(ctmc_propagate(p0, gen, 0.0, T - delta, grid=_geometric_grid(T, delta, n)), target)
        lhs_change, lhs = abs(new - lhs), new
        if lhs_change < lhs_tol:
            break

    # integrate in v = log u over [log delta, log T]
    lo, hi = math.log(delta), math.log(T)

    def gl(m):
        z, w = np.polynomial.legendre.leggauss(m)
        edges = np.linspace(lo, hi, 9)
        tot = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            h, c = 0.5 * (b - a), 0.5 * (b + a)
            for zi, wi in zip(z, w):
                v = c + h * zi
                tot += h * wi * math.exp(v) * expected_rate_gap(q0, pred, math.exp(v))
        return float(tot)

    m = 8
    integral = gl(m)
    rhs_change = math.inf
    while m < 256:
        m *= 2
        new = gl(m)
        rhs_change, integral = abs(new - integral), new
        if rhs_change < tol:
            break
    return {"lhs": lhs, "rhs": init_tv + integral, "init_tv": init_tv, "rate_integral": integral,
            "substeps": n, "lhs_change": lhs_change, "rhs_change": rhs_change,
            "init_tv_closed_form": init_tv_closed_form(q0, T)}


def exp_thm1_decomposition(cfg: ExperimentConfig) -> ResultTable:
    """Path-wise TV bound: propagated TV versus initial TV plus integrated rate gap."""
    res = ResultTable()
    T = float(cfg.schedule.get("T", 2.0))
    delta = float(cfg.schedule.get("delta", 0.05))
    init = cfg.options.get("init", "q_T")
    for j, q0 in enumerate(build_q0_list(cfg)):
        for name, pred in fhs_predictors(cfg, q0):
            r = path_tv_sides(q0, pred, T, delta, init)
            pt = _pt(q0=j, pred=name)
            for key in ("lhs", "rhs", "init_tv", "rate_integral", "substeps", "lhs_change", "rhs_change"):
                res.add(pt, key, r[key])
            res.add(pt, "slack", r["rhs"] - r["lhs"])
            res.check(f"{pt}: lhs <= rhs + 1e-6", r["lhs"] <= r["rhs"] + 1e-6,
                      f"lhs={r['lhs']:.6e}, rhs={r['rhs']:.6e}")
            res.check(f"{pt}: rhs stabilized", r["rhs_change"] < 1e-7, f"change={r['rhs_change']:.1e}")
            if init != "q_T":
                gap = abs(r["init_tv"] - r["init_tv_closed_form"])
                res.check(f"{pt}: initial tv closed form", gap <= 1e-12, f"|diff|={gap:.1e}")
    return res


# ---------------------------------------------------------------------------
# Beta marginals of the first-hitting times

def beta_moments(d: int, k: int) -> tuple[float, float]:
    """Mean and variance of ``Beta(d - k + 1, k)``."""
    a, b = d - k + 1, k
    return a / (a + b), a * b / ((a + b) ** 2 * (a + b + 1))


def exp_beta_marginals(cfg: ExperimentConfig) -> ResultTable:
    """Monte Carlo moments of the first-hitting alphas against Beta(d-k+1, k)."""
    res = ResultTable()
    if cfg.trials < 10_000:
        raise ConfigError("beta_marginals needs trials >= 10^4")
    d = cfg.vocab.d
    q0 = build_q0_list(cfg)[0]
    n = cfg.trials
    means = {}
    for s, (name, pred) in enumerate(fhs_predictors(cfg, q0)):
        _, alphas = fhs_sample_batch(pred, cfg.vocab, n, rng_seed=np.random.SeedSequence([cfg.seed, 100 + s]))
        for k in range(1, d + 1):
            col = alphas[:, k - 1]
            m, v = beta_moments(d, k)
            se = math.sqrt(v / n)
            emp = float(col.mean())
            pt = _pt(pred=name, k=k)
            res.add(pt, "mean", emp, se)
            res.add(pt, "var", float(col.var(ddof=1)))
            res.add(pt, "beta_mean", m)
            res.add(pt, "beta_var", v)
            z = (emp - m) / se
            res.add(pt, "z", z)
            res.check(f"{pt}: mean within 3 sigma", abs(z) <= 3.0, f"z={z:+.2f}")
            means.setdefault(k, []).append((name, emp, se))
    for k, rows in means.items():
        for (n1, m1, s1), (n2, m2, s2) in zip(rows, rows[1:]):
            z = (m1 - m2) / math.hypot(s1, s2)
            res.check(f"k={k}: {n1} vs {n2} means agree", abs(z) <= 3.0, f"z={z:+.2f}")
    return res


# ---------------------------------------------------------------------------
# score entropy / NELBO identity

def exp_prop2_identity(cfg: ExperimentConfig) -> ResultTable:
    """Integrated score entropy versus expected NELBO minus the conditional-entropy sum."""
    res = ResultTable()
    for j, q0 in enumerate(build_q0_list(cfg)):
        for name, pred in fhs_predictors(cfg, q0):
            r = prop2_identity_gap(q0, pred, QuadratureSpec())
            pt = _pt(q0=j, pred=name)
            for key in ("lse", "nelbo_mean", "entropy_sum", "gap"):
                res.add(pt, key, r[key])
            res.check(f"{pt}: |gap| <= 1e-5", abs(r["gap"]) <= 1e-5, f"gap={r['gap']:.2e}")
            if name == "exact":
                diff = abs(r["nelbo_mean"] - r["entropy_sum"])
                res.check(f"{pt}: nelbo = entropy sum", diff <= 1e-8, f"|diff|={diff:.1e}")
    return res


# ---------------------------------------------------------------------------
# Monte Carlo cross-check (sampler histograms vs exact output)

def exp_mc_crosscheck(cfg: ExperimentConfig) -> ResultTable:
    """Monte Carlo sampler histograms against exact sampler output laws."""
    from .samplers import euler_sample_batch

    res = ResultTable()
    q0 = build_q0_list(cfg)[0]
    T = float(cfg.schedule.get("T", 2.0))
    delta = float(cfg.schedule.get("delta", 0.05))
    kappa = (cfg.schedule.get("kappa") or [0.1])[0]
    sched = build_schedule(T, delta, kappa, cfg.schedule.get("kind", "decaying"))
    for s, (name, pred) in enumerate(fhs_predictors(cfg, q0)):
        ex = fhs_exact_output(pred, cfg.vocab)
        st, _ = fhs_sample_batch(pred, cfg.vocab, cfg.trials, np.random.SeedSequence([cfg.seed, 200 + s]))
        d1 = tv(ex, histogram(st, cfg.vocab))
        ee = euler_exact_output(None, pred, sched)
        se = euler_sample_batch(None, pred, sched, cfg.trials, np.random.SeedSequence([cfg.seed, 300 + s]))
        d2 = tv(ee, histogram(se, cfg.vocab))
        res.add(_pt(pred=name), "tv_fhs_mc", d1)
        res.add(_pt(pred=name), "tv_euler_mc", d2)
        res.check(f"{name}: fhs histogram tv <= 0.02", d1 <= 0.02, f"tv={d1:.4f}")
        res.check(f"{name}: euler histogram tv <= 0.02", d2 <= 0.02, f"tv={d2:.4f}")
    return res


EXPERIMENTS: dict[str, Callable[[ExperimentConfig], ResultTable]] = {
    "euler_scaling": exp_euler_scaling,
    "fhs_exactness": exp_fhs_exactness,
    "thm1_decomposition": exp_thm1_decomposition,
    "beta_marginals": exp_beta_marginals,
    "prop2_identity": exp_prop2_identity,
    "mc_crosscheck": exp_mc_crosscheck,
}


def run_config(cfg: ExperimentConfig) -> ResultTable:
    t0 = time.perf_counter()
    res = EXPERIMENTS[cfg.experiment](cfg)
    res.metadata = {
        "experiment": cfg.experiment,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "wall_time_s": time.perf_counter() - t0,
        "config": cfg.to_dict(),
    }
    return res


def run(cfg_path, overrides: dict | None = None, force: bool = False, echo=print) -> int:
    """Load, run, write CSV + JSON, print one line per assertion; 0 iff all pass."""
    cfg = load_config(cfg_path, overrides)
    res = run_config(cfg)
    out = cfg.out or str(Path(cfg_path).with_suffix("")) + ".results.csv"
    csv_path, side = res.write(out, force=force)
    for a in res.assertions:
        echo(a.line())
    echo(f"wrote {csv_path} and {side} ({len(res.rows)} rows, config {res.metadata['config_hash']})")
    return 0 if res.passed else 1
