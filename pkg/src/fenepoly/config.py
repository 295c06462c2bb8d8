"""Run configuration: YAML document <-> validated, immutable Config."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional, Tuple, Union

import yaml

from .model_core import (ChainParams, Isentropic, LTWarning, ModelParams, Tait, lt_condition_holds,
                         validate_model_values)


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 1):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(ValueError):
    """One or more violated admissibility rules; ``errors`` lists (field, rule) pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        self.field, self.rule = self.errors[0]
        super().__init__("; ".join(f"{f}: {r}" for f, r in self.errors))


@dataclass(frozen=True)
class TaitSection:
    A0: float = 1.0
    A1: float = 0.0
    rho_ref: float = 1.0


@dataclass(frozen=True)
class ModelSection:
    gamma: float = 2.0
    c_p: float = 1.0
    mu_s: float = 1.0
    mu_b: float = 0.0
    k: float = 1.0
    z: float = 0.1
    eps: float = 0.1
    # "lambda" in the document
    lam: float = 0.5
    eos: str = "isentropic"
    tait: TaitSection = TaitSection()


@dataclass(frozen=True)
class ChainSection:
    K: int = 1
    d: int = 2
    b: Tuple[float, ...] = (4.0,)
    rouse: Union[str, Tuple[Tuple[float, ...], ...]] = "linear-chain"


@dataclass(frozen=True)
class RegularizationSection:
    kappa: float = 0.01
    alpha: float = 0.01
    L: float = 5.0
    delta: float = 0.0
    C0_LT: float = 1.0


@dataclass(frozen=True)
class GridSection:
    nx: int = 8
    ny: int = 8
    lx: float = 1.0
    ly: float = 1.0
    bc: str = "periodic"
    nq_r: int = 16
    nq_theta: int = 16


@dataclass(frozen=True)
class TimeSection:
    T: float = 1.0
    N: int = 100
    m_sub: int = 4
    picard_max: int = 50
    picard_tol: float = 1e-10
    picard_damping: float = 1.0

    @property
    def dt(self) -> float:
        return self.T / self.N


@dataclass(frozen=True)
class PsiInit:
    """ψ̂₀ = 1 + amplitude·cos(2π(kx x/lx + ky y/ly))·g(q); g = q_x q_y ("xy") or (q_x² − q_y²)/2 ("xx-yy")."""
    kind: str = "equilibrium"
    amplitude: float = 0.0
    kx: int = 1
    ky: int = 0
    q_mode: str = "xy"


@dataclass(frozen=True)
class InitSection:
    # a number or an nx-by-ny table of values
    rho0: Union[float, Tuple[Tuple[float, ...], ...]] = 1.0
    u0: Tuple[float, float] = (0.0, 0.0)
    psi0: PsiInit = PsiInit()


@dataclass(frozen=True)
class ForcingSection:
    kind: str = "none"                   # none | const | lid | table
    value: Tuple[float, float] = (0.0, 0.0)
    amplitude: float = 0.0
    width: float = 0.15
    table: Tuple[Tuple[Tuple[float, float], ...], ...] = ()


@dataclass(frozen=True)
class OutputSection:
    every: int = 0
    prefix: str = "run"
    dump_fields: bool = False
    pass_threshold: float = 0.99


@dataclass(frozen=True)
class Config:
    model: ModelSection = ModelSection()
    chain: ChainSection = ChainSection()
    regularization: RegularizationSection = RegularizationSection()
    grid: GridSection = GridSection()
    time: TimeSection = TimeSection()
    init: InitSection = InitSection()
    forcing: ForcingSection = ForcingSection()
    output: OutputSection = OutputSection()

    # derived objects -------------------------------------------------
    def chain_params(self) -> ChainParams:
        rouse = () if self.chain.rouse == "linear-chain" else self.chain.rouse
        return ChainParams(K=self.chain.K, d=self.chain.d, b=self.chain.b, rouse=rouse)

    def model_params(self) -> ModelParams:
        m, r = self.model, self.regularization
        eos = Tait(m.tait.A0, m.tait.A1, m.tait.rho_ref) if m.eos == "tait" else Isentropic()
        return ModelParams(c_p=m.c_p, gamma=m.gamma, kappa=r.kappa, alpha=r.alpha, L_cut=r.L,
                           delta=r.delta, dt=self.time.dt, eps=m.eps, lam=m.lam, k_temp=m.k,
                           z_int=m.z, mu_s=m.mu_s, mu_b=m.mu_b, eos=eos)


_SECTIONS = {f.name: f.type for f in fields(Config)}
_ALIASES = {("model", "lambda"): "lam"}
_REV_ALIASES = {(s, v): k for (s, k), v in _ALIASES.items()}


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


def _section(cls, name: str, data: Any, errors: list):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        errors.append((name, "must be a mapping"))
        return cls()
    names = {f.name: f for f in fields(cls)}
    kw = {}
    for key, val in data.items():
        attr = _ALIASES.get((name, key), key)
        if attr not in names:
            errors.append((f"{name}.{key}", "unknown key"))
            continue
        default = getattr(cls(), attr)
        if attr == "psi0" and isinstance(val, str):
            kw[attr] = PsiInit(kind=val)
            continue
        if hasattr(default, "__dataclass_fields__"):
            kw[attr] = _section(type(default), f"{name}.{key}", val, errors)
            continue
        val = _tupleize(val)
        if isinstance(default, bool):
            if not isinstance(val, bool):
                errors.append((f"{name}.{key}", "must be true or false"))
                continue
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(val, bool) or not isinstance(val, int):
                errors.append((f"{name}.{key}", "must be an integer"))
                continue
        elif isinstance(default, float):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                if not (attr == "rho0" and isinstance(val, tuple)):
                    errors.append((f"{name}.{key}", "must be a number"))
                    continue
            else:
                val = float(val)
        kw[attr] = val
    return cls(**kw)


def _validate(cfg: Config) -> list:
    errs = []
    m, c, r, g, t = cfg.model, cfg.chain, cfg.regularization, cfg.grid, cfg.time
    probe = ModelParams.__new__(ModelParams)
    for k, v in dict(c_p=m.c_p, gamma=m.gamma, kappa=r.kappa, alpha=r.alpha, L_cut=r.L, delta=r.delta,
                     dt=t.T / t.N if t.N > 0 else float("nan"), eps=m.eps, lam=m.lam, k_temp=m.k,
                     z_int=m.z, mu_s=m.mu_s, mu_b=m.mu_b).items():
        object.__setattr__(probe, k, v)
    errs += validate_model_values(probe)
    if m.eos not in ("isentropic", "tait"):
        errs.append(("eos", "must be 'isentropic' or 'tait'"))
    elif m.eos == "tait" and not (m.tait.A0 > 0 and m.tait.rho_ref > 0):
        errs.append(("tait", "requires A0 > 0 and rho_ref > 0"))
    if c.K < 1:
        errs.append(("K", "requires K ≥ 1"))
    if c.d != 2:
        errs.append(("d", "only d = 2 is supported"))
    b = c.b if isinstance(c.b, tuple) else (c.b,)
    if any(not isinstance(x, (int, float)) or not x > 2 for x in b):
        errs.append(("b", "requires b_i > 2"))
    elif len(b) not in (1, c.K):
        errs.append(("b", "need one b_i per spring"))
    if c.rouse != "linear-chain":
        try:
            cfg.chain_params()
        except ValueError as exc:
            errs.append(("rouse", str(exc)))
    if not (isinstance(r.C0_LT, float) and r.C0_LT > 0):
        errs.append(("C0_LT", "requires C₀ > 0"))
    if g.nx < 4 or g.ny < 4:
        errs.append(("grid", "requires nx, ny ≥ 4"))
    if not (g.lx > 0 and g.ly > 0):
        errs.append(("grid", "requires lx, ly > 0"))
    if g.bc.lower() not in ("periodic", "noslip", "noslip-neumann", "noslipneumann"):
        errs.append(("bc", "must be 'periodic' or 'noslip'"))
    if g.nq_r < 4:
        errs.append(("nq_r", "requires nq_r ≥ 4"))
    if g.nq_theta < 8 or g.nq_theta % 2:
        errs.append(("nq_theta", "requires an even nq_theta ≥ 8"))
    if not t.T > 0:
        errs.append(("T", "requires T > 0"))
    if t.N < 1:
        errs.append(("N", "requires N ≥ 1"))
    if t.m_sub < 1:
        errs.append(("m_sub", "requires m_sub ≥ 1"))
    if t.picard_max < 1:
        errs.append(("picard_max", "requires picard_max ≥ 1"))
    if not t.picard_tol > 0:
        errs.append(("picard_tol", "requires picard_tol > 0"))
    if not 0 < t.picard_damping <= 1:
        errs.append(("picard_damping", "requires damping ∈ (0, 1]"))
    ini = cfg.init
    if isinstance(ini.rho0, tuple):
        if len(ini.rho0) != g.nx or any(len(row) != g.ny for row in ini.rho0):
            errs.append(("rho0", "table must be nx by ny"))
        elif any(v < 0 for row in ini.rho0 for v in row):
            errs.append(("rho0", "requires ρ₀ ≥ 0"))
    elif not ini.rho0 >= 0:
        errs.append(("rho0", "requires ρ₀ ≥ 0"))
    if len(ini.u0) != 2:
        errs.append(("u0", "must be a pair [ux, uy]"))
    p0 = ini.psi0
    if p0.kind not in ("equilibrium", "perturbation"):
        errs.append(("psi0", "must be 'equilibrium' or a perturbation"))
    elif p0.kind == "perturbation":
        if p0.q_mode not in ("xy", "xx-yy"):
            errs.append(("psi0.q_mode", "must be 'xy' or 'xx-yy'"))
        else:
            # max |g| on the ball |q|² < b is b/2 for both modes
            bmax = max(b) if b else 4.0
            if abs(p0.amplitude) * bmax / 2.0 > 1.0:
                errs.append(("psi0.amplitude", "requires ψ̂₀ ≥ 0 (|amplitude|·b/2 ≤ 1)"))
    f = cfg.forcing
    if f.kind not in ("none", "const", "lid", "table"):
        errs.append(("forcing.kind", "must be none, const, lid or table"))
    if f.kind == "table" and (len(f.table) != g.nx or any(len(row) != g.ny for row in f.table)):
        errs.append(("forcing.table", "table must be nx by ny pairs"))
    if cfg.output.every < 0:
        errs.append(("output.every", "requires every ≥ 0"))
    if not 0 <= cfg.output.pass_threshold <= 1:
        errs.append(("output.pass_threshold", "must lie in [0, 1]"))
    return errs


def parse_config(text: str, warn: bool = True) -> Config:
    """Parse and validate a YAML document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None) or getattr(exc, "context_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ParseError(getattr(exc, "problem", None) or str(exc), line) from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ParseError("top level must be a mapping", 1)
    errors: list = []
    kw = {}
    for key, val in doc.items():
        if key not in _SECTIONS:
            errors.append((str(key), "unknown section"))
            continue
        kw[key] = _section(type(getattr(Config(), key)), key, val, errors)
    if errors:
        raise ValidationError(errors)
    cfg = Config(**kw)
    if isinstance(cfg.chain.b, (int, float)):
        cfg = _replace(cfg, "chain", b=(float(cfg.chain.b),))
    else:
        cfg = _replace(cfg, "chain", b=tuple(float(x) for x in cfg.chain.b))
    errors = _validate(cfg)
    if errors:
        raise ValidationError(errors)
    if warn and not lt_condition_holds(cfg.time.dt, cfg.regularization.L, cfg.regularization.C0_LT):
        L = cfg.regularization.L
        warnings.warn(f"Δt·L·log L = {cfg.time.dt * L * math.log(L):.4g} exceeds C0 = "
                      f"{cfg.regularization.C0_LT:g}", LTWarning, stacklevel=2)
    return cfg


def _replace(cfg: Config, section: str, **changes) -> Config:
    from dataclasses import replace
    return replace(cfg, **{section: replace(getattr(cfg, section), **changes)})


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def config_to_dict(cfg: Config) -> dict:
    out = {}
    for sec in fields(cfg):
        d = {}
        for k, v in asdict(getattr(cfg, sec.name)).items():
            key = _REV_ALIASES.get((sec.name, k), k)
            d[key] = {kk: _plain(vv) for kk, vv in v.items()} if isinstance(v, dict) else _plain(v)
        out[sec.name] = d
    return out


def serialize_config(cfg: Config) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, allow_unicode=True)


def load_config(path) -> Config:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
