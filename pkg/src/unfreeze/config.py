"""Run configuration files: INI-style ``key = value`` sections.

Layout::

    [run]          output directory
    [problem]      grid, operator, boundary kind, bracket mode
    [reaction]     model family, its parameters, growth metadata
    [term.N]       extra reaction terms (N = 1, 2, ...)
    [solver]       tolerances, iteration caps, seed
    [experiment]   optional campaign settings

Only ``[problem]`` is required. Parsing is two-phase: syntax and type errors
raise :class:`ParseError` with the offending line, then every invariant is
checked and all violations are reported together in one
:class:`ValidationError`. :func:`dump_config` writes a file that parses back
to an equal :class:`RunConfig`.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ParseError, ValidationError
from .experiments import ExperimentSpec
from .problems import FAMILY_PARAMS, ProblemConfig, ReactionConfig, SolverConfig, build_reaction
from .reactions import CHAIN_PARAMS, Term, check_parameter_chain

SECTIONS = ("run", "problem", "reaction", "solver", "experiment")
# Config keys that differ from field names ("lambda" is a Python keyword).
KEY_ALIASES = {"lam": "lambda"}
FIELD_NAMES = {v: k for k, v in KEY_ALIASES.items()}
META_KEYS = ("monotone_decreasing", "singular_limit", "growth_C", "growth_gamma")


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    experiment: ExperimentSpec | None = None
    output_dir: str = "out"
    warnings: list[str] = field(default_factory=list, compare=False)

    def validate(self) -> list[str]:
        problems = self.problem.validate() + self.solver.validate()
        if self.experiment is not None:
            problems += self.experiment.validate()
        return problems


# -- value conversion -------------------------------------------------------------------


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _number_or_text(text: str):
    try:
        return float(text)
    except ValueError:
        return text


# Converters keyed by the annotation strings of the dataclass fields.
CONVERTERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _bool,
    "float | None": float,
    "str | None": str,
    "bool | None": _bool,
    "tuple[float, ...]": _floats,
    "tuple[int, ...]": _ints,
}


def _converters(cls, skip=()) -> dict:
    return {f.name: CONVERTERS[f.type] for f in fields(cls) if f.name not in skip}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(_format(v) for v in value)
    return str(value)


# -- line bookkeeping ---------------------------------------------------------------------

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s\[][^=:]*?)\s*[=:]")


def _line_index(text: str) -> dict:
    """(section, key) -> 1-based line number; (section, None) for headers."""
    index, section = {}, None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            index[(section, None)] = lineno
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            index.setdefault((section, m.group(1).strip()), lineno)
    return index


class _Reader:
    def __init__(self, parser, lines):
        self.parser = parser
        self.lines = lines
        self.problems: list[str] = []

    def section(self, name: str, convert: dict, extra=None) -> dict:
        """Converted known keys of ``name``; unknown keys go to ``extra`` or problems."""
        out = {}
        if not self.parser.has_section(name):
            return out
        for key, raw in self.parser.items(name):
            if key in convert:
                out[key] = self.convert(name, key, raw, convert[key])
            elif extra is not None:
                extra[key] = raw
            else:
                self.problems.append(f"[{name}] unknown key {key!r}")
        return out

    def convert(self, section, key, raw, fn):
        try:
            return fn(raw.strip())
        except (ValueError, TypeError) as exc:
            raise ParseError(f"[{section}] {key}: {exc}", self.lines.get((section, key))) from None


# -- parse / dump ------------------------------------------------------------------------


def parse_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("content before the first [section] header", exc.lineno) from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ParseError(exc.message.split(":", 1)[-1].strip(), exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0]
        raise ParseError(f"expected 'key = value', got {text.splitlines()[lineno - 1].strip()!r}", lineno) from None

    lines = _line_index(text)
    rd = _Reader(parser, lines)
    problems = rd.problems
    terms_found = []
    for name in parser.sections():
        if name.startswith("term."):
            suffix = name[len("term."):]
            if not suffix.isdigit():
                problems.append(f"term sections are named [term.N] with integer N, got [{name}]")
            else:
                terms_found.append((int(suffix), name))
        elif name not in SECTIONS:
            problems.append(f"unknown section [{name}]")
    if not parser.has_section("problem"):
        problems.append("missing required section [problem]")

    run = rd.section("run", {"output": str})
    prob_conv = {KEY_ALIASES.get(k, k): fn for k, fn in _converters(ProblemConfig, skip=("reaction",)).items()}
    prob = {FIELD_NAMES.get(k, k): v for k, v in rd.section("problem", prob_conv).items()}

    extra: dict = {}
    reaction_keys = {"family": str, **{f.name: CONVERTERS[f.type] for f in fields(ReactionConfig) if f.name in META_KEYS}}
    reac = rd.section("reaction", reaction_keys, extra=extra)
    params = {}
    family = reac.get("family", "none")
    allowed = FAMILY_PARAMS.get(family, {})
    for key, raw in extra.items():
        if key not in allowed:
            problems.append(f"[reaction] unknown key {key!r} for family {family!r}")
            continue
        params[key] = rd.convert("reaction", key, raw, float if key in CHAIN_PARAMS or key == "eta" else _number_or_text)

    terms = []
    term_conv = _converters(Term)
    for _, name in sorted(terms_found):
        terms.append(Term(**rd.section(name, term_conv)))

    solver = rd.section("solver", _converters(SolverConfig))
    experiment = None
    if parser.has_section("experiment"):
        experiment = ExperimentSpec(**rd.section("experiment", _converters(ExperimentSpec)))

    if "extent" in prob:
        prob["extent"] = tuple(prob["extent"])
    reaction = ReactionConfig(family=family, params=params, terms=tuple(terms),
                              **{k: reac[k] for k in META_KEYS if k in reac})
    cfg = RunConfig(
        problem=ProblemConfig(reaction=reaction, **prob),
        solver=SolverConfig(**solver),
        experiment=experiment,
        output_dir=run.get("output", "out"),
    )
    if problems:
        raise ValidationError(problems)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    problems = cfg.validate()
    if problems:
        raise ValidationError(problems)
    p = cfg.problem
    if p.reaction.family == "system" and p.arity == "system":
        spec = build_reaction(p)
        if not check_parameter_chain(spec, p.p, p.q):
            cfg.warnings.append("exponents violate the parameter chain; convergence is not guaranteed")


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ParseError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ParseError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text)


def _section_lines(name: str, items) -> list[str]:
    out = [f"[{name}]"]
    out += [f"{k} = {_format(v)}" for k, v in items if v is not None]
    return out + [""]


def dump_config(cfg: RunConfig) -> str:
    p = cfg.problem
    chunks = _section_lines("run", [("output", cfg.output_dir)])
    chunks += _section_lines(
        "problem", [(KEY_ALIASES.get(f.name, f.name), getattr(p, f.name)) for f in fields(p) if f.name != "reaction"]
    )
    rc = p.reaction
    items = [("family", rc.family)] + sorted(rc.params.items()) + [(k, getattr(rc, k)) for k in META_KEYS]
    chunks += _section_lines("reaction", items)
    for i, term in enumerate(rc.terms, start=1):
        chunks += _section_lines(f"term.{i}", [(f.name, getattr(term, f.name)) for f in fields(term)])
    chunks += _section_lines("solver", [(f.name, getattr(cfg.solver, f.name)) for f in fields(cfg.solver)])
    if cfg.experiment is not None:
        e = cfg.experiment
        chunks += _section_lines("experiment", [(f.name, getattr(e, f.name)) for f in fields(e)])
    return "\n".join(chunks)


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))
