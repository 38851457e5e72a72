"""
JSON instance files.

Layout (UTF-8, strict: unknown fields are rejected):

    {
      "name": "...", "num_states": S, "num_actions": A, "gamma": 0.9,
      "mu": [...], "rewards": [[[...]]],
      "uncertainty": {"variant": "...", ...variant payload...},
      "expected": [{"quantity": "...", "value": 0.0, "tolerance": 1e-6, "provenance": "..."}],
      "state_labels": [...], "policies": {"name": [[...]]}, "provenance": "..."
    }

The "parametric" variant carries {"parameters": [{"name", "low", "high"}],
"kernel_template": [S][A][S] numbers or affine expressions such as
"1 - p" or "0.5 + 0.25*xi", "grid_resolution": 101}.

Floats are written with repr precision, so dump -> parse reproduces every
number bit for bit.
"""
import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from .errors import InstanceFormatError, InvalidInstanceError
from .instance_library import ExpectedValue, NamedInstance
from .mdp_core import MdpInstance, Policy, TransitionKernel
from .param_sets import DEFAULT_GRID_RESOLUTION, AffineParamSet, HullParamSet, ParamSet, Parameter
from .uncertainty_models import (
    CoeffFactor,
    ExplicitFinite,
    FactorModel,
    Partitioned,
    SaCoeffFactor,
    SaRectangular,
    SRectangular,
    UncertaintySet,
)

logger = logging.getLogger(__name__)


TOP_LEVEL_REQUIRED = ("name", "num_states", "num_actions", "gamma", "mu", "rewards", "uncertainty")
TOP_LEVEL_OPTIONAL = ("expected", "state_labels", "policies", "provenance")

PAYLOAD_FIELDS = {
    "explicit_finite": ("kernels",),
    "s_rectangular": ("per_state",),
    "sa_rectangular": ("per_state_action",),
    "factor_model": ("coefficients", "factor_sets"),
    "partitioned": ("first_states", "second_states", "s_part", "factor_part"),
    "coeff_factor": ("factor_sets", "coeff_sets"),
    "sa_coeff_factor": ("factor_sets", "coeff_sets"),
    "parametric": ("parameters", "kernel_template"),
}
PAYLOAD_OPTIONAL = {"parametric": ("grid_resolution",)}

QUANTITY_KINDS = {
    "max_min_value": {"start"},
    "max_min_policy": {"start", "state", "action"},
    "worst_case_value": {"start", "policy"},
    "worst_case_param": {"start", "policy", "param"},
    "robust_value": {"operator", "policy", "start"},
    "robust_optimal_value": {"start"},
    "robust_optimal_policy": {"state", "action"},
    "s_rectangular": set(),
    "sa_rectangular": set(),
    "ssp_holds": {"mode", "samples", "seed"},
    "vertex_count": set(),
}
QUANTITY_DEFAULTS = {"start": "mu", "samples": "1000", "seed": "0"}

_QUANTITY = re.compile(r"^\s*([a-z_]+)\s*\((.*)\)\s*$")
_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_][A-Za-z0-9_]*)|(.))")


# ---------------------------------------------------------------------------
# Expected-quantity names
# ---------------------------------------------------------------------------

def parse_quantity(text: str) -> Tuple[str, Dict[str, str]]:
    """
    Split ``kind(key=value,...)`` into the kind and its arguments.

    Missing optional keys (start, samples, seed) take their defaults.

    Raises:
        InstanceFormatError: Unknown kind, unknown or missing keys

    Examples:
        >>> parse_quantity("max_min_value(start=a)")
        ('max_min_value', {'start': 'a'})
    """
    match = _QUANTITY.match(text)
    if not match:
        raise InstanceFormatError(f"quantity {text!r} is not of the form kind(key=value,...)")
    kind, body = match.groups()
    if kind not in QUANTITY_KINDS:
        raise InstanceFormatError(f"unknown quantity kind {kind!r}; choose from {sorted(QUANTITY_KINDS)}")

    arguments: Dict[str, str] = {}
    for item in filter(None, (part.strip() for part in body.split(","))):
        key, sep, value = item.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise InstanceFormatError(f"argument {item!r} of {text!r} is not key=value")
        if key not in QUANTITY_KINDS[kind]:
            raise InstanceFormatError(f"{kind} takes {sorted(QUANTITY_KINDS[kind])}, got {key!r}")
        arguments[key] = value

    for key in QUANTITY_KINDS[kind] - arguments.keys():
        if key not in QUANTITY_DEFAULTS:
            raise InstanceFormatError(f"{text!r} is missing {key!r}")
        arguments[key] = QUANTITY_DEFAULTS[key]
    return kind, arguments


# ---------------------------------------------------------------------------
# Affine expressions
# ---------------------------------------------------------------------------

class _Affine:
    """const + sum coeffs[name] * name."""

    def __init__(self, const: float = 0.0, coeffs: Dict[str, float] = None):
        self.const = const
        self.coeffs = dict(coeffs or {})

    @property
    def is_constant(self) -> bool:
        return not any(self.coeffs.values())

    def add(self, other: "_Affine", sign: float) -> "_Affine":
        coeffs = dict(self.coeffs)
        for name, c in other.coeffs.items():
            coeffs[name] = coeffs[name] + sign * c if name in coeffs else sign * c
        return _Affine(self.const + sign * other.const, coeffs)

    def scale(self, factor: float) -> "_Affine":
        return _Affine(self.const * factor, {n: c * factor for n, c in self.coeffs.items()})

    def divide(self, divisor: float) -> "_Affine":
        return _Affine(self.const / divisor, {n: c / divisor for n, c in self.coeffs.items()})


class _ExpressionParser:
    """
    Recursive descent over

        expr   := term (('+' | '-') term)*
        term   := factor (('*' | '/') factor)*
        factor := ['-'] (number | identifier | '(' expr ')')
    """

    def __init__(self, text: str, names: Tuple[str, ...]):
        self.text = text
        self.names = names
        self.tokens = self._tokenize(text)
        self.position = 0

    def _tokenize(self, text: str) -> List[Tuple[str, str]]:
        tokens = []
        for number, name, other in _TOKEN.findall(text):
            if number:
                tokens.append(("number", number))
            elif name:
                tokens.append(("name", name))
            elif other.strip():
                if other not in "+-*/()":
                    raise InstanceFormatError(f"unexpected character {other!r} in expression {text!r}")
                tokens.append(("op", other))
        return tokens

    def _peek(self) -> Tuple[str, str]:
        return self.tokens[self.position] if self.position < len(self.tokens) else ("end", "")

    def _take(self) -> Tuple[str, str]:
        token = self._peek()
        self.position += 1
        return token

    def parse(self) -> _Affine:
        if not self.tokens:
            raise InstanceFormatError("empty expression")
        result = self._expr()
        if self._peek()[0] != "end":
            raise InstanceFormatError(f"trailing input in expression {self.text!r}")
        return result

    def _expr(self) -> _Affine:
        result = self._term()
        while self._peek() in (("op", "+"), ("op", "-")):
            sign = 1.0 if self._take()[1] == "+" else -1.0
            result = result.add(self._term(), sign)
        return result

    def _term(self) -> _Affine:
        result = self._factor()
        while self._peek() in (("op", "*"), ("op", "/")):
            op = self._take()[1]
            right = self._factor()
            if op == "*":
                if result.is_constant:
                    result = right.scale(result.const)
                elif right.is_constant:
                    result = result.scale(right.const)
                else:
                    raise InstanceFormatError(f"expression {self.text!r} is not affine (product of parameters)")
            else:
                if not right.is_constant:
                    raise InstanceFormatError(f"expression {self.text!r} divides by a parameter")
                if right.const == 0.0:
                    raise InstanceFormatError(f"expression {self.text!r} divides by zero")
                result = result.divide(right.const)
        return result

    def _factor(self) -> _Affine:
        kind, value = self._take()
        if (kind, value) == ("op", "-"):
            return self._factor().scale(-1.0)
        if kind == "number":
            return _Affine(float(value))
        if kind == "name":
            if value not in self.names:
                raise InstanceFormatError(f"unknown parameter {value!r} in expression {self.text!r}")
            return _Affine(0.0, {value: 1.0})
        if (kind, value) == ("op", "("):
            inner = self._expr()
            if self._take() != ("op", ")"):
                raise InstanceFormatError(f"missing ')' in expression {self.text!r}")
            return inner
        raise InstanceFormatError(f"unexpected {value or 'end of input'!r} in expression {self.text!r}")


def parse_affine(text: Union[str, float, int], names: Tuple[str, ...]) -> Tuple[float, Tuple[float, ...]]:
    """
    (constant, per-parameter coefficients) of a template entry.

    Examples:
        >>> parse_affine("1 - p", ("p",))
        (1.0, (-1.0,))
    """
    if isinstance(text, bool):
        raise InstanceFormatError(f"template entry must be a number or expression, got {text!r}")
    if isinstance(text, (int, float)):
        return float(text), (0.0,) * len(names)
    if not isinstance(text, str):
        raise InstanceFormatError(f"template entry must be a number or expression, got {text!r}")
    affine = _ExpressionParser(text, names).parse()
    return affine.const + 0.0, tuple(affine.coeffs.get(name, 0.0) + 0.0 for name in names)


def format_affine(const: float, coeffs: Tuple[float, ...], names: Tuple[str, ...]) -> Union[str, float]:
    """Inverse of parse_affine: a plain number when no parameter appears."""
    terms = [(c, n) for c, n in zip(coeffs, names) if c != 0.0]
    if not terms:
        return const
    parts = [] if const == 0.0 else [repr(const)]
    for c, name in terms:
        if c == 1.0:
            parts.append(name)
        elif c == -1.0:
            parts.append(f"-{name}")
        else:
            parts.append(f"{c!r}*{name}")
    return " + ".join(parts)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _check_fields(obj: Any, required: Tuple[str, ...], optional: Tuple[str, ...], where: str) -> None:
    if not isinstance(obj, dict):
        raise InstanceFormatError(f"{where} must be a JSON object")
    missing = [k for k in required if k not in obj]
    if missing:
        raise InstanceFormatError(f"{where} is missing {', '.join(missing)}")
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        raise InstanceFormatError(f"{where} has unknown field(s): {', '.join(unknown)}")


def _array(value: Any, where: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise InstanceFormatError(f"{where} is not a numeric array: {e}") from e
    if arr.dtype == object:
        raise InstanceFormatError(f"{where} is a ragged array")
    return arr


def _stacks(values: Any, where: str) -> Tuple[np.ndarray, ...]:
    if not isinstance(values, list):
        raise InstanceFormatError(f"{where} must be a list")
    return tuple(_array(v, f"{where}[{i}]") for i, v in enumerate(values))


def _parse_parametric(payload: Dict, shape: Tuple[int, int]) -> AffineParamSet:
    parameters = []
    for i, item in enumerate(payload["parameters"]):
        _check_fields(item, ("name",), ("low", "high"), f"parameter {i}")
        parameters.append(Parameter(item["name"], item.get("low", 0.0), item.get("high", 1.0)))
    names = tuple(p.name for p in parameters)

    S, A = shape
    template = payload["kernel_template"]
    offset = np.zeros((S, A, S))
    coefficients = np.zeros((len(names), S, A, S))
    try:
        for s in range(S):
            for a in range(A):
                row = template[s][a]
                if len(row) != S:
                    raise InstanceFormatError(f"kernel_template[{s}][{a}] has {len(row)} entries, expected {S}")
                for t, entry in enumerate(row):
                    offset[s, a, t], coefficients[:, s, a, t] = parse_affine(entry, names)
        if len(template) != S or any(len(template[s]) != A for s in range(S)):
            raise InstanceFormatError(f"kernel_template must have shape ({S}, {A}, {S})")
    except (IndexError, TypeError) as e:
        raise InstanceFormatError(f"kernel_template must have shape ({S}, {A}, {S}): {e}") from e
    resolution = payload.get("grid_resolution", DEFAULT_GRID_RESOLUTION)
    return AffineParamSet(tuple(parameters), offset, coefficients, resolution)


def parse_uncertainty(payload: Any, shape: Tuple[int, int]) -> Union[UncertaintySet, ParamSet]:
    """Build the set described by an "uncertainty" object."""
    if not isinstance(payload, dict) or "variant" not in payload:
        raise InstanceFormatError("uncertainty must be an object with a 'variant' field")
    variant = payload["variant"]
    if variant not in PAYLOAD_FIELDS:
        raise InstanceFormatError(f"unknown variant {variant!r}; choose from {sorted(PAYLOAD_FIELDS)}")
    _check_fields(payload, ("variant",) + PAYLOAD_FIELDS[variant], PAYLOAD_OPTIONAL.get(variant, ()),
                  f"{variant} payload")

    if variant == "explicit_finite":
        uset = ExplicitFinite(tuple(TransitionKernel(k) for k in _stacks(payload["kernels"], "kernels")))
    elif variant == "s_rectangular":
        uset = SRectangular(_stacks(payload["per_state"], "per_state"))
    elif variant == "sa_rectangular":
        uset = SaRectangular(tuple(_stacks(per_action, f"per_state_action[{s}]")
                                   for s, per_action in enumerate(payload["per_state_action"])))
    elif variant == "factor_model":
        uset = FactorModel(_array(payload["coefficients"], "coefficients"),
                           _stacks(payload["factor_sets"], "factor_sets"))
    elif variant == "partitioned":
        factor_part = payload["factor_part"]
        _check_fields(factor_part, ("coefficients", "factor_sets"), (), "factor_part")
        coefficients = _array(factor_part["coefficients"], "factor_part.coefficients")
        if coefficients.size == 0:
            coefficients = coefficients.reshape(0, shape[1], len(factor_part["factor_sets"]))
        uset = Partitioned(
            (tuple(payload["first_states"]), tuple(payload["second_states"])),
            _stacks(payload["s_part"], "s_part"),
            coefficients,
            _stacks(factor_part["factor_sets"], "factor_part.factor_sets"),
        )
    elif variant == "coeff_factor":
        uset = CoeffFactor(_stacks(payload["factor_sets"], "factor_sets"),
                           _stacks(payload["coeff_sets"], "coeff_sets"))
    elif variant == "sa_coeff_factor":
        uset = SaCoeffFactor(_stacks(payload["factor_sets"], "factor_sets"),
                             tuple(_stacks(per_action, f"coeff_sets[{s}]")
                                   for s, per_action in enumerate(payload["coeff_sets"])))
    else:
        uset = _parse_parametric(payload, shape)

    if (uset.num_states, uset.num_actions) != shape:
        raise InstanceFormatError(
            f"{variant} set is {uset.num_states}x{uset.num_actions}, header says {shape[0]}x{shape[1]}"
        )
    return uset


def _parse_expected(items: Any) -> Tuple[ExpectedValue, ...]:
    if not isinstance(items, list):
        raise InstanceFormatError("expected must be a list")
    expected = []
    for i, item in enumerate(items):
        _check_fields(item, ("quantity", "value", "tolerance"), ("provenance",), f"expected[{i}]")
        parse_quantity(item["quantity"])
        try:
            value, tolerance = float(item["value"]), float(item["tolerance"])
        except (TypeError, ValueError) as e:
            raise InstanceFormatError(f"expected[{i}] value and tolerance must be numbers") from e
        if tolerance < 0:
            raise InstanceFormatError(f"expected[{i}] has a negative tolerance")
        expected.append(ExpectedValue(item["quantity"], value, tolerance, item.get("provenance", "")))
    return tuple(expected)


def parse_instance(data: Any) -> NamedInstance:
    """
    Build a NamedInstance from decoded JSON.

    Raises:
        InstanceFormatError: On structural problems (fields, shapes, grammar)
        InvalidInstanceError: On values violating the type invariants
    """
    _check_fields(data, TOP_LEVEL_REQUIRED, TOP_LEVEL_OPTIONAL, "instance")
    for key in ("num_states", "num_actions"):
        if not isinstance(data[key], int) or isinstance(data[key], bool) or data[key] < 1:
            raise InstanceFormatError(f"{key} must be a positive integer")
    shape = (data["num_states"], data["num_actions"])

    rewards = _array(data["rewards"], "rewards")
    if rewards.shape != (shape[0], shape[1], shape[0]):
        raise InstanceFormatError(f"rewards have shape {rewards.shape}, expected ({shape[0]}, {shape[1]}, {shape[0]})")
    mdp = MdpInstance(rewards, data["gamma"], _array(data["mu"], "mu"))

    policies = {}
    if not isinstance(data.get("policies", {}), dict):
        raise InstanceFormatError("policies must be an object of name -> matrix")
    for key, matrix in data.get("policies", {}).items():
        policies[key] = Policy(_array(matrix, f"policies.{key}"))

    labels = data.get("state_labels", [])
    if not isinstance(labels, list) or not all(isinstance(label, str) for label in labels):
        raise InstanceFormatError("state_labels must be a list of strings")

    return NamedInstance(
        name=str(data["name"]),
        mdp=mdp,
        uncertainty=parse_uncertainty(data["uncertainty"], shape),
        provenance=str(data.get("provenance", "")),
        expected=_parse_expected(data.get("expected", [])),
        state_labels=tuple(labels),
        policies=policies,
    )


def loads(text: str) -> NamedInstance:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise InstanceFormatError(f"invalid JSON: {e}") from e
    return parse_instance(data)


def load_instance(path: Union[str, Path]) -> NamedInstance:
    """Read an instance file (OSError propagates for missing files)."""
    path = Path(path)
    logger.debug(f"loading instance from {path}")
    return loads(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Dumping
# ---------------------------------------------------------------------------

def _lists(stacks) -> List:
    return [np.asarray(s).tolist() for s in stacks]


def dump_uncertainty(uset: Union[UncertaintySet, ParamSet]) -> Dict:
    if isinstance(uset, ExplicitFinite):
        return {"variant": "explicit_finite", "kernels": [k.probs.tolist() for k in uset.kernels]}
    if isinstance(uset, SRectangular):
        return {"variant": "s_rectangular", "per_state": [_lists(blocks) for blocks in uset.per_state]}
    if isinstance(uset, SaRectangular):
        return {"variant": "sa_rectangular",
                "per_state_action": [[_lists(d) for d in per_action] for per_action in uset.per_state_action]}
    if isinstance(uset, FactorModel):
        return {"variant": "factor_model", "coefficients": uset.coefficients.tolist(),
                "factor_sets": _lists(uset.factor_sets)}
    if isinstance(uset, Partitioned):
        first, second = uset.state_split
        return {"variant": "partitioned", "first_states": list(first), "second_states": list(second),
                "s_part": [_lists(blocks) for blocks in uset.s_part],
                "factor_part": {"coefficients": uset.factor_coefficients.tolist(),
                                "factor_sets": _lists(uset.factor_sets)}}
    if isinstance(uset, CoeffFactor):
        return {"variant": "coeff_factor", "factor_sets": _lists(uset.factor_sets),
                "coeff_sets": _lists(uset.coeff_sets)}
    if isinstance(uset, SaCoeffFactor):
        return {"variant": "sa_coeff_factor", "factor_sets": _lists(uset.factor_sets),
                "coeff_sets": [_lists(per_action) for per_action in uset.coeff_sets]}
    if isinstance(uset, AffineParamSet):
        names = uset.names
        S, A = uset.num_states, uset.num_actions
        template = [[[format_affine(*uset.entry_expression(s, a, t), names) for t in range(S)]
                     for a in range(A)] for s in range(S)]
        return {"variant": "parametric",
                "parameters": [{"name": p.name, "low": p.low, "high": p.high} for p in uset.parameters],
                "kernel_template": template,
                "grid_resolution": uset.grid_resolution}
    if isinstance(uset, HullParamSet):
        return dump_uncertainty(uset.base)
    raise InvalidInstanceError(f"cannot serialize {type(uset).__name__}")


def dump_instance(instance: NamedInstance) -> Dict:
    mdp = instance.mdp
    data = {
        "name": instance.name,
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "gamma": mdp.discount,
        "mu": mdp.initial_dist.tolist(),
        "rewards": mdp.rewards.tolist(),
        "uncertainty": dump_uncertainty(instance.uncertainty),
        "expected": [
            {"quantity": e.quantity, "value": float(e.value), "tolerance": float(e.tolerance),
             "provenance": e.provenance}
            for e in instance.expected
        ],
    }
    if instance.state_labels:
        data["state_labels"] = list(instance.state_labels)
    if instance.policies:
        data["policies"] = {k: p.action_probs.tolist() for k, p in instance.policies.items()}
    if instance.provenance:
        data["provenance"] = instance.provenance
    return data


def dumps(instance: NamedInstance) -> str:
    return json.dumps(dump_instance(instance), indent=2)


def save_instance(instance: NamedInstance, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(dumps(instance) + "\n", encoding="utf-8")
    logger.info(f"wrote {instance.name} to {path}")
    return path
