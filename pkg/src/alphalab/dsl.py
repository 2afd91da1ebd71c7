"""Alpha expression language: trees, reverse-polish tokens and evaluation.

Expressions are immutable trees of :class:`Expr` nodes. Every operator is
total, so any well-formed expression evaluates to finite values on a panel
of finite positive prices. Time-series operators only look backwards; at
the start of the panel the first observation is repeated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .market_data import FIELDS, FeaturePanel, OhlcvPanel

UNARY = ("neg", "abs", "signed_log1p", "cs_rank")
WINDOWED = ("delay", "delta", "ts_mean", "ts_std", "ts_max", "ts_min")
BINARY = ("add", "sub", "mul", "safe_div")
OPERATORS = UNARY + WINDOWED + BINARY
MAX_WINDOW = 30
RANDOM_MAX_WINDOW = 20
DIV_EPS = 1e-12
CLAMP = 1e150

_WINDOWED_RE = re.compile(r"^(%s)_(\d+)$" % "|".join(WINDOWED))


class RPNError(ValueError):
    pass


@dataclass(frozen=True)
class Expr:
    """Expression node.

    ``op`` is a field name, ``"const"`` or an operator name. Windowed
    operators carry ``window``; constants carry ``value``.
    """

    op: str
    args: tuple["Expr", ...] = ()
    window: int | None = None
    value: float | None = None

    @property
    def is_terminal(self) -> bool:
        return not self.args

    @property
    def depth(self) -> int:
        return 1 + max((a.depth for a in self.args), default=0)

    @property
    def size(self) -> int:
        return 1 + sum(a.size for a in self.args)

    @property
    def lookback(self) -> int:
        """Number of past days (beyond the current one) the value depends on."""
        own = 0
        if self.op in ("delay", "delta"):
            own = self.window
        elif self.op in WINDOWED:
            own = self.window - 1
        return own + max((a.lookback for a in self.args), default=0)

    def __str__(self) -> str:
        return " ".join(to_rpn(self))


def terminal(name: str) -> Expr:
    if name not in FIELDS:
        raise ValueError(f"unknown field {name!r}")
    return Expr(name)


def const(value: float) -> Expr:
    return Expr("const", value=float(value))


def op(name: str, *args: Expr, window: int | None = None) -> Expr:
    return Expr(name, tuple(args), window)


def arity(name: str) -> int:
    if name in BINARY:
        return 2
    if name in UNARY or name in WINDOWED:
        return 1
    return 0


def validate(expr: Expr, max_depth: int | None = None, max_window: int = MAX_WINDOW) -> None:
    """Raise ``ValueError`` unless arity, window bounds and depth are respected."""
    if max_depth is not None and expr.depth > max_depth:
        raise ValueError(f"depth {expr.depth} > {max_depth}")
    for node in iter_nodes(expr):
        if node.op == "const":
            if node.value is None or not np.isfinite(node.value):
                raise ValueError("constant must be finite")
        elif node.op in FIELDS:
            pass
        elif node.op in OPERATORS:
            if len(node.args) != arity(node.op):
                raise ValueError(f"{node.op} expects {arity(node.op)} operands")
            if node.op in WINDOWED:
                if node.window is None or not 1 <= node.window <= max_window:
                    raise ValueError(f"{node.op} window {node.window} outside 1..{max_window}")
        else:
            raise ValueError(f"unknown op {node.op!r}")
        if node.op not in OPERATORS and node.args:
            raise ValueError(f"terminal {node.op} cannot have operands")


# ---------------------------------------------------------------------------
# Tokens

def token_of(node: Expr) -> str:
    if node.op == "const":
        return repr(float(node.value))
    if node.op in WINDOWED:
        return f"{node.op}_{node.window}"
    return node.op


def to_rpn(expr: Expr) -> list[str]:
    out: list[str] = []

    def walk(node: Expr) -> None:
        for a in node.args:
            walk(a)
        out.append(token_of(node))

    walk(expr)
    return out


def _decode(token: str) -> tuple[str, int | None, float | None]:
    if token in FIELDS or token in UNARY or token in BINARY:
        return token, None, None
    m = _WINDOWED_RE.match(token)
    if m:
        d = int(m.group(2))
        if not 1 <= d <= MAX_WINDOW:
            raise RPNError(f"window {d} in {token!r} outside 1..{MAX_WINDOW}")
        return m.group(1), d, None
    try:
        value = float(token)
    except ValueError:
        raise RPNError(f"unknown token {token!r}") from None
    if not np.isfinite(value):
        raise RPNError(f"non-finite constant {token!r}")
    return "const", None, value


def parse_rpn(tokens: Sequence[str] | str) -> Expr:
    """Build a tree from a postfix token stream (list or whitespace-separated string)."""
    if isinstance(tokens, str):
        tokens = tokens.split()
    stack: list[Expr] = []
    for pos, tok in enumerate(tokens):
        name, window, value = _decode(tok)
        n = arity(name)
        if len(stack) < n:
            raise RPNError(f"arity underflow at token {pos} ({tok!r}): needs {n}, stack has {len(stack)}")
        if n:
            args = tuple(stack[-n:])
            del stack[-n:]
            stack.append(Expr(name, args, window))
        elif name == "const":
            stack.append(Expr("const", value=value))
        else:
            stack.append(Expr(name))
    if len(stack) != 1:
        raise RPNError(f"expression leaves {len(stack)} items on the stack")
    return stack[0]


# ---------------------------------------------------------------------------
# Primitives. Arrays are (n_assets, n_days); ``tradable`` drives cs_rank.

def _finite(x: np.ndarray) -> np.ndarray:
    return np.clip(np.nan_to_num(x, nan=0.0, posinf=CLAMP, neginf=-CLAMP), -CLAMP, CLAMP)


def _pad_left(x: np.ndarray, n: int) -> np.ndarray:
    if n == 0:
        return x
    return np.concatenate([np.repeat(x[:, :1], n, axis=1), x], axis=1)


def _windows(x: np.ndarray, d: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(_pad_left(x, d - 1), d, axis=1)


def _delay(x, d):
    return _pad_left(x, d)[:, : x.shape[1]]


def _ts_std(x, d):
    w = _windows(x, d)
    s = w.std(axis=-1)
    s[w.max(axis=-1) == w.min(axis=-1)] = 0.0
    return s


def _cs_rank(x, tradable):
    masked = np.where(tradable, x, np.nan)
    r = rankdata(masked, axis=0, nan_policy="omit")
    n = tradable.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (r - 1.0) / (n - 1.0)
    out[:, n <= 1] = 0.5
    return np.where(tradable, out, 0.5)


def _safe_div(a, b):
    small = np.abs(b) < DIV_EPS
    return np.where(small, 0.0, a / np.where(small, 1.0, b))


_UNARY_FN: dict[str, Callable] = {
    "neg": np.negative,
    "abs": np.abs,
    "signed_log1p": lambda x: np.sign(x) * np.log1p(np.abs(x)),
}
_WINDOWED_FN: dict[str, Callable] = {
    "delay": _delay,
    "delta": lambda x, d: x - _delay(x, d),
    "ts_mean": lambda x, d: _windows(x, d).mean(axis=-1),
    "ts_std": _ts_std,
    "ts_max": lambda x, d: _windows(x, d).max(axis=-1),
    "ts_min": lambda x, d: _windows(x, d).min(axis=-1),
}
_BINARY_FN: dict[str, Callable] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "safe_div": _safe_div,
}


def apply_op(name: str, args: Sequence[np.ndarray], window: int | None, tradable: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        if name == "cs_rank":
            out = _cs_rank(args[0], tradable)
        elif name in _UNARY_FN:
            out = _UNARY_FN[name](args[0])
        elif name in _WINDOWED_FN:
            out = _WINDOWED_FN[name](args[0], window)
        else:
            out = _BINARY_FN[name](args[0], args[1])
        return _finite(out)


def _leaf(name: str, value: float | None, data: np.ndarray) -> np.ndarray:
    if name == "const":
        return np.full(data.shape[:2], float(value))
    return data[:, :, FIELDS.index(name)]


def eval_tree(expr: Expr, panel: OhlcvPanel) -> np.ndarray:
    """Recursive evaluation over the whole panel; shape (n_assets, n_days)."""
    data, tradable = panel.filled, panel.tradable

    def walk(node: Expr) -> np.ndarray:
        if node.is_terminal:
            return _leaf(node.op, node.value, data)
        return apply_op(node.op, [walk(a) for a in node.args], node.window, tradable)

    return walk(expr)


def eval_rpn(tokens: Sequence[str] | str, panel: OhlcvPanel) -> np.ndarray:
    """Stack-machine evaluation of a token stream; independent of the tree walker."""
    if isinstance(tokens, str):
        tokens = tokens.split()
    data, tradable = panel.filled, panel.tradable
    stack: list[np.ndarray] = []
    for tok in tokens:
        name, window, value = _decode(tok)
        n = arity(name)
        if n == 0:
            stack.append(_leaf(name, value, data))
            continue
        if len(stack) < n:
            raise RPNError(f"arity underflow at {tok!r}")
        args = stack[-n:]
        del stack[-n:]
        stack.append(apply_op(name, args, window, tradable))
    if len(stack) != 1:
        raise RPNError(f"expression leaves {len(stack)} items on the stack")
    return stack[0]


def validity_mask(expr: Expr, panel: OhlcvPanel) -> np.ndarray:
    """Cells whose full look-back span is tradable."""
    lb = expr.lookback
    trad = panel.tradable
    if lb == 0:
        return trad.copy()
    ok = np.zeros_like(trad)
    if lb < panel.n_days:
        span = np.lib.stride_tricks.sliding_window_view(trad, lb + 1, axis=1)
        ok[:, lb:] = span.all(axis=-1)
    return ok


def evaluate_panel(expr: Expr, panel: OhlcvPanel, name: str | None = None) -> FeaturePanel:
    return FeaturePanel(name or str(expr), eval_tree(expr, panel), validity_mask(expr, panel))


def evaluate(expr: Expr, panel: OhlcvPanel, day: int) -> np.ndarray:
    """Cross-section of ``expr`` on ``day`` (uses data up to ``day`` only)."""
    if not expr.lookback <= day < panel.n_days:
        raise ValueError(f"day {day} outside [{expr.lookback}, {panel.n_days}) for look-back {expr.lookback}")
    return eval_tree(expr, panel)[:, day]


# ---------------------------------------------------------------------------
# Random generation

TERMINAL_CHOICES = FIELDS + ("const",)


def random_terminal(rng: np.random.Generator) -> Expr:
    name = TERMINAL_CHOICES[rng.integers(len(TERMINAL_CHOICES))]
    if name == "const":
        return const(round(float(rng.uniform(-2.0, 2.0)), 2))
    return Expr(name)


def random_operator(rng: np.random.Generator, choices: Sequence[str] = OPERATORS) -> tuple[str, int | None]:
    name = choices[rng.integers(len(choices))]
    window = int(rng.integers(1, RANDOM_MAX_WINDOW + 1)) if name in WINDOWED else None
    return name, window


def random_expr(rng: np.random.Generator, max_depth: int, p_terminal: float = 0.3) -> Expr:
    """Grow-method random tree of depth <= ``max_depth``."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if max_depth == 1 or rng.random() < p_terminal:
        return random_terminal(rng)
    name, window = random_operator(rng)
    args = tuple(random_expr(rng, max_depth - 1, p_terminal) for _ in range(arity(name)))
    return Expr(name, args, window)


def iter_nodes(expr: Expr):
    """Pre-order traversal."""
    yield expr
    for a in expr.args:
        yield from iter_nodes(a)


def node_paths(expr: Expr, prefix: tuple[int, ...] = ()) -> list[tuple[tuple[int, ...], Expr]]:
    """(path, node) pairs in pre-order; a path is a tuple of child indices."""
    out = [(prefix, expr)]
    for i, a in enumerate(expr.args):
        out.extend(node_paths(a, prefix + (i,)))
    return out


def replace_at(expr: Expr, path: tuple[int, ...], new: Expr) -> Expr:
    if not path:
        return new
    i = path[0]
    args = list(expr.args)
    args[i] = replace_at(args[i], path[1:], new)
    return Expr(expr.op, tuple(args), expr.window, expr.value)


# ---------------------------------------------------------------------------
# Classical feature library

CLASSICAL_RPN = {
    "momentum_5": "close close delay_5 safe_div 1.0 sub",
    "momentum_20": "close close delay_20 safe_div 1.0 sub",
    "reversal_5": "close close delay_5 safe_div 1.0 sub neg",
    "volatility_20": "close delta_1 close delay_1 safe_div ts_std_20",
    "volume_ratio_5_20": "volume ts_mean_5 volume ts_mean_20 safe_div",
    "range_hl_10": "high low sub close safe_div ts_mean_10",
    "close_to_ts_max_20": "close high ts_max_20 safe_div",
    "zscore_close_10": "close close ts_mean_10 sub close ts_std_10 safe_div",
}
CLASSICAL = {name: parse_rpn(rpn) for name, rpn in CLASSICAL_RPN.items()}


def classical_expr(name: str) -> Expr:
    try:
        return CLASSICAL[name]
    except KeyError:
        raise KeyError(f"unknown classical feature {name!r}; choose from {sorted(CLASSICAL)}") from None


def classical_feature(name: str, panel: OhlcvPanel) -> FeaturePanel:
    return evaluate_panel(classical_expr(name), panel, name)
