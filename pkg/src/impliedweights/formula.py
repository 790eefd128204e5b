"""R-style model-formula mini-language and design-matrix construction.

Grammar (public, versioned contract — v1):

    formula := "~" expr
    expr    := prod ("+" prod)*
    prod    := inter ("*" inter)*          # a*b expands to a + b + a:b
    inter   := atom (":" atom)*
    atom    := NAME | TRANSFORM "(" NAME ")" | "(" expr ")" | "1"

NAME matches ``[A-Za-z_][A-Za-z0-9_.]*``. TRANSFORM is one of ``log``,
``sqrt``, ``square`` and applies only to numeric variables. The literal
``1`` is accepted and ignored (the intercept is controlled by the caller).
A left-hand side is rejected: weights must never see outcomes.

The canonical printed form (``str(formula)``) lists deduplicated terms,
main effects before interactions, factors joined by ``:``; parsing the
printed form reproduces the formula exactly.

Design matrices expand categoricals to levels-1 indicators (reference =
first lexicographic level), build interactions as element-wise products of
the expanded columns, and drop exactly collinear columns (recorded, never
silently) using a rank-revealing sweep with relative tolerance 1e-9.
Balance expansion differs: every categorical level gets its own column and
nothing is aliased, which is what balance tables display.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .exceptions import FormulaError

__all__ = [
    "Factor",
    "Term",
    "Formula",
    "parse_formula",
    "DesignMatrix",
    "build_design",
    "expand_balance_columns",
    "drop_aliased",
]

TRANSFORMS = ("log", "sqrt", "square")
ALIAS_TOL = 1e-9

_TOKEN_RE = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_.]*)|(?P<one>1)|(?P<op>[~+:*()]))")


@dataclass(frozen=True)
class Factor:
    var: str
    transform: str | None = None

    def __str__(self):
        return self.var if self.transform is None else f"{self.transform}({self.var})"


@dataclass(frozen=True)
class Term:
    factors: tuple[Factor, ...]

    def key(self) -> frozenset:
        return frozenset(self.factors)

    @property
    def order(self) -> int:
        return len(self.factors)

    def __str__(self):
        return ":".join(str(f) for f in self.factors)


@dataclass(frozen=True)
class Formula:
    terms: tuple[Term, ...]

    def __str__(self):
        return "~ " + " + ".join(str(t) for t in self.terms) if self.terms else "~ 1"

    def variables(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for term in self.terms:
            for factor in term.factors:
                seen.setdefault(factor.var, None)
        return tuple(seen)

    def drop_variable(self, var: str) -> "Formula":
        kept = tuple(t for t in self.terms if all(f.var != var for f in t.factors))
        return Formula(kept)

    def main_effect_only(self, var: str) -> bool:
        """True if ``var`` never appears transformed or inside an interaction."""
        for term in self.terms:
            for factor in term.factors:
                if factor.var == var and (factor.transform is not None or term.order > 1):
                    return False
        return True


def _canonical(term_lists: list[list[Term]]) -> tuple[Term, ...]:
    flat: list[Term] = []
    for terms in term_lists:
        flat.extend(terms)
    deduped: dict[frozenset, Term] = {}
    for term in flat:
        # drop repeated factors inside a term (a:a == a), keep first occurrence
        seen: dict[Factor, None] = {}
        for f in term.factors:
            seen.setdefault(f, None)
        cleaned = Term(tuple(seen))
        deduped.setdefault(cleaned.key(), cleaned)
    ordered = sorted(deduped.values(), key=lambda t: t.order)  # stable: mains first
    return tuple(ordered)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.tokens: list[tuple[str, str, int]] = []
        self._tokenize()
        self.i = 0

    def _tokenize(self):
        pos = 0
        while pos < len(self.text):
            m = _TOKEN_RE.match(self.text, pos)
            if m is None:
                stripped = self.text[pos:].lstrip()
                if not stripped:
                    break
                at = len(self.text) - len(stripped)
                raise FormulaError(f"unexpected character {stripped[0]!r}", position=at)
            if m.group("name"):
                self.tokens.append(("name", m.group("name"), m.start("name")))
            elif m.group("one"):
                self.tokens.append(("one", "1", m.start("one")))
            else:
                self.tokens.append(("op", m.group("op"), m.start("op")))
            pos = m.end()

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("eof", "", len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, value, pos = self.take()
        if kind != "op" or value != op:
            raise FormulaError(f"expected {op!r}", position=pos)

    def parse(self) -> Formula:
        kind, value, pos = self.peek()
        if not (kind == "op" and value == "~"):
            raise FormulaError("outcome must not appear in formula", position=pos)
        self.take()
        terms = self.expr()
        kind, value, pos = self.peek()
        if kind != "eof":
            raise FormulaError(f"unexpected {value!r} after formula", position=pos)
        return Formula(_canonical([terms]))

    def expr(self) -> list[Term]:
        terms = self.prod()
        while self.peek()[:2] == ("op", "+"):
            self.take()
            terms = terms + self.prod()
        return terms

    def prod(self) -> list[Term]:
        left = self.inter()
        while self.peek()[:2] == ("op", "*"):
            self.take()
            right = self.inter()
            left = left + right + _cross(left, right)
        return left

    def inter(self) -> list[Term]:
        left = self.atom()
        while self.peek()[:2] == ("op", ":"):
            self.take()
            left = _cross(left, self.atom())
        return left

    def atom(self) -> list[Term]:
        kind, value, pos = self.take()
        if kind == "one":
            return []
        if kind == "op" and value == "(":
            inner = self.expr()
            self.expect_op(")")
            return inner
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                if value not in TRANSFORMS:
                    raise FormulaError(f"unknown transform {value!r}", position=pos)
                self.take()
                nkind, nvalue, npos = self.take()
                if nkind != "name":
                    raise FormulaError("expected variable name inside transform", position=npos)
                self.expect_op(")")
                return [Term((Factor(nvalue, value),))]
            return [Term((Factor(value),))]
        raise FormulaError("expected a term", position=pos)


def _cross(left: list[Term], right: list[Term]) -> list[Term]:
    return [Term(lt.factors + rt.factors) for lt in left for rt in right]


def parse_formula(text: str) -> Formula:
    """Parse formula text into canonical form; raises FormulaError with position."""
    tilde = text.find("~")
    if tilde > 0 and text[:tilde].strip():
        raise FormulaError("outcome must not appear in formula", position=0)
    if tilde < 0:
        raise FormulaError("formula must start with '~'", position=0)
    return _Parser(text).parse()


# --------------------------------------------------------------------------
# column expansion
# --------------------------------------------------------------------------


def _transform_values(values: np.ndarray, transform: str, var: str) -> np.ndarray:
    if transform == "log":
        if (values <= 0).any():
            raise FormulaError(f"log({var}) undefined: nonpositive values present")
        return np.log(values)
    if transform == "sqrt":
        if (values < 0).any():
            raise FormulaError(f"sqrt({var}) undefined: negative values present")
        return np.sqrt(values)
    if transform == "square":
        return values**2
    raise FormulaError(f"unknown transform {transform!r}")


def _factor_columns(factor: Factor, ds: Dataset, all_levels: bool):
    """Expand one factor into (names, columns) pairs."""
    col = ds.column(factor.var)
    if col.kind == "categorical":
        if factor.transform is not None:
            raise FormulaError(f"transform of categorical variable {factor.var!r}")
        levels = col.levels if all_levels else col.levels[1:]
        return [(f"{factor.var}{lv}", col.indicator(lv)) for lv in levels]
    values = col.values
    if factor.transform is not None:
        values = _transform_values(values, factor.transform, factor.var)
    return [(str(factor), values)]


def _term_columns(term: Term, ds: Dataset, all_levels: bool):
    parts = [_factor_columns(f, ds, all_levels) for f in term.factors]
    out = parts[0]
    for nxt in parts[1:]:
        out = [(f"{n1}:{n2}", v1 * v2) for n1, v1 in out for n2, v2 in nxt]
    return out


def drop_aliased(matrix: np.ndarray, tol: float = ALIAS_TOL, row_weights=None):
    """Greedy order-preserving rank sweep: returns (kept, dropped) indices.

    A column is aliased when its residual after projecting onto the kept
    columns has norm <= tol x its own norm (projection applied twice for
    numerical safety). Later columns are dropped, matching pivot order in
    common least-squares practice. ``row_weights`` pre-scales rows (pass
    sqrt of fit weights to make the sweep reflect the weighted normal
    equations).
    """
    work = np.asarray(matrix, dtype=float)
    if row_weights is not None:
        work = work * np.sqrt(np.asarray(row_weights, dtype=float))[:, None]
    n, p = work.shape
    basis = np.empty((n, 0))
    kept: list[int] = []
    dropped: list[int] = []
    for j in range(p):
        c = work[:, j]
        norm_c = np.linalg.norm(c)
        if norm_c == 0.0:
            dropped.append(j)
            continue
        r = c - basis @ (basis.T @ c)
        r = r - basis @ (basis.T @ r)
        if np.linalg.norm(r) <= tol * norm_c:
            dropped.append(j)
        else:
            kept.append(j)
            basis = np.column_stack([basis, r / np.linalg.norm(r)])
    return kept, dropped


@dataclass(frozen=True)
class DesignMatrix:
    """Numeric expansion of a formula with term bookkeeping.

    ``matrix`` has full column rank (exactly collinear and zero-variance
    columns are dropped and recorded in ``dropped`` as (name, reason)).
    """

    matrix: np.ndarray
    names: tuple[str, ...]
    term_map: dict[str, tuple[str, ...]]
    dropped: tuple[tuple[str, str], ...]
    reference: dict[str, str]
    intercept: bool

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]

    def term_block(self, term_label: str) -> np.ndarray:
        cols = [self.names.index(n) for n in self.term_map[term_label]]
        return self.matrix[:, cols]


def build_design(
    formula: Formula,
    ds: Dataset,
    include_intercept: bool = True,
    row_weights=None,
) -> DesignMatrix:
    """Build the model design matrix for ``formula`` on ``ds``.

    Categorical variables expand to levels-1 indicators (first lexicographic
    level is the reference), interactions are products of expanded columns,
    zero-variance columns (other than the intercept) and exactly collinear
    columns are dropped with a record. ``row_weights`` participate in the
    aliasing decision only, so rank reflects the weighted normal equations.
    """
    names: list[str] = []
    cols: list[np.ndarray] = []
    term_map: dict[str, list[str]] = {}
    dropped: list[tuple[str, str]] = []
    reference: dict[str, str] = {}
    if include_intercept:
        names.append("(Intercept)")
        cols.append(np.ones(ds.n_rows))
        term_map["(Intercept)"] = ["(Intercept)"]
    for term in formula.terms:
        for factor in term.factors:
            col = ds.column(factor.var)
            if col.kind == "categorical":
                reference.setdefault(factor.var, col.levels[0])
        block = _term_columns(term, ds, all_levels=False)
        term_map[str(term)] = []
        for name, values in block:
            if np.ptp(values) == 0.0 and not (include_intercept and name == "(Intercept)"):
                dropped.append((name, "zero variance"))
                continue
            names.append(name)
            cols.append(values)
            term_map[str(term)].append(name)
    matrix = np.column_stack(cols) if cols else np.empty((ds.n_rows, 0))
    kept, aliased = drop_aliased(matrix, row_weights=row_weights)
    aliased_names = {names[j] for j in aliased}
    dropped.extend((names[j], "aliased") for j in aliased)
    matrix = matrix[:, kept]
    names = [names[j] for j in kept]
    term_map_final = {
        label: tuple(n for n in members if n not in aliased_names)
        for label, members in term_map.items()
    }
    return DesignMatrix(
        matrix=matrix,
        names=tuple(names),
        term_map=term_map_final,
        dropped=tuple(dropped),
        reference=reference,
        intercept=include_intercept,
    )


def expand_balance_columns(
    formula: Formula,
    ds: Dataset,
    addl: Formula | None = None,
    exclude: tuple[str, ...] = (),
):
    """Expand formula terms for balance display: ALL categorical levels, no aliasing.

    Terms mentioning a variable in ``exclude`` (the treatment) are skipped;
    ``addl`` terms are appended after the modeled ones, deduplicated by term.
    Returns (matrix, names).
    """
    names: list[str] = []
    cols: list[np.ndarray] = []
    seen_terms: set[frozenset] = set()
    for source in (formula, addl) if addl is not None else (formula,):
        for term in source.terms:
            if any(f.var in exclude for f in term.factors):
                continue
            if term.key() in seen_terms:
                continue
            seen_terms.add(term.key())
            for name, values in _term_columns(term, ds, all_levels=True):
                names.append(name)
                cols.append(values)
    matrix = np.column_stack(cols) if cols else np.empty((ds.n_rows, 0))
    return matrix, tuple(names)
