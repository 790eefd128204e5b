import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import impliedweights as iw
from impliedweights.exceptions import FormulaError
from impliedweights.formula import drop_aliased


class TestParse:
    def test_benchmark_formula_has_eight_terms(self):
        f = iw.parse_formula("~ treat + age + education + married + race + nodegree + re74 + re75")
        assert len(f.terms) == 8
        assert f.variables()[0] == "treat"

    def test_star_expands_distributively(self):
        f = iw.parse_formula("~ a*b")
        assert [str(t) for t in f.terms] == ["a", "b", "a:b"]

    def test_parenthesized_cross(self):
        f = iw.parse_formula("~ (a + b):c")
        assert [str(t) for t in f.terms] == ["a:c", "b:c"]

    def test_outcome_on_lhs_rejected(self):
        with pytest.raises(FormulaError, match="outcome must not appear"):
            iw.parse_formula("re78 ~ treat + age")

    def test_unknown_transform(self):
        with pytest.raises(FormulaError, match="unknown transform 'exp'"):
            iw.parse_formula("~ exp(age)")

    def test_syntax_error_carries_position(self):
        with pytest.raises(FormulaError) as err:
            iw.parse_formula("~ a + + b")
        assert err.value.position == 6

    def test_duplicate_terms_merged(self):
        f = iw.parse_formula("~ a + b + a + b:a")
        assert [str(t) for t in f.terms] == ["a", "b", "b:a"]

    def test_repeated_factor_in_interaction_collapses(self):
        f = iw.parse_formula("~ a:a")
        assert [str(t) for t in f.terms] == ["a"]

    def test_literal_one_is_noop(self):
        assert iw.parse_formula("~ 1").terms == ()
        assert [str(t) for t in iw.parse_formula("~ 1 + a").terms] == ["a"]

    def test_round_trip_examples(self):
        for text in ("~ a + b + a:b", "~ log(x) + sqrt(y) + square(z)", "~ a*b + c"):
            f = iw.parse_formula(text)
            assert iw.parse_formula(str(f)) == f


@st.composite
def random_formula_text(draw):
    names = st.sampled_from(["a", "b", "c", "d", "x1"])
    atoms = []
    for _ in range(draw(st.integers(1, 4))):
        kind = draw(st.integers(0, 2))
        name = draw(names)
        if kind == 0:
            atoms.append(name)
        elif kind == 1:
            atoms.append(f"{draw(st.sampled_from(['log', 'sqrt', 'square']))}({name})")
        else:
            atoms.append(f"{name}:{draw(names)}")
    ops = [draw(st.sampled_from([" + ", " * "])) for _ in range(len(atoms) - 1)]
    text = atoms[0]
    for op, atom in zip(ops, atoms[1:]):
        text += op + atom
    return "~ " + text


class TestRoundTripProperty:
    @settings(max_examples=200, deadline=None)
    @given(random_formula_text())
    def test_parse_print_parse_is_identity(self, text):
        f = iw.parse_formula(text)
        assert iw.parse_formula(str(f)) == f


@pytest.fixture(scope="module")
def ds():
    rng = np.random.default_rng(5)
    n = 120
    frame = pd.DataFrame(
        {
            "treat": rng.integers(0, 2, n),
            "age": rng.normal(30, 7, n),
            "race": rng.choice(["black", "hispanic", "white"], n),
            "married": rng.integers(0, 2, n).astype(float),
            "re75": np.abs(rng.normal(5000, 2500, n)) + 1.0,
        }
    )
    frame.loc[0, "treat"] = 0
    frame.loc[1, "treat"] = 1
    return iw.from_dataframe(frame, treatment="treat")


class TestBuildDesign:
    def test_categorical_drops_reference_level(self, ds):
        design = iw.build_design(iw.parse_formula("~ age + race"), ds)
        assert design.names == ("(Intercept)", "age", "racehispanic", "racewhite")
        assert design.reference["race"] == "black"

    def test_full_column_rank(self, ds):
        design = iw.build_design(iw.parse_formula("~ age + race + married + re75"), ds)
        assert np.linalg.matrix_rank(design.matrix) == design.n_columns

    def test_duplicate_column_dropped_and_recorded(self, ds):
        # square(0/1) reproduces the column exactly: the later copy is aliased
        design = iw.build_design(iw.parse_formula("~ married + square(married)"), ds)
        assert ("square(married)", "aliased") in design.dropped
        assert design.names == ("(Intercept)", "married")
        assert np.linalg.matrix_rank(design.matrix) == design.n_columns

    def test_zero_variance_dropped_with_record(self):
        frame = pd.DataFrame({"treat": [0, 1, 0, 1], "k": [2.0, 2.0, 2.0, 2.0]})
        d = iw.from_dataframe(frame, treatment="treat")
        design = iw.build_design(iw.parse_formula("~ k"), d)
        assert ("k", "zero variance") in design.dropped
        assert design.names == ("(Intercept)",)

    def test_transform_of_categorical_rejected(self, ds):
        with pytest.raises(FormulaError, match="transform of categorical"):
            iw.build_design(iw.parse_formula("~ log(race)"), ds)

    def test_log_of_nonpositive_rejected(self, ds):
        with pytest.raises(FormulaError, match="log"):
            iw.build_design(iw.parse_formula("~ log(married)"), ds)

    def test_transforms_compute(self, ds):
        design = iw.build_design(iw.parse_formula("~ log(re75) + sqrt(age) + square(married)"), ds)
        re75 = ds.column("re75").values
        j = design.names.index("log(re75)")
        assert np.allclose(design.matrix[:, j], np.log(re75))

    def test_interaction_is_elementwise_product(self, ds):
        design = iw.build_design(iw.parse_formula("~ age + married + age:married"), ds)
        age = ds.column("age").values
        married = ds.column("married").values
        j = design.names.index("age:married")
        assert np.allclose(design.matrix[:, j], age * married)

    def test_parameter_count_iv_model(self, ds):
        # intercept + treat + age + race(2) + married + re75 = 7 columns
        design = iw.build_design(iw.parse_formula("~ treat + age + race + married + re75"), ds)
        assert design.n_columns == 7


class TestDropAliased:
    def test_later_columns_dropped(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=50)
        b = rng.normal(size=50)
        M = np.column_stack([a, b, a + b, rng.normal(size=50)])
        kept, dropped = drop_aliased(M)
        assert kept == [0, 1, 3]
        assert dropped == [2]

    def test_row_weights_affect_rank(self):
        # column 1 varies only where the weight is zero -> aliased under weights
        M = np.column_stack([np.ones(4), np.array([0.0, 0.0, 0.0, 5.0])])
        kept, dropped = drop_aliased(M, row_weights=np.array([1.0, 1.0, 1.0, 0.0]))
        assert dropped == [1]


class TestBalanceExpansion:
    def test_all_levels_expanded(self, ds):
        f = iw.parse_formula("~ treat + age + race")
        matrix, names = iw.expand_balance_columns(f, ds, exclude=("treat",))
        assert names == ("age", "raceblack", "racehispanic", "racewhite")
        levels = matrix[:, 1:]
        assert np.allclose(levels.sum(axis=1), 1.0)

    def test_addl_appended_after_modeled(self, ds):
        f = iw.parse_formula("~ treat + age + race")
        addl = iw.parse_formula("~ married + re75")
        _, names = iw.expand_balance_columns(f, ds, addl, exclude=("treat",))
        assert names[-2:] == ("married", "re75")

    def test_addl_duplicates_not_repeated(self, ds):
        f = iw.parse_formula("~ treat + age")
        addl = iw.parse_formula("~ age + married")
        _, names = iw.expand_balance_columns(f, ds, addl, exclude=("treat",))
        assert names == ("age", "married")

    def test_unknown_addl_variable(self, ds):
        f = iw.parse_formula("~ treat + age")
        addl = iw.parse_formula("~ ghost")
        with pytest.raises(Exception, match="ghost"):
            iw.expand_balance_columns(f, ds, addl, exclude=("treat",))

    def test_binary_numeric_column_single_row(self, ds):
        f = iw.parse_formula("~ married")
        matrix, names = iw.expand_balance_columns(f, ds)
        assert names == ("married",)
        assert np.allclose(matrix[:, 0], ds.column("married").values)
