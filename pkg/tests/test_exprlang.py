import math

import numpy as np
import pytest

from cosymkit.exprlang import (
    Add,
    Const,
    EvalDomainError,
    Mul,
    ParseError,
    Pow,
    UnknownIdentifierError,
    Var,
    differentiate,
    parse,
    to_source,
)

NAMES = ("t", "q", "p")


def test_parse_polynomial_eval():
    e = parse("q^2 + p^2", NAMES)
    assert e.value(np.array([0.0, 1.0, 2.0])) == 5.0


def test_sin_gradient_at_zero():
    e = parse("sin(q)", NAMES)
    g = e.gradient(np.array([0.0, 0.0, 0.0]))
    assert g[1] == 1.0
    assert g[0] == g[2] == 0.0


def test_syntax_error_offset():
    with pytest.raises(ParseError) as err:
        parse("q +", NAMES)
    assert err.value.offset == 3


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError) as err:
        parse("q + z", NAMES)
    assert err.value.name == "z"
    assert err.value.offset == 4


def test_empty_source_rejected():
    with pytest.raises(ParseError):
        parse("   ", NAMES)


def test_jet2_bilinear():
    e = parse("q*p", NAMES)
    jet = e.eval_jet2(np.array([0.0, 2.0, 3.0]))
    assert jet.value == 6.0
    assert np.array_equal(jet.gradient, [0.0, 3.0, 2.0])
    assert jet.hessian[1, 2] == 1.0 and jet.hessian[2, 1] == 1.0
    assert jet.hessian[1, 1] == 0.0


def test_jet2_square():
    e = parse("q^2", NAMES)
    jet = e.eval_jet2(np.array([0.0, 3.0, 0.0]))
    assert jet.value == 9.0
    assert jet.hessian[1, 1] == 2.0


def test_jet2_exp():
    e = parse("exp(q)", NAMES)
    jet = e.eval_jet2(np.array([0.0, 0.0, 0.0]))
    assert jet.value == 1.0
    assert jet.gradient[1] == 1.0
    assert jet.hessian[1, 1] == 1.0


def test_precedence_and_associativity():
    e = parse("1 - 2 - 3", NAMES)
    assert e.value(np.zeros(3)) == -4.0
    e = parse("2 + 3*2^2", NAMES)
    assert e.value(np.zeros(3)) == 14.0
    # '^' binds tighter than unary minus
    e = parse("-q^2", NAMES)
    assert e.value(np.array([0.0, 3.0, 0.0])) == -9.0
    # negative constant exponents fold at parse time
    e = parse("q^-2", NAMES)
    assert e.value(np.array([0.0, 2.0, 0.0])) == 0.25


def test_non_constant_exponent_rejected():
    with pytest.raises(ParseError):
        parse("q^p", NAMES)


def test_pi_constant():
    e = parse("cos(pi)", NAMES)
    assert e.value(np.zeros(3)) == -1.0


def test_no_implicit_multiplication():
    with pytest.raises(ParseError):
        parse("2 q", NAMES)


def test_coordinate_is_not_a_function():
    with pytest.raises(ParseError):
        parse("q(1)", NAMES)


def test_domain_errors_name_subexpression():
    e = parse("log(q - 1)", NAMES)
    with pytest.raises(EvalDomainError) as err:
        e.value(np.array([0.0, 0.5, 0.0]))
    assert "q - 1" in str(err.value)

    e = parse("sqrt(p)", NAMES)
    with pytest.raises(EvalDomainError):
        e.value(np.array([0.0, 0.0, -1.0]))

    e = parse("1/(q - q)", NAMES)
    with pytest.raises(EvalDomainError):
        e.value(np.array([0.0, 1.0, 0.0]))


def _random_polynomial(rng, names, degree=4):
    """Random polynomial AST of total degree <= ``degree``."""
    d = len(names)
    expr = Const(float(rng.uniform(-1, 1)))
    for _ in range(rng.integers(2, 6)):
        term = Const(float(rng.uniform(-1, 1)))
        total = 0
        for i in rng.permutation(d):
            if total >= degree:
                break
            k = int(rng.integers(0, min(3, degree - total) + 1))
            total += k
            if k == 1:
                term = Mul(term, Var(names[i], int(i)))
            elif k > 1:
                term = Mul(term, Pow(Var(names[i], int(i)), float(k)))
        expr = Add(expr, term)
    return expr


def test_jets_match_finite_differences():
    rng = np.random.default_rng(7)
    names = ("a", "b", "c", "u", "v")
    d = len(names)
    h = 1e-5
    for _ in range(25):
        e = _random_polynomial(rng, names)
        x = rng.uniform(-1.5, 1.5, size=d)
        jet = e.eval_jet2(x)
        assert np.array_equal(jet.hessian, jet.hessian.T)
        scale = max(1.0, abs(jet.value))
        for i in range(d):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fd = (e.value(xp) - e.value(xm)) / (2 * h)
            assert abs(fd - jet.gradient[i]) <= 1e-6 * max(scale, abs(fd))
        for i in range(d):
            for j in range(d):
                xpp, xpm, xmp, xmm = x.copy(), x.copy(), x.copy(), x.copy()
                if i == j:
                    xpp[i] += 2 * h
                    xmm[i] -= 2 * h
                    fd = (e.value(xpp) - 2 * e.value(x) + e.value(xmm)) / (4 * h * h)
                else:
                    xpp[i] += h
                    xpp[j] += h
                    xmm[i] -= h
                    xmm[j] -= h
                    xpm[i] += h
                    xpm[j] -= h
                    xmp[i] -= h
                    xmp[j] += h
                    fd = (
                        e.value(xpp) - e.value(xpm) - e.value(xmp) + e.value(xmm)
                    ) / (4 * h * h)
                assert abs(fd - jet.hessian[i, j]) <= 1e-4 * max(scale, abs(fd))


def _random_ast(rng, names, depth):
    d = len(names)
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.4:
            return Const(float(np.round(rng.uniform(-3, 3), 3)))
        i = int(rng.integers(0, d))
        return Var(names[i], i)
    kind = rng.integers(0, 6)
    if kind == 0:
        from cosymkit.exprlang import Neg

        return Neg(_random_ast(rng, names, depth - 1))
    if kind == 1:
        return Add(_random_ast(rng, names, depth - 1), _random_ast(rng, names, depth - 1))
    if kind == 2:
        from cosymkit.exprlang import Sub

        return Sub(_random_ast(rng, names, depth - 1), _random_ast(rng, names, depth - 1))
    if kind == 3:
        return Mul(_random_ast(rng, names, depth - 1), _random_ast(rng, names, depth - 1))
    if kind == 4:
        from cosymkit.exprlang import Div

        return Div(_random_ast(rng, names, depth - 1), _random_ast(rng, names, depth - 1))
    from cosymkit.exprlang import Call

    fn = ("sin", "cos", "exp", "log", "sqrt")[rng.integers(0, 5)]
    return Call(fn, _random_ast(rng, names, depth - 1))


def test_print_parse_roundtrip_50_expressions():
    rng = np.random.default_rng(11)
    names = ("t", "q", "p")
    count = 0
    while count < 50:
        ast = _random_ast(rng, names, depth=4)
        src = to_source(ast)
        reparsed = parse(src, names)
        assert to_source(reparsed) == src
        assert parse(to_source(reparsed), names) == reparsed
        count += 1


def test_roundtrip_handwritten_corpus():
    cases = [
        "q^2 + p^2",
        "(q + p)^3",
        "sin(q)*cos(p) - exp(t/2)",
        "1/(1 + q^2)",
        "sqrt(q^2 + 1)",
        "-q - -p",
        "q^-1",
        "2*pi*q",
        "log(exp(q))",
        "q/p/t",
        "q - (p - t)",
    ]
    for src in cases:
        ast = parse(src, NAMES)
        assert parse(to_source(ast), NAMES) == ast


def test_differentiate_matches_jets():
    rng = np.random.default_rng(3)
    names = ("t", "q", "p")
    for src in ["q^2*p", "sin(q*p)", "exp(t)*cos(q)", "q/(1 + p^2)", "sqrt(1 + q^2)"]:
        e = parse(src, names)
        for _ in range(5):
            x = rng.uniform(0.2, 1.5, size=3)
            g = e.gradient(x)
            for i in range(3):
                de = differentiate(e, i)
                assert de.value(x) == pytest.approx(g[i], rel=1e-12, abs=1e-12)


def test_evaluation_deterministic():
    e = parse("sin(q)*exp(p) + q^3/7", NAMES)
    x = np.array([0.3, 1.1, -0.4])
    assert e.value(x) == e.value(x.copy())
    j1 = e.eval_jet2(x)
    j2 = e.eval_jet2(x)
    assert j1.value == j2.value
    assert np.array_equal(j1.gradient, j2.gradient)
    assert np.array_equal(j1.hessian, j2.hessian)


def test_pretty_print_of_pi():
    e = parse("pi", NAMES)
    assert to_source(e) == "pi"
    assert e.value(np.zeros(3)) == math.pi
