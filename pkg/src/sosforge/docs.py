"""Claim-to-test traceability matrix.

Each in-scope claim names the operation that implements it and the test that
exercises it. ``missing_tests`` is the completeness check: a row whose test
cannot be found in the test tree fails the build.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class TraceRow:
    claim: str
    summary: str
    operation: str
    test: str


@dataclass(frozen=True)
class OutOfScope:
    claim: str
    summary: str
    rationale: str


ROWS = (
    TraceRow("half-regular-target", "squares land in C^{k/2,a/2} or C^{(k-1)/2,(1+a)/2}", "field.SmoothnessClass.half_order", "tests/test_field.py::test_half_order_parity"),
    TraceRow("pointwise-seminorm", "sampled Hoelder seminorm of a derivative", "field.pointwise_seminorm_estimate", "tests/test_field.py::test_pointwise_seminorm_of_abs"),
    TraceRow("chain-rule", "derivatives of compositions through truncated Taylor composition", "field.taylor_compose", "tests/test_jet.py::test_composition_matches_closed_form"),
    TraceRow("implicit-derivatives", "derivatives of an implicitly defined minimiser", "decompose.FiberMinimizer.jet", "tests/test_decompose.py::test_minimizer_jet_matches_finite_differences"),
    TraceRow("taylor-gap", "Taylor remainder bounded by the top seminorm", "verify.check_taylor_gap", "tests/test_acceptance.py::test_inequality_suites"),
    TraceRow("power-difference", "|f^s(x)-f^s(y)| controlled by |x-y|^(a s)", "verify.check_power_difference", "tests/test_verify.py::test_power_difference_abs"),
    TraceRow("degree-colouring", "greedy colouring with at most max degree + 1 classes", "graph.degree_certificate", "tests/test_graph.py::test_degree_bound_colouring"),
    TraceRow("ordering-colouring", "greedy bound max_i min(d_i + 1, i)", "graph.welsh_powell_bound", "tests/test_graph.py::test_welsh_powell_bound_holds"),
    TraceRow("structure-colouring", "no alpha_s structure implies at most s greedy classes", "graph.alpha_s_structure_present", "tests/test_acceptance.py::test_coloring"),
    TraceRow("planar-colouring", "planar cube graphs need few classes", "graph.welsh_powell_color", "tests/test_graph.py::test_planar_partitions_use_few_classes"),
    TraceRow("odd-moment-weights", "positive rational weights isolating the top odd moment", "oddvand.odd_moment_weights", "tests/test_acceptance.py::test_odd_moment_lemma"),
    TraceRow("cube-construction", "maximal dyadic cubes sized by the control value", "whitney.build_partition", "tests/test_acceptance.py::test_partition"),
    TraceRow("bounded-overlap", "each point meets at most 2^n dilated cubes", "whitney.overlap_count", "tests/test_whitney.py::test_overlap_bound_adaptive"),
    TraceRow("bump-estimates", "bump derivatives scale like r^-|b|", "verify.check_bump_estimates", "tests/test_acceptance.py::test_regularity"),
    TraceRow("disjoint-classes", "same-class cubes have disjoint dilated supports", "verify.check_disjoint_supports", "tests/test_whitney.py::test_colour_classes_disjoint"),
    TraceRow("nine-classes", "planar partitions coloured with at most nine classes", "graph.welsh_powell_color", "tests/test_acceptance.py::test_coloring"),
    TraceRow("control-function", "r as the max of positive even directional derivatives", "control.ControlFunction", "tests/test_control.py::test_control_of_quadratic"),
    TraceRow("derivative-control", "|d^l f| <= C r^(k+a-l)", "control.check_derivative_control", "tests/test_acceptance.py::test_regularity"),
    TraceRow("slow-variation", "r changes by a bounded factor within nu r", "control.validate_slow_variation", "tests/test_control.py::test_slow_variation"),
    TraceRow("supplementary-constants", "fitted omega and fibre curvature floor", "decompose.FiberMinimizer.check_curvature", "tests/test_decompose.py::test_degenerate_fiber_rejected"),
    TraceRow("branch-choice", "root branch when f is large against r^(k+a)", "decompose.classify_cube", "tests/test_decompose.py::test_classify_root_and_min"),
    TraceRow("window-minimum", "one minimum per fibre inside the window", "decompose.FiberMinimizer.solve", "tests/test_decompose.py::test_fiber_minimum_in_window"),
    TraceRow("signed-factor", "f - F equals a square of a smooth signed factor", "decompose.MinBranchData.signed_factor", "tests/test_decompose.py::test_signed_factor_square"),
    TraceRow("remainder-estimates", "remainder derivatives scale like r^(k+a-|b|)", "verify.check_remainder_estimates", "tests/test_acceptance.py::test_regularity"),
    TraceRow("remainder-extension", "remainder extended beyond the cube without losing regularity", "decompose.ExtendedRemainder", "tests/test_decompose.py::test_extended_remainder_agrees_inside"),
    TraceRow("root-estimates", "half-regular estimates for psi sqrt f", "verify.check_piece_estimates", "tests/test_acceptance.py::test_regularity"),
    TraceRow("recursive-construction", "dimension-by-dimension local decomposition", "decompose.decompose", "tests/test_acceptance.py::test_decomposition"),
    TraceRow("recombination", "same-class local squares sum to one global square", "decompose.SquareTerm", "tests/test_decompose.py::test_recombination_matches_pieces"),
    TraceRow("count-recursion", "s_n = (4^n - 2^n)(s_{n-1} + 1)", "bounds.upper_count", "tests/test_acceptance.py::test_counting"),
    TraceRow("count-closed-form", "s_n < 2^(n^2+n-1.3844)", "bounds.upper_bound_check", "tests/test_acceptance.py::test_counting"),
    TraceRow("high-order-gate", "k >= 4 in the plane only under a growth condition", "control.check_needed_condition", "tests/test_control.py::test_needed_condition_gate"),
    TraceRow("lower-bound", "product lower bound on the number of squares", "bounds.lower_bound", "tests/test_acceptance.py::test_lower_bound"),
    TraceRow("gradient-bound", "|grad f|^2 <= C f for k = 1", "verify.check_gradient_bound", "tests/test_acceptance.py::test_inequality_suites"),
    TraceRow("direct-root", "k = 1 needs only sqrt f", "decompose.sqrt_field", "tests/test_acceptance.py::test_k1_path"),
)

OUT_OF_SCOPE = (
    OutOfScope(
        "compactness-limit",
        "existence of functions with no finite decomposition by a limiting argument",
        "The argument extracts a limit from an infinite family and produces no object a program could build or check. "
        "Nothing here depends on it, so it is recorded rather than implemented.",
    ),
    OutOfScope(
        "non-sos-consequences",
        "consequences that some functions need arbitrarily many squares or none",
        "These follow from the limiting argument above and would need a polynomial sum-of-squares feasibility test, "
        "which requires semidefinite programming and is outside this package.",
    ),
    OutOfScope(
        "existence-counterexample",
        "existence of a non-decomposable smooth function",
        "Non-constructive; no finite computation witnesses it.",
    ),
    OutOfScope(
        "infinite-graph-colouring",
        "colourability of an infinite graph from its finite subgraphs",
        "All partitions built here are finite truncations of the box, so the finite colouring is used directly "
        "and the passage to infinite graphs never arises.",
    ),
    OutOfScope(
        "classical-existence",
        "classical facts about non-negative polynomials that are not sums of squares",
        "Background only. The Motzkin polynomial appears in the corpus as a test input, nothing more.",
    ),
)


def test_ids(root: Path) -> set[str]:
    """All ``path::name`` ids of top-level test functions under ``root/tests``."""
    ids = set()
    for path in sorted((root / "tests").glob("test_*.py")):
        tree = ast.parse(path.read_text())
        rel = path.relative_to(root).as_posix()
        for node in tree.body:
            if isinstance(node, ast.FunctionDef) and node.name.startswith("test_"):
                ids.add(f"{rel}::{node.name}")
    return ids


def missing_tests(root: Path) -> list[TraceRow]:
    known = test_ids(root)
    return [row for row in ROWS if row.test not in known]


def duplicate_claims() -> list[str]:
    seen, dup = set(), []
    for claim in [r.claim for r in ROWS] + [o.claim for o in OUT_OF_SCOPE]:
        if claim in seen:
            dup.append(claim)
        seen.add(claim)
    return dup


def emit_trace_matrix() -> str:
    lines = ["# Traceability matrix", "", "| claim | statement | implemented by | exercised by |", "|---|---|---|---|"]
    lines += [f"| {r.claim} | {r.summary} | `{r.operation}` | `{r.test}` |" for r in ROWS]
    lines += ["", "## Out of scope", ""]
    for o in OUT_OF_SCOPE:
        lines += [f"### {o.claim}: OUT OF SCOPE", "", f"*{o.summary}.*", "", o.rationale, ""]
    return "\n".join(lines)


def write_trace_matrix(root: Path) -> Path:
    path = root / "docs" / "trace.md"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(emit_trace_matrix())
    return path


if __name__ == "__main__":
    import sys

    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path.cwd()
    print(write_trace_matrix(target))
