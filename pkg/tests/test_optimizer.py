"""Steepest-descent loop: convergence, monotonicity, determinism."""

import numpy as np
import pytest

from leangrape import costs, optimizer, sparse
from leangrape.costs import CostKind, CostTerm

from conftest import random_hermitian, random_state

SX = np.array([[0, 1], [1, 0]], complex)


def rabi_problem(tau=1e-10):
    """Single qubit, one sigma_x channel, transfer |0> -> |1>."""
    problem = costs.ControlProblem(
        sparse.build_csr([], 2, 2),
        (sparse.from_dense(SX),),
        tau=tau,
        initial_state=np.array([1.0, 0.0], complex),
    )
    terms = [
        CostTerm(CostKind.STATE_INFIDELITY, 1.0, target_state=np.array([0.0, 1.0], complex))
    ]
    return problem, terms


class TestGrapeOptimize:
    def test_zero_gradient_terminates_immediately(self, rng):
        d = 3
        problem = costs.ControlProblem(
            sparse.from_dense(random_hermitian(rng, d)),
            (sparse.build_csr([], d, d),),  # control couples to nothing
            initial_state=random_state(rng, d),
        )
        terms = [
            CostTerm(CostKind.STATE_INFIDELITY, 1.0, target_state=random_state(rng, d))
        ]
        a0 = costs.ControlField.constant(0.3, 4, 1, 0.2)
        cfg = optimizer.OptimizerConfig(max_iters=10, stop_grad_norm=1e-12)
        trace = optimizer.grape_optimize(problem, terms, a0, cfg)
        assert trace.stop_reason == "stop_grad_norm"
        assert len(trace.records) == 1
        assert np.array_equal(trace.final_field.amplitudes, a0.amplitudes)

    def test_rabi_transfer_converges(self):
        problem, terms = rabi_problem()
        a0 = costs.ControlField.constant(0.1, 10, 1, 0.1)
        cfg = optimizer.OptimizerConfig(
            max_iters=200, eta0=0.1, eta_schedule="backtracking", stop_cost=1e-7
        )
        trace = optimizer.grape_optimize(problem, terms, a0, cfg)
        assert trace.final_cost <= 1e-6
        assert trace.stop_reason == "stop_cost"

    def test_backtracking_costs_non_increasing(self, rng):
        for seed in range(20):
            local = np.random.default_rng(seed)
            d, n, k = 4, 5, 2
            psi0 = random_state(local, d)
            problem = costs.ControlProblem(
                sparse.from_dense(random_hermitian(local, d)),
                tuple(sparse.from_dense(random_hermitian(local, d)) for _ in range(k)),
                tau=1e-10,
                initial_state=psi0,
            )
            terms = [
                CostTerm(
                    CostKind.STATE_INFIDELITY, 1.0, target_state=random_state(local, d)
                )
            ]
            a0 = costs.ControlField(n, k, 0.2, local.normal(scale=0.3, size=(n, k)))
            cfg = optimizer.OptimizerConfig(max_iters=15, eta0=0.5)
            trace = optimizer.grape_optimize(problem, terms, a0, cfg)
            cost_seq = [r.cost for r in trace.records]
            assert all(a >= b - 1e-15 for a, b in zip(cost_seq, cost_seq[1:]))

    def test_constant_schedule_runs_to_budget(self):
        problem, terms = rabi_problem()
        a0 = costs.ControlField.constant(0.1, 5, 1, 0.1)
        cfg = optimizer.OptimizerConfig(
            max_iters=5, eta0=0.05, eta_schedule="constant"
        )
        trace = optimizer.grape_optimize(problem, terms, a0, cfg)
        assert len(trace.records) == 5
        assert trace.stop_reason == "max_iters"

    def test_deterministic_traces(self):
        problem, terms = rabi_problem()
        a0 = costs.ControlField.constant(0.1, 8, 1, 0.1)
        cfg = optimizer.OptimizerConfig(max_iters=30, eta0=0.2)
        t1 = optimizer.grape_optimize(problem, terms, a0, cfg)
        t2 = optimizer.grape_optimize(problem, terms, a0, cfg)
        assert [r.cost for r in t1.records] == [r.cost for r in t2.records]
        assert [r.grad_inf_norm for r in t1.records] == [
            r.grad_inf_norm for r in t2.records
        ]
        assert np.array_equal(t1.final_field.amplitudes, t2.final_field.amplitudes)

    def test_csv_lines_shape(self):
        problem, terms = rabi_problem()
        a0 = costs.ControlField.constant(0.1, 4, 1, 0.1)
        cfg = optimizer.OptimizerConfig(max_iters=3)
        trace = optimizer.grape_optimize(problem, terms, a0, cfg)
        lines = trace.to_csv_lines()
        assert lines[0] == "iter,cost,grad_inf_norm,eta,wall_ms"
        assert len(lines) == len(trace.records) + 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            optimizer.OptimizerConfig(eta0=-1.0)
        with pytest.raises(ValueError):
            optimizer.OptimizerConfig(eta_schedule="adam")
        with pytest.raises(ValueError):
            optimizer.OptimizerConfig(shrink=1.5)

    def test_divergence_aborts_with_partial_trace(self):
        # a wildly large constant step blows the amplitudes up; the run must
        # return what it recorded so far instead of raising
        problem, terms = rabi_problem()
        a0 = costs.ControlField.constant(0.1, 5, 1, 0.1)
        cfg = optimizer.OptimizerConfig(
            max_iters=400, eta0=1e9, eta_schedule="constant"
        )
        trace = optimizer.grape_optimize(problem, terms, a0, cfg)
        assert trace.records
        assert trace.stop_reason.startswith("evaluation_failure") or trace.stop_reason in (
            "max_iters",
            "stop_cost",
        )
