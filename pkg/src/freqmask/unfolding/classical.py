"""Explicit-regularizer block proximal gradient solver.

Runs the same block updates as the network with soft-threshold proximal
maps, one shared set of feature transforms and fixed scalars, so the
objective is well defined across iterations.
"""

from .layers import SoftThresholdProx
from .operators import AblationMode, classical_objective, d_step, k_step, s_step, x_step

__all__ = ["solve_classical"]


def solve_classical(state, values, k_meas, mask, transforms, lambdas, iterations=20, mode="full"):
    """Iterate the X, K, S, D updates and track the objective.

    Parameters
    ----------
    state : UnfoldingState
        Starting point; ``Y_SA`` stays fixed.
    values : StepValues
        Weights, steps and inertial factors used at every iteration.
    lambdas : dict
        l1 weights for blocks ``x``, ``k``, ``s`` and ``d``.

    Returns
    -------
    state : UnfoldingState
        Final iterate.
    history : list of float
        Objective before the first and after every iteration.
    """
    mode = AblationMode(mode)
    prox = {name: SoftThresholdProx(lambdas.get(name, 0.0)) for name in ("x", "k", "s", "d")}

    def h(s):
        return float(classical_objective(s, values, k_meas, mask, transforms, lambdas, mode))

    history = [h(state)]
    for _ in range(iterations):
        x = x_step(state, values, k_meas, mask, transforms, prox["x"], mode)
        state = state.with_updates(X=x, X_prev=state.X)
        if mode.uses_kspace:
            k = k_step(state, values, prox["k"], prox["k"], mode)
            state = state.with_updates(K=k, K_prev=state.K)
        if mode.uses_decomposition:
            s = s_step(state, values, transforms, prox["s"], mode)
            state = state.with_updates(S=s, S_prev=state.S)
            d = d_step(state, values, prox["d"], mode)
            state = state.with_updates(D=d, D_prev=state.D)
        history.append(h(state))
    return state, history
