"""Named experiment configurations for the published figure runs.

Dicke-type presets are in units of ``kappa``; spinor presets in units of
``Lambda`` (time ``Lambda t``).
"""

PRESETS = {
    "fig2": {
        "command": "trajectories",
        "variant": "tavis_cummings",
        "N": 10,
        "params": {"omega": 0.0, "omega0": 0.0, "lambda_minus": 6.0, "lambda_plus": 0.0, "kappa": 1.0},
        "initial": "m0",
        "trajectory": {"dt": 0.005, "t_max": 10.0, "sample_interval": 0.1, "seed": 2, "n_traj": 1000},
    },
    "fig3": {
        "command": "trajectories",
        "variant": "spinor",
        "N": 40,
        "params": {"Lambda": 1.0, "gamma_over_lambda": [0.0, 0.001, 0.005], "omega0_prime": 0.0},
        "schedule": {"kind": "exponential", "q0": 7.0, "xi": 0.08},
        "initial": "m0",
        "trajectory": {"dt": 0.002, "t_max": 100.0, "sample_interval": 0.5, "seed": 3, "n_traj": 1000},
    },
    "fig4a": {
        "command": "scan",
        "N": 40,
        "gamma_over_lambda": 0.001,
        "schedule": {"kind": "exponential", "t_max": 100.0},
        "q0_grid": None,
        "xi_grid": [0.08],
        "dt": 0.002,
    },
    "fig5": {
        "command": "scan",
        "N": 1000,
        "gamma_over_lambda": 0.001,
        "schedule": {"kind": "exponential", "t_max": 200.0},
        "q0_grid": None,
        "xi_grid": [0.05],
        "dt": 2e-4,
    },
}
