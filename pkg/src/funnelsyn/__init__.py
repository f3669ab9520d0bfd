"""Joint trajectory and controlled invariant funnel synthesis for
locally Lipschitz discrete-time nonlinear systems under norm-bounded
disturbances."""

__version__ = "0.1.0"
