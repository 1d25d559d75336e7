"""Kinodynamic motion planning toolkit.

Library layout:

- ``dynamics``   -- robot models, discrete stepping, analytic Jacobians
- ``world``      -- workspaces, obstacles, collision checking, instance generation
- ``primitives`` -- motion-primitive representation, random generation, persistence
- ``dbastar``    -- discontinuity-bounded A* over primitive sets
- ``trajopt``    -- penalty-method Gauss-Newton trajectory optimization
- ``planner``    -- the anytime outer loop alternating search and optimization
- ``diffusion``  -- conditional denoising-diffusion generator for primitives
- ``datagen``    -- training-dataset pipeline (solve, cut, encode, persist)
- ``bench``      -- benchmark harness (success rates, median regret, reports)
- ``cli``        -- command-line entry point wiring the subcommands
"""

__version__ = "0.1.0"
