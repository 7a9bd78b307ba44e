from typing import NewType

# Calendar time in years, t ∈ [0, T].
Time = NewType("Time", float)
# Backward (diffusion) time, τ(t) = ∫_t^T σ²/2.
BackwardTime = NewType("BackwardTime", float)
# Index of a node on the backward-time grid.
NodeIndex = NewType("NodeIndex", int)
