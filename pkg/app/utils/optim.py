from typing import Dict

import numpy as np


class GradientDescent:
    """Plain gradient descent with optional heavy-ball momentum.

    Parameters are updated in place, so models keep their array references.
    """

    def __init__(self, step_size: float, momentum: float = 0.0):
        self.step_size = step_size
        self.momentum = momentum
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        for name, grad in grads.items():
            update = grad
            if self.momentum:
                previous = self.velocity.get(name)
                update = grad.copy() if previous is None else self.momentum * previous + grad
                self.velocity[name] = update
            params[name] -= self.step_size * update
