"""Optimizer module: First-order update rules on flat parameter vectors.

Classes
-------
Optimizer
    Abstract update rule.
SGD
    Plain gradient descent with optional decoupled weight decay.
AdamW
    Adaptive-moment descent with decoupled weight decay.

Functions
---------
make_optimizer(name, lr, weight_decay)
    Return an optimizer by name ("sgd" or "adaptive-moment").
clip_by_norm(grad, max_norm)
    Rescale grad so its L2 norm is at most max_norm.
"""

# Standard imports
from abc import ABCMeta, abstractmethod

# Third-party imports
import numpy as np

# Local imports
from deconflict.exceptions import ContractError

OPTIMIZERS = ("sgd", "adaptive-moment", "adamw")

class Optimizer(metaclass=ABCMeta):
    """Abstract update rule over a flat float64 parameter vector.

    Methods
    -------
    step(theta, grad, where)
        return the updated vector; entries outside where stay bitwise equal
    """

    def __init__(self, lr, weight_decay=0.0):
        """
        Parameters
        ----------
        lr: float
            learning rate
        weight_decay: float
            decoupled weight decay coefficient
        """

        if lr <= 0:
            raise ContractError("learning rate must be positive")
        self.lr = lr
        self.weight_decay = weight_decay

    @classmethod
    def __subclasshook__(cls, subclass):
        return (hasattr(subclass, 'step') and
                callable(subclass.step) or
                NotImplemented)

    @abstractmethod
    def direction(self, grad):
        """Return the descent direction for grad."""

        raise NotImplementedError

    def step(self, theta, grad, where=None):
        """Return theta after one update.

        Parameters
        ----------
        theta: numpy.ndarray
            flat parameter vector (not modified)
        grad: numpy.ndarray
            gradient of the loss at theta
        where: slice or numpy.ndarray
            optional subset of entries to update
        """

        out = np.array(theta, dtype=np.float64, copy=True)
        if where is None:
            where = slice(None)
        d = self.direction(grad[where])
        if self.weight_decay:
            out[where] = out[where] - self.lr * (d + self.weight_decay * out[where])
        else:
            out[where] = out[where] - self.lr * d
        return out

class SGD(Optimizer):
    """Plain gradient descent."""

    def direction(self, grad):
        return grad

class AdamW(Optimizer):
    """Adaptive-moment descent with decoupled weight decay."""

    def __init__(self, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(lr, weight_decay)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def direction(self, grad):
        if self.m is None or self.m.shape != grad.shape:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
            self.t = 0
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)

def make_optimizer(name, lr, weight_decay=0.0):
    """Return an optimizer by name: "sgd" or "adaptive-moment"."""

    if name == "sgd":
        return SGD(lr, weight_decay)
    if name in ("adaptive-moment", "adamw"):
        return AdamW(lr, weight_decay)
    raise ContractError(f"unknown optimizer: {name}")

def clip_by_norm(grad, max_norm):
    """Return grad rescaled to L2 norm max_norm when it is longer."""

    if not max_norm:
        return grad
    n = float(np.sqrt(np.dot(grad, grad)))
    if n > max_norm:
        return grad * (max_norm / n)
    return grad
