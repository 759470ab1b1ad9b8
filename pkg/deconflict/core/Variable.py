"""Variable module: Reverse-mode differentiation over numpy arrays.

Each Variable records the Variables it was computed from and a closure that
pushes its gradient back to them. Calling backward() on a scalar Variable
walks the recorded graph in reverse topological order.

Class
-----
Variable
    A node in the computation graph holding a float64 array.

Functions
---------
constant(x)
    Wrap x as a Variable that is not differentiated.
concat(variables, axis)
    Concatenate Variables along an axis.
tanh(v), abs_(v), relu(v), sqrt(v)
    Elementwise nonlinearities.
cosine_similarity(a, b)
    Differentiable cosine of two Variables flattened to vectors.
"""

# Third-party imports
import numpy as np

# Local imports
from deconflict.exceptions import ContractError

class Variable:
    """A node in a reverse-mode computation graph.

    Attributes
    ----------
    value: numpy.ndarray
        float64 value computed in the forward pass
    grad: numpy.ndarray
        accumulated gradient of the output with respect to value
    name: str
        optional label used by Program to look up leaf gradients

    Methods
    -------
    backward()
        propagate gradients from this scalar Variable to every ancestor
    sum(axis), mean(axis), reshape(shape)
        differentiable reductions and reshapes
    """

    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward=None, name=None):
        """
        Parameters
        ----------
        value: array_like
            forward value, stored as float64
        parents: tuple
            Variables this node was computed from
        backward: callable
            closure taking this node's gradient and accumulating into parents
        name: str
            optional leaf label
        """

        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.name = name
        self._parents = parents
        self._backward = backward

    def __repr__(self):
        return f"Variable(shape={self.value.shape}, name={self.name})"

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        """Add g to this node's gradient."""

        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad = self.grad + g

    def backward(self):
        """Propagate gradients from this scalar Variable to its ancestors."""

        if self.value.size != 1:
            raise ContractError(f"backward needs a scalar output, got shape {self.value.shape}")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))

        for node in topo:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Arithmetic
    def __add__(self, other):
        other = _lift(other)
        out_value = self.value + other.value
        def _backward(g):
            self.accumulate(_unbroadcast(g, self.value.shape))
            other.accumulate(_unbroadcast(g, other.value.shape))
        return Variable(out_value, (self, other), _backward)

    def __radd__(self, other):
        return _lift(other) + self

    def __sub__(self, other):
        other = _lift(other)
        out_value = self.value - other.value
        def _backward(g):
            self.accumulate(_unbroadcast(g, self.value.shape))
            other.accumulate(_unbroadcast(-g, other.value.shape))
        return Variable(out_value, (self, other), _backward)

    def __rsub__(self, other):
        return _lift(other) - self

    def __neg__(self):
        def _backward(g):
            self.accumulate(-g)
        return Variable(-self.value, (self,), _backward)

    def __mul__(self, other):
        other = _lift(other)
        out_value = self.value * other.value
        def _backward(g):
            self.accumulate(_unbroadcast(g * other.value, self.value.shape))
            other.accumulate(_unbroadcast(g * self.value, other.value.shape))
        return Variable(out_value, (self, other), _backward)

    def __rmul__(self, other):
        return _lift(other) * self

    def __truediv__(self, other):
        other = _lift(other)
        out_value = self.value / other.value
        def _backward(g):
            self.accumulate(_unbroadcast(g / other.value, self.value.shape))
            other.accumulate(_unbroadcast(-g * self.value / (other.value * other.value),
                                          other.value.shape))
        return Variable(out_value, (self, other), _backward)

    def __rtruediv__(self, other):
        return _lift(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Variable):
            raise ContractError("only constant exponents are supported")
        out_value = self.value ** exponent
        def _backward(g):
            self.accumulate(g * exponent * self.value ** (exponent - 1))
        return Variable(out_value, (self,), _backward)

    def __matmul__(self, other):
        other = _lift(other)
        out_value = self.value @ other.value
        def _backward(g):
            a, b = self.value, other.value
            if a.ndim == 1 and b.ndim == 1:
                self.accumulate(g * b)
                other.accumulate(g * a)
            elif a.ndim == 1:
                self.accumulate(b @ g)
                other.accumulate(np.outer(a, g))
            elif b.ndim == 1:
                self.accumulate(np.outer(g, b))
                other.accumulate(a.T @ g)
            else:
                self.accumulate(g @ b.T)
                other.accumulate(a.T @ g)
        return Variable(out_value, (self, other), _backward)

    def __rmatmul__(self, other):
        return _lift(other) @ self

    # Reductions and reshapes
    def sum(self, axis=None):
        out_value = np.sum(self.value, axis=axis)
        shape = self.value.shape
        def _backward(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            self.accumulate(np.broadcast_to(g, shape))
        return Variable(out_value, (self,), _backward)

    def mean(self, axis=None):
        count = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis) / float(count)

    def reshape(self, shape):
        old = self.value.shape
        def _backward(g):
            self.accumulate(np.reshape(g, old))
        return Variable(np.reshape(self.value, shape), (self,), _backward)

    def __getitem__(self, index):
        old = self.value.shape
        def _backward(g):
            full = np.zeros(old, dtype=np.float64)
            np.add.at(full, index, g)
            self.accumulate(full)
        return Variable(self.value[index], (self,), _backward)

# Functions
def constant(x):
    """Wrap x as a Variable outside the differentiated set."""

    return x if isinstance(x, Variable) else Variable(x)

def _lift(x):
    return x if isinstance(x, Variable) else Variable(x)

def _unbroadcast(g, shape):
    """Sum g down to shape, undoing numpy broadcasting."""

    g = np.asarray(g, dtype=np.float64)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)

def tanh(v):
    """Elementwise hyperbolic tangent."""

    y = np.tanh(v.value)
    def _backward(g):
        v.accumulate(g * (1.0 - y * y))
    return Variable(y, (v,), _backward)

def abs_(v):
    """Elementwise absolute value; subgradient 0 at 0."""

    s = np.sign(v.value)
    def _backward(g):
        v.accumulate(g * s)
    return Variable(np.abs(v.value), (v,), _backward)

def relu(v):
    """Elementwise max(0, v)."""

    on = (v.value > 0).astype(np.float64)
    def _backward(g):
        v.accumulate(g * on)
    return Variable(v.value * on, (v,), _backward)

def sqrt(v):
    """Elementwise square root."""

    y = np.sqrt(v.value)
    def _backward(g):
        v.accumulate(g * 0.5 / y)
    return Variable(y, (v,), _backward)

def concat(variables, axis=-1):
    """Concatenate Variables along axis."""

    variables = [_lift(v) for v in variables]
    values = [v.value for v in variables]
    out_value = np.concatenate(values, axis=axis)
    sizes = np.cumsum([val.shape[axis] for val in values])[:-1]
    def _backward(g):
        for v, part in zip(variables, np.split(g, sizes, axis=axis)):
            v.accumulate(part)
    return Variable(out_value, tuple(variables), _backward)

def cosine_similarity(a, b):
    """Differentiable cosine of a and b, both flattened to vectors.

    Zero-norm arguments are the caller's responsibility; the value is
    undefined there.
    """

    a = _lift(a).reshape((-1,))
    b = _lift(b).reshape((-1,))
    return (a @ b) / (sqrt((a * a).sum()) * sqrt((b * b).sum()))
