"""Program module: Differentiable programs over named parameters and inputs.

Class
-----
DifferentiableProgram
    A scalar-valued composition of Variable operations.

Functions
---------
grad(program, wrt)
    Return the gradient of a program with respect to a named leaf.
"""

# Third-party imports
import numpy as np

# Local imports
from deconflict.core.Variable import Variable
from deconflict.exceptions import ContractError

class DifferentiableProgram:
    """A scalar-valued function of named parameter groups and named inputs.

    The leaves are rebuilt as fresh Variables on every evaluation, so
    gradient queries never touch the arrays held by the program.

    Attributes
    ----------
    fn: callable
        function taking a dict of name -> Variable and returning a Variable
    params: dict
        parameter group name -> numpy.ndarray
    inputs: dict
        input name -> numpy.ndarray

    Methods
    -------
    evaluate()
        return the scalar value of the program
    value_and_grad(wrt)
        return the value and gradients for one or more leaf names
    """

    def __init__(self, fn, params, inputs=None):
        """
        Parameters
        ----------
        fn: callable
            maps a dict of leaf Variables to a scalar Variable
        params: dict
            parameter group name -> array
        inputs: dict
            input name -> array
        """

        self.fn = fn
        self.params = params
        self.inputs = inputs or {}
        overlap = set(self.params) & set(self.inputs)
        if overlap:
            raise ContractError(f"names used as both parameter and input: {sorted(overlap)}")

    def _leaves(self):
        leaves = {}
        for name, value in list(self.params.items()) + list(self.inputs.items()):
            leaves[name] = Variable(value, name=name)
        return leaves

    def _run(self, leaves):
        out = self.fn(leaves)
        if not isinstance(out, Variable):
            out = Variable(out)
        if out.value.size != 1:
            raise ContractError(f"program output must be scalar, got shape {out.value.shape}")
        return out

    def evaluate(self):
        """Return the scalar value of the program."""

        return float(self._run(self._leaves()).value)

    def value_and_grad(self, wrt):
        """Return (value, gradient) for leaf name(s) wrt.

        Parameters
        ----------
        wrt: str or list
            leaf name, or list of leaf names

        Returns
        -------
        tuple of float and numpy.ndarray (or dict of name -> numpy.ndarray
        when wrt is a list)
        """

        leaves = self._leaves()
        names = [wrt] if isinstance(wrt, str) else list(wrt)
        for name in names:
            if name not in leaves:
                raise ContractError(f"unknown program leaf: {name}")
        out = self._run(leaves)
        out.backward()
        grads = {}
        for name in names:
            leaf = leaves[name]
            grads[name] = np.zeros_like(leaf.value) if leaf.grad is None else np.array(leaf.grad)
        value = float(out.value)
        return (value, grads[wrt]) if isinstance(wrt, str) else (value, grads)

def grad(program, wrt):
    """Return the reverse-mode gradient of program with respect to wrt.

    The result has the shape of the named group; a program that does not
    depend on it yields a zero tensor.
    """

    return program.value_and_grad(wrt)[1]
