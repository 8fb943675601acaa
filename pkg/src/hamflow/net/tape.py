"""Reverse-mode automatic differentiation on a linear tape.

A :class:`Tape` records every primitive applied to its :class:`Var` handles.
The primitive functions in this module (``add``, ``matmul``, ``tanh``, ...)
dispatch on their arguments: with no ``Var`` involved they return plain numpy
results, so the same model and integrator code runs with or without a tape.

Example::

    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    y = 0.5 * sqnorm(x)
    (gx,) = tape.grad(y, [x])       # -> [1., 2.]
"""

import numpy as np

from ..errors import TapeError

_OPS = {}


def _op(name):
    def register(cls):
        _OPS[name] = cls
        return cls
    return register


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(ax, keepdims=True)
    return g


class Var:
    """Handle to a value recorded on a tape."""

    __slots__ = ("tape", "idx")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.values[self.idx]

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(#{self.idx}, shape={self.shape})"

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __getitem__(self, key): return getitem(self, key)

    def __pow__(self, p):
        if p != 2:
            raise TapeError("only squaring is supported")
        return square(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return mean(self, axis=axis)


class Tape:
    def __init__(self):
        self.ops = []
        self.parents = []
        self.attrs = []
        self.values = []
        self.needs = []
        self._sources = {}
        self._bound = {}

    def __len__(self):
        return len(self.values)

    def _push(self, op, parents, value, attrs, needs):
        self.ops.append(op)
        self.parents.append(parents)
        self.attrs.append(attrs)
        self.values.append(value)
        self.needs.append(needs)
        return Var(self, len(self.values) - 1)

    def leaf(self, value, requires_grad=True):
        """Record an input. A later in-place change to ``value`` is detected by :meth:`grad`."""
        arr = np.array(value, dtype=np.float64)
        v = self._push("leaf", (), arr, None, requires_grad)
        if isinstance(value, np.ndarray):
            self._sources[v.idx] = value
        return v

    def const(self, value):
        return self._push("leaf", (), np.asarray(value, dtype=np.float64), None, False)

    def bind(self, net):
        """Parameter leaves for ``net`` (created once per tape, then reused)."""
        key = id(net)
        if key not in self._bound:
            self._bound[key] = (net, [self.leaf(p) for p in net.params()])
        return self._bound[key][1]

    def record(self, name, parents, value, **attrs):
        needs = any(self.needs[p.idx] for p in parents)
        return self._push(name, tuple(p.idx for p in parents), value, attrs, needs)

    def check_sources(self):
        for idx, src in self._sources.items():
            if not np.array_equal(src, self.values[idx]):
                raise TapeError(f"tape replay mismatch: input #{idx} was modified after recording")

    def replay(self):
        """Recompute every recorded value from the inputs and check bit-exact agreement."""
        self.check_sources()
        for i, name in enumerate(self.ops):
            if name == "leaf":
                continue
            args = [self.values[p] for p in self.parents[i]]
            out = _OPS[name].forward(*args, **self.attrs[i])
            if not np.array_equal(out, self.values[i], equal_nan=True):
                raise TapeError(f"tape replay mismatch at op #{i} ({name})")
        return True

    def grad(self, output, wrt):
        """Gradients of scalar ``output`` with respect to each ``Var`` in ``wrt``."""
        if not isinstance(output, Var) or output.tape is not self:
            raise TapeError("output is not recorded on this tape")
        if output.value.size != 1:
            raise TapeError(f"gradient needs a scalar output, got shape {output.shape}")
        self.check_sources()
        adj = [None] * (output.idx + 1)
        adj[output.idx] = np.ones_like(output.value)
        for i in range(output.idx, -1, -1):
            g = adj[i]
            if g is None or not self.needs[i] or self.ops[i] == "leaf":
                continue
            pidx = self.parents[i]
            args = [self.values[p] for p in pidx]
            grads = _OPS[self.ops[i]].backward(g, self.values[i], *args, **self.attrs[i])
            for p, gp in zip(pidx, grads):
                if gp is None or not self.needs[p]:
                    continue
                adj[p] = gp if adj[p] is None else adj[p] + gp
        out = []
        for w in wrt:
            g = adj[w.idx] if w.idx < len(adj) else None
            out.append(np.zeros_like(w.value) if g is None else g)
        return out


# ---------------------------------------------------------------- primitives

def _tape_of(args):
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise TapeError("operands recorded on different tapes")
    return tape


def _apply(name, *args, **attrs):
    tape = _tape_of(args)
    op = _OPS[name]
    if tape is None:
        return op.forward(*[np.asarray(a, dtype=np.float64) for a in args], **attrs)
    vars_ = [a if isinstance(a, Var) else tape.const(a) for a in args]
    value = op.forward(*[v.value for v in vars_], **attrs)
    return tape.record(name, vars_, value, **attrs)


@_op("add")
class _Add:
    forward = staticmethod(lambda a, b: a + b)

    @staticmethod
    def backward(g, out, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@_op("sub")
class _Sub:
    forward = staticmethod(lambda a, b: a - b)

    @staticmethod
    def backward(g, out, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


@_op("mul")
class _Mul:
    forward = staticmethod(lambda a, b: a * b)

    @staticmethod
    def backward(g, out, a, b):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@_op("div")
class _Div:
    forward = staticmethod(lambda a, b: a / b)

    @staticmethod
    def backward(g, out, a, b):
        return _unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape)


@_op("neg")
class _Neg:
    forward = staticmethod(lambda a: -a)
    backward = staticmethod(lambda g, out, a: (-g,))


@_op("matmul")
class _Matmul:
    forward = staticmethod(lambda a, b: a @ b)

    @staticmethod
    def backward(g, out, a, b):
        if a.ndim != 2 or b.ndim != 2:
            raise TapeError("matmul gradient supports 2-d operands only")
        return g @ b.T, a.T @ g


@_op("tanh")
class _Tanh:
    forward = staticmethod(np.tanh)
    backward = staticmethod(lambda g, out, a: (g * (1.0 - out * out),))


@_op("sin")
class _Sin:
    forward = staticmethod(np.sin)
    backward = staticmethod(lambda g, out, a: (g * np.cos(a),))


@_op("cos")
class _Cos:
    forward = staticmethod(np.cos)
    backward = staticmethod(lambda g, out, a: (-g * np.sin(a),))


@_op("exp")
class _Exp:
    forward = staticmethod(np.exp)
    backward = staticmethod(lambda g, out, a: (g * out,))


@_op("square")
class _Square:
    forward = staticmethod(np.square)
    backward = staticmethod(lambda g, out, a: (2.0 * a * g,))


@_op("sum")
class _Sum:
    @staticmethod
    def forward(a, axis=None, keepdims=False):
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(g, out, a, axis=None, keepdims=False):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)


@_op("reshape")
class _Reshape:
    forward = staticmethod(lambda a, shape: a.reshape(shape))
    backward = staticmethod(lambda g, out, a, shape: (g.reshape(a.shape),))


@_op("concat")
class _Concat:
    forward = staticmethod(lambda *arrs, axis: np.concatenate(arrs, axis=axis))

    @staticmethod
    def backward(g, out, *arrs, axis):
        cuts = np.cumsum([a.shape[axis] for a in arrs])[:-1]
        return tuple(np.split(g, cuts, axis=axis))


@_op("getitem")
class _Getitem:
    forward = staticmethod(lambda a, key: a[key])

    @staticmethod
    def backward(g, out, a, key):
        z = np.zeros_like(a)
        z[key] = g
        return (z,)


@_op("sqnorm")
class _Sqnorm:
    forward = staticmethod(lambda a: (a * a).sum(-1))
    backward = staticmethod(lambda g, out, a: (2.0 * a * g[..., None],))


@_op("dot")
class _Dot:
    forward = staticmethod(lambda a, b: (a * b).sum(-1))

    @staticmethod
    def backward(g, out, a, b):
        ge = g[..., None]
        return _unbroadcast(ge * b, a.shape), _unbroadcast(ge * a, b.shape)


@_op("gmm_score")
class _GmmScore:
    forward = staticmethod(lambda x, mixture: mixture.score(x))
    backward = staticmethod(lambda g, out, x, mixture: (mixture.score_hvp(x, g),))


def add(a, b): return _apply("add", a, b)
def sub(a, b): return _apply("sub", a, b)
def mul(a, b): return _apply("mul", a, b)
def div(a, b): return _apply("div", a, b)
def neg(a): return _apply("neg", a)
def matmul(a, b): return _apply("matmul", a, b)
def tanh(a): return _apply("tanh", a)
def sin(a): return _apply("sin", a)
def cos(a): return _apply("cos", a)
def exp(a): return _apply("exp", a)
def square(a): return _apply("square", a)
def reshape(a, shape): return _apply("reshape", a, shape=tuple(shape))
def getitem(a, key): return _apply("getitem", a, key=key)


def sum_(a, axis=None, keepdims=False):
    return _apply("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None):
    n = value_of(a).size if axis is None else value_of(a).shape[axis]
    return mul(sum_(a, axis=axis), 1.0 / n)


def concat(arrs, axis=-1):
    return _apply("concat", *arrs, axis=axis)


def sqnorm(a):
    """Squared Euclidean norm along the last axis."""
    return _apply("sqnorm", a)


def dot(a, b):
    """Inner product along the last axis."""
    return _apply("dot", a, b)


def gmm_score_op(mixture, x):
    """Mixture score as a primitive whose adjoint is a Hessian-vector product."""
    return _apply("gmm_score", x, mixture=mixture)


def value_of(a):
    return a.value if isinstance(a, Var) else np.asarray(a)


def stop_gradient(a):
    if isinstance(a, Var):
        return a.tape.const(a.value)
    return a
