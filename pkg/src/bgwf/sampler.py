"""Exact sampling of branching-process trees conditioned on their size.

The pipeline is: draw the offspring multiset conditioned on total sum n-1
(rejection on the multinomial counts), arrange it uniformly, then apply the
cycle lemma to obtain the unique rotation that is a valid depth-first degree
sequence.  Annotation (subtree sizes, subtree heights, depths) is done in two
iterative passes; no recursion, so sizes up to 10^6 are safe.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .offspring import OffspringModel, normalizer, support_contains
from .theory import g0


class BudgetExhausted(RuntimeError):
    """Rejection sampler ran out of attempts; carries the diagnostic rate."""

    def __init__(self, n: int, attempts: int, acceptance_rate: float):
        self.n = n
        self.attempts = attempts
        self.acceptance_rate = acceptance_rate
        super().__init__(
            f"degree-sequence sampler for n={n} exhausted {attempts} attempts "
            f"(asymptotic acceptance rate span*g(0)/b_n ~ {acceptance_rate:.3g})"
        )


@dataclass(frozen=True)
class AnnotatedTree:
    """Size-n ordered rooted tree in depth-first order with per-vertex stats.

    ``parent[0]`` is the sentinel -1.  Heights count edges: leaves have
    subtree_height 0, and ``height`` is the maximal depth.
    """

    n: int
    parent: np.ndarray
    degree: np.ndarray
    subtree_size: np.ndarray
    subtree_height: np.ndarray
    depth: np.ndarray

    @property
    def height(self) -> int:
        return int(self.depth.max())

    @property
    def leaves(self) -> int:
        return int((self.degree == 0).sum())

    @property
    def internal(self) -> np.ndarray:
        return self.degree > 0

    def validate(self) -> None:
        """Check all structural invariants; raises ValueError on violation."""
        n = self.n
        if self.degree.sum() != n - 1:
            raise ValueError("degree sum != n - 1")
        if self.parent[0] != -1 or (n > 1 and (self.parent[1:] < 0).any()):
            raise ValueError("bad parent array")
        if self.subtree_size[0] != n:
            raise ValueError("root subtree size != n")
        child_sum = np.bincount(self.parent[1:], weights=self.subtree_size[1:], minlength=n) if n > 1 else np.zeros(n)
        if not np.array_equal(child_sum + 1, self.subtree_size):
            raise ValueError("subtree sizes inconsistent")
        if n > 1 and not np.array_equal(self.depth[1:], self.depth[self.parent[1:]] + 1):
            raise ValueError("depths inconsistent")
        hmax = np.zeros(n, dtype=np.int64)
        if n > 1:
            np.maximum.at(hmax, self.parent[1:], self.subtree_height[1:] + 1)
        if not np.array_equal(hmax, self.subtree_height):
            raise ValueError("subtree heights inconsistent")
        if not np.array_equal(self.degree > 0, self.subtree_size > 1):
            raise ValueError("internal-vertex characterizations disagree")

    def to_csv(self, path_or_buf) -> None:
        """One line per vertex: index,parent,degree,depth,subtree_size,subtree_height."""
        buf = path_or_buf if hasattr(path_or_buf, "write") else io.StringIO()
        buf.write("index,parent,degree,depth,subtree_size,subtree_height\n")
        for i in range(self.n):
            buf.write(
                f"{i},{self.parent[i]},{self.degree[i]},{self.depth[i]},"
                f"{self.subtree_size[i]},{self.subtree_height[i]}\n"
            )
        if buf is not path_or_buf:
            with open(path_or_buf, "w") as fh:
                fh.write(buf.getvalue())


def default_attempt_budget(model: OffspringModel, n: int) -> int:
    """10x the asymptotic expected number of rejections b_n / (span g(0)).

    A floor of 1000 attempts covers small n, where ten times the expected
    count still leaves a noticeable failure probability over long runs.
    """
    rate = model.span * g0(model.gamma, model.kappa) / normalizer(model, n)
    return max(1000, 10 * math.ceil(1.0 / rate))


def sample_degree_sequence(
    model: OffspringModel, n: int, rng: np.random.Generator, max_attempts: int | None = None
) -> np.ndarray:
    """n iid offspring draws conditioned on summing to n-1, exact law.

    The multiset of values is drawn first (one binomial for the rare upper
    tail plus one multinomial over the common categories per attempt), then
    arranged uniformly; by exchangeability this equals the conditional law of
    the iid sequence.
    """
    if not support_contains(model, n):
        raise ValueError(f"size {n} is not in the support of the conditioned tree")
    target = n - 1
    budget = max_attempts if max_attempts is not None else default_attempt_budget(model, n)
    q = model.common_tail_q
    cvals = model.common_values
    cprobs = model.common_probs
    for _ in range(budget):
        t_count = int(rng.binomial(n, q)) if q > 0.0 else 0
        counts = rng.multinomial(n - t_count, cprobs)
        total = int(counts @ cvals)
        tail_vals = model.sample_above(q, t_count, rng)
        total += int(tail_vals.sum())
        if total == target:
            degrees = np.repeat(cvals, counts)
            if t_count:
                degrees = np.concatenate([degrees, tail_vals])
            rng.shuffle(degrees)
            return degrees
    rate = model.span * g0(model.gamma, model.kappa) / normalizer(model, n)
    raise BudgetExhausted(n, budget, rate)


def cycle_rotate(degrees: np.ndarray) -> int:
    """Rotation index making the degree sequence a valid depth-first order.

    The walk increments are degree-1 and sum to -1; exactly one cyclic
    rotation keeps all partial sums nonnegative before the final step
    (Dvoretzky-Motzkin).  That rotation starts right after the first minimum.
    """
    degrees = np.asarray(degrees, dtype=np.int64)
    n = degrees.size
    walk = np.cumsum(degrees - 1)
    if walk[-1] != -1:
        raise ValueError("degree sequence does not sum to n - 1")
    return int(np.argmin(walk) + 1) % n


def build_and_annotate(degrees: np.ndarray) -> AnnotatedTree:
    """Tree from a valid depth-first degree sequence, annotated in O(n).

    One forward pass (explicit stack) fills parents and depths; one reverse
    pass accumulates subtree sizes and heights, children being visited before
    their parent in reversed depth-first order.
    """
    degree = np.ascontiguousarray(degrees, dtype=np.int64)
    n = degree.size
    walk = np.cumsum(degree - 1)
    if walk[-1] != -1 or (n > 1 and (walk[:-1] < 0).any()):
        raise ValueError("not a valid depth-first degree sequence")

    parent = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    deg = degree.tolist()
    par = parent.tolist()
    dep = depth.tolist()
    stack_v = [0]
    stack_r = [deg[0]]
    for i in range(1, n):
        while stack_r[-1] == 0:
            stack_v.pop()
            stack_r.pop()
        p = stack_v[-1]
        stack_r[-1] -= 1
        par[i] = p
        dep[i] = dep[p] + 1
        stack_v.append(i)
        stack_r.append(deg[i])

    size = [1] * n
    height = [0] * n
    for i in range(n - 1, 0, -1):
        p = par[i]
        size[p] += size[i]
        h = height[i] + 1
        if h > height[p]:
            height[p] = h

    tree = AnnotatedTree(
        n=n,
        parent=np.array(par, dtype=np.int64),
        degree=degree,
        subtree_size=np.array(size, dtype=np.int64),
        subtree_height=np.array(height, dtype=np.int64),
        depth=np.array(dep, dtype=np.int64),
    )
    for arr in (tree.parent, tree.degree, tree.subtree_size, tree.subtree_height, tree.depth):
        arr.setflags(write=False)
    return tree


def sample_conditioned(
    model: OffspringModel, n: int, rng: np.random.Generator, max_attempts: int | None = None
) -> AnnotatedTree:
    """Exact sample of the BGW tree conditioned to have n vertices."""
    degrees = sample_degree_sequence(model, n, rng, max_attempts)
    r = cycle_rotate(degrees)
    tree = build_and_annotate(np.roll(degrees, -r))
    if __debug__:
        tree.validate()
    return tree
