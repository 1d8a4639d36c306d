"""Floating-point operation accounting.

One multiply-add counts as 2 flops. A ledger is owned by whoever passes it
into a kernel; kernels never touch shared state.
"""

from collections import defaultdict
from dataclasses import dataclass, field


@dataclass
class FlopLedger:
    counts: dict = field(default_factory=lambda: defaultdict(int))
    calls: dict = field(default_factory=lambda: defaultdict(int))

    def add(self, kernel, flops, calls=1):
        self.counts[kernel] += int(flops)
        self.calls[kernel] += int(calls)

    def total(self, *kernels):
        if not kernels:
            return sum(self.counts.values())
        return sum(self.counts.get(k, 0) for k in kernels)

    def merge(self, other):
        for k, v in other.counts.items():
            self.counts[k] += v
        for k, v in other.calls.items():
            self.calls[k] += v
        return self

    def as_dict(self):
        return {k: {"flops": int(self.counts[k]), "calls": int(self.calls[k])} for k in sorted(self.counts)}


def pinv_flops_closed_form(L, n):
    """Closed-form cost of the normal-equation pseudoinverse solve."""
    return n**3 + L * n**2 + 4 * L * n


def qr_flops_closed_form(L, n):
    """Closed-form cost of the MGS-QR plus back-substitution solve."""
    return n**2 + L * n**2 + 2 * L * n
