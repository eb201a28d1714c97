"""Synthetic networks used by the examples, the CLI demos and the test-suite."""
from __future__ import annotations

import math

import numpy as np

from .netmodel import (FRF, MatrixResponse, NodalPackage, PortNetwork, SisoFeedbackNetwork, WaveBlock, chain_pairs,
                       composed, exp_block, linear, log_block, polynomial, saturation, through_package, transconductor)

Z0 = 50.0


def exp_log_cascade(scale=1.0) -> SisoFeedbackNetwork:
    """Exponential followed by its inverse; the output equals the input."""
    return SisoFeedbackNetwork([exp_block(scale, name="exp"), log_block(scale, name="log")],
                               [1, 0], [[0, 0], [-1, 0]], [0, 1])


def single_block(block) -> SisoFeedbackNetwork:
    return SisoFeedbackNetwork([block], [1], [[0]], [1])


def cascade(blocks, gains=None) -> SisoFeedbackNetwork:
    """Blocks in series: ``U_1 = R``, ``U_n = gains[n-1] Y_{n-1}``, ``Y_t = Y_N``."""
    n = len(blocks)
    gains = np.ones(n - 1) if gains is None else np.asarray(gains, dtype=float)
    M = np.zeros((n, n))
    for i in range(1, n):
        M[i, i - 1] = -gains[i - 1]
    A = np.zeros(n)
    A[0] = 1
    B = np.zeros(n)
    B[-1] = 1
    return SisoFeedbackNetwork(list(blocks), A, M, B)


def lowpass(fc):
    """First-order lowpass ``1 / (1 + s / (2 pi fc))``."""
    return FRF.rational([1.0], [1.0 / (2 * np.pi * fc), 1.0])


def filtered_cubic(fc=3.0, alpha=0.1, post_fc=None) -> SisoFeedbackNetwork:
    post = lowpass(post_fc) if post_fc else 1.0
    return single_block(composed(polynomial(1.0, 0.0, alpha), pre=lowpass(fc), post=post, name="fcubic"))


def random_polynomial(rng, weak=0.15):
    c1 = rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0])
    c2 = rng.uniform(-weak, weak)
    c3 = rng.uniform(-weak, weak)
    return polynomial(c1, c2, c3)


def random_siso_network(rng, n_blocks=None, loop=0.3, fc_range=(20.0, 200.0)) -> SisoFeedbackNetwork:
    """Random feedback structure with static polynomial blocks.

    Feedback entries carry a first-order rolloff and are scaled so that the
    small-signal loop stays well inside the unit circle.
    """
    n = int(n_blocks or rng.integers(1, 5))
    blocks = [random_polynomial(rng) for _ in range(n)]
    for i, b in enumerate(blocks):
        b.name = f"b{i + 1}"
        b.group = b.name
    A = [complex(rng.normal(), 0) for _ in range(n)]
    B = [complex(rng.normal(), 0) for _ in range(n)]
    M = []
    for i in range(n):
        row = []
        for j in range(n):
            if rng.random() < 0.6:
                k = rng.uniform(-1, 1) * loop / n
                fc = rng.uniform(*fc_range)
                row.append(FRF.rational([k], [1 / (2 * np.pi * fc), 1.0]))
            else:
                row.append(FRF.const(0.0))
        M.append(row)
    return SisoFeedbackNetwork(blocks, MatrixResponse([[a] for a in A]), MatrixResponse(M), MatrixResponse([B]))


def random_cascade(rng, n_blocks=None) -> SisoFeedbackNetwork:
    n = int(n_blocks or rng.integers(1, 5))
    blocks = []
    for i in range(n):
        b = random_polynomial(rng)
        b.name = f"b{i + 1}"
        b.group = f"stage{i // 2 + 1}/b{i + 1}"
        blocks.append(b)
    return cascade(blocks, rng.uniform(0.5, 1.5, n - 1) * rng.choice([-1, 1], n - 1))


# --- port fixtures --------------------------------------------------------------------

def random_s(rng, p, scale=0.4):
    return scale * (rng.normal(size=(p, p)) + 1j * rng.normal(size=(p, p))) / math.sqrt(2 * p)


def linear_twoport(s, gamma_in=0.0, gamma_out=0.0, name="dut") -> PortNetwork:
    """Linear 2-port joined straight through to source and load."""
    sub = WaveBlock(2, MatrixResponse.from_array(s), [], name=name)
    return PortNetwork([sub], through_package(4, chain_pairs([2])), gamma_in, gamma_out, Z0)


def random_port_network(rng, n_sub=1) -> PortNetwork:
    """Random linear package (unitary-ish scaled) around random linear sub-circuits."""
    subs = [WaveBlock(2, MatrixResponse.from_array(random_s(rng, 2)), [], name=f"s{i + 1}") for i in range(n_sub)]
    q = 2 * n_sub + 2
    pkg = random_s(rng, q, 0.8)
    g_in = complex(0.3 * rng.normal(), 0.3 * rng.normal())
    g_out = complex(0.3 * rng.normal(), 0.3 * rng.normal())
    return PortNetwork(subs, MatrixResponse.from_array(pkg), g_in, g_out, Z0)


def twoport_amplifier(static, gm=0.1, r_in=200.0, r_out=500.0, mu=0.0, name="amp") -> PortNetwork:
    """Transconductor joined straight through to a matched source and load."""
    sub = transconductor(gm, static, r_in, r_out, mu, Z0, name=name)
    return PortNetwork([sub], through_package(4, chain_pairs([2])), 0.0, 0.0, Z0)


def feedback_amplifier(static, gm=5.0, r_f=500.0, name="amp") -> PortNetwork:
    """Inverting transconductor stage with a feedback resistor (high loop gain)."""
    sub = transconductor(gm, static, math.inf, math.inf, 0.0, Z0, name=name)
    # package ports: ext1, ext2, amp.1, amp.2 -> nodes 1, 2, 1, 2
    pkg = NodalPackage(2, [(1, 2, 1.0 / r_f)], [1, 2, 1, 2], Z0)
    return PortNetwork([sub], pkg, 0.0, 0.0, Z0)


def weak_cubic(alpha=0.02):
    return polynomial(1.0, 0.0, alpha)


def hard_saturation(limit):
    return saturation(limit)
