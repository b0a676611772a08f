"""Property suites behind ``so3kit check``."""

from __future__ import annotations

import numpy as np

from ..cg import basis_kernels, coupled_degrees, full_q, wigner_blockdiag
from ..layers import AttentionBlock, Fiber, ModelConfig, NormNonlinearity, QM9Model, TFNLayer
from ..so3 import random_rotation, sh_vector, wigner_d_from_rotation
from .data import random_features, random_graph, synthetic_dataset
from .equivariance import EquivarianceReport, check_equivariance

MAX_DEGREE = 3


def _unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def math_suite(trials: int, tol: float, rng) -> list[EquivarianceReport]:
    sh = EquivarianceReport("sh_equivariance", tol)
    hom = EquivarianceReport("wigner_homomorphism", tol)
    cg = EquivarianceReport("cg_kron_identity", tol)
    kern = EquivarianceReport("kernel_constraint", tol)
    for _ in range(trials):
        R, R2 = random_rotation(rng), random_rotation(rng)
        x = _unit(rng)
        for l in range(5):
            D = wigner_d_from_rotation(l, R)
            y = sh_vector(l, x)
            sh.add(l, np.linalg.norm(sh_vector(l, R @ x) - D @ y) / (1 + np.linalg.norm(y)))
            hom.add(l, np.abs(D @ wigner_d_from_rotation(l, R2) - wigner_d_from_rotation(l, R @ R2)).max())
        for k in range(MAX_DEGREE + 1):
            for l in range(MAX_DEGREE + 1):
                Q = full_q(k, l)
                lhs = np.kron(wigner_d_from_rotation(k, R), wigner_d_from_rotation(l, R))
                rhs = Q.T @ wigner_blockdiag(coupled_degrees(k, l), R) @ Q
                cg.add(f"{k},{l}", np.abs(lhs - rhs).max())
                Dk, Dl = wigner_d_from_rotation(k, R), wigner_d_from_rotation(l, R)
                for W, W_rot in zip(basis_kernels(x, k, l), basis_kernels(R @ x, k, l)):
                    kern.add(f"{k},{l}", np.abs(W_rot - Dl @ W @ Dk.T).max())
        for r in (sh, hom, cg, kern):
            r.trials += 1
    return [sh, hom, cg, kern]


def _graphs(rng, count=3):
    return [random_graph(rng, int(rng.integers(3, 9))) for _ in range(count)]


def _merge(name, tol, reports):
    out = EquivarianceReport(name, tol)
    for r in reports:
        out.trials += r.trials
        for d, values in r.residuals.items():
            out.residuals.setdefault(d, []).extend(values)
    return out


def tfn_suite(trials: int, tol: float, rng) -> list[EquivarianceReport]:
    f_in = Fiber.uniform(2, MAX_DEGREE)
    f_out = Fiber.uniform(3, MAX_DEGREE)
    reports = []
    for mode in ("linear_si", "channel_mix"):
        layer = TFNLayer(f_in, f_out, 5, rng, mode)
        runs = [check_equivariance(lambda g, f: layer(g, f), g, random_features(rng, f_in, g.num_nodes),
                                   trials, tol, rng) for g in _graphs(rng)]
        reports.append(_merge(f"tfn_{mode}", tol, runs))
    return reports


def attention_suite(trials: int, tol: float, rng) -> list[EquivarianceReport]:
    f_in = Fiber.uniform(4, MAX_DEGREE)
    f_out = Fiber.uniform(4, MAX_DEGREE)
    block = AttentionBlock(f_in, f_out, 5, rng, n_heads=2, div=2, x_ij="cat")
    norm = NormNonlinearity(f_in, rng)
    graphs = _graphs(rng)
    feats = [random_features(rng, f_in, g.num_nodes) for g in graphs]
    att = [check_equivariance(lambda g, f: block(g, f), g, f, trials, tol, rng) for g, f in zip(graphs, feats)]
    nl = [check_equivariance(lambda g, f: norm(f), g, f, trials, tol, rng) for g, f in zip(graphs, feats)]
    scores = [check_equivariance(lambda g, f: {0: block.scores(g, f).data[:, :, None]}, g, f, trials, tol, rng)
              for g, f in zip(graphs, feats)]
    return [_merge("attention_block", tol, att), _merge("norm_nonlinearity", tol, nl),
            _merge("attention_scores", tol, scores)]


def model_suite(trials: int, tol: float, rng) -> list[EquivarianceReport]:
    model = QM9Model(ModelConfig())
    motion = EquivarianceReport("model_rigid_motion", tol)
    perm = EquivarianceReport("model_permutation", tol)
    for g in synthetic_dataset(trials, seed=int(rng.integers(1 << 31))):
        base = float(model(g).data[0])
        moved = float(model(g.transformed(random_rotation(rng), rng.normal(size=3) * 3)).data[0])
        shuffled = float(model(g.permuted(rng.permutation(g.num_nodes))).data[0])
        motion.add(0, abs(moved - base) / (1 + abs(base)))
        perm.add(0, abs(shuffled - base) / (1 + abs(base)))
        motion.trials += 1
        perm.trials += 1
    return [motion, perm]


SUITES = {"math": math_suite, "tfn": tfn_suite, "attention": attention_suite, "model": model_suite}


def run_suite(target: str, trials: int, tol: float, seed: int = 0) -> list[EquivarianceReport]:
    return SUITES[target](trials, tol, np.random.default_rng(seed))
