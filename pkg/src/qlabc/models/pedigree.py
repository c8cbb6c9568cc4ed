"""Pedigree genotype transmission and case/control log-odds statistics.

A pedigree is a directed ancestry graph: founders have no in-tree
parents, every other individual has both parents in the tree.
Simulation draws founder genotypes uniformly over {aa, het, AA},
transmits alleles down the tree by Mendelian segregation (each parent
passes one of its two alleles uniformly at random), and generates
phenotypes for the observed individuals from a logistic model with one
log-odds coefficient per genotype class:

    logit P(affected | X) = t1 * [X het] + t2 * [X aa] + t3 * [X AA]

The three summary statistics are smoothed log-odds of affection per
genotype class, in class order (aa, het, AA):

    s_k = log((1 + #{affected and X = k}) / (2 + #{X = k}))

The +1/+2 correction keeps them defined for empty classes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .base import SimulatorSpec, UniformBoxPrior

__all__ = [
    "GENOTYPE_CODES",
    "Pedigree",
    "PedigreeModel",
    "load_genotypes",
    "load_pedigree",
    "pedigree_statistics",
    "simulate_pedigree",
]

GENOTYPE_CODES = {"aa": 0, "aA": 1, "Aa": 1, "AA": 2}
GENOTYPE_LABELS = ("aa", "aA", "AA")

# theta order is (het, aa, AA): coefficient index by genotype code.
_COEF_BY_GENOTYPE = np.array([1, 0, 2])

DEFAULT_BOX = ((-5.0, 5.0), (-5.0, 5.0), (-5.0, 5.0))


@dataclass(frozen=True)
class Pedigree:
    """Ancestry graph with an observed, phenotyped subset.

    Parent indices are -1 for founders. `observed` indexes the
    individuals whose phenotype labels are known (1 affected,
    0 healthy, stored aligned with `observed`).
    """

    ids: tuple[str, ...]
    mother: np.ndarray
    father: np.ndarray
    observed: np.ndarray
    phenotypes: np.ndarray
    snp_count: int = 0

    def __post_init__(self):
        n = len(self.ids)
        founders = (self.mother < 0) & (self.father < 0)
        half = (self.mother < 0) ^ (self.father < 0)
        if np.any(half):
            raise ValueError("every non-founder needs both parents in the tree")
        order = self._topological_order(founders)
        object.__setattr__(self, "_order", order)
        object.__setattr__(self, "_founders", np.flatnonzero(founders))
        if self.observed.size and (self.observed.min() < 0 or self.observed.max() >= n):
            raise ValueError("observed indices out of range")

    def _topological_order(self, founders: np.ndarray) -> np.ndarray:
        n = len(self.ids)
        placed = founders.copy()
        order = list(np.flatnonzero(founders))
        remaining = set(np.flatnonzero(~founders).tolist())
        while remaining:
            ready = [i for i in remaining if placed[self.mother[i]] and placed[self.father[i]]]
            if not ready:
                raise ValueError("pedigree contains a cycle")
            for i in sorted(ready):
                placed[i] = True
                order.append(i)
                remaining.discard(i)
        return np.asarray(order, dtype=np.int64)

    @property
    def n_individuals(self) -> int:
        return len(self.ids)

    @property
    def n_observed(self) -> int:
        return int(self.observed.size)

    @property
    def founders(self) -> np.ndarray:
        return self._founders


def load_pedigree(path) -> Pedigree:
    """Read the tab-separated pedigree file.

    Columns: id, mother, father, observed (0/1), phenotype
    (affected/healthy or NA); NA marks missing parents/phenotypes,
    ids are arbitrary strings. Lines starting with '#' are comments.
    """
    rows = []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.DictReader(lines, delimiter="\t")
        expected = ["id", "mother", "father", "observed", "phenotype"]
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
            raise ValueError(f"pedigree file must have header {expected}, got {reader.fieldnames}")
        rows = list(reader)
    ids = tuple(r["id"] for r in rows)
    index = {name: i for i, name in enumerate(ids)}
    if len(index) != len(ids):
        raise ValueError("duplicate individual ids")

    def parent(r, key):
        v = r[key]
        if v == "NA":
            return -1
        if v not in index:
            raise ValueError(f"unknown parent id {v!r}")
        return index[v]

    mother = np.array([parent(r, "mother") for r in rows], dtype=np.int64)
    father = np.array([parent(r, "father") for r in rows], dtype=np.int64)
    observed, phenotypes = [], []
    for i, r in enumerate(rows):
        if r["observed"] == "1":
            label = r["phenotype"]
            if label not in ("affected", "healthy"):
                raise ValueError(f"observed individual {r['id']} needs phenotype affected/healthy")
            observed.append(i)
            phenotypes.append(1 if label == "affected" else 0)
        elif r["phenotype"] != "NA":
            raise ValueError(f"unobserved individual {r['id']} must have phenotype NA")
    return Pedigree(
        ids=ids,
        mother=mother,
        father=father,
        observed=np.asarray(observed, dtype=np.int64),
        phenotypes=np.asarray(phenotypes, dtype=np.int64),
    )


def load_genotypes(path, ped: Pedigree) -> dict[str, np.ndarray]:
    """Read observed genotypes per SNP, aligned with `ped.observed`.

    Tab-separated with header `id <snp-name>...`; genotype values are
    aa, aA/Aa, or AA. Every observed individual must appear.
    """
    with open(Path(path), newline="", encoding="utf-8") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.DictReader(lines, delimiter="\t")
        if reader.fieldnames is None or reader.fieldnames[0] != "id":
            raise ValueError("genotype file must start with an 'id' column")
        snps = reader.fieldnames[1:]
        table = {r["id"]: r for r in reader}
    observed_ids = [ped.ids[i] for i in ped.observed]
    missing = [i for i in observed_ids if i not in table]
    if missing:
        raise ValueError(f"genotype file missing observed individuals: {missing}")
    out = {}
    for snp in snps:
        codes = []
        for name in observed_ids:
            raw = table[name][snp]
            if raw not in GENOTYPE_CODES:
                raise ValueError(f"bad genotype {raw!r} for {name} at {snp}")
            codes.append(GENOTYPE_CODES[raw])
        out[snp] = np.asarray(codes, dtype=np.int64)
    return out


def pedigree_statistics(phenotypes, genotypes) -> np.ndarray:
    """Log-odds statistics (s_aa, s_het, s_AA) over the observed set."""
    y = np.asarray(phenotypes, dtype=np.int64)
    g = np.asarray(genotypes, dtype=np.int64)
    if y.shape != g.shape:
        raise ValueError("phenotypes and genotypes must align")
    stats = np.empty(3)
    for k in range(3):
        in_class = g == k
        stats[k] = np.log((1.0 + np.sum(y[in_class] == 1)) / (2.0 + np.sum(in_class)))
    return stats


def simulate_pedigree(theta, ped: Pedigree, rng: np.random.Generator):
    """Simulate genotypes down the tree and observed phenotypes at theta.

    Returns (statistics, observed-genotype codes); the genotype vector
    feeds the match-weighted distance.
    """
    genotypes = np.empty(ped.n_individuals, dtype=np.int64)
    order = ped._order
    n_founders = ped.founders.size
    genotypes[order[:n_founders]] = rng.integers(0, 3, size=n_founders)
    u = rng.random((order.size - n_founders, 2))
    for pos, i in enumerate(order[n_founders:]):
        gm = genotypes[ped.mother[i]]
        gf = genotypes[ped.father[i]]
        # one allele from each parent; int() to count, not to logical-or
        genotypes[i] = int(u[pos, 0] < gm / 2.0) + int(u[pos, 1] < gf / 2.0)
    g_obs = genotypes[ped.observed]
    p_affected = 1.0 / (1.0 + np.exp(-np.asarray(theta, dtype=np.float64)[_COEF_BY_GENOTYPE[g_obs]]))
    phenotypes = (rng.random(g_obs.size) < p_affected).astype(np.int64)
    return pedigree_statistics(phenotypes, g_obs), g_obs


class PedigreeModel:
    """Genotype-transmission benchmark on a fixed ancestry tree."""

    name = "pedigree"

    def __init__(self, pedigree: Pedigree, box=DEFAULT_BOX, prior=None):
        self.pedigree = pedigree
        box = np.asarray(box, dtype=np.float64)
        self.sample_size = pedigree.n_observed
        self.spec = SimulatorSpec(
            name=self.name,
            param_dim=3,
            statistic_dim=3,
            param_box=box,
            sample_size=self.sample_size,
            prior="uniform over the parameter box" if prior is None else "user-supplied",
        )
        self.prior = prior if prior is not None else UniformBoxPrior(box)

    def simulate(self, theta, rng: np.random.Generator):
        return simulate_pedigree(theta, self.pedigree, rng)
