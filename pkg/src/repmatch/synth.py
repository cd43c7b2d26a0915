"""Synthetic student populations with graded exposure and planted effects.

The generator mimics a national cohort: fourteen categorical covariates
(78 categories in all) whose ordinal ones are driven by a shared latent
socioeconomic factor through a Gaussian copula, an exposure intensity that
is mildly confounded with that factor, and two outcomes. Attendance falls
with exposure; the admission-test score depends on covariates only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import Covariate, CovariateSchema, Dataset, SchemaConfig

__all__ = ["STUDENT_SCHEMA", "STUDENT_MARGINALS", "SynthConfig", "generate_study", "level_labels", "schema_config", "superset_rows"]

_DECILES = tuple(str(i) for i in range(1, 11))

# (name, categories, marginal probabilities, loading on the latent factor)
_SPEC = [
    ("gender", ("male", "female"), (0.46, 0.54), 0.0),
    ("ethnicity", ("non_indigenous", "indigenous", "missing"), (0.77, 0.08, 0.15), -0.15),
    ("father_edu", ("primary", "secondary", "technical", "college", "missing"), (0.32, 0.39, 0.09, 0.15, 0.05), 0.6),
    ("mother_edu", ("primary", "secondary", "technical", "college", "missing"), (0.33, 0.41, 0.13, 0.12, 0.01), 0.6),
    ("income", ("0-200", "200-400", "400-600", "600-1400", "1400+", "missing"), (0.34, 0.30, 0.13, 0.13, 0.09, 0.01), 0.7),
    ("books", ("0-10", "11-50", "51-100", "100+", "missing"), (0.21, 0.46, 0.16, 0.16, 0.01), 0.5),
    ("attendance", _DECILES, (0.06, 0.12, 0.08, 0.10, 0.13, 0.08, 0.09, 0.10, 0.11, 0.13), 0.2),
    ("gpa", _DECILES, (0.12, 0.11, 0.11, 0.10, 0.10, 0.10, 0.09, 0.10, 0.09, 0.08), 0.3),
    ("simce", _DECILES[:9] + ("missing",), (0.08, 0.08, 0.09, 0.09, 0.10, 0.10, 0.11, 0.12, 0.22, 0.01), 0.6),
    ("school_type", ("private", "public", "voucher"), (0.11, 0.34, 0.55), 0.0),
    ("rural", ("urban", "rural"), (0.97, 0.03), -0.3),
    ("catholic", ("no", "yes"), (0.76, 0.24), 0.1),
    ("school_ses", ("low", "mid_low", "medium", "mid_high", "high"), (0.10, 0.32, 0.29, 0.18, 0.11), 0.8),
    ("school_simce", _DECILES, (0.07, 0.07, 0.09, 0.09, 0.10, 0.11, 0.10, 0.12, 0.12, 0.13), 0.7),
]
# covariates whose categories are not ordered by the latent factor
_NOMINAL = {"gender", "ethnicity", "school_type", "catholic"}
_MISSING = {name: "missing" for name, cats, _, _ in _SPEC if "missing" in cats}

STUDENT_SCHEMA = CovariateSchema(
    tuple(Covariate(name, cats, _MISSING.get(name)) for name, cats, _, _ in _SPEC)
)
STUDENT_MARGINALS = {name: np.array(p) / np.sum(p) for name, _, p, _ in _SPEC}


@dataclass(frozen=True)
class SynthConfig:
    """Shape and effect sizes of a synthetic study.

    ``level_sizes`` gives the number of units at each exposure level
    (level 1 is the least exposed). ``attendance_effect`` is the drop in
    attendance points per exposure step; ``score_effect`` is zero by
    default. With ``template_superset`` every level also receives an exact
    copy of a common set of ``superset_size`` units, so a perfectly
    balanced match of that size exists at every level.
    """

    level_sizes: tuple[int, ...] = (2000, 2000, 2000)
    seed: int = 0
    confounding: float = 0.3
    attendance_effect: float = 1.5
    score_effect: float = 0.0
    noise_sd: float = 4.0
    template_superset: bool = False
    superset_size: int = 0


def level_labels(n: int) -> list[str]:
    return [str(i) for i in range(1, n + 1)]


def _draw_covariates(n: int, latent: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x = np.empty((n, len(_SPEC)), dtype=np.int64)
    for p, (name, cats, _, load) in enumerate(_SPEC):
        probs = STUDENT_MARGINALS[name]
        if name in _NOMINAL or load == 0.0:
            x[:, p] = rng.choice(len(cats), size=n, p=probs)
            continue
        has_missing = cats[-1] == "missing"
        ordered = probs[:-1] / probs[:-1].sum() if has_missing else probs
        u = load * latent + np.sqrt(1 - load * load) * rng.standard_normal(n)
        cuts = norm.ppf(np.cumsum(ordered)[:-1])
        x[:, p] = np.searchsorted(cuts, u)
        if has_missing:
            x[rng.random(n) < probs[-1], p] = len(cats) - 1
    return x


def generate_study(cfg: SynthConfig) -> Dataset:
    """Draw a study; outcomes are ``attendance_rate`` (0-100) and ``psu``.

    Exposure levels are assigned by ranking a latent exposure intensity
    that correlates ``confounding`` with the socioeconomic factor, so
    levels differ in covariates before matching.
    """
    rng = np.random.default_rng(cfg.seed)
    sizes = np.asarray(cfg.level_sizes, dtype=np.int64)
    if sizes.size < 1 or np.any(sizes < 1):
        raise ValueError("level sizes must be positive")
    n = int(sizes.sum())
    latent = rng.standard_normal(n)
    x = _draw_covariates(n, latent, rng)
    intensity = cfg.confounding * latent + np.sqrt(1 - cfg.confounding**2) * rng.standard_normal(n)
    order = np.argsort(intensity, kind="stable")
    level = np.empty(n, dtype=np.int64)
    level[order] = np.repeat(np.arange(sizes.size), sizes)
    if cfg.template_superset and cfg.superset_size > 0:
        core_latent = rng.standard_normal(cfg.superset_size)
        core = _draw_covariates(cfg.superset_size, core_latent, rng)
        blocks_x, blocks_l, blocks_latent = [x], [level], [latent]
        for lv in range(sizes.size):
            perm = rng.permutation(cfg.superset_size)
            blocks_x.append(core[perm])
            blocks_l.append(np.full(cfg.superset_size, lv))
            blocks_latent.append(core_latent[perm])
        x = np.vstack(blocks_x)
        level = np.concatenate(blocks_l)
        latent = np.concatenate(blocks_latent)
        n = x.shape[0]
    # outcomes: both rise with the socioeconomic factor
    att_base = 85 + 4 * latent + 0.8 * (x[:, 6] - 4.5)
    attendance = att_base - cfg.attendance_effect * level + cfg.noise_sd * rng.standard_normal(n)
    score = 500 + 60 * latent + 5 * (x[:, 7] - 4.5) - cfg.score_effect * level + 40 * rng.standard_normal(n)
    labels = level_labels(sizes.size)
    width = len(str(n))
    return Dataset(
        STUDENT_SCHEMA,
        x,
        ids=[f"u{i:0{width}d}" for i in range(n)],
        exposure=[labels[v] for v in level],
        outcomes={"attendance_rate": np.clip(attendance, 0, 100).round(2), "psu": score.round(1)},
        levels=labels,
    )


def superset_rows(cfg: SynthConfig) -> np.ndarray:
    """Rows of the first exposure level's copy of the common unit set.

    Using them as the template gives a design in which every level holds
    an exact, permuted copy of the template.
    """
    if not (cfg.template_superset and cfg.superset_size > 0):
        raise ValueError("configuration has no common unit set")
    start = int(np.sum(cfg.level_sizes))
    return np.arange(start, start + cfg.superset_size)


def schema_config() -> SchemaConfig:
    return SchemaConfig(
        schema=STUDENT_SCHEMA,
        id_column="id",
        exposure_column="exposure",
        levels=None,
        outcomes=("attendance_rate", "psu"),
    )
