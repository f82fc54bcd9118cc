"""Key = value experiment configuration files.

Format: one `key = value` per line, `#` comments, values parsed as
int, float, string, or comma-separated lists thereof.  Keys are
grouped by the consuming command; unknown keys are rejected so typos
fail fast.
"""

import hashlib


class ConfigError(ValueError):
    pass


_KNOWN = {
    # chain
    "N", "alpha", "beta",
    # integrator
    "h", "Delta", "T", "scheme",
    # normalizer
    "n1", "Istar", "caps_L", "caps_K", "K", "rbar", "divisor_floor",
    # grids
    "Imin", "Imax", "Icount", "amp_min", "amp_max", "amp_count",
    # frequency analysis
    "n_components", "K_M", "eps_tol", "mu_tol", "eps_filter",
    "max_refine_iters",
    # continuation / birkhoff
    "A0", "zeta0", "zeta_floor", "order",
}

_DEFAULTS = {
    "alpha": 0.0, "beta": 0.0,
    "h": 0.125, "Delta": 0.5, "T": 65536.0, "scheme": "SBAB3C",
    "K": 2, "divisor_floor": 1e-8,
    "n_components": 25, "K_M": 20, "eps_tol": 1e-12, "mu_tol": 2e-6,
    "max_refine_iters": 20,
    "A0": 0.1, "zeta0": 0.1, "zeta_floor": 0.00025,
}


def _parse_scalar(tok):
    tok = tok.strip()
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    return tok


def parse_config(text):
    cfg = dict(_DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _KNOWN:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if "," in val:
            cfg[key] = [_parse_scalar(t) for t in val.split(",")]
        else:
            cfg[key] = _parse_scalar(val)
    return cfg


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    cfg = parse_config(text)
    cfg["_hash"] = hashlib.sha256(text.encode()).hexdigest()[:16]
    return cfg


def require(cfg, *keys):
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
