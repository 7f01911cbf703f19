"""The desk-scale pipeline shared by the acceptance and desk-property tests."""

import time

from threadpoolctl import threadpool_limits

from rischan.harness import experiments as ex
from rischan.harness import load_config


def run_desk(out_dir):
    """generate + train + eval with the desk profile; returns (cfg, {(axis, method): nmse}, train CPU-s)."""
    cfg = load_config(env={}, overrides={"out_dir": str(out_dir), "deterministic": "true"})
    with threadpool_limits(1):
        ex.generate(cfg)
        t = time.process_time()
        ex.train_model(cfg)
        train_cpu = time.process_time() - t
        rows = ex.evaluate(cfg)
    table = {(r.axis, r.method): r.nmse_linear for r in rows}
    return cfg, table, train_cpu
