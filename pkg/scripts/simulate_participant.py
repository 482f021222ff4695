"""Run one scripted click-to-reveal session against the experiment service.

A headless stand-in for a human participant: it creates a session, clicks
inside each stimulus's informative region (falling back to uniform points
when no ground-truth region is stored), answers with configurable accuracy,
and writes the session export JSONL into the work directory's sessions
folder, where `ferbench finetune` and `ferbench compare` pick it up.

Deterministic given --session-seed and --behavior-seed.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from ferbench.cli import load_pipeline_config
from ferbench.datasets import load_stimulus_set
from ferbench.service import ExperimentService, ServiceConfig


def click_points(img, n, rng):
    """n (x, y) points inside the informative region, or anywhere if absent."""
    h, w = img.pixels.shape[:2]
    if img.gt_region is not None and img.gt_region.any():
        ys, xs = np.nonzero(img.gt_region)
        picks = rng.integers(0, len(xs), size=n)
        return [(int(xs[k]), int(ys[k])) for k in picks]
    return [(int(rng.integers(0, w)), int(rng.integers(0, h))) for _ in range(n)]


def run_session(cfg, participant, session_seed, behavior_seed, clicks, accuracy):
    cfg.sessions_dir.mkdir(parents=True, exist_ok=True)
    svc_cfg = ServiceConfig(stimulus_path=str(cfg.experiment_stimuli),
                            results_dir=str(cfg.sessions_dir),
                            reveal_radius=cfg.radius,
                            blur_k=cfg.blur_k or None,
                            block_count=cfg.block_count)
    service = ExperimentService(svc_cfg)
    stimuli = {im.id: im for im in load_stimulus_set(cfg.experiment_stimuli)}
    session = service.create_session(participant, svc_cfg.stimulus_set_id,
                                     seed=session_seed)
    rng = np.random.default_rng(behavior_seed)
    n_correct = 0
    while True:
        trial = service.next_trial(session.session_id)
        if trial["status"] == "done":
            break
        stimulus_id = trial["stimulus_id"]
        img = stimuli[stimulus_id]
        for x, y in click_points(img, clicks, rng):
            service.record_click(session.session_id, stimulus_id, x, y)
        pick_true = rng.random() < accuracy
        choice = img.true_label if pick_true else img.false_label
        record = service.submit_choice(session.session_id, stimulus_id, choice)
        n_correct += record.correct
    export_path = Path(cfg.sessions_dir) / f"{session.session_id}.jsonl"
    export_path.write_text(service.export_results(session.session_id),
                           encoding="utf-8")
    return session, n_correct, export_path


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="pipeline config file (TOML or JSON)")
    parser.add_argument("--set", action="append", default=[], dest="overrides",
                        metavar="KEY=VALUE", help="override one config value")
    parser.add_argument("--participant", default="sim-01")
    parser.add_argument("--session-seed", type=int, default=1,
                        help="seed for the trial-order permutation")
    parser.add_argument("--behavior-seed", type=int, default=2,
                        help="seed for click placement and answer choices")
    parser.add_argument("--clicks", type=int, default=3,
                        help="clicks per trial")
    parser.add_argument("--accuracy", type=float, default=1.0,
                        help="probability of choosing the true label")
    args = parser.parse_args(argv)
    cfg = load_pipeline_config(args.config, args.overrides)
    session, n_correct, export_path = run_session(
        cfg, args.participant, args.session_seed, args.behavior_seed,
        args.clicks, args.accuracy)
    n = session.n_trials
    print(f"session {session.session_id}: {n} trials, "
          f"{n_correct}/{n} correct -> {export_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
