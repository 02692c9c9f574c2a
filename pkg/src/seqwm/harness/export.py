import csv
import logging
from pathlib import Path

from seqwm.records import read_episode_log

logger = logging.getLogger(__name__)


def export_trajectory(log_path, out_path) -> int:
    """
    Flatten an episode log into one CSV row per step and agent, with the
    agent's action and (when logged) its planar position. Returns the row count.
    """
    records = read_episode_log(log_path)
    width = max((len(a) for r in records for a in r.get_actions()), default=0)
    header = ["episode", "t", "agent", "reward", "done", "x", "y"] + [f"action_{k}" for k in range(width)]
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rows = 0
    with open(out_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for record in records:
            positions = record.get("positions") or []
            for agent, action in enumerate(record.get_actions()):
                x, y = positions[agent] if agent < len(positions) else ("", "")
                writer.writerow([
                    record.get_int("episode"), record.get_int("t"), agent, record.get_float("reward"),
                    int(bool(record.get_bool("done"))), x, y, *action.tolist(),
                ])
                rows += 1
    logger.info("exported rows=%d from=%s to=%s", rows, log_path, out_path)
    return rows
