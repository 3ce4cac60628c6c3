# make_pepfar_like.py

# --- Import necessary libraries ---
import logging
import os
import sys
from pathlib import Path

# Allow running as `python tools/make_pepfar_like.py` from the repo root.
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from common.config import LOCAL_OUTPUT_DIR  # noqa: E402
from deduct.data_model import write_csv  # noqa: E402
from deduct.simulation import generate_pepfar_like  # noqa: E402

# --- Configuration (Environment Variables) ---
# Seed of the synthetic cohort; the same seed always writes the same file.
SEED = int(os.getenv("PEPFAR_SEED", "2016"))
# Destination CSV. The z columns are age,cd4 and the w columns L,cd4_last.
OUT_PATH = Path(os.getenv("PEPFAR_OUT", LOCAL_OUTPUT_DIR / "pepfar_like.csv"))

logger = logging.getLogger("make_pepfar_like")


# --- Main Function ---
def main():
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    # 1. --- Draw the cohort ---
    data = generate_pepfar_like(SEED)

    # 2. --- Write it in the dialect `deduct estimate --data` reads ---
    path = write_csv(data, OUT_PATH)
    logger.info("Wrote %s: n=%d, dropouts=%d, double-sampled=%d", path, data.n, int((data.r_obs == 0).sum()), data.m1)
    logger.info("Estimate with: python -m cli.main estimate --data %s --z-cols age,cd4 --w-cols L,cd4_last", path)


# Standard Python entry point.
if __name__ == "__main__":
    main()
