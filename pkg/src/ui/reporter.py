"""
Training progress reporter: loss curve CSV (epoch,lr,loss) plus log lines
"""

import csv
import logging
import os
from typing import List, Optional

from src.core.trainer import LossRow

logger = logging.getLogger(__name__)

CSV_HEADER = ("epoch", "lr", "loss")


class LossReporter:
    """
    Receives training callbacks; appends one CSV row per epoch when a path is given
    """

    def __init__(self, csv_path: Optional[str] = None, log_every: int = 1):
        self.csv_path = csv_path
        self.log_every = max(1, log_every)
        self.rows: List[LossRow] = []
        if csv_path:
            directory = os.path.dirname(csv_path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(csv_path, 'w', newline='', encoding='utf-8') as f:
                csv.writer(f).writerow(CSV_HEADER)

    def on_epoch(self, row: LossRow):
        self.rows.append(row)
        if self.csv_path:
            with open(self.csv_path, 'a', newline='', encoding='utf-8') as f:
                csv.writer(f).writerow([row.epoch, repr(row.lr), repr(row.loss)])
        if row.epoch % self.log_every == 0:
            logger.info(f"epoch {row.epoch}: lr={row.lr:g} loss={row.loss:.6f}")

    def on_checkpoint(self, epoch: int, path: str):
        logger.info(f"epoch {epoch}: checkpoint written to {path}")

    def on_validation(self, epoch: int, psnr: float, best: bool):
        marker = " (best)" if best else ""
        logger.info(f"epoch {epoch}: validation {psnr:.3f} dB{marker}")


def read_loss_csv(path: str) -> List[LossRow]:
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        return [LossRow(int(r['epoch']), float(r['lr']), float(r['loss'])) for r in reader]
