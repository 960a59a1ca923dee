"""Main application entry point: design runs, results archive and worker helpers."""
import logging
import sys

from squeeze_designer.cli import run
from squeeze_designer.config import Config

# Configure logging
logging.basicConfig(level=Config.LOG_LEVEL, stream=sys.stderr)
logger = logging.getLogger(__name__)


def show_help():
    """Show help message."""
    print("""
squeeze-designer - Photonic state source design from squeezers and detectors

Usage:
    python main.py simulate --experiment ghz4_fig1                 F, P and truncation error at fixed parameters
    python main.py optimize --experiment bell_sliwa_appB2 --f0 0.9 One optimization at a target fidelity
    python main.py sweep --experiment ghz4_fig1 --out runs/ghz4    Write front.csv for the descriptor topology
    python main.py enumerate-orderings --experiment w7_appB1       Canonical source orderings and their count
    python main.py decompose --experiment noon3_appB3              Fidelity per ancilla photon number
    python main.py reproduce --experiment noon3_appB3 --threads 4  Full report bundle for a descriptor
    python main.py init-db                                         Initialize the results archive
    python main.py stats                                           Show archive statistics
    python main.py help                                            Show this help message

Common flags:
    --out DIR  --seed N  --cutoff-override N  --threads N  --f0-range a:b:step  --weights-preset NAME

Docker Usage:
    docker-compose up -d                 Start postgres, redis, worker and flower
    docker-compose logs celery-worker    View worker logs
    CELERY_ALWAYS_EAGER=false python main.py reproduce --experiment w7_appB1
    """)


if __name__ == "__main__":
    if len(sys.argv) < 2 or sys.argv[1] == "help":
        show_help()
        sys.exit(0 if len(sys.argv) >= 2 else 1)

    sys.exit(run(sys.argv[1:]))
