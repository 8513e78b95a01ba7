"""Rain/snow prediction table.

Runs ``configs/weather.yaml`` when ``data/gsod_weather.csv`` exists and the
synthetic logistic network otherwise.
"""

from pathlib import Path

from _common import run_configs

if __name__ == "__main__":
    have_data = (Path(__file__).resolve().parents[1] / "data" / "gsod_weather.csv").exists()
    run_configs(["weather" if have_data else "weather_synthetic"], __doc__)
