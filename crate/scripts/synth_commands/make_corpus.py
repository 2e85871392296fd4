"""Build the synthesized spoken-command corpus under data/commands-synth.

Each base utterance is one espeak-ng rendering of a command word with a seeded
voice/variant/speed/pitch draw. Output is 16 kHz mono PCM16 with leading and
trailing silence trimmed; clips are placed into 1 s windows (with offsets and
noise) by the test harness, not here.

usage: python3 make_corpus.py [--per-class 60] [--seed 7]
requires: `npm install espeak-ng@1.0.2` in this directory, numpy, scipy
"""
import argparse
import json
import pathlib
import subprocess
import tempfile
import wave

import numpy as np
from scipy.signal import resample_poly

WORDS = ["yes", "no", "up", "down", "left"]
VOICES = ["en-us", "en", "en-gb-scotland", "en-gb-x-rp", "en-029", "en-gb-x-gbclan", "en-gb-x-gbcwmd", "en-us-nyc"]
VARIANTS = ["", "m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8", "f1", "f2", "f3", "f4", "f5",
            "Alex", "Andy", "annie", "ed", "john", "linda", "max", "paul", "robert", "steph", "travis", "zac"]

HERE = pathlib.Path(__file__).resolve().parent
ROOT = HERE.parent.parent


def trim(x, thresh=0.01, margin=400):
    idx = np.flatnonzero(np.abs(x) > thresh)
    if idx.size == 0:
        return x
    lo = max(0, idx[0] - margin)
    hi = min(len(x), idx[-1] + margin)
    return x[lo:hi]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--per-class", type=int, default=60)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    jobs = []
    for word in WORDS:
        for i in range(args.per_class):
            jobs.append({
                "id": f"{word}_{i:03d}",
                "word": word,
                "voice": VOICES[rng.integers(len(VOICES))],
                "variant": VARIANTS[rng.integers(len(VARIANTS))],
                "speed": int(rng.integers(110, 211)),
                "pitch": int(rng.integers(20, 81)),
            })

    out = ROOT / "data" / "commands-synth"
    with tempfile.TemporaryDirectory() as tmp:
        jobs_path = pathlib.Path(tmp) / "jobs.json"
        jobs_path.write_text(json.dumps(jobs))
        raw_dir = pathlib.Path(tmp) / "raw"
        subprocess.run(["node", str(HERE / "synth.mjs"), str(jobs_path), str(raw_dir)], check=True, cwd=HERE)

        lines = ["id\tword\tvoice\tvariant\tspeed\tpitch"]
        for job in jobs:
            with wave.open(str(raw_dir / f"{job['id']}.wav")) as w:
                assert w.getframerate() == 22050 and w.getnchannels() == 1 and w.getsampwidth() == 2
                x = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2").astype(np.float64) / 32768.0
            y = trim(resample_poly(x, 320, 441))[:15000]
            pcm = np.clip(np.round(y * 32768.0), -32768, 32767).astype("<i2")
            dst = out / job["word"] / f"{job['id']}.wav"
            dst.parent.mkdir(parents=True, exist_ok=True)
            with wave.open(str(dst), "wb") as w:
                w.setnchannels(1)
                w.setsampwidth(2)
                w.setframerate(16000)
                w.writeframes(pcm.tobytes())
            lines.append("\t".join(str(job[k]) for k in ["id", "word", "voice", "variant", "speed", "pitch"]))
        (out / "utterances.tsv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
