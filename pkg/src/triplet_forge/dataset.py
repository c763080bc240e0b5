"""Window tables that samplers, trainers and evaluators share."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frontend import ENERGY, ContextWindow, FeatureConfig, mel_spectrogram, window_array


@dataclass
class Example:
    window: ContextWindow
    labels: frozenset | None = None
    recording_id: str = ""
    start_time_s: float = 0.0


class ExampleSet:
    """Column store of energy-domain context windows.

    Windows are addressed by ``(recording index, window index)`` references,
    which is what triplet shards persist.
    """

    def __init__(self, cells, rec_index, win_index, start_s, labels=None, recording_ids=None):
        self.cells = np.asarray(cells)
        n = len(self.cells)
        self.rec_index = np.asarray(rec_index, dtype=np.int64).reshape(n)
        self.win_index = np.asarray(win_index, dtype=np.int64).reshape(n)
        self.start_s = np.asarray(start_s, dtype=np.float64).reshape(n)
        self.labels = None if labels is None else [frozenset(l) for l in labels]
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("labels must have one entry per window")
        if recording_ids is None:
            recording_ids = {int(r): str(int(r)) for r in np.unique(self.rec_index)}
        self.recording_ids = dict(recording_ids)
        self._row = {(int(r), int(w)): i for i, (r, w) in enumerate(zip(self.rec_index, self.win_index))}

    def __len__(self):
        return len(self.cells)

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def row(self, ref) -> int:
        return self._row[(int(ref[0]), int(ref[1]))]

    def ref(self, row: int) -> tuple[int, int]:
        return int(self.rec_index[row]), int(self.win_index[row])

    def window(self, ref) -> np.ndarray:
        return self.cells[self.row(ref)]

    def subset(self, rows) -> "ExampleSet":
        rows = np.asarray(rows, dtype=np.int64)
        labels = None if self.labels is None else [self.labels[i] for i in rows]
        return ExampleSet(self.cells[rows], self.rec_index[rows], self.win_index[rows],
                          self.start_s[rows], labels, self.recording_ids)

    def segment_ids(self, segment_windows: int | None = None) -> np.ndarray:
        """u64 segment id per window: whole recordings, or runs of ``segment_windows``."""
        seg = np.zeros(len(self), dtype=np.int64) if segment_windows is None else self.win_index // segment_windows
        return (self.rec_index.astype(np.uint64) << np.uint64(32)) | seg.astype(np.uint64)

    def window_ids(self) -> np.ndarray:
        return (self.rec_index.astype(np.uint64) << np.uint64(32)) | self.win_index.astype(np.uint64)

    def examples(self) -> list[Example]:
        out = []
        for i in range(len(self)):
            rid = self.recording_ids[int(self.rec_index[i])]
            window = ContextWindow(self.cells[i], float(self.start_s[i]), rid, ENERGY)
            out.append(Example(window, None if self.labels is None else self.labels[i], rid, float(self.start_s[i])))
        return out

    @classmethod
    def from_examples(cls, examples) -> "ExampleSet":
        if isinstance(examples, ExampleSet):
            return examples
        examples = list(examples)
        if not examples:
            raise ValueError("empty dataset")
        ids, seen = {}, {}
        rec_index, win_index = [], []
        for ex in examples:
            r = ids.setdefault(ex.recording_id, len(ids))
            rec_index.append(r)
            win_index.append(seen.get(r, 0))
            seen[r] = win_index[-1] + 1
        has_labels = [ex.labels is not None for ex in examples]
        if any(has_labels) and not all(has_labels):
            raise ValueError("either every example is labeled or none is")
        labels = [ex.labels for ex in examples] if all(has_labels) else None
        cells = np.stack([ex.window.cells for ex in examples])
        return cls(cells, rec_index, win_index, [ex.start_time_s for ex in examples], labels,
                   {v: k for k, v in ids.items()})


def as_example_set(dataset) -> ExampleSet:
    return dataset if isinstance(dataset, ExampleSet) else ExampleSet.from_examples(dataset)


def featurize_manifest(manifest, waveforms, cfg: FeatureConfig = FeatureConfig()) -> dict:
    """Mel-energy spectrogram (float32, channel-major) for every recording."""
    return {
        rec.recording_id: mel_spectrogram(waveforms[rec.recording_id], cfg).cells.astype(np.float32)
        for rec in manifest.recordings
    }


def build_example_set(manifest, spectrograms: dict, split: str | None = None,
                      T: int = 96, frame_hop_s: float = 0.01, labeled: bool = True) -> ExampleSet:
    """Window every recording of ``split`` and attach window label sets."""
    cells, rec_index, win_index, start_s, labels = [], [], [], [], []
    ids = {}
    for r, rec in enumerate(manifest.recordings):
        if split is not None and rec.split != split:
            continue
        windows = window_array(spectrograms[rec.recording_id], T)
        ids[r] = rec.recording_id
        win_labels = manifest.window_labels(rec, len(windows))
        for k in range(len(windows)):
            cells.append(windows[k])
            rec_index.append(r)
            win_index.append(k)
            start_s.append(k * T * frame_hop_s)
            labels.append(win_labels[k])
    if not cells:
        raise ValueError(f"no windows in split {split!r}")
    return ExampleSet(np.stack(cells), rec_index, win_index, start_s, labels if labeled else None, ids)
