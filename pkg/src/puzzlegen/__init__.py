"""puzzlegen: deterministic synthesis of visual-logic puzzle datasets.

The pipeline grows a pool of textual pattern rules with an island-model
genetic algorithm, filters it by embedding-space dedup and a scoring
rubric, renders each retained rule into an 8-panel image group in three
visual styles, runs image quality control, and assembles multiple-choice
puzzles with difficulty annotations and a dataset manifest.
"""

__version__ = "0.1.0"
