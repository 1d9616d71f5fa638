"""End-to-end CLI run on generated inputs: build-corpus, train, predict, evaluate.

    python3 scripts/toy_pipeline.py WORKDIR
"""

import sys
from pathlib import Path

from hnn4ort import corpus, evaluation
from hnn4ort.cli import main as cli
from hnn4ort.model import gold_extraction
from hnn4ort.synthetic import extractor_fixture, templated_corpus


def run(*argv):
    print("$ hnn4ort", " ".join(map(str, argv)))
    code = cli([str(a) for a in argv])
    if code:
        sys.exit(code)


def main():
    work = Path(sys.argv[1] if len(sys.argv) > 1 else "toy_run")
    work.mkdir(parents=True, exist_ok=True)

    sentences = templated_corpus(200, seed=1)
    outputs, _ = extractor_fixture(sentences, seed=1)
    with open(work / "extractions.tsv", "w", encoding="utf-8") as fh:
        for o in outputs:
            conf = "" if o.confidence is None else repr(o.confidence)
            fh.write("\t".join([o.sentence_id, o.extractor, conf, *o.triple]) + "\n")
    (work / "sentences.txt").write_text("".join(corpus.format_sentence_line(s) + "\n" for s, _ in sentences))

    run("build-corpus", work / "extractions.tsv", work / "sentences.txt", work / "corpus.jsonl", "--min-agree", "2")
    run("train", work / "corpus.jsonl", work / "model.ckpt", "--preset", "desk", "--max-epochs", "30")

    # score on every candidate pair of the corpus; gold comes from the corpus tags
    records = corpus.read_corpus(work / "corpus.jsonl")
    with open(work / "pairs.tsv", "w", encoding="utf-8") as fh:
        for r in records:
            a1, a2 = (",".join(map(str, span)) for span in r.pair)
            fh.write(f"{r.sentence_id}\t{a1}\t{a2}\n")
    evaluation.write_extractions(work / "gold.tsv", [gold_extraction(r) for r in records])

    run("predict", work / "model.ckpt", work / "sentences.txt", work / "pairs.tsv", work / "predictions.tsv")
    run("evaluate", work / "predictions.tsv", work / "gold.tsv", "--criterion", "exact_span",
        "--pr-curve", work / "pr.tsv", "--errors")


if __name__ == "__main__":
    main()
