"""Build the stratified MR (rotten tomatoes sentence polarity) subset used by
the acceptance suite.

Source: the `movie-reviews` PyPI wheel (MIT), which bundles the 8,530-sentence
rotten tomatoes train split. Usage:

    pip download --no-deps -d /tmp/mr movie-reviews==0.0.2
    python3 scripts/make_mr_subset.py /tmp/mr/movie_reviews-0.0.2-py3-none-any.whl crates/cli/tests/data
"""
import csv
import io
import random
import sys
import zipfile


def main(wheel, out_dir, per_class_train=1000, per_class_test=250, seed=20240601):
    z = zipfile.ZipFile(wheel)
    raw = z.read("movie_reviews/data/combined_movie_reviews.csv").decode("utf-8")
    rows = [r for r in csv.DictReader(io.StringIO(raw)) if r["source"] == "rotten_tomatoes"]
    by_label = {"0": [], "1": []}
    for r in rows:
        by_label[r["label"]].append(r["text"].strip())
    rng = random.Random(seed)
    names = {"0": "neg", "1": "pos"}
    train, test = [], []
    for lab in ("0", "1"):
        texts = sorted(set(by_label[lab]))
        rng.shuffle(texts)
        train += [(names[lab], t) for t in texts[:per_class_train]]
        test += [(names[lab], t) for t in texts[per_class_train:per_class_train + per_class_test]]
    rng.shuffle(train)
    rng.shuffle(test)
    for name, data in (("mr_train.csv", train), ("mr_test.csv", test)):
        with open(f"{out_dir}/{name}", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["label", "text"])
            w.writerows(data)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
