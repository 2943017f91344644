"""Acceptance criteria, one test each. Run with ``pytest tests/test_acceptance.py -s``
to see a PASS/FAIL line per criterion."""

import math
import os
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from spkeval import abx, distance, lm, quantize, unitmetrics, zeroshot
from spkeval.cli import dispatch
from spkeval.io import AlignmentTable, FeatureSequence, PairRow, Segment, load_feature_dir, read_alignment
from spkeval.mcd import MCD_CONST, CepstralSequence, mcd

from oracles import abx_flat, collapse, dtw_angular, dtw_angular_dp, dtw_enumerate, entropy_oracle, levenshtein_table
from synth import RATE, cli_commands, item_frames, make_workspace, random_corpus, report_bytes


def report(n, title, ok, detail=""):
    print(f"\ncriterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
    assert ok, f"criterion {n} failed: {detail}"


def test_c01_dtw_oracle():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        d = int(rng.integers(1, 5))
        x = rng.standard_normal((int(rng.integers(1, 7)), d))
        y = rng.standard_normal((int(rng.integers(1, 7)), d))
        worst = max(worst, abs(distance.dtw_distance(x, y) - dtw_angular(x, y)))
    elapsed = time.perf_counter() - t0
    report(1, "DTW equals path enumeration", worst <= 1e-12 and elapsed < 10,
           f"max |diff|={worst:.2e}, {elapsed:.1f}s")


def test_c02_abx_oracle():
    diffs = {}
    corpora = [
        dict(n_speakers=3, n_phones=3, n_utts=14, utt_len=(3, 7), dur=(1, 3), dim=3),
        dict(n_speakers=4, n_phones=6, n_utts=30, utt_len=(3, 6), dur=(1, 3), dim=4),
    ]
    for ci, kw in enumerate(corpora):
        feats, align = random_corpus(np.random.default_rng(200 + ci), **kw)
        for task in abx.TASKS:
            items = abx.extract_items(align, abx.task_span(task))
            assert len(items) <= 200
            got = abx.evaluate_task(items, feats, task, cap=None).error
            want = abx_flat(items, lambda it: item_frames(feats, it), task, dtw_angular_dp)
            diffs[(ci, task)] = abs(got - want)
    worst = max(diffs.values())
    report(2, "ABX pipeline equals flat brute force (4 tasks)", worst <= 1e-12, f"max |diff|={worst:.2e}")


def test_c03_chance():
    rng = np.random.default_rng(303)
    feats, align = random_corpus(rng, n_speakers=4, n_phones=4, n_utts=120, utt_len=(4, 8), dur=(1, 4), dim=8)
    errors, triplets = {}, 0
    for task in abx.TASKS:
        items = abx.extract_items(align, abx.task_span(task))
        cells = abx.build_cells(items, task, seed=0)
        for c in cells:
            # within-speaker cells draw X from A, excluding x == a
            n_a = len(c.tokens_a) - (c.speaker_mode == "within")
            triplets += len(c.tokens_x) * n_a * len(c.tokens_b)
        scores = abx.score_cells(cells, feats)
        errors[task] = 100 * abx.abx_error_rate(cells, scores).error
    ok = all(abs(e - 50) <= 2 for e in errors.values()) and triplets >= 1000
    detail = ", ".join(f"{t}={e:.2f}%" for t, e in errors.items())
    report(3, "chance level on i.i.d. noise", ok, f"{detail}; {triplets} triplets")


def test_c04_scale_invariance():
    rng = np.random.default_rng(404)
    feats, align = random_corpus(rng, n_speakers=3, n_phones=4, n_utts=30, dim=6)
    scaled = {u: s.with_data(np.asarray(s.data) * 7.3) for u, s in feats.items()}
    same = True
    for task in abx.TASKS:
        items = abx.extract_items(align, abx.task_span(task))
        a = abx.evaluate_task(items, feats, task).to_dict()
        b = abx.evaluate_task(items, scaled, task).to_dict()
        same &= repr(a) == repr(b)
    report(4, "ABX reports unchanged under x7.3 scaling", same)


def test_c05_one_hot_equidistance():
    k = 50
    seq = quantize.one_hot_features(quantize.UnitSequence(np.arange(k)), k)
    worst = 0.0
    for i in range(k):
        for j in range(k):
            if i != j:
                d = distance.dtw_distance(seq.data[i:i + 1], seq.data[j:j + 1])
                worst = max(worst, abs(d - 0.5))
    report(5, "one-hot units are equidistant", worst <= 1e-12, f"max |d-0.5|={worst:.2e}")


def test_c06_kmeans():
    monotone = True
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((int(rng.integers(20, 300)), int(rng.integers(1, 8))))
        cb = quantize.kmeans_fit(x, int(rng.integers(2, 10)), seed=seed)
        monotone &= bool(np.all(np.diff(cb.inertia_history) <= 0))
    cb = quantize.kmeans_fit([[0.0], [2.0], [10.0], [12.0]], 2)
    toy = sorted(cb.centroids.ravel()) == [1.0, 11.0] and cb.final_inertia == 4.0
    x = np.random.default_rng(7).standard_normal((10000, 5))
    books = [quantize.kmeans_fit(x, 10, seed=5, threads=t).centroids.tobytes() for t in (1, 4, 16)]
    identical = books[0] == books[1] == books[2]
    report(6, "k-means monotone, toy exact, thread-invariant", monotone and toy and identical,
           f"monotone={monotone} toy={toy} threads={identical}")


def test_c07_unit_metrics():
    rng = np.random.default_rng(707)
    worst = 0.0
    for _ in range(1000):
        counts = rng.integers(0, 15, size=(int(rng.integers(1, 9)), int(rng.integers(2, 9))))
        counts[0] += 1
        t = unitmetrics.JointTable(counts)
        want = entropy_oracle(counts.tolist())
        got = (unitmetrics.pnmi(t), unitmetrics.phone_purity(t), unitmetrics.cluster_purity(t))
        worst = max(worst, max(abs(g - w) for g, w in zip(got, want)))
    det = unitmetrics.pnmi(unitmetrics.JointTable([[5, 0, 0], [0, 3, 0], [0, 0, 9], [2, 0, 0]]))
    prod = unitmetrics.pnmi(unitmetrics.JointTable(np.outer([1, 2, 3], [4, 1, 2])))
    ok = worst <= 1e-12 and abs(det - 1) <= 1e-12 and abs(prod) <= 1e-12
    report(7, "PNMI / purities match entropy oracle", ok, f"max |diff|={worst:.2e}, det={det!r}, product={prod!r}")


def test_c08_per():
    rng = np.random.default_rng(808)
    mismatches = 0
    idempotent = True
    for _ in range(1000):
        pred = rng.integers(0, 5, size=int(rng.integers(0, 20))).tolist()
        gold = rng.integers(0, 5, size=int(rng.integers(1, 20))).tolist()
        g = collapse(gold)
        mismatches += unitmetrics.phone_error_rate(pred, gold) != levenshtein_table(collapse(pred), g) / len(g)
        once = quantize.dedup(pred)
        idempotent &= quantize.dedup(once) == once
    report(8, "PER equals quadratic edit-distance oracle", mismatches == 0 and idempotent,
           f"mismatches={mismatches} dedup_idempotent={idempotent}")


def test_c09_ngram():
    rng = np.random.default_rng(909)
    corpus = [rng.integers(0, 6, size=int(rng.integers(1, 15))).tolist() for _ in range(80)]
    worst_norm = 0.0
    for order in (1, 2, 3, 4):
        m = lm.ngram_train(corpus, order=order)
        for h in m.histories() + [(99,) * (order - 1)]:
            worst_norm = max(worst_norm, abs(sum(m.prob(w, h) for w in m.vocab) - 1))
    ppl = [lm.perplexity(lm.ngram_train(corpus, order=o, dedup_units=False), corpus) for o in range(1, 7)]
    monotone = all(b <= a for a, b in zip(ppl, ppl[1:]))
    # [[0, 0, 1]], order 1, D = 0.75: counts 0:2, 1:1, EOS:1 over 3 types with base 1/3
    m = lm.ngram_train([[0, 0, 1]], order=1, discount=0.75, dedup_units=False)
    hand = {0: 1.25 / 4 + 0.75 * 3 / 4 / 3, 1: 0.25 / 4 + 0.75 * 3 / 4 / 3, lm.EOS: 0.25 / 4 + 0.75 * 3 / 4 / 3}
    m2 = lm.ngram_train([[0, 1, 0]], order=2, discount=0.75, dedup_units=False)
    hand2 = {0: 0.75 * 0.5, 1: 0.25 / 2 + 0.75 * 0.25, lm.EOS: 0.25 / 2 + 0.75 * 0.25}
    worst_hand = max([abs(m.prob(w) - p) for w, p in hand.items()] + [abs(m2.prob(w, [0]) - p) for w, p in hand2.items()])
    ok = worst_norm <= 1e-9 and monotone and worst_hand <= 1e-12
    report(9, "n-gram normalised, perplexity falls with order, matches hand formula", ok,
           f"max |sum-1|={worst_norm:.1e} ppl={[round(p, 3) for p in ppl]} hand |diff|={worst_hand:.1e}")


def test_c10_zeroshot():
    rng = np.random.default_rng(1010)
    pairs = [PairRow(f"p{i}", f"a{i}", f"b{i}", "ab"[int(rng.integers(2))], True) for i in range(200)]
    truth = {p.true_member for p in pairs}
    oracle = zeroshot.pair_accuracy(lambda r: 0.0 if r in truth else -1.0, pairs)["accuracy"]
    constant = zeroshot.pair_accuracy(lambda r: -3.0, pairs)["accuracy"]
    invariant = True
    for _ in range(50):
        raw = {r: float(rng.integers(-4, 4)) for p in pairs for r in (p.member_a, p.member_b)}
        base = zeroshot.pair_accuracy(raw.get, pairs)["accuracy"]
        for f in (np.exp, lambda v: 2 * v - 7, lambda v: v ** 3):
            invariant &= zeroshot.pair_accuracy(lambda r: f(raw[r]), pairs)["accuracy"] == base
    ok = oracle == 1.0 and constant == 0.5 and invariant
    report(10, "zero-shot harness calibration", ok, f"oracle={oracle} constant={constant} invariant={invariant}")


def _gold_phoneme_corpus(rng, n_phones=12, dim=40, sigma=0.05, n_frames=10000, n_speakers=4):
    """Utterances of lexicon words; every frame is its phone's one-hot vector plus noise."""
    lexicon = []
    while len(lexicon) < 30:
        length = int(rng.integers(3, 6))
        word = [int(rng.integers(n_phones))]
        while len(word) < length:
            p = int(rng.integers(n_phones))
            if p != word[-1]:
                word.append(p)
        if word not in lexicon:
            lexicon.append(word)
    basis = np.eye(dim)[:n_phones]
    feats, rows, total, u = {}, [], 0, 0
    while total < n_frames:
        utt, spk = f"u{u:04d}", f"s{u % n_speakers}"
        phones = [p for w in rng.integers(len(lexicon), size=int(rng.integers(3, 7))) for p in lexicon[w]]
        frames, t = [], 0
        for p in phones:
            d = int(rng.integers(3, 8))
            rows.append(Segment(utt, t / RATE, (t + d) / RATE, f"ph{p:02d}", spk))
            frames.append(basis[p] + sigma * rng.standard_normal((d, dim)))
            t += d
        feats[utt] = FeatureSequence(np.concatenate(frames), RATE, utt)
        total += t
        u += 1
    return feats, AlignmentTable.from_rows(rows), lexicon


def test_c11_end_to_end():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1111)
    n_phones = 12
    feats, align, lexicon = _gold_phoneme_corpus(rng, n_phones=n_phones)
    utts = sorted(feats)
    samples = quantize.stack_features([feats[u] for u in utts])

    cb = quantize.kmeans_fit(samples, n_phones, seed=0)
    units = {u: quantize.assign(cb, feats[u]) for u in utts}
    table = unitmetrics.joint_counts(units.values(), align)
    pnmi = unitmetrics.pnmi(table)

    one_hot = {u: quantize.one_hot_features(units[u], cb.k) for u in utts}
    items = abx.extract_items(align, "triphone")
    report_ = abx.ABXReport()
    for task in ("triphone-within-spk", "triphone-across-spk"):
        report_.add("synthetic", abx.evaluate_task(items, one_hot, task, seed=0))
    abx_err = report_.average()["triphone"]["error"]

    # majority unit of each phone turns lexicon words into unit words
    phone_unit = {table.phones[j]: table.units[int(np.argmax(table.counts[:, j]))] for j in range(len(table.phones))}
    model = lm.ngram_train([units[u] for u in utts], order=3, dedup_units=True)
    seqs, pairs = {}, []
    lex = {tuple(w) for w in lexicon}
    for wi, word in enumerate(lexicon):
        real = [phone_unit[f"ph{p:02d}"] for p in word]
        seqs[f"w{wi}"] = real
        for k in range(5):
            for _ in range(100):
                fake = [int(v) for v in rng.permutation(word)]
                if tuple(fake) not in lex and all(a != b for a, b in zip(fake, fake[1:])):
                    break
            else:
                continue
            seqs[f"w{wi}.{k}"] = [phone_unit[f"ph{p:02d}"] for p in fake]
            pairs.append(PairRow(f"p{wi}.{k}", f"w{wi}", f"w{wi}.{k}", "a", True))
    acc = zeroshot.pair_accuracy(zeroshot.ModelScorer(model, seqs), pairs)["accuracy"]
    elapsed = time.perf_counter() - t0
    ok = pnmi > 0.99 and abx_err < 0.01 and acc > 0.9 and elapsed < 120
    report(11, "synthetic gold-phoneme pipeline", ok,
           f"frames={samples.shape[0]} PNMI={pnmi:.4f} triphone ABX={100 * abx_err:.2f}% "
           f"lexical acc={100 * acc:.1f}% ({len(pairs)} pairs) {elapsed:.1f}s")


def test_c12_mcd():
    rng = np.random.default_rng(1212)
    x = rng.standard_normal((30, 13))
    zero = mcd(CepstralSequence(x), CepstralSequence(x))
    worst_offset = 0.0
    for delta in (0.05, -0.3, 1.7, -4.2):
        shift = np.zeros(13)
        shift[int(rng.integers(13))] = delta
        got = mcd(CepstralSequence(x), CepstralSequence(x + shift), align="frame")
        worst_offset = max(worst_offset, abs(got - 10 * math.sqrt(2) / math.log(10) * abs(delta)))
    worst_dtw = 0.0
    for _ in range(200):
        a = rng.standard_normal((int(rng.integers(1, 7)), 13))
        b = rng.standard_normal((int(rng.integers(1, 7)), 13))
        want = MCD_CONST * dtw_enumerate([[math.dist(u, v) for v in b] for u in a])
        worst_dtw = max(worst_dtw, abs(mcd(CepstralSequence(a), CepstralSequence(b)) - want))
    ok = zero == 0.0 and worst_offset <= 1e-9 and worst_dtw <= 1e-9
    report(12, "MCD zero, offset closed form, DTW oracle", ok,
           f"mcd(x,x)={zero} offset |diff|={worst_offset:.1e} dtw |diff|={worst_dtw:.1e}")


def test_c13_determinism(tmp_path):
    ws = make_workspace(tmp_path / "ws")
    out = tmp_path / "out"
    snapshots, codes = [], set()
    for threads in (1, 1, 4, 16):
        if out.exists():
            shutil.rmtree(out)
        for _, argv in cli_commands(ws, out):
            codes.add(dispatch(argv + ["--threads", str(threads)]))
        snapshots.append(report_bytes(out))
    same = all(s == snapshots[0] for s in snapshots[1:])
    n_cmds = len({argv[0] for _, argv in cli_commands(ws, out)})
    report(13, "CLI reports byte-identical across runs and thread counts", same and codes == {0},
           f"{n_cmds} subcommands, {len(snapshots[0])} files, exit codes {sorted(codes)}")


INTEGRATION = os.environ.get("SPKEVAL_INTEGRATION_DIR")


@pytest.mark.skipif(not INTEGRATION, reason="set SPKEVAL_INTEGRATION_DIR to exported features to run")
def test_c14_integration():
    """Expects ``base-l11/`` and ``ft-l12/`` feature directories and ``alignment.tsv``;
    ``base-l11-units.tsv`` / ``ft-l12-units.tsv`` (k=500) enable the PNMI check."""
    root = Path(INTEGRATION)
    align = read_alignment(root / "alignment.tsv")
    targets = {"base-l11": (4.20, 0.669), "ft-l12": (1.20, 0.846)}
    lines, ok = [], True
    for name, (want_abx, want_pnmi) in targets.items():
        feats = load_feature_dir(root / name)
        rep = abx.ABXReport()
        items = abx.extract_items(align, "triphone")
        for task in ("triphone-within-spk", "triphone-across-spk"):
            rep.add(name, abx.evaluate_task(items, feats, task, threads=os.cpu_count() or 1))
        err = 100 * rep.average()["triphone"]["error"]
        ok &= abs(err - want_abx) <= 0.5
        lines.append(f"{name} ABX={err:.2f} (ref {want_abx})")
        units_path = root / f"{name}-units.tsv"
        if units_path.is_file():
            table = unitmetrics.joint_counts(quantize.read_units(units_path).values(), align)
            p = unitmetrics.pnmi(table)
            ok &= abs(p - want_pnmi) <= 0.03
            lines.append(f"PNMI={p:.3f} (ref {want_pnmi})")
    report(14, "integration against published numbers", ok, "; ".join(lines))
