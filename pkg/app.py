"""
Command-line entry point.

Every subcommand wraps one toolkit operation; ``report ablation`` runs the
whole ladder from a config file. Exit status is 0 on success and 1 when an
input or setting is rejected.
"""

import argparse
import math
import sys
from dataclasses import replace

from augment import augment_embeddings, build_plans, read_candidate_map, write_plans
from boost import boost_index, build_index, read_index, read_ne_set, regenerate_lattice, search, write_index
from dashboard import format_ablation, format_blocks, write_ablation_chart
from data_processing import (
    pair_transcripts,
    read_corpus,
    read_lattice_file,
    read_ne_list,
    read_transcripts,
    write_lattice_file,
)
from evaluation import classify_nes, format_report, ne_wer, report_values, score_corpus, wer
from lattice import best_path, forward_backward, n_best
from lexicon import build_graphemic_lexicon, expand_lexicon, graphemize, read_lexicon, write_lexicon
from neural_lm import build_vocabulary, gradient_check, init_model, load_model, save_model, score_sentences, train
from ngram import load_arpa, save_arpa, train_kn
from pipeline import run_pipeline
from rescore import rescore_lattices, rescore_nbest
from settings import InterpolationConfig, NeuralLMConfig, ScaleConfig, load_settings
from simulate_data import PRESET_NAME, SynthConfig, build_ablation_preset, write_fixture
from utils import format_rate, get_logger, setup_logging

logger = get_logger("app")


def _emit(values, kv):
    """Print metrics as an aligned table, or as key=value lines."""
    if kv:
        for key, value in values.items():
            print(f"{key}={value}")
        return
    width = max(len(key) for key in values)
    for key, value in values.items():
        print(f"{key:<{width}}  {value}")


def _scales(args):
    return ScaleConfig(args.acoustic_scale, args.lm_scale)


def _interpolation(args):
    return InterpolationConfig(
        kn_weight=args.kn_weight, scales=_scales(args), nbest_size=args.nbest, state_cap=args.state_cap
    )


def _models(args):
    kn = load_arpa(args.arpa) if args.arpa else None
    nlm = load_model(args.nlm) if args.nlm else None
    return kn, nlm


# lattice -----------------------------------------------------------------


def cmd_lattice_best_path(args):
    scales = _scales(args)
    for lat in read_lattice_file(args.lattices):
        print(f"{lat.utterance_id}\t{' '.join(best_path(lat, scales).words)}")


def cmd_lattice_posteriors(args):
    scales = _scales(args)
    for lat in read_lattice_file(args.lattices):
        posteriors, _ = forward_backward(lat, scales)
        times = lat.node_times
        for i, arc in enumerate(lat.arcs):
            print(
                f"{lat.utterance_id}\t{i}\t{arc.word}\t{times[arc.source]}\t{times[arc.target]}\t"
                f"{posteriors[i]:.6f}"
            )


def cmd_lattice_nbest(args):
    scales = _scales(args)
    for lat in read_lattice_file(args.lattices):
        for rank, hyp in enumerate(n_best(lat, scales, args.n), start=1):
            print(f"{lat.utterance_id}\t{rank}\t{hyp.total_score:.6f}\t{' '.join(hyp.words)}")


# lexicon -----------------------------------------------------------------


def cmd_lexicon_graphemize(args):
    for word in args.words:
        print(f"{word}\t{' '.join(graphemize(word))}")


def cmd_lexicon_expand(args):
    if args.lexicon:
        base = read_lexicon(args.lexicon)
    else:
        base = build_graphemic_lexicon(t for s in read_corpus(args.corpus) for t in s)
    expanded, added = expand_lexicon(base, sorted(read_ne_list(args.words)))
    write_lexicon(expanded, args.output)
    _emit({"entries": len(expanded), "added": len(added)}, args.kv)


# ngram -------------------------------------------------------------------


def cmd_ngram_train(args):
    corpus = read_corpus(args.corpus)
    vocab = {t for s in corpus for t in s}
    if args.extra:
        vocab |= set(read_ne_list(args.extra))
    lm = train_kn(corpus, args.order, vocab)
    save_arpa(lm, args.output)
    logger.info(f"Wrote {args.order}-gram model over {len(lm.vocab)} words to {args.output}")


def cmd_ngram_score(args):
    lm = load_arpa(args.arpa)
    corpus = read_corpus(args.corpus)
    _emit({"sentences": len(corpus), "perplexity": f"{lm.perplexity(corpus):.4f}"}, args.kv)


# nlm ---------------------------------------------------------------------


def cmd_nlm_train(args):
    config = NeuralLMConfig(
        dim=args.dim,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        seed=args.seed,
        letter_features=args.letter_features,
        hash_slots=args.hash_slots,
    )
    extra = sorted(read_ne_list(args.extra)) if args.extra else ()
    lm = train(read_corpus(args.corpus), config, extra)
    save_model(lm, args.output)
    logger.info(f"Wrote neural LM to {args.output}")


def cmd_nlm_score(args):
    lm = load_model(args.model)
    corpus = read_corpus(args.corpus)
    total = sum(score_sentences(lm, corpus, args.jobs))
    tokens = sum(len(s) + 1 for s in corpus)
    _emit({"sentences": len(corpus), "perplexity": f"{math.exp(-total / tokens):.4f}"}, args.kv)


def cmd_nlm_gradcheck(args):
    corpus = read_corpus(args.corpus)
    config = NeuralLMConfig(
        dim=args.dim, seed=args.seed, init_scale=0.5, letter_features=args.letter_features, hash_slots=64
    )
    lm = init_model(build_vocabulary(corpus), config)
    report = gradient_check(lm, corpus[0])
    values = {name: f"{error:.3e}" for name, error in report.errors.items()}
    values["passed"] = str(report.passed).lower()
    _emit(values, args.kv)
    return 0 if report.passed else 1


# augment -----------------------------------------------------------------


def cmd_augment_apply(args):
    lm = load_model(args.model)
    inventory = classify_nes(read_ne_list(args.ne_list), read_corpus(args.train), args.threshold)
    plans = build_plans(
        inventory, read_candidate_map(args.candidates), args.k, args.theta_rare, args.theta_oov, vocab=lm.vocab
    )
    save_model(augment_embeddings(lm, plans), args.output)
    if args.plans:
        write_plans(plans, args.plans)
    _emit({"augmented": len(plans), "rare": len(inventory.rare), "oov": len(inventory.oov)}, args.kv)


# rescore -----------------------------------------------------------------


def cmd_rescore_lattice(args):
    kn, nlm = _models(args)
    lattices = rescore_lattices(read_lattice_file(args.lattices), kn, nlm, _interpolation(args), args.jobs)
    write_lattice_file(lattices, args.output)


def cmd_rescore_nbest(args):
    kn, nlm = _models(args)
    cfg = _interpolation(args)
    for lat in read_lattice_file(args.lattices):
        for rank, hyp in enumerate(rescore_nbest(lat, kn, nlm, cfg), start=1):
            print(f"{lat.utterance_id}\t{rank}\t{hyp.total_score:.6f}\t{' '.join(hyp.words)}")


# boost -------------------------------------------------------------------


def cmd_boost_index(args):
    index = build_index(read_lattice_file(args.lattices), _scales(args), args.jobs)
    write_index(index, args.output)


def cmd_boost_search(args):
    for entry in search(read_index(args.index), args.word):
        print(f"{entry.utterance_id}\t{entry.start}\t{entry.end}\t{entry.posterior:.6f}")


def cmd_boost_apply(args):
    scales = _scales(args)
    lattices = read_lattice_file(args.lattices)
    boosted = boost_index(build_index(lattices, scales, args.jobs), read_ne_set(args.ne_set), args.bonus)
    if args.index:
        write_index(boosted, args.index)
    write_lattice_file([regenerate_lattice(lat, boosted, scales) for lat in lattices], args.output)


# eval --------------------------------------------------------------------


def cmd_eval_wer(args):
    pairs = pair_transcripts(read_transcripts(args.reference), read_transcripts(args.hypothesis))
    counts = score_corpus(pairs)
    values = {
        "WER": format_rate(counts.rate, 2),
        "S": counts.substitutions,
        "D": counts.deletions,
        "I": counts.insertions,
        "N": counts.reference_length,
    }
    _emit(values, args.kv)


def cmd_eval_ne_wer(args):
    pairs = pair_transcripts(read_transcripts(args.reference), read_transcripts(args.hypothesis))
    inventory = classify_nes(read_ne_list(args.ne_list), read_corpus(args.train), args.threshold)
    result = ne_wer(pairs, inventory)
    if args.kv:
        values = report_values(wer(pairs), result)
        for key in ("WER", "NE-WER", "NE-WER_rare", "NE-WER_oov"):
            values[key] = format_rate(values[key], 2)
        _emit(values, True)
    else:
        print(format_report(wer(pairs), result), end="")


# synth / report ----------------------------------------------------------


def cmd_synth_generate(args):
    cfg = SynthConfig(seed=args.seed)
    if args.preset:
        conf, report = build_ablation_preset(args.out, cfg)
        print(format_ablation(report), end="")
    else:
        conf = write_fixture(args.out, cfg)
    logger.info(f"Config written to {conf}")


def cmd_report_ablation(args):
    settings = load_settings(args.config)
    if args.jobs > 1:
        settings = replace(settings, jobs=args.jobs)
    report = run_pipeline(settings)
    print(format_blocks(report) + "\n" if args.kv else format_ablation(report), end="")
    if args.html:
        write_ablation_chart(report, args.html)


# parser ------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="Debug logging")
    common.add_argument("--kv", action="store_true", help="key=value output")
    common.add_argument("--jobs", type=int, default=1, help="Utterance-parallel worker threads")

    scales = argparse.ArgumentParser(add_help=False)
    scales.add_argument("--acoustic-scale", type=float, default=ScaleConfig.acoustic_scale)
    scales.add_argument("--lm-scale", type=float, default=ScaleConfig.lm_scale)

    mixing = argparse.ArgumentParser(add_help=False, parents=[scales])
    mixing.add_argument("--arpa", help="KN model (ARPA)")
    mixing.add_argument("--nlm", help="Neural LM model file")
    mixing.add_argument("--kn-weight", type=float, default=InterpolationConfig.kn_weight)
    mixing.add_argument("--nbest", type=int, default=InterpolationConfig.nbest_size)
    mixing.add_argument("--state-cap", type=int, default=InterpolationConfig.state_cap)

    parser = argparse.ArgumentParser(prog="nelat", description="Named-entity lattice toolkit")
    groups = parser.add_subparsers(dest="group", required=True)

    def command(group, name, func, *parents):
        sub = group.add_parser(name, parents=[common, *parents])
        sub.set_defaults(func=func)
        return sub

    lattice = groups.add_parser("lattice", help="Lattice search").add_subparsers(dest="command", required=True)
    p = command(lattice, "best-path", cmd_lattice_best_path, scales)
    p.add_argument("lattices")
    p = command(lattice, "posteriors", cmd_lattice_posteriors, scales)
    p.add_argument("lattices")
    p = command(lattice, "nbest", cmd_lattice_nbest, scales)
    p.add_argument("lattices")
    p.add_argument("-n", type=int, default=10)

    lexicon = groups.add_parser("lexicon", help="Graphemic lexicons").add_subparsers(dest="command", required=True)
    p = command(lexicon, "graphemize", cmd_lexicon_graphemize)
    p.add_argument("words", nargs="+")
    p = command(lexicon, "expand", cmd_lexicon_expand)
    p.add_argument("words", help="Word list (one token per line)")
    base = p.add_mutually_exclusive_group(required=True)
    base.add_argument("--lexicon", help="Lexicon to expand")
    base.add_argument("--corpus", help="Build the base lexicon from a corpus")
    p.add_argument("-o", "--output", required=True)

    ngram = groups.add_parser("ngram", help="Kneser-Ney models").add_subparsers(dest="command", required=True)
    p = command(ngram, "train", cmd_ngram_train)
    p.add_argument("corpus")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--extra", help="Word list added to the vocabulary")
    p = command(ngram, "score", cmd_ngram_score)
    p.add_argument("arpa")
    p.add_argument("corpus")

    nlm = groups.add_parser("nlm", help="Recurrent LM").add_subparsers(dest="command", required=True)
    p = command(nlm, "train", cmd_nlm_train)
    p.add_argument("corpus")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--dim", type=int, default=NeuralLMConfig.dim)
    p.add_argument("--epochs", type=int, default=NeuralLMConfig.epochs)
    p.add_argument("--learning-rate", type=float, default=NeuralLMConfig.learning_rate)
    p.add_argument("--seed", type=int, default=NeuralLMConfig.seed)
    p.add_argument("--letter-features", action="store_true")
    p.add_argument("--hash-slots", type=int, default=NeuralLMConfig.hash_slots)
    p.add_argument("--extra", help="Word list added to the vocabulary")
    p = command(nlm, "score", cmd_nlm_score)
    p.add_argument("model")
    p.add_argument("corpus")
    p = command(nlm, "gradcheck", cmd_nlm_gradcheck)
    p.add_argument("corpus", help="The first sentence is checked")
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--letter-features", action="store_true")

    augment = groups.add_parser("augment", help="Embedding augmentation").add_subparsers(dest="command", required=True)
    p = command(augment, "apply", cmd_augment_apply)
    p.add_argument("model")
    p.add_argument("train")
    p.add_argument("ne_list")
    p.add_argument("candidates")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--theta-rare", type=float, default=0.09)
    p.add_argument("--theta-oov", type=float, default=0.01)
    p.add_argument("--threshold", type=int, default=10)
    p.add_argument("--plans", help="Write the applied plans here")

    rescore = groups.add_parser("rescore", help="KN / neural LM rescoring").add_subparsers(dest="command", required=True)
    p = command(rescore, "lattice", cmd_rescore_lattice, mixing)
    p.add_argument("lattices")
    p.add_argument("-o", "--output", required=True)
    p = command(rescore, "nbest", cmd_rescore_nbest, mixing)
    p.add_argument("lattices")

    boost = groups.add_parser("boost", help="Inverted index and NE boosting").add_subparsers(dest="command", required=True)
    p = command(boost, "index", cmd_boost_index, scales)
    p.add_argument("lattices")
    p.add_argument("-o", "--output", required=True)
    p = command(boost, "search", cmd_boost_search)
    p.add_argument("index")
    p.add_argument("word")
    p = command(boost, "apply", cmd_boost_apply, scales)
    p.add_argument("lattices")
    p.add_argument("ne_set")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--bonus", type=float, default=math.log(4.0))
    p.add_argument("--index", help="Also write the boosted index")

    evaluate = groups.add_parser("eval", help="WER and NE-WER").add_subparsers(dest="command", required=True)
    p = command(evaluate, "wer", cmd_eval_wer)
    p.add_argument("reference")
    p.add_argument("hypothesis")
    p = command(evaluate, "ne-wer", cmd_eval_ne_wer)
    p.add_argument("reference")
    p.add_argument("hypothesis")
    p.add_argument("ne_list")
    p.add_argument("train")
    p.add_argument("--threshold", type=int, default=10)

    synth = groups.add_parser("synth", help="Synthetic data").add_subparsers(dest="command", required=True)
    p = command(synth, "generate", cmd_synth_generate)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--preset", choices=[PRESET_NAME], help="Write and verify the ablation fixture")

    report = groups.add_parser("report", help="Ablation reports").add_subparsers(dest="command", required=True)
    p = command(report, "ablation", cmd_report_ablation)
    p.add_argument("config")
    p.add_argument("--html", help="Write a bar chart of the ladder")

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args) or 0
    except (ValueError, OSError) as e:
        logger.error(f"Error running {args.group} {args.command}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
