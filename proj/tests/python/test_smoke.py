import math

import numpy as np
import pytest

import negtrain as nt


def toy_pairs(n=40):
    # the response repeats the input word
    pairs = []
    for i in range(n):
        w = 4 + i % 6
        pairs.append(nt.DialoguePair([w, 10], [w, nt.EOS]))
    return pairs


def small_model(seed=3):
    return nt.Seq2Seq.initialized(nt.Seq2SeqConfig(12, embedding_dim=8, hidden_dim=12), seed)


def test_vocabulary_and_corpus():
    dialogues, warnings = nt.parse_corpus("hi there\nhello\n\nhow are you ?\nfine .\nok\n")
    assert len(dialogues) == 2 and warnings == []
    vocab = nt.build_vocab(nt.tokenize_corpus(dialogues), 100)
    assert vocab.tokens[:4] == ["<pad>", "<unk>", "<bos>", "<eos>"]
    cfg = nt.CorpusConfig()
    pairs = nt.make_all_pairs(dialogues, vocab, cfg)
    assert len(pairs) == 1 + 2
    assert pairs[0].target_ids[-1] == nt.EOS
    assert vocab.decode(vocab.encode(["how", "are", "you"])) == ["how", "are", "you"]
    assert vocab.index_of("zebra") == nt.UNK


def test_distributions_are_normalized():
    m = small_model()
    p = np.exp(m.step_distribution([nt.BOS, 5, 6], [4, 7, 8]))
    assert p.shape == (12,)
    assert abs(p.sum() - 1) < 1e-9
    a = m.attention_mask([4, 7, 8], np.zeros(12))
    assert abs(a.sum() - 1) < 1e-12 and (a >= 0).all()


def test_parameters_round_trip(tmp_path):
    m = small_model()
    params = m.parameters()
    assert params["output.weights"].shape == (12, 12)
    m.set_parameter("output.bias", np.full((12, 1), 0.5))
    path = tmp_path / "m.ckpt"
    m.save(path)
    back = nt.Seq2Seq.load(path)
    assert np.array_equal(back.parameters()["output.bias"], np.full((12, 1), 0.5))
    with pytest.raises(nt.Error):
        m.set_parameter("nope", np.zeros((1, 1)))


def test_train_and_decode():
    m = small_model()
    pairs = toy_pairs()
    cfg = nt.TrainConfig()
    cfg.epochs_fixed, cfg.epochs_halving, cfg.batch_size, cfg.seed = 30, 5, 4, 1
    before = nt.perplexity(m, pairs)
    log = nt.train_mle(m, pairs, cfg, validation=pairs)
    assert len(log) == 35
    assert log[-1].valid_ppl < before
    assert m.greedy_decode([6, 10], 5) == [6, nt.EOS]
    assert m.sample_decode([6, 10], 5, 9) == m.sample_decode([6, 10], 5, 9)


def test_trigger_search_and_hits():
    m = small_model()
    pairs = toy_pairs()
    cfg = nt.TrainConfig()
    cfg.epochs_fixed, cfg.epochs_halving, cfg.batch_size, cfg.seed = 30, 5, 4, 1
    nt.train_mle(m, pairs, cfg)
    search = nt.TriggerSearchConfig()
    search.input_length, search.candidates, search.restarts, search.seed = 2, 12, 2, 4
    res = nt.gibbs_enum(m, None, [7, nt.EOS], search)
    value, nll, lm = nt.objective(m, None, res.trigger_ids, [7, nt.EOS])
    assert value == pytest.approx(res.objective_value)
    assert lm == 0

    vocab = nt.Vocabulary()
    for w in "a b c d e f g".split():
        vocab.add(w)
    targets = [nt.encode_target_text(vocab, "c", 5), nt.encode_target_text(vocab, "e", 5)]
    t = nt.compute_thresholds(m, None, pairs)
    result = nt.hit_rate(m, None, targets, nt.HitCriterion.O_GREEDY, t, search, 5, jobs=2)
    assert result.num_targets == 2
    assert result.hits == sum(r.hit for r in result.reports)
    assert result.summary().startswith("#summary criterion=o-greedy targets=2")
    assert nt.attack_report(vocab, result).count("\n") == 3


def test_negative_training_lowers_likelihood():
    m = small_model()
    x, y = [4, 10], [5, 6, nt.EOS]
    before = m.sequence_logprobs(x, y).total
    mask = nt.fwa_mask(y, nt.NegTrainMode.MALICIOUS, set())
    nt.negative_step(m, x, y, mask, 0.05)
    assert m.sequence_logprobs(x, y).total < before


def test_frequent_mode_runs():
    m = small_model()
    cfg = nt.NegTrainConfig.frequent_defaults()
    cfg.iterations, cfg.batch_size, cfg.max_decode_len, cfg.r_thres = 1, 8, 4, 0.05
    log = nt.neg_train_frequent(m, toy_pairs(), cfg, validation=toy_pairs(12))
    assert len(log) == 1 and log[0].max_ratio is not None


def test_metrics():
    assert nt.max_ratio([["a"], ["a"], ["b"]]) == pytest.approx(2 / 3)
    assert nt.ent_n([["a", "b"], ["c", "d"]], 2) == pytest.approx(math.log(2))
    with pytest.raises(nt.Error):
        nt.ent_n([["a"]], 2)
    w = nt.FrequencyWindow(2)
    w.push([[1], [1], [2]])
    w.push([[2]])
    w.push([[3]])
    assert w.total == 2 and w.ratio([2]) == 0.5


def test_gan_step_counts():
    m = small_model()
    dcfg = nt.DiscriminatorConfig(12)
    dcfg.embedding_dim, dcfg.filters, dcfg.windows, dcfg.highway_layers, dcfg.hidden_dim = 4, 4, [2], 1, 4
    d = nt.Discriminator.initialized(dcfg, 5)
    cfg = nt.GanConfig()
    cfg.batch_size, cfg.max_decode_len, cfg.seed = 10, 4, 2
    log = nt.gan_train(m, d, toy_pairs(20), cfg)
    assert log[0].d_updates == 3 * log[0].g_updates
    assert 0 < d.discriminate([4], [5, nt.EOS]) < 1


def test_errors_map_to_python():
    with pytest.raises(nt.Error):
        nt.HitCriterion.parse("o-best")
    with pytest.raises(ValueError):
        nt.Seq2Seq.initialized(nt.Seq2SeqConfig(0), 1)
