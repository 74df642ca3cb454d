#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "hyper2/checkpoint.hpp"
#include "hyper2/train.hpp"
#include "test_util.hpp"

using namespace hyper2;

namespace {

Dataset toy_dataset(int n_entities, int n_relations, int n_facts, int max_arity,
                    uint64_t seed) {
  return make_dataset(testutil::synth_kg(n_entities, n_relations, n_facts, max_arity, seed));
}

}  // namespace

TEST_CASE("TrainConfig defaults match the documented settings") {
  const TrainConfig tc;
  CHECK(tc.eta == 30.0);
  CHECK(tc.beta == 128);
  CHECK(tc.nneg == 100);
  CHECK(tc.nepoch == 800);
  CHECK(tc.patience == 3);
  CHECK(tc.eval_every == 10);
  CHECK(tc.workers == 1);
  CHECK(tc.neg_mode == NegativeMode::all);

  TrainConfig bad = tc;
  bad.eta = 0.0;
  CHECK_THROWS_AS(bad.check(), config_error);
  bad = tc;
  bad.beta = 0;
  CHECK_THROWS_AS(bad.check(), config_error);
}

TEST_CASE("negative_sample: exactly one corrupted position, never the original") {
  Dataset d = toy_dataset(12, 3, 30, 4, 5);
  Rng rng(7);
  for (const Fact& f : d.train) {
    const auto negs = negative_sample(f, 20, d.vocab, rng);
    CHECK(negs.size() == 20);
    for (const Fact& n : negs) {
      CHECK(n != f);
      int diffs = 0;
      if (n.relation != f.relation) ++diffs;
      if (n.head != f.head) ++diffs;
      if (n.tail != f.tail) ++diffs;
      REQUIRE(n.affiliated.size() == f.affiliated.size());
      for (std::size_t i = 0; i < n.affiliated.size(); ++i)
        if (n.affiliated[i] != f.affiliated[i]) ++diffs;
      CHECK(diffs == 1);
    }
  }
}

TEST_CASE("negative_sample: position coverage and modes") {
  Dataset d = toy_dataset(10, 3, 20, 2, 6);
  Rng rng(9);
  Fact binary = d.train[0];

  // binary fact in `all` mode: corruptions hit relation, head and tail
  std::set<int> kinds;
  for (const Fact& n : negative_sample(binary, 600, d.vocab, rng)) {
    if (n.relation != binary.relation) kinds.insert(0);
    if (n.head != binary.head) kinds.insert(1);
    if (n.tail != binary.tail) kinds.insert(2);
  }
  CHECK(kinds == std::set<int>{0, 1, 2});

  // entity_only mode never touches the relation
  for (const Fact& n : negative_sample(binary, 400, d.vocab, rng, NegativeMode::entity_only))
    CHECK(n.relation == binary.relation);

  // a 4-ary fact has five corruptable positions
  Fact four = binary;
  four.affiliated = {0, 1};
  std::set<int> positions;
  for (const Fact& n : negative_sample(four, 2000, d.vocab, rng)) {
    if (n.relation != four.relation) positions.insert(0);
    if (n.head != four.head) positions.insert(1);
    if (n.tail != four.tail) positions.insert(2);
    if (n.affiliated[0] != four.affiliated[0]) positions.insert(3);
    if (n.affiliated[1] != four.affiliated[1]) positions.insert(4);
  }
  CHECK(positions.size() == 5);
}

TEST_CASE("negative_sample: impossible corruption is a hard error") {
  Vocabulary tiny;
  tiny.add_entity("only");
  tiny.add_relation("r");
  Rng rng(1);
  Fact f;
  f.relation = 0;
  f.head = 0;
  f.tail = 0;
  CHECK_THROWS_AS(negative_sample(f, 1, tiny, rng), data_error);

  tiny.add_entity("two");
  // entities fine now, but a single relation cannot be corrupted in `all` mode
  CHECK_THROWS_AS(negative_sample(f, 1, tiny, rng), data_error);
  CHECK_NOTHROW(negative_sample(f, 1, tiny, rng, NegativeMode::entity_only));
}

TEST_CASE("bce_loss: pinned values and saturation") {
  // sigma(0) = 0.5 -> -log(0.5)
  CHECK(bce_loss(std::vector<double>{0.0}, std::vector<uint8_t>{1}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // huge positive score with label 1 saturates to ~0 under the clamp
  CHECK(bce_loss(std::vector<double>{1e6}, std::vector<uint8_t>{1}) ==
        doctest::Approx(0.0).epsilon(1e-9));
  // and to -log(eps) when mislabelled
  CHECK(bce_loss(std::vector<double>{1e6}, std::vector<uint8_t>{0}) ==
        doctest::Approx(-std::log(Tape::kProbEps)).epsilon(1e-6));
  CHECK_THROWS_AS(bce_loss(std::vector<double>{1.0}, std::vector<uint8_t>{1, 0}),
                  std::invalid_argument);
}

TEST_CASE("bce_loss: mixed batch equals the extended-precision per-term mean") {
  Rng rng(11);
  std::vector<double> scores;
  std::vector<uint8_t> labels;
  for (int i = 0; i < 64; ++i) {
    scores.push_back(rng.uniform(-4.0, 4.0));
    labels.push_back(rng.below(2) ? 1 : 0);
  }
  long double want = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const long double p = 1.0L / (1.0L + std::exp((long double)-scores[i]));
    want += labels[i] ? -std::log(p) : -std::log(1.0L - p);
  }
  want /= scores.size();
  CHECK(bce_loss(scores, labels) == doctest::Approx((double)want).epsilon(1e-12));
}

TEST_CASE("bce_loss agrees with the tape loss") {
  Rng rng(12);
  Dataset d = toy_dataset(10, 3, 10, 4, 13);
  const ModelParams p =
      testutil::make_params(rng, 6, d.vocab.num_entities(), d.vocab.num_relations(), 0.6);
  std::vector<Fact> facts(d.train.begin(), d.train.end());
  std::vector<uint8_t> labels;
  for (std::size_t i = 0; i < facts.size(); ++i) labels.push_back(rng.below(2) ? 1 : 0);
  std::vector<double> scores;
  for (const Fact& f : facts) scores.push_back(score(f, p, ScoreConfig{}));
  CHECK(testutil::loss_value(p, facts, labels, ScoreConfig{}) ==
        doctest::Approx(bce_loss(scores, labels)).epsilon(1e-12));
}

TEST_CASE("rsgd_step: zero gradient is a no-op; origin case is closed form") {
  const Curvature K;
  Vec param{0.2, -0.1};
  const Vec before = param;
  rsgd_step(param, Vec{0.0, 0.0}, 5.0, K);
  CHECK(param == before);

  // at the origin: exp_0(-eta g / 4)
  Vec at0{0.0, 0.0};
  const Vec g{0.8, -0.4};
  const double eta = 2.0;
  rsgd_step(at0, g, eta, K);
  Vec step(2);
  for (int i = 0; i < 2; ++i) step[i] = -eta * g[i] / 4.0;
  const BallPoint expect = exp_map_origin(TangentVec{step}, K);
  for (int i = 0; i < 2; ++i) CHECK(at0[i] == doctest::Approx(expect.coords[i]).epsilon(1e-14));
}

TEST_CASE("rsgd_step: stays inside the ball under adversarial gradients") {
  Rng rng(13);
  for (int it = 0; it < 200; ++it) {
    const Curvature K(rng.uniform(0.5, 2.0));
    Vec param = testutil::random_ball_vec(rng, 4, 0.99, K);
    Vec g(4);
    for (double& c : g) c = rng.uniform(-1e6, 1e6);
    rsgd_step(param, g, rng.uniform(0.1, 100.0), K);
    CHECK(K.k * sq_norm(param) <= (1.0 - kBallMargin) * (1.0 - kBallMargin) + 1e-15);
  }
}

TEST_CASE("sgd_step: plain subtraction, element-wise") {
  Vec p{1.0};
  sgd_step(p, Vec{0.1}, 1.0);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-15));

  Rng rng(14);
  Vec vec(8), grad(8);
  for (int i = 0; i < 8; ++i) {
    vec[i] = rng.uniform(-2.0, 2.0);
    grad[i] = rng.uniform(-1.0, 1.0);
  }
  Vec expect = vec;
  for (int i = 0; i < 8; ++i) expect[i] = expect[i] - 0.3 * grad[i];
  sgd_step(vec, grad, 0.3);
  CHECK(vec == expect);

  Vec unchanged{1.5, -2.5};
  const Vec before = unchanged;
  sgd_step(unchanged, Vec{0.0, 0.0}, 10.0);
  CHECK(unchanged == before);
}

TEST_CASE("descent sanity: repeated steps on a frozen batch do not increase the loss") {
  Rng rng(15);
  Dataset d = toy_dataset(10, 2, 8, 3, 16);
  ModelParams p =
      init_params(rng, 8, d.vocab.num_entities(), d.vocab.num_relations(), Curvature{});
  // frozen batch: the 8 facts plus 2 fixed negatives each
  std::vector<Fact> facts;
  std::vector<uint8_t> labels;
  for (const Fact& f : d.train) {
    facts.push_back(f);
    labels.push_back(1);
    for (Fact& n : negative_sample(f, 2, d.vocab, rng)) {
      facts.push_back(std::move(n));
      labels.push_back(0);
    }
  }
  const ScoreConfig cfg;
  double prev = testutil::loss_value(p, facts, labels, cfg);
  for (int step = 0; step < 50; ++step) {
    Tape tape;
    TapeScorer scorer(tape, p, cfg);
    const int loss = scorer.loss_node(facts, labels, facts.size());
    GradientStore store;
    tape.backward(loss, store);
    detail::apply_gradients(p, store, 1e-2, true);
    const double now = testutil::loss_value(p, facts, labels, cfg);
    CHECK(now <= prev + 1e-6);
    prev = now;
  }
}

TEST_CASE("fit: deterministic for a fixed seed and config") {
  Dataset d = toy_dataset(15, 3, 40, 4, 17);
  add_reciprocals(d);
  TrainConfig tc;
  tc.eta = 1.0;
  tc.beta = 16;
  tc.nneg = 3;
  tc.nepoch = 5;
  tc.seed = 42;

  auto run = [&] {
    Rng rng(tc.seed);
    ModelParams p =
        init_params(rng, 6, d.vocab.num_entities(), d.vocab.num_relations(), Curvature{});
    return std::pair{fit(d, p, tc, ScoreConfig{}, rng), std::move(p)};
  };
  auto [r1, p1] = run();
  auto [r2, p2] = run();
  CHECK(p1.entity_emb == p2.entity_emb);
  CHECK(p1.rel_emb == p2.rel_emb);
  CHECK(p1.rel_diag_head == p2.rel_diag_head);
  CHECK(p1.bias_head == p2.bias_head);
  CHECK(p1.bias_tail == p2.bias_tail);
  // the log repeats exactly, field by field, apart from wall-clock seconds
  REQUIRE(r1.log.size() == r2.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].epoch == r2.log[i].epoch);
    CHECK(r1.log[i].mean_loss == r2.log[i].mean_loss);
    CHECK(r1.log[i].val_mrr == r2.log[i].val_mrr);
  }
}

TEST_CASE("fit: training log format is epoch <TAB> loss <TAB> seconds") {
  Dataset d = toy_dataset(8, 2, 10, 3, 18);
  add_reciprocals(d);
  TrainConfig tc;
  tc.eta = 0.5;
  tc.beta = 8;
  tc.nneg = 2;
  tc.nepoch = 3;
  Rng rng(1);
  ModelParams p =
      init_params(rng, 4, d.vocab.num_entities(), d.vocab.num_relations(), Curvature{});
  std::ostringstream log;
  const FitResult r = fit(d, p, tc, ScoreConfig{}, rng, &log);
  CHECK(r.epochs_run == 3);
  CHECK(r.log.size() == 3);
  std::istringstream lines(log.str());
  std::string line;
  int epoch = 0;
  while (std::getline(lines, line)) {
    ++epoch;
    std::istringstream fields(line);
    int e;
    double loss, secs;
    fields >> e >> loss >> secs;
    CHECK(e == epoch);
    CHECK(std::isfinite(loss));
    CHECK(secs >= 0.0);
  }
  CHECK(epoch == 3);
}

TEST_CASE("fit: early stopping on a flat validation signal") {
  Dataset d = toy_dataset(10, 2, 20, 3, 19);
  // use part of train as a validation split
  d.valid.assign(d.train.begin(), d.train.begin() + 5);
  d.has_valid = true;
  d.rebuild_known();
  add_reciprocals(d);

  TrainConfig tc;
  tc.eta = 1e-12;  // effectively frozen -> validation MRR never improves
  tc.beta = 8;
  tc.nneg = 2;
  tc.nepoch = 50;
  tc.eval_every = 1;
  tc.patience = 2;
  Rng rng(3);
  ModelParams p =
      init_params(rng, 4, d.vocab.num_entities(), d.vocab.num_relations(), Curvature{});
  const FitResult r = fit(d, p, tc, ScoreConfig{}, rng);
  CHECK(r.stopped_early);
  // first validation sets the best; two flat ones after it exhaust patience
  CHECK(r.epochs_run == 3);
  CHECK(r.best_val_mrr.has_value());
  CHECK(r.best_params.has_value());
}

TEST_CASE("fit: non-finite loss aborts with a diagnostic") {
  Dataset d = toy_dataset(8, 2, 10, 3, 20);
  add_reciprocals(d);
  TrainConfig tc;
  tc.beta = 4;
  tc.nneg = 1;
  tc.nepoch = 1;
  tc.eta = 1.0;
  Rng rng(4);
  ModelParams p =
      init_params(rng, 4, d.vocab.num_entities(), d.vocab.num_relations(), Curvature{});
  p.bias_head[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    fit(d, p, tc, ScoreConfig{}, rng);
    FAIL("expected numeric_error");
  } catch (const numeric_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite loss") != std::string::npos);
    CHECK(msg.find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("fit: multi-worker run matches the single-threaded losses closely") {
  Dataset d = toy_dataset(12, 2, 24, 3, 21);
  add_reciprocals(d);
  TrainConfig tc;
  tc.eta = 0.5;
  tc.beta = 16;
  tc.nneg = 2;
  tc.nepoch = 3;

  auto run = [&](int workers) {
    TrainConfig cfg = tc;
    cfg.workers = workers;
    Rng rng(8);
    ModelParams p =
        init_params(rng, 4, d.vocab.num_entities(), d.vocab.num_relations(), Curvature{});
    return fit(d, p, cfg, ScoreConfig{}, rng);
  };
  const FitResult solo = run(1);
  const FitResult trio = run(3);
  REQUIRE(solo.log.size() == trio.log.size());
  for (std::size_t i = 0; i < solo.log.size(); ++i)
    CHECK(trio.log[i].mean_loss == doctest::Approx(solo.log[i].mean_loss).epsilon(1e-9));
}

TEST_CASE("every ball parameter satisfies the constraint after training") {
  Dataset d = toy_dataset(10, 2, 20, 4, 22);
  add_reciprocals(d);
  TrainConfig tc;
  tc.eta = 50.0;  // aggressive on purpose
  tc.beta = 8;
  tc.nneg = 4;
  tc.nepoch = 5;
  tc.validate_ball = true;
  Rng rng(5);
  ModelParams p =
      init_params(rng, 6, d.vocab.num_entities(), d.vocab.num_relations(), Curvature{});
  fit(d, p, tc, ScoreConfig{}, rng);
  const double bound = (1.0 - kBallMargin) * (1.0 - kBallMargin) + 1e-15;
  for (int e = 0; e < p.n_entities; ++e) CHECK(p.curv.k * sq_norm(p.entity_row(e)) <= bound);
  for (int r = 0; r < p.n_relations; ++r) CHECK(p.curv.k * sq_norm(p.rel_row(r)) <= bound);
}
