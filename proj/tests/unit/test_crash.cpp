#include <cmath>

#include "doctest.h"
#include "vip/crash_predictor.hpp"

using namespace vip;
using namespace vip::crash;

namespace {

Trace flat_trace(std::size_t n, std::size_t crash_at, const sim::SimConfig& cfg) {
  Trace t(n);
  for (std::size_t k = 0; k < n; ++k) {
    t[k].t = k * cfg.dt;
    t[k].theta = 0.01 * static_cast<double>(k % 50);
    t[k].crashed = k == crash_at;
  }
  return t;
}

// Pairwise definition: P(score_pos > score_neg) + 0.5 P(tie).
double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] == 1 && y[j] == 0) {
        den += 1.0;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
    }
  }
  return num / den;
}

}  // namespace

TEST_SUITE("crash") {
  TEST_CASE("labels, reset exclusion and tail exclusion on a hand-built trace") {
    const sim::SimConfig cfg;
    const std::vector<Trace> traces{flat_trace(300, 200, cfg)};
    WindowConfig wc;  // W 30, horizon 2 s = 120 ticks
    const auto d = build_crash_dataset(traces, wc, cfg);
    // Ends 29..80 negative, 81..200 positive (crash lands at tick 201),
    // 201..229 span the reset, 230..299 cannot see a full horizon.
    CHECK(d.examples.size() == 52 + 120);
    CHECK(d.positives == 120);
    CHECK(d.excluded_reset == 29);
    CHECK(d.excluded_tail == 70);
    CHECK(d.examples.front().target[0] == 0.0);
    CHECK(d.examples[52].target[0] == 1.0);
    CHECK(d.t_end[52] == doctest::Approx(81 * cfg.dt));
    CHECK(d.examples[0].input.shape == std::vector<std::size_t>{30, 3});
  }

  TEST_CASE("short traces are skipped and stride thins windows") {
    const sim::SimConfig cfg;
    const std::vector<Trace> traces{flat_trace(10, 99, cfg), flat_trace(300, 200, cfg)};
    WindowConfig wc;
    wc.stride = 10;
    const auto d = build_crash_dataset(traces, wc, cfg);
    CHECK(d.skipped_short == 1);
    for (std::size_t i = 0; i < d.examples.size(); ++i) {
      const auto e = static_cast<std::size_t>(std::lround(d.t_end[i] / cfg.dt));
      CHECK((e - 29) % 10 == 0);
      CHECK(d.trial[i] == 1);
    }
  }

  TEST_CASE("gate truth table over all eight cells") {
    const CueThresholds th;
    for (int p_hi = 0; p_hi < 2; ++p_hi) {
      for (int far = 0; far < 2; ++far) {
        for (int acts = 0; acts < 2; ++acts) {
          const CrashPrediction p{p_hi ? 0.9 : 0.5, 2.0};
          const double theta = far ? 20.0 : 5.0;
          const double u = acts ? -0.5 : 0.0;
          const auto cue = gate_cue(p, theta, u, th, "bc");
          CAPTURE(p_hi);
          CAPTURE(far);
          CAPTURE(acts);
          CHECK(cue.has_value() == (p_hi && far && acts));
        }
      }
    }
  }

  TEST_CASE("gate example: p 0.9, theta 20, u -0.5 gives a left cue of 0.5") {
    const auto cue = gate_cue({0.9, 2.0}, 20.0, -0.5, {}, "bc-from-intermittent");
    REQUIRE(cue);
    CHECK(cue->direction == telemetry::CueDirection::left);
    CHECK(cue->magnitude == doctest::Approx(0.5));
    CHECK(cue->source_policy == "bc-from-intermittent");
    const auto right = gate_cue({0.95, 2.0}, -30.0, 0.2);
    REQUIRE(right);
    CHECK(right->direction == telemetry::CueDirection::right);
  }

  TEST_CASE("gate boundaries: p 0.8 passes, theta 12 does not") {
    CHECK(gate_cue({0.8, 2.0}, 20.0, 0.3));
    CHECK_FALSE(gate_cue({0.7999, 2.0}, 20.0, 0.3));
    CHECK_FALSE(gate_cue({0.9, 2.0}, 12.0, 0.3));
    CHECK_FALSE(gate_cue({0.9, 2.0}, -12.0, 0.3));
    CHECK(gate_cue({0.9, 2.0}, 12.0001, 0.3));
  }

  TEST_CASE("roc_auc matches the pairwise definition including ties") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> s;
      std::vector<int> y;
      for (int i = 0; i < 60; ++i) {
        s.push_back(std::round(rng.uniform() * 8.0) / 8.0);  // many ties
        y.push_back(i < 2 ? i : static_cast<int>(rng.below(2)));
      }
      CHECK(roc_auc(s, y) == doctest::Approx(brute_auc(s, y)).epsilon(1e-12));
    }
    const std::vector<double> s{0.1, 0.2};
    const std::vector<int> one{1, 1};
    CHECK_THROWS_AS(roc_auc(s, one), std::invalid_argument);
  }

  TEST_CASE("live window keeps the last W ticks, oldest first") {
    const sim::SimConfig cfg;
    CrashWindow w(3);
    CHECK_FALSE(w.ready());
    for (int i = 1; i <= 5; ++i) w.push(6.0 * i, 0.0, 0.1 * i, cfg);
    CHECK(w.ready());
    CHECK(w.size() == 3);
    const auto t = w.tensor();
    CHECK(t.at(0, 0) == doctest::Approx(18.0 / 60.0));
    CHECK(t.at(2, 0) == doctest::Approx(30.0 / 60.0));
    CHECK(t.at(2, 2) == doctest::Approx(0.5));
    w.clear();
    CHECK(w.size() == 0);
  }

  TEST_CASE("corpus generation: parallel equals serial") {
    const sim::SimConfig cfg;
    const auto a = generate_corpus(6, 5.0, 11, cfg, {}, Exec::serial);
    const auto b = generate_corpus(6, 5.0, 11, cfg, {}, Exec::parallel);
    CHECK(a == b);
    CHECK(a[0].size() == 300);
  }

  TEST_CASE("a small predictor learns above chance and checks its window") {
    const sim::SimConfig cfg;
    const auto corpus = generate_corpus(40, 30.0, 5, cfg);
    WindowConfig wc;
    wc.stride = 15;
    const std::vector<Trace> train(corpus.begin(), corpus.begin() + 30);
    const std::vector<Trace> test(corpus.begin() + 30, corpus.end());
    const auto dtrain = build_crash_dataset(train, wc, cfg);
    const auto dtest = build_crash_dataset(test, wc, cfg);
    REQUIRE(dtrain.positives > 0);
    nn::TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 16;
    tc.seed = 1;
    const auto res = train_crash_predictor(dtrain, wc, tc, cfg, 12);
    CHECK(res.model.meta.at("kind") == "crash_predictor");
    CHECK(model_window(res.model) == 30u);
    std::vector<double> s;
    std::vector<int> y;
    for (const auto& e : dtest.examples) {
      const auto p = predict(res.model, e.input);
      CHECK(p.p_crash >= 0.0);
      CHECK(p.p_crash <= 1.0);
      s.push_back(p.p_crash);
      y.push_back(e.target[0] > 0.5);
    }
    CHECK(roc_auc(s, y) > 0.7);
    CHECK_THROWS_AS(predict(res.model, nn::Tensor({10, 3})), nn::ShapeError);
  }

  TEST_CASE("single-class data is rejected") {
    const sim::SimConfig cfg;
    CrashDataset d;
    d.examples.push_back({nn::Tensor({30, 3}), {0.0}});
    CHECK_THROWS_AS(train_crash_predictor(d, {}, {}, cfg), std::invalid_argument);
  }
}
