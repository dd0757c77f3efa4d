#include <cmath>
#include <memory>

#include "doctest.h"
#include "helpers.hpp"
#include "vip/adaptation.hpp"

using namespace vip;
using namespace vip::adapt;

namespace {

telemetry::ControlSample sample(std::optional<double> human, std::optional<double> ai) {
  telemetry::ControlSample s;
  s.t = 1.5;
  s.theta = 15.0;
  s.omega = -30.0;
  s.human_u = human;
  s.ai_u = ai;
  s.applied_u = human.value_or(0.0);
  s.phase = SessionPhase::AiCorrection;
  return s;
}

nn::NetworkModel dense_model(std::uint64_t seed) {
  auto m = nn::make_network(policy::dense_bc_arch(8), seed);
  policy::stamp_meta(m, policy::PolicyKind::dense_bc, sim::SimConfig{});
  return m;
}

std::vector<DisagreementRecord> records(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DisagreementRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    DisagreementRecord r;
    r.obs = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    r.human_u = -r.obs.theta_norm;
    r.ai_u = r.obs.theta_norm;
    r.t = i / 60.0;
    r.trial_id = "005_AiCorrection";
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_SUITE("adaptation") {
  TEST_CASE("dead zone sign") {
    CHECK(deadzone_sign(0.05) == 0);
    CHECK(deadzone_sign(-0.05) == 0);
    CHECK(deadzone_sign(0.0501) == 1);
    CHECK(deadzone_sign(-0.2) == -1);
  }

  TEST_CASE("human +0.4 against ai -0.2 is a disagreement carrying the human target") {
    const sim::SimConfig cfg;
    const auto r = record_disagreement(sample(0.4, -0.2), cfg, "t1");
    REQUIRE(r);
    CHECK(r->human_u == 0.4);
    CHECK(r->ai_u == -0.2);
    CHECK(r->t == 1.5);
    CHECK(r->trial_id == "t1");
    CHECK(r->obs.theta_norm == doctest::Approx(15.0 / 60.0));
    CHECK(r->obs.omega_norm == doctest::Approx(-30.0 / cfg.omega_max));
  }

  TEST_CASE("record rule across signs and dead zone") {
    const sim::SimConfig cfg;
    CHECK_FALSE(record_disagreement(sample(0.4, 0.2), cfg, "t"));    // agree
    CHECK_FALSE(record_disagreement(sample(0.03, -0.5), cfg, "t"));  // human in dead zone
    CHECK_FALSE(record_disagreement(sample(0.5, 0.01), cfg, "t"));   // passive assistant
    CHECK_FALSE(record_disagreement(sample(std::nullopt, 0.5), cfg, "t"));
    CHECK_FALSE(record_disagreement(sample(0.5, std::nullopt), cfg, "t"));
    CHECK(record_disagreement(sample(-0.06, 0.06), cfg, "t"));
  }

  TEST_CASE("property: a record exists iff both exceed the dead zone with opposite signs") {
    const sim::SimConfig cfg;
    Rng rng(17);
    for (int i = 0; i < 2000; ++i) {
      const double h = rng.uniform(-1.0, 1.0);
      const double a = rng.uniform(-1.0, 1.0);
      const bool expect = std::abs(h) > kDeadzone && std::abs(a) > kDeadzone && h * a < 0.0;
      CHECK(record_disagreement(sample(h, a), cfg, "t").has_value() == expect);
    }
  }

  TEST_CASE("fine-tune recipes per kind") {
    const auto ac = FinetuneSpec::for_kind(policy::PolicyKind::actor_critic);
    CHECK(ac.recipe == Recipe::behavior_cloning);
    CHECK(ac.epochs == 100);
    CHECK(ac.learning_rate == 1e-5);
    CHECK(ac.batch_size == 64);
    CHECK(ac.train_fraction == 1.0);
    for (auto k : {policy::PolicyKind::dense_bc, policy::PolicyKind::gru_bc}) {
      const auto s = FinetuneSpec::for_kind(k);
      CHECK(s.recipe == Recipe::supervised);
      CHECK(s.epochs == 20);
      CHECK(s.learning_rate == 1e-7);
      CHECK(s.batch_size == 16);
      CHECK(s.train_fraction == 0.9);
    }
    CHECK_THROWS_AS(FinetuneSpec::for_kind(policy::PolicyKind::pd), std::invalid_argument);
  }

  TEST_CASE("no records leaves the model untouched") {
    const auto m = dense_model(3);
    const auto res = finetune(m, {}, FinetuneSpec::for_kind(policy::PolicyKind::dense_bc), 1);
    CHECK(res.report.unchanged);
    CHECK(res.report.records == 0);
    CHECK(res.model.weights == m.weights);
  }

  TEST_CASE("kind mismatch is rejected") {
    const auto m = dense_model(3);
    const auto recs = records(10, 1);
    CHECK_THROWS_AS(finetune(m, recs, FinetuneSpec::for_kind(policy::PolicyKind::gru_bc), 1),
                    std::invalid_argument);
  }

  TEST_CASE("fine-tuning runs the recipe and moves toward the human") {
    const auto m = dense_model(3);
    const auto recs = records(200, 5);
    auto spec = FinetuneSpec::for_kind(policy::PolicyKind::dense_bc);
    const auto res = finetune(m, recs, spec, 9, {}, Exec::serial);
    CHECK_FALSE(res.report.unchanged);
    CHECK(res.report.n_train == 180);
    CHECK(res.report.n_test == 20);
    CHECK(res.report.history.size() == 20);
    CHECK(res.report.steps == 20 * ((180 + 15) / 16));
    CHECK(res.model.meta.at("finetune_rounds") == "1");
    CHECK(res.report.final_train_loss <= res.report.initial_train_loss);

    spec.learning_rate = 1e-2;
    const auto fast = finetune(m, recs, spec, 9, {}, Exec::serial);
    CHECK(fast.report.final_train_loss < 0.5 * fast.report.initial_train_loss);

    const auto par = finetune(m, recs, spec, 9, {}, Exec::parallel);
    CHECK(par.model.weights == fast.model.weights);
  }

  TEST_CASE("disagreement files round trip exactly") {
    const auto dir = test::scratch("disagree");
    const auto recs = records(50, 8);
    write_disagreements(dir / "d.jsonl", recs);
    CHECK(read_disagreements(dir / "d.jsonl") == recs);
    CHECK_THROWS(read_disagreements(dir / "missing.jsonl"));
  }

  TEST_CASE("evaluation: parallel equals serial and pd never crashes") {
    const sim::SimConfig cfg;
    const auto pd = policy::PolicyHandle::pd(cfg);
    EvalConfig ec;
    ec.n_trials = 8;
    ec.trial_len_s = 5.0;
    ec.seed = 4;
    ec.exec = Exec::serial;
    const auto a = evaluate_policy(pd, ec, cfg);
    ec.exec = Exec::parallel;
    const auto b = evaluate_policy(pd, ec, cfg);
    REQUIRE(a.trials.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(a.trials[i].mean_abs_theta == b.trials[i].mean_abs_theta);
      CHECK(a.trials[i].crash_count == b.trials[i].crash_count);
    }
    CHECK(a.crash_rate == 0.0);
    CHECK(a.metrics.ticks == 8u * 300u);
  }

  TEST_CASE("correction runs: corrector actuates, assistant shadows") {
    const sim::SimConfig cfg;
    auto assistant = policy::PolicyHandle::intermittent(cfg);
    auto corrector = policy::PolicyHandle::pd(cfg);
    const auto eps = correction_run(assistant, corrector, 10.0, 2.0, 3, cfg);
    CHECK(eps.size() == 5);
    for (const auto& ep : eps) {
      CHECK(ep.size() == 120);
      for (const auto& s : ep) {
        REQUIRE(s.human_u);
        REQUIRE(s.ai_u);
        CHECK(s.applied_u == *s.human_u);
      }
    }
  }

  TEST_CASE("a short dyadic cycle records, fine-tunes and re-evaluates") {
    const sim::SimConfig cfg;
    auto model = std::make_shared<nn::NetworkModel>(dense_model(2));
    const auto assistant = policy::PolicyHandle::learned("bc", model, cfg);
    DyadicConfig dc;
    dc.rounds = 2;
    dc.seed = 7;
    dc.correction_s = 10.0;
    dc.eval.n_trials = 4;
    dc.eval.trial_len_s = 3.0;
    std::size_t seen = 0;
    DyadicHooks hooks;
    hooks.on_round = [&](const RoundResult& r) { CHECK(r.round == ++seen); };
    const auto res = dyadic_cycle(assistant, policy::PolicyHandle::pd(cfg), dc, cfg, hooks);
    CHECK(seen == 2);
    REQUIRE(res.rounds.size() == 2);
    CHECK(res.rounds[0].correction_ticks == 600);
    CHECK(res.baseline.trials.size() == 4);
    for (const auto& r : res.rounds) {
      CHECK(r.finetune.records == r.records.size());
      for (const auto& rec : r.records) {
        CHECK(deadzone_sign(rec.human_u) == -deadzone_sign(rec.ai_u));
      }
    }
    const auto again = dyadic_cycle(assistant, policy::PolicyHandle::pd(cfg), dc, cfg);
    CHECK(again.model.weights == res.model.weights);
  }
}
