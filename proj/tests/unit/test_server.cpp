#include <chrono>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "helpers.hpp"
#include "httplib.h"
#include "vip/server.hpp"
#include "ws_client.hpp"

using namespace vip;
using namespace vip::service;

namespace {

struct Running {
  std::unique_ptr<Server> server;
  std::filesystem::path dir;

  explicit Running(const std::string& name, double trial_s = 100.0) {
    dir = test::scratch(name);
    std::filesystem::create_directories(dir / "web");
    std::ofstream(dir / "web" / "index.html") << "<!doctype html><title>vip</title>\n";
    ServiceConfig cfg;
    cfg.address = "127.0.0.1";
    cfg.port = 0;
    cfg.models_dir = dir / "models";
    cfg.runs_dir = dir / "runs";
    cfg.static_dir = dir / "web";
    cfg.seed = 3;
    cfg.trial_duration_s = trial_s;
    server = std::make_unique<Server>(cfg, Catalog::load(cfg.models_dir, cfg.sim));
    server->start();
  }
  ~Running() { server->stop(); }
};

template <class T>
T next_of(test::WsClient& c) {
  for (int i = 0; i < 10000; ++i) {
    auto m = c.read_message();
    REQUIRE(m);
    if (auto* x = std::get_if<T>(&*m)) return *x;
  }
  FAIL("message type never arrived");
  return {};
}

}  // namespace

TEST_SUITE("server") {
  TEST_CASE("static files over http") {
    Running r("srv_http");
    httplib::Client http("127.0.0.1", r.server->port());
    const auto index = http.Get("/");
    REQUIRE(index);
    CHECK(index->status == 200);
    CHECK(index->get_header_value("Content-Type") == "text/html");
    CHECK(index->body.find("<title>vip</title>") != std::string::npos);
    const auto missing = http.Get("/nope.js");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    const auto escape = http.Get("/../secret");
    REQUIRE(escape);
    CHECK(escape->status == 400);
  }

  TEST_CASE("catalog on connect, then frames at the tick rate") {
    Running r("srv_frames");
    test::WsClient c(r.server->port());
    const auto cat = std::get<std::vector<wire::CatalogEntry>>(*c.read_message());
    REQUIRE(cat.size() >= 2);
    CHECK(cat[0].id == "pd");
    CHECK(cat[1].id == "intermittent");

    c.send(wire::encode(wire::Hello{"tester"}));
    c.send(wire::encode(wire::SelectAssistant{"pd"}));
    auto f = next_of<wire::Frame>(c);
    CHECK(f.phase == SessionPhase::Tutorial);
    CHECK(f.dots.size() == 200);
    const auto t0 = std::chrono::steady_clock::now();
    const auto first = f.tick;
    std::uint64_t last = first;
    while (std::chrono::steady_clock::now() - t0 < std::chrono::seconds(2)) {
      c.send(wire::encode(wire::Input{0.1, 0.0}));
      f = next_of<wire::Frame>(c);
      CHECK(f.tick == last + 1);
      last = f.tick;
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double rate = static_cast<double>(last - first) / elapsed;
    CHECK(rate == doctest::Approx(60.0).epsilon(0.05));
  }

  TEST_CASE("protocol errors reach the client") {
    Running r("srv_errors");
    test::WsClient c(r.server->port());
    next_of<std::vector<wire::CatalogEntry>>(c);

    c.send(wire::encode(wire::OperatorEvent{protocol::Event::operator_accept}));
    CHECK(next_of<wire::ErrorMsg>(c).code == "no_session");
    c.send("{oops");
    CHECK(next_of<wire::ErrorMsg>(c).code == "malformed");
    c.send(wire::encode(wire::SelectAssistant{"nobody"}));
    CHECK(next_of<wire::ErrorMsg>(c).code == "unknown_assistant");

    c.send(wire::encode(wire::SelectAssistant{"pd"}));
    next_of<wire::Frame>(c);
    c.send(wire::encode(wire::SelectAssistant{"pd"}));
    CHECK(next_of<wire::ErrorMsg>(c).code == "session_active");

    // Skip the tutorial, then try to accept during the baseline.
    c.send(wire::encode(wire::OperatorEvent{protocol::Event::operator_skip}));
    const auto ps = next_of<wire::PhaseSummary>(c);
    CHECK(ps.phase == SessionPhase::Tutorial);
    CHECK(ps.next_phase == SessionPhase::HumanBaseline);
    CHECK(next_of<wire::Frame>(c).phase == SessionPhase::HumanBaseline);
    c.send(wire::encode(wire::OperatorEvent{protocol::Event::operator_accept}));
    CHECK(next_of<wire::ErrorMsg>(c).code == "illegal_transition");
    CHECK(next_of<wire::Frame>(c).phase == SessionPhase::HumanBaseline);
  }

  TEST_CASE("a whole session over the socket ends in Summary and closes") {
    Running r("srv_walk", 0.25);
    test::WsClient c(r.server->port());
    next_of<std::vector<wire::CatalogEntry>>(c);
    c.send(wire::encode(wire::SelectAssistant{"intermittent"}));
    std::vector<SessionPhase> summaries;
    bool accepted = false;
    while (auto m = c.read_message()) {
      if (auto* ps = std::get_if<wire::PhaseSummary>(&*m)) {
        summaries.push_back(ps->phase);
        if (ps->phase == SessionPhase::AiReevaluation && !accepted) {
          c.send(wire::encode(wire::OperatorEvent{protocol::Event::operator_accept}));
          accepted = true;
        }
      } else if (auto* e = std::get_if<wire::ErrorMsg>(&*m)) {
        FAIL("unexpected error " << e->code << ": " << e->detail);
      } else {
        c.send(wire::encode(wire::Input{0.0, 0.0}));
      }
    }
    const std::vector<SessionPhase> expect{SessionPhase::Tutorial,      SessionPhase::HumanBaseline,
                                           SessionPhase::HumanAssisted, SessionPhase::AiSolo,
                                           SessionPhase::AiCorrection,  SessionPhase::AiReevaluation};
    CHECK(summaries == expect);
    std::size_t logs = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(r.dir / "runs")) {
      if (e.path().extension() == ".log") ++logs;
    }
    CHECK(logs == 6);
  }

  TEST_CASE("disconnect persists the running trial") {
    Running r("srv_disconnect");
    {
      test::WsClient c(r.server->port());
      next_of<std::vector<wire::CatalogEntry>>(c);
      c.send(wire::encode(wire::SelectAssistant{"pd"}));
      for (int i = 0; i < 30; ++i) next_of<wire::Frame>(c);
    }
    std::filesystem::path log;
    for (int i = 0; i < 100 && log.empty(); ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      if (!std::filesystem::exists(r.dir / "runs")) continue;
      for (const auto& e : std::filesystem::recursive_directory_iterator(r.dir / "runs")) {
        if (e.path().extension() == ".log") log = e.path();
      }
    }
    REQUIRE_FALSE(log.empty());
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    const auto trial = telemetry::read_trial_log(log);
    CHECK(trial.samples.size() >= 30);
    CHECK(session::replay_trial(trial).ok());
  }

  TEST_CASE("config validation") {
    ServiceConfig cfg;
    cfg.tick_hz = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.tick_hz = 60.0;
    cfg.trial_duration_s = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}
