#include <regex>
#include <sstream>

#include "commands.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "vip/adaptation.hpp"

using vip::app::run_cli;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args, const std::filesystem::path& dir) {
  args.insert(args.begin(), {"--models", (dir / "models").string(), "--runs", (dir / "runs").string()});
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> log_paths(const std::string& out) {
  std::vector<std::string> paths;
  const std::regex re("log (\\S+)");
  for (std::sregex_iterator it(out.begin(), out.end(), re), end; it != end; ++it) {
    paths.push_back((*it)[1]);
  }
  return paths;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("simulate with a pd stand-in: five 100 s baseline trials without a crash") {
    const auto dir = vip::test::scratch("cli_sim");
    const auto r = cli({"simulate", "--human", "pd", "--trials", "5", "--seed", "1"}, dir);
    CHECK(r.code == 0);
    CHECK(r.out.find("total      crash_count 0 ") != std::string::npos);
    const auto logs = log_paths(r.out);
    REQUIRE(logs.size() == 5);
    CHECK(logs[0].find("001_HumanBaseline.log") != std::string::npos);

    const auto rp = cli({"replay", "--log", logs[3]}, dir);
    CHECK(rp.code == 0);
    CHECK(rp.out == "OK, 6000/6000 ticks identical\n");

    const auto svg = dir / "p.svg";
    const auto pt = cli({"portrait", "--log", logs[0], "--out", svg.string()}, dir);
    CHECK(pt.code == 0);
    CHECK(std::filesystem::file_size(svg) > 0);
  }

  TEST_CASE("simulate is reproducible") {
    const auto dir = vip::test::scratch("cli_repro");
    const auto a = cli({"simulate", "--assistant", "intermittent", "--trials", "2", "--seed", "9",
                        "--duration", "10", "--session", "a"}, dir);
    const auto b = cli({"simulate", "--assistant", "intermittent", "--trials", "2", "--seed", "9",
                        "--duration", "10", "--session", "b"}, dir);
    REQUIRE(a.code == 0);
    const auto strip = [](std::string s) { return std::regex_replace(s, std::regex("log \\S+"), ""); };
    CHECK(strip(a.out) == strip(b.out));
    CHECK(a.out.find("AiSolo") != std::string::npos);
  }

  TEST_CASE("bad input exits nonzero") {
    const auto dir = vip::test::scratch("cli_bad");
    CHECK(cli({"simulate", "--no-such-flag"}, dir).code != 0);
    CHECK(cli({}, dir).code != 0);
    CHECK(cli({"simulate", "--phase", "AiSolo"}, dir).code == 1);
    CHECK(cli({"simulate", "--phase", "Summary", "--human", "pd"}, dir).code == 1);
    CHECK(cli({"replay", "--log", (dir / "missing.log").string()}, dir).code != 0);
    const auto unknown = cli({"eval", "--assistant", "ghost", "--trials", "1"}, dir);
    CHECK(unknown.code == 1);
    CHECK(unknown.err.rfind("error: ", 0) == 0);
  }

  TEST_CASE("fine-tune from a disagreement file") {
    const auto dir = vip::test::scratch("cli_ft");
    const auto bc = cli({"train-bc", "--teacher", "pd", "--demos", "4", "--epochs", "2"}, dir);
    REQUIRE(bc.code == 0);
    const auto model = dir / "models" / "bc-from-pd.vipmodel";
    REQUIRE(std::filesystem::exists(model));
    std::vector<vip::adapt::DisagreementRecord> recs(40);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      recs[i].obs = {0.01 * i, -0.02 * i};
      recs[i].human_u = 0.5;
      recs[i].ai_u = -0.5;
      recs[i].t = i / 60.0;
    }
    vip::adapt::write_disagreements(dir / "d.jsonl", recs);
    const auto ft = cli({"finetune", "--model", model.string(), "--records",
                         (dir / "d.jsonl").string(), "--out", (dir / "ft.vipmodel").string()},
                        dir);
    CHECK(ft.code == 0);
    CHECK(ft.out.find("records 40 (train 36, test 4)") != std::string::npos);
    CHECK(std::filesystem::exists(dir / "ft.vipmodel"));
  }
}
