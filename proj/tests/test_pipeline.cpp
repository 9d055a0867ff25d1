#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>

#include "dstcan/gtrules.hpp"
#include "dstcan/pipeline.hpp"

using namespace dstcan;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string err;
};

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("dstcan_pipeline_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string p(const std::string& name) { return (work_dir() / name).string(); }

Run cli(const std::string& args) {
  const auto err = p("stderr.txt");
  const std::string cmd = std::string(DSTCAN_CLI_PATH) + " " + args + " > " + p("stdout.txt") + " 2> " + err;
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Builds a small synthetic pipeline once: tracks, MNN, grids and labels.
void ensure_base() {
  static bool done = false;
  if (done) return;
  REQUIRE(cli("ingest --synth 12 --frames 220 --seed 3 --out " + p("tracks.bin")).code == 0);
  REQUIRE(cli("train-mnn --tracks " + p("tracks.bin") + " --epochs 40 --seed 4 --out " + p("mnn.json")).code == 0);
  REQUIRE(cli("build-grids --tracks " + p("tracks.bin") + " --mnn " + p("mnn.json") + " --horizon 30 --stride 10" +
              " --seed 5 --out-grids " + p("grids.bin") + " --out-labels " + p("labels.csv"))
              .code == 0);
  done = true;
}

std::string train_args(const std::string& out, const std::string& extra = "") {
  return "train-decision --grids " + p("grids.bin") + " --labels " + p("labels.csv") + " --epochs 2 --seed 6 --out " +
         p(out) + " " + extra;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(cli("").code == 1);
  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("ingest --bogus").code == 1);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("missing input exits with 2 and names the path") {
  const auto r = cli("ingest --input /nonexistent/trajectories.csv --out " + p("x.bin"));
  CHECK(r.code == 2);
  CHECK(r.err.find("/nonexistent/trajectories.csv") != std::string::npos);
}

TEST_CASE("malformed input exits with 2") {
  {
    std::ofstream f(p("bad.csv"));
    f << "vehicle_id,frame_id,lane_id,local_x_ft,local_y_ft\n1,1,1,0,0\n1,1,1,0,1\n";
  }
  const auto r = cli("ingest --input " + p("bad.csv") + " --out " + p("bad.bin"));
  CHECK(r.code == 2);
  CHECK(r.err.find("bad.csv") != std::string::npos);
}

TEST_CASE("seeds are mandatory") {
  const auto r = cli("ingest --synth 5 --out " + p("noseed.bin"));
  CHECK(r.code == 1);
  CHECK(r.err.find("seed") != std::string::npos);
}

TEST_CASE("ingest of several files keeps vehicles apart and tags congestion") {
  for (const char* name : {"a.csv", "b.csv"}) {
    std::ofstream f(p(name));
    f << "Vehicle_ID,Frame_ID,Lane_ID,Local_X,Local_Y\n";
    for (int fr = 1; fr <= 5; ++fr) f << "7," << fr << ",2,18.0," << 10 * fr << "\n";
  }
  REQUIRE(cli("ingest --input " + p("a.csv") + " --congestion low --input " + p("b.csv") +
              " --congestion medium --out " + p("ab.bin"))
              .code == 0);
  const auto store = pipeline::load_tracks(p("ab.bin"));
  REQUIRE(store.tracks().size() == 2);
  CHECK(store.find(7)->congestion == Congestion::kLow);
  CHECK(store.find(7 + pipeline::kIdStride)->congestion == Congestion::kMedium);
}

TEST_CASE("train-mnn with zero epochs writes the initialisation") {
  ensure_base();
  REQUIRE(cli("train-mnn --tracks " + p("tracks.bin") + " --epochs 0 --seed 4 --out " + p("mnn0.json")).code == 0);
  CHECK(mnn::load_checkpoint(p("mnn0.json")) == mnn::MnnParams::random(4));
}

TEST_CASE("train-mnn is deterministic per seed") {
  ensure_base();
  REQUIRE(cli("train-mnn --tracks " + p("tracks.bin") + " --epochs 40 --seed 4 --out " + p("mnn_b.json")).code == 0);
  CHECK(slurp(p("mnn.json")) == slurp(p("mnn_b.json")));
}

TEST_CASE("build-grids") {
  ensure_base();
  const auto arc = grid::read_grid_archive(p("grids.bin"));
  CHECK(arc.dims == grid::GridDims{13, 3, 60});
  CHECK(arc.size() > 0);
  const auto labels = grid::read_labels(p("labels.csv"));
  CHECK(labels.size() == arc.size());
  CHECK(std::is_sorted(arc.ids.begin(), arc.ids.end()));
  for (std::size_t i = 0; i < arc.size(); ++i) {
    CHECK(labels[i].sample_id == arc.ids[i]);
    CHECK(grid::sample_frame(arc.ids[i]) >= 30);
    CHECK(labels[i].gt == gtrules::gt_label(arc.grid(i), grid::GridConfig::for_horizon(30)));
  }

  SUBCASE("repeatable") {
    REQUIRE(cli("build-grids --tracks " + p("tracks.bin") + " --mnn " + p("mnn.json") +
                " --horizon 30 --stride 10 --seed 5 --out-grids " + p("grids2.bin") + " --out-labels " +
                p("labels2.csv"))
                .code == 0);
    CHECK(slurp(p("grids.bin")) == slurp(p("grids2.bin")));
    CHECK(slurp(p("labels.csv")) == slurp(p("labels2.csv")));
  }
  SUBCASE("horizon outside 10, 30 and 50") {
    CHECK(cli("build-grids --tracks " + p("tracks.bin") + " --mnn " + p("mnn.json") +
              " --horizon 20 --seed 5 --out-grids " + p("g20.bin") + " --out-labels " + p("l20.csv"))
              .code == 1);
  }
  SUBCASE("summary of the library call") {
    pipeline::BuildGridsOptions o;
    o.tracks = p("tracks.bin");
    o.mnn_checkpoint = p("mnn.json");
    o.grids_out = p("grids3.bin");
    o.labels_out = p("labels3.csv");
    o.stride = 10;
    o.seed = 5;
    const auto s = pipeline::cmd_build_grids(o);
    CHECK(s.written == arc.size());
    CHECK(s.skipped_history > 0);
    CHECK(s.candidates == s.written + s.skipped_history + s.skipped_window + s.dropped_balance);
    CHECK(s.train + s.test == s.written);
  }
}

TEST_CASE("train-decision and evaluate") {
  ensure_base();
  REQUIRE(cli(train_args("net.json", "--loss-log " + p("loss.csv"))).code == 0);
  const auto log = slurp(p("loss.csv"));
  CHECK(log.rfind("epoch,loss\n1,", 0) == 0);
  CHECK(log.find("\n2,") != std::string::npos);

  SUBCASE("deterministic") {
    REQUIRE(cli(train_args("net_b.json", "--loss-log " + p("loss_b.csv"))).code == 0);
    CHECK(slurp(p("net.json")) == slurp(p("net_b.json")));
    CHECK(slurp(p("loss_b.csv")) == log);
  }
  SUBCASE("label sources give different checkpoints") {
    REQUIRE(cli(train_args("net_h.json", "--label-source human")).code == 0);
    CHECK(slurp(p("net.json")) != slurp(p("net_h.json")));
  }
  SUBCASE("report") {
    REQUIRE(cli("evaluate --grids " + p("grids.bin") + " --labels " + p("labels.csv") + " --checkpoint " +
                p("net.json") + " --out " + p("report.json") + " --matrices " + p("m.csv"))
                .code == 0);
    const auto r = eval::parse_report_file(p("report.json"));
    CHECK(r.config.horizon == 30);
    CHECK(r.config.split == "test");
    CHECK(r.overall.count == r.consensus.count + r.conflict.count);
    const auto csv = slurp(p("m.csv"));
    CHECK(csv.find("consensus") != std::string::npos);
    CHECK(csv.find("conflict") != std::string::npos);
  }
  SUBCASE("horizon mismatch names both dims") {
    REQUIRE(cli("build-grids --tracks " + p("tracks.bin") + " --mnn " + p("mnn.json") +
                " --horizon 10 --stride 10 --seed 5 --out-grids " + p("g10.bin") + " --out-labels " + p("l10.csv"))
                .code == 0);
    const auto r = cli("evaluate --grids " + p("g10.bin") + " --labels " + p("l10.csv") + " --checkpoint " +
                       p("net.json") + " --out " + p("r10.json"));
    CHECK(r.code == 2);
    CHECK(r.err.find("13x3x60") != std::string::npos);
    CHECK(r.err.find("13x3x40") != std::string::npos);
  }
}

TEST_CASE("config file with flag overrides") {
  ensure_base();
  {
    std::ofstream f(p("config.json"));
    f << R"({"seeds": {"decision": 6}, "decision": {"epochs": 2, "batch": 64},)"
      << R"( "paths": {"grids": ")" << p("grids.bin") << R"(", "labels": ")" << p("labels.csv") << R"("}})";
  }
  REQUIRE(cli("--config " + p("config.json") + " train-decision --out " + p("net_cfg.json") + " --batch 128").code == 0);
  CHECK(slurp(p("net_cfg.json")) == slurp(p("net.json")));
  {
    std::ofstream f(p("broken.json"));
    f << "{not json";
  }
  CHECK(cli("--config " + p("broken.json") + " train-decision --out " + p("x.json")).code == 1);
}

TEST_CASE("config lookup") {
  const auto c = pipeline::PipelineConfig::parse(R"({"a": {"b": 3, "s": "x"}})");
  CHECK(c.get<int>("a.b") == 3);
  CHECK_FALSE(c.get<int>("a.c").has_value());
  CHECK_FALSE(c.get<int>("z.b").has_value());
  CHECK_THROWS_AS(c.get<int>("a.s"), UsageError);
}
