#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sst/cli.hpp"

using namespace sst;

namespace {

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"sst"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// One workspace for the whole pipeline walk; fresh per test run.
struct Workspace {
  std::string root;
  Workspace() : root("/tmp/sst_cli_" + std::to_string(getpid())) {
    std::filesystem::remove_all(root);
    std::filesystem::create_directories(root);
    write_json(root + "/style_a.json", default_style_a().to_json());
    write_json(root + "/style_b.json", default_style_b().to_json());
  }
  ~Workspace() { std::filesystem::remove_all(root); }
  static void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path);
    f << j.dump(2);
  }
};

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"no-such-command"}).code == 2);

  const CliResult eval = run({"evaluate", "--data", "x.csv"});
  CHECK(eval.code == 2);
  CHECK(eval.err.find("--classifier") != std::string::npos);

  const CliResult synth = run({"synth-data", "--style-a", "a.json", "--out", "d"});
  CHECK(synth.code == 2);
  CHECK(synth.err.find("--style-b") != std::string::npos);

  CHECK(run({"fit-baseline", "--data", "x.csv", "--method", "bogus", "--out", "t.json"}).code == 2);

  const CliResult help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("train-sst") != std::string::npos);
  CHECK(help.out.find("fit-baseline") != std::string::npos);
}

TEST_CASE("runtime failures exit with 1") {
  const CliResult r = run({"evaluate", "--classifier", "/nonexistent.ckpt", "--data", "/nonexistent.csv"});
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error: ", 0) == 0);
  CHECK(r.err.find("\n") == r.err.size() - 1);  // single-line diagnostic
}

TEST_CASE("full pipeline through the cli") {
  Workspace ws;
  const std::string data = ws.root + "/data";
  const std::string run_dir = ws.root + "/run";

  // synth-data writes three manifests that reload losslessly
  const CliResult synth = run({"synth-data", "--style-a", ws.root + "/style_a.json", "--style-b",
                               ws.root + "/style_b.json", "--out", data, "--counts", "16,8,8", "--tile-size", "16",
                               "--seed", "5"});
  REQUIRE(synth.code == 0);
  for (const char* name : {"train", "val", "test"}) REQUIRE(std::filesystem::exists(data + "/" + name + ".csv"));
  const Dataset test_ds = load_manifest(data + "/test.csv", Split::test);
  REQUIRE(test_ds.tiles.size() == 8);
  CHECK(test_ds.tile_d() == 16);
  CHECK(test_ds.count(0) == 4);
  CHECK(test_ds.tiles.front().institute == "B");
  CHECK(load_manifest(data + "/train.csv").tiles.front().institute == "A");

  // same seed, second directory: identical bytes
  const std::string data2 = ws.root + "/data2";
  REQUIRE(run({"synth-data", "--style-a", ws.root + "/style_a.json", "--style-b", ws.root + "/style_b.json", "--out",
               data2, "--counts", "16,8,8", "--tile-size", "16", "--seed", "5"})
              .code == 0);
  CHECK(slurp(data + "/train.csv") == slurp(data2 + "/train.csv"));
  CHECK(slurp(data + "/train/tile_00003.png") == slurp(data2 + "/train/tile_00003.png"));

  // train-classifier
  const CliResult tc = run({"train-classifier", "--train", data + "/train.csv", "--val", data + "/val.csv", "--out",
                            run_dir, "--epochs", "2", "--batch-size", "8", "--model-depth", "1", "--model-width", "4",
                            "--seed", "7"});
  REQUIRE(tc.code == 0);
  REQUIRE(std::filesystem::exists(run_dir + "/classifier_best.ckpt"));
  REQUIRE(std::filesystem::exists(run_dir + "/classifier_history.jsonl"));
  CHECK(tc.out.find("best val auc") != std::string::npos);
  CHECK(tc.err.find("epoch 0") != std::string::npos);
  CHECK(tc.err.find("epoch 1") != std::string::npos);

  // train-sst
  const CliResult ts = run({"train-sst", "--train", data + "/train.csv", "--val", data + "/val.csv", "--classifier",
                            run_dir + "/classifier_best.ckpt", "--out", run_dir, "--epochs", "1", "--batch-size", "4",
                            "--model-depth", "2", "--model-width", "4", "--seed", "7"});
  REQUIRE(ts.code == 0);
  REQUIRE(std::filesystem::exists(run_dir + "/generator_best.ckpt"));
  REQUIRE(std::filesystem::exists(run_dir + "/discriminator_best.ckpt"));
  CHECK(ts.err.find("div") != std::string::npos);

  // transfer keeps dimensions
  const CliResult tr = run({"transfer", "--generator", run_dir + "/generator_best.ckpt", "--in",
                            data + "/test/tile_00000.png", "--out", run_dir + "/out.png"});
  REQUIRE(tr.code == 0);
  const ColorTile transferred = read_png_rgb8(run_dir + "/out.png");
  CHECK(transferred.d == 16);

  // evaluate, identity route
  const CliResult ev = run({"evaluate", "--classifier", run_dir + "/classifier_best.ckpt", "--data", data + "/test.csv"});
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("tile-level metrics") != std::string::npos);
  CHECK(ev.out.find("identity") != std::string::npos);

  // evaluate through the generator, json mode
  const CliResult evj = run({"evaluate", "--classifier", run_dir + "/classifier_best.ckpt", "--data",
                             data + "/test.csv", "--generator", run_dir + "/generator_best.ckpt", "--json"});
  REQUIRE(evj.code == 0);
  const nlohmann::json evr = nlohmann::json::parse(evj.out);
  REQUIRE(evr.is_array());
  REQUIRE(evr.size() == 1);
  CHECK(evr[0].at("method") == "sst");
  CHECK(evr[0].at("n_samples") == 8);
  CHECK(evr[0].at("auc").is_number());

  // fit-baseline artifacts, pooled and per-tile
  for (const char* m : {"reinhard", "macenko", "hs"}) {
    const std::string path = run_dir + "/" + m + ".json";
    REQUIRE(run({"fit-baseline", "--data", data + "/train.csv", "--method", m, "--out", path}).code == 0);
    const nlohmann::json j = nlohmann::json::parse(slurp(path));
    CHECK(j.at("method") == m);
    CHECK(j.at("mode") == "pooled");
  }
  REQUIRE(run({"fit-baseline", "--data", data + "/train.csv", "--method", "reinhard", "--out",
               run_dir + "/rein_tile.json", "--tile", "0"})
              .code == 0);
  CHECK(nlohmann::json::parse(slurp(run_dir + "/rein_tile.json")).at("mode") == "tile");
  CHECK(run({"fit-baseline", "--data", data + "/train.csv", "--method", "reinhard", "--out", run_dir + "/x.json",
             "--tile", "999"})
            .code == 1);

  // compare: all five methods produce metric rows
  const CliResult cmp = run({"compare", "--classifier", run_dir + "/classifier_best.ckpt", "--data", data + "/test.csv",
                             "--methods", "sst,macenko,reinhard,hs,identity", "--generator",
                             run_dir + "/generator_best.ckpt", "--fit-from", data + "/train.csv"});
  REQUIRE(cmp.code == 0);
  for (const char* m : {"sst", "macenko", "reinhard", "hs", "identity"}) CHECK(cmp.out.find(m) != std::string::npos);
  CHECK(cmp.out.find("error:") == std::string::npos);

  // same comparison via fitted target files, json mode
  const CliResult cmpj = run({"compare", "--classifier", run_dir + "/classifier_best.ckpt", "--data",
                              data + "/test.csv", "--methods", "macenko,reinhard,hs,identity", "--reinhard-target",
                              run_dir + "/reinhard.json", "--macenko-target", run_dir + "/macenko.json", "--hs-target",
                              run_dir + "/hs.json", "--json"});
  REQUIRE(cmpj.code == 0);
  const nlohmann::json rows = nlohmann::json::parse(cmpj.out);
  REQUIRE(rows.size() == 4);
  for (const auto& row : rows) CHECK(!row.contains("error"));

  // missing prerequisites annotate rows instead of failing the run
  const CliResult cmp_missing = run({"compare", "--classifier", run_dir + "/classifier_best.ckpt", "--data",
                                     data + "/test.csv", "--methods", "sst,identity"});
  REQUIRE(cmp_missing.code == 0);
  CHECK(cmp_missing.out.find("error: no generator loaded") != std::string::npos);

  // a target fitted for one method cannot feed another
  CHECK(run({"compare", "--classifier", run_dir + "/classifier_best.ckpt", "--data", data + "/test.csv", "--methods",
             "macenko", "--macenko-target", run_dir + "/reinhard.json"})
            .code == 1);

  // config file with CLI override: flag beats file, file beats default
  Workspace::write_json(ws.root + "/cfg.json", {{"epochs", 3}, {"batch_size", 4}});
  const CliResult with_file = run({"train-classifier", "--train", data + "/train.csv", "--val", data + "/val.csv",
                                   "--out", ws.root + "/run_a", "--config", ws.root + "/cfg.json", "--model-depth", "1",
                                   "--model-width", "4", "--json"});
  REQUIRE(with_file.code == 0);
  CHECK(nlohmann::json::parse(with_file.out).at("history").size() == 3);
  const CliResult with_flag = run({"train-classifier", "--train", data + "/train.csv", "--val", data + "/val.csv",
                                   "--out", ws.root + "/run_b", "--config", ws.root + "/cfg.json", "--epochs", "2",
                                   "--model-depth", "1", "--model-width", "4", "--json"});
  REQUIRE(with_flag.code == 0);
  CHECK(nlohmann::json::parse(with_flag.out).at("history").size() == 2);

  // unknown config key is a runtime failure with a pointed message
  Workspace::write_json(ws.root + "/bad.json", {{"epocs", 3}});
  const CliResult bad = run({"train-classifier", "--train", data + "/train.csv", "--val", data + "/val.csv", "--out",
                             ws.root + "/run_c", "--config", ws.root + "/bad.json"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("unknown config key") != std::string::npos);
}

TEST_CASE("seeded training through the cli is reproducible") {
  Workspace ws;
  const std::string data = ws.root + "/data";
  REQUIRE(run({"synth-data", "--style-a", ws.root + "/style_a.json", "--style-b", ws.root + "/style_b.json", "--out",
               data, "--counts", "8,4,4", "--tile-size", "16", "--seed", "3"})
              .code == 0);
  const std::vector<std::string> args{"train-classifier", "--train", data + "/train.csv", "--val", data + "/val.csv",
                                      "--epochs", "2",     "--batch-size", "4",  "--model-depth", "1",
                                      "--model-width", "4", "--seed", "9"};
  auto with_out = [&](const std::string& dir) {
    std::vector<std::string> a = args;
    a.push_back("--out");
    a.push_back(dir);
    return a;
  };
  REQUIRE(run(with_out(ws.root + "/r1")).code == 0);
  REQUIRE(run(with_out(ws.root + "/r2")).code == 0);
  CHECK(slurp(ws.root + "/r1/classifier_best.ckpt") == slurp(ws.root + "/r2/classifier_best.ckpt"));

  // histories agree on everything except wall time
  auto lines = [](const std::string& path) {
    std::ifstream f(path);
    std::vector<nlohmann::json> out;
    std::string line;
    while (std::getline(f, line)) {
      nlohmann::json j = nlohmann::json::parse(line);
      j.erase("seconds");
      out.push_back(std::move(j));
    }
    return out;
  };
  CHECK(lines(ws.root + "/r1/classifier_history.jsonl") == lines(ws.root + "/r2/classifier_history.jsonl"));
}
