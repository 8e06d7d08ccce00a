#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dfyp/data.hpp"
#include "dfyp/dten.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "dfyp_cli_tests";

int run_cli(const std::string& args, const std::string& redirect = " >/dev/null 2>&1") {
  const std::string cmd = std::string(DFYP_CLI_PATH) + " " + args + redirect;
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool same_bytes(const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b); }

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

// Shared tiny dataset, generated once.
fs::path dataset_dir() {
  static fs::path dir = [] {
    const fs::path d = kWork / "ds";
    fs::remove_all(d);
    REQUIRE(run_cli("synth --preset modis-like --n 20 --seed 7 --out " + d.string()) == 0);
    return d;
  }();
  return dir;
}

std::string manifest_arg() { return " --data " + (dataset_dir() / "manifest.json").string(); }

}  // namespace

TEST_CASE("synth: counts, determinism, empty-dataset rejection") {
  const fs::path d1 = kWork / "synth1", d2 = kWork / "synth2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  REQUIRE(run_cli("synth --preset modis-like --n 20 --seed 3 --out " + d1.string()) == 0);
  REQUIRE(run_cli("synth --preset modis-like --n 20 --seed 3 --out " + d2.string()) == 0);
  CHECK(same_bytes(d1 / "manifest.json", d2 / "manifest.json"));
  CHECK(same_bytes(d1 / "labels.csv", d2 / "labels.csv"));

  json m;
  std::ifstream(d1 / "manifest.json") >> m;
  int ntr = 0, nv = 0, nte = 0;
  for (const auto& s : m["samples"]) {
    const std::string split = s["split"];
    (split == "train" ? ntr : split == "val" ? nv : nte) += 1;
  }
  CHECK(ntr == 16);
  CHECK(nv == 2);
  CHECK(nte == 2);

  CHECK(run_cli("synth --preset modis-like --n 0 --out " + (kWork / "empty").string()) == 2);
  CHECK(run_cli("synth --preset nonsense --n 5 --out " + (kWork / "bad").string()) == 2);
}

TEST_CASE("train: smoke run emits report, epoch log, resolved config and checkpoint") {
  const fs::path out = kWork / "train_full";
  fs::remove_all(out);
  REQUIRE(run_cli("train" + manifest_arg() +
                  " --preset toy --variant full --epochs 3 --seed 5 --out " + out.string()) ==
          0);
  const auto report = lines_of(slurp(out / "report.csv"));
  REQUIRE(report.size() == 2);
  CHECK(report[0] == "variant,seed,rmse,mae,r2,n");
  CHECK(report[1].rfind("full,5,", 0) == 0);

  const auto log = lines_of(slurp(out / "epochs.jsonl"));
  CHECK(log.size() == 3);
  for (const auto& l : log) {
    CHECK(l.find("\"alpha\":") != std::string::npos);
    CHECK(l.find("\"beta\":") != std::string::npos);
    CHECK(l.find("\"selected_operator\":") != std::string::npos);
    CHECK(l.find("\"seconds\":") != std::string::npos);
  }
  CHECK(log[0].find("\"selected_operator\":\"sobel\"") != std::string::npos);
  CHECK(log[1].find("\"selected_operator\":\"scharr\"") != std::string::npos);
  CHECK(log[2].find("\"selected_operator\":\"learnable\"") != std::string::npos);

  CHECK(fs::exists(out / "checkpoint" / "checkpoint.json"));
  CHECK(fs::exists(out / "gate.csv"));

  // Resolved snapshot reproduces the run byte for byte.
  const fs::path out2 = kWork / "train_full_replay";
  fs::remove_all(out2);
  REQUIRE(run_cli("train" + manifest_arg() + " --config " +
                  (out / "resolved.cfg").string() + " --out " + out2.string()) == 0);
  CHECK(same_bytes(out / "report.csv", out2 / "report.csv"));
  CHECK(same_bytes(out / "predictions.csv", out2 / "predictions.csv"));
  CHECK(same_bytes(out / "checkpoint" / "checkpoint.json",
                   out2 / "checkpoint" / "checkpoint.json"));
  for (const auto& e : fs::directory_iterator(out / "checkpoint" / "params"))
    CHECK(same_bytes(e.path(), out2 / "checkpoint" / "params" / e.path().filename()));
}

TEST_CASE("train: cnn variant omits fusion fields and the gate log") {
  const fs::path out = kWork / "train_cnn";
  fs::remove_all(out);
  REQUIRE(run_cli("train" + manifest_arg() +
                  " --preset toy --variant cnn --epochs 2 --out " + out.string()) == 0);
  for (const auto& l : lines_of(slurp(out / "epochs.jsonl"))) {
    CHECK(l.find("alpha") == std::string::npos);
    CHECK(l.find("beta") == std::string::npos);
    CHECK(l.find("selected_operator") == std::string::npos);
  }
  CHECK_FALSE(fs::exists(out / "gate.csv"));
  CHECK(lines_of(slurp(out / "report.csv"))[1].rfind("cnn,", 0) == 0);
}

TEST_CASE("train: lr=0 checkpoints equal initialization regardless of epoch count") {
  const fs::path a = kWork / "lr0_a", b = kWork / "lr0_b";
  fs::remove_all(a);
  fs::remove_all(b);
  REQUIRE(run_cli("train" + manifest_arg() +
                  " --preset toy --variant fusion --epochs 2 --lr 0 --seed 9 --out " +
                  a.string()) == 0);
  REQUIRE(run_cli("train" + manifest_arg() +
                  " --preset toy --variant fusion --epochs 5 --lr 0 --seed 9 --out " +
                  b.string()) == 0);
  for (const auto& e : fs::directory_iterator(a / "checkpoint" / "params"))
    CHECK(same_bytes(e.path(), b / "checkpoint" / "params" / e.path().filename()));
}

TEST_CASE("train: pinned operator shows up in every gate log row") {
  const fs::path out = kWork / "train_pin";
  fs::remove_all(out);
  REQUIRE(run_cli("train" + manifest_arg() +
                  " --preset toy --variant full --operator sobel --epochs 3 --out " +
                  out.string()) == 0);
  const auto gate = lines_of(slurp(out / "gate.csv"));
  REQUIRE(gate.size() == 4);
  CHECK(gate[0] ==
        "epoch,selected_operator,score_sobel,score_scharr,score_learnable,lambda");
  for (std::size_t i = 1; i < gate.size(); ++i)
    CHECK(gate[i].find(",sobel,") != std::string::npos);

  // Pinning requires an AOL variant.
  CHECK(run_cli("train" + manifest_arg() +
                " --preset toy --variant fusion --operator sobel --epochs 1 --out " +
                (kWork / "pin_bad").string()) == 2);
  CHECK(run_cli("train" + manifest_arg() +
                " --preset toy --variant full --operator nosuch --epochs 1 --out " +
                (kWork / "pin_bad2").string()) == 2);
}

TEST_CASE("exit codes: 2 for usage and config errors, 3 for numeric failures") {
  CHECK(run_cli("train --data /nonexistent/manifest.json --preset toy --epochs 1 --out " +
                (kWork / "x1").string()) == 2);
  CHECK(run_cli("train" + manifest_arg() + " --variant bogus --epochs 1 --out " +
                (kWork / "x2").string()) == 2);
  CHECK(run_cli("train" + manifest_arg() + " --no-such-flag --out " +
                (kWork / "x3").string()) == 2);
  CHECK(run_cli("nosuchcommand") == 2);
  // An absurd learning rate overflows the parameters within the first epoch.
  CHECK(run_cli("train" + manifest_arg() +
                " --preset toy --variant cnn --lr 1e20 --epochs 3 --out " +
                (kWork / "x4").string()) == 3);
}

TEST_CASE("eval: per-sample errors aggregate exactly to the summary metrics") {
  const fs::path tr = kWork / "train_for_eval", ev = kWork / "eval1";
  fs::remove_all(tr);
  fs::remove_all(ev);
  REQUIRE(run_cli("train" + manifest_arg() +
                  " --preset toy --variant fusion --epochs 2 --out " + tr.string()) == 0);
  REQUIRE(run_cli("eval --checkpoint " + (tr / "checkpoint").string() + manifest_arg() +
                  " --split test --out " + ev.string()) == 0);

  const auto rows = lines_of(slurp(ev / "predictions.csv"));
  REQUIRE(rows.size() >= 2);
  double se = 0, ae = 0;
  int n = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::stringstream ss(rows[i]);
    std::string id, truth, pred, err;
    std::getline(ss, id, ',');
    std::getline(ss, truth, ',');
    std::getline(ss, pred, ',');
    std::getline(ss, err, ',');
    const double e = std::stod(err);
    // column values carry 10 significant digits, so compare at 1e-6 relative
    CHECK(std::stod(pred) - std::stod(truth) == doctest::Approx(e).epsilon(1e-6));
    se += e * e;
    ae += std::abs(e);
    ++n;
  }
  const auto metrics = lines_of(slurp(ev / "metrics.csv"));
  std::stringstream ss(metrics[1]);
  std::string rmse, mae;
  std::getline(ss, rmse, ',');
  std::getline(ss, mae, ',');
  CHECK(std::stod(rmse) == doctest::Approx(std::sqrt(se / n)).epsilon(1e-9));
  CHECK(std::stod(mae) == doctest::Approx(ae / n).epsilon(1e-9));

  // Checkpoint geometry mismatch against a different dataset -> exit 2.
  const fs::path other = kWork / "ds_sent";
  if (!fs::exists(other))
    REQUIRE(run_cli("synth --preset drift --n 10 --seed 2 --out " + other.string()) == 0);
  CHECK(run_cli("eval --checkpoint " + (tr / "checkpoint").string() + " --data " +
                (other / "manifest.json").string() + " --out " +
                (kWork / "eval_bad").string()) == 2);
}

TEST_CASE("ablate: six variants emit rows and charts") {
  const fs::path out = kWork / "ablate1";
  fs::remove_all(out);
  REQUIRE(run_cli("ablate" + manifest_arg() +
                  " --preset toy --seeds 1 --epochs 1 --out " + out.string()) == 0);
  const auto rows = lines_of(slurp(out / "report.csv"));
  REQUIRE(rows.size() == 7);  // header + 6 variants x 1 seed
  CHECK(rows[1].rfind("cnn,", 0) == 0);
  CHECK(rows[6].rfind("full,", 0) == 0);
  for (const char* chart : {"rmse.svg", "mae.svg", "r2.svg"}) {
    CHECK(fs::exists(out / chart));
    CHECK(fs::file_size(out / chart) > 100);
  }
  CHECK_FALSE(fs::exists(out / "failures.csv"));
}

TEST_CASE("operator-bench: eight fixed operators plus the adaptive gate") {
  const fs::path out = kWork / "opbench1";
  fs::remove_all(out);
  REQUIRE(run_cli("operator-bench" + manifest_arg() +
                  " --preset toy --epochs 1 --out " + out.string()) == 0);
  const auto rows = lines_of(slurp(out / "report.csv"));
  REQUIRE(rows.size() == 10);  // header + 8 fixed + aol
  CHECK(rows.back().rfind("aol,", 0) == 0);
  std::set<std::string> ops;
  for (std::size_t i = 1; i < rows.size(); ++i) ops.insert(rows[i].substr(0, rows[i].find(',')));
  CHECK(ops == std::set<std::string>{"aol", "canny", "kirsch", "laplacian", "log", "prewitt",
                                     "roberts", "scharr", "sobel"});
  CHECK(fs::exists(out / "val_rmse_curves.svg"));
  // Pinned runs keep their operator in the per-run gate log.
  const auto gate = lines_of(slurp(out / "kirsch" / "gate.csv"));
  for (std::size_t i = 1; i < gate.size(); ++i)
    CHECK(gate[i].find(",kirsch,") != std::string::npos);
}

TEST_CASE("preprocess: mask/combine/histogram chain with skip handling") {
  const fs::path in = kWork / "tiles", out = kWork / "prep1", out2 = kWork / "prep2";
  fs::remove_all(in);
  fs::remove_all(out);
  fs::remove_all(out2);
  fs::create_directories(in);

  dfyp::Rng rng(41);
  int valid_count[3] = {0, 0, 0};
  for (int t = 0; t < 3; ++t) {
    auto refl = dfyp::Tensor<float>::zeros({4, 2, 8, 8});
    auto temp = dfyp::Tensor<float>::zeros({4, 1, 8, 8});
    for (auto& v : refl.vec()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    for (auto& v : temp.vec()) v = static_cast<float>(rng.uniform(270.0, 310.0));
    auto landcover = dfyp::Tensor<float>::zeros({8, 8});
    if (t != 2) {  // tile 2 has no cropland at all and must be skipped
      for (auto& v : landcover.vec()) v = rng.uniform(0.0, 1.0) < 0.5 ? 1.0f : 0.0f;
      for (auto v : landcover.vec()) valid_count[t] += v == 1.0f ? 1 : 0;
      if (valid_count[t] == 0) {
        landcover.data()[0] = 1.0f;
        valid_count[t] = 1;
      }
    }
    const std::string name = "tile" + std::to_string(t);
    dfyp::dten::save(in / (name + ".refl.dten"), refl);
    dfyp::dten::save(in / (name + ".temp.dten"), temp);
    dfyp::dten::save(in / (name + ".landcover.dten"), landcover);
  }

  REQUIRE(run_cli("preprocess --in " + in.string() + " --out " + out.string()) == 0);
  json m;
  std::ifstream(out / "manifest.json") >> m;
  REQUIRE(m["samples"].size() == 2);  // tile2 skipped

  // Histogram conservation at the CLI boundary: every (channel, step) column
  // sums to that tile's valid-pixel count.
  for (int t = 0; t < 2; ++t) {
    auto h = dfyp::dten::load<float>(out / "tensors" /
                                     ("tile" + std::to_string(t) + ".dten"));
    REQUIRE(h.shape() == dfyp::Shape{3, 32, 32});
    for (int c = 0; c < 3; ++c)
      for (int ts = 0; ts < 32; ++ts) {
        double sum = 0;
        for (int b = 0; b < 32; ++b) sum += h.at(c, b, ts);
        CHECK(sum == doctest::Approx(valid_count[t]));
      }
  }

  REQUIRE(run_cli("preprocess --in " + in.string() + " --out " + out2.string()) == 0);
  CHECK(same_bytes(out / "manifest.json", out2 / "manifest.json"));

  CHECK(run_cli("preprocess --in /no/such/dir --out " + (kWork / "prep3").string()) == 2);
  const fs::path err = kWork / "prep_err.txt";
  run_cli("preprocess --in /no/such/dir --out " + (kWork / "prep3").string(),
          " >/dev/null 2>" + err.string());
  CHECK(slurp(err).find("/no/such/dir") != std::string::npos);
}

TEST_CASE("DFYP_OUT provides the default output root") {
  const fs::path root = kWork / "envroot";
  fs::remove_all(root);
  const std::string cmd = "DFYP_OUT=" + root.string() + " " + DFYP_CLI_PATH +
                          " synth --preset modis-like --n 10 --seed 1 >/dev/null 2>&1";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  CHECK(fs::exists(root / "synth" / "manifest.json"));
}
