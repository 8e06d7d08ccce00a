// End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
// the process exits nonzero if any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dfyp/config.hpp"
#include "dfyp/dataset_io.hpp"
#include "dfyp/trainer.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace dfyp;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int num, const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%2d] %-34s %s  (%s)\n", num, name.c_str(), ok ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

model::ModelConfig toy_model(const std::string& variant, int channels, int image) {
  auto rc = config::make_preset("toy");
  rc.model.variant = variant;
  rc.model.channels = channels;
  rc.model.image = image;
  return rc.model;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite: full toy graph FD in f64 at 1e-6, f32 tape gradients vs
//    the f64 twin at 1e-3, >= 100 random coordinates, under 2 minutes.
// ---------------------------------------------------------------------------

template <class T>
std::vector<ops::BatchNormStats<T>> save_stats(model::DfypModel<T>& m) {
  std::vector<ops::BatchNormStats<T>> s;
  for (auto& blk : m.cnn_b->blocks) s.push_back(blk.stats);
  return s;
}
template <class T>
void restore_stats(model::DfypModel<T>& m, const std::vector<ops::BatchNormStats<T>>& s) {
  for (std::size_t i = 0; i < s.size(); ++i) m.cnn_b->blocks[i].stats = s[i];
}

void criterion_1() {
  const auto t0 = Clock::now();
  auto cfg = toy_model("full", 3, 8);
  cfg.rca_ratio = 1;
  Rng rng(5);
  auto x64 = dfyp_test::random_tensor<double>({2, 3, 8, 8}, rng);
  auto y64 = dfyp_test::random_tensor<double>({2}, rng);

  auto m64 = model::DfypModel<double>::make(cfg, 9);
  m64.active_operator = "learnable";
  auto stats0 = save_stats(m64);
  std::mt19937_64 drop(1);
  auto forward64 = [&]() {
    restore_stats(m64, stats0);
    auto p = m64.forward(x64, true, drop);
    double s = 0;
    for (int i = 0; i < 2; ++i)
      s += (p.data()[i] - y64.data()[i]) * (p.data()[i] - y64.data()[i]) / 2.0;
    return s;
  };
  auto backward64 = [&]() {
    restore_stats(m64, stats0);
    for (auto& p : m64.parameters()) p.zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto p = m64.forward(x64, true, drop);
    auto loss = fusion::mse_loss(p, y64);
    tape.backward(loss);
  };
  Rng pick(11);
  const double err64 = dfyp_test::fd_max_rel_err<double>(forward64, backward64,
                                                         m64.parameters(), 3, pick,
                                                         1e-5, 1e-3);
  long n_params = 0;
  for (auto& p : m64.parameters()) n_params += std::min<std::size_t>(3, p.size());

  // float32 twin: same values, tape gradients compared against the f64 run
  auto m32 = model::DfypModel<float>::make(cfg, 9);
  m32.active_operator = "learnable";
  auto p64 = m64.parameters();
  auto p32 = m32.parameters();
  for (std::size_t i = 0; i < p32.size(); ++i)
    for (std::size_t k = 0; k < p32[i].size(); ++k)
      p32[i].data()[k] = static_cast<float>(p64[i].data()[k]);
  auto x32 = Tensor<float>::zeros(x64.shape());
  for (std::size_t i = 0; i < x64.size(); ++i)
    x32.data()[i] = static_cast<float>(x64.data()[i]);
  auto y32 = Tensor<float>::zeros({2});
  for (int i = 0; i < 2; ++i) y32.data()[i] = static_cast<float>(y64.data()[i]);
  backward64();
  {
    for (auto& p : p32) p.zero_grad();
    Tape<float> tape;
    TapeScope<float> scope(tape);
    auto p = m32.forward(x32, true, drop);
    auto loss = fusion::mse_loss(p, y32);
    tape.backward(loss);
  }
  double err32 = 0;
  for (std::size_t i = 0; i < p32.size(); ++i)
    err32 = std::max(err32, dfyp_test::grad_max_rel_err(p32[i], p64[i]));

  const double secs = elapsed(t0);
  report(1, "gradient suite",
         err64 <= 1e-6 && err32 <= 1e-3 && n_params >= 100 && secs < 120.0,
         fmt("f64 FD err %.2e, f32 vs f64 err %.2e, %ld coords, %.1fs", err64, err32,
             n_params, secs));
}

// ---------------------------------------------------------------------------
// 2. Lambda endpoints bit-equal to Sobel / Scharr on 20 random images.
// ---------------------------------------------------------------------------

void criterion_2() {
  Rng rng(2);
  const auto sobel = edge::sobel_pair();
  const auto scharr = edge::scharr_pair();
  bool ok = true;
  for (int i = 0; i < 20 && ok; ++i) {
    auto x = dfyp_test::random_tensor<float>({1, 1, 12, 12}, rng);
    auto ref1 = edge::apply_pair(x, edge::stencil_tensor<float>(sobel.kx, sobel.k),
                                 edge::stencil_tensor<float>(sobel.ky, sobel.k));
    auto ref0 = edge::apply_pair(x, edge::stencil_tensor<float>(scharr.kx, scharr.k),
                                 edge::stencil_tensor<float>(scharr.ky, scharr.k));
    for (double pin : {1.0, 0.0}) {
      edge::LearnableKernel<float> lk;
      lk.pinned = pin;
      auto [kx, ky] = lk.kernels();
      auto got = edge::apply_pair(x, kx, ky);
      const auto& ref = pin == 1.0 ? ref1 : ref0;
      ok = ok && got.size() == ref.size() &&
           std::memcmp(got.data(), ref.data(), got.size() * sizeof(float)) == 0;
    }
  }
  report(2, "lambda endpoint bit-equality", ok, "20 images x {1,0} vs Sobel/Scharr");
}

// ---------------------------------------------------------------------------
// 3. Gate one-hot selection across a 50-epoch run with warm-up and tie-break.
// ---------------------------------------------------------------------------

void criterion_3() {
  edge::OperatorGateState gate;
  Rng rng(3);
  std::map<std::string, std::vector<double>> hist;
  bool ok = true;
  for (int epoch = 0; epoch < 50; ++epoch) {
    const std::string sel = gate.select(epoch);
    int members = 0;
    for (const auto& id : edge::aol_pool()) members += sel == id ? 1 : 0;
    ok = ok && members == 1;  // exactly one active operator
    if (epoch < 3) {
      ok = ok && sel == edge::aol_pool()[epoch];
    } else {
      std::string want;
      double best = -1e300;
      for (const auto& id : {"learnable", "sobel", "scharr"}) {
        const auto& h = hist[id];
        double mean = 0;
        for (double v : h) mean += v / static_cast<double>(h.size());
        if (h.empty()) mean = 0;
        if (mean > best) {
          best = mean;
          want = id;
        }
      }
      ok = ok && sel == want;
    }
    const double score = rng.uniform(-10.0, -1.0);
    gate.update(sel, score);
    hist[sel].push_back(score);
  }
  ok = ok && gate.selection_log().size() == 50;
  report(3, "gate one-hot over 50 epochs", ok, "warm-up order + argmax with tie-break");
}

// ---------------------------------------------------------------------------
// 4. gamma pinned to 1: CNN branch prediction invariant to operator choice.
// ---------------------------------------------------------------------------

void criterion_4() {
  auto m = model::DfypModel<float>::make(toy_model("full", 3, 8), 17);
  m.cnn_b->pinned_gamma = 1.0;
  Rng rng(4);
  auto x = dfyp_test::random_tensor<float>({2, 3, 8, 8}, rng);
  std::mt19937_64 drop(1);
  std::vector<std::string> pool = {"learnable"};
  for (const auto& [id, k] : edge::classical_kernels()) pool.push_back(id);
  float worst = 0;
  Tensor<float> ref;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    m.active_operator = pool[i];
    auto y = m.forward(x, false, drop);
    if (i == 0) {
      ref = y;
    } else {
      for (std::size_t k = 0; k < y.size(); ++k)
        worst = std::max(worst, std::abs(y.data()[k] - ref.data()[k]));
    }
  }
  report(4, "gamma=1 operator invariance", worst == 0.0f,
         fmt("max abs diff %.1e across %zu operators", static_cast<double>(worst),
             pool.size()));
}

// ---------------------------------------------------------------------------
// 5. Band formula.
// ---------------------------------------------------------------------------

void criterion_5() {
  const long got = data::bands_per_year(9, 8);
  report(5, "bands_per_year(9,8) == 405", got == 405, fmt("got %ld", got));
}

// ---------------------------------------------------------------------------
// 6. Histogram conservation on 100 random masked tiles.
// ---------------------------------------------------------------------------

void criterion_6() {
  Rng rng(6);
  bool ok = true;
  for (int tile = 0; tile < 100 && ok; ++tile) {
    const int t = 2 + static_cast<int>(rng.integer(4)), c = 1 + static_cast<int>(rng.integer(3));
    const int h = 4 + static_cast<int>(rng.integer(5)), w = 4 + static_cast<int>(rng.integer(5));
    auto stack = dfyp_test::random_tensor<float>({t, c, h, w}, rng, 0.0, 1.0);
    auto mask = Tensor<float>::zeros({h, w});
    long valid = 0;
    for (auto& v : mask.vec()) {
      v = rng.uniform(0.0, 1.0) < 0.7 ? 1.0f : 0.0f;
      valid += v == 1.0f ? 1 : 0;
    }
    if (valid == 0) {
      mask.data()[0] = 1.0f;
      valid = 1;
    }
    auto masked = data::apply_mask(stack, mask);
    data::ChannelRanges ranges(c, {-0.2, 1.2});
    auto hist = data::histogram_transform(masked, ranges);
    for (int ch = 0; ch < c && ok; ++ch)
      for (int ts = 0; ts < data::kHistSteps && ok; ++ts) {
        double sum = 0;
        for (int b = 0; b < data::kHistBins; ++b) sum += hist.at(ch, b, ts);
        ok = sum == static_cast<double>(valid);
      }
  }
  report(6, "histogram conservation x100", ok, "bin sums == valid-pixel count, exact");
}

// ---------------------------------------------------------------------------
// 7. Metrics vs straight-loop oracle.
// ---------------------------------------------------------------------------

void criterion_7() {
  Rng rng(7);
  std::vector<double> p(1000), t(1000);
  for (int i = 0; i < 1000; ++i) {
    t[i] = rng.uniform(-50.0, 50.0);
    p[i] = t[i] + rng.uniform(-5.0, 5.0);
  }
  auto r = fusion::metrics(p, t);
  double se = 0, ae = 0, mean = 0;
  for (double v : t) mean += v / 1000.0;
  double ss_res = 0, ss_tot = 0;
  for (int i = 0; i < 1000; ++i) {
    const double d = p[i] - t[i];
    se += d * d;
    ae += std::abs(d);
    ss_res += d * d;
    ss_tot += (t[i] - mean) * (t[i] - mean);
  }
  const double worst = std::max({dfyp_test::rel_err(r.rmse, std::sqrt(se / 1000.0), 1e-12),
                                 dfyp_test::rel_err(r.mae, ae / 1000.0, 1e-12),
                                 dfyp_test::rel_err(r.r2, 1.0 - ss_res / ss_tot, 1e-12)});
  auto perfect = fusion::metrics(t, t);
  std::vector<double> mp(1000, mean);
  auto meanpred = fusion::metrics(mp, t);
  const bool ok = worst <= 1e-9 && perfect.rmse == 0.0 && perfect.mae == 0.0 &&
                  perfect.r2 == 1.0 && std::abs(meanpred.r2) <= 1e-12;
  report(7, "metrics oracle", ok,
         fmt("loop-oracle rel err %.2e, mean-predictor r2 %.1e", worst, meanpred.r2));
}

// ---------------------------------------------------------------------------
// 8. Synthetic end-to-end: OLS oracle ~0.9, then full toy model R^2 >= 0.8
//    inside 10 minutes. The generated dataset is shared with criterion 9.
// ---------------------------------------------------------------------------

data::Dataset g_ds;  // 2500-sample modis-like benchmark, seed 7

double ols_oracle_r2(const data::Dataset& ds) {
  std::vector<std::vector<double>> xtr, xte;
  std::vector<double> ytr, yte;
  for (int i : ds.split_indices("train")) {
    xtr.push_back(ds.samples[i].features);
    ytr.push_back(ds.samples[i].label);
  }
  for (int i : ds.split_indices("test")) {
    xte.push_back(ds.samples[i].features);
    yte.push_back(ds.samples[i].label);
  }
  return dfyp_test::ols_r2(xte, yte, dfyp_test::ols_fit(xtr, ytr));
}

void criterion_8() {
  const auto t0 = Clock::now();
  data::SyntheticSpec spec;
  spec.preset = "modis-like";
  spec.seed = 7;
  g_ds = data::synth_generate(spec, 2500);
  const int n_train = static_cast<int>(g_ds.split_indices("train").size());
  const int n_val = static_cast<int>(g_ds.split_indices("val").size());
  const int n_test = static_cast<int>(g_ds.split_indices("test").size());
  const double oracle = ols_oracle_r2(g_ds);

  auto m = model::DfypModel<float>::make(toy_model("full", 9, 32), 7);
  train::TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch = 16;
  tc.epochs = 25;
  tc.patience = 10;
  tc.seed = 7;
  auto res = train::train(m, g_ds, tc);
  auto ev = train::evaluate(m, g_ds, "test");
  const double secs = elapsed(t0);
  const bool ok = n_train == 2000 && n_val == 250 && n_test == 250 && oracle > 0.85 &&
                  oracle < 0.95 && ev.report.r2 >= 0.8 && secs < 600.0;
  report(8, "synthetic end-to-end", ok,
         fmt("splits %d/%d/%d, OLS oracle r2 %.3f, model test r2 %.3f, %.0fs (%zu epochs)",
             n_train, n_val, n_test, oracle, ev.report.r2, secs, res.epochs.size()));
}

// ---------------------------------------------------------------------------
// 9. Ablation ordering: over 5 seeds, median test RMSE full <= cnn and <= vit.
// ---------------------------------------------------------------------------

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2]
                      : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

void criterion_9() {
  const auto t0 = Clock::now();
  // Desk-scale slice of the shared benchmark: first 500 samples (400/50/50).
  data::Dataset ds;
  ds.preset = g_ds.preset;
  ds.sigma_used = g_ds.sigma_used;
  ds.ranges = g_ds.ranges;
  ds.samples.assign(g_ds.samples.begin(), g_ds.samples.begin() + 500);
  std::map<std::string, std::vector<double>> rmse;
  for (const std::string variant : {"full", "cnn", "vit"}) {
    for (int k = 0; k < 5; ++k) {
      auto m = model::DfypModel<float>::make(toy_model(variant, 9, 32), 100 + k);
      train::TrainConfig tc;
      tc.lr = 1e-3;
      tc.batch = 16;
      tc.epochs = 10;
      tc.patience = 10;
      tc.seed = 100 + k;
      train::train(m, ds, tc);
      rmse[variant].push_back(train::evaluate(m, ds, "test").report.rmse);
    }
  }
  const double full = median_of(rmse["full"]), cnn = median_of(rmse["cnn"]),
               vit = median_of(rmse["vit"]);
  report(9, "ablation ordering (5 seeds)", full <= cnn && full <= vit,
         fmt("median rmse full %.3f vs cnn %.3f, vit %.3f, %.0fs", full, cnn, vit,
             elapsed(t0)));
}

// ---------------------------------------------------------------------------
// 10. Operator drift: AOL rmse <= best fixed operator + 0.05 * target std,
//     medians over 3 seeds on the drift benchmark.
// ---------------------------------------------------------------------------

void criterion_10() {
  const auto t0 = Clock::now();
  data::SyntheticSpec spec;
  spec.preset = "drift";
  spec.seed = 21;
  auto ds = data::synth_generate(spec, 300);
  double mean = 0, sq = 0;
  for (const auto& s : ds.samples) {
    mean += s.label / ds.samples.size();
    sq += s.label * s.label / ds.samples.size();
  }
  const double target_std = std::sqrt(std::max(0.0, sq - mean * mean));

  std::vector<std::string> fixed;
  for (const auto& [id, k] : edge::classical_kernels()) fixed.push_back(id);
  std::map<std::string, std::vector<double>> rmse;
  auto run_one = [&](const std::string& label, const std::string& pin, int seed) {
    auto m = model::DfypModel<float>::make(toy_model("full", 3, 32), seed);
    if (!pin.empty()) m.pinned_operator = pin;
    train::TrainConfig tc;
    tc.lr = 1e-3;
    tc.batch = 16;
    tc.epochs = 8;
    tc.patience = 10;
    tc.seed = static_cast<std::uint64_t>(seed);
    train::train(m, ds, tc);
    rmse[label].push_back(train::evaluate(m, ds, "test").report.rmse);
  };
  for (int k = 0; k < 3; ++k) {
    for (const auto& id : fixed) run_one(id, id, 200 + k);
    run_one("aol", "", 200 + k);
  }
  double best_fixed = 1e300;
  std::string best_name;
  for (const auto& id : fixed) {
    const double med = median_of(rmse[id]);
    if (med < best_fixed) {
      best_fixed = med;
      best_name = id;
    }
  }
  const double aol = median_of(rmse["aol"]);
  const double margin = 0.05 * target_std;
  report(10, "operator drift (3 seeds)", aol <= best_fixed + margin,
         fmt("aol %.3f vs best fixed %.3f (%s) + margin %.3f, %.0fs", aol, best_fixed,
             best_name.c_str(), margin, elapsed(t0)));
}

// ---------------------------------------------------------------------------
// 11. Determinism: identical config+seed -> byte-identical CSVs + checkpoints.
// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DFYP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  return WEXITSTATUS(std::system(cmd.c_str()));
}

void criterion_11() {
  const fs::path work = fs::temp_directory_path() / "dfyp_acceptance";
  fs::remove_all(work);
  const fs::path ds = work / "ds";
  bool ok = run_cli("synth --preset modis-like --n 20 --seed 7 --out " + ds.string()) == 0;
  std::string detail = "synth + train repeated";
  for (int r = 0; r < 2 && ok; ++r) {
    const fs::path out = work / ("run" + std::to_string(r));
    ok = run_cli("train --data " + (ds / "manifest.json").string() +
                 " --preset toy --variant full --epochs 3 --seed 5 --out " +
                 out.string()) == 0;
  }
  if (ok) {
    for (const char* f : {"report.csv", "predictions.csv", "gate.csv",
                          "checkpoint/checkpoint.json"})
      ok = ok && slurp(work / "run0" / f) == slurp(work / "run1" / f) &&
           !slurp(work / "run0" / f).empty();
    if (ok)
      for (const auto& e : fs::directory_iterator(work / "run0" / "checkpoint" / "params"))
        ok = ok && slurp(e.path()) ==
                       slurp(work / "run1" / "checkpoint" / "params" / e.path().filename());
    const fs::path ds2 = work / "ds2";
    ok = ok &&
         run_cli("synth --preset modis-like --n 20 --seed 7 --out " + ds2.string()) == 0 &&
         slurp(ds / "manifest.json") == slurp(ds2 / "manifest.json") &&
         slurp(ds / "labels.csv") == slurp(ds2 / "labels.csv");
  } else {
    detail = "cli invocation failed";
  }
  fs::remove_all(work);
  report(11, "determinism (CLI reruns)", ok, detail);
}

// ---------------------------------------------------------------------------
// 12. Preset structural fidelity.
// ---------------------------------------------------------------------------

void criterion_12() {
  bool ok = true;
  std::string detail = "modis + sentinel2 structure";
  try {
    auto modis = config::make_preset("modis");
    auto bc = modis.model.backbone_config();
    ok = ok && bc.feature_dim() == 512;
    ok = ok && bc.channels == std::vector<int>{9, 128, 256, 256, 512, 512, 512};
    ok = ok && bc.strides == std::vector<int>{1, 2, 1, 2, 1, 2};
    auto vc = modis.model.vit_config();
    ok = ok && vc.depth == 4 && vc.heads == 8 && vc.dim == 256 && vc.mlp_dim == 512;
    ok = ok && vc.image == 32 && vc.patch == 4 && vc.num_patches() == 64;
    auto mm = model::DfypModel<float>::make(modis.model, 1);
    ok = ok && mm.cnn_b->head_w.extent(0) == 512;

    auto s2 = config::make_preset("sentinel2");
    auto bc2 = s2.model.backbone_config();
    ok = ok && bc2.channels == std::vector<int>{3, 32, 64, 128, 128};
    ok = ok && bc2.feature_dim() == 128;
    auto vc2 = s2.model.vit_config();
    ok = ok && vc2.depth == 6 && vc2.heads == 6 && vc2.dim == 128 && vc2.mlp_dim == 256;
    ok = ok && vc2.image == 256 && vc2.patch == 16 && vc2.num_patches() == 256;
    auto ms = model::DfypModel<float>::make(s2.model, 1);
    ok = ok && ms.vit_b->layers.size() == 6;
  } catch (const std::exception& e) {
    ok = false;
    detail = e.what();
  }
  report(12, "preset structural fidelity", ok, detail);
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  criterion_11();
  criterion_12();
  std::printf("%s: %d/12 criteria passed in %.0fs\n", g_failures == 0 ? "OK" : "FAILED",
              12 - g_failures, elapsed(t0));
  return g_failures == 0 ? 0 : 1;
}
