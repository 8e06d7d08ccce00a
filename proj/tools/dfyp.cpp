// dfyp command-line harness: synthetic data generation, preprocessing,
// training, ablation, fixed-operator benchmarking and evaluation.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "dfyp/config.hpp"
#include "dfyp/dataset_io.hpp"
#include "dfyp/trainer.hpp"

namespace fs = std::filesystem;
using namespace dfyp;

namespace {

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

fs::path default_out(const std::string& command) {
  const char* env = std::getenv("DFYP_OUT");
  return fs::path(env && *env ? env : "out") / command;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

// ---------------------------------------------------------------------------
// SVG charts (standalone files, fixed 640x400 canvas)
// ---------------------------------------------------------------------------

std::string svg_header(const std::string& title) {
  std::string s =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
      "viewBox=\"0 0 640 400\">\n"
      "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"16\">" + title + "</text>\n";
  return s;
}

void write_bar_chart(const fs::path& path, const std::string& title,
                     const std::vector<std::pair<std::string, double>>& bars) {
  double lo = 0, hi = 1e-12;
  for (const auto& [name, v] : bars)
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double x0 = 60, x1 = 620, y0 = 360, y1 = 50;
  const double span = hi - lo;
  auto ypix = [&](double v) { return y0 - (v - lo) / span * (y0 - y1); };
  std::string s = svg_header(title);
  char buf[256];
  const double slot = (x1 - x0) / std::max<std::size_t>(bars.size(), 1);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& [name, v] = bars[i];
    const double bx = x0 + i * slot + slot * 0.15;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"380\" text-anchor=\"middle\" "
                  "font-family=\"sans-serif\" font-size=\"11\">%s</text>\n",
                  x0 + (i + 0.5) * slot, name.c_str());
    s += buf;
    if (!std::isfinite(v)) continue;
    const double top = ypix(std::max(v, 0.0)), bot = ypix(std::min(v, 0.0));
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" "
                  "fill=\"#4477aa\"/>\n",
                  bx, top, slot * 0.7, std::max(bot - top, 1.0));
    s += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" "
                  "font-family=\"sans-serif\" font-size=\"10\">%.4g</text>\n",
                  x0 + (i + 0.5) * slot, top - 4, v);
    s += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                "stroke=\"black\"/>\n",
                x0, ypix(0.0), x1, ypix(0.0));
  s += buf;
  s += "</svg>\n";
  write_text(path, s);
}

void write_line_chart(const fs::path& path, const std::string& title,
                      const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  double lo = 1e300, hi = -1e300;
  std::size_t len = 0;
  for (const auto& [name, ys] : series) {
    len = std::max(len, ys.size());
    for (double v : ys)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  }
  if (!(lo < hi)) {
    lo = lo > hi ? 0.0 : lo - 0.5;
    hi = lo + 1.0;
  }
  const double x0 = 60, x1 = 620, y0 = 360, y1 = 50;
  auto xpix = [&](std::size_t i) {
    return len > 1 ? x0 + static_cast<double>(i) / (len - 1) * (x1 - x0) : (x0 + x1) / 2;
  };
  auto ypix = [&](double v) { return y0 - (v - lo) / (hi - lo) * (y0 - y1); };
  static const char* palette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee",
                                  "#aa3377", "#bbbbbb", "#222255", "#000000"};
  std::string s = svg_header(title);
  char buf[128];
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& [name, ys] = series[k];
    std::string pts;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      if (!std::isfinite(ys[i])) continue;
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", xpix(i), ypix(ys[i]));
      pts += buf;
    }
    const char* color = palette[k % 9];
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" points=\"" + pts +
         "\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" "
                  "font-size=\"11\" fill=\"%s\">%s</text>\n",
                  x1 - 90.0, y1 + 14.0 * k, color, name.c_str());
    s += buf;
  }
  s += "</svg>\n";
  write_text(path, s);
}

// ---------------------------------------------------------------------------
// Shared training plumbing
// ---------------------------------------------------------------------------

// Re-fits model geometry to the dataset tensors; the toy preset's geometry
// fields are placeholders until the data is known.
void adapt_to_data(config::RunConfig& rc, const data::Dataset& ds) {
  if (ds.samples.empty()) throw ConfigError("dataset has no samples");
  const auto& x = ds.samples[0].x;
  if (x.rank() != 3 || x.extent(1) != x.extent(2))
    throw ConfigError("expected square [C,H,H] sample tensors, got " + shape_str(x.shape()));
  rc.model.channels = x.extent(0);
  rc.model.image = x.extent(1);
  if (ds.preset == "sentinel-like")
    rc.model.gsd = 10.0;
  else if (ds.preset == "modis-like" || ds.preset == "drift")
    rc.model.gsd = 500.0;
  while (rc.model.image % rc.model.vit_patch != 0) --rc.model.vit_patch;
}

std::string epoch_json(const train::EpochLog& e, const model::ModelConfig& mc) {
  std::string s = "{\"epoch\":" + std::to_string(e.epoch);
  s += ",\"train_loss\":" + fmt(e.train_loss);
  s += ",\"val_loss\":" + fmt(e.val_loss);
  s += ",\"val_rmse\":" + fmt(e.val_rmse);
  if (mc.has_fusion()) {
    s += ",\"alpha\":" + fmt(e.alpha);
    s += ",\"beta\":" + fmt(e.beta);
  }
  if (mc.has_cnn()) s += ",\"gamma\":" + fmt(e.gamma);
  if (mc.has_aol()) {
    s += ",\"lambda\":" + fmt(e.lambda);
    s += ",\"selected_operator\":\"" + e.selected_operator + "\"";
  }
  s += ",\"seconds\":" + fmt(e.seconds);
  s += "}";
  return s;
}

// Gate log: running mean of -val_rmse per pool operator, reconstructed from
// the epoch sequence so pinned runs are covered too.
std::string gate_csv(const std::vector<train::EpochLog>& epochs) {
  std::map<std::string, std::pair<double, long>> acc;  // sum, count
  std::string s = "epoch,selected_operator,score_sobel,score_scharr,score_learnable,lambda\n";
  for (const auto& e : epochs) {
    auto& a = acc[e.selected_operator];
    a.first += -e.val_rmse;
    a.second += 1;
    auto mean = [&](const std::string& id) {
      auto it = acc.find(id);
      return it == acc.end() || it->second.second == 0 ? 0.0
                                                       : it->second.first / it->second.second;
    };
    s += std::to_string(e.epoch) + "," + e.selected_operator + "," + fmt(mean("sobel")) +
         "," + fmt(mean("scharr")) + "," + fmt(mean("learnable")) + "," + fmt(e.lambda) +
         "\n";
  }
  return s;
}

struct RunArtifacts {
  train::TrainResult result;
  train::EvalResult test;
};

// One training run with the full artifact set written under `dir`.
RunArtifacts run_training(config::RunConfig rc, const data::Dataset& ds, const fs::path& dir) {
  adapt_to_data(rc, ds);
  auto m = model::DfypModel<float>::make(rc.model, rc.seed);
  if (!rc.operator_pin.empty()) {
    if (!m.cfg.has_aol())
      throw ConfigError("--operator requires an AOL variant (fusion+aol or full)");
    if (rc.operator_pin != "learnable" &&
        edge::classical_kernels().find(rc.operator_pin) == edge::classical_kernels().end())
      throw ConfigError("unknown operator '" + rc.operator_pin + "'");
    m.pinned_operator = rc.operator_pin;
  }
  train::TrainConfig tc;
  tc.lr = rc.lr;
  tc.batch = rc.batch;
  tc.epochs = rc.epochs;
  tc.steps = rc.steps;
  tc.patience = rc.patience;
  tc.seed = rc.seed;

  RunArtifacts out;
  out.result = train::train(m, ds, tc);

  write_text(dir / "resolved.cfg", config::snapshot(rc));
  std::string jsonl;
  for (const auto& e : out.result.epochs) jsonl += epoch_json(e, rc.model) + "\n";
  write_text(dir / "epochs.jsonl", jsonl);
  if (rc.model.has_aol()) write_text(dir / "gate.csv", gate_csv(out.result.epochs));
  model::save_checkpoint(m, dir / "checkpoint");

  out.test = train::evaluate(m, ds, "test", rc.batch);
  std::string preds = "sample_id,truth,prediction,error\n";
  for (std::size_t i = 0; i < out.test.ids.size(); ++i)
    preds += out.test.ids[i] + "," + fmt(out.test.truth[i]) + "," + fmt(out.test.pred[i]) +
             "," + fmt(out.test.pred[i] - out.test.truth[i]) + "\n";
  write_text(dir / "predictions.csv", preds);
  return out;
}

std::string report_row(const std::string& variant, std::uint64_t seed,
                       const fusion::MetricsReport& r) {
  return variant + "," + std::to_string(seed) + "," + fmt(r.rmse) + "," + fmt(r.mae) + "," +
         fmt(r.r2) + "," + std::to_string(r.n) + "\n";
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Builds the run config from preset + optional config file + flag overrides.
struct CommonFlags {
  std::string config_path, preset = "toy", variant, operator_pin;
  std::uint64_t seed = 7;
  bool seed_set = false;
  int epochs = -1;
  double lr = -1.0;
  int workers = 1;

  config::RunConfig resolve() const {
    auto rc = config::make_preset(preset);
    if (!config_path.empty()) rc = config::load_config(config_path, rc);
    if (!variant.empty()) config::apply_key(rc, "variant", variant);
    if (seed_set) rc.seed = seed;
    if (epochs > 0) rc.epochs = epochs;
    if (lr >= 0.0) rc.lr = lr;
    if (!operator_pin.empty()) rc.operator_pin = operator_pin;
    rc.workers = 1;  // single-core runtime; higher values are clamped
    return rc;
  }
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "key=value config file");
  cmd->add_option("--preset", f.preset, "config preset: modis | sentinel2 | toy");
  cmd->add_option("--variant", f.variant,
                  "model variant: cnn | vit | fusion | fusion+rca | fusion+aol | full");
  cmd->add_option("--seed", f.seed, "run seed")->each([&](const std::string&) {
    f.seed_set = true;
  });
  cmd->add_option("--epochs", f.epochs, "epoch cap");
  cmd->add_option("--lr", f.lr, "learning rate override");
  cmd->add_option("--operator", f.operator_pin, "pin a fixed edge operator (disables gate)");
  cmd->add_option("--workers", f.workers, "worker limit (clamped to available cores)");
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_synth(const std::string& preset, int n, std::uint64_t seed, double r2,
              const fs::path& out) {
  if (n < 1) throw ConfigError("synth: --n must be at least 1 (empty dataset)");
  data::SyntheticSpec spec;
  spec.preset = preset;
  spec.seed = seed;
  spec.target_r2 = r2;
  auto ds = data::synth_generate(spec, n);
  const auto manifest = data::save_dataset(ds, out);
  int ntr = 0, nv = 0, nte = 0;
  for (const auto& s : ds.samples) {
    if (s.split == "train") ++ntr;
    else if (s.split == "val") ++nv;
    else ++nte;
  }
  std::printf("wrote %s: %d samples (%d train / %d val / %d test), sigma %s\n",
              manifest.string().c_str(), n, ntr, nv, nte, fmt(ds.sigma_used).c_str());
  return 0;
}

int cmd_preprocess(const fs::path& in, const fs::path& out, const std::string& classes) {
  if (!fs::is_directory(in)) throw IoError("input directory not found: " + in.string());
  std::set<int> crop;
  for (const auto& tok : [&] {
         std::vector<std::string> v;
         std::stringstream ss(classes);
         std::string t;
         while (std::getline(ss, t, ',')) v.push_back(t);
         return v;
       }())
    crop.insert(std::stoi(tok));

  std::vector<std::string> tiles;
  for (const auto& e : fs::directory_iterator(in)) {
    const std::string name = e.path().filename().string();
    const std::string suffix = ".refl.dten";
    if (name.size() > suffix.size() && name.ends_with(suffix))
      tiles.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(tiles.begin(), tiles.end());
  if (tiles.empty()) throw IoError("no *.refl.dten tiles in " + in.string());

  // labels.csv (sample_id,year,region_id,yield) is optional; absent labels are 0.
  std::map<std::string, std::tuple<int, int, double>> labels;
  if (fs::exists(in / "labels.csv")) {
    std::ifstream f(in / "labels.csv");
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
      std::stringstream ss(line);
      std::string id, year, region, yield;
      if (std::getline(ss, id, ',') && std::getline(ss, year, ',') &&
          std::getline(ss, region, ',') && std::getline(ss, yield))
        labels[id] = {std::stoi(year), std::stoi(region), std::stod(yield)};
    }
  }

  // mask -> combine, then a two-pass range sketch over all usable tiles.
  std::vector<std::pair<std::string, Tensor<float>>> stacks;
  for (const auto& t : tiles) {
    auto refl = dten::load<float>(in / (t + ".refl.dten"));
    auto temp = dten::load<float>(in / (t + ".temp.dten"));
    auto landcover = dten::load<float>(in / (t + ".landcover.dten"));
    auto mask = data::build_mask(landcover, crop);
    auto combined = data::combine_channels(refl, temp);
    stacks.emplace_back(t, data::apply_mask(combined, mask));
  }
  const int channels = stacks[0].second.extent(1);
  data::RangeSketch sketch(channels);
  for (const auto& [t, s] : stacks) sketch.observe_extremes(s);
  sketch.finalize_extremes();
  for (const auto& [t, s] : stacks) sketch.observe_values(s);

  data::Dataset ds;
  ds.preset = "preprocessed";
  ds.ranges = sketch.ranges();
  int skipped = 0, idx = 0;
  for (const auto& [t, s] : stacks) {
    data::Sample sm;
    sm.id = t;
    try {
      sm.x = data::histogram_transform(s, ds.ranges);
    } catch (const ParamError& e) {
      std::fprintf(stderr, "skipping unusable tile '%s': %s\n", t.c_str(), e.what());
      ++skipped;
      continue;
    }
    if (auto it = labels.find(t); it != labels.end()) {
      sm.year = std::get<0>(it->second);
      sm.region = std::get<1>(it->second);
      sm.label = std::get<2>(it->second);
    }
    sm.split = idx % 10 < 8 ? "train" : (idx % 10 == 8 ? "val" : "test");
    ++idx;
    ds.samples.push_back(std::move(sm));
  }
  if (ds.samples.empty()) throw ConfigError("preprocess: no usable tiles");
  const auto manifest = data::save_dataset(ds, out);
  std::printf("wrote %s: %zu tiles (%d skipped)\n", manifest.string().c_str(),
              ds.samples.size(), skipped);
  return 0;
}

int cmd_train(const CommonFlags& flags, const fs::path& manifest, const fs::path& out) {
  auto rc = flags.resolve();
  auto ds = data::load_dataset(manifest);
  auto run = run_training(rc, ds, out);
  write_text(out / "report.csv", "variant,seed,rmse,mae,r2,n\n" +
                                     report_row(rc.model.variant, rc.seed, run.test.report));
  std::printf("%s seed %llu: test rmse %s mae %s r2 %s (best epoch %d, %ld steps)\n",
              rc.model.variant.c_str(), static_cast<unsigned long long>(rc.seed),
              fmt(run.test.report.rmse).c_str(), fmt(run.test.report.mae).c_str(),
              fmt(run.test.report.r2).c_str(), run.result.best_epoch,
              run.result.steps_done);
  return 0;
}

int cmd_ablate(const CommonFlags& flags, const fs::path& manifest, int seeds,
               const fs::path& out) {
  if (seeds < 1) throw ConfigError("ablate: --seeds must be at least 1");
  auto ds = data::load_dataset(manifest);
  std::string report = "variant,seed,rmse,mae,r2,n\n";
  std::string failures;
  std::map<std::string, std::map<std::string, std::vector<double>>> by_metric;
  for (const auto& variant : model::variant_names()) {
    for (int k = 0; k < seeds; ++k) {
      auto rc = flags.resolve();
      rc.model.variant = variant;
      rc.seed = flags.resolve().seed + static_cast<std::uint64_t>(k);
      const fs::path dir = out / variant / ("seed" + std::to_string(rc.seed));
      try {
        auto run = run_training(rc, ds, dir);
        report += report_row(variant, rc.seed, run.test.report);
        by_metric["rmse"][variant].push_back(run.test.report.rmse);
        by_metric["mae"][variant].push_back(run.test.report.mae);
        by_metric["r2"][variant].push_back(run.test.report.r2);
      } catch (const std::exception& e) {
        failures += variant + "," + std::to_string(rc.seed) + "," + e.what() + "\n";
        std::fprintf(stderr, "variant %s seed %llu failed: %s\n", variant.c_str(),
                     static_cast<unsigned long long>(rc.seed), e.what());
      }
    }
  }
  write_text(out / "report.csv", report);
  if (!failures.empty()) write_text(out / "failures.csv", "variant,seed,error\n" + failures);
  for (const auto& metric : {"rmse", "mae", "r2"}) {
    std::vector<std::pair<std::string, double>> bars;
    for (const auto& variant : model::variant_names())
      bars.emplace_back(variant, median(by_metric[metric][variant]));
    write_bar_chart(out / (std::string(metric) + ".svg"),
                    std::string("median test ") + metric + " by variant", bars);
  }
  std::printf("wrote %s\n", (out / "report.csv").string().c_str());
  return 0;
}

int cmd_operator_bench(const CommonFlags& flags, const fs::path& manifest,
                       const fs::path& out) {
  auto ds = data::load_dataset(manifest);
  std::vector<std::string> fixed;
  for (const auto& [id, k] : edge::classical_kernels()) fixed.push_back(id);
  std::sort(fixed.begin(), fixed.end());

  std::string report = "operator,seed,rmse,mae,r2,n\n";
  std::vector<std::pair<std::string, std::vector<double>>> curves;
  auto one = [&](const std::string& label, const std::string& pin) {
    auto rc = flags.resolve();
    rc.model.variant = "full";
    rc.operator_pin = pin;
    auto run = run_training(rc, ds, out / label);
    report += report_row(label, rc.seed, run.test.report);
    std::vector<double> curve;
    for (const auto& e : run.result.epochs) curve.push_back(e.val_rmse);
    curves.emplace_back(label, std::move(curve));
  };
  for (const auto& id : fixed) one(id, id);
  one("aol", "");  // adaptive gate enabled
  write_text(out / "report.csv", report);
  write_line_chart(out / "val_rmse_curves.svg", "validation RMSE by epoch", curves);
  std::printf("wrote %s (9 rows)\n", (out / "report.csv").string().c_str());
  return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& manifest, const std::string& split,
             const fs::path& out) {
  auto m = model::load_checkpoint<float>(checkpoint);
  auto ds = data::load_dataset(manifest);
  auto r = train::evaluate(m, ds, split);
  std::string preds = "sample_id,truth,prediction,error\n";
  for (std::size_t i = 0; i < r.ids.size(); ++i)
    preds += r.ids[i] + "," + fmt(r.truth[i]) + "," + fmt(r.pred[i]) + "," +
             fmt(r.pred[i] - r.truth[i]) + "\n";
  write_text(out / "predictions.csv", preds);
  write_text(out / "metrics.csv",
             "rmse,mae,r2,n\n" + fmt(r.report.rmse) + "," + fmt(r.report.mae) + "," +
                 fmt(r.report.r2) + "," + std::to_string(r.report.n) + "\n");
  std::printf("%s split: rmse %s mae %s r2 %s over %ld samples\n", split.c_str(),
              fmt(r.report.rmse).c_str(), fmt(r.report.mae).c_str(),
              fmt(r.report.r2).c_str(), static_cast<long>(r.report.n));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dfyp: dual-branch crop yield prediction"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic benchmark dataset");
  std::string synth_preset = "modis-like";
  int synth_n = 100;
  std::uint64_t synth_seed = 7;
  double synth_r2 = 0.9;
  std::string synth_out;
  synth->add_option("--preset", synth_preset, "modis-like | sentinel-like | drift");
  synth->add_option("--n", synth_n, "sample count");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--r2", synth_r2, "target least-squares R^2 for noise sizing");
  synth->add_option("--out", synth_out, "output directory");

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "mask, combine and histogram raw tiles");
  std::string prep_in, prep_out, prep_classes = "1";
  prep->add_option("--in", prep_in, "input tile directory")->required();
  prep->add_option("--out", prep_out, "output directory");
  prep->add_option("--crop-classes", prep_classes, "comma-separated land-cover class ids");

  // train
  auto* tr = app.add_subcommand("train", "train one model variant");
  CommonFlags tr_flags;
  std::string tr_data, tr_out;
  add_common(tr, tr_flags);
  tr->add_option("--data", tr_data, "dataset manifest.json")->required();
  tr->add_option("--out", tr_out, "output directory");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run the six-variant ablation");
  CommonFlags ab_flags;
  std::string ab_data, ab_out;
  int ab_seeds = 5;
  add_common(ab, ab_flags);
  ab->add_option("--data", ab_data, "dataset manifest.json")->required();
  ab->add_option("--seeds", ab_seeds, "seeds per variant (base seed, base+1, ...)");
  ab->add_option("--out", ab_out, "output directory");

  // operator-bench
  auto* ob = app.add_subcommand("operator-bench",
                                "compare fixed edge operators against the adaptive gate");
  CommonFlags ob_flags;
  std::string ob_data, ob_out;
  add_common(ob, ob_flags);
  ob->add_option("--data", ob_data, "dataset manifest.json")->required();
  ob->add_option("--out", ob_out, "output directory");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint directory")->required();
  ev->add_option("--data", ev_data, "dataset manifest.json")->required();
  ev->add_option("--split", ev_split, "train | val | test");
  ev->add_option("--out", ev_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth)
      return cmd_synth(synth_preset, synth_n, synth_seed, synth_r2,
                       synth_out.empty() ? default_out("synth") : fs::path(synth_out));
    if (*prep)
      return cmd_preprocess(prep_in,
                            prep_out.empty() ? default_out("preprocess") : fs::path(prep_out),
                            prep_classes);
    if (*tr)
      return cmd_train(tr_flags, tr_data,
                       tr_out.empty() ? default_out("train") : fs::path(tr_out));
    if (*ab)
      return cmd_ablate(ab_flags, ab_data, ab_seeds,
                        ab_out.empty() ? default_out("ablate") : fs::path(ab_out));
    if (*ob)
      return cmd_operator_bench(ob_flags, ob_data,
                                ob_out.empty() ? default_out("operator-bench")
                                               : fs::path(ob_out));
    if (*ev)
      return cmd_eval(ev_ckpt, ev_data, ev_split,
                      ev_out.empty() ? default_out("eval") : fs::path(ev_out));
  } catch (const NumericError& e) {
    std::fprintf(stderr, "dfyp: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dfyp: %s\n", e.what());
    return 2;
  }
  return 2;
}
