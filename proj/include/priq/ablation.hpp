#pragma once

// Ablation grid runner: variants x architecture toggles x seeds, each run
// evaluated at every test-set size T, with medians over seeds. Outputs the
// per-run CSV, median tables and an SVG plot of median SROCC against T.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "priq/config.hpp"
#include "priq/error.hpp"
#include "priq/metrics.hpp"
#include "priq/protocol.hpp"
#include "priq/train.hpp"

namespace priq {

struct AblationArm {
  PRVariant variant = PRVariant::LocationWeight;
  bool pseudo_ref = true;
  bool ssim = true;
  bool pyramid = true;

  // The baseline has no pseudo-reference, so no variant either.
  std::string variant_label() const { return pseudo_ref ? std::string(to_string(variant)) : "none"; }
  std::string toggles() const {
    return std::string("pr") + (pseudo_ref ? "1" : "0") + "-ssim" + (ssim ? "1" : "0") + "-pyr" + (pyramid ? "1" : "0");
  }
  RunConfig apply(RunConfig c) const {
    c.variant = variant;
    c.pseudo_ref = pseudo_ref;
    c.ssim = ssim;
    c.pyramid = pyramid;
    return c;
  }
};

struct Toggles {
  bool pseudo_ref = true, ssim = true, pyramid = true;
};

inline Toggles parse_toggles(const std::string& s) {
  Toggles t;
  int pr = -1, ss = -1, py = -1;
  if (std::sscanf(s.c_str(), "pr%d-ssim%d-pyr%d", &pr, &ss, &py) != 3 || pr < 0 || pr > 1 || ss < 0 || ss > 1 ||
      py < 0 || py > 1 || s != "pr" + std::to_string(pr) + "-ssim" + std::to_string(ss) + "-pyr" + std::to_string(py)) {
    throw ConfigError("bad toggles '" + s + "' (expected e.g. pr1-ssim1-pyr0)");
  }
  t.pseudo_ref = pr == 1;
  t.ssim = ss == 1;
  t.pyramid = py == 1;
  return t;
}

struct AblationGrid {
  RunConfig base;
  std::vector<AblationArm> arms;
  std::size_t jobs = 1;
};

/// RunConfig keys plus grid.variants, grid.toggles (both lists) and grid.jobs.
/// Arms are variants x toggles; toggles without pseudo-reference yield one
/// baseline arm regardless of the variant list.
inline AblationGrid parse_ablation_grid(const std::string& text) {
  auto kv = parse_key_values(text);
  std::vector<PRVariant> variants{PRVariant::LocationWeight};
  std::vector<Toggles> toggles{Toggles{}};
  AblationGrid grid;
  if (auto it = kv.find("grid.variants"); it != kv.end()) {
    variants.clear();
    for (const auto& v : config_detail::split_list(it->second)) variants.push_back(parse_variant(v));
    kv.erase(it);
  }
  if (auto it = kv.find("grid.toggles"); it != kv.end()) {
    toggles.clear();
    for (const auto& t : config_detail::split_list(it->second)) toggles.push_back(parse_toggles(t));
    kv.erase(it);
  }
  if (auto it = kv.find("grid.jobs"); it != kv.end()) {
    grid.jobs = config_detail::parse_number<std::size_t>("grid.jobs", it->second);
    if (grid.jobs < 1) throw ConfigError("grid.jobs must be positive");
    kv.erase(it);
  }
  for (const auto& [k, v] : kv) {
    if (!apply_key(grid.base, k, v)) throw ConfigError("config: unknown key '" + k + "'");
  }
  if (variants.empty() || toggles.empty()) throw ConfigError("grid: empty variant or toggle list");
  for (const auto& t : toggles) {
    if (!t.pseudo_ref) {
      grid.arms.push_back({PRVariant::Mean, false, t.ssim, t.pyramid});
      continue;
    }
    for (auto v : variants) grid.arms.push_back({v, true, t.ssim, t.pyramid});
  }
  for (const auto& arm : grid.arms) arm.apply(grid.base).validate();
  return grid;
}

struct MetricsRecord {
  std::string variant;
  std::string toggles;
  std::size_t T = 0;
  std::uint64_t seed = 0;
  double lcc = 0.0;
  double srocc = 0.0;

  bool operator==(const MetricsRecord& o) const {
    auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
    return variant == o.variant && toggles == o.toggles && T == o.T && seed == o.seed && same(lcc, o.lcc) &&
           same(srocc, o.srocc);
  }
};

struct MedianRow {
  std::string variant;
  std::string toggles;
  std::size_t T = 0;
  double lcc = 0.0;
  double srocc = 0.0;
  std::size_t runs = 0;
};

// Median over the finite entries; NaN when none are finite.
inline double finite_median(const std::vector<double>& v) {
  std::vector<double> f;
  for (double x : v) {
    if (std::isfinite(x)) f.push_back(x);
  }
  return f.empty() ? std::numeric_limits<double>::quiet_NaN() : median(f);
}

struct MetricsReport {
  std::vector<MetricsRecord> records;

  /// Medians over seeds per (variant, toggles, T), in first-appearance order.
  std::vector<MedianRow> medians() const {
    std::vector<MedianRow> rows;
    std::vector<std::vector<double>> lccs, sroccs;
    for (const auto& r : records) {
      auto it = std::find_if(rows.begin(), rows.end(), [&](const MedianRow& m) {
        return m.variant == r.variant && m.toggles == r.toggles && m.T == r.T;
      });
      std::size_t k = static_cast<std::size_t>(it - rows.begin());
      if (it == rows.end()) {
        rows.push_back({r.variant, r.toggles, r.T, 0, 0, 0});
        lccs.emplace_back();
        sroccs.emplace_back();
      }
      lccs[k].push_back(r.lcc);
      sroccs[k].push_back(r.srocc);
      ++rows[k].runs;
    }
    for (std::size_t k = 0; k < rows.size(); ++k) {
      rows[k].lcc = finite_median(lccs[k]);
      rows[k].srocc = finite_median(sroccs[k]);
    }
    return rows;
  }

  std::optional<MedianRow> median_of(const std::string& variant, const std::string& toggles, std::size_t T) const {
    for (const auto& m : medians()) {
      if (m.variant == variant && m.toggles == toggles && m.T == T) return m;
    }
    return std::nullopt;
  }
};

inline constexpr const char* kMetricsCsvHeader = "variant,toggles,T,seed,lcc,srocc";

inline std::string to_csv(const MetricsReport& report) {
  std::ostringstream o;
  o << kMetricsCsvHeader << '\n';
  for (const auto& r : report.records) {
    o << r.variant << ',' << r.toggles << ',' << r.T << ',' << r.seed << ',' << config_detail::fmt_double(r.lcc)
      << ',' << config_detail::fmt_double(r.srocc) << '\n';
  }
  return o.str();
}

inline MetricsReport parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsCsvHeader) throw IoError("metrics csv: bad header");
  MetricsReport report;
  auto real = [](const std::string& s) {
    if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
    return std::stod(s);
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 6) throw IoError("metrics csv: bad row '" + line + "'");
    try {
      report.records.push_back({f[0], f[1], std::stoul(f[2]), std::stoull(f[3]), real(f[4]), real(f[5])});
    } catch (const std::logic_error&) {
      throw IoError("metrics csv: bad number in row '" + line + "'");
    }
  }
  return report;
}

struct AblationProgress {
  std::string arm;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
};

/// Trains every arm for every seed on the scene-disjoint training split and
/// evaluates each run at every T on the test split with the same partitions.
/// Up to grid.jobs runs execute concurrently; each run owns its model and tape.
inline MetricsReport ablation_run(const AblationGrid& grid, const synth::Dataset& dataset,
                                  const std::function<void(const AblationProgress&)>& progress = {}) {
  const RunConfig& base = grid.base;
  const auto split = synth::split_scenes(dataset, base.dataset.train_fraction, base.dataset.split_seed);
  struct Task {
    const AblationArm* arm;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (const auto& arm : grid.arms) {
    for (auto seed : base.seeds) tasks.push_back({&arm, seed});
  }
  std::vector<std::vector<MetricsRecord>> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;

  auto worker = [&]() {
    for (std::size_t k = next++; k < tasks.size(); k = next++) {
      try {
        const auto& task = tasks[k];
        const RunConfig cfg = task.arm->apply(base);
        const TrainResult run = train(cfg, split.train, task.seed);
        for (std::size_t T : base.T_values) {
          MetricsRecord rec{task.arm->variant_label(), task.arm->toggles(), T, task.seed,
                            std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
          try {
            const auto e = evaluate(run.model, split.test, T, base.partition_seed, base.crop_size);
            rec.lcc = e.lcc;
            rec.srocc = e.srocc;
          } catch (const UndefinedMetricError&) {
            // recorded as NaN: constant predictions (e.g. T = 1 with SSIM aggregation)
          }
          results[k].push_back(rec);
        }
        if (progress) {
          std::lock_guard lock(progress_mutex);
          progress({task.arm->variant_label() + "/" + task.arm->toggles(), task.seed, run.loss_curve.back()});
        }
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(grid.jobs, tasks.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  MetricsReport report;
  for (auto& r : results) report.records.insert(report.records.end(), r.begin(), r.end());
  return report;
}

// ---------------------------------------------------------------------------
// Rendering

/// Median SROCC against T, one polyline per (variant, toggles), log-scaled T axis.
inline std::string render_tsweep_svg(const MetricsReport& report) {
  const auto rows = report.medians();
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  std::vector<std::string> order;
  double ymin = 1.0, ymax = 0.0, tmin = 1e9, tmax = 0.0;
  for (const auto& r : rows) {
    if (!std::isfinite(r.srocc)) continue;
    const std::string key = r.variant + " (" + r.toggles + ")";
    if (!series.contains(key)) order.push_back(key);
    series[key].emplace_back(static_cast<double>(r.T), r.srocc);
    ymin = std::min(ymin, r.srocc);
    ymax = std::max(ymax, r.srocc);
    tmin = std::min(tmin, static_cast<double>(r.T));
    tmax = std::max(tmax, static_cast<double>(r.T));
  }
  const double W = 640, H = 420, L = 60, R = 200, Tp = 20, B = 50;
  if (order.empty()) {
    ymin = 0;
    ymax = 1;
    tmin = 1;
    tmax = 2;
  }
  if (ymax - ymin < 0.02) {
    ymin -= 0.01;
    ymax += 0.01;
  }
  if (tmax <= tmin) tmax = tmin * 2;
  auto sx = [&](double t) { return L + (std::log(t) - std::log(tmin)) / (std::log(tmax) - std::log(tmin)) * (W - L - R); };
  auto sy = [&](double v) { return Tp + (ymax - v) / (ymax - ymin) * (H - Tp - B); };
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ostringstream o;
  char buf[128];
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << L << "\" y1=\"" << Tp << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  std::vector<double> ticks;
  for (const auto& r : rows) {
    if (std::find(ticks.begin(), ticks.end(), static_cast<double>(r.T)) == ticks.end()) ticks.push_back(static_cast<double>(r.T));
  }
  for (double t : ticks) {
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\">%g</text>\n", sx(t), H - B + 16, t);
    o << buf;
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = ymin + (ymax - ymin) * k / 4.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"end\">%.3f</text>\n", L - 6, sy(v) + 4, v);
    o << buf;
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" font-size=\"12\" text-anchor=\"middle\">test set size T</text>\n"
    << "<text x=\"14\" y=\"" << (Tp + H - B) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << (Tp + H - B) / 2
    << ")\" text-anchor=\"middle\">median SROCC</text>\n";
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto pts = series[order[i]];
    std::sort(pts.begin(), pts.end());
    const char* color = colors[i % 8];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [t, v] : pts) {
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", sx(t), sy(v));
      o << buf;
    }
    o << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" fill=\"%s\">", W - R + 10, Tp + 14.0 + 16.0 * i, color);
    o << buf << order[i] << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// Writes metrics.csv, medians.csv, table_variants.csv (variants x T, full
/// toggles), table_toggles.csv (toggle rows at one T) and tsweep.svg.
inline void write_report(const MetricsReport& report, const std::filesystem::path& dir, std::size_t toggles_T = 20) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IoError("cannot write '" + (dir / name).string() + "'");
    out << content;
  };
  write("metrics.csv", to_csv(report));

  const auto rows = report.medians();
  std::ostringstream med;
  med << "variant,toggles,T,runs,median_lcc,median_srocc\n";
  for (const auto& r : rows) {
    med << r.variant << ',' << r.toggles << ',' << r.T << ',' << r.runs << ',' << config_detail::fmt_double(r.lcc) << ','
        << config_detail::fmt_double(r.srocc) << '\n';
  }
  write("medians.csv", med.str());

  std::vector<std::size_t> Ts;
  for (const auto& r : rows) {
    if (std::find(Ts.begin(), Ts.end(), r.T) == Ts.end()) Ts.push_back(r.T);
  }
  std::ostringstream tv;
  tv << "variant";
  for (auto T : Ts) tv << ",lcc_T" << T << ",srocc_T" << T;
  tv << '\n';
  std::vector<std::string> variants;
  for (const auto& r : rows) {
    if (r.toggles == "pr1-ssim1-pyr1" && std::find(variants.begin(), variants.end(), r.variant) == variants.end()) {
      variants.push_back(r.variant);
    }
  }
  for (const auto& v : variants) {
    tv << v;
    for (auto T : Ts) {
      const auto m = report.median_of(v, "pr1-ssim1-pyr1", T);
      tv << ',' << (m ? config_detail::fmt_double(m->lcc) : "") << ',' << (m ? config_detail::fmt_double(m->srocc) : "");
    }
    tv << '\n';
  }
  write("table_variants.csv", tv.str());

  if (std::find(Ts.begin(), Ts.end(), toggles_T) == Ts.end() && !Ts.empty()) toggles_T = Ts.back();
  std::ostringstream tt;
  tt << "variant,pseudo_ref,ssim,pyramid,T,median_lcc,median_srocc\n";
  for (const auto& r : rows) {
    if (r.T != toggles_T) continue;
    const auto t = parse_toggles(r.toggles);
    tt << r.variant << ',' << t.pseudo_ref << ',' << t.ssim << ',' << t.pyramid << ',' << r.T << ','
       << config_detail::fmt_double(r.lcc) << ',' << config_detail::fmt_double(r.srocc) << '\n';
  }
  write("table_toggles.csv", tt.str());
  write("tsweep.svg", render_tsweep_svg(report));
}

}  // namespace priq
