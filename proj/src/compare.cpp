#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "adamix/experiment.hpp"

namespace adamix {

namespace fs = std::filesystem;

namespace {

nlohmann::json comparable_part(const RunConfig& cfg) {
  nlohmann::json j = to_json(cfg);
  j.erase("paradigm");
  j.erase("seed");
  j.erase("output_dir");
  return j;
}

struct Stat {
  double mean = 0.0;
  double std = 0.0;
};

// Sample standard deviation (n - 1); zero for a single value.
Stat stat(const std::vector<double>& v) {
  Stat s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() < 2) return s;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return s;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string run_name(int index, const RunConfig& cfg, std::uint64_t seed) {
  return "c" + std::to_string(index) + "_" + strategy_name(cfg.paradigm.strategy) + "_" +
         std::string(to_string(cfg.paradigm.paradigm)) + "_s" + std::to_string(seed);
}

}  // namespace

int worker_count_from_env() {
  const char* raw = std::getenv("ADAMIX_NUM_WORKERS");
  if (!raw || !*raw) return 1;
  char* end = nullptr;
  const long n = std::strtol(raw, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) {
    throw PreconditionError("ADAMIX_NUM_WORKERS must be a positive integer, got '" + std::string(raw) + "'");
  }
  return static_cast<int>(n);
}

void check_comparable(const std::vector<RunConfig>& configs) {
  if (configs.empty()) throw PreconditionError("compare: no configs given");
  const nlohmann::json ref = comparable_part(configs.front());
  for (std::size_t i = 1; i < configs.size(); ++i) {
    if (comparable_part(configs[i]) != ref) {
      throw PreconditionError("compare: config " + std::to_string(i) +
                              " differs from config 0 outside the paradigm/strategy settings");
    }
  }
}

CompareResult run_compare(const std::vector<RunConfig>& configs, const std::vector<std::uint64_t>& seeds,
                          const fs::path& out_dir) {
  check_comparable(configs);
  for (const RunConfig& c : configs) validate(c);
  if (seeds.empty()) throw PreconditionError("compare: no seeds given");
  ensure_fresh_directory(out_dir);
  fs::create_directories(out_dir / "runs");

  CompareResult result;
  std::vector<RunConfig> jobs;
  for (std::size_t ci = 0; ci < configs.size(); ++ci) {
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = configs[ci];
      cfg.seed = seed;
      CompareRun run;
      run.config_index = static_cast<int>(ci);
      run.seed = seed;
      run.dir = out_dir / "runs" / run_name(static_cast<int>(ci), cfg, seed);
      result.runs.push_back(run);
      jobs.push_back(std::move(cfg));
    }
  }

  std::vector<std::vector<std::string>> curve_rows(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= jobs.size()) return;
      {
        std::lock_guard lock(error_mutex);
        if (error) return;
      }
      try {
        RunArtifacts art = run_training(jobs[k], result.runs[k].dir);
        result.runs[k].test = art.test.summary;
        for (const CurvePoint& p : art.result.curves) curve_rows[k].push_back(curve_row(jobs[k], p));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int workers = std::min<int>(worker_count_from_env(), static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  {
    std::ofstream out(out_dir / "curves.csv");
    out << curves_header() << '\n';
    for (const auto& rows : curve_rows) {
      for (const std::string& r : rows) out << r << '\n';
    }
    if (!out) throw Error("cannot write curves.csv");
  }

  std::ofstream summary(out_dir / "summary.csv");
  summary << "strategy,paradigm,runs,dsc_mean,dsc_std,jaccard_mean,jaccard_std,hd95_mean,hd95_std,asd_mean,asd_std\n";
  for (std::size_t ci = 0; ci < configs.size(); ++ci) {
    std::vector<double> dsc, jac, hd, asd;
    for (const CompareRun& r : result.runs) {
      if (r.config_index != static_cast<int>(ci)) continue;
      dsc.push_back(r.test.dsc);
      jac.push_back(r.test.jaccard);
      if (r.test.hd95) hd.push_back(*r.test.hd95);
      if (r.test.asd) asd.push_back(*r.test.asd);
    }
    CompareSummaryRow row;
    row.strategy = strategy_name(configs[ci].paradigm.strategy);
    row.paradigm = to_string(configs[ci].paradigm.paradigm);
    row.runs = static_cast<int>(dsc.size());
    const Stat d = stat(dsc), j = stat(jac), h = stat(hd), a = stat(asd);
    row.dsc_mean = d.mean;
    row.dsc_std = d.std;
    row.jaccard_mean = j.mean;
    row.jaccard_std = j.std;
    row.hd95_mean = h.mean;
    row.hd95_std = h.std;
    row.asd_mean = a.mean;
    row.asd_std = a.std;
    summary << row.strategy << ',' << row.paradigm << ',' << row.runs << ',' << fmt(row.dsc_mean) << ','
            << fmt(row.dsc_std) << ',' << fmt(row.jaccard_mean) << ',' << fmt(row.jaccard_std) << ','
            << fmt(row.hd95_mean) << ',' << fmt(row.hd95_std) << ',' << fmt(row.asd_mean) << ','
            << fmt(row.asd_std) << '\n';
    result.summary.push_back(row);
  }
  if (!summary) throw Error("cannot write summary.csv");
  return result;
}

}  // namespace adamix
