#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ckm/baselines.hpp"
#include "ckm/envgen.hpp"
#include "ckm/metrics.hpp"
#include "ckm/model.hpp"

namespace ckm::bench {

// Registered reconstruction methods, in report order.
const std::vector<std::string>& method_names();
bool is_method(const std::string& name);
// Whether `method` is defined for `task` (n/a rows otherwise).
bool supports(const std::string& method, Task task);

// Side information a method may use besides the observation.
struct Context {
  ValueMap map = kRadioMapSeerMap;
  const Mask* buildings = nullptr;            // environment layout
  std::optional<envgen::Cell> tx;             // transmitter location
  const baselines::GaussianPrior* prior = nullptr;
  const model::LoadedModel* model = nullptr;
  int sample_steps = 50;
  std::uint64_t seed = 0;
};

// One observation through one method. UnsupportedError when the method does not apply
// or lacks the side information it needs.
Image reconstruct(const std::string& method, const Observation& obs, const Context& ctx);

struct BenchConfig {
  std::vector<std::string> methods = method_names();
  std::vector<Task> tasks{Task::Inpaint, Task::SuperRes};
  double mask_frac = 0.25;         // hidden square side / image side
  int sr_factor = 4;
  double noise_std = 30.0 / 255.0;
  std::uint64_t seed = 7;
  int sample_steps = 50;
  std::filesystem::path checkpoint;  // empty: ckmdiff rows are n/a
  metrics::MetricOptions metric;
  std::size_t max_images = 0;        // 0 = whole test split
  int threads = 0;                   // 0 = worker_count()
  std::string dataset_name = "synthetic";
};

// Observation of test image `index` for `task`; identical for every method.
Observation bench_observation(const Image& truth, Task task, const BenchConfig& cfg, std::size_t index);

struct TaskResult {
  Task task;
  std::vector<metrics::ReportRow> rows;
  std::vector<std::vector<Image>> recon;  // per row, empty for n/a rows
};

struct BenchResult {
  std::vector<Image> truth;
  std::vector<TaskResult> tasks;
};

struct TestSet {
  std::vector<Image> truth;
  std::vector<Mask> buildings;
  std::vector<envgen::Cell> tx;
};
TestSet load_split(const envgen::DatasetManifest& man, const std::string& split, std::size_t max_images = 0);
std::vector<Image> load_images(const envgen::DatasetManifest& man, const std::string& split);

BenchResult run_bench(const envgen::DatasetManifest& man, const BenchConfig& cfg);

// tables.txt (aligned, one table per task), tables.csv, config.json.
void write_bench(const std::filesystem::path& dir, const BenchResult& res, const BenchConfig& cfg);

// CKMDiff sampling for a list of observations; `shuffle` rotates the conditions by one image.
std::vector<Image> ckmdiff_reconstruct(const model::LoadedModel& m, const std::vector<Observation>& obs,
                                       std::uint64_t seed, int steps, bool shuffle = false, int threads = 1);

}  // namespace ckm::bench
