#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtk/layers.hpp"

namespace mtk {

enum class CtmKind { none, fctm, sctm };
enum class HeadKind { dense, lite };
enum class LossKind { cross_entropy, l1 };
enum class MetricKind { miou, rmse, mean_angular_error, boundary_f1 };

struct TaskSpec {
  std::string name;
  std::int64_t out_dim = 1;
  LossKind loss = LossKind::l1;
  MetricKind metric = MetricKind::rmse;
  bool higher_better = false;
  // Cross-entropy class weights (empty = unweighted).
  std::vector<double> class_weights;
};

// semseg (classes + background), depth, normal, boundary.
std::vector<TaskSpec> default_tasks(int classes = 4);

struct ModelConfig {
  std::int64_t channels = 32;
  int alpha = 2;
  std::int64_t state = 8;
  int stages = 3;
  CtmKind ctm = CtmKind::sctm;
  HeadKind head = HeadKind::dense;
  nn::MixerKind mixer = nn::MixerKind::ssm;
  int window = 4;
  int heads = 2;
  bool tie_directions = false;
  std::vector<scan2d::Direction> directions{scan2d::kAllDirections.begin(),
                                            scan2d::kAllDirections.end()};
  std::vector<TaskSpec> tasks = default_tasks();
  std::uint64_t seed = 0;

  nn::MixerConfig mixer_config() const;
  // Throws SchemaError on inconsistent values.
  void validate() const;
};

struct TrainConfig {
  int steps = 2000;
  int batch = 4;
  double lr = 1e-3;
  double weight_decay = 1e-6;
  int eval_interval = 500;
  std::int64_t image = 64;
  int classes = 4;
  int train_samples = 256;
  int eval_samples = 32;
  std::uint64_t data_seed = 1;
  std::uint64_t seed = 0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const RunConfig& c);
// Strict: unknown keys and wrong types raise SchemaError. Missing keys keep defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

const char* name(CtmKind k);
const char* name(HeadKind k);
const char* name(LossKind k);
const char* name(MetricKind k);

}  // namespace mtk
