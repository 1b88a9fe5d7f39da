#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtk/config.hpp"
#include "mtk/model.hpp"
#include "mtk/scene.hpp"

namespace mtk::harness {

// ---- losses (differentiable, scalar) ----

// Mean over pixels of -log softmax(logits)[target]. logits [..., K],
// target one label per position. With class weights the mean is
// sum(w_y * nll) / sum(w_y). Throws DomainError on an out-of-range label.
Var cross_entropy(Var logits, const std::vector<int>& target,
                  const std::vector<double>& class_weights = {});
// Mean absolute difference.
Var l1(Var pred, const Tensor& target);

// ---- metrics on channel-first predictions [B,K,H,W] ----

// Argmax labels; IoU averaged over classes present in target or prediction.
double miou(const Tensor& logits, const std::vector<int>& target);
// pred, target [B,1,H,W] and [B,H,W,1] (any layout with one value per pixel).
double rmse(const Tensor& pred, const Tensor& target);
// pred [B,3,H,W] (normalised before comparison), target [B,H,W,3] unit
// vectors. Mean angle in degrees.
double mean_angular_error(const Tensor& pred, const Tensor& target);
// Positive where softmax(logits)[1] >= 0.5. F1 is 1 when neither prediction
// nor target has a positive pixel.
double boundary_f1(const Tensor& logits, const std::vector<int>& target);

struct MetricEntry {
  std::string task;
  std::string metric;
  double value = 0;
  bool higher_better = true;
};
using MetricReport = std::vector<MetricEntry>;

nlohmann::json to_json(const MetricReport& r);
MetricReport metric_report_from_json(const nlohmann::json& j);

// (100/T) sum_t (-1)^{s_t} (M_t - S_t) / S_t with s_t = 1 when lower is better.
double delta_m(const MetricReport& mtl, const MetricReport& stl);

// Signed percent, two decimals, truncated toward zero: 2.639 -> "+2.63".
std::string format_delta_m(double value);

// ---- optimisation ----

double poly_lr(double base, int iter, int max_iter, double power = 0.9);

// Decoupled weight decay: p -= lr*wd*p, then the bias-corrected Adam step.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 1e-6)
      : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

  // Gradients by parameter name; parameters without an entry are skipped.
  void step(ParamStore& store, const std::vector<std::pair<std::string, Tensor>>& grads,
            double lr);
  int steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_, wd_;
  int t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

// ---- training and evaluation ----

// Per-task losses on one batch (channel-last predictions). Tasks are matched
// to scene targets by name: semseg, depth, normal, boundary.
std::vector<Var> task_losses(const ModelConfig& config, const std::vector<Var>& preds,
                             const scene::Batch& batch);

struct EvalResult {
  MetricReport report;
  std::vector<double> task_loss;
  double total_loss = 0;
};
EvalResult evaluate(model::Model& model, const scene::Dataset& data, int batch = 4);

struct TrainLog {
  std::vector<double> loss;  // summed training loss per step
  EvalResult final_eval;
};

// Train and eval scenes drawn from disjoint seed streams of data_seed.
struct Splits {
  scene::Dataset train, eval;
};
Splits make_splits(const TrainConfig& config);
// The semseg head must cover the dataset's classes plus background.
void check_compatible(const RunConfig& config);

// Writes JSON-lines records {step, task, metric, value} to `metrics` when given.
// Throws DivergenceError if the loss becomes non-finite.
TrainLog train(model::Model& model, const scene::Dataset& train_data,
               const scene::Dataset& eval_data, const TrainConfig& config,
               std::ostream* metrics = nullptr);

}  // namespace mtk::harness
