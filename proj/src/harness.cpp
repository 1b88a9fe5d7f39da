#include "mtk/harness.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "mtk/error.hpp"
#include "mtk/math.hpp"

namespace mtk::harness {

Var cross_entropy(Var logits, const std::vector<int>& target,
                  const std::vector<double>& class_weights) {
  const Tensor& z = logits.value();
  const std::int64_t K = z.dim(-1);
  const std::int64_t M = z.numel() / K;
  if (static_cast<std::int64_t>(target.size()) != M) {
    throw ShapeError("cross_entropy: " + std::to_string(target.size()) + " labels for " +
                     std::to_string(M) + " positions");
  }
  if (!class_weights.empty() && static_cast<std::int64_t>(class_weights.size()) != K) {
    throw ShapeError("cross_entropy: class weight count differs from logits");
  }
  for (int y : target)
    if (y < 0 || y >= K) throw DomainError("cross_entropy: label " + std::to_string(y) + " out of range");
  auto weight = [&](int y) { return class_weights.empty() ? 1.0 : class_weights[y]; };

  double total = 0.0, wsum = 0.0;
  const double* pz = z.data();
  for (std::int64_t m = 0; m < M; ++m) {
    const double* row = pz + m * K;
    double mx = row[0];
    for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double s = 0.0;
    for (std::int64_t k = 0; k < K; ++k) s += std::exp(row[k] - mx);
    const double w = weight(target[m]);
    total += w * (std::log(s) + mx - row[target[m]]);
    wsum += w;
  }
  return logits.tape()->record(
      Tensor::scalar(total / wsum), {logits},
      [logits, target, class_weights, K, M, wsum](Tape& t, const Tensor& g) {
        const double* pz = logits.value().data();
        double* gz = t.grad_slot(logits).data();
        const double scale = g[0] / wsum;
        for (std::int64_t m = 0; m < M; ++m) {
          const double* row = pz + m * K;
          double mx = row[0];
          for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
          double s = 0.0;
          for (std::int64_t k = 0; k < K; ++k) s += std::exp(row[k] - mx);
          const int y = target[m];
          const double w = (class_weights.empty() ? 1.0 : class_weights[y]) * scale;
          for (std::int64_t k = 0; k < K; ++k) {
            const double p = std::exp(row[k] - mx) / s;
            gz[m * K + k] += w * (p - (k == y ? 1.0 : 0.0));
          }
        }
      });
}

Var l1(Var pred, const Tensor& target) {
  const Tensor& p = pred.value();
  if (p.numel() != target.numel()) {
    throw ShapeError("l1: prediction " + to_string(p.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  const std::int64_t n = p.numel();
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) total += std::abs(p[i] - target[i]);
  return pred.tape()->record(Tensor::scalar(total / static_cast<double>(n)), {pred},
                             [pred, target, n](Tape& t, const Tensor& g) {
                               const double* pp = pred.value().data();
                               double* gp = t.grad_slot(pred).data();
                               const double s = g[0] / static_cast<double>(n);
                               for (std::int64_t i = 0; i < n; ++i) {
                                 const double d = pp[i] - target[i];
                                 gp[i] += d > 0 ? s : (d < 0 ? -s : 0.0);
                               }
                             });
}

namespace {

// Channel-first [B,K,H,W] -> per-pixel argmax in (b,h,w) order.
std::vector<int> argmax_cf(const Tensor& logits) {
  const auto B = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  const auto P = H * W;
  std::vector<int> out(static_cast<std::size_t>(B * P));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < P; ++p) {
      int best = 0;
      double bv = logits[(b * K) * P + p];
      for (std::int64_t k = 1; k < K; ++k) {
        const double v = logits[(b * K + k) * P + p];
        if (v > bv) {
          bv = v;
          best = static_cast<int>(k);
        }
      }
      out[b * P + p] = best;
    }
  return out;
}

void check_cf(const Tensor& t, std::size_t pixels, const char* what) {
  if (t.ndim() != 4 || static_cast<std::size_t>(t.dim(0) * t.dim(2) * t.dim(3)) != pixels) {
    throw ShapeError(std::string(what) + ": prediction " + to_string(t.shape()) +
                     " does not match " + std::to_string(pixels) + " target pixels");
  }
}

}  // namespace

double miou(const Tensor& logits, const std::vector<int>& target) {
  check_cf(logits, target.size(), "miou");
  const auto K = logits.dim(1);
  const auto pred = argmax_cf(logits);
  std::vector<double> inter(static_cast<std::size_t>(K), 0.0), uni(inter.size(), 0.0);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const int p = pred[i], y = target[i];
    if (y < 0 || y >= K) throw DomainError("miou: label out of range");
    if (p == y) {
      inter[y] += 1;
      uni[y] += 1;
    } else {
      uni[y] += 1;
      uni[p] += 1;
    }
  }
  double sum = 0.0;
  int present = 0;
  for (std::int64_t k = 0; k < K; ++k) {
    if (uni[k] == 0) continue;
    sum += inter[k] / uni[k];
    ++present;
  }
  return present ? sum / present : 1.0;
}

double rmse(const Tensor& pred, const Tensor& target) {
  if (pred.numel() != target.numel()) throw ShapeError("rmse: size mismatch");
  double s = 0.0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(pred.numel()));
}

double mean_angular_error(const Tensor& pred, const Tensor& target) {
  if (pred.ndim() != 4 || pred.dim(1) != 3 || target.numel() != pred.numel()) {
    throw ShapeError("mean_angular_error: prediction " + to_string(pred.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  const auto B = pred.dim(0), P = pred.dim(2) * pred.dim(3);
  double total = 0.0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < P; ++p) {
      double v[3], n = 0.0;
      for (int c = 0; c < 3; ++c) {
        v[c] = pred[(b * 3 + c) * P + p];
        n += v[c] * v[c];
      }
      n = std::sqrt(n);
      double dot = 0.0;
      if (n > 0) {
        for (int c = 0; c < 3; ++c) dot += v[c] / n * target[(b * P + p) * 3 + c];
      }
      total += std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / std::numbers::pi;
    }
  return total / static_cast<double>(B * P);
}

double boundary_f1(const Tensor& logits, const std::vector<int>& target) {
  check_cf(logits, target.size(), "boundary_f1");
  if (logits.dim(1) != 2) throw ShapeError("boundary_f1 needs 2-class logits");
  const auto B = logits.dim(0), P = logits.dim(2) * logits.dim(3);
  double tp = 0, fp = 0, fn = 0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < P; ++p) {
      // softmax(z)[1] >= 0.5  <=>  z1 >= z0
      const bool pos = logits[(b * 2 + 1) * P + p] >= logits[(b * 2) * P + p];
      const bool truth = target[b * P + p] != 0;
      if (pos && truth) tp += 1;
      if (pos && !truth) fp += 1;
      if (!pos && truth) fn += 1;
    }
  if (tp + fp + fn == 0) return 1.0;
  return 2 * tp / (2 * tp + fp + fn);
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& e : r) {
    tasks.push_back({{"task", e.task},
                     {"metric", e.metric},
                     {"value", e.value},
                     {"higher_better", e.higher_better}});
  }
  return {{"tasks", tasks}};
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    for (const auto& t : j.at("tasks")) {
      for (const auto& [key, _] : t.items()) {
        if (key != "task" && key != "metric" && key != "value" && key != "higher_better") {
          throw SchemaError("metric report: unknown key '" + key + "'");
        }
      }
      r.push_back({t.at("task").get<std::string>(), t.at("metric").get<std::string>(),
                   t.at("value").get<double>(), t.at("higher_better").get<bool>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("metric report: ") + e.what());
  }
  return r;
}

double delta_m(const MetricReport& mtl, const MetricReport& stl) {
  if (mtl.size() != stl.size() || mtl.empty()) {
    throw SchemaError("delta_m: task lists differ");
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < mtl.size(); ++t) {
    const auto& a = mtl[t];
    const auto& s = stl[t];
    if (a.task != s.task || a.metric != s.metric || a.higher_better != s.higher_better) {
      throw SchemaError("delta_m: task " + a.task + " does not match " + s.task);
    }
    if (s.value == 0.0) throw DomainError("delta_m: single-task metric of " + s.task + " is zero");
    const double sign = s.higher_better ? 1.0 : -1.0;
    sum += sign * (a.value - s.value) / s.value;
  }
  return 100.0 * sum / static_cast<double>(mtl.size());
}

std::string format_delta_m(double value) {
  // The guard keeps values such as 4.82 - 1ulp from dropping a digit.
  const double t = std::trunc(value * 100.0 + (value < 0 ? -1e-7 : 1e-7)) / 100.0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f", t == 0.0 ? 0.0 : t);
  return buf;
}

double poly_lr(double base, int iter, int max_iter, double power) {
  if (max_iter <= 0) return base;
  const double frac = std::clamp(static_cast<double>(iter) / max_iter, 0.0, 1.0);
  return base * std::pow(1.0 - frac, power);
}

void AdamW::step(ParamStore& store, const std::vector<std::pair<std::string, Tensor>>& grads,
                 double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (const auto& [name, g] : grads) {
    Tensor& p = store.get(name);
    auto [it, fresh] = moments_.try_emplace(name);
    if (fresh) it->second = {Tensor::zeros_like(p), Tensor::zeros_like(p)};
    double* m = it->second.first.data();
    double* v = it->second.second.data();
    double* w = p.data();
    const double* pg = g.data();
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      w[i] *= 1.0 - lr * wd_;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * pg[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * pg[i] * pg[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      w[i] -= lr * mh / (std::sqrt(vh) + eps_);
    }
  }
}

std::vector<Var> task_losses(const ModelConfig& config, const std::vector<Var>& preds,
                             const scene::Batch& batch) {
  std::vector<Var> out;
  for (std::size_t t = 0; t < config.tasks.size(); ++t) {
    const TaskSpec& spec = config.tasks[t];
    const Var& p = preds[t];
    if (spec.name == "semseg") {
      out.push_back(cross_entropy(p, batch.semseg, spec.class_weights));
    } else if (spec.name == "boundary") {
      out.push_back(cross_entropy(p, batch.boundary, spec.class_weights));
    } else if (spec.name == "depth") {
      out.push_back(l1(p, batch.depth));
    } else if (spec.name == "normal") {
      out.push_back(l1(p, batch.normal));
    } else {
      throw SchemaError("no synthetic target for task '" + spec.name + "'");
    }
  }
  return out;
}

namespace {

double metric_value(const TaskSpec& spec, const Tensor& pred_cf, const scene::Batch& b) {
  const std::vector<int>& labels = spec.name == "boundary" ? b.boundary : b.semseg;
  switch (spec.metric) {
    case MetricKind::miou: return miou(pred_cf, labels);
    case MetricKind::boundary_f1: return boundary_f1(pred_cf, labels);
    case MetricKind::rmse: return rmse(pred_cf, spec.name == "normal" ? b.normal : b.depth);
    case MetricKind::mean_angular_error: return mean_angular_error(pred_cf, b.normal);
  }
  return 0.0;
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  Shape s = parts[0].shape();
  s[0] = 0;
  std::vector<double> values;
  for (const auto& p : parts) {
    s[0] += p.dim(0);
    values.insert(values.end(), p.values().begin(), p.values().end());
  }
  return Tensor(s, std::move(values));
}

}  // namespace

EvalResult evaluate(model::Model& model, const scene::Dataset& data, int batch) {
  const auto& cfg = model.config();
  const std::size_t T = cfg.tasks.size();
  std::vector<std::vector<Tensor>> preds(T);
  EvalResult r;
  r.task_loss.assign(T, 0.0);
  for (std::size_t start = 0; start < data.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + batch); ++i) idx.push_back(i);
    const scene::Batch b = data.batch(idx);
    Tape tape;
    Context ctx(tape, model.store(), false);
    const auto out = model.forward(ctx, tape.constant(b.image));
    const auto losses = task_losses(cfg, out, b);
    for (std::size_t t = 0; t < T; ++t) {
      r.task_loss[t] += losses[t].value()[0] * static_cast<double>(idx.size());
      preds[t].push_back(model::to_channel_first(out[t].value()));
    }
  }
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const scene::Batch full = data.batch(all);
  for (std::size_t t = 0; t < T; ++t) {
    r.task_loss[t] /= static_cast<double>(data.size());
    r.total_loss += r.task_loss[t];
    const TaskSpec& spec = cfg.tasks[t];
    r.report.push_back({spec.name, name(spec.metric),
                        metric_value(spec, concat_batch(preds[t]), full), spec.higher_better});
  }
  return r;
}

namespace {

void log_eval(std::ostream& out, int step, const EvalResult& e) {
  for (std::size_t t = 0; t < e.report.size(); ++t) {
    const auto& m = e.report[t];
    out << nlohmann::json{{"step", step}, {"task", m.task}, {"metric", m.metric}, {"value", m.value}}.dump()
        << "\n";
    out << nlohmann::json{{"step", step}, {"task", m.task}, {"metric", "loss"}, {"value", e.task_loss[t]}}
               .dump()
        << "\n";
  }
  out.flush();
}

}  // namespace

Splits make_splits(const TrainConfig& c) {
  if (c.train_samples < 1 || c.eval_samples < 1) throw SchemaError("sample counts must be >= 1");
  return {scene::make_dataset(2 * c.data_seed, c.train_samples, c.image, c.image, c.classes),
          scene::make_dataset(2 * c.data_seed + 1, c.eval_samples, c.image, c.image, c.classes)};
}

void check_compatible(const RunConfig& c) {
  c.model.validate();
  if (c.train.image % 32 != 0) throw SchemaError("image size must be a multiple of 32");
  for (const auto& t : c.model.tasks) {
    if (t.name == "semseg" && t.out_dim != c.train.classes + 1) {
      throw SchemaError("semseg out_dim " + std::to_string(t.out_dim) + " does not match " +
                        std::to_string(c.train.classes) + " classes + background");
    }
  }
  if (c.train.steps < 1 || c.train.batch < 1 || c.train.eval_interval < 1) {
    throw SchemaError("steps, batch and eval_interval must be >= 1");
  }
}

TrainLog train(model::Model& model, const scene::Dataset& train_data,
               const scene::Dataset& eval_data, const TrainConfig& config, std::ostream* metrics) {
  const auto& cfg = model.config();
  AdamW opt(0.9, 0.999, 1e-8, config.weight_decay);
  Rng rng(config.seed);
  std::vector<std::size_t> order(train_data.size());
  std::size_t cursor = order.size();
  TrainLog log;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<std::size_t> idx;
    while (static_cast<int>(idx.size()) < config.batch) {
      if (cursor == order.size()) {
        // Fisher-Yates reshuffle per epoch.
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(i)))]);
        }
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    const scene::Batch b = train_data.batch(idx);
    Tape tape;
    Context ctx(tape, model.store(), true);
    const auto out = model.forward(ctx, tape.constant(b.image));
    const auto losses = task_losses(cfg, out, b);
    Var total = losses[0];
    for (std::size_t t = 1; t < losses.size(); ++t) total = ops::add(total, losses[t]);
    const double value = total.value()[0];
    if (!std::isfinite(value)) {
      throw DivergenceError("loss became non-finite at step " + std::to_string(step));
    }
    log.loss.push_back(value);
    tape.backward(total);
    std::vector<std::pair<std::string, Tensor>> grads;
    for (const auto& [name, v] : ctx.bound()) {
      if (tape.requires_grad(v)) grads.emplace_back(name, tape.grad(v));
    }
    opt.step(model.store(), grads, poly_lr(config.lr, step, config.steps));

    const bool last = step + 1 == config.steps;
    if (metrics && ((step + 1) % config.eval_interval == 0) && !last) {
      log_eval(*metrics, step + 1, evaluate(model, eval_data));
    }
  }
  log.final_eval = evaluate(model, eval_data);
  if (metrics) log_eval(*metrics, config.steps, log.final_eval);
  return log;
}

}  // namespace mtk::harness
